"""
Query by committee on a noisy regression target
===============================================

A 1-D function is easy almost everywhere, but one region is swamped by
noise. Five networks trained from different seeds disagree most where the
data is noisy, so the committee acquires that region and leaves clean
samples in the inference set.

Takes a few minutes.
"""

import numpy as np

from screenloop import CampaignConfig, Dataset, ModelConfig, run_campaign


def sample(n, rng):
    x = rng.uniform(0.0, 1.0, n)
    noise = np.where(x >= 0.85, 3.0, 0.05)
    return Dataset(x[:, None], np.sin(2 * np.pi * x) + noise * rng.normal(size=n))


rng = np.random.default_rng(1)
target, val = sample(2000, rng), sample(300, rng)
model = ModelConfig(n_hidden_layers=2, hidden_size=64, learning_rate=3e-3, dropout=0.0, max_epochs=300,
                    train_batch_size=64, early_stop_patience=10, optimizer="adam", n_ensemble_members=5)

# Stop once ten consecutive batches have MSE below 0.05.
qbc = run_campaign(CampaignConfig(policy="qbc_variance", batch_size=20, model=model, seed=1,
                                  stopping="mse_threshold", t_mse=0.05, patience=10), target, val)
tau = qbc.stopping_time
print(f"QBC stopped at step {tau} with {qbc.records[-1].n_obs} of {target.n_samples} acquired")

# Random acquisition for the same number of steps.
rnd = run_campaign(CampaignConfig(policy="random", batch_size=20, model=model, seed=1,
                                  stopping="none", max_steps=tau), target, val)

noisy = target.features[:, 0] >= 0.85
for name, log in (("qbc", qbc), ("random", rnd)):
    left = np.setdiff1d(np.arange(target.n_samples), log.obs_ids)
    print(f"{name:7s} inference MSE {log.records[-1].inference_accuracy:.4f}, "
          f"noisy samples still in the inference set: {noisy[left].sum()} of {noisy.sum()}")
