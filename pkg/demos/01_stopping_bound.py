"""
How much can a single batch tell us?
====================================

Each acquired batch is a fresh sample of the model's accuracy on the
samples it was least sure about. The KL-Chernoff bound turns that batch
accuracy into a lower bound on accuracy over what is left to infer.
"""

import numpy as np

from screenloop.stopping import (
    chernoff_lower_bound,
    coverage_slack,
    estimate_system_accuracy,
    validate_bound_coverage,
)

# A batch of 100 with 90 correct answers: the bound sits near 0.81.
print("alpha(0.90, n=100)  =", round(chernoff_lower_bound(0.9, 100, 0.05), 5))

# Ten times more evidence tightens it considerably.
print("alpha(0.90, n=1000) =", round(chernoff_lower_bound(0.9, 1000, 0.05), 5))

# A perfect batch has the closed form delta ** (1 / n).
print("alpha(1.00, n=1000) =", chernoff_lower_bound(1.0, 1000, 0.05), "vs", 0.05 ** (1 / 1000))

# The stopping rule blends perfect observed labels with the bound.
# 50k observed, 10k left to infer, a perfect batch of 1000:
alpha = chernoff_lower_bound(1.0, 1000, 0.05)
print("estimated system accuracy:", round(estimate_system_accuracy(50000, 10000, alpha), 5))

###############################################################################
# Does the bound fail at most 5% of the time?
# -------------------------------------------
# Draw Bernoulli batches with a known accuracy and count how often the
# bound lands above the truth.

rng = np.random.default_rng(0)
limit = 0.05 + coverage_slack(0.05, 10000)
print("\n  mu      n   failure rate")
for mu in (0.8, 0.9, 0.95, 0.99):
    for n in (100, 1000):
        rate = validate_bound_coverage(mu, n, 0.05, 10000, rng)
        print(f"{mu:5.2f} {n:6d}   {rate:.4f}{'' if rate <= limit else '  <- above limit'}")

# The observed rates are well below 5%: the bound is conservative,
# especially when mu is close to 1.
