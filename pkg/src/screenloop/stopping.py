"""Stopping rules: KL-Chernoff lower bound on inference accuracy, and heuristic variants.

All logarithms are natural. The bound is applied afresh at every step with
the same failure probability; there is no correction for repeated checks.
The regression rule (batch MSE below a threshold for ``patience`` steps)
carries no statistical guarantee.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import EmptyTargetError, PartitionState, ScreenloopError

THRESHOLD_MET = "threshold_met"
INFERENCE_EXHAUSTED = "inference_exhausted"
MAX_STEPS = "max_steps"
NOT_STOPPED = "not_stopped"


class BoundError(ScreenloopError, ValueError):
    pass


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    alpha: Optional[float] = None
    est_system_accuracy: Optional[float] = None
    reason: str = NOT_STOPPED


def kl_bernoulli(mu_hat: float, a: float) -> float:
    """``KL(Bernoulli(mu_hat) || Bernoulli(a))`` in nats, with ``0 log 0 = 0``."""
    if not (0.0 <= mu_hat <= 1.0) or not (0.0 <= a <= 1.0):
        raise BoundError(f"arguments must lie in [0, 1], got mu_hat={mu_hat}, a={a}")
    total = 0.0
    for p, q in ((mu_hat, a), (1.0 - mu_hat, 1.0 - a)):
        if p == 0.0:
            continue
        if q == 0.0:
            return math.inf
        total += p * math.log(p / q)
    return max(total, 0.0)


def chernoff_lower_bound(mu_hat: float, n: int, delta: float, tol: float = 1e-9) -> float:
    """Smallest ``a`` in ``[0, mu_hat]`` with ``KL(mu_hat || a) <= ln(1/delta) / n``.

    Found by bisection; KL is strictly decreasing in ``a`` on ``(0, mu_hat]``.
    The returned value is the lower end of the final bracket, so it never
    exceeds the exact root and ``KL(mu_hat || alpha)`` is at least the
    threshold (the lower end starts at 0, where KL is infinite).

    Parameters
    ----------
    mu_hat : float
        Observed accuracy on the acquired batch.
    n : int
        Batch size.
    delta : float
        Failure probability of the bound, in (0, 1).
    tol : float
        Final bracket width.
    """
    if not (0.0 < delta < 1.0):
        raise BoundError(f"delta must lie in (0, 1), got {delta}")
    if n < 1:
        raise BoundError(f"n must be >= 1, got {n}")
    if not (0.0 <= mu_hat <= 1.0):
        raise BoundError(f"mu_hat must lie in [0, 1], got {mu_hat}")
    if mu_hat == 0.0:
        return 0.0
    threshold = math.log(1.0 / delta) / n
    # Bisect on the fixed bracket [0, 1] rather than [0, mu_hat]: every call
    # then probes the same dyadic points, which makes the result exactly
    # monotone in mu_hat, n and delta.
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid < mu_hat and kl_bernoulli(mu_hat, mid) > threshold:
            lo = mid
        else:
            hi = mid
    return lo


def estimate_system_accuracy(n_obs: int, n_inf: int, inf_accuracy_estimate: float) -> float:
    """Blend perfect observed labels with an accuracy estimate on the inference set."""
    total = n_obs + n_inf
    if total < 1:
        raise EmptyTargetError("target set is empty")
    if not (0.0 <= inf_accuracy_estimate <= 1.0):
        raise BoundError("accuracy estimate must lie in [0, 1]")
    return (n_obs + inf_accuracy_estimate * n_inf) / total


def should_stop_chernoff(state: PartitionState, batch_accuracy: float, n_b: int,
                         gamma: float, delta: float) -> StopDecision:
    """Stop once the bound-based system accuracy exceeds ``gamma`` or nothing is left to infer.

    ``state`` must already reflect the transfer of the batch whose accuracy
    is ``batch_accuracy``.
    """
    alpha = chernoff_lower_bound(batch_accuracy, n_b, delta)
    est = estimate_system_accuracy(state.n_obs, state.n_inf, alpha)
    if state.n_inf == 0:
        return StopDecision(True, alpha, est, INFERENCE_EXHAUSTED)
    if est > gamma:
        return StopDecision(True, alpha, est, THRESHOLD_MET)
    return StopDecision(False, alpha, est, NOT_STOPPED)


def should_stop_naive(history: Sequence[float], gamma: float, patience: int) -> StopDecision:
    """Stop when the last ``patience`` point estimates (no bound) all exceed ``gamma``."""
    if patience < 1:
        raise BoundError("patience must be >= 1")
    last = history[-1] if len(history) else None
    if len(history) >= patience and all(h > gamma for h in history[-patience:]):
        return StopDecision(True, None, last, THRESHOLD_MET)
    return StopDecision(False, None, last, NOT_STOPPED)


def should_stop_regression(mse_history: Sequence[float], t_mse: float, patience: int) -> StopDecision:
    """Stop when each of the last ``patience`` batch MSEs is below ``t_mse``."""
    if t_mse <= 0:
        raise BoundError("t_mse must be > 0")
    if patience < 1:
        raise BoundError("patience must be >= 1")
    if len(mse_history) >= patience and all(m < t_mse for m in mse_history[-patience:]):
        return StopDecision(True, reason=THRESHOLD_MET)
    return StopDecision(False)


def validate_bound_coverage(mu_true: float, n: int, delta: float, trials: int, rng) -> float:
    """Empirical failure rate of the bound under i.i.d. Bernoulli sampling.

    Each trial draws ``n`` outcomes with success probability ``mu_true``,
    computes the bound from their mean, and fails when ``mu_true < alpha``.
    """
    successes = rng.binomial(n, mu_true, size=trials)
    alpha_by_k = {}
    failures = 0
    for k in successes:
        k = int(k)
        if k not in alpha_by_k:
            alpha_by_k[k] = chernoff_lower_bound(k / n, n, delta)
        failures += mu_true < alpha_by_k[k]
    return failures / trials


def coverage_slack(delta: float, trials: int) -> float:
    """Three binomial standard errors of a rate ``delta`` over ``trials``."""
    return 3.0 * math.sqrt(delta * (1.0 - delta) / trials)
