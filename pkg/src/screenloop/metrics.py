"""Ground-truth evaluation, calibration diagnostics and hard-example analysis.

Everything here that consumes true labels of the inference set is for
simulation only; a deployed campaign never has them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .core import Dataset, DatasetError, PartitionState, Predictions, ScreenloopError


class MetricError(ScreenloopError, ValueError):
    pass


def _point(predicted) -> np.ndarray:
    return predicted.point if isinstance(predicted, Predictions) else np.asarray(predicted)


def system_accuracy(state: PartitionState, inf_predicted, labels) -> float:
    """Fraction of the target set with a correct readout.

    Observed samples count as correct; inference samples count when the
    predicted class matches the true one. ``inf_predicted`` follows the
    sorted inference-id order; ``labels`` covers every target id.
    """
    predicted = _point(inf_predicted)
    labels = np.asarray(labels)
    if labels.shape[0] != state.n_target:
        raise MetricError(f"{labels.shape[0]} labels for a target set of {state.n_target}")
    if predicted.shape[0] != state.n_inf:
        raise MetricError(f"{predicted.shape[0]} predictions for an inference set of {state.n_inf}")
    correct = int(np.count_nonzero(predicted == labels[state.inf_array()])) if state.n_inf else 0
    return (state.n_obs + correct) / state.n_target


def batch_accuracy(predicted, labels) -> float:
    predicted = _point(predicted)
    labels = np.asarray(labels)
    if predicted.shape[0] == 0:
        raise MetricError("empty batch")
    if predicted.shape != labels.shape:
        raise MetricError("predictions and labels differ in length")
    return float(np.mean(predicted == labels))


def mean_squared_error(predicted, targets) -> float:
    predicted = _point(predicted)
    targets = np.asarray(targets, dtype=np.float64)
    if predicted.shape[0] == 0:
        raise MetricError("empty batch")
    if predicted.shape != targets.shape:
        raise MetricError("predictions and targets differ in length")
    return float(np.mean((predicted - targets) ** 2))


@dataclass(frozen=True, eq=False)
class CalibrationReport:
    """Equal-width confidence bins; ``accuracy`` is NaN for empty bins."""

    bin_edges: np.ndarray
    counts: np.ndarray
    mean_confidence: np.ndarray
    accuracy: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.counts)

    def rows(self):
        for i in range(self.n_bins):
            yield (self.bin_edges[i], self.bin_edges[i + 1], int(self.counts[i]),
                   self.mean_confidence[i], self.accuracy[i])


def calibration_bins(confidences, correct, n_bins: int = 10) -> CalibrationReport:
    """Bin predictions by confidence into ``n_bins`` right-closed bins on [0, 1]."""
    conf = np.asarray(confidences, dtype=np.float64)
    corr = np.asarray(correct, dtype=np.float64)
    if conf.shape != corr.shape:
        raise MetricError("confidences and correctness flags differ in length")
    if n_bins < 2:
        raise MetricError("need at least 2 bins")
    if conf.size and (conf.min() < 0 or conf.max() > 1):
        raise MetricError("confidences must lie in [0, 1]")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    corr_sum = np.bincount(idx, weights=corr, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_conf = np.where(counts > 0, conf_sum / np.maximum(counts, 1), np.nan)
        acc = np.where(counts > 0, corr_sum / np.maximum(counts, 1), np.nan)
    return CalibrationReport(edges, counts, mean_conf, acc)


def weak_calibration_violation(report: CalibrationReport, min_count: int = 1) -> float:
    """Largest accuracy drop between consecutive populated bins, or NaN.

    Bins with fewer than ``min_count`` samples are skipped. Zero means the
    binned accuracy never decreases as confidence grows.
    """
    keep = report.counts >= max(min_count, 1)
    acc = report.accuracy[keep]
    if acc.size < 2:
        return float("nan")
    return float(max(0.0, np.max(acc[:-1] - acc[1:])))


@dataclass(frozen=True)
class Lemma1Result:
    mean_batch_acc: float
    mean_remaining_acc: float
    frac_trials_batch_le_remaining: float


def validate_lemma1(
    n: int,
    n_b: int,
    trials: int,
    rng,
    g: Callable[[np.ndarray], np.ndarray] = lambda v: v,
    confidence: Union[Tuple[float, float], Callable] = (0.5, 1.0),
    chunk: int = 200,
) -> Lemma1Result:
    """Monte-Carlo check that the least-confident batch is no more accurate than the rest.

    Each trial draws ``n`` confidences, marks each sample correct with
    probability ``g(confidence)``, takes the ``n_b`` lowest-confidence
    samples as the batch and records the accuracy of the batch and of the
    remaining samples.

    Parameters
    ----------
    g : callable
        Conditional accuracy as a function of confidence. The guarantee
        needs it non-decreasing; a decreasing ``g`` is a negative control.
    confidence : (low, high) or callable
        Uniform range of confidences, or ``f(rng, shape) -> array``.
    """
    if n_b >= n:
        raise MetricError("batch size must be smaller than the inference set")
    if n_b < 1 or trials < 1:
        raise MetricError("n_b and trials must be positive")
    if callable(confidence):
        draw = confidence
    else:
        low, high = confidence
        draw = lambda r, shape: r.uniform(low, high, size=shape)  # noqa: E731
    batch_accs, rest_accs = [], []
    for start in range(0, trials, chunk):
        m = min(chunk, trials - start)
        v = draw(rng, (m, n))
        p = np.clip(g(v), 0.0, 1.0)
        correct = rng.random((m, n)) < p
        order = np.argsort(v, axis=1, kind="stable")
        ranked = np.take_along_axis(correct, order, axis=1)
        batch_accs.append(ranked[:, :n_b].mean(axis=1))
        rest_accs.append(ranked[:, n_b:].mean(axis=1))
    b = np.concatenate(batch_accs)
    r = np.concatenate(rest_accs)
    return Lemma1Result(float(b.mean()), float(r.mean()), float(np.mean(b <= r)))


def _fold_assignment(n: int, n_folds: int, seed) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    for m, chunk in enumerate(np.array_split(perm, n_folds)):
        folds[chunk] = m
    return folds


def flag_hard_examples(dataset: Dataset, n_folds: int, model_config, base_seed: int,
                       val: Optional[Dataset] = None, return_votes: bool = False):
    """Ids misclassified by at least ``n_folds - 1`` of ``n_folds`` cross-validation models.

    Model ``m`` (seed ``base_seed + m``) is trained on every fold except
    ``m``; early stopping uses ``val`` when given, otherwise fold ``m``.
    Every model then predicts every sample, including those it was trained
    on.
    """
    from .predictor import predict_proba, train

    if not dataset.is_classification:
        raise MetricError("hard-example flagging needs a classification dataset")
    if n_folds < 2:
        raise MetricError("need at least 2 folds")
    if dataset.n_samples < n_folds:
        raise DatasetError(f"{dataset.n_samples} samples cannot fill {n_folds} folds")
    folds = _fold_assignment(dataset.n_samples, n_folds, base_seed)
    wrong = np.zeros(dataset.n_samples, dtype=np.int64)
    for m in range(n_folds):
        train_ids = np.flatnonzero(folds != m)
        held_out = dataset.subset(np.flatnonzero(folds == m))
        model = train(model_config, dataset.subset(train_ids), val if val is not None else held_out, base_seed + m)
        wrong += predict_proba(model, dataset.features).top_class != dataset.labels
    hard = np.flatnonzero(wrong >= n_folds - 1)
    return (hard, wrong) if return_votes else hard


def hard_set_fraction_acquired(obs_ids: Union[PartitionState, Sequence[int]], hard_ids: Sequence[int]) -> float:
    """Share of the hard set already in the observation set (0 for an empty hard set)."""
    if isinstance(obs_ids, PartitionState):
        obs_ids = obs_ids.obs_ids
    hard = set(int(i) for i in hard_ids)
    if not hard:
        return 0.0
    return len(hard.intersection(int(i) for i in obs_ids)) / len(hard)
