"""Acquisition scores over the inference set and batch selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, DatasetError, PolicyMismatchError, Predictions, ScreenloopError

STATIC_POLICIES = ("least_confidence", "random", "bald", "qbc_variance", "fixed_order")


class SelectionError(ScreenloopError, ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScoredCandidates:
    """Candidate ids with scores; higher scores are acquired sooner."""

    ids: np.ndarray
    scores: np.ndarray
    policy: str

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        scores = np.asarray(self.scores, dtype=np.float64)
        if ids.shape != scores.shape:
            raise ValueError("ids and scores differ in length")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "scores", scores)


def score_least_confidence(predictions: Predictions) -> np.ndarray:
    """``1 - max_k p_k`` per sample."""
    if not predictions.is_classification:
        raise PolicyMismatchError("least-confidence scoring needs class probabilities")
    return 1.0 - predictions.confidence


def score_random(n: int, rng) -> np.ndarray:
    if n < 1:
        raise SelectionError("need at least one candidate")
    return rng.random(n)


def _entropy(p, axis=-1):
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=axis)


def score_bald(member_probs) -> np.ndarray:
    """Mutual information between prediction and ensemble member, in nats.

    ``member_probs`` has shape ``(M, n, K)``; the score is the entropy of
    the mean prediction minus the mean member entropy.
    """
    member_probs = np.asarray(member_probs, dtype=np.float64)
    if member_probs.ndim != 3 or member_probs.shape[0] < 2:
        raise PolicyMismatchError("BALD needs per-member probabilities from at least 2 members")
    mean = member_probs.mean(axis=0)
    return _entropy(mean) - _entropy(member_probs).mean(axis=0)


def score_qbc_variance(variance) -> np.ndarray:
    """Ensemble variance is the score as is."""
    return np.asarray(variance, dtype=np.float64)


def score_fixed_order(dataset: Dataset, key_column: str, direction: str = "ascending",
                      candidate_ids: Optional[Sequence[int]] = None) -> np.ndarray:
    """Static scores that reproduce a sort of ``key_column``.

    Ascending order maps to ``-key`` so the smallest keys score highest.
    Equal keys fall back to the id tie-break of :func:`select_batch`.
    """
    if direction not in ("ascending", "descending"):
        raise SelectionError(f"unknown direction {direction!r}")
    key = np.asarray(dataset.column(key_column), dtype=np.float64)
    if key.ndim != 1:
        raise DatasetError(f"column {key_column!r} is not scalar per sample")
    if candidate_ids is not None:
        key = key[np.asarray(candidate_ids, dtype=np.int64)]
    return key if direction == "descending" else -key


def tanimoto_distance(a, b) -> np.ndarray:
    """Tanimoto distance between bit vectors, broadcasting over leading axes.

    Two all-zero vectors are at distance 0.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    inter = np.count_nonzero(a & b, axis=-1)
    union = np.count_nonzero(a | b, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
    return 1.0 - sim


def _min_distance_to(fps, candidate_ids, acquired_ids, chunk=512):
    cand = fps[candidate_ids].astype(np.float64)
    best = np.ones(len(candidate_ids))
    cand_pop = cand.sum(axis=1)
    for s in range(0, len(acquired_ids), chunk):
        acq = fps[acquired_ids[s : s + chunk]].astype(np.float64)
        inter = cand @ acq.T
        union = cand_pop[:, None] + acq.sum(axis=1)[None, :] - inter
        with np.errstate(divide="ignore", invalid="ignore"):
            dist = np.where(union > 0, 1.0 - inter / np.maximum(union, 1), 0.0)
        best = np.minimum(best, dist.min(axis=1))
    return best


def score_tanimoto_diversity(fingerprints, acquired_ids, candidate_ids) -> np.ndarray:
    """Minimum Tanimoto distance from each candidate to the acquired set (1 if none acquired)."""
    if fingerprints is None:
        raise DatasetError("tanimoto diversity needs a fingerprint column")
    fps = np.asarray(fingerprints, dtype=bool)
    if fps.ndim != 2:
        raise DatasetError("fingerprints must be a 2-D bit matrix")
    candidate_ids = np.asarray(candidate_ids, dtype=np.int64)
    acquired_ids = np.asarray(acquired_ids, dtype=np.int64)
    if acquired_ids.size == 0:
        return np.ones(len(candidate_ids))
    return _min_distance_to(fps, candidate_ids, acquired_ids)


def _top_n(ids, scores, n_b):
    # primary key: score descending; secondary: id ascending
    order = np.lexsort((ids, -scores))
    return ids[order[:n_b]]


def select_batch(scored: ScoredCandidates, n_b: int, fingerprints=None) -> np.ndarray:
    """Pick up to ``n_b`` candidate ids.

    Static policies take the ``n_b`` highest scores (ties by ascending id).
    ``tanimoto_diversity`` is greedy farthest-point: after each pick the
    remaining candidates' scores are lowered to their distance from the pick
    when that is smaller; ``fingerprints`` must then be given.
    """
    if n_b < 1:
        raise SelectionError("n_b must be >= 1")
    if scored.ids.size == 0:
        raise SelectionError("no candidates to select from")
    if scored.ids.size <= n_b:
        return _top_n(scored.ids, scored.scores, scored.ids.size)
    if scored.policy != "tanimoto_diversity":
        return _top_n(scored.ids, scored.scores, n_b)

    fps = np.asarray(fingerprints, dtype=bool)
    ids = scored.ids
    scores = scored.scores.copy()
    alive = np.ones(ids.size, dtype=bool)
    cand_bits = fps[ids]
    picks = []
    for _ in range(n_b):
        masked = np.where(alive, scores, -np.inf)
        top = masked.max()
        # ties go to the smallest id
        tied = np.flatnonzero(masked == top)
        j = tied[np.argmin(ids[tied])]
        picks.append(ids[j])
        alive[j] = False
        scores = np.minimum(scores, tanimoto_distance(cand_bits, cand_bits[j]))
    return np.asarray(picks, dtype=np.int64)

