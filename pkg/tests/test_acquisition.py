import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from screenloop.acquisition import (
    ScoredCandidates,
    SelectionError,
    score_bald,
    score_fixed_order,
    score_least_confidence,
    score_qbc_variance,
    score_random,
    score_tanimoto_diversity,
    select_batch,
    tanimoto_distance,
)
from screenloop.core import Dataset, DatasetError, PolicyMismatchError, Predictions


def bits(*rows):
    return np.array([[c == "1" for c in r] for r in rows])


def test_least_confidence_examples():
    p = Predictions(probs=np.array([[0.5, 0.5, 0.0], [1.0, 0.0, 0.0], [0.7, 0.2, 0.1]]))
    assert np.allclose(score_least_confidence(p), [0.5, 0.0, 0.3])
    with pytest.raises(PolicyMismatchError):
        score_least_confidence(Predictions(member_values=np.ones((2, 2))))


def iterative_least_confidence(probs, n_b):
    """Reference: pick the least confident remaining sample one at a time."""
    conf = probs.max(axis=1)
    left = list(range(len(conf)))
    picks = []
    for _ in range(min(n_b, len(left))):
        best = min(left, key=lambda i: (conf[i], i))
        picks.append(best)
        left.remove(best)
    return picks


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.integers(2, 5), st.integers(1, 50), st.integers(0, 2**31))
def test_least_confidence_batch_matches_iterative_reference(n, k, n_b, seed):
    rng = np.random.default_rng(seed)
    # multiples of 1/8: exact in binary, and coarse enough that ties occur
    probs = rng.multinomial(8, np.ones(k) / k, size=n) / 8.0
    ids = np.arange(n)
    chosen = select_batch(ScoredCandidates(ids, score_least_confidence(Predictions(probs=probs)), "least_confidence"), n_b)
    assert list(chosen) == iterative_least_confidence(probs, n_b)


def test_random_scores():
    a = score_random(5, np.random.default_rng(3))
    assert np.array_equal(a, score_random(5, np.random.default_rng(3)))
    assert score_random(1, np.random.default_rng(0)).shape == (1,)


def test_random_batch_is_uniform():
    rng = np.random.default_rng(11)
    n, n_b, draws = 20, 5, 10000
    counts = np.zeros(n)
    ids = np.arange(n)
    for _ in range(draws):
        counts[select_batch(ScoredCandidates(ids, score_random(n, rng), "random"), n_b)] += 1
    expected = np.full(n, draws * n_b / n)
    assert stats.chisquare(counts, expected).pvalue > 0.01


def test_bald_examples():
    same = np.tile(np.array([[[0.3, 0.7]]]), (3, 4, 1))
    assert np.allclose(score_bald(same), 0.0)
    opposite = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    assert score_bald(opposite)[0] == pytest.approx(math.log(2))
    half = np.array([[[0.5, 0.5]], [[0.5, 0.5]]])
    assert score_bald(half)[0] == pytest.approx(0.0)
    with pytest.raises(PolicyMismatchError):
        score_bald(np.ones((1, 2, 2)) / 2)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6), st.integers(2, 5), st.integers(0, 2**31))
def test_bald_nonnegative_and_bounded(m, k, seed):
    p = np.random.default_rng(seed).dirichlet(np.ones(k), size=(m, 7))
    s = score_bald(p)
    assert np.all(s >= -1e-12) and np.all(s <= math.log(k) + 1e-12)


def test_qbc_examples():
    p = Predictions(member_values=np.array([[1.0, 3.0], [2.0, 2.0], [0.0, 4.0]]))
    s = score_qbc_variance(p.variance)
    assert s[0] == pytest.approx(1.0) and s[1] == 0.0 and s[2] > s[0]


def test_fixed_order():
    ds = Dataset(np.zeros((4, 1)), np.zeros(4), aux_columns={"molecule_size": np.array([3, 9, 1, 9])})
    ids = np.arange(4)
    by_id = select_batch(ScoredCandidates(ids, score_fixed_order(ds, "sample_id", "ascending"), "fixed_order"), 4)
    assert list(by_id) == [0, 1, 2, 3]
    big = select_batch(ScoredCandidates(ids, score_fixed_order(ds, "molecule_size", "descending"), "fixed_order"), 3)
    assert list(big) == [1, 3, 0]
    sub = score_fixed_order(ds, "molecule_size", "ascending", candidate_ids=[2, 3])
    assert list(sub) == [-1.0, -9.0]
    with pytest.raises(DatasetError):
        score_fixed_order(ds, "nope")


def test_tanimoto_distance():
    a, b, z = bits("0011", "1100", "0000")
    assert tanimoto_distance(a, a) == 0.0
    assert tanimoto_distance(a, b) == 1.0
    assert tanimoto_distance(z, z) == 0.0
    assert tanimoto_distance(bits("1100")[0], bits("1000")[0]) == pytest.approx(0.5)


def test_diversity_scores():
    fps = bits("0011", "1100", "0111", "0011")
    s = score_tanimoto_diversity(fps, [0], [1, 2, 3])
    assert np.allclose(s, [1.0, 1 - 2 / 3, 0.0])
    assert np.allclose(score_tanimoto_diversity(fps, [], [0, 1]), 1.0)
    with pytest.raises(DatasetError):
        score_tanimoto_diversity(None, [], [0])


def test_diversity_greedy_example():
    fps = bits("1000", "1100", "0001")
    ids = np.arange(3)
    scored = ScoredCandidates(ids, score_tanimoto_diversity(fps, [], ids), "tanimoto_diversity")
    assert list(select_batch(scored, 2, fps)) == [0, 2]


def test_select_batch_examples():
    assert list(select_batch(ScoredCandidates([0, 1, 2], [0.9, 0.1, 0.9], "least_confidence"), 2)) == [0, 2]
    assert sorted(select_batch(ScoredCandidates([4, 7], [0.1, 0.2], "random"), 5)) == [4, 7]
    with pytest.raises(SelectionError):
        select_batch(ScoredCandidates([0], [0.1], "random"), 0)
    with pytest.raises(ValueError):
        ScoredCandidates([0, 1], [0.1, np.nan], "random")
