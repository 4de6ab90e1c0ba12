import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from screenloop.core import (
    CampaignConfig,
    ConfigError,
    Dataset,
    DatasetError,
    EmptyTargetError,
    InvalidTransferError,
    Predictions,
    partition_init,
    transfer_batch,
)
from screenloop.predictor import ModelConfig


def test_partition_init():
    s = partition_init(4)
    assert s.obs_ids == () and s.inf_ids == {0, 1, 2, 3} and s.step == 0
    assert partition_init(1).inf_ids == {0}
    with pytest.raises(EmptyTargetError):
        partition_init(0)


def test_transfer_examples():
    s = transfer_batch(partition_init(3), [2, 0])
    assert s.obs_ids == (2, 0) and s.inf_ids == {1} and s.step == 1
    same = transfer_batch(s, [])
    assert same.obs_ids == s.obs_ids and same.inf_ids == s.inf_ids and same.step == 2
    with pytest.raises(InvalidTransferError):
        transfer_batch(partition_init(2), [5])
    with pytest.raises(InvalidTransferError):
        transfer_batch(partition_init(4), [1, 1])
    with pytest.raises(InvalidTransferError):
        transfer_batch(s, [2])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.data())
def test_partition_invariant_under_random_transfers(n, data):
    s = partition_init(n)
    while s.n_inf:
        inf = sorted(s.inf_ids)
        batch = data.draw(st.lists(st.sampled_from(inf), unique=True, max_size=len(inf)))
        s = transfer_batch(s, batch)
        assert set(s.obs_ids).isdisjoint(s.inf_ids)
        assert set(s.obs_ids) | s.inf_ids == set(range(n))
        assert s.n_target == n
        if not batch:
            break


def test_dataset_validation():
    x = np.zeros((3, 2))
    with pytest.raises(DatasetError):
        Dataset(np.array([[np.nan, 0.0]]), np.array([0]), n_classes=2)
    with pytest.raises(DatasetError):
        Dataset(x, np.array([0, 1, 2]), n_classes=2)
    with pytest.raises(DatasetError):
        Dataset(x, np.array([0.0, np.inf, 1.0]))
    with pytest.raises(DatasetError):
        Dataset(x, np.zeros(3), aux_columns={"c": np.zeros(2)})
    with pytest.raises(DatasetError):
        Dataset(np.zeros((0, 2)), np.zeros(0))
    ds = Dataset(x, np.array([0, 1, 1]), n_classes=2)
    assert list(ds.sample_ids) == [0, 1, 2]
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0


def test_subset_tracks_source_ids():
    ds = Dataset(np.arange(10.0)[:, None], np.arange(10.0), aux_columns={"k": np.arange(10) * 2})
    sub = ds.subset([7, 3, 5]).subset([2, 0])
    assert list(sub.column("source_id")) == [5, 7]
    assert list(sub.column("k")) == [10, 14]
    assert list(sub.column("sample_id")) == [0, 1]
    with pytest.raises(DatasetError):
        ds.column("missing")


def test_predictions_derived_fields():
    p = Predictions(probs=np.array([[0.7, 0.2, 0.1], [0.1, 0.3, 0.6]]))
    assert list(p.top_class) == [0, 2]
    assert np.allclose(p.confidence, [0.7, 0.6])
    r = Predictions(member_values=np.array([[1.0, 3.0], [2.0, 2.0]]))
    assert np.allclose(r.mean, [2.0, 2.0]) and np.allclose(r.variance, [1.0, 0.0])
    assert np.allclose(Predictions(member_values=np.ones((4, 1))).variance, 0.0)
    with pytest.raises(ValueError):
        Predictions(probs=np.array([[0.5, 0.6]]))
    with pytest.raises(ValueError):
        Predictions()
    u = Predictions.uniform(3, 4)
    assert np.allclose(u.confidence, 0.25)


@pytest.mark.parametrize("field,value", [("gamma", 0.0), ("gamma", 1.5), ("delta", 0.0), ("delta", 1.0),
                                         ("batch_size", 0), ("policy", "entropy"), ("stopping", "soon")])
def test_config_rejects_bad_values(field, value):
    with pytest.raises(ConfigError) as exc:
        CampaignConfig(**{field: value})
    assert field in exc.value.path or exc.value.path.endswith("mode")


def test_ensemble_policies_need_members():
    with pytest.raises(ConfigError):
        CampaignConfig(policy="qbc_variance", stopping="mse_threshold", t_mse=0.1)
    cfg = CampaignConfig(policy="qbc_variance", stopping="mse_threshold", t_mse=0.1,
                         model=ModelConfig(n_ensemble_members=5))
    assert cfg.agent == "qbc_variance"
    assert CampaignConfig(gamma=1.0).gamma == 1.0
