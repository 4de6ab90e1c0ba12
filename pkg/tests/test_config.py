import json

import numpy as np
import pytest

from screenloop.config import build_datasets, load_run_config, parse_run_config, run_config_to_dict
from screenloop.core import ConfigError
from screenloop.datasets import write_idx
from screenloop.predictor import PROFILES

DOC = {
    "data": {"source": "mnist_sample", "profile": "mnist", "shuffle_classes": [6, 8, 9], "subsample": 1000,
             "split": {"target": 0.8, "val": 0.1, "test": 0.1}},
    "model": {"hidden_size": 64, "optimizer": "adam"},
    "campaign": {"policy": "least_confidence", "seed": 3},
    "stopping": {"mode": "chernoff"},
    "output": {"dir": "out"},
}


def test_profile_defaults_and_overrides():
    rc = parse_run_config(DOC)
    assert rc.campaign.batch_size == PROFILES["mnist"][0]
    assert rc.campaign.model.hidden_size == 64 and rc.campaign.model.max_epochs == 1000
    assert rc.campaign.model.optimizer == "adam"
    assert parse_run_config({}).campaign.model.hidden_size == 512


def test_round_trip_is_fixed_point():
    rc = parse_run_config(DOC)
    doc = run_config_to_dict(rc)
    rc2 = parse_run_config(json.loads(json.dumps(doc)))
    assert rc2 == rc
    assert run_config_to_dict(rc2) == doc


@pytest.mark.parametrize("patch,path", [
    ({"campaign": {"policy": "entropy"}}, "campaign.policy"),
    ({"campaign": {"gamma": "high"}}, "campaign.gamma"),
    ({"campaign": {"batch_size": True}}, "campaign.batch_size"),
    ({"campaign": {"colour": 1}}, "campaign.colour"),
    ({"model": {"dropout": 1.5}}, "model.dropout"),
    ({"data": {"source": "ftp"}}, "data.source"),
    ({"data": {"split": {"train": 1.0}}}, "data.split.train"),
    ({"stopping": {"mode": "mse_threshold"}}, "stopping.t_mse"),
    ({"extra": {}}, "$.extra"),
])
def test_errors_name_the_field(patch, path):
    doc = json.loads(json.dumps(DOC))
    for sec, vals in patch.items():
        doc.setdefault(sec, {}).update(vals)
    with pytest.raises(ConfigError) as exc:
        parse_run_config(doc)
    assert exc.value.path == path


def test_invalid_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_run_config(p)


def test_build_datasets_from_idx_with_held_out_files(tmp_path):
    rng = np.random.default_rng(0)
    write_idx(rng.integers(0, 255, (50, 28, 28)), np.arange(50) % 10, tmp_path / "ti", tmp_path / "tl")
    write_idx(rng.integers(0, 255, (20, 28, 28)), np.arange(20) % 10, tmp_path / "vi", tmp_path / "vl")
    rc = parse_run_config({"data": {"source": "idx", "images": str(tmp_path / "ti"), "labels": str(tmp_path / "tl"),
                                    "test_images": str(tmp_path / "vi"), "test_labels": str(tmp_path / "vl"),
                                    "shuffle_classes": [1], "crop_keep_fraction": 0.5}})
    target, val, test = build_datasets(rc.data, seed=1)
    assert (target.n_samples, val.n_samples, test.n_samples) == (50, 10, 10)
    assert np.all(target.features.reshape(-1, 28, 28)[:, 14:] == 0)
    assert target.aux_columns["label_shuffled"].sum() == 5
    again = build_datasets(rc.data, seed=1)
    assert np.array_equal(again[0].labels, target.labels)


def test_build_datasets_from_csv(tmp_path):
    p = tmp_path / "m.csv"
    rows = ["x,gap"] + [f"{i},{(i * 7) % 11}" for i in range(40)]
    p.write_text("\n".join(rows) + "\n")
    rc = parse_run_config({"data": {"source": "csv", "path": str(p), "label_column": "gap",
                                    "feature_columns": ["x"], "discretize_median": True,
                                    "split": {"target": 0.5, "val": 0.25, "test": 0.25}}})
    target, val, test = build_datasets(rc.data, seed=0)
    assert target.n_classes == 2 and target.n_samples == 20
    assert set(np.unique(target.labels)) <= {0, 1}
    with pytest.raises(ConfigError):
        build_datasets(parse_run_config({"data": {"source": "csv", "path": str(p), "label_column": "gap",
                                                  "feature_columns": ["x"]}}).data, 0)


def test_demo_configs_parse():
    from pathlib import Path

    configs = sorted((Path(__file__).parent.parent / "demos" / "configs").glob("*.json"))
    assert configs
    for p in configs:
        rc = load_run_config(p)
        assert rc.save_log
