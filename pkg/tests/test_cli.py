import csv
import json

import numpy as np
import pytest

from screenloop.cli import STEP_COLUMNS, checkpoint_steps, fmt, main, parse_cell
from screenloop.datasets import write_idx


def write_images(tmp_path, n=300, seed=0, signal=180):
    """Digit-like toy images: class k lights up row band k."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, n)
    images = rng.integers(0, 60, (n, 10, 10))
    images[np.arange(n), labels, :] += signal
    write_idx(images, labels, tmp_path / "img", tmp_path / "lbl")


def config(tmp_path, **campaign):
    camp = {"policy": "least_confidence", "batch_size": 60, "seed": 1}
    camp.update(campaign)
    doc = {
        "data": {"source": "idx", "images": str(tmp_path / "img"), "labels": str(tmp_path / "lbl"),
                 "split": {"target": 0.7, "val": 0.15, "test": 0.15}},
        "model": {"n_hidden_layers": 1, "hidden_size": 16, "max_epochs": 10, "train_batch_size": 32,
                  "early_stop_patience": 3, "optimizer": "adam", "learning_rate": 0.01},
        "campaign": camp,
        "stopping": {"mode": "chernoff"},
        "output": {"save_log": True},
    }
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(doc))
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_writes_outputs(tmp_path):
    write_images(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(config(tmp_path)), "--out", str(out), "--seeds", "1,2"]) == 0
    for seed in (1, 2):
        stem = out / f"least_confidence_seed{seed}"
        steps = read_csv(f"{stem}_steps.csv")
        summary = json.loads((out / f"least_confidence_seed{seed}_summary.json").read_text())
        hybrid = read_csv(f"{stem}_hybrid.csv")
        assert tuple(steps[0]) == STEP_COLUMNS
        assert len(steps) == summary["n_steps"] + 1
        assert summary["complete"] and summary["config"]["campaign"]["seed"] == seed
        assert hybrid[0] == ["sample_id", "label", "source"] and len(hybrid) == summary["n_target"] + 1
        n_observed = sum(row[2] == "observed" for row in hybrid[1:])
        assert n_observed == summary["n_obs"]
        assert int(steps[-1][1]) == summary["n_obs"]


def test_minimal_run_emits_three_files(tmp_path):
    write_images(tmp_path)
    doc = json.loads(config(tmp_path).read_text())
    doc["output"] = {}
    (tmp_path / "min.json").write_text(json.dumps(doc))
    out = tmp_path / "o"
    assert main(["run", "--config", str(tmp_path / "min.json"), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == [
        "least_confidence_seed1_hybrid.csv", "least_confidence_seed1_steps.csv", "least_confidence_seed1_summary.json"]


def test_minimal_mnist_config(tmp_path):
    pytest.importorskip("mlxtend")
    doc = {"data": {"source": "mnist_sample", "subsample": 600, "split": {"target": 0.8, "val": 0.1, "test": 0.1}},
           "model": {"n_hidden_layers": 1, "hidden_size": 32, "max_epochs": 5, "train_batch_size": 64,
                     "optimizer": "adam"},
           "campaign": {"batch_size": 120}}
    (tmp_path / "m.json").write_text(json.dumps(doc))
    out = tmp_path / "o"
    assert main(["run", "--config", str(tmp_path / "m.json"), "--out", str(out)]) == 0
    files = list(out.iterdir())
    assert len(files) == 3
    steps = read_csv(out / "least_confidence_seed0_steps.csv")
    summary = json.loads((out / "least_confidence_seed0_summary.json").read_text())
    assert len(steps) == summary["n_steps"] + 1


def test_rerun_is_identical(tmp_path):
    write_images(tmp_path)
    cfg = str(config(tmp_path))
    main(["run", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["run", "--config", cfg, "--out", str(tmp_path / "b")])
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_run_exit_codes(tmp_path, capsys):
    write_images(tmp_path)
    assert main(["run", "--config", str(config(tmp_path, policy="entropy")), "--out", str(tmp_path)]) == 2
    assert "campaign.policy" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    assert main(["run", "--config", str(config(tmp_path)), "--seeds", "a,b", "--out", str(tmp_path)]) == 2
    assert main(["frobnicate"]) == 2


def test_numeric_cells_reparse_exactly():
    for v in (0.1, 1 / 3, 0.99950145840915, 1e-300, 123456789.123456789, 7, 0):
        assert parse_cell(fmt(v)) == v
    assert fmt(None) == "" and parse_cell("") is None and fmt(True) == "1"


def test_step_csv_matches_log(tmp_path):
    write_images(tmp_path)
    out = tmp_path / "o"
    main(["run", "--config", str(config(tmp_path)), "--out", str(out)])
    log = json.loads((out / "least_confidence_seed1_log.json").read_text())
    rows = read_csv(out / "least_confidence_seed1_steps.csv")[1:]
    for row, rec in zip(rows, log["records"]):
        assert parse_cell(row[3]) == rec["batch_accuracy"]
        assert parse_cell(row[6]) == rec["true_system_accuracy"]
        assert parse_cell(row[4]) == rec["alpha"]


def test_validate_bound_defaults(tmp_path):
    params = tmp_path / "p.json"
    params.write_text(json.dumps({"trials": 2000, "ns": [100]}))
    out = tmp_path / "bound.csv"
    assert main(["validate", "bound", "--params", str(params), "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0][4] == "failure_rate" and len(rows) == 5
    assert all(float(r[4]) <= float(r[5]) for r in rows[1:])


def test_validate_lemma1(tmp_path, capsys):
    p = tmp_path / "p.json"
    p.write_text(json.dumps({"trials": 200}))
    assert main(["validate", "lemma1", "--params", str(p)]) == 0
    p.write_text(json.dumps({"trials": 200, "g": "decreasing"}))
    assert main(["validate", "lemma1", "--params", str(p)]) == 3
    assert "contract violated: mean batch accuracy" in capsys.readouterr().err
    p.write_text(json.dumps({"g": "wiggly"}))
    assert main(["validate", "lemma1", "--params", str(p)]) == 2


def test_validate_calibration(tmp_path):
    write_images(tmp_path, n=600, signal=15)
    cfg_path = config(tmp_path, record_predictions=True)
    main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    log_path = tmp_path / "o" / "least_confidence_seed1_log.json"
    p = tmp_path / "p.json"
    p.write_text(json.dumps({"log": str(log_path), "min_count": 5, "max_violation": 1.0, "min_pass_fraction": 0.0}))
    out = tmp_path / "cal.csv"
    assert main(["validate", "calibration", "--params", str(p), "--out", str(out)]) == 0
    assert read_csv(out)[0] == ["step", "bin_low", "bin_high", "count", "mean_confidence", "accuracy"]

    main(["run", "--config", str(config(tmp_path)), "--out", str(tmp_path / "np")])
    p.write_text(json.dumps({"log": str(tmp_path / "np" / "least_confidence_seed1_log.json")}))
    assert main(["validate", "calibration", "--params", str(p)]) == 2


def test_checkpoint_steps():
    assert checkpoint_steps(20) == [2, 10, 19]
    assert checkpoint_steps(1) == [1]
    assert checkpoint_steps(0) == []


def test_report(tmp_path):
    write_images(tmp_path)
    for pol in ("least_confidence", "random"):
        for seed in ("1", "2"):
            main(["run", "--config", str(config(tmp_path, policy=pol)), "--out", str(tmp_path / "o"),
                  "--seeds", seed])
    logs = sorted(str(p) for p in (tmp_path / "o").glob("*_log.json"))
    out = tmp_path / "r.csv"
    assert main(["report", "--metric", "inference_accuracy", "--logs", *logs, "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0][:5] == ["fraction", "least_confidence_s1", "least_confidence_s2", "random_s1", "random_s2"]
    assert rows[0][5:] == ["least_confidence_mean", "least_confidence_sem", "random_mean", "random_sem"]
    fractions = [float(r[0]) for r in rows[1:]]
    assert fractions == sorted(fractions) and fractions[0] > 0

    hard = tmp_path / "hard.txt"
    hard.write_text("\n".join(str(i) for i in range(0, 200, 7)))
    out2 = tmp_path / "h.csv"
    assert main(["report", "--metric", "hard_set_fraction", "--logs", *logs, "--out", str(out2),
                 "--hard-ids", str(hard)]) == 0
    last = read_csv(out2)[-1]
    assert float(last[0]) <= 1.0
    assert main(["report", "--metric", "vibes", "--logs", *logs]) == 2
    assert main(["report", "--metric", "hard_set_fraction", "--logs", *logs]) == 2
