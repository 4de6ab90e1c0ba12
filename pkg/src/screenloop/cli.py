"""Command-line interface: ``screenloop run | validate | report``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error,
3 a validation contract does not hold.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings
from typing import Dict, List, Optional

import numpy as np

from . import metrics, stopping
from .config import build_datasets, load_run_config, run_config_to_dict
from .core import ConfigError, DatasetError, ScreenloopError
from .engine import CampaignLog, run_campaign

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_CONTRACT = 0, 1, 2, 3

STEP_COLUMNS = ("step", "n_obs", "n_inf", "batch_acc", "alpha", "est_sys_acc",
                "true_sys_acc", "inf_acc", "test_acc", "stopped")
_RECORD_FIELD = {
    "step": "step", "n_obs": "n_obs", "n_inf": "n_inf", "batch_acc": "batch_accuracy",
    "alpha": "alpha", "est_sys_acc": "est_system_accuracy", "true_sys_acc": "true_system_accuracy",
    "inf_acc": "inference_accuracy", "test_acc": "test_accuracy", "stopped": "stopped",
}


class UsageError(ScreenloopError):
    pass


class ContractViolation(ScreenloopError):
    pass


def fmt(value) -> str:
    """CSV cell text; floats use the shortest repr that parses back to the same value."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def parse_cell(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        return float(text)


def write_step_csv(log: CampaignLog, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(STEP_COLUMNS)
        for r in log.records:
            w.writerow([fmt(getattr(r, _RECORD_FIELD[c])) for c in STEP_COLUMNS])


def write_hybrid_csv(log: CampaignLog, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("sample_id", "label", "source"))
        for i, y, o in zip(log.hybrid_ids, log.hybrid_labels, log.hybrid_observed):
            w.writerow((int(i), fmt(y.item()), "observed" if o else "predicted"))


def summary(log: CampaignLog) -> dict:
    last = log.records[-1] if log.records else None
    n_obs = last.n_obs if last else 0
    return {
        "agent": log.agent,
        "seed": log.config.seed,
        "complete": log.complete,
        "error": log.error,
        "stopping_time": log.stopping_time,
        "stop_reason": log.stop_reason,
        "n_steps": len(log.records),
        "n_obs": n_obs,
        "n_target": log.n_target,
        "fraction_acquired": n_obs / log.n_target if log.n_target else None,
        "final": None if last is None else {
            "batch_acc": last.batch_accuracy,
            "alpha": last.alpha,
            "est_sys_acc": last.est_system_accuracy,
            "true_sys_acc": last.true_system_accuracy,
            "inf_acc": last.inference_accuracy,
            "test_acc": last.test_accuracy,
        },
    }


def _parse_seeds(text: Optional[str], default: int) -> List[int]:
    if not text:
        return [default]
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {text!r}") from None


def cmd_run(args) -> int:
    rc = load_run_config(args.config)
    out_dir = args.out or rc.output_dir
    if not out_dir:
        raise UsageError("no output directory: pass --out or set output.dir")
    os.makedirs(out_dir, exist_ok=True)
    seeds = _parse_seeds(args.seeds, rc.campaign.seed)
    status = EXIT_OK
    for seed in seeds:
        target, val, test = build_datasets(rc.data, seed)
        config = rc.campaign.replace(seed=seed)
        log = run_campaign(config, target, val, test)
        stem = os.path.join(out_dir, f"{config.agent}_seed{seed}")
        write_step_csv(log, stem + "_steps.csv")
        write_hybrid_csv(log, stem + "_hybrid.csv")
        info = summary(log)
        info["config"] = run_config_to_dict(rc)
        info["config"]["campaign"]["seed"] = seed
        with open(stem + "_summary.json", "w", encoding="utf-8") as fh:
            json.dump(info, fh, indent=2, sort_keys=True)
        if rc.save_log:
            with open(stem + "_log.json", "w", encoding="utf-8") as fh:
                fh.write(log.to_json())
        print(f"{config.agent} seed={seed}: steps={len(log.records)} tau={log.stopping_time} "
              f"reason={log.stop_reason} n_obs={info['n_obs']}/{log.n_target}")
        if not log.complete:
            print(f"error: {log.error} (partial artifacts written, marked incomplete)", file=sys.stderr)
            status = EXIT_RUNTIME
    return status


def _load_params(path) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        params = json.load(fh)
    if not isinstance(params, dict):
        raise ConfigError("params", "expected a JSON object")
    return params


_G_FUNCTIONS = {
    "identity": lambda v: v,
    "decreasing": lambda v: 1.0 - v,
}


def validate_bound(params: dict, out) -> List[str]:
    mus = params.get("mus", [0.8, 0.9, 0.95, 0.99])
    ns = params.get("ns", [100, 1000])
    delta = float(params.get("delta", 0.05))
    trials = int(params.get("trials", 10000))
    rng = np.random.default_rng(params.get("seed", 0))
    slack = stopping.coverage_slack(delta, trials)
    w = csv.writer(out)
    w.writerow(("mu", "n", "delta", "trials", "failure_rate", "limit"))
    violations = []
    for mu in mus:
        for n in ns:
            rate = stopping.validate_bound_coverage(mu, n, delta, trials, rng)
            w.writerow((fmt(mu), n, fmt(delta), trials, fmt(rate), fmt(delta + slack)))
            if rate > delta + slack:
                violations.append(f"failure rate {rate} > {delta} + {slack:.6f} at mu={mu}, n={n}")
    return violations


def validate_lemma1_cmd(params: dict, out) -> List[str]:
    g_name = params.get("g", "identity")
    if g_name == "constant":
        c = float(params.get("constant", 0.8))
        g = lambda v: np.full_like(v, c)  # noqa: E731
    elif g_name in _G_FUNCTIONS:
        g = _G_FUNCTIONS[g_name]
    else:
        raise ConfigError("params.g", f"unknown conditional-accuracy function {g_name!r}")
    n, n_b, trials = int(params.get("n", 1000)), int(params.get("n_b", 100)), int(params.get("trials", 1000))
    conf = tuple(params.get("confidence", [0.5, 1.0]))
    res = metrics.validate_lemma1(n, n_b, trials, np.random.default_rng(params.get("seed", 0)), g=g, confidence=conf)
    # standard error of a difference of two trial means, each bounded by a Bernoulli variance of 1/4
    slack = 3.0 * math.sqrt(0.25 / (n_b * trials) + 0.25 / ((n - n_b) * trials))
    w = csv.writer(out)
    w.writerow(("g", "n", "n_b", "trials", "mean_batch_acc", "mean_remaining_acc", "frac_trials_batch_le_remaining"))
    w.writerow((g_name, n, n_b, trials, fmt(res.mean_batch_acc), fmt(res.mean_remaining_acc),
                fmt(res.frac_trials_batch_le_remaining)))
    if res.mean_batch_acc > res.mean_remaining_acc + slack:
        return [f"mean batch accuracy {res.mean_batch_acc} > mean remaining accuracy "
                f"{res.mean_remaining_acc} + {slack:.6f}"]
    return []


def checkpoint_steps(n_steps: int) -> List[int]:
    """Early, middle and late steps of a campaign (1-based, deduplicated)."""
    if n_steps < 1:
        return []
    return sorted({1 + (n_steps - 1) // 10, (n_steps + 1) // 2, max(1, n_steps - 1)})


def validate_calibration(params: dict, out) -> List[str]:
    path = params.get("log")
    if not path:
        raise ConfigError("params.log", "calibration validation needs a campaign log path")
    with open(path, encoding="utf-8") as fh:
        log = CampaignLog.from_json(fh.read())
    if not log.predictions or log.ground_truth is None or log.predictions[0].confidence is None:
        raise UsageError(f"{path}: log has no recorded class predictions (set campaign.record_predictions)")
    n_bins = int(params.get("n_bins", 10))
    min_count = int(params.get("min_count", 50))
    max_violation = float(params.get("max_violation", 0.1))
    min_pass = float(params.get("min_pass_fraction", 0.8))
    steps = params.get("steps") or checkpoint_steps(len(log.predictions))
    w = csv.writer(out)
    w.writerow(("step", "bin_low", "bin_high", "count", "mean_confidence", "accuracy"))
    passed, checked = 0, 0
    for step in steps:
        report = log.calibration_report(int(step), n_bins)
        for low, high, count, conf, acc in report.rows():
            w.writerow((step, fmt(low), fmt(high), count,
                        "" if math.isnan(conf) else fmt(conf), "" if math.isnan(acc) else fmt(acc)))
        v = metrics.weak_calibration_violation(report, min_count=min_count)
        if not math.isnan(v):
            checked += 1
            passed += v <= max_violation
    if checked == 0:
        return [f"no checkpoint has two bins with >= {min_count} samples"]
    if passed / checked < min_pass:
        return [f"weakly calibrated checkpoints {passed}/{checked} < {min_pass}"]
    return []


def cmd_validate(args) -> int:
    params = _load_params(args.params)
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        runner = {"bound": validate_bound, "lemma1": validate_lemma1_cmd, "calibration": validate_calibration}
        violations = runner[args.kind](params, out)
    finally:
        if args.out:
            out.close()
    for v in violations:
        print(f"contract violated: {v}", file=sys.stderr)
    return EXIT_CONTRACT if violations else EXIT_OK


def _read_ids(path) -> List[int]:
    with open(path, encoding="utf-8") as fh:
        text = fh.read().strip()
    if text.startswith("["):
        return [int(i) for i in json.loads(text)]
    return [int(tok) for tok in text.replace(",", " ").split() if tok.lstrip("-").isdigit()]


def log_series(log: CampaignLog, metric: str, hard_ids=None):
    """``(fractions, values)`` of one metric over the campaign's steps."""
    fractions = np.array([r.n_obs / log.n_target for r in log.records])
    if metric == "hard_set_fraction":
        if hard_ids is None:
            raise UsageError("metric hard_set_fraction needs --hard-ids")
        values = [metrics.hard_set_fraction_acquired(log.obs_ids_at(r.step), hard_ids) for r in log.records]
    else:
        attr = _RECORD_FIELD.get(metric, metric)
        if attr not in _RECORD_FIELD.values() or attr in ("step", "stopped"):
            raise UsageError(f"unknown metric {metric!r}")
        values = [getattr(r, attr) for r in log.records]
    return fractions, np.array([np.nan if v is None else v for v in values], dtype=np.float64)


def report_table(logs: List[CampaignLog], metric: str, hard_ids=None):
    """Header and rows of the wide table: one row per acquired fraction."""
    series = [log_series(log, metric, hard_ids) for log in logs]
    grid = np.unique(np.concatenate([f for f, _ in series]))
    columns, values = [], []
    seen: Dict[str, int] = {}
    for log, (f, v) in zip(logs, series):
        name = f"{log.agent}_s{log.config.seed}"
        seen[name] = seen.get(name, 0) + 1
        if seen[name] > 1:
            name = f"{name}_{seen[name]}"
        columns.append(name)
        ok = ~np.isnan(v)
        col = np.full(grid.shape, np.nan)
        if ok.any():
            inside = (grid >= f[ok].min()) & (grid <= f[ok].max())
            col[inside] = np.interp(grid[inside], f[ok], v[ok])
        values.append(col)
    agents = sorted({log.agent for log in logs})
    for agent in agents:
        member = np.array([values[i] for i, log in enumerate(logs) if log.agent == agent])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns
            mean = np.nanmean(member, axis=0)
            k = np.sum(~np.isnan(member), axis=0)
            sem = np.where(k > 1, np.nanstd(member, axis=0, ddof=1) / np.sqrt(np.maximum(k, 1)), np.nan)
        columns += [f"{agent}_mean", f"{agent}_sem"]
        values += [mean, sem]
    header = ["fraction"] + columns
    rows = [[grid[i]] + [c[i] for c in values] for i in range(len(grid))]
    return header, rows


def cmd_report(args) -> int:
    logs = []
    for path in args.logs:
        with open(path, encoding="utf-8") as fh:
            logs.append(CampaignLog.from_json(fh.read()))
    hard = _read_ids(args.hard_ids) if args.hard_ids else None
    header, rows = report_table(logs, args.metric, hard)
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(None if (isinstance(x, float) and math.isnan(x)) else x) for x in row])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="screenloop", description="Hybrid-screen acquisition campaigns.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run campaigns from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--out")
    run.add_argument("--seeds", help='comma-separated seeds, e.g. "1,2,3"')
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="run a validation suite")
    val.add_argument("kind", choices=("bound", "lemma1", "calibration"))
    val.add_argument("--params")
    val.add_argument("--out")
    val.set_defaults(func=cmd_validate)

    rep = sub.add_parser("report", help="tabulate a metric across campaign logs")
    rep.add_argument("--metric", required=True)
    rep.add_argument("--logs", nargs="+", required=True)
    rep.add_argument("--out")
    rep.add_argument("--hard-ids")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, DatasetError, UsageError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScreenloopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
