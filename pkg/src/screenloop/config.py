"""JSON run configuration: parsing with field paths, serialization, data assembly.

A run configuration has five sections::

    {
      "data":     {"source": "mnist_sample", "shuffle_classes": [6, 8, 9], ...},
      "model":    {"hidden_size": 128, "optimizer": "adam", ...},
      "campaign": {"policy": "least_confidence", "batch_size": 200, ...},
      "stopping": {"mode": "chernoff", "patience": 1, "t_mse": null},
      "output":   {"dir": "runs/lc", "save_log": true}
    }

``data.profile`` (``mnist``, ``qm9``, ...) fills model settings and the
acquisition batch size from the per-dataset defaults before the explicit
fields are applied.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import datasets as dsets
from .core import CampaignConfig, ConfigError, Dataset
from .predictor import PROFILES, ModelConfig

_STOPPING_KEYS = ("mode", "patience", "t_mse")


@dataclass(frozen=True)
class DataSpec:
    source: str = "mnist_sample"
    profile: Optional[str] = None
    name: str = ""
    images: Optional[str] = None
    labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    path: Optional[str] = None
    label_column: Optional[str] = None
    feature_columns: List[str] = field(default_factory=list)
    aux_columns: List[str] = field(default_factory=list)
    task: str = "classification"
    n_classes: Optional[int] = None
    discretize_median: bool = False
    subsample: Optional[int] = None
    crop_keep_fraction: float = 1.0
    image_height: int = 28
    image_width: int = 28
    shuffle_classes: List[int] = field(default_factory=list)
    split: dict = field(default_factory=lambda: {"target": 0.8, "val": 0.05, "test": 0.15})
    seed: Optional[int] = None


@dataclass(frozen=True)
class RunConfig:
    data: DataSpec
    campaign: CampaignConfig
    output_dir: Optional[str] = None
    save_log: bool = False


_TYPES = {int: "an integer", float: "a number", str: "a string", bool: "a boolean", list: "a list", dict: "an object"}


def _check(value, kind, path, nullable=False):
    if value is None and nullable:
        return None
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(path, f"expected {_TYPES[kind]}")
    if not isinstance(value, kind):
        raise ConfigError(path, f"expected {_TYPES[kind]}, got {type(value).__name__}")
    return value


def _section(doc, key):
    sec = doc.get(key, {})
    if not isinstance(sec, dict):
        raise ConfigError(key, "expected an object")
    return sec


def _reject_unknown(sec, allowed, prefix):
    for k in sec:
        if k not in allowed:
            raise ConfigError(f"{prefix}.{k}", "unknown field")


_DATA_TYPES = {
    "source": (str, False), "profile": (str, True), "name": (str, False),
    "images": (str, True), "labels": (str, True), "test_images": (str, True), "test_labels": (str, True),
    "path": (str, True), "label_column": (str, True), "feature_columns": (list, False),
    "aux_columns": (list, False), "task": (str, False), "n_classes": (int, True),
    "discretize_median": (bool, False), "subsample": (int, True), "crop_keep_fraction": (float, False),
    "image_height": (int, False), "image_width": (int, False), "shuffle_classes": (list, False),
    "split": (dict, False), "seed": (int, True),
}
_CAMPAIGN_TYPES = {
    "gamma": (float, False), "delta": (float, False), "batch_size": (int, False), "policy": (str, False),
    "order_key": (str, False), "order_direction": (str, False), "fingerprint_column": (str, False),
    "seed": (int, False), "max_steps": (int, True), "random_first_batch": (bool, False),
    "warm_start": (bool, False), "record_predictions": (bool, False), "name": (str, False),
    "dataset_name": (str, False),
}
_MODEL_TYPES = {
    "n_hidden_layers": int, "hidden_size": int, "learning_rate": float, "grad_norm_clip": float,
    "dropout": float, "max_epochs": int, "train_batch_size": int, "early_stop_patience": int,
    "n_ensemble_members": int, "optimizer": str, "dtype": str,
}


def parse_data(sec: dict) -> DataSpec:
    _reject_unknown(sec, _DATA_TYPES, "data")
    kwargs = {k: _check(v, _DATA_TYPES[k][0], f"data.{k}", _DATA_TYPES[k][1]) for k, v in sec.items()}
    spec = DataSpec(**kwargs)
    if spec.source not in ("idx", "csv", "mnist_sample"):
        raise ConfigError("data.source", f"unknown source {spec.source!r}")
    if spec.profile is not None and spec.profile not in PROFILES:
        raise ConfigError("data.profile", f"unknown profile {spec.profile!r}")
    if spec.task not in ("classification", "regression"):
        raise ConfigError("data.task", "must be 'classification' or 'regression'")
    if spec.source == "idx" and not (spec.images and spec.labels):
        raise ConfigError("data.images", "idx source needs 'images' and 'labels'")
    if spec.source == "csv" and not (spec.path and spec.label_column and spec.feature_columns):
        raise ConfigError("data.path", "csv source needs 'path', 'label_column' and 'feature_columns'")
    _reject_unknown(spec.split, ("target", "val", "test"), "data.split")
    for k, v in spec.split.items():
        _check(v, float, f"data.split.{k}")
    for i, c in enumerate(spec.shuffle_classes):
        _check(c, int, f"data.shuffle_classes[{i}]")
    return spec


def parse_model(sec: dict, profile: Optional[str]) -> ModelConfig:
    _reject_unknown(sec, _MODEL_TYPES, "model")
    base = PROFILES[profile][1] if profile else ModelConfig()
    kwargs = {k: _check(v, _MODEL_TYPES[k], f"model.{k}") for k, v in sec.items()}
    return base.replace(**kwargs)


def parse_run_config(doc: dict) -> RunConfig:
    """Validate a run configuration document; raises :class:`ConfigError` naming the bad field."""
    if not isinstance(doc, dict):
        raise ConfigError("", "configuration must be a JSON object")
    _reject_unknown(doc, ("data", "model", "campaign", "stopping", "output"), "$")
    data = parse_data(_section(doc, "data"))
    model = parse_model(_section(doc, "model"), data.profile)

    camp = _section(doc, "campaign")
    _reject_unknown(camp, _CAMPAIGN_TYPES, "campaign")
    kwargs = {k: _check(v, _CAMPAIGN_TYPES[k][0], f"campaign.{k}", _CAMPAIGN_TYPES[k][1]) for k, v in camp.items()}
    if "batch_size" not in kwargs and data.profile:
        kwargs["batch_size"] = PROFILES[data.profile][0]
    stop = _section(doc, "stopping")
    _reject_unknown(stop, _STOPPING_KEYS, "stopping")
    if "mode" in stop:
        kwargs["stopping"] = _check(stop["mode"], str, "stopping.mode")
    if "patience" in stop:
        kwargs["patience"] = _check(stop["patience"], int, "stopping.patience")
    if "t_mse" in stop:
        kwargs["t_mse"] = _check(stop["t_mse"], float, "stopping.t_mse", nullable=True)
    campaign = CampaignConfig(model=model, **kwargs)

    out = _section(doc, "output")
    _reject_unknown(out, ("dir", "save_log"), "output")
    return RunConfig(
        data=data,
        campaign=campaign,
        output_dir=_check(out.get("dir"), str, "output.dir", nullable=True),
        save_log=_check(out.get("save_log", False), bool, "output.save_log"),
    )


def load_run_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path}: invalid JSON ({exc})") from None
    return parse_run_config(doc)


def campaign_to_dict(config: CampaignConfig) -> dict:
    return dataclasses.asdict(config)


def campaign_from_dict(d: dict) -> CampaignConfig:
    d = dict(d)
    model = ModelConfig(**d.pop("model"))
    return CampaignConfig(model=model, **d)


def run_config_to_dict(rc: RunConfig) -> dict:
    """Fully resolved document; parsing it again yields an equal configuration."""
    camp = campaign_to_dict(rc.campaign)
    model = camp.pop("model")
    stop = {"mode": camp.pop("stopping"), "patience": camp.pop("patience"), "t_mse": camp.pop("t_mse")}
    return {
        "data": dataclasses.asdict(rc.data),
        "model": model,
        "campaign": camp,
        "stopping": stop,
        "output": {"dir": rc.output_dir, "save_log": rc.save_log},
    }


def build_datasets(spec: DataSpec, seed: int):
    """Load, corrupt and split the data described by ``spec``.

    Corruptions are applied to the whole pool before splitting, so the
    validation and test sets follow the corrupted distribution. When
    separate IDX test files are given, the main files form the target pool
    and the test files are split 50-50 into validation and test sets.

    Returns ``(target, val, test)``.
    """
    data_seed = spec.seed if spec.seed is not None else seed
    rng = np.random.default_rng([data_seed, 7])
    if spec.source == "mnist_sample":
        pool = dsets.load_mnist_sample()
    elif spec.source == "idx":
        pool = dsets.load_idx(spec.images, spec.labels)
    else:
        n_classes = spec.n_classes
        if spec.task == "classification" and n_classes is None and not spec.discretize_median:
            raise ConfigError("data.n_classes", "classification from CSV needs n_classes")
        pool = dsets.load_csv_features(spec.path, spec.label_column, spec.feature_columns, spec.aux_columns,
                                       n_classes=None if spec.discretize_median else n_classes)
        if spec.discretize_median:
            pool = pool.replace(labels=dsets.discretize_median(pool.labels), n_classes=2,
                                aux_columns={**pool.aux_columns, "raw_value": np.asarray(pool.labels)})
    if spec.subsample is not None and spec.subsample < pool.n_samples:
        pool = pool.subset(np.sort(rng.choice(pool.n_samples, spec.subsample, replace=False)))

    held_out = None
    if spec.source == "idx" and spec.test_images:
        held_out = dsets.load_idx(spec.test_images, spec.test_labels)

    def corrupt(ds: Dataset, salt: int) -> Dataset:
        if spec.crop_keep_fraction < 1.0:
            ds = dsets.crop_bottom(ds, spec.image_height, spec.image_width, spec.crop_keep_fraction)
        if spec.shuffle_classes:
            ds = dsets.shuffle_labels(ds, spec.shuffle_classes, [data_seed, salt])
        return ds

    pool = corrupt(pool, 1)
    if held_out is not None:
        held_out = corrupt(held_out, 2)
        _, val, test = dsets.split_dataset(held_out, dsets.SplitSpec(0.0, 0.5, 0.5, split_seed=data_seed))
        target = pool.subset(np.arange(pool.n_samples), name="target")
    else:
        s = spec.split
        target, val, test = dsets.split_dataset(
            pool, dsets.SplitSpec(s.get("target", 0.0), s.get("val", 0.0), s.get("test", 0.0), split_seed=data_seed))
    return target, val, test
