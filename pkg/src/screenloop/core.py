"""Domain types and observation/inference partition bookkeeping."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np


class ScreenloopError(Exception):
    """Base class for all package errors."""


class EmptyTargetError(ScreenloopError, ValueError):
    pass


class InvalidTransferError(ScreenloopError, ValueError):
    pass


class DatasetError(ScreenloopError, ValueError):
    pass


class PolicyMismatchError(ScreenloopError, ValueError):
    pass


class ConfigError(ScreenloopError, ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable feature matrix with labels and optional per-sample columns.

    ``n_classes`` is the number of classes K for classification tasks and
    ``None`` for regression. Sample ids are always ``0..n-1``; identifiers
    from the source data (SMILES, original row numbers) belong in
    ``aux_columns``.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: Optional[int] = None
    aux_columns: Mapping[str, np.ndarray] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        features = np.asarray(self.features)
        if features.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {features.shape}")
        n = features.shape[0]
        if n < 1:
            raise DatasetError("dataset must contain at least one sample")
        if not np.all(np.isfinite(features)):
            raise DatasetError("features contain non-finite values")
        labels = np.asarray(self.labels)
        if labels.shape != (n,):
            raise DatasetError(f"expected {n} labels, got shape {labels.shape}")
        if self.n_classes is not None:
            if self.n_classes < 2:
                raise DatasetError("classification needs n_classes >= 2")
            if not np.issubdtype(labels.dtype, np.integer):
                if not np.all(np.mod(labels, 1) == 0):
                    raise DatasetError("classification labels must be integers")
                labels = labels.astype(np.int64)
            if labels.min() < 0 or labels.max() >= self.n_classes:
                raise DatasetError(f"class labels outside 0..{self.n_classes - 1}")
        else:
            labels = labels.astype(np.float64)
            if not np.all(np.isfinite(labels)):
                raise DatasetError("regression labels contain non-finite values")
        aux = {}
        for key, col in self.aux_columns.items():
            col = np.asarray(col)
            if col.shape[0] != n:
                raise DatasetError(f"aux column {key!r} has {col.shape[0]} entries, expected {n}")
            aux[key] = col
        for k in ("features", "labels"):
            arr = features if k == "features" else labels
            arr.flags.writeable = False
            object.__setattr__(self, k, arr)
        object.__setattr__(self, "aux_columns", aux)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def sample_ids(self) -> np.ndarray:
        return np.arange(self.n_samples)

    @property
    def is_classification(self) -> bool:
        return self.n_classes is not None

    def column(self, key: str) -> np.ndarray:
        """Aux column by name; ``"sample_id"`` resolves to the dense ids."""
        if key == "sample_id":
            return self.sample_ids
        try:
            return self.aux_columns[key]
        except KeyError:
            raise DatasetError(f"no aux column named {key!r}") from None

    def subset(self, ids: Sequence[int], name: Optional[str] = None) -> "Dataset":
        """Rows ``ids`` as a new dataset with fresh dense ids.

        The original ids are kept in the ``source_id`` aux column (composed
        with any existing one, so provenance survives repeated subsetting).
        """
        ids = np.asarray(ids, dtype=np.int64)
        aux = {k: v[ids] for k, v in self.aux_columns.items()}
        aux["source_id"] = self.column("source_id")[ids] if "source_id" in self.aux_columns else ids
        return Dataset(
            self.features[ids],
            self.labels[ids],
            n_classes=self.n_classes,
            aux_columns=aux,
            name=self.name if name is None else name,
        )

    def replace(self, **changes) -> "Dataset":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class PartitionState:
    """Observation/inference split of the target set at acquisition round ``step``."""

    obs_ids: tuple
    inf_ids: frozenset
    step: int = 0

    @property
    def n_obs(self) -> int:
        return len(self.obs_ids)

    @property
    def n_inf(self) -> int:
        return len(self.inf_ids)

    @property
    def n_target(self) -> int:
        return self.n_obs + self.n_inf

    def inf_array(self) -> np.ndarray:
        """Inference ids as a sorted array (the canonical candidate order)."""
        return np.fromiter(sorted(self.inf_ids), dtype=np.int64, count=self.n_inf)


def partition_init(n_target: int) -> PartitionState:
    if n_target < 1:
        raise EmptyTargetError("target set is empty")
    return PartitionState(obs_ids=(), inf_ids=frozenset(range(n_target)), step=0)


def transfer_batch(state: PartitionState, batch_ids: Sequence[int]) -> PartitionState:
    """Move ``batch_ids`` from the inference set to the end of the observation set."""
    batch = [int(i) for i in batch_ids]
    if len(set(batch)) != len(batch):
        raise InvalidTransferError("batch contains duplicate ids")
    missing = [i for i in batch if i not in state.inf_ids]
    if missing:
        raise InvalidTransferError(f"ids not in inference set: {missing[:10]}")
    return PartitionState(
        obs_ids=state.obs_ids + tuple(batch),
        inf_ids=state.inf_ids.difference(batch),
        step=state.step + 1,
    )


@dataclass(frozen=True, eq=False)
class Predictions:
    """Model outputs for a set of samples.

    Classification: ``probs`` is ``(n, K)`` with rows on the simplex.
    Regression: ``member_values`` is ``(n, M)``, one column per ensemble member.
    ``member_probs`` optionally keeps per-member class probabilities
    ``(M, n, K)`` for ensemble-disagreement scores.
    """

    probs: Optional[np.ndarray] = None
    member_values: Optional[np.ndarray] = None
    member_probs: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.probs is None) == (self.member_values is None):
            raise ValueError("exactly one of probs / member_values must be given")
        if self.probs is not None:
            p = np.asarray(self.probs, dtype=np.float64)
            if p.ndim != 2:
                raise ValueError("probs must be (n, K)")
            if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
                raise ValueError("probabilities outside [0, 1]")
            if p.size and np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-6:
                raise ValueError("probability rows must sum to 1")
            object.__setattr__(self, "probs", p)
        else:
            v = np.asarray(self.member_values, dtype=np.float64)
            if v.ndim != 2 or v.shape[1] < 1:
                raise ValueError("member_values must be (n, M) with M >= 1")
            object.__setattr__(self, "member_values", v)

    def __len__(self) -> int:
        arr = self.probs if self.probs is not None else self.member_values
        return arr.shape[0]

    @property
    def is_classification(self) -> bool:
        return self.probs is not None

    @property
    def top_class(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)

    @property
    def confidence(self) -> np.ndarray:
        return np.max(self.probs, axis=1)

    @property
    def mean(self) -> np.ndarray:
        return self.member_values.mean(axis=1)

    @property
    def variance(self) -> np.ndarray:
        return self.member_values.var(axis=1)

    @property
    def point(self) -> np.ndarray:
        """Point prediction: top class or ensemble mean."""
        return self.top_class if self.is_classification else self.mean

    def take(self, rows) -> "Predictions":
        rows = np.asarray(rows, dtype=np.int64)
        if self.probs is not None:
            mp = None if self.member_probs is None else self.member_probs[:, rows]
            return Predictions(probs=self.probs[rows], member_probs=mp)
        return Predictions(member_values=self.member_values[rows])

    @classmethod
    def uniform(cls, n: int, n_classes: int, n_members: int = 1) -> "Predictions":
        p = np.full((n, n_classes), 1.0 / n_classes)
        mp = np.broadcast_to(p, (n_members, n, n_classes)).copy() if n_members > 1 else None
        return cls(probs=p, member_probs=mp)


POLICIES = (
    "least_confidence",
    "random",
    "bald",
    "qbc_variance",
    "fixed_order",
    "tanimoto_diversity",
)
STOPPING_MODES = ("chernoff", "naive", "mse_threshold", "none")


@dataclass(frozen=True)
class CampaignConfig:
    """Parameters of one acquisition campaign.

    ``stopping="none"`` runs until the inference set is exhausted (or
    ``max_steps``), which is how full acquisition curves are produced.
    """

    gamma: float = 0.98
    delta: float = 0.05
    batch_size: int = 1000
    policy: str = "least_confidence"
    order_key: str = "sample_id"
    order_direction: str = "ascending"
    fingerprint_column: str = "fingerprint"
    stopping: str = "chernoff"
    patience: int = 1
    t_mse: Optional[float] = None
    model: "object" = None
    seed: int = 0
    max_steps: Optional[int] = None
    random_first_batch: bool = False
    warm_start: bool = False
    record_predictions: bool = False
    name: str = ""
    dataset_name: str = ""

    def __post_init__(self):
        if self.model is None:
            from .predictor import ModelConfig

            object.__setattr__(self, "model", ModelConfig())
        self.validate()

    def validate(self) -> None:
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError("campaign.gamma", "must lie in (0, 1]")
        if not (0.0 < self.delta < 1.0):
            raise ConfigError("campaign.delta", "must lie in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("campaign.batch_size", "must be >= 1")
        if self.policy not in POLICIES:
            raise ConfigError("campaign.policy", f"unknown policy {self.policy!r}")
        if self.order_direction not in ("ascending", "descending"):
            raise ConfigError("campaign.order_direction", "must be 'ascending' or 'descending'")
        if self.stopping not in STOPPING_MODES:
            raise ConfigError("stopping.mode", f"unknown stopping mode {self.stopping!r}")
        if self.patience < 1:
            raise ConfigError("stopping.patience", "must be >= 1")
        if self.stopping == "mse_threshold" and (self.t_mse is None or self.t_mse <= 0):
            raise ConfigError("stopping.t_mse", "mse_threshold stopping needs t_mse > 0")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("campaign.max_steps", "must be >= 1 when given")
        if self.policy in ("bald", "qbc_variance") and self.model.n_ensemble_members < 2:
            raise ConfigError(
                "model.n_ensemble_members", f"policy {self.policy!r} needs at least 2 ensemble members"
            )

    @property
    def agent(self) -> str:
        return self.name or self.policy

    def replace(self, **changes) -> "CampaignConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class StepRecord:
    """One acquisition round.

    In regression mode ``batch_accuracy``, ``inference_accuracy``,
    ``true_system_accuracy`` and ``test_accuracy`` hold mean squared errors
    instead of accuracies; ``alpha`` and ``est_system_accuracy`` are unset.
    Metrics that are undefined (e.g. inference accuracy on an empty inference
    set) are ``None``.
    """

    step: int
    n_obs: int
    n_inf: int
    batch_accuracy: Optional[float]
    alpha: Optional[float]
    est_system_accuracy: Optional[float]
    true_system_accuracy: Optional[float]
    inference_accuracy: Optional[float]
    test_accuracy: Optional[float]
    stopped: bool = False
