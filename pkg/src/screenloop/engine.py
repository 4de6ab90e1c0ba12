"""The acquisition campaign: train, score, select, transfer, label, bound, stop."""

from __future__ import annotations

import dataclasses
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import acquisition as acq
from . import metrics, stopping
from .core import (
    CampaignConfig,
    ConfigError,
    Dataset,
    PartitionState,
    Predictions,
    ScreenloopError,
    StepRecord,
    partition_init,
    transfer_batch,
)
from .predictor import ModelConfig, predict_ensemble, train_ensemble


class OracleError(ScreenloopError, RuntimeError):
    pass


class LabelOracle:
    """Reveals true labels of requested target ids and counts every query."""

    def __init__(self, labels):
        self._labels = np.asarray(labels)
        self.calls = 0
        self.queried: List[int] = []

    def __call__(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        self.calls += len(ids)
        self.queried.extend(int(i) for i in ids)
        return self._labels[ids].copy()


@dataclass
class StepPredictions:
    """What the model said about the inference set when the batch was chosen."""

    ids: np.ndarray
    predicted: np.ndarray
    confidence: Optional[np.ndarray] = None


@dataclass
class CampaignLog:
    config: CampaignConfig
    records: List[StepRecord] = field(default_factory=list)
    batches: List[List[int]] = field(default_factory=list)
    stopping_time: Optional[int] = None
    stop_reason: str = stopping.NOT_STOPPED
    n_target: int = 0
    hybrid_ids: Optional[np.ndarray] = None
    hybrid_labels: Optional[np.ndarray] = None
    hybrid_observed: Optional[np.ndarray] = None
    predictions: Optional[List[StepPredictions]] = None
    ground_truth: Optional[np.ndarray] = None
    complete: bool = True
    error: Optional[str] = None

    @property
    def agent(self) -> str:
        return self.config.agent

    @property
    def obs_ids(self) -> List[int]:
        return [i for b in self.batches for i in b]

    def obs_ids_at(self, step: int) -> List[int]:
        """Observation set after ``step`` acquisitions."""
        return [i for b in self.batches[:step] for i in b]

    def calibration_report(self, step: int, n_bins: int = 10) -> "metrics.CalibrationReport":
        """Confidence bins over the inference set scored at ``step`` (simulation only)."""
        if not self.predictions or self.ground_truth is None:
            raise ScreenloopError("log holds no recorded predictions")
        p = self.predictions[step - 1]
        if p.confidence is None:
            raise ScreenloopError("log holds regression predictions, no confidences")
        correct = p.predicted == self.ground_truth[p.ids]
        return metrics.calibration_bins(p.confidence, correct, n_bins)

    def to_dict(self) -> dict:
        from .config import campaign_to_dict

        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "format": "screenloop-campaign-log",
            "version": 1,
            "config": campaign_to_dict(self.config),
            "n_target": self.n_target,
            "complete": self.complete,
            "error": self.error,
            "stopping_time": self.stopping_time,
            "stop_reason": self.stop_reason,
            "records": [dataclasses.asdict(r) for r in self.records],
            "batches": self.batches,
            "hybrid": None if self.hybrid_ids is None else {
                "sample_id": arr(self.hybrid_ids),
                "label": arr(self.hybrid_labels),
                "observed": arr(self.hybrid_observed),
            },
            "predictions": None if self.predictions is None else [
                {"ids": arr(p.ids), "predicted": arr(p.predicted), "confidence": arr(p.confidence)}
                for p in self.predictions
            ],
            "ground_truth": arr(self.ground_truth),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=True)

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignLog":
        from .config import campaign_from_dict

        if d.get("format") != "screenloop-campaign-log":
            raise ScreenloopError("not a campaign log")
        hybrid = d.get("hybrid")
        preds = d.get("predictions")
        gt = d.get("ground_truth")
        return cls(
            config=campaign_from_dict(d["config"]),
            records=[StepRecord(**r) for r in d["records"]],
            batches=[list(b) for b in d["batches"]],
            stopping_time=d["stopping_time"],
            stop_reason=d["stop_reason"],
            n_target=d["n_target"],
            hybrid_ids=None if hybrid is None else np.asarray(hybrid["sample_id"]),
            hybrid_labels=None if hybrid is None else np.asarray(hybrid["label"]),
            hybrid_observed=None if hybrid is None else np.asarray(hybrid["observed"], dtype=bool),
            predictions=None if preds is None else [
                StepPredictions(np.asarray(p["ids"]), np.asarray(p["predicted"]),
                                None if p["confidence"] is None else np.asarray(p["confidence"]))
                for p in preds
            ],
            ground_truth=None if gt is None else np.asarray(gt),
            complete=d["complete"],
            error=d.get("error"),
        )

    @classmethod
    def from_json(cls, text: str) -> "CampaignLog":
        return cls.from_dict(json.loads(text))


def _preflight(config: CampaignConfig, target: Dataset, val: Dataset, test: Optional[Dataset]):
    classification = target.is_classification
    if val is None or val.n_samples == 0:
        raise ConfigError("data.split", "a non-empty validation set is required")
    for name, ds in (("val", val), ("test", test)):
        if ds is not None and (ds.n_features != target.n_features or ds.n_classes != target.n_classes):
            raise ConfigError(f"data.{name}", "does not match the target set's features/task")
    if classification and config.policy == "qbc_variance":
        raise ConfigError("campaign.policy", "qbc_variance is a regression policy")
    if not classification and config.policy in ("least_confidence", "bald"):
        raise ConfigError("campaign.policy", f"{config.policy} needs a classification task")
    if classification and config.stopping == "mse_threshold":
        raise ConfigError("stopping.mode", "mse_threshold stopping needs a regression task")
    if not classification and config.stopping in ("chernoff", "naive"):
        raise ConfigError("stopping.mode", f"{config.stopping} stopping needs a classification task")
    if config.policy == "tanimoto_diversity":
        fps = target.aux_columns.get(config.fingerprint_column)
        if fps is None or np.asarray(fps).ndim != 2:
            raise ConfigError("campaign.fingerprint_column",
                              f"no bit-vector column {config.fingerprint_column!r} in target set")
    if config.policy == "fixed_order" and config.order_key != "sample_id" and config.order_key not in target.aux_columns:
        raise ConfigError("campaign.order_key", f"no column {config.order_key!r} in target set")


def _step_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step]).generate_state(1)[0])


def _cold_predictions(n: int, target: Dataset, model_config: ModelConfig) -> Predictions:
    if target.is_classification:
        return Predictions.uniform(n, target.n_classes, model_config.n_ensemble_members)
    return Predictions(member_values=np.zeros((n, model_config.n_ensemble_members)))


def _score(config, preds, target, state, candidates, acq_rng, cold):
    policy = config.policy
    if cold and config.random_first_batch:
        return acq.score_random(len(candidates), acq_rng)
    if policy == "least_confidence":
        return acq.score_least_confidence(preds)
    if policy == "random":
        return acq.score_random(len(candidates), acq_rng)
    if policy == "bald":
        return acq.score_bald(preds.member_probs)
    if policy == "qbc_variance":
        return acq.score_qbc_variance(preds.variance)
    if policy == "fixed_order":
        return acq.score_fixed_order(target, config.order_key, config.order_direction, candidates)
    return acq.score_tanimoto_diversity(target.aux_columns[config.fingerprint_column],
                                        np.asarray(state.obs_ids, dtype=np.int64), candidates)


def _quality(preds: Predictions, truth, classification: bool) -> Optional[float]:
    if len(truth) == 0:
        return None
    if classification:
        return metrics.batch_accuracy(preds, truth)
    return metrics.mean_squared_error(preds, truth)


def run_campaign(
    config: CampaignConfig,
    target: Dataset,
    val: Dataset,
    test: Optional[Dataset] = None,
    label_oracle: Optional[Callable] = None,
    ground_truth=None,
) -> CampaignLog:
    """Run one hybrid-screen campaign until the stop rule fires.

    Parameters
    ----------
    config : CampaignConfig
    target : Dataset
        The fixed target set. Its labels are only used through the oracle
        and, for simulation metrics, as default ground truth.
    val, test : Dataset
        Validation set for early stopping; optional held-out test set
        monitored at every step.
    label_oracle : callable, optional
        ``oracle(ids) -> labels``; queried once per acquired sample and
        never for inference-set samples. Defaults to a
        :class:`LabelOracle` over ``target.labels``.
    ground_truth : array, optional
        True labels for the simulation-only columns of the log. Defaults
        to ``target.labels``.

    Returns
    -------
    CampaignLog
        Per-step records, acquired batches, stopping time and the hybrid
        readout (observed labels plus predictions on the rest). If the
        oracle raises, the log is returned with ``complete=False``.
    """
    _preflight(config, target, val, test)
    classification = target.is_classification
    oracle = label_oracle if label_oracle is not None else LabelOracle(target.labels)
    truth = np.asarray(target.labels if ground_truth is None else ground_truth)
    acq_rng = np.random.default_rng([config.seed, 0xACE])
    fingerprints = target.aux_columns.get(config.fingerprint_column)

    state = partition_init(target.n_samples)
    observed = np.zeros(target.n_samples, dtype=truth.dtype)
    log = CampaignLog(config=config, n_target=target.n_samples)
    recorded: List[StepPredictions] = []
    history: List[float] = []
    models = None
    last_preds, last_ids = None, None

    while True:
        t = state.step + 1
        cold = state.n_obs == 0
        if not cold:
            obs = np.asarray(state.obs_ids, dtype=np.int64)
            train_set = target.subset(obs).replace(labels=observed[obs])
            models = train_ensemble(config.model, train_set, val, _step_seed(config.seed, t),
                                    init=models if config.warm_start else None)
        candidates = state.inf_array()
        if cold:
            preds = _cold_predictions(len(candidates), target, config.model)
        else:
            preds = predict_ensemble(models, target.features[candidates])
        last_preds, last_ids = preds, candidates

        scores = _score(config, preds, target, state, candidates, acq_rng, cold)
        scored = acq.ScoredCandidates(candidates, scores, config.policy)
        batch = acq.select_batch(scored, config.batch_size, fingerprints)
        state = transfer_batch(state, batch)
        log.batches.append([int(i) for i in batch])

        try:
            batch_labels = np.asarray(oracle(batch))
        except Exception as exc:  # oracle is user code; keep what we have
            log.complete = False
            log.error = f"label oracle failed at step {t}: {exc!r}"
            log.batches.pop()
            break
        observed[batch] = batch_labels

        rows = np.searchsorted(candidates, batch)
        batch_preds = preds.take(rows)
        batch_quality = _quality(batch_preds, batch_labels, classification)

        alpha = est = None
        if classification:
            decision = stopping.should_stop_chernoff(state, batch_quality, len(batch), config.gamma, config.delta)
            alpha, est = decision.alpha, decision.est_system_accuracy
            if config.stopping == "naive":
                history.append(stopping.estimate_system_accuracy(state.n_obs, state.n_inf, batch_quality))
                decision = stopping.should_stop_naive(history, config.gamma, config.patience)
        else:
            history.append(batch_quality)
            decision = stopping.should_stop_regression(history, config.t_mse, config.patience) \
                if config.stopping == "mse_threshold" else stopping.StopDecision(False)
        if config.stopping == "none":
            decision = stopping.StopDecision(False)
        if state.n_inf == 0:
            decision = stopping.StopDecision(True, alpha, est, stopping.INFERENCE_EXHAUSTED)

        # simulation-only metrics from ground truth
        remaining = np.isin(candidates, batch, invert=True)
        inf_preds = preds.take(np.flatnonzero(remaining))
        inf_ids = candidates[remaining]
        inf_quality = _quality(inf_preds, truth[inf_ids], classification)
        if classification:
            n_correct = 0 if inf_quality is None else inf_quality * len(inf_ids)
            true_sys = (state.n_obs + n_correct) / state.n_target
        else:
            true_sys = 0.0 if inf_quality is None else inf_quality * len(inf_ids) / state.n_target
        test_quality = None
        if test is not None:
            test_preds = _cold_predictions(test.n_samples, target, config.model) if cold \
                else predict_ensemble(models, test.features)
            test_quality = _quality(test_preds, test.labels, classification)

        if config.record_predictions:
            recorded.append(StepPredictions(candidates, preds.point,
                                            preds.confidence if classification else None))

        log.records.append(StepRecord(
            step=t, n_obs=state.n_obs, n_inf=state.n_inf,
            batch_accuracy=batch_quality, alpha=alpha, est_system_accuracy=est,
            true_system_accuracy=float(true_sys), inference_accuracy=inf_quality,
            test_accuracy=test_quality, stopped=decision.stop,
        ))
        if decision.stop:
            log.stopping_time = t
            log.stop_reason = decision.reason
            break
        if config.max_steps is not None and t >= config.max_steps:
            log.stop_reason = stopping.MAX_STEPS
            break

    _fill_hybrid(log, state, observed, last_preds, last_ids)
    if config.record_predictions:
        log.predictions = recorded
        log.ground_truth = truth.copy()
    return log


def _fill_hybrid(log, state: PartitionState, observed, preds, pred_ids):
    n = state.n_target
    obs = np.asarray(state.obs_ids, dtype=np.int64)
    # ids acquired in an aborted step are not part of the hybrid output
    obs = obs[: sum(len(b) for b in log.batches)]
    labels = np.zeros(n, dtype=observed.dtype)
    is_obs = np.zeros(n, dtype=bool)
    is_obs[obs] = True
    labels[obs] = observed[obs]
    if preds is not None:
        point = preds.point
        rest = ~is_obs[pred_ids]
        labels[pred_ids[rest]] = point[rest]
    log.hybrid_ids = np.arange(n)
    log.hybrid_labels = labels
    log.hybrid_observed = is_obs


def worker_count(requested: Optional[int] = None) -> int:
    """Worker cap from the argument or ``SCREENLOOP_THREADS`` (0 means one per CPU)."""
    if requested is None:
        requested = int(os.environ.get("SCREENLOOP_THREADS", "0") or 0)
    return requested if requested > 0 else (os.cpu_count() or 1)


def run_comparison(
    configs: Sequence[CampaignConfig],
    target: Dataset,
    val: Dataset,
    test: Optional[Dataset] = None,
    seeds: Optional[Sequence[int]] = None,
    oracle_factory: Optional[Callable[[], Callable]] = None,
    max_workers: Optional[int] = None,
) -> List[CampaignLog]:
    """Run several agents on the same data; one log per (config, seed).

    Every campaign gets its own oracle (``oracle_factory()``, default a
    fresh :class:`LabelOracle`) so query counts stay per campaign. Logs come
    back in config-major, seed-minor order regardless of scheduling.
    """
    if not configs:
        raise ConfigError("campaign", "no configurations to compare")
    names = {c.dataset_name for c in configs}
    if len(names) > 1:
        raise ConfigError("campaign.dataset_name", f"configs refer to different datasets: {sorted(names)}")
    jobs = [c.replace(seed=s) for c in configs for s in seeds] if seeds else list(configs)

    def run(cfg):
        oracle = oracle_factory() if oracle_factory is not None else None
        return run_campaign(cfg, target, val, test, label_oracle=oracle)

    workers = min(worker_count(max_workers), len(jobs))
    if workers <= 1:
        return [run(c) for c in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, jobs))
