"""Residual feed-forward network trained from scratch with numpy.

Architecture: linear input projection to ``hidden_size``, then
``n_hidden_layers`` residual blocks ``h <- h + dropout(relu(h W + b))``,
then a linear head with K outputs (classification) or one output
(regression). Classification minimizes mean cross-entropy, regression mean
squared error on standardized targets.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .core import ConfigError, Dataset, Predictions, ScreenloopError


class TrainingError(ScreenloopError, ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_hidden_layers: int = 2
    hidden_size: int = 512
    learning_rate: float = 0.001
    grad_norm_clip: float = 1.0
    dropout: float = 0.1
    max_epochs: int = 1000
    train_batch_size: int = 1024
    early_stop_patience: int = 50
    n_ensemble_members: int = 1
    optimizer: str = "sgd"
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("n_hidden_layers", "hidden_size", "max_epochs", "train_batch_size",
                     "early_stop_patience", "n_ensemble_members"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name}", "must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("model.learning_rate", "must be > 0")
        if self.grad_norm_clip <= 0:
            raise ConfigError("model.grad_norm_clip", "must be > 0")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("model.dropout", "must lie in [0, 1)")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("model.optimizer", "must be 'sgd' or 'adam'")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("model.dtype", "must be 'float32' or 'float64'")

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


# Per-dataset defaults from the original experiments: acquisition batch size and model settings.
PROFILES = {
    "mnist": (1000, ModelConfig(2, 512, 0.001, 1.0, 0.1, 1000, 1024, 50, 1)),
    "qm9": (250, ModelConfig(3, 512, 0.001, 1.0, 0.1, 1000, 1024, 50, 1)),
    "molecules3d": (10000, ModelConfig(2, 512, 0.001, 1.0, 0.1, 30, 32768, 15, 5)),
    "rxrx3": (10, ModelConfig(2, 512, 0.001, 1.0, 0.1, 30, 1024, 25, 1)),
    "phenomics": (1000, ModelConfig(2, 1024, 0.001, 1.0, 0.1, 1000, 1024, 25, 1)),
}


@dataclass(eq=False)
class Model:
    """Trained parameters plus the metadata needed to predict."""

    config: ModelConfig
    params: List[np.ndarray]
    n_inputs: int
    n_outputs: int
    n_classes: Optional[int]
    y_mean: float = 0.0
    y_std: float = 1.0
    epochs_run: int = 0
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    val_history: List[float] = field(default_factory=list)

    @property
    def is_classification(self) -> bool:
        return self.n_classes is not None


def init_params(rng, n_inputs, hidden, n_blocks, n_outputs, dtype="float64"):
    """Fan-in scaled uniform weights, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` for weights and biases."""
    shapes = [(n_inputs, hidden)] + [(hidden, hidden)] * n_blocks + [(hidden, n_outputs)]
    params = []
    for fan_in, fan_out in shapes:
        bound = 1.0 / np.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        params.append(rng.uniform(-bound, bound, size=fan_out).astype(dtype))
    return params


def forward(params, x, dropout=0.0, rng=None):
    """Return network outputs and the cache needed by :func:`backward`.

    Dropout masks are drawn from ``rng`` only when ``dropout > 0`` and an
    ``rng`` is supplied (training mode).
    """
    h = x @ params[0] + params[1]
    cache = [x]
    n_blocks = len(params) // 2 - 2
    for b in range(n_blocks):
        w, bias = params[2 + 2 * b], params[3 + 2 * b]
        z = h @ w + bias
        a = np.maximum(z, 0)
        mask = None
        if dropout > 0 and rng is not None:
            mask = (rng.random(a.shape) >= dropout).astype(a.dtype) / (1.0 - dropout)
            a = a * mask
        cache.append((h, z, mask))
        h = h + a
    out = h @ params[-2] + params[-1]
    cache.append(h)
    return out, cache


def backward(params, cache, dout):
    grads = [None] * len(params)
    h_last = cache[-1]
    grads[-2] = h_last.T @ dout
    grads[-1] = dout.sum(axis=0)
    dh = dout @ params[-2].T
    n_blocks = len(params) // 2 - 2
    for b in reversed(range(n_blocks)):
        h, z, mask = cache[1 + b]
        da = dh if mask is None else dh * mask
        dz = da * (z > 0)
        grads[2 + 2 * b] = h.T @ dz
        grads[3 + 2 * b] = dz.sum(axis=0)
        dh = dh + dz @ params[2 + 2 * b].T
    grads[0] = cache[0].T @ dh
    grads[1] = dh.sum(axis=0)
    return grads


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grads(params, x, y, classification: bool, dropout=0.0, rng=None):
    """Mean loss over the batch and its gradient for every parameter."""
    out, cache = forward(params, x, dropout, rng)
    n = x.shape[0]
    if classification:
        logp = _log_softmax(out)
        loss = -logp[np.arange(n), y].mean()
        dout = np.exp(logp)
        dout[np.arange(n), y] -= 1.0
        dout /= n
    else:
        resid = out[:, 0] - y
        loss = np.mean(resid ** 2)
        dout = (2.0 / n) * resid[:, None]
    return float(loss), backward(params, cache, dout.astype(out.dtype))


def _loss(params, x, y, classification, chunk=8192):
    total = 0.0
    for start in range(0, x.shape[0], chunk):
        out, _ = forward(params, x[start : start + chunk])
        yy = y[start : start + chunk]
        if classification:
            total -= _log_softmax(out.astype(np.float64))[np.arange(len(yy)), yy].sum()
        else:
            total += np.sum((out[:, 0].astype(np.float64) - yy) ** 2)
    return total / x.shape[0]


def clip_grad_norm(grads, max_norm):
    norm = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = [g * scale for g in grads]
    return grads, norm


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def _prepare_targets(ds: Dataset, model_like):
    if ds.is_classification:
        return ds.labels.astype(np.int64)
    return (ds.labels - model_like.y_mean) / model_like.y_std


def train(config: ModelConfig, train: Dataset, val: Dataset, seed, init: Optional[Model] = None) -> Model:
    """Fit a network on ``train`` with early stopping on ``val`` loss.

    Parameters
    ----------
    config : ModelConfig
        Architecture and optimization settings.
    train, val : Dataset
        Same task and feature width. Classification uses ``train.n_classes``
        outputs even if some classes are absent from ``train``.
    seed : int
        Seeds initialization, minibatch order and dropout masks; a fixed
        seed gives bit-identical parameters.
    init : Model, optional
        Warm start from these parameters instead of a fresh initialization.

    Returns
    -------
    Model
        Parameters from the epoch with the lowest validation loss.
    """
    if train is None or train.n_samples == 0:
        raise TrainingError("empty training set")
    if val is None or val.n_samples == 0:
        raise TrainingError("empty validation set")
    if train.n_features != val.n_features:
        raise TrainingError("train and val feature widths differ")
    classification = train.is_classification
    if classification and (train.n_classes is None or train.n_classes < 2):
        raise TrainingError("classification needs at least two classes")
    dtype = np.dtype(config.dtype)
    rng = np.random.default_rng(seed)

    n_out = train.n_classes if classification else 1
    model = Model(config, [], train.n_features, n_out, train.n_classes)
    if not classification:
        model.y_mean = float(train.labels.mean())
        std = float(train.labels.std())
        model.y_std = std if std > 0 else 1.0
    if init is not None:
        model.params = [p.astype(dtype, copy=True) for p in init.params]
    else:
        model.params = init_params(rng, train.n_features, config.hidden_size,
                                   config.n_hidden_layers, n_out, dtype)
    x = np.ascontiguousarray(train.features, dtype=dtype)
    y = _prepare_targets(train, model)
    xv = np.ascontiguousarray(val.features, dtype=dtype)
    yv = _prepare_targets(val, model)
    if not classification:
        y = y.astype(dtype)

    params = model.params
    adam = _Adam(params, config.learning_rate) if config.optimizer == "adam" else None
    best = [p.copy() for p in params]
    best_loss = _loss(params, xv, yv, classification)
    best_epoch, since_best = 0, 0
    history = []
    n = x.shape[0]
    bs = min(config.train_batch_size, n)
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start : start + bs]
            _, grads = loss_and_grads(params, x[idx], y[idx], classification, config.dropout, rng)
            grads, _ = clip_grad_norm(grads, config.grad_norm_clip)
            if adam is not None:
                adam.step(params, grads)
            else:
                for p, g in zip(params, grads):
                    p -= config.learning_rate * g
        val_loss = _loss(params, xv, yv, classification)
        history.append(val_loss)
        if val_loss < best_loss:
            best_loss, best_epoch, since_best = val_loss, epoch, 0
            best = [p.copy() for p in params]
        else:
            since_best += 1
            if since_best >= config.early_stop_patience:
                break
    model.params = best
    model.epochs_run = epoch
    model.best_epoch = best_epoch
    model.best_val_loss = float(best_loss)
    model.val_history = history
    return model


def _check_width(model: Model, features) -> np.ndarray:
    x = np.asarray(features)
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise TrainingError(f"feature width {x.shape[-1]} does not match model input {model.n_inputs}")
    return np.ascontiguousarray(x, dtype=model.params[0].dtype)


def _raw_outputs(model: Model, features, chunk=8192) -> np.ndarray:
    x = _check_width(model, features)
    outs = [forward(model.params, x[s : s + chunk])[0] for s in range(0, x.shape[0], chunk)]
    if not outs:
        return np.zeros((0, model.n_outputs))
    return np.concatenate(outs).astype(np.float64)


def predict_proba(model: Model, features) -> Predictions:
    """Softmax class probabilities (dropout off)."""
    if not model.is_classification:
        raise TrainingError("predict_proba needs a classification model")
    logits = _raw_outputs(model, features)
    return Predictions(probs=np.exp(_log_softmax(logits)))


def predict_values(model: Model, features) -> np.ndarray:
    """Regression outputs in the original target units."""
    if model.is_classification:
        raise TrainingError("predict_values needs a regression model")
    return _raw_outputs(model, features)[:, 0] * model.y_std + model.y_mean


def train_ensemble(config: ModelConfig, train_set: Dataset, val: Dataset, base_seed, init=None) -> List[Model]:
    """Independently trained members; member ``m`` uses seed ``base_seed + m``."""
    m = config.n_ensemble_members
    if m < 1:
        raise TrainingError("ensemble needs at least one member")
    inits = init if init is not None else [None] * m
    return [train(config, train_set, val, base_seed + i, init=inits[i]) for i in range(m)]


def predict_ensemble(ensemble: Sequence[Model], features) -> Predictions:
    """Combined predictions of an ensemble (a single model is an ensemble of one).

    Classification averages member probabilities and keeps the per-member
    stack; regression returns one column per member.
    """
    if len(ensemble) < 1:
        raise TrainingError("empty ensemble")
    if ensemble[0].is_classification:
        member = np.stack([predict_proba(m, features).probs for m in ensemble])
        return Predictions(probs=member.mean(axis=0), member_probs=member if len(ensemble) > 1 else None)
    return Predictions(member_values=np.stack([predict_values(m, features) for m in ensemble], axis=1))


def predict_regression(ensemble: Sequence[Model], features):
    """Per-sample mean and population variance across ensemble members."""
    preds = predict_ensemble(ensemble, features)
    if preds.is_classification:
        raise TrainingError("predict_regression needs regression models")
    return preds.mean, preds.variance


def save_model(model: Model, path) -> None:
    """Checkpoint as ``.npz``: parameters plus a JSON metadata record."""
    meta = {
        "format": "screenloop-model",
        "version": 1,
        "config": dataclasses.asdict(model.config),
        "n_inputs": model.n_inputs,
        "n_outputs": model.n_outputs,
        "n_classes": model.n_classes,
        "y_mean": model.y_mean,
        "y_std": model.y_std,
        "epochs_run": model.epochs_run,
        "best_epoch": model.best_epoch,
        "best_val_loss": model.best_val_loss,
        "val_history": model.val_history,
    }
    arrays = {f"p{i}": p for i, p in enumerate(model.params)}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_model(path) -> Model:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != "screenloop-model" or meta.get("version") != 1:
            raise TrainingError(f"{path}: not a version-1 screenloop model checkpoint")
        n_params = len([k for k in data.files if k.startswith("p")])
        params = [data[f"p{i}"] for i in range(n_params)]
    return Model(
        config=ModelConfig(**meta["config"]),
        params=params,
        n_inputs=meta["n_inputs"],
        n_outputs=meta["n_outputs"],
        n_classes=meta["n_classes"],
        y_mean=meta["y_mean"],
        y_std=meta["y_std"],
        epochs_run=meta["epochs_run"],
        best_epoch=meta["best_epoch"],
        best_val_loss=meta["best_val_loss"],
        val_history=list(meta["val_history"]),
    )
