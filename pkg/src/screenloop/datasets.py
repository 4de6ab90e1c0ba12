"""Data ingestion, corruption transforms and target/validation/test splits."""

from __future__ import annotations

import csv
import math
import os
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, DatasetError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IDXFormatError(DatasetError):
    pass


class CSVParseError(DatasetError):
    pass


def _read_idx(path, expected_magic: int, ndim: int, kind: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 + 4 * ndim:
        raise IDXFormatError(f"{kind} file {path}: header truncated")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IDXFormatError(f"{kind} file {path}: bad magic number {magic:#010x}, expected {expected_magic:#010x}")
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    payload = raw[4 + 4 * ndim :]
    expected = int(np.prod(dims))
    if len(payload) != expected:
        raise IDXFormatError(f"{kind} file {path}: payload has {len(payload)} bytes, dims {dims} need {expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, n_classes: int = 10) -> Dataset:
    """Load an IDX image/label pair (the MNIST distribution format).

    Pixels are flattened row-major and scaled to [0, 1].
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3, "images")
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1, "labels")
    if images.shape[0] != labels.shape[0]:
        raise IDXFormatError(f"sample count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    n, rows, cols = images.shape
    features = images.reshape(n, rows * cols).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), n_classes=n_classes)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images ``(n, rows, cols)`` and labels ``(n,)`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def load_csv_features(
    path,
    label_column: str,
    feature_columns: Sequence[str],
    aux_columns: Sequence[str] = (),
    n_classes: Optional[int] = None,
) -> Dataset:
    """Read a headered CSV into a dataset.

    Aux columns made entirely of ``0``/``1`` strings are parsed as bit
    vectors (fingerprints); other aux columns are parsed as floats when
    possible and kept as strings otherwise. With ``n_classes=None`` the task
    is regression.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CSVParseError(f"{path}: empty file, header expected") from None
        rows = list(reader)
    index = {name: i for i, name in enumerate(header)}
    for col in [label_column, *feature_columns, *aux_columns]:
        if col not in index:
            raise CSVParseError(f"{path}: missing column {col!r}")
    if not rows:
        raise CSVParseError(f"{path}: no data rows")

    def cell_float(r, line, col):
        try:
            return float(r[index[col]])
        except (ValueError, IndexError):
            raise CSVParseError(f"{path}: row {line}, column {col!r}: not a number") from None

    features = np.array(
        [[cell_float(r, line, c) for c in feature_columns] for line, r in enumerate(rows, start=2)],
        dtype=np.float64,
    ).reshape(len(rows), len(feature_columns))
    labels = np.array([cell_float(r, line, label_column) for line, r in enumerate(rows, start=2)])
    if n_classes is not None:
        if not np.all(np.mod(labels, 1) == 0):
            raise CSVParseError(f"{path}: column {label_column!r} holds non-integer class labels")
        labels = labels.astype(np.int64)

    aux = {}
    for col in aux_columns:
        values = [r[index[col]] for r in rows]
        if all(v and set(v) <= {"0", "1"} for v in values) and len({len(v) for v in values}) == 1:
            aux[col] = np.array([[ch == "1" for ch in v] for v in values], dtype=bool)
        else:
            try:
                aux[col] = np.array([float(v) for v in values])
            except ValueError:
                aux[col] = np.array(values, dtype=object)
    return Dataset(features, labels, n_classes=n_classes, aux_columns=aux)


def crop_bottom(dataset: Dataset, image_height: int, image_width: int, keep_fraction: float) -> Dataset:
    """Zero every pixel row at or below ``ceil(height * keep_fraction)``."""
    if dataset.n_features != image_height * image_width:
        raise DatasetError(
            f"{dataset.n_features} features do not match a {image_height}x{image_width} image"
        )
    if not (0.0 < keep_fraction <= 1.0):
        raise DatasetError("keep_fraction must lie in (0, 1]")
    keep_rows = math.ceil(image_height * keep_fraction)
    images = dataset.features.reshape(-1, image_height, image_width).copy()
    images[:, keep_rows:, :] = 0.0
    return dataset.replace(features=images.reshape(dataset.n_samples, -1))


def shuffle_labels(dataset: Dataset, class_set: Sequence[int], seed) -> Dataset:
    """Replace labels of samples whose class is in ``class_set`` by uniform draws over all K classes.

    The replacement keeps the true label with probability 1/K. Samples
    outside ``class_set`` are untouched. The original labels are stored in
    the ``clean_label`` aux column and the affected samples are flagged in
    ``label_shuffled``.
    """
    k = dataset.n_classes
    if k is None:
        raise DatasetError("shuffle_labels needs a classification dataset")
    class_set = sorted({int(c) for c in class_set})
    if any(c < 0 or c >= k for c in class_set):
        raise DatasetError(f"class_set {class_set} outside 0..{k - 1}")
    clean = dataset.aux_columns.get("clean_label", dataset.labels)
    # membership is judged on the clean label so repeated application stays consistent
    affected = np.isin(clean, class_set)
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, k, size=dataset.n_samples)
    labels = np.where(affected, draws, dataset.labels)
    aux = dict(dataset.aux_columns)
    aux["clean_label"] = np.asarray(clean).copy()
    aux["label_shuffled"] = affected | aux.get("label_shuffled", np.zeros(dataset.n_samples, dtype=bool))
    return dataset.replace(labels=labels, aux_columns=aux)


def discretize_median(values) -> np.ndarray:
    """Two balanced classes: 1 where the value exceeds the median, else 0."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size < 2:
        raise DatasetError("need at least two values")
    if not np.all(np.isfinite(values)):
        raise DatasetError("values must be finite")
    return (values > np.median(values)).astype(np.int64)


@dataclass(frozen=True)
class SplitSpec:
    """Either fractions summing to one or explicit disjoint id lists."""

    target_fraction: Optional[float] = None
    val_fraction: Optional[float] = None
    test_fraction: Optional[float] = None
    target_ids: Optional[Sequence[int]] = None
    val_ids: Optional[Sequence[int]] = None
    test_ids: Optional[Sequence[int]] = None
    split_seed: int = 0

    @property
    def explicit(self) -> bool:
        return self.target_ids is not None


def split_dataset(dataset: Dataset, spec: SplitSpec):
    """Return ``(target, val, test)`` as disjoint subsets covering ``dataset``.

    With fractions, a seeded permutation is cut into consecutive blocks of
    sizes ``floor(f * n)`` (target absorbs the rounding remainder). Each
    part gets fresh dense ids.
    """
    n = dataset.n_samples
    if spec.explicit:
        parts = [np.asarray(p if p is not None else [], dtype=np.int64)
                 for p in (spec.target_ids, spec.val_ids, spec.test_ids)]
        ids = np.concatenate(parts)
        if len(np.unique(ids)) != len(ids):
            raise DatasetError("explicit split id lists overlap or contain duplicates")
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise DatasetError("explicit split ids out of range")
    else:
        fracs = [spec.target_fraction, spec.val_fraction, spec.test_fraction]
        if any(f is None or f < 0 for f in fracs):
            raise DatasetError("split fractions must be given and non-negative")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise DatasetError(f"split fractions sum to {sum(fracs)}, expected 1")
        n_val = int(math.floor(fracs[1] * n + 1e-9))
        n_test = int(math.floor(fracs[2] * n + 1e-9))
        perm = np.random.default_rng(spec.split_seed).permutation(n)
        parts = [perm[: n - n_val - n_test], perm[n - n_val - n_test : n - n_test], perm[n - n_test :]]
    names = ("target", "val", "test")
    return tuple(
        dataset.subset(p, name=f"{dataset.name}:{nm}" if dataset.name else nm) if len(p) else None
        for p, nm in zip(parts, names)
    )


def load_mnist_sample(data_dir: Optional[str] = None) -> Dataset:
    """MNIST images as a dataset.

    If ``data_dir`` (or the ``SCREENLOOP_MNIST_DIR`` environment variable)
    points at the four standard IDX files, the 60k training set is loaded.
    Otherwise the 5000-image MNIST subset shipped with ``mlxtend`` is used
    (500 per digit).
    """
    data_dir = data_dir or os.environ.get("SCREENLOOP_MNIST_DIR")
    if data_dir:
        return load_idx(
            os.path.join(data_dir, "train-images-idx3-ubyte"),
            os.path.join(data_dir, "train-labels-idx1-ubyte"),
        ).replace(name="mnist")
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise DatasetError(
            "no MNIST source: set SCREENLOOP_MNIST_DIR to IDX files or install mlxtend"
        ) from exc
    x, y = mnist_data()
    return Dataset(x / 255.0, y.astype(np.int64), n_classes=10, name="mnist")
