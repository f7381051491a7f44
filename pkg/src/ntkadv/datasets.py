"""Synthetic and file-based classification datasets with signed or one-hot labels."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, ParameterError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class Encoding(enum.Enum):
    SIGNED_BINARY = "signed_binary"
    ONE_HOT = "one_hot"


class Normalization(enum.Enum):
    NONE = "none"
    UNIT_NORM = "unit_norm"
    PIXEL_SCALE = "pixel_scale"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Labeled inputs: rows of `inputs` are examples, `labels` are class indices.

    Binary tasks (num_classes == 2) are encoded SIGNED_BINARY with class 0 mapped
    to -1 and class 1 to +1; everything else is ONE_HOT. `image_shape` is set when
    rows are flattened H*W images.
    """

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    encoding: Encoding
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2:
            raise ParameterError("inputs must be a 2-d array of example rows")
        if labels.shape != (inputs.shape[0],):
            raise ParameterError("labels must be a vector aligned with input rows")
        if self.num_classes < 2:
            raise ParameterError("num_classes must be at least 2")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ParameterError("label indices must lie in [0, num_classes)")
        if self.encoding is Encoding.SIGNED_BINARY and self.num_classes != 2:
            raise ParameterError("SIGNED_BINARY encoding requires exactly 2 classes")
        if not np.all(np.isfinite(inputs)):
            raise ParameterError("all input rows must be finite")
        object.__setattr__(self, "inputs", _frozen(inputs))
        object.__setattr__(self, "labels", _frozen(labels))

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes,
                       self.encoding, self.image_shape)

    def with_inputs(self, inputs: np.ndarray) -> "Dataset":
        return Dataset(inputs, self.labels, self.num_classes, self.encoding,
                       self.image_shape)


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic train/validation split; both splits stay class-balanced."""

    train_fraction: float
    seed: int
    normalize: Normalization = Normalization.NONE

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ParameterError("train_fraction must lie strictly in (0, 1)")
        if self.seed < 0:
            raise ParameterError("seed must be a nonnegative integer")


def generate_gaussian_blobs(n: int, d: int, k: int, separation: float,
                            seed: int) -> Dataset:
    """Balanced Gaussian blobs with unit-variance noise around fixed class means.

    Binary tasks put the means at ±separation·e0 (so the means are 2·separation
    apart); k >= 3 uses separation·e_c for the first k basis vectors.
    """
    if n < k or d < 1 or k < 2:
        raise ParameterError(f"need n >= k >= 2 and d >= 1, got n={n} k={k} d={d}")
    if separation <= 0:
        raise ParameterError("separation must be positive")
    if k > 2 and k > d:
        raise ParameterError(f"k={k} distinct basis means need d >= k, got d={d}")
    means = np.zeros((k, d))
    if k == 2:
        means[0, 0] = -separation
        means[1, 0] = separation
    else:
        for c in range(k):
            means[c, c] = separation
    counts = [n // k + (1 if c < n % k else 0) for c in range(k)]
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    for c in range(k):
        rows.append(means[c] + rng.standard_normal((counts[c], d)))
        labels.extend([c] * counts[c])
    encoding = Encoding.SIGNED_BINARY if k == 2 else Encoding.ONE_HOT
    return Dataset(np.vstack(rows), np.array(labels), k, encoding)


def _read_idx(path, expected_magic: int, ndim: int):
    with open(path, "rb") as f:
        raw = f.read()
    header = 4 * (1 + ndim)
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise DataFormatError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    body = raw[header:]
    if len(body) < count:
        raise DataFormatError(f"{path}: expected {count} payload bytes, "
                              f"found {len(body)}")
    return dims, np.frombuffer(body[:count], dtype=np.uint8)


def load_idx_images(image_path, label_path, limit: int | None = None,
                    classes: list[int] | None = None) -> Dataset:
    """Load an IDX image/label file pair (big-endian, u8 payload).

    Pixels are scaled to [0, 1]; `classes` keeps only those labels and remaps
    them to contiguous indices; `limit` truncates after filtering.
    """
    (n_img, height, width), pixels = _read_idx(image_path, IDX_IMAGE_MAGIC, 3)
    (n_lab,), labels = _read_idx(label_path, IDX_LABEL_MAGIC, 1)
    if n_img != n_lab:
        raise DataFormatError(
            f"image/label count mismatch: {n_img} images vs {n_lab} labels")
    inputs = pixels.reshape(n_img, height * width).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if classes is not None:
        kept = sorted(set(int(c) for c in classes))
        if len(kept) < 2:
            raise ParameterError("need at least 2 classes to form a dataset")
        mask = np.isin(labels, kept)
        inputs, labels = inputs[mask], labels[mask]
        remap = {c: i for i, c in enumerate(kept)}
        labels = np.array([remap[int(c)] for c in labels], dtype=np.int64)
        k = len(kept)
    else:
        k = int(labels.max()) + 1 if labels.size else 2
        k = max(k, 2)
    if limit is not None:
        inputs, labels = inputs[:limit], labels[:limit]
    encoding = Encoding.SIGNED_BINARY if k == 2 else Encoding.ONE_HOT
    return Dataset(inputs, labels, k, encoding, image_shape=(height, width))


def label_matrix(ds: Dataset) -> np.ndarray:
    """Signed (n,) vector in {-1,+1} for binary datasets, (n,k) one-hot otherwise."""
    if ds.encoding is Encoding.SIGNED_BINARY:
        return (2 * ds.labels - 1).astype(np.float64)
    out = np.zeros((ds.n, ds.num_classes))
    if ds.n:
        out[np.arange(ds.n), ds.labels] = 1.0
    return out


def decode_labels(values: np.ndarray, encoding: Encoding) -> np.ndarray:
    """Inverse of label_matrix: sign (binary) or argmax (one-hot) to class indices."""
    values = np.asarray(values)
    if encoding is Encoding.SIGNED_BINARY:
        return (values > 0).astype(np.int64)
    return np.argmax(values, axis=-1).astype(np.int64)


def normalize_inputs(ds: Dataset, mode: Normalization) -> Dataset:
    if mode is Normalization.NONE:
        return ds
    if mode is Normalization.PIXEL_SCALE:
        return ds.with_inputs(ds.inputs / 255.0)
    norms = np.linalg.norm(ds.inputs, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ParameterError(f"cannot unit-normalize all-zero rows {zero.tolist()}")
    return ds.with_inputs(ds.inputs / norms[:, None])


def split_dataset(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Class-balanced split, deterministic per seed; normalization applies to both."""
    ds = normalize_inputs(ds, spec.normalize)
    rng = np.random.default_rng(spec.seed)
    train_idx, val_idx = [], []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        rng.shuffle(idx)
        cut = int(round(spec.train_fraction * idx.size))
        train_idx.extend(idx[:cut])
        val_idx.extend(idx[cut:])
    return ds.subset(np.array(train_idx, dtype=np.int64)), \
        ds.subset(np.array(val_idx, dtype=np.int64))


def save_csv(ds: Dataset, path) -> None:
    """Write `x0..x{d-1},label` rows; floats use shortest round-trip repr."""
    with open(path, "w") as f:
        f.write(",".join([f"x{j}" for j in range(ds.d)] + ["label"]) + "\n")
        for row, lab in zip(ds.inputs, ds.labels):
            f.write(",".join(repr(float(v)) for v in row) + f",{int(lab)}\n")
