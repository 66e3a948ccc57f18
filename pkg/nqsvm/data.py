"""Dataset ingestion: IDX files, binary tasks, validation splits, synthetic arcs."""

from __future__ import annotations

import gzip
import math
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DEBUG
from .errors import ConfigError, FormatError, InputError

# The image files have the following format (big-endian):
#   [offset] [type]          [value]          [description]
#   0000     32 bit integer  0x00000803(2051) magic number
#   0004     32 bit integer  60000            number of images
#   0008     32 bit integer  28               number of rows
#   0012     32 bit integer  28               number of columns
#   0016     unsigned byte   ??               pixel
# Label files use magic 0x00000801 and a single count dimension.
IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"


@dataclass
class Dataset:
    """Inputs with labels in {-1, +1}."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise InputError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if not np.all(np.isin(self.labels, (-1, 1))):
            raise InputError("Labels must be -1 or +1")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def m(self) -> int:
        return len(self.labels)

    def class_counts(self) -> dict:
        return {"+1": int(np.sum(self.labels == 1)), "-1": int(np.sum(self.labels == -1))}

    def require_trainable(self):
        """Training needs at least two samples and both labels."""
        if self.m < 2:
            raise InputError(f"Training needs at least 2 samples, got {self.m}")
        if set(np.unique(self.labels).tolist()) != {-1, 1}:
            raise InputError("Training needs both labels -1 and +1 to be present")

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[indices], self.labels[indices])

    def flipped(self) -> "Dataset":
        return Dataset(self.inputs, -self.labels)


@dataclass(frozen=True)
class BinaryTask:
    """Which two source classes map to +1 and -1."""

    positive_class: int
    negative_class: int

    def __post_init__(self):
        if self.positive_class == self.negative_class:
            raise ConfigError("Binary task needs two distinct classes")

    def swapped(self) -> "BinaryTask":
        return BinaryTask(self.negative_class, self.positive_class)


MNIST_ZERO_ONE = BinaryTask(positive_class=1, negative_class=0)
# Fashion-MNIST label map: 2 = pullover, 5 = sandal
FASHION_PULLOVER_SANDAL = BinaryTask(positive_class=2, negative_class=5)


def _read_idx(path, expected_magic: int, ndim: int) -> tuple:
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == GZIP_MAGIC:
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as e:
            raise FormatError(f"{path}: corrupt gzip stream: {e}") from e

    header_size = 4 + 4 * ndim
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated magic number at offset 0")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(
            f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}"
        )
    if len(raw) < header_size:
        raise FormatError(f"{path}: truncated header at offset {len(raw)}, need {header_size} bytes")
    dims = struct.unpack(f">{ndim}I", raw[4:header_size])

    expected = math.prod(dims)
    payload = raw[header_size:]
    if len(payload) < expected:
        raise FormatError(
            f"{path}: truncated payload at offset {len(raw)}, "
            f"dims {dims} need {expected} bytes after offset {header_size}"
        )
    if len(payload) > expected:
        raise FormatError(
            f"{path}: {len(payload) - expected} unexpected bytes at offset {header_size + expected}"
        )
    return dims, np.frombuffer(payload, dtype=np.uint8)


def load_idx_images(path) -> np.ndarray:
    """Images as float64 in [0, 1], shape (count, rows, cols)."""
    dims, payload = _read_idx(path, IMAGES_MAGIC, 3)
    images = payload.reshape(dims).astype(np.float64) / 255.0
    if DEBUG:
        print(f"[Data] {dims[0]} images of {dims[1]}x{dims[2]} loaded from {path}", file=sys.stderr)
    return images


def load_idx_labels(path) -> np.ndarray:
    """Source class labels as int64."""
    dims, payload = _read_idx(path, LABELS_MAGIC, 1)
    if DEBUG:
        print(f"[Data] {dims[0]} labels loaded from {path}", file=sys.stderr)
    return payload.astype(np.int64)


def _write_idx(path, magic: int, array: np.ndarray):
    path = Path(path)
    header = struct.pack(f">I{array.ndim}I", magic, *array.shape)
    raw = header + np.ascontiguousarray(array, dtype=np.uint8).tobytes()
    if path.suffix == ".gz":
        raw = gzip.compress(raw, mtime=0)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(raw)


def write_idx_images(path, images):
    """Write images (uint8, or floats in [0, 1] scaled by 255) as an IDX file."""
    images = np.asarray(images)
    if images.ndim != 3:
        raise InputError(f"Images must have shape (count, rows, cols), got {images.shape}")
    if images.dtype != np.uint8:
        images = np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)
    _write_idx(path, IMAGES_MAGIC, images)


def write_idx_labels(path, labels):
    """Write source class labels (0..255) as an IDX file."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise InputError(f"Labels must be one-dimensional, got shape {labels.shape}")
    _write_idx(path, LABELS_MAGIC, labels.astype(np.uint8))


def make_binary(images, labels, task: BinaryTask) -> Dataset:
    """Keep the task's two classes, in order, mapped to +1 / -1."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if len(images) != len(labels):
        raise InputError(f"{len(images)} images but {len(labels)} labels")
    positive = labels == task.positive_class
    negative = labels == task.negative_class
    if not positive.any():
        raise InputError(f"Class {task.positive_class} is absent")
    if not negative.any():
        raise InputError(f"Class {task.negative_class} is absent")
    keep = positive | negative
    return Dataset(images[keep], np.where(positive[keep], 1, -1))


def split_validation(dataset: Dataset, per_class: int, seed: int) -> tuple:
    """Stratified split: ``per_class`` samples of each label go to validation."""
    if per_class < 0:
        raise InputError("per_class must be nonnegative")
    rng = np.random.default_rng(seed)
    chosen = []
    for label in (1, -1):
        candidates = np.flatnonzero(dataset.labels == label)
        if len(candidates) < per_class:
            raise InputError(
                f"Cannot take {per_class} validation samples of label {label:+d}: only {len(candidates)}"
            )
        chosen.append(rng.choice(candidates, size=per_class, replace=False))
    validation_idx = np.sort(np.concatenate(chosen))
    in_validation = np.zeros(dataset.m, dtype=bool)
    in_validation[validation_idx] = True
    return dataset.subset(np.flatnonzero(~in_validation)), dataset.subset(validation_idx)


def synthetic_two_arcs(count: int, noise: float, seed: int) -> Dataset:
    """Two interleaved half circles in R^2.

    +1 lies on the upper unit half circle around (0, 0), -1 on the lower one
    around (1, 0); without noise the arcs are at distance 1 from each other.
    """
    if count < 2:
        raise InputError("synthetic_two_arcs needs count >= 2")
    rng = np.random.default_rng(seed)
    n_pos = (count + 1) // 2
    n_neg = count // 2
    t = rng.uniform(0.0, math.pi, n_pos)
    s = rng.uniform(0.0, math.pi, n_neg)
    upper = np.stack([np.cos(t), np.sin(t)], axis=1)
    lower = np.stack([1.0 - np.cos(s), -np.sin(s)], axis=1)
    points = np.concatenate([upper, lower]) + noise * rng.standard_normal((count, 2))
    labels = np.concatenate([np.ones(n_pos, dtype=np.int64), -np.ones(n_neg, dtype=np.int64)])
    order = rng.permutation(count)
    return Dataset(points[order], labels[order])
