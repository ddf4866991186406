"""Datasets: MNIST-style IDX files and seeded synthetic blobs."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BoundsError, ConsistencyError, IdxFormatError, IdxLengthError, InvalidInputError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Flattened feature vectors in ``[0, 1]`` with integer class labels."""

    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: str = "train"
    image_shape: tuple[int, ...] | None = None

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim == 1:
            images = images[:, None]
        if images.ndim != 2:
            raise InvalidInputError(f"images must be (n, features), got shape {images.shape}")
        if len(images) != len(labels):
            raise ConsistencyError(f"{len(images)} images but {len(labels)} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise InvalidInputError(f"labels must lie in [0, {self.n_classes})")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise InvalidInputError("features must lie in [0, 1]")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.images.shape[1]

    def take(self, index) -> "Dataset":
        return Dataset(self.images[index], self.labels[index], self.n_classes,
                       self.split, self.image_shape)


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, expected_magic: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise IdxLengthError(f"{path}: file too short for an IDX header ({len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(
            f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxLengthError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise IdxLengthError(
            f"{path}: expected {count} payload bytes, found {len(raw) - header}"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path, n_classes: int = 10, split: str = "train") -> Dataset:
    """Load an IDX image/label pair (optionally gzip-compressed).

    Pixel bytes are scaled by 1/255.
    """
    images = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}"
        )
    if labels.size and labels.max() >= n_classes:
        raise ConsistencyError(f"label {labels.max()} out of range for {n_classes} classes")
    return Dataset(
        images.reshape(images.shape[0], -1) / 255.0,
        labels.astype(np.int64),
        n_classes,
        split,
        tuple(int(d) for d in images.shape[1:]),
    )


def write_idx(dataset: Dataset, images_path, labels_path, compress: bool | None = None) -> None:
    """Write ``dataset`` as an IDX pair; gzip when the path ends in ``.gz``."""
    shape = dataset.image_shape or (dataset.n_features,)
    if len(shape) != 2:
        raise InvalidInputError(f"IDX image files need a 2-D image shape, got {shape}")
    pixels = np.rint(dataset.images * 255.0).astype(np.uint8)
    img = struct.pack(">IIII", IMAGES_MAGIC, len(dataset), *shape) + pixels.tobytes()
    lab = struct.pack(">II", LABELS_MAGIC, len(dataset)) + dataset.labels.astype(np.uint8).tobytes()
    for path, payload in ((images_path, img), (labels_path, lab)):
        zipped = str(path).endswith(".gz") if compress is None else compress
        if zipped:
            payload = gzip.compress(payload, mtime=0)
        Path(path).write_bytes(payload)


def synthetic_blobs(
    n_classes: int,
    dim: int,
    n_per_class: int,
    separation: float,
    seed: int,
    split: str = "train",
) -> Dataset:
    """Gaussian blobs with equidistant class means.

    Class means sit on scaled basis vectors (pairwise distance
    ``separation``) around the origin with unit within-class std; the
    points are then mapped into ``[0, 1]`` by a fixed affine map and
    clamped (clamping only touches points beyond ~4 std).
    """
    if n_classes < 1 or dim < 1 or n_per_class < 1:
        raise InvalidInputError("n_classes, dim and n_per_class must be positive")
    if separation < 0:
        raise InvalidInputError(f"separation must be >= 0, got {separation!r}")
    if n_classes > dim:
        raise InvalidInputError(f"cannot place {n_classes} equidistant means in {dim} dimensions")
    rng = np.random.default_rng(seed)
    means = np.zeros((n_classes, dim))
    means[np.arange(n_classes), np.arange(n_classes)] = separation / np.sqrt(2.0)
    means -= means.mean(axis=0)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    points = means[labels] + rng.standard_normal((len(labels), dim))
    half_width = separation / np.sqrt(2.0) + 4.0
    features = np.clip(0.5 + points / (2.0 * half_width), 0.0, 1.0)
    order = rng.permutation(len(labels))
    return Dataset(features[order], labels[order], n_classes, split)


def subset(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Seeded class-stratified sample of ``n`` items, in shuffled order."""
    if n < 0 or n > len(dataset):
        raise BoundsError(f"cannot draw {n} items from a dataset of {len(dataset)}")
    rng = np.random.default_rng(seed)
    by_class = [np.flatnonzero(dataset.labels == c) for c in range(dataset.n_classes)]
    available = np.array([len(ix) for ix in by_class])
    quota = np.zeros(dataset.n_classes, dtype=np.int64)
    remaining = n
    # Water-filling: equal shares, leftovers to a random subset of classes
    # that still have items.
    while remaining > 0:
        open_classes = np.flatnonzero(quota < available)
        share, extra = divmod(remaining, len(open_classes))
        grant = np.full(len(open_classes), share)
        grant[rng.permutation(len(open_classes))[:extra]] += 1
        grant = np.minimum(grant, available[open_classes] - quota[open_classes])
        quota[open_classes] += grant
        remaining -= int(grant.sum())
    chosen = [rng.choice(ix, size=q, replace=False) for ix, q in zip(by_class, quota) if q]
    picked = np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)
    return dataset.take(rng.permutation(picked))
