"""Datasets: CIFAR-10 binary batches, synthetic blob images, stratified subsets."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError, ValidationError

RECORD = 1 + 3 * 32 * 32
TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
TEST_FILE = "test_batch.bin"
CIFAR_HELP = ("CIFAR-10 binary files not found in {dir}. Download cifar-10-binary.tar.gz from "
              "https://www.cs.toronto.edu/~kriz/cifar.html, extract it, and pass the directory "
              "holding data_batch_1.bin ... test_batch.bin (or use --data synthetic).")


class DataMissingError(FileNotFoundError):
    pass


@dataclass
class LabeledDataset:
    images: np.ndarray   # (N, C, H, W) float64 in [0, 1]
    labels: np.ndarray   # (N,) int64
    num_classes: int = 10

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise ValidationError(f"images {self.images.shape} and labels {self.labels.shape} disagree")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValidationError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self):
        return self.images.shape[1:]

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.images[idx], self.labels[idx], self.num_classes)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)

    def checksum(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()


def parse_cifar_batch(raw: bytes, name="<bytes>"):
    if len(raw) % RECORD:
        raise FormatError(f"{name}: {len(raw)} bytes is not a multiple of the {RECORD}-byte record")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD)
    labels = rec[:, 0].astype(np.int64)
    if np.any(labels > 9):
        raise FormatError(f"{name}: label byte {int(labels.max())} > 9")
    images = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return LabeledDataset(images, labels, 10)


def load_cifar_batch(path):
    path = Path(path)
    return parse_cifar_batch(path.read_bytes(), str(path))


def write_cifar_batch(path, ds: LabeledDataset):
    """Write in the CIFAR-10 binary record layout (pixels rounded to bytes)."""
    if ds.shape != (3, 32, 32) or ds.num_classes > 10:
        raise ValidationError(f"CIFAR records hold 3x32x32 images with labels < 10, got {ds.shape}")
    pix = np.clip(np.rint(ds.images * 255.0), 0, 255).astype(np.uint8).reshape(len(ds), -1)
    rec = np.concatenate([ds.labels.astype(np.uint8)[:, None], pix], axis=1)
    Path(path).write_bytes(rec.tobytes())


def concat(parts):
    return LabeledDataset(np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]),
                          parts[0].num_classes)


def load_cifar10(directory):
    """(train, test) from the standard binary batches."""
    d = Path(directory)
    missing = [f for f in TRAIN_FILES + [TEST_FILE] if not (d / f).is_file()]
    if missing:
        raise DataMissingError(CIFAR_HELP.format(dir=d))
    train = concat([load_cifar_batch(d / f) for f in TRAIN_FILES])
    return train, load_cifar_batch(d / TEST_FILE)


def _prototypes(rng, classes, shape, blobs=3):
    c, h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    protos = np.empty((classes,) + tuple(shape))
    for k in range(classes):
        img = np.zeros(shape)
        for _ in range(blobs):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            width = rng.uniform(0.15, 0.35) * max(h, w)
            bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
            img += rng.uniform(-1, 1, size=c)[:, None, None] * bump
        protos[k] = img
    lo, hi = protos.min(), protos.max()
    return (protos - lo) / (hi - lo)


def make_synthetic(classes=10, n_per_class=100, shape=(3, 8, 8), seed=0, noise=0.1):
    """Class-conditional Gaussian-blob images: fixed prototype per class plus pixel noise.

    Samples are interleaved by class and clipped to [0, 1]; ``noise`` is the
    pixel standard deviation (small = high SNR).
    """
    if classes < 2:
        raise ParameterError("need at least two classes")
    if noise < 0 or n_per_class < 0:
        raise ParameterError("noise and n_per_class must be non-negative")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=int(seed), spawn_key=(0xDA7A,))))
    protos = _prototypes(rng, classes, tuple(shape))
    labels = np.tile(np.arange(classes), n_per_class)
    images = protos[labels] + noise * rng.standard_normal((len(labels),) + tuple(shape))
    return LabeledDataset(np.clip(images, 0.0, 1.0), labels, classes)


def _stratified_order(labels, num_classes, seed):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=int(seed), spawn_key=(0x5B5E7,))))
    pools = [rng.permutation(np.flatnonzero(labels == k)) for k in range(num_classes)]
    order = []
    depth = max((len(p) for p in pools), default=0)
    for i in range(depth):
        order.extend(int(p[i]) for p in pools if i < len(p))
    return np.asarray(order, dtype=np.int64)


def subset(ds: LabeledDataset, n: int, seed=0) -> LabeledDataset:
    """Deterministic class-stratified sample of ``n`` items (round robin over shuffled classes)."""
    if n < 0 or n > len(ds):
        raise ParameterError(f"cannot take {n} samples from {len(ds)}")
    return ds.take(_stratified_order(ds.labels, ds.num_classes, seed)[:n])


def stratified_split(ds: LabeledDataset, fraction=0.1, seed=0):
    """(rest, held_out) with ``round(fraction * N)`` stratified samples held out."""
    if not 0.0 <= fraction < 1.0:
        raise ParameterError("fraction must lie in [0, 1)")
    k = int(round(fraction * len(ds)))
    order = _stratified_order(ds.labels, ds.num_classes, seed)
    held = np.sort(order[:k])
    rest = np.setdiff1d(np.arange(len(ds)), held)
    return ds.take(rest), ds.take(held)


def synthetic_split(n_train=5000, n_test=1000, classes=10, shape=(3, 8, 8), seed=0, noise=0.4):
    """Train/test sets sharing class prototypes but with independent noise draws."""
    per = -(-(n_train + n_test) // classes)
    full = make_synthetic(classes, per, shape, seed, noise)
    return full.take(np.arange(n_train)), full.take(np.arange(n_train, n_train + n_test))
