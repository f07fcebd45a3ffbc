"""Dataset ingestion, deterministic subsetting, augmentation, and batching.

Supported on-disk formats:

* CIFAR-10 binary batches: ``data_batch_1.bin`` .. ``data_batch_5.bin`` plus
  ``test_batch.bin``, each exactly 10000 records of 3073 bytes (1 label byte,
  then 1024 red, 1024 green, 1024 blue pixel bytes, row-major).
* IDX (MNIST): big-endian magic 0x00000803 for images / 0x00000801 for labels,
  big-endian dimension words, then raw unsigned bytes.

Loaders are bit-deterministic: the same files always produce identical
tensors. Images load as float32 scaled to [0, 1]; per-channel standardization
is a separate, recorded step.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataFormatError

CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"
CIFAR_RECORD_BYTES = 3073
CIFAR_RECORDS_PER_FILE = 10000

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32
    labels: np.ndarray  # (N,) int64
    class_count: int
    name: str
    channel_mean: np.ndarray | None = None  # set once standardization is applied
    channel_std: np.ndarray | None = None

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataFormatError(
                f"{self.name}: {self.images.shape[0]} images vs {self.labels.shape[0]} labels"
            )
        if self.labels.size and int(self.labels.max()) >= self.class_count:
            raise DataFormatError(
                f"{self.name}: label {int(self.labels.max())} out of range "
                f"for {self.class_count} classes"
            )


def _read_file(path, expected_bytes=None):
    if not os.path.isfile(path):
        raise DataFormatError(f"missing dataset file: {path}")
    with open(path, "rb") as f:
        buf = f.read()
    if expected_bytes is not None and len(buf) != expected_bytes:
        raise DataFormatError(
            f"{path}: expected {expected_bytes} bytes, found {len(buf)}"
        )
    return buf


def _cifar_records(buf):
    rec = np.frombuffer(buf, dtype=np.uint8).reshape(CIFAR_RECORDS_PER_FILE,
                                                     CIFAR_RECORD_BYTES)
    labels = rec[:, 0].astype(np.int64)
    images = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels


def load_cifar10(directory) -> tuple[Dataset, Dataset]:
    """Load the standard 50000/10000 CIFAR-10 split from binary batch files."""
    expected = CIFAR_RECORD_BYTES * CIFAR_RECORDS_PER_FILE
    train_imgs, train_labels = [], []
    for fname in CIFAR_TRAIN_FILES:
        imgs, labels = _cifar_records(_read_file(os.path.join(directory, fname), expected))
        train_imgs.append(imgs)
        train_labels.append(labels)
    test_imgs, test_labels = _cifar_records(
        _read_file(os.path.join(directory, CIFAR_TEST_FILE), expected))
    train = Dataset(np.concatenate(train_imgs), np.concatenate(train_labels),
                    10, "cifar10-train")
    test = Dataset(test_imgs, test_labels, 10, "cifar10-test")
    return train, test


def _read_idx(path, expected_magic, what):
    buf = _read_file(path)
    if len(buf) < 8:
        raise DataFormatError(f"{path}: too short for an IDX header")
    magic = int.from_bytes(buf[0:4], "big")
    if magic != expected_magic:
        raise DataFormatError(
            f"{path}: bad IDX magic 0x{magic:08x} for {what} "
            f"(expected 0x{expected_magic:08x})"
        )
    ndim = buf[3]
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise DataFormatError(f"{path}: truncated IDX dimension header")
    dims = [int.from_bytes(buf[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim)]
    count = int(np.prod(dims)) if dims else 0
    if len(buf) != header + count:
        raise DataFormatError(
            f"{path}: expected {header + count} bytes for dims {dims}, found {len(buf)}"
        )
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def _load_idx_pair(directory, images_file, labels_file, name):
    raw = _read_idx(os.path.join(directory, images_file), IDX_IMAGES_MAGIC, "images")
    labels = _read_idx(os.path.join(directory, labels_file), IDX_LABELS_MAGIC, "labels")
    if raw.ndim != 3:
        raise DataFormatError(f"{images_file}: expected 3-D image data, got {raw.ndim}-D")
    if labels.ndim != 1 or labels.shape[0] != raw.shape[0]:
        raise DataFormatError(
            f"{labels_file}: {labels.shape} labels for {raw.shape[0]} images"
        )
    images = raw.astype(np.float32)[:, None, :, :] / 255.0
    return Dataset(images, labels.astype(np.int64), 10, name)


def load_mnist_idx(directory) -> tuple[Dataset, Dataset]:
    """Load IDX-format train/test files (N, 1, 28, 28)."""
    train = _load_idx_pair(directory, "train-images-idx3-ubyte",
                           "train-labels-idx1-ubyte", "mnist-train")
    test = _load_idx_pair(directory, "t10k-images-idx3-ubyte",
                          "t10k-labels-idx1-ubyte", "mnist-test")
    return train, test


def standardize_channels(ds: Dataset, mean=None, std=None) -> Dataset:
    """Per-channel (x - mean) / std; stats default to the dataset's own."""
    if mean is None:
        mean = ds.images.mean(axis=(0, 2, 3))
    if std is None:
        std = ds.images.std(axis=(0, 2, 3))
    mean = np.asarray(mean, dtype=np.float32)
    std = np.asarray(std, dtype=np.float32)
    std = np.where(std > 0, std, 1.0).astype(np.float32)
    images = (ds.images - mean[:, None, None]) / std[:, None, None]
    return replace(ds, images=images, channel_mean=mean, channel_std=std)


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Integer translate one (C, H, W) image, zero-filling vacated pixels."""
    c, h, w = img.shape
    out = np.zeros_like(img)
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[:, ys, xs] = img[:, ys_src, xs_src]
    return out


def _hflip(img: np.ndarray) -> np.ndarray:
    return img[:, :, ::-1]


def augment(images: np.ndarray, rng: np.random.Generator, hflip: bool = True,
            shift_frac: float = 0.1) -> np.ndarray:
    """Per-image horizontal flip (p=0.5) and uniform integer shift, zero-filled.

    Shift range is +/- floor(shift_frac * side) pixels per axis. Draw order per
    image is fixed (flip, then dy, then dx), so results are deterministic for
    a given generator state.
    """
    if not 0 <= shift_frac < 1:
        raise ValueError(f"shift_frac must lie in [0, 1), got {shift_frac}")
    out = images.copy()
    h, w = images.shape[2], images.shape[3]
    mh, mw = int(shift_frac * h), int(shift_frac * w)
    for i in range(images.shape[0]):
        img = out[i]
        if hflip and rng.random() < 0.5:
            img = _hflip(img)
        if mh or mw:
            dy = int(rng.integers(-mh, mh + 1)) if mh else 0
            dx = int(rng.integers(-mw, mw + 1)) if mw else 0
            if dy or dx:
                img = _shift(img, dy, dx)
        out[i] = img
    return out


def subset(ds: Dataset, n_per_class: int, seed: int) -> Dataset:
    """Class-balanced random subset: exactly n_per_class of each class."""
    if n_per_class < 0:
        raise ValueError("n_per_class must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    picks = []
    for c in range(ds.class_count):
        idx = np.flatnonzero(ds.labels == c)
        if n_per_class > idx.size:
            raise ValueError(
                f"{ds.name}: requested {n_per_class} samples of class {c}, "
                f"only {idx.size} available"
            )
        picks.append(rng.permutation(idx)[:n_per_class])
    order = np.concatenate(picks) if picks else np.zeros(0, dtype=np.int64)
    return replace(ds, images=ds.images[order], labels=ds.labels[order],
                   name=f"{ds.name}-subset{n_per_class}")


def batches(ds: Dataset, batch_size: int, shuffle_seed: int | None = None):
    """Yield (images, labels) batches; the last short batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = ds.images.shape[0]
    if shuffle_seed is None:
        order = np.arange(n)
    else:
        order = np.random.default_rng(
            np.random.SeedSequence([shuffle_seed])).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield ds.images[idx], ds.labels[idx]


def synth_classification(n: int, classes: int, shape: tuple[int, int, int],
                         rng: np.random.Generator, separable: bool = True) -> Dataset:
    """Class-conditional Gaussian blobs in image form, clipped to [0, 1].

    With separable=True the class means are far apart relative to the noise,
    so a linear probe on the flattened pixels reaches 100% train accuracy.
    """
    c, h, w = shape
    means = rng.uniform(0.2, 0.8, size=(classes, c, h, w)).astype(np.float32)
    noise_std = 0.04 if separable else 0.35
    labels = (np.arange(n) % classes).astype(np.int64)
    noise = rng.normal(0.0, noise_std, size=(n, c, h, w)).astype(np.float32)
    images = np.clip(means[labels] + noise, 0.0, 1.0)
    return Dataset(images, labels, classes, "synthetic")
