"""Shared fixtures: synthetic dataset files in the exact on-disk formats."""

import os
import struct

import numpy as np
import pytest

from ncconv.data import (CIFAR_RECORD_BYTES, CIFAR_RECORDS_PER_FILE,
                         CIFAR_TEST_FILE, CIFAR_TRAIN_FILES)


def make_class_patterns(classes, rng, hw=32, channels=3):
    """Low-frequency class prototypes (coarse grid upsampled), so they stay
    recognizable under the flip/shift augmentations real photos tolerate."""
    coarse = max(hw // 4, 1)
    lowres = rng.uniform(0.15, 0.85, size=(classes, channels, coarse, coarse))
    reps = hw // coarse
    return np.kron(lowres, np.ones((1, 1, reps, reps)))[:, :, :hw, :hw].astype(np.float32)


def make_blob_images(n, classes, rng, hw=32, channels=3, noise=0.06, means=None):
    """Class-conditional blob images as uint8, easy enough to learn quickly.

    Labels are a shuffled balanced assignment so per-class subsetting works.
    """
    if means is None:
        means = make_class_patterns(classes, rng, hw, channels)
    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    imgs = means[labels] + rng.normal(0.0, noise, size=(n, channels, hw, hw)).astype(np.float32)
    return (np.clip(imgs, 0.0, 1.0) * 255).astype(np.uint8), labels


def write_cifar10_dir(directory, seed=1234):
    """Write a full-size, format-exact CIFAR-10 binary directory with synthetic
    class-conditional content. One shared prototype set covers all six files
    (so train and test draw from the same classes). Record 0 of
    data_batch_1.bin gets label 6 on purpose (handy for direct-read asserts)."""
    os.makedirs(directory, exist_ok=True)
    means = make_class_patterns(10, np.random.default_rng(seed))
    for fi, fname in enumerate(CIFAR_TRAIN_FILES + [CIFAR_TEST_FILE]):
        imgs, labels = make_blob_images(CIFAR_RECORDS_PER_FILE, 10,
                                        np.random.default_rng(seed + 1 + fi),
                                        means=means)
        if fname == CIFAR_TRAIN_FILES[0]:
            labels[0] = 6
        rec = np.empty((CIFAR_RECORDS_PER_FILE, CIFAR_RECORD_BYTES), dtype=np.uint8)
        rec[:, 0] = labels
        rec[:, 1:] = imgs.reshape(CIFAR_RECORDS_PER_FILE, -1)
        with open(os.path.join(directory, fname), "wb") as f:
            f.write(rec.tobytes())
    return directory


def write_idx_images(path, images_u8):
    n, h, w = images_u8.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images_u8.tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def write_mnist_dir(directory, n_train=64, n_test=32, seed=7):
    os.makedirs(directory, exist_ok=True)
    rng = np.random.default_rng(seed)
    tr_imgs, tr_labels = make_blob_images(n_train, 10, rng, hw=28, channels=1)
    te_imgs, te_labels = make_blob_images(n_test, 10, rng, hw=28, channels=1)
    write_idx_images(os.path.join(directory, "train-images-idx3-ubyte"), tr_imgs[:, 0])
    write_idx_labels(os.path.join(directory, "train-labels-idx1-ubyte"), tr_labels)
    write_idx_images(os.path.join(directory, "t10k-images-idx3-ubyte"), te_imgs[:, 0])
    write_idx_labels(os.path.join(directory, "t10k-labels-idx1-ubyte"), te_labels)
    return directory


@pytest.fixture(scope="session")
def cifar_dir(tmp_path_factory):
    """Format-exact CIFAR-10 binary directory (synthetic content, ~184 MB).

    Real data is used instead when $NCCONV_CIFAR10_DIR points at it.
    """
    real = os.environ.get("NCCONV_CIFAR10_DIR")
    if real and os.path.isfile(os.path.join(real, CIFAR_TRAIN_FILES[0])):
        return real
    d = tmp_path_factory.mktemp("cifar10-bin")
    return write_cifar10_dir(str(d))


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("mnist-idx")
    return write_mnist_dir(str(d))
