"""Dataset loading: MNIST IDX files and synthetic Gaussian blobs."""

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagicError, CountMismatchError, TruncatedFileError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "BCMP_DATA_DIR"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise CountMismatchError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, n):
        return Dataset(self.inputs[:n], self.labels[:n], self.split)


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def _header(buf, magic, n_dims, path):
    need = 4 + 4 * n_dims
    if len(buf) < need:
        raise TruncatedFileError(f"{path}: header truncated")
    (found,) = struct.unpack(">I", buf[:4])
    if found != magic:
        raise BadMagicError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    return struct.unpack(">" + "I" * n_dims, buf[4:need]), need


def load_idx(images_path, labels_path, split="train"):
    """Parse an IDX image/label pair into a ``Dataset`` of raw bytes, shape (N, rows, cols, 1)."""
    img_buf, lab_buf = _read(images_path), _read(labels_path)
    (count, rows, cols), off = _header(img_buf, IMAGES_MAGIC, 3, images_path)
    if len(img_buf) - off < count * rows * cols:
        raise TruncatedFileError(f"{images_path}: expected {count * rows * cols} pixel bytes")
    (n_labels,), loff = _header(lab_buf, LABELS_MAGIC, 1, labels_path)
    if len(lab_buf) - loff < n_labels:
        raise TruncatedFileError(f"{labels_path}: expected {n_labels} label bytes")
    if count != n_labels:
        raise CountMismatchError(f"{count} images but {n_labels} labels")
    images = np.frombuffer(img_buf, dtype=np.uint8, count=count * rows * cols, offset=off)
    labels = np.frombuffer(lab_buf, dtype=np.uint8, count=n_labels, offset=loff)
    return Dataset(images.reshape(count, rows, cols, 1).copy(), labels.astype(np.int64), split)


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images (N, rows, cols[, 1]) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape[:3]
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, len(labels)))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


def rescale(dataset):
    """Map pixel bytes [0, 255] affinely onto [-1, 1]."""
    x = np.asarray(dataset.inputs, dtype=np.float64) / 127.5 - 1.0
    return Dataset(x, dataset.labels, dataset.split)


def resolve_data_dir(data_dir=None):
    return Path(data_dir or os.environ.get(DATA_DIR_ENV) or "data/mnist")


def load_mnist(data_dir=None, subset=None):
    """Rescaled MNIST (train, test). ``subset`` keeps the first n training samples."""
    root = resolve_data_dir(data_dir)
    out = []
    for split in ("train", "test"):
        img, lab = MNIST_FILES[split]
        out.append(rescale(load_idx(root / img, root / lab, split)))
    train, test = out
    if subset:
        train = train.subset(subset)
    return train, test


def synth_blobs(n, classes, dim, separation, seed, split="train"):
    """Unit-variance Gaussian blobs around equidistant centers.

    Centers are ``separation`` apart pairwise: scaled standard basis vectors
    (a regular simplex), so ``dim >= classes`` gives exact equidistance; for
    smaller ``dim`` centers sit on a circle in the first two axes instead.
    """
    if n < classes:
        raise ValueError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    if dim >= classes:
        centers = np.eye(classes, dim) * (separation / np.sqrt(2.0))
    else:
        ang = 2 * np.pi * np.arange(classes) / classes
        radius = separation / (2 * np.sin(np.pi / classes)) if classes > 1 else 0.0
        centers = np.zeros((classes, dim))
        centers[:, 0] = radius * np.cos(ang)
        if dim > 1:
            centers[:, 1] = radius * np.sin(ang)
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    x = centers[labels] + rng.standard_normal((n, dim))
    return Dataset(x, labels.astype(np.int64), split)
