"""MNIST ingestion (IDX format) and the split / permuted task protocols."""

import os
import struct
from dataclasses import dataclass, field

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


class IdxParseError(ValueError):
    pass


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise IdxParseError(f"truncated file while reading {what}")
    return buf


def load_idx_images(path):
    """Parse a big-endian IDX image file into float32 rows scaled to [0, 1]."""
    with open(path, "rb") as f:
        magic, n = struct.unpack(">ii", _read_exact(f, 8, "image header"))
        if magic != IMAGE_MAGIC:
            raise IdxParseError(f"bad image magic {magic}, expected {IMAGE_MAGIC}")
        rows, cols = struct.unpack(">ii", _read_exact(f, 8, "image dimensions"))
        raw = _read_exact(f, n * rows * cols, "image data")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)
    return pixels.astype(np.float32) / 255.0


def load_idx_labels(path):
    with open(path, "rb") as f:
        magic, n = struct.unpack(">ii", _read_exact(f, 8, "label header"))
        if magic != LABEL_MAGIC:
            raise IdxParseError(f"bad label magic {magic}, expected {LABEL_MAGIC}")
        raw = _read_exact(f, n, "label data")
    return np.frombuffer(raw, dtype=np.uint8).copy()


@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray


def resolve_data_dir(data_dir=None):
    d = data_dir or os.environ.get("CL_DATA_DIR")
    if not d:
        raise FileNotFoundError(
            "no MNIST location given; pass --data-dir or set CL_DATA_DIR")
    return d


def load_mnist(data_dir=None):
    d = resolve_data_dir(data_dir)
    train_x = load_idx_images(os.path.join(d, TRAIN_IMAGES))
    train_y = load_idx_labels(os.path.join(d, TRAIN_LABELS))
    test_x = load_idx_images(os.path.join(d, TEST_IMAGES))
    test_y = load_idx_labels(os.path.join(d, TEST_LABELS))
    if len(train_x) != len(train_y):
        raise IdxParseError(f"train image/label count mismatch: {len(train_x)} vs {len(train_y)}")
    if len(test_x) != len(test_y):
        raise IdxParseError(f"test image/label count mismatch: {len(test_x)} vs {len(test_y)}")
    return Dataset(train_x, train_y, test_x, test_y)


@dataclass
class TaskSpec:
    """One task of a protocol: class list, data subsets and input transform.

    For the permuted protocol all tasks share the same (padded) image arrays
    and differ only in ``permutation``; ``transform`` applies it lazily so
    ten tasks do not cost ten copies of the dataset.
    """
    index: int  # 1-based
    classes: tuple
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    permutation: np.ndarray = None

    def transform(self, x):
        if self.permutation is None:
            return x
        return x[:, self.permutation]

    @property
    def n_train(self):
        return len(self.train_y)


SPLIT_TASKS = [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]


def build_split_protocol(dataset):
    """Five two-way tasks over the digits in order: {0,1}, {2,3}, ..., {8,9}."""
    tasks = []
    for i, classes in enumerate(SPLIT_TASKS):
        tr = np.isin(dataset.train_y, classes)
        te = np.isin(dataset.test_y, classes)
        tasks.append(TaskSpec(
            index=i + 1, classes=classes,
            train_x=dataset.train_x[tr], train_y=dataset.train_y[tr],
            test_x=dataset.test_x[te], test_y=dataset.test_y[te]))
    return tasks


def pad_images(x, side=28, padded_side=32):
    """Zero-pad square images, original block centered."""
    n = len(x)
    margin = (padded_side - side) // 2
    out = np.zeros((n, padded_side, padded_side), dtype=x.dtype)
    out[:, margin:margin + side, margin:margin + side] = x.reshape(n, side, side)
    return out.reshape(n, padded_side * padded_side)


def build_permuted_protocol(dataset, n_tasks, rng):
    """Ten-way tasks, each with its own random permutation of the padded pixels."""
    train_x = pad_images(dataset.train_x)
    test_x = pad_images(dataset.test_x)
    n_pix = train_x.shape[1]
    tasks = []
    for i in range(n_tasks):
        perm = rng.permutation(n_pix)
        tasks.append(TaskSpec(
            index=i + 1, classes=tuple(range(10)),
            train_x=train_x, train_y=dataset.train_y,
            test_x=test_x, test_y=dataset.test_y,
            permutation=perm))
    return tasks
