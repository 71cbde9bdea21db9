import struct

import numpy as np
import pytest

from clbench.data import (load_idx_images, load_idx_labels, IdxParseError,
                          build_split_protocol, build_permuted_protocol,
                          pad_images, Dataset, load_mnist, IMAGE_MAGIC, LABEL_MAGIC)


def write_idx_images(path, images):
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", IMAGE_MAGIC, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", LABEL_MAGIC, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def test_idx_roundtrip_and_scaling(tmp_path):
    imgs = np.arange(2 * 4 * 4, dtype=np.uint8).reshape(2, 4, 4)
    p = tmp_path / "imgs"
    write_idx_images(p, imgs)
    loaded = load_idx_images(p)
    assert loaded.shape == (2, 16)
    assert loaded.dtype == np.float32
    np.testing.assert_allclose(loaded, imgs.reshape(2, 16) / 255.0)
    assert loaded.min() >= 0.0 and loaded.max() <= 1.0


def test_idx_wrong_magic(tmp_path):
    p = tmp_path / "bad"
    with open(p, "wb") as f:
        f.write(struct.pack(">iiii", 1234, 1, 2, 2))
        f.write(bytes(4))
    with pytest.raises(IdxParseError, match="magic"):
        load_idx_images(p)
    # an image magic is not a valid label magic
    write_idx_images(tmp_path / "imgs", np.zeros((1, 2, 2), dtype=np.uint8))
    with pytest.raises(IdxParseError, match="2049"):
        load_idx_labels(tmp_path / "imgs")


def test_idx_truncated(tmp_path):
    p = tmp_path / "trunc"
    with open(p, "wb") as f:
        f.write(struct.pack(">iiii", IMAGE_MAGIC, 10, 28, 28))  # header only
    with pytest.raises(IdxParseError, match="truncated"):
        load_idx_images(p)


def test_count_mismatch(tmp_path):
    write_idx_images(tmp_path / "train-images-idx3-ubyte", np.zeros((3, 2, 2), np.uint8))
    write_idx_labels(tmp_path / "train-labels-idx1-ubyte", [0, 1])
    write_idx_images(tmp_path / "t10k-images-idx3-ubyte", np.zeros((1, 2, 2), np.uint8))
    write_idx_labels(tmp_path / "t10k-labels-idx1-ubyte", [0])
    with pytest.raises(IdxParseError, match="mismatch"):
        load_mnist(tmp_path)


def test_official_counts(mnist):
    assert len(mnist.train_x) == 60_000
    assert len(mnist.test_x) == 10_000
    assert set(np.unique(mnist.train_y)) == set(range(10))


def toy_dataset(n_train=400, n_test=100, n_pix=784, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(
        rng.random((n_train, n_pix), dtype=np.float32),
        rng.integers(0, 10, n_train).astype(np.uint8),
        rng.random((n_test, n_pix), dtype=np.float32),
        rng.integers(0, 10, n_test).astype(np.uint8))


def test_split_protocol_partitions_digits():
    ds = toy_dataset()
    tasks = build_split_protocol(ds)
    assert [t.classes for t in tasks] == [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]
    all_classes = [c for t in tasks for c in t.classes]
    assert sorted(all_classes) == list(range(10))
    assert sum(t.n_train for t in tasks) == len(ds.train_y)
    for t in tasks:
        assert set(np.unique(t.train_y)) <= set(t.classes)


def test_split_train_counts_match_label_counts(mnist):
    tasks = build_split_protocol(mnist)
    counts = np.bincount(mnist.train_y)
    for t in tasks:
        assert t.n_train == counts[list(t.classes)].sum()
        assert 11_000 < t.n_train < 13_500


def test_padding_centers_the_image():
    ds = toy_dataset(n_train=3, n_test=1)
    padded = pad_images(ds.train_x).reshape(-1, 32, 32)
    assert np.all(padded[:, :2, :] == 0) and np.all(padded[:, 30:, :] == 0)
    assert np.all(padded[:, :, :2] == 0) and np.all(padded[:, :, 30:] == 0)
    np.testing.assert_array_equal(padded[:, 2:30, 2:30].reshape(3, -1), ds.train_x)


def test_permutations_are_bijections_and_invertible():
    ds = toy_dataset(n_train=5, n_test=2)
    tasks = build_permuted_protocol(ds, 4, np.random.default_rng(1))
    assert len(tasks) == 4
    for t in tasks:
        assert sorted(t.permutation) == list(range(1024))
        x = t.train_x[:3]
        xp = t.transform(x)
        inverse = np.argsort(t.permutation)
        np.testing.assert_array_equal(xp[:, inverse], x)


def test_fixed_seed_gives_identical_protocol():
    ds = toy_dataset(n_train=5, n_test=2)
    t1 = build_permuted_protocol(ds, 3, np.random.default_rng(7))
    t2 = build_permuted_protocol(ds, 3, np.random.default_rng(7))
    for a, b in zip(t1, t2):
        np.testing.assert_array_equal(a.permutation, b.permutation)
