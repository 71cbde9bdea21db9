import os

import numpy as np
import pytest

from clbench.data import load_mnist, TRAIN_IMAGES

DATA_CANDIDATES = [os.environ.get("CL_DATA_DIR"), "data/mnist", "/root/data/mnist"]


def find_data_dir():
    for d in DATA_CANDIDATES:
        if d and os.path.exists(os.path.join(d, TRAIN_IMAGES)):
            return d
    return None


@pytest.fixture(scope="session")
def data_dir():
    d = find_data_dir()
    if d is None:
        pytest.skip("MNIST IDX files not found (set CL_DATA_DIR)")
    return d


@pytest.fixture(scope="session")
def mnist(data_dir):
    return load_mnist(data_dir)


def finite_diff(loss_fn, arrays, eps=1e-5):
    """Central finite differences of a scalar function w.r.t. each array entry."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = a[i]
            a[i] = orig + eps
            lp = loss_fn()
            a[i] = orig - eps
            lm = loss_fn()
            a[i] = orig
            g[i] = (lp - lm) / (2 * eps)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-4):
    for a, n in zip(analytic, numeric):
        scale = max(np.abs(n).max(), np.abs(a).max(), 1e-8)
        np.testing.assert_allclose(a, n, atol=rtol * scale, rtol=0)
