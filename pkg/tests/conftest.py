import os
from pathlib import Path

import numpy as np
import pytest

from bayescomp.data import DATA_DIR_ENV

_LOCAL_MNIST = Path("/root/data/mnist")
if DATA_DIR_ENV not in os.environ and _LOCAL_MNIST.is_dir():
    os.environ[DATA_DIR_ENV] = str(_LOCAL_MNIST)


def mnist_available():
    root = Path(os.environ.get(DATA_DIR_ENV, "data/mnist"))
    return (root / "train-images-idx3-ubyte").is_file()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def finite_diff(f, x, h=1e-5):
    """Central differences of scalar f with respect to every entry of array x (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


# acceptance summary: test_acceptance appends (criterion, passed, detail)
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'}  {detail}")
