import numpy as np
import pytest

from hcmmld.data import dataset_from_arrays
from hcmmld.geweke import sample_prior_state
from hcmmld.state import PriorConfig, TruncationConfig


def toy_dataset(n=60, levels=(2, 3), q=2, miss=0.2, seed=0):
    """Random mixed dataset with MCAR holes (codes 1-based)."""
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.integers(1, d + 1, n) for d in levels])
    Y = rng.standard_normal((n, q)) + X[:, :1]
    Rx = rng.random(X.shape) < miss
    Ry = rng.random(Y.shape) < miss
    return dataset_from_arrays(X, Y, [f"x{j + 1}" for j in range(len(levels))],
                               [[f"L{k}" for k in range(d)] for d in levels],
                               [f"y{v + 1}" for v in range(q)], Rx, Ry)


def prior_state(levels=(2, 3), q=2, n=50, trunc=(3, 4, 3), seed=0):
    rng = np.random.default_rng(seed)
    return sample_prior_state(list(levels), q, n, TruncationConfig(*trunc), PriorConfig(), rng)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
