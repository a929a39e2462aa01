import functools

import numpy as np
import pytest

from smoothot.smooth_map import fit

#: lines collected by the acceptance module, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def random_fit(d, n, seed, spread=1.0):
    """Fit between two independent Gaussian samples, cached across tests."""
    rng = np.random.default_rng([seed, d, n])
    x0 = rng.normal(size=(n, d)) * spread
    x1 = rng.normal(size=(n, d)) * spread + 0.5
    return fit(x0, x1, seed=seed)


@pytest.fixture(scope="session")
def two_point_map():
    return fit([[0.0], [1.0]], [[0.0], [1.0]])


@pytest.fixture(scope="session")
def small_maps():
    return [random_fit(d, n, s) for d, n, s in [(1, 6, 0), (2, 8, 1), (2, 12, 2), (3, 10, 3)]]
