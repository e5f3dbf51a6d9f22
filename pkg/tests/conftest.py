import sys

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, p, n=None):
    """Sample covariance of n Gaussian rows (positive definite when n > p)."""
    n = n or 3 * p
    X = rng.standard_normal((n, p)) @ rng.standard_normal((p, p))
    X -= X.mean(axis=0)
    return X.T @ X / (n - 1)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
