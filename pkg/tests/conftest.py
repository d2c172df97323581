import sys

import numpy as np
import pytest

from qtkw.quadrature import Rules

BATTERY = ("0", "0.25*x1", "x5^3", "0.3*x1 + 0.2*x5^3", "0.2*x1*x2 + 0.1*x5^3")


def random_sphere_points(n, seed=0, boundary=False):
    """Uniform points on the closed upper hemisphere (or on the equator)."""
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(n, 5))
    if boundary:
        p[:, 4] = 0.0
    else:
        p[:, 4] = np.abs(p[:, 4])
    return p / np.linalg.norm(p, axis=1, keepdims=True)


@pytest.fixture(scope="session")
def rules16():
    return Rules.with_n(16)


@pytest.fixture(scope="session")
def rules12():
    return Rules.with_n(12)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
