import numpy as np
import pytest

from brainalign.geometry import Geometry, grid_geometry


def random_geometry(rng, v):
    """Random metric: Euclidean distances between random points, random weights."""
    pts = rng.standard_normal((v, 2))
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    w = rng.uniform(0.2, 1.0, v)
    return Geometry(d, w / w.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid4():
    return grid_geometry(4, 4)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
