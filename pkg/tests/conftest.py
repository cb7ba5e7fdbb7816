import math

import numpy as np
import pytest

from dso.grid import full_mask, make_grid
from dso.radial import golden_lambda, load_golden
from dso.shape import ShapeOptConfig, joint_optimize, optimize_shape_fixed_drift

M_DISK = math.pi / 4  # disk of radius 1/2
R_DISK = 0.5


def _optimum(n: int):
    g = make_grid((n, n), (3.0, 3.0))
    box = full_mask(g)
    res = optimize_shape_fixed_drift(box, ShapeOptConfig(m=M_DISK))
    return g, box, res


@pytest.fixture(scope="session")
def golden():
    return load_golden()


@pytest.fixture(scope="session")
def golden_disk():
    """Radial reference for the ball of measure pi/4 at tau = 0 and 1."""
    return {0.0: golden_lambda(2, R_DISK, 0.0), 1.0: golden_lambda(2, R_DISK, 1.0)}


@pytest.fixture(scope="session")
def opt96():
    return _optimum(96)


@pytest.fixture(scope="session")
def opt192():
    return _optimum(192)


@pytest.fixture(scope="session")
def opt256():
    return _optimum(256)


@pytest.fixture(scope="session")
def joint192():
    g = make_grid((192, 192), (3.0, 3.0))
    box = full_mask(g)
    res, V = joint_optimize(box, ShapeOptConfig(m=M_DISK), 1.0)
    return g, box, res, V


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# -- acceptance report ---------------------------------------------------------

_CRITERIA: list[tuple[int, str, str, float]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    number, title = marker.args
    status = "PASS" if rep.passed else "FAIL"
    _CRITERIA.append((number, title, status, rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, duration in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {number:2d} {status}  {duration:7.2f}s  {title}")
