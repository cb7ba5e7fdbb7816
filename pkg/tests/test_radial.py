import math

import numpy as np
import pytest

from dso.eigen import principal_eig_selfadjoint
from dso.grid import make_grid, mask_from_shape
from dso.radial import (
    GOLDEN_HEADER,
    GOLDEN_PATH,
    GOLDEN_TABLE,
    OracleError,
    ball_radius_for_measure,
    golden_lambda,
    load_golden,
    radial_eigen,
    separable_lambda,
    write_golden,
)

J01 = 2.404825557695773  # first zero of the Bessel function J0


def test_ball_3d_is_pi_squared():
    assert radial_eigen(3, 1.0, 0.0).lam == pytest.approx(math.pi**2, rel=1e-5)


def test_disk_matches_bessel_zero_and_self_converges():
    a = radial_eigen(2, 1.0, 0.0, 4000)
    b = radial_eigen(2, 1.0, 0.0, 16000)
    assert a.lam == pytest.approx(J01**2, rel=1e-5)
    assert b.lam == pytest.approx(a.lam, rel=1e-6)


def test_interval_1d():
    # d = 1: -u'' on (0, R) with u'(0) = 0, u(R) = 0 gives (pi / 2R)^2
    assert radial_eigen(1, 1.0, 0.0).lam == pytest.approx((math.pi / 2) ** 2, rel=1e-6)


def test_profile_invariants():
    sol = radial_eigen(2, 1.0, 1.0)
    assert sol.u[0] > 0 and sol.u[-1] == 0.0 and sol.lam > 0
    tail = sol.u[-50:]
    assert np.all(np.diff(tail) < 0)
    assert sol.slope_at_R < 0
    # weighted normalization over the ball
    w = 2 * math.pi * sol.r * np.exp(-sol.tau * sol.r)
    assert np.trapezoid(sol.u**2 * w, sol.r) == pytest.approx(1.0, rel=1e-9)
    assert sol(np.array([0.0, 2.0]))[1] == 0.0


def test_strictly_decreasing_in_tau():
    for d in (2, 3):
        lams = [radial_eigen(d, 1.0, t).lam for t in (0.0, 0.5, 1.0, 2.0)]
        assert all(b < a - 1e-8 for a, b in zip(lams, lams[1:]))


@pytest.mark.parametrize("R", [0.25, 0.5, 2.0])
def test_scaling_at_tau_zero(R):
    assert radial_eigen(2, R, 0.0).lam == pytest.approx(radial_eigen(2, 1.0, 0.0).lam / R**2, rel=1e-8)


def test_slope_quantity_stable():
    tau, R = 1.0, 0.5
    a = radial_eigen(2, R, tau, 4000)
    b = radial_eigen(2, R, tau, 8000)
    qa = a.slope_at_R**2 * math.exp(-tau * R)
    qb = b.slope_at_R**2 * math.exp(-tau * R)
    assert qa > 0 and qb == pytest.approx(qa, rel=1e-4)


def test_consistency_with_grid_solver():
    # drift tau x/|x| is the gradient of phi = tau |x|
    n, tau = 256, 1.0
    g = make_grid((n, n), (2.2, 2.2), (-1.1, -1.1))
    m = mask_from_shape(g, {"type": "disk", "center": [0, 0], "radius": 1.0})
    x, y = g.node_coords()
    lam = principal_eig_selfadjoint(m, tau * np.hypot(x, y)).lam
    assert lam == pytest.approx(radial_eigen(2, 1.0, tau).lam, rel=0.02)


def test_preconditions():
    with pytest.raises(ValueError):
        radial_eigen(2, 1.0, 0.0, 500)
    with pytest.raises(ValueError):
        radial_eigen(4, 1.0, 0.0)
    with pytest.raises(ValueError):
        radial_eigen(2, -1.0, 0.0)


def test_unresolved_oracle():
    with pytest.raises(OracleError, match="oracle unresolved"):
        radial_eigen(2, 1.0, 0.0, 1000, agree_tol=1e-12)


class TestGolden:
    def test_file_layout(self):
        header = GOLDEN_PATH.read_text().splitlines()[0]
        assert tuple(header.split(",")) == GOLDEN_HEADER
        table = load_golden()
        assert set(table) == {(d, float(R), float(t)) for d, R, t in GOLDEN_TABLE}

    def test_golden_matches_oracle(self, golden):
        for (d, R, tau), row in golden.items():
            assert radial_eigen(d, R, tau, 8000).lam == pytest.approx(row["lambda"], rel=1e-6)

    def test_known_anchors(self, golden):
        assert golden[(2, 1.0, 0.0)]["lambda"] == pytest.approx(J01**2, rel=1e-9)
        assert golden[(3, 1.0, 0.0)]["lambda"] == pytest.approx(math.pi**2, rel=1e-9)
        assert golden_lambda(2, 0.25, 0.0) == pytest.approx(J01**2 * 16, rel=1e-9)

    def test_missing_key(self):
        with pytest.raises(KeyError):
            golden_lambda(2, 0.3, 0.7)

    def test_regeneration_agrees(self, tmp_path):
        rows = write_golden(tmp_path / "g.csv", [(2, 1.0, 1.0)], n_nodes=20000, agree=1e-6)
        assert rows[0][3] == pytest.approx(golden_lambda(2, 1.0, 1.0), rel=1e-7)


def test_ball_radius_for_measure():
    assert ball_radius_for_measure(math.pi, 2) == pytest.approx(1.0)
    assert ball_radius_for_measure(math.pi / 4, 2) == pytest.approx(0.5)
    assert ball_radius_for_measure(4 * math.pi / 3, 3) == pytest.approx(1.0)


def test_separable_lambda():
    assert separable_lambda(1, 1) == pytest.approx(2 * math.pi**2)
    assert separable_lambda(1, 2) == pytest.approx(1.25 * math.pi**2)
    assert separable_lambda(2, 2) == pytest.approx(math.pi**2 / 2)
    with pytest.raises(ValueError):
        separable_lambda(0, 1)
