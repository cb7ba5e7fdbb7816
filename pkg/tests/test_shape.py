import math

import numpy as np
import pytest

from dso.diagnostics import estimate_lagrange
from dso.eigen import godunov_drift, principal_eig_drift, principal_eig_selfadjoint
from dso.grid import full_mask, make_grid, mask_from_shape, measure, symmetric_difference
from dso.radial import ball_radius_for_measure, golden_lambda
from dso.shape import (
    ShapeOptConfig,
    ShapeOptError,
    best_fit_disk,
    epsilon_curve,
    joint_optimize,
    optimize_shape_fixed_drift,
    penalized_lambda,
    project_measure,
    radial_alignment,
)

from conftest import M_DISK


def small_box(n=8):
    g = make_grid((n, n), (1.0, 1.0))
    return g, full_mask(g)


class TestProjectMeasure:
    def test_decreasing_score(self):
        g, box = small_box()
        score = -np.arange(64, dtype=float).reshape(8, 8) + 100
        m = project_measure(score, box, 5 * g.cell_volume)
        expected = np.zeros(64, bool)
        expected[:5] = True
        np.testing.assert_array_equal(m.inside.ravel(), expected)

    def test_ties_are_lexicographic(self):
        g, box = small_box()
        m = project_measure(np.ones((8, 8)), box, 7 * g.cell_volume)
        assert [tuple(c) for c in np.argwhere(m.inside)] == [(0, j) for j in range(7)]

    def test_random_against_sort_oracle(self, rng):
        g, box = small_box(16)
        score = rng.uniform(0.1, 1.0, (16, 16))
        m = project_measure(score, box, 37 * g.cell_volume)
        ranked = sorted(((-score[i, j], (i, j)) for i in range(16) for j in range(16)))
        oracle = {ij for _, ij in ranked[:37]}
        assert {tuple(c) for c in np.argwhere(m.inside)} == oracle

    def test_respects_box(self, rng):
        g = make_grid((16, 16), (1, 1))
        box = mask_from_shape(g, {"type": "disk", "center": [0.5, 0.5], "radius": 0.4})
        m = project_measure(rng.uniform(size=(16, 16)), box, 0.2)
        assert not np.any(m.inside & ~box.inside) and m.parent is box

    def test_short_of_positive_cells(self):
        g, box = small_box()
        score = np.zeros((8, 8))
        score[0, :3] = 1.0
        m = project_measure(score, box, 10 * g.cell_volume)
        assert m.count == 3

    def test_m_above_box(self):
        g, box = small_box()
        with pytest.raises(ShapeOptError, match="exceeds"):
            project_measure(np.ones((8, 8)), box, 1.5)


class TestPenalizedLambda:
    def test_zero_penalty_is_box_eigenvalue(self):
        g, box = small_box(32)
        omega = mask_from_shape(g, {"type": "disk", "center": [0.5, 0.5], "radius": 0.3}, box)
        a = penalized_lambda(box, omega, 0.0).lam
        assert a == pytest.approx(principal_eig_selfadjoint(box).lam, rel=1e-10)

    def test_monotone_in_penalty(self):
        g, box = small_box(32)
        omega = mask_from_shape(g, {"type": "disk", "center": [0.5, 0.5], "radius": 0.3}, box)
        lams = [penalized_lambda(box, omega, 10.0**k, tol=1e-11).lam for k in range(1, 7)]
        assert all(b >= a - 1e-9 for a, b in zip(lams, lams[1:]))

    def test_large_penalty_approaches_hard_mask(self):
        g = make_grid((128, 128), (3.0, 3.0))
        box = full_mask(g)
        omega = mask_from_shape(g, {"type": "disk", "center": [1.5, 1.5], "radius": 0.5}, box)
        soft = penalized_lambda(box, omega, 1e6).lam
        hard = principal_eig_selfadjoint(omega).lam
        assert soft == pytest.approx(hard, rel=0.03)
        assert soft <= hard

    def test_drift_route(self, rng):
        g, box = small_box(24)
        omega = mask_from_shape(g, {"type": "disk", "center": [0.5, 0.5], "radius": 0.3}, box)
        V = np.zeros((2,) + g.node_shape)
        V[0] = 0.5
        lams = [penalized_lambda(box, omega, c, drift=V, tol=1e-11).lam for c in (0.0, 1e2, 1e4)]
        assert lams[0] <= lams[1] <= lams[2]

    def test_negative_penalty(self):
        g, box = small_box()
        with pytest.raises(ShapeOptError):
            penalized_lambda(box, box, -1.0)


class TestFixedDrift:
    def test_unconstrained(self):
        g, box = small_box(16)
        res = optimize_shape_fixed_drift(box, ShapeOptConfig(m=1.0))
        assert res.omega == box and res.converged and len(res.lambda_history) == 1

    def test_config_validation(self):
        with pytest.raises(ShapeOptError):
            ShapeOptConfig(m=0.0)
        with pytest.raises(ShapeOptError):
            ShapeOptConfig(m=0.5, penalty_growth=1.0)

    def test_disk_recovery(self, opt192, golden_disk):
        g, box, res = opt192
        assert res.converged
        disk, _, _ = best_fit_disk(res.omega, M_DISK)
        assert symmetric_difference(disk, res.omega) * g.cell_volume <= 0.05 * M_DISK
        assert res.eig.lam == pytest.approx(golden_disk[0.0], rel=0.02)
        assert abs(measure(res.omega) - M_DISK) <= g.cell_volume

    def test_faber_krahn_in_unit_square(self):
        g = make_grid((96, 96), (1.0, 1.0))
        res = optimize_shape_fixed_drift(full_mask(g), ShapeOptConfig(m=0.5))
        R = ball_radius_for_measure(0.5, 2)
        assert res.eig.lam >= golden_lambda(2, 1.0, 0.0) / R**2 - 1e-6

    def test_history_is_finite_and_monotone_when_accepted(self, opt192):
        _, _, res = opt192
        lam = np.asarray(res.lambda_history)
        pen = np.asarray(res.penalty_history)
        acc = np.asarray(res.accepted)
        assert np.all(np.isfinite(lam))
        for p in np.unique(pen):
            seq = lam[(pen == p) & acc]
            assert np.all(np.diff(seq) <= 0)

    def test_history_rows(self, opt192):
        _, _, res = opt192
        rows = list(res.history_rows())
        assert rows[0][0] == 0 and len(rows[0]) == 5 and rows[-1][-1] in (0, 1)

    def test_deterministic(self):
        g = make_grid((64, 64), (3.0, 3.0))
        a = optimize_shape_fixed_drift(full_mask(g), ShapeOptConfig(m=M_DISK))
        b = optimize_shape_fixed_drift(full_mask(g), ShapeOptConfig(m=M_DISK))
        assert a.omega == b.omega and a.eig.lam == b.eig.lam

    def test_offcenter_start_converges(self, golden_disk):
        g = make_grid((128, 128), (3.0, 3.0))
        box = full_mask(g)
        start = mask_from_shape(g, {"type": "rectangle", "lo": [0.1, 0.1], "hi": [1.1, 0.885]}, box)
        res = optimize_shape_fixed_drift(box, ShapeOptConfig(m=M_DISK), start=project_measure(
            start.inside.astype(float), box, M_DISK))
        assert res.converged
        assert res.eig.lam == pytest.approx(golden_disk[0.0], rel=0.03)

    def test_box_monotonicity(self):
        g = make_grid((120, 120), (3.0, 3.0))
        big = full_mask(g)
        small = mask_from_shape(g, {"type": "rectangle", "lo": [0, 0], "hi": [2.0, 2.0]})
        lam_small = optimize_shape_fixed_drift(small, ShapeOptConfig(m=M_DISK)).eig.lam
        lam_big = optimize_shape_fixed_drift(big, ShapeOptConfig(m=M_DISK)).eig.lam
        assert lam_big <= lam_small * (1 + 5e-3) + 1e-6

    def test_drift_field_route(self):
        g = make_grid((64, 64), (3.0, 3.0))
        V = np.zeros((2,) + g.node_shape)
        V[0] = 0.5
        res = optimize_shape_fixed_drift(full_mask(g), ShapeOptConfig(m=M_DISK), drift=V)
        assert res.converged
        assert res.eig.lam == pytest.approx(principal_eig_drift(res.omega, V).lam)

    def test_phi_and_drift_exclusive(self):
        g, box = small_box(16)
        with pytest.raises(ShapeOptError):
            optimize_shape_fixed_drift(box, ShapeOptConfig(m=0.3), phi=np.zeros(g.node_shape),
                                       drift=np.zeros((2,) + g.node_shape))


class TestJoint:
    def test_tau_zero_reduces(self):
        g = make_grid((64, 64), (3.0, 3.0))
        box = full_mask(g)
        a, V = joint_optimize(box, ShapeOptConfig(m=M_DISK), 0.0)
        b = optimize_shape_fixed_drift(box, ShapeOptConfig(m=M_DISK))
        assert a.omega == b.omega and np.all(V == 0)

    def test_ball_with_radial_drift(self, joint192, golden_disk):
        g, box, res, V = joint192
        assert res.converged
        assert res.eig.lam == pytest.approx(golden_disk[1.0], rel=0.03)
        assert np.hypot(V[0], V[1]).max() <= 1.0 + 1e-12
        assert abs(measure(res.omega) - M_DISK) <= g.cell_volume
        _, center, _ = best_fit_disk(res.omega, M_DISK)
        _, gn = godunov_drift(res.eig.u, g, 1.0)
        angles = radial_alignment(V, res.omega, center, gn)
        assert np.mean(angles <= 15.0) >= 0.9

    def test_not_worse_than_zero_drift(self, joint192, opt192):
        assert joint192[2].eig.lam <= opt192[2].eig.lam + 1e-8

    def test_negative_tau(self):
        g, box = small_box(16)
        with pytest.raises(ShapeOptError):
            joint_optimize(box, ShapeOptConfig(m=0.3), -1.0)


def test_epsilon_curve(opt192):
    g, box, res = opt192
    u, lam = res.eig.u, res.eig.lam
    Lhat, _ = estimate_lagrange(u, g, res.omega, lam, box=box)
    radii = [2 * g.h[0], 4 * g.h[0], 8 * g.h[0], 16 * g.h[0]]
    curve = epsilon_curve(box, u, lam, Lhat, radii, n_samples=50, omega=res.omega)
    med = [curve[float(r)]["median"] for r in radii]
    assert all(curve[float(r)]["samples"] == 50 for r in radii)
    # the multiplier bound holds with no positive slack at any scale
    assert max(curve[float(r)]["max"] for r in radii) <= 0.0
    # the slack closes toward zero as the competitor scale grows
    assert all(b >= a for a, b in zip(med, med[1:]))


@pytest.mark.xfail(strict=True, reason="signed slack medians rise toward zero with r; see the epsilon-curve test")
def test_epsilon_medians_nonincreasing(opt192):
    g, box, res = opt192
    u, lam = res.eig.u, res.eig.lam
    Lhat, _ = estimate_lagrange(u, g, res.omega, lam, box=box)
    radii = [2 * g.h[0], 4 * g.h[0], 8 * g.h[0], 16 * g.h[0]]
    curve = epsilon_curve(box, u, lam, Lhat, radii, n_samples=50, omega=res.omega)
    med = [curve[float(r)]["median"] for r in radii]
    assert all(b <= a for a, b in zip(med, med[1:]))


def test_best_fit_disk_of_disk():
    g = make_grid((128, 128), (3.0, 3.0))
    m = mask_from_shape(g, {"type": "disk", "center": [1.3, 1.6], "radius": 0.5})
    disk, center, radius = best_fit_disk(m)
    assert symmetric_difference(disk, m) <= 8
    assert np.allclose(center, [1.3, 1.6], atol=g.h[0])
    assert radius == pytest.approx(math.sqrt(measure(m) / math.pi))


def test_radial_alignment_of_exact_field():
    g = make_grid((64, 64), (2.0, 2.0), (-1.0, -1.0))
    m = mask_from_shape(g, {"type": "disk", "center": [0, 0], "radius": 0.8})
    x, y = g.node_coords()
    r = np.maximum(np.hypot(x, y), 1e-12)
    V = np.stack([x / r, y / r])
    angles = radial_alignment(V, m, (0.0, 0.0), np.ones(g.node_shape))
    assert angles.max() < 1e-4  # arccos near 1 resolves about 1e-6 degrees
