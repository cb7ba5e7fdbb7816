"""Minimization of the principal eigenvalue over cell masks of prescribed measure.

The search runs on the whole box ``D``.  Cells outside the current candidate
``Omega`` carry a large potential (a fictitious-material relaxation of the
Dirichlet condition), so the relaxed eigenfunction leaks slightly across the
boundary.  The next candidate is the set of the ``K = round(m / cell_volume)``
cells where that eigenfunction is largest.  A candidate is accepted only if it
lowers the relaxed eigenvalue; otherwise the penalty grows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .eigen import (
    DEFAULT_TOL,
    EigenResult,
    optimal_drift_fixed_point,
    principal_eig_drift,
    principal_eig_selfadjoint,
)
from .grid import Mask, cell_fraction_outside, measure, node_to_cell, symmetric_difference

log = logging.getLogger(__name__)


class ShapeOptError(ValueError):
    pass


@dataclass(frozen=True)
class ShapeOptConfig:
    m: float
    penalty_start: float | None = None  # default: start_factor * lambda_1(D)
    start_factor: float = 1.0
    target_factor: float = 1e3  # continuation ends once stable at target_factor * lambda_1(D)
    penalty_growth: float = 10.0
    penalty_max: float = 1e9
    max_outer: int = 200
    tol_lambda: float = 1e-8
    eig_tol: float = DEFAULT_TOL
    stable_cells: int = 2
    seed: int = 0

    def __post_init__(self):
        if not self.m > 0:
            raise ShapeOptError("m must be positive")
        if not self.penalty_growth > 1:
            raise ShapeOptError("penalty_growth must exceed 1")
        if self.penalty_start is not None and self.penalty_start < 0:
            raise ShapeOptError("penalty_start must be nonnegative")


@dataclass
class ShapeOptResult:
    omega: Mask
    eig: EigenResult
    lambda_history: list[float] = field(default_factory=list)
    measure_history: list[float] = field(default_factory=list)
    penalty_history: list[float] = field(default_factory=list)
    accepted: list[bool] = field(default_factory=list)
    penalty_final: float = 0.0
    converged: bool = False
    drift: np.ndarray | None = None

    def history_rows(self):
        for k, row in enumerate(zip(self.lambda_history, self.measure_history, self.penalty_history, self.accepted)):
            yield (k,) + tuple(row[:3]) + (int(row[3]),)


def target_cells(box: Mask, m: float) -> int:
    return int(round(m / box.grid.cell_volume))


def project_measure(score: np.ndarray, box: Mask, m: float) -> Mask:
    """The ``round(m / cell_volume)`` cells of ``box`` with the largest score.

    ``score`` is a cell array (use :func:`dso.grid.node_to_cell` for node
    fields).  Ties go to the lexicographically first cell.  Only cells with a
    positive score are taken, so the result can fall short of ``m``.
    """
    if m > measure(box) * (1 + 1e-12):
        raise ShapeOptError(f"m={m} exceeds the box measure {measure(box)}")
    k = target_cells(box, m)
    score = np.asarray(score, dtype=float)
    if score.shape != box.grid.cell_shape:
        raise ShapeOptError("score must be a cell array")
    flat_box = box.inside.ravel()
    cand = np.flatnonzero(flat_box)  # lexicographic (C order) cell ids
    order = cand[np.argsort(-score.ravel()[cand], kind="stable")]
    chosen = order[:k]
    positive = score.ravel()[chosen] > 0
    if not positive.all():
        log.warning("only %d of %d requested cells have positive score", int(positive.sum()), k)
        chosen = chosen[positive]
    inside = np.zeros(flat_box.size, dtype=bool)
    inside[chosen] = True
    return Mask(box.grid, inside.reshape(box.grid.cell_shape), box)


def penalty_potential(box: Mask, omega: Mask, penalty: float, phi: np.ndarray | None) -> np.ndarray:
    """Node potential ``penalty * exp(-phi)`` weighted by the share of outside cells at each node."""
    frac = cell_fraction_outside(omega.inside) - cell_fraction_outside(box.inside)
    frac = np.clip(frac, 0.0, 1.0)
    pot = penalty * frac
    if phi is not None:
        pot = pot * np.exp(-np.asarray(phi))
    return pot


def penalized_lambda(box: Mask, omega: Mask, penalty: float, phi: np.ndarray | None = None,
                     drift: np.ndarray | None = None, tol: float = DEFAULT_TOL,
                     tau: float | None = None) -> EigenResult:
    """Principal eigenpair on the whole box with potential ``penalty`` on ``box \\ omega``.

    Symmetric route (``-div(exp(-phi) grad u) + C 1_out exp(-phi) u``) unless a
    nonzero ``drift`` is given, in which case the upwinded drift operator plus
    ``C 1_out u`` is used.
    """
    if penalty < 0:
        raise ShapeOptError("penalty must be nonnegative")
    if drift is not None and np.any(drift):
        pot = penalty_potential(box, omega, penalty, None)
        return principal_eig_drift(box, drift, tau, tol, potential=pot)
    pot = penalty_potential(box, omega, penalty, phi)
    return principal_eig_selfadjoint(box, phi, tol, potential=pot)


def _hard_solve(omega: Mask, phi, drift, tau_opt, cfg) -> tuple[EigenResult, np.ndarray | None]:
    if tau_opt is not None:
        return optimal_drift_fixed_point(omega, tau_opt, cfg.tol_lambda, eig_tol=cfg.eig_tol)
    if drift is not None and np.any(drift):
        return principal_eig_drift(omega, drift, None, cfg.eig_tol), drift
    return principal_eig_selfadjoint(omega, phi, cfg.eig_tol), None


def _relaxed(box, omega, penalty, phi, drift, tau_opt, cfg) -> tuple[EigenResult, np.ndarray | None]:
    if tau_opt is None:
        return penalized_lambda(box, omega, penalty, phi, drift, cfg.eig_tol), drift
    pot = penalty_potential(box, omega, penalty, None)
    return optimal_drift_fixed_point(box, tau_opt, cfg.tol_lambda, potential=pot, eig_tol=cfg.eig_tol)


def _shape_loop(box: Mask, cfg: ShapeOptConfig, phi=None, drift=None, tau_opt=None,
                start: Mask | None = None) -> ShapeOptResult:
    if box.parent is not None:
        raise ShapeOptError("the box must be a top-level mask")
    if cfg.m >= measure(box):
        eig, V = _hard_solve(box, phi, drift, tau_opt, cfg)
        return ShapeOptResult(box, eig, [eig.lam], [measure(box)], [0.0], [True], 0.0, True, V)

    if start is None:
        eig_box, _ = _hard_solve(box, phi, drift, tau_opt, cfg)
        omega = project_measure(node_to_cell(eig_box.u), box, cfg.m)
        lam_box = eig_box.lam
    else:
        omega = start.with_parent(box)
        lam_box = None
    if lam_box is None:
        lam_box = _hard_solve(box, phi, drift, tau_opt, cfg)[0].lam
    penalty = cfg.start_factor * lam_box if cfg.penalty_start is None else cfg.penalty_start
    target = max(penalty, cfg.target_factor * lam_box)

    result = ShapeOptResult(omega, None)
    current, V = _relaxed(box, omega, penalty, phi, drift, tau_opt, cfg)
    result.lambda_history.append(current.lam)
    result.measure_history.append(measure(omega))
    result.penalty_history.append(penalty)
    result.accepted.append(True)
    converged = False
    for _ in range(cfg.max_outer):
        proposal = project_measure(node_to_cell(current.u), box, cfg.m)
        if symmetric_difference(proposal, omega) <= cfg.stable_cells:
            if penalty >= target:
                converged = True
                break
            penalty = min(penalty * cfg.penalty_growth, target)
            current, V = _relaxed(box, omega, penalty, phi, drift, tau_opt, cfg)
            result.lambda_history.append(current.lam)
            result.measure_history.append(measure(omega))
            result.penalty_history.append(penalty)
            result.accepted.append(True)
            continue
        trial, V_trial = _relaxed(box, proposal, penalty, phi, drift, tau_opt, cfg)
        accept = trial.lam < current.lam
        result.lambda_history.append(trial.lam)
        result.measure_history.append(measure(proposal))
        result.penalty_history.append(penalty)
        result.accepted.append(accept)
        if accept:
            omega, current, V = proposal, trial, V_trial
            continue
        penalty *= cfg.penalty_growth
        if penalty > cfg.penalty_max:
            log.info("penalty cap reached without an admissible decrease")
            break
        current, V = _relaxed(box, omega, penalty, phi, drift, tau_opt, cfg)
    else:
        log.info("shape loop hit max_outer=%d", cfg.max_outer)

    eig, V_final = _hard_solve(omega, phi, drift, tau_opt, cfg)
    result.omega = omega
    result.eig = eig
    result.penalty_final = penalty
    result.converged = converged
    result.drift = V_final
    return result


def optimize_shape_fixed_drift(box: Mask, cfg: ShapeOptConfig, phi: np.ndarray | None = None,
                               drift: np.ndarray | None = None, start: Mask | None = None) -> ShapeOptResult:
    """Minimize the principal eigenvalue over masks in ``box`` of measure ``cfg.m``.

    Either a potential ``phi`` (gradient drift, symmetric problem) or a generic
    ``drift`` field may be given; both default to zero.
    """
    if phi is not None and drift is not None:
        raise ShapeOptError("give either phi or drift, not both")
    return _shape_loop(box, cfg, phi=phi, drift=drift, start=start)


def joint_optimize(box: Mask, cfg: ShapeOptConfig, tau: float,
                   start: Mask | None = None) -> tuple[ShapeOptResult, np.ndarray]:
    """Minimize over masks of measure ``cfg.m`` and drifts with ``|V| <= tau``.

    Every candidate mask is scored through its optimal drift: the relaxed
    problem on the box is solved by the optimal-drift fixed point, and the
    final mask gets a hard-mask fixed point.  ``tau = 0`` reduces exactly to
    :func:`optimize_shape_fixed_drift` with no drift.
    """
    if tau < 0:
        raise ShapeOptError("tau must be nonnegative")
    grid = box.grid
    if tau == 0:
        res = optimize_shape_fixed_drift(box, cfg, start=start)
        V = np.zeros((grid.dim,) + grid.node_shape)
        res.drift = V
        return res, V
    res = _shape_loop(box, cfg, tau_opt=tau, start=start)
    return res, res.drift


def best_fit_disk(omega: Mask, m: float | None = None) -> tuple[Mask, np.ndarray, float]:
    """Disk of measure ``m`` (default: the mask's) minimizing the symmetric difference.

    The center is searched on a small lattice of half-cell shifts around the
    mask centroid.  Returns ``(disk_mask, center, radius)``.
    """
    from .radial import ball_radius_for_measure

    g = omega.grid
    if g.dim != 2:
        raise ValueError("best_fit_disk is 2-D only")
    m = measure(omega) if m is None else m
    radius = ball_radius_for_measure(m, 2)
    xc = [c[omega.inside].mean() for c in g.cell_centers()]
    best = None
    for dx in np.arange(-1.0, 1.01, 0.5) * g.h[0]:
        for dy in np.arange(-1.0, 1.01, 0.5) * g.h[1]:
            center = np.array([xc[0] + dx, xc[1] + dy])
            disk = Mask(g, _disk_cells(g, center, radius))
            diff = symmetric_difference(disk, omega)
            if best is None or diff < best[0]:
                best = (diff, disk, center)
    return best[1], best[2], radius


def _disk_cells(g, center, radius):
    cx, cy = g.cell_centers()
    return (cx - center[0]) ** 2 + (cy - center[1]) ** 2 < radius**2


def radial_alignment(V: np.ndarray, omega: Mask, center, grad_norm: np.ndarray, grad_tol: float = 1e-8) -> np.ndarray:
    """Angles (degrees) between the drift and the outward radial direction at active nodes."""
    g = omega.grid
    x, y = g.node_coords()
    rx, ry = x - center[0], y - center[1]
    rn = np.hypot(rx, ry)
    vn = np.hypot(V[0], V[1])
    nodes = omega.interior_nodes() & (grad_norm > grad_tol * grad_norm.max()) & (vn > 0) & (rn > 0)
    cosang = (V[0] * rx + V[1] * ry)[nodes] / (vn * rn)[nodes]
    return np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))


# -- empirical small-scale multiplier check ----------------------------------

def epsilon_curve(box: Mask, u: np.ndarray, lam_m: float, Lambda: float, radii, n_samples: int = 50,
                  phi: np.ndarray | None = None, seed: int = 0, omega: Mask | None = None) -> dict[float, dict]:
    """Empirical slack in ``J(u) - J(v) <= (Lambda + eps) (|Omega_v| - |Omega_u|)`` at scale ``r``.

    For each sample a ball ``B_r`` is centered at a random free-boundary cell.
    The competitor support is ``Omega`` plus every outside cell of the box
    whose center lies in ``B_r`` and that shares a face with ``Omega``; the
    competitor ``v`` minimizes the discrete ``J`` among functions on that
    support that equal ``u`` outside ``B_r``.  The slack needed by ``v`` is
    ``(J(u) - J(v)) / (|Omega_v| - |Omega_u|) - Lambda``; the curve reports
    its median and maximum per radius.
    """
    from scipy.sparse.linalg import spsolve

    from .grid import boundary_cells
    from .pde import assemble_weighted_laplacian, mass_weights

    g = box.grid
    rng = np.random.default_rng(seed)
    if omega is None:
        omega = Mask(g, node_to_cell(u) > 0, box)
    cells = boundary_cells(omega)
    if cells.size == 0:
        raise ShapeOptError("no free boundary")
    A = assemble_weighted_laplacian(box, phi)
    K = (A.matrix - lam_m * _diag(mass_weights(box, phi))).tocsr()
    ub = A.gather(u)
    Ju = float(ub @ (K @ ub))
    node_xy = np.stack([c.ravel(order="F")[A.nodes] for c in g.node_coords()], axis=1)
    cell_xy = g.cell_centers()
    outside = box.inside & ~omega.inside
    touch = np.zeros_like(outside)
    for k in range(g.dim):
        for step in (-1, 1):
            touch |= np.roll(omega.inside, step, axis=k) & _valid_shift(g.cell_shape, k, step)
    grow_ok = outside & touch
    centers_all = np.stack([c[tuple(cells.T)] for c in cell_xy], axis=1)
    out = {}
    for r in radii:
        eps = []
        for _ in range(n_samples):
            c = centers_all[rng.integers(len(centers_all))]
            in_ball = sum((cell_xy[k] - c[k]) ** 2 for k in range(g.dim)) < r * r
            added = grow_ok & in_ball
            if not added.any():
                continue
            support = Mask(g, omega.inside | added, box)
            free_nodes = A.gather(support.interior_nodes()).astype(bool)
            free_nodes &= ((node_xy - c) ** 2).sum(axis=1) < r * r
            F = np.flatnonzero(free_nodes)
            v = ub.copy()
            v[F] = 0.0
            rhs = -(K[F] @ v)
            v[F] = spsolve(K[F][:, F].tocsc(), rhs)
            Jv = float(v @ (K @ v))
            eps.append((Ju - Jv) / (added.sum() * g.cell_volume) - Lambda)
        eps = np.asarray(eps)
        out[float(r)] = {
            "median": float(np.median(eps)) if eps.size else math.nan,
            "max": float(eps.max()) if eps.size else math.nan,
            "samples": int(eps.size),
        }
    return out


def _diag(values):
    import scipy.sparse as sp

    return sp.diags(values)


def _valid_shift(shape, k, step):
    """Cells whose rolled neighbor along axis ``k`` is a genuine neighbor (no wrap-around)."""
    ok = np.ones(shape, dtype=bool)
    idx = [slice(None)] * len(shape)
    idx[k] = 0 if step > 0 else -1
    ok[tuple(idx)] = False
    return ok
