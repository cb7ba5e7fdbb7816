"""Principal eigenpairs, the optimal-drift fixed point, torsion functions."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Mask, connected_components
from .pde import (
    Factorized,
    Operator,
    assemble_drift_operator,
    assemble_weighted_laplacian,
    coercivity_shift,
    gradient,
    mass_weights,
    solve_spd,
)

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
RESIDUAL_FLOOR = 1e-12


class EigenSolveError(RuntimeError):
    pass


class FixedPointError(EigenSolveError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(f"{message}; lambda history tail {history[-5:]}")
        self.history = history


@dataclass
class EigenResult:
    lam: float
    u: np.ndarray  # node array, zero off the domain
    residual: float
    iterations: int
    normalization: str  # "L2_weighted" or "L2_plain"
    components: int = 1
    extra: dict = field(default_factory=dict)

    def csv_row(self) -> tuple:
        return (self.lam, self.residual, self.iterations, self.normalization)


def _power_loop(op: Operator, rhs_weight: np.ndarray, pair_weight: np.ndarray, lam_of, tol: float,
                maxiter: int, solver: str, shift: float = 0.0):
    """Inverse iteration ``x <- op^{-1} (w * x)`` from the all-ones vector.

    Returns ``(lam, x, residual, iterations)`` with ``x`` normalized in the
    ``pair_weight`` inner product.
    """
    if solver == "lu":
        solve = Factorized(op).solve
    elif solver == "krylov":
        from .pde import solve_nonsym

        inner = max(tol / 10, 1e-14)
        solve = (lambda b: solve_spd(op, b, inner)) if op.symmetric else (lambda b: solve_nonsym(op, b, inner))
    else:
        raise ValueError(f"unknown solver {solver!r}")
    x = np.ones(op.size)
    x /= math.sqrt(x @ (pair_weight * x))
    lam_old = math.inf
    A = op.matrix
    for it in range(1, maxiter + 1):
        y = solve(rhs_weight * x)
        y /= math.sqrt(y @ (pair_weight * y))
        if y.sum() < 0:
            y = -y
        x = y
        Ax = A @ x
        lam = lam_of(x, Ax)
        r = Ax - (lam + shift) * (rhs_weight * x)
        scale = abs(lam + shift) * np.linalg.norm(rhs_weight * x)
        residual = float(np.linalg.norm(r) / scale) if scale > 0 else math.inf
        if abs(lam - lam_old) <= tol * abs(lam) and residual <= max(tol, RESIDUAL_FLOOR):
            return lam, x, residual, it
        lam_old = lam
    raise EigenSolveError(f"inverse iteration did not converge in {maxiter} steps (residual {residual:.2e})")


def principal_eig_selfadjoint(mask: Mask, phi: np.ndarray | None = None, tol: float = DEFAULT_TOL,
                              maxiter: int = 2000, solver: str = "lu",
                              potential: np.ndarray | None = None) -> EigenResult:
    """Smallest eigenpair of ``-div(exp(-phi) grad u) = lam exp(-phi) u`` on the mask.

    ``potential`` adds a zeroth-order term ``potential * u`` to the left side.
    The eigenfunction is nonnegative and normalized so that
    ``sum(exp(-phi) u^2) * cell_volume = 1``.
    """
    A = assemble_weighted_laplacian(mask, phi, potential)
    m = mass_weights(mask, phi)
    ncomp = connected_components(A.node_mask)
    if ncomp > 1:
        log.warning("domain has %d connected components; lambda is the minimum over them", ncomp)

    def rayleigh(x, Ax):
        return float((x @ Ax) / (x @ (m * x)))

    lam, x, residual, its = _power_loop(A, m, m, rayleigh, tol, maxiter, solver)
    return EigenResult(lam, A.scatter(x), residual, its, "L2_weighted", ncomp)


def principal_eig_drift(mask: Mask, drift: np.ndarray | None, tau: float | None = None,
                        tol: float = DEFAULT_TOL, maxiter: int = 2000, solver: str = "lu",
                        potential: np.ndarray | None = None) -> EigenResult:
    """Principal eigenpair of ``-lap u + V . grad u`` (upwinded) on the mask.

    Inverse iteration runs on the shifted operator ``L + c`` with ``c`` from
    :func:`coercivity_shift`; the eigenvalue is the pairing
    ``<L u, u> / <u, u>`` in the plain (cell-volume weighted) inner product.
    """
    g = mask.grid
    if drift is not None:
        drift = np.asarray(drift, dtype=float)
        vmax = float(np.sqrt((drift**2).sum(axis=0)).max())
    else:
        vmax = 0.0
    if tau is None:
        tau = vmax
    if vmax > tau + 1e-12:
        raise ValueError(f"drift sup-norm {vmax} exceeds tau={tau}")
    c = coercivity_shift(tau, 0.5)
    op = assemble_drift_operator(mask, drift, c, potential)
    m = np.full(op.size, g.cell_volume)
    ncomp = connected_components(op.node_mask)

    def pairing(x, Ax):
        return float((x @ Ax) / (x @ (m * x))) - c

    lam, x, residual, its = _power_loop(op, m, m, pairing, tol, maxiter, solver, shift=c)
    if x.min() < -1e-6 * np.abs(x).max():
        raise EigenSolveError("lost positivity")
    return EigenResult(lam, op.scatter(x), residual, its, "L2_plain", ncomp, {"shift": c})


def godunov_drift(u: np.ndarray, grid, tau: float, node_mask: np.ndarray | None = None,
                  grad_tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Drift of length ``tau`` that minimizes the upwinded ``V . grad u`` at each node.

    Along each axis the backward difference rewards ``V_k > 0`` when it is
    negative and the forward difference rewards ``V_k < 0`` when it is
    positive; the best of the two gives a one-sided gradient ``g`` and the
    minimizing drift is ``-tau g / |g|`` (zero where ``|g|`` is below
    ``grad_tol * max |g|``).  Returns ``(V, |g|)``.
    """
    d = grid.dim
    gain = np.zeros((d,) + u.shape)
    sign = np.zeros((d,) + u.shape)
    for k in range(d):
        dm = np.zeros_like(u)
        dp = np.zeros_like(u)
        sl_hi = [slice(None)] * d
        sl_lo = [slice(None)] * d
        sl_hi[k] = slice(1, None)
        sl_lo[k] = slice(None, -1)
        diff = np.diff(u, axis=k) / grid.h[k]
        dm[tuple(sl_hi)] = diff  # backward difference at nodes 1..n
        dp[tuple(sl_lo)] = diff  # forward difference at nodes 0..n-1
        back = np.maximum(-dm, 0.0)
        fwd = np.maximum(dp, 0.0)
        gain[k] = np.maximum(back, fwd)
        sign[k] = np.where(back >= fwd, 1.0, -1.0)
    gnorm = np.sqrt((gain**2).sum(axis=0))
    if node_mask is not None:
        gnorm = np.where(node_mask, gnorm, 0.0)
    gmax = gnorm.max()
    active = gnorm > grad_tol * gmax if gmax > 0 else np.zeros_like(gnorm, dtype=bool)
    V = np.zeros_like(gain)
    safe = np.where(active, gnorm, 1.0)
    for k in range(d):
        V[k] = np.where(active, sign[k] * tau * gain[k] / safe, 0.0)
    return V, gnorm


def nonlinear_residual(mask: Mask, u: np.ndarray, lam: float, tau: float) -> float:
    """``||-lap u - tau |grad u| - lam u|| / ||u||`` over the unknowns (central gradient)."""
    g = mask.grid
    A = assemble_weighted_laplacian(mask)
    lap = A.apply(u) / g.cell_volume
    gn = np.sqrt((gradient(u, g) ** 2).sum(axis=0))
    r = (lap - tau * gn - lam * u)[A.node_mask]
    return float(np.linalg.norm(r) / np.linalg.norm(u[A.node_mask]))


def optimal_drift_fixed_point(mask: Mask, tau: float, tol: float = DEFAULT_TOL, grad_tol: float = 1e-8,
                              max_iter: int = 200, potential: np.ndarray | None = None,
                              eig_tol: float | None = None) -> tuple[EigenResult, np.ndarray]:
    """Minimize the principal eigenvalue over drifts with ``|V| <= tau`` on a fixed mask.

    Alternates ``V_k = -tau grad u_k / |grad u_k|`` (one-sided gradients, see
    :func:`godunov_drift`) with the principal eigenpair of the drift operator
    for ``V_k``.  Each step cannot raise the eigenvalue for an M-matrix, so a
    rise beyond round-off engages damping ``V <- (V_old + V_new) / 2``.
    The returned result carries ``extra['nonlinear_residual']`` and the
    eigenvalue history.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    eig_tol = tol if eig_tol is None else eig_tol
    grid = mask.grid
    if tau == 0:
        res = principal_eig_drift(mask, None, 0.0, eig_tol, potential=potential)
        res.extra["history"] = [res.lam]
        res.extra["nonlinear_residual"] = nonlinear_residual(mask, res.u, res.lam, 0.0)
        return res, np.zeros((grid.dim,) + grid.node_shape)
    node_mask = mask.interior_nodes()
    res = principal_eig_drift(mask, None, tau, eig_tol, potential=potential)
    history = [res.lam]
    V = np.zeros((grid.dim,) + grid.node_shape)
    damping = False
    for it in range(1, max_iter + 1):
        V_new, _ = godunov_drift(res.u, grid, tau, node_mask if potential is None else None, grad_tol)
        V_try = 0.5 * (V + V_new) if damping else V_new
        new = principal_eig_drift(mask, V_try, tau, eig_tol, potential=potential)
        if new.lam > res.lam * (1 + 1e-10) and not damping:
            log.debug("non-monotone step %.12g -> %.12g, damping engaged", res.lam, new.lam)
            damping = True
            V_try = 0.5 * (V + V_new)
            new = principal_eig_drift(mask, V_try, tau, eig_tol, potential=potential)
        history.append(new.lam)
        done = abs(new.lam - res.lam) <= tol * abs(res.lam)
        res, V = new, V_try
        if done:
            res.extra["history"] = history
            res.extra["fixed_point_iterations"] = it
            res.extra["nonlinear_residual"] = nonlinear_residual(mask, res.u, res.lam, tau)
            return res, V
    raise FixedPointError("optimal-drift fixed point did not settle", history)


def torsion(mask: Mask, phi: np.ndarray | None = None, tol: float = 1e-12) -> np.ndarray:
    """Solution of ``-div(exp(-phi) grad w) = 1`` on the mask, zero elsewhere."""
    A = assemble_weighted_laplacian(mask, phi)
    b = np.full(A.size, mask.grid.cell_volume)
    w = Factorized(A).solve(b)
    resid = np.linalg.norm(A.matrix @ w - b) / np.linalg.norm(b)
    if resid > tol:
        w = solve_spd(A, b, tol)
    return A.scatter(w)


def gamma_distance(mask1: Mask, mask2: Mask, phi: np.ndarray | None = None) -> float:
    """Weighted L2 distance between the torsion functions of two masks on one grid."""
    if mask1.grid != mask2.grid:
        raise ValueError("masks live on different grids")
    g = mask1.grid
    w1 = torsion(mask1, phi) if mask1.count else g.zeros()
    w2 = torsion(mask2, phi) if mask2.count else g.zeros()
    weight = np.ones(g.node_shape) if phi is None else np.exp(-np.asarray(phi))
    return float(math.sqrt(g.cell_volume * np.sum(weight * (w1 - w2) ** 2)))
