"""Discrete elliptic operators on mask nodes and the linear solvers that invert them.

Every operator acts on the unknown nodes of a mask (see :mod:`dso.grid`) and is
scaled by the cell volume, so ``u @ A @ u`` approximates the continuous
quadratic form.  With this scaling the 2-D Laplacian row at a node away from
the boundary reads ``(4, -1, -1, -1, -1)`` for square cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, Mask


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float = math.nan, iterations: int = 0):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class EmptyDomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Operator:
    """Sparse matrix on the unknown nodes of ``mask``."""

    matrix: sp.csr_matrix
    mask: Mask
    node_mask: np.ndarray  # bool node array of unknowns
    nodes: np.ndarray  # flat (Fortran order) indices of unknowns, ascending
    symmetric: bool

    @property
    def grid(self) -> Grid:
        return self.mask.grid

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def gather(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u).ravel(order="F")[self.nodes]

    def scatter(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.num_nodes)
        out[self.nodes] = x
        return out.reshape(self.grid.node_shape, order="F")

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Apply to a node array; the result is a node array (zero off the unknowns)."""
        return self.scatter(self.matrix @ self.gather(u))


def _unknowns(mask: Mask) -> tuple[np.ndarray, np.ndarray, tuple[np.ndarray, ...], np.ndarray]:
    node_mask = mask.interior_nodes()
    if not node_mask.any():
        raise EmptyDomainError("empty domain")
    shape = node_mask.shape
    flat = np.flatnonzero(node_mask.ravel(order="F"))
    coords = np.unravel_index(flat, shape, order="F")
    index = np.full(node_mask.size, -1, dtype=np.int64)
    index[flat] = np.arange(flat.size)
    return node_mask, flat, coords, index


def _neighbor(coords, k: int, step: int, shape) -> np.ndarray:
    shifted = list(coords)
    shifted[k] = coords[k] + step
    return np.ravel_multi_index(tuple(shifted), shape, order="F")


def _build(mask, node_mask, flat, diag, offdiag, symmetric) -> Operator:
    n = flat.size
    rows = [np.arange(n)] + [r for r, _, _ in offdiag]
    cols = [np.arange(n)] + [c for _, c, _ in offdiag]
    vals = [diag] + [v for _, _, v in offdiag]
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    matrix.sort_indices()
    return Operator(matrix=matrix, mask=mask, node_mask=node_mask, nodes=flat, symmetric=symmetric)


def face_weights(a: np.ndarray, k: int) -> np.ndarray:
    """Harmonic mean of ``a`` across every face normal to axis ``k``."""
    lo = np.take(a, np.arange(a.shape[k] - 1), axis=k)
    hi = np.take(a, np.arange(1, a.shape[k]), axis=k)
    return 2.0 * lo * hi / (lo + hi)


def assemble_weighted_laplacian(
    mask: Mask, phi: np.ndarray | None = None, potential: np.ndarray | None = None
) -> Operator:
    """Discrete ``-div(exp(-phi) grad u)`` with homogeneous Dirichlet data off the mask.

    ``potential`` (node array) adds ``potential * u`` as a zeroth-order term.
    """
    grid = mask.grid
    node_mask, flat, coords, index = _unknowns(mask)
    shape = grid.node_shape
    weight = np.ones(shape) if phi is None else np.exp(-np.asarray(phi, dtype=float))
    vol = grid.cell_volume
    diag = np.zeros(flat.size)
    offdiag = []
    for k in range(grid.dim):
        scale = vol / grid.h[k] ** 2
        wf = face_weights(weight, k)
        left = list(coords)
        left[k] = coords[k] - 1
        w_right = wf[coords] * scale
        w_left = wf[tuple(left)] * scale
        diag += w_left + w_right
        for step, w in ((-1, w_left), (1, w_right)):
            nb = index[_neighbor(coords, k, step, shape)]
            keep = nb >= 0
            offdiag.append((np.flatnonzero(keep), nb[keep], -w[keep]))
    if potential is not None:
        diag += vol * np.asarray(potential, dtype=float).ravel(order="F")[flat]
    return _build(mask, node_mask, flat, diag, offdiag, symmetric=True)


def assemble_drift_operator(
    mask: Mask, drift: np.ndarray | None, c: float = 0.0, potential: np.ndarray | None = None
) -> Operator:
    """Discrete ``-lap u + V . grad u + c u`` with first-order upwinding of the drift.

    ``drift`` has shape ``(d, *node_shape)``; at each node the sign of ``V_k``
    selects the backward (``V_k > 0``) or forward difference along axis ``k``.
    Off-diagonal entries are never positive, so the matrix is an M-matrix.
    """
    grid = mask.grid
    if c < 0:
        raise ValueError("shift c must be nonnegative")
    node_mask, flat, coords, index = _unknowns(mask)
    shape = grid.node_shape
    vol = grid.cell_volume
    diag = np.full(flat.size, vol * c)
    offdiag = []
    for k in range(grid.dim):
        lap = vol / grid.h[k] ** 2
        vk = np.zeros(flat.size) if drift is None else np.asarray(drift[k], dtype=float)[coords]
        upw = vol * np.abs(vk) / grid.h[k]
        diag += 2 * lap + upw
        w_left = lap + np.where(vk > 0, upw, 0.0)
        w_right = lap + np.where(vk < 0, upw, 0.0)
        for step, w in ((-1, w_left), (1, w_right)):
            nb = index[_neighbor(coords, k, step, shape)]
            keep = nb >= 0
            offdiag.append((np.flatnonzero(keep), nb[keep], -w[keep]))
    if potential is not None:
        diag += vol * np.asarray(potential, dtype=float).ravel(order="F")[flat]
    return _build(mask, node_mask, flat, diag, offdiag, symmetric=drift is None or not np.any(drift))


def mass_weights(mask: Mask, phi: np.ndarray | None = None) -> np.ndarray:
    """Lumped mass ``exp(-phi) * cell_volume`` at the unknowns of ``mask``."""
    node_mask = mask.interior_nodes()
    flat = np.flatnonzero(node_mask.ravel(order="F"))
    vol = mask.grid.cell_volume
    if phi is None:
        return np.full(flat.size, vol)
    return np.exp(-np.asarray(phi, dtype=float).ravel(order="F")[flat]) * vol


def coercivity_shift(tau: float, delta: float = 0.5) -> float:
    """Smallest shift c making the drift form coercive with constant ``delta``."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return delta + tau**2 / (4.0 * (1.0 - delta))


def gradient(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Nodal gradient: central differences inside the grid, one-sided at its edges.

    ``u`` is the zero extension of a mask field, so differences across the
    mask boundary see the Dirichlet value 0.
    """
    u = np.asarray(u, dtype=float)
    return np.stack(np.gradient(u, *grid.h, edge_order=1))


def cell_gradient(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Gradient of the multilinear interpolant at cell centers, shape ``(d, *cell_shape)``."""
    u = np.asarray(u, dtype=float)
    d = grid.dim
    out = []
    for k in range(d):
        diff = np.diff(u, axis=k) / grid.h[k]
        for j in range(d):
            if j != k:
                diff = 0.5 * (np.take(diff, np.arange(diff.shape[j] - 1), axis=j)
                              + np.take(diff, np.arange(1, diff.shape[j]), axis=j))
        out.append(diff)
    return np.stack(out)


def _matrix(A) -> sp.csr_matrix:
    return A.matrix if isinstance(A, Operator) else sp.csr_matrix(A)


def default_maxiter(n: int) -> int:
    return int(500 * math.sqrt(max(n, 1)))


def solve_spd(A, b: np.ndarray, tol: float = 1e-10, maxiter: int | None = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients to relative residual ``tol``."""
    if isinstance(A, Operator) and not A.symmetric:
        raise ValueError("solve_spd needs a symmetric operator")
    M = _matrix(A)
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    maxiter = default_maxiter(b.size) if maxiter is None else maxiter
    dinv = 1.0 / M.diagonal()
    x = np.zeros_like(b)
    r = b.copy()
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = M @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            return x
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError("conjugate gradients hit the iteration cap", res, maxiter)


def solve_nonsym(A, b: np.ndarray, tol: float = 1e-10, maxiter: int | None = None) -> np.ndarray:
    """Right-Jacobi-preconditioned BiCGStab to relative residual ``tol``."""
    M = _matrix(A)
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    diag = M.diagonal()
    if np.any(diag <= 0):
        raise ValueError("solve_nonsym needs a positive diagonal")
    dinv = 1.0 / diag
    maxiter = default_maxiter(b.size) if maxiter is None else maxiter
    x = np.zeros_like(b)
    r = b.copy()
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    res = 1.0
    for it in range(1, maxiter + 1):
        rho_new = r_hat @ r
        if rho_new == 0.0 or omega == 0.0:
            raise SolverError("BiCGStab breakdown", res, it)
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        y = dinv * p
        v = M @ y
        denom = r_hat @ v
        if denom == 0.0:
            raise SolverError("BiCGStab breakdown", res, it)
        alpha = rho / denom
        s = r - alpha * v
        if np.linalg.norm(s) / bnorm <= tol:
            x += alpha * y
            return x
        z = dinv * s
        t = M @ z
        tt = t @ t
        omega = (t @ s) / tt if tt > 0 else 0.0
        x += alpha * y + omega * z
        r = s - omega * t
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            return x
    raise SolverError("BiCGStab hit the iteration cap", res, maxiter)


class Factorized:
    """Sparse LU factorization reused across many right-hand sides."""

    def __init__(self, A):
        self.matrix = _matrix(A)
        self._lu = spla.splu(self.matrix.tocsc())

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.asarray(b, dtype=float))
