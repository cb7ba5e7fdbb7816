"""Radial reference solutions on balls and analytic anchors.

The principal eigenfunction on a ball ``B_R`` with the outward drift
``tau x/|x|`` is radial and solves

    -u'' - ((d-1)/r) u' + tau u' = lam u   on (0, R),   u'(0) = 0,  u(R) = 0.

This is discretized by centered differences on ``n`` intervals; the row at the
origin uses the limit ``(d-1)/r u' -> (d-1) u''`` which turns the Laplacian
into ``-d u''(0) ~ -2d (u_1 - u_0) / h^2``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded

GOLDEN_PATH = Path(__file__).with_name("data") / "golden" / "v1" / "radial.csv"
GOLDEN_HEADER = ("d", "R", "tau", "lambda", "slope_at_R", "n_nodes")
# (d, R, tau) rows committed to the golden file
GOLDEN_TABLE = [
    (2, 1.0, 0.0),
    (2, 1.0, 0.5),
    (2, 1.0, 1.0),
    (2, 1.0, 2.0),
    (2, 0.5, 0.0),
    (2, 0.5, 1.0),
    (3, 1.0, 0.0),
    (3, 1.0, 1.0),
]


NOISE_ITERATIONS = 60


class OracleError(RuntimeError):
    pass


@dataclass
class RadialSolution:
    d: int
    R: float
    tau: float
    lam: float
    r: np.ndarray
    u: np.ndarray
    slope_at_R: float
    n_nodes: int

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        """Evaluate the profile at radii ``rho`` (zero beyond R)."""
        rho = np.asarray(rho, dtype=float)
        return np.where(rho < self.R, np.interp(rho, self.r, self.u), 0.0)


def sphere_area(d: int) -> float:
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def ball_radius_for_measure(m: float, d: int = 2) -> float:
    if m <= 0:
        raise ValueError("measure must be positive")
    return (m / ball_volume(d)) ** (1.0 / d)


def separable_lambda(*sides: float) -> float:
    """Dirichlet Laplacian principal eigenvalue of a box with the given side lengths."""
    if any(s <= 0 for s in sides):
        raise ValueError("side lengths must be positive")
    return math.pi**2 * sum(1.0 / s**2 for s in sides)


def _banded(d: int, R: float, tau: float, n: int) -> tuple[np.ndarray, float]:
    h = R / n
    r = h * np.arange(n)
    ab = np.zeros((3, n))
    ab[1, :] = 2.0 / h**2
    ab[1, 0] = 2.0 * d / h**2
    ab[0, 1] = -2.0 * d / h**2
    ri = r[1:]
    sub = -1.0 / h**2 + (d - 1) / (2 * ri * h) - tau / (2 * h)
    sup = -1.0 / h**2 - (d - 1) / (2 * ri * h) + tau / (2 * h)
    ab[2, :-1] = sub  # coefficient of u_{i-1} in row i
    ab[0, 2:] = sup[:-1]  # coefficient of u_{i+1} in row i (u_n = 0 dropped)
    return ab, h


def _apply(ab: np.ndarray, x: np.ndarray) -> np.ndarray:
    y = ab[1] * x
    y[:-1] += ab[0, 1:] * x[1:]
    y[1:] += ab[2, :-1] * x[:-1]
    return y


def _inverse_iteration(ab: np.ndarray, maxiter: int = 500, tol: float = 1e-13) -> tuple[float, np.ndarray]:
    x = np.ones(ab.shape[1])
    x /= np.linalg.norm(x)
    lam_old = math.inf
    for it in range(maxiter):
        y = solve_banded((1, 1), ab, x)
        lam = float(1.0 / (x @ y))
        y /= np.linalg.norm(y)
        if y[0] < 0:
            y = -y
        x = y
        step = abs(lam - lam_old)
        if step <= tol * abs(lam):
            return lam, x
        # on fine meshes round-off in the nonsymmetric solve sets a noise floor
        if it >= NOISE_ITERATIONS and step <= 1e-8 * abs(lam):
            return lam, x
        lam_old = lam
    raise OracleError("radial inverse iteration did not converge")


def _solve_level(d: int, R: float, tau: float, n: int):
    ab, h = _banded(d, R, tau, n)
    lam, x = _inverse_iteration(ab)
    r = h * np.arange(n + 1)
    u = np.append(x, 0.0)
    weight = r ** (d - 1) * np.exp(-tau * r)
    norm2 = sphere_area(d) * np.trapezoid(u**2 * weight, r)
    u /= math.sqrt(norm2)
    slope = (3 * u[n] - 4 * u[n - 1] + u[n - 2]) / (2 * h)
    return lam, r, u, slope


def radial_eigen(d: int, R: float, tau: float, n_nodes: int = 4000, agree_tol: float = 1e-5) -> RadialSolution:
    """Principal eigenpair on ``B_R`` with drift ``tau x/|x|``.

    Solves on ``n`` and ``2n`` intervals and reports the Richardson limit
    ``(4 lam_2n - lam_n) / 3``.  The profile is normalized by
    ``int_B u^2 exp(-tau |x|) dx = 1``.
    """
    if d not in (1, 2, 3):
        raise ValueError("d must be 1, 2 or 3")
    if R <= 0 or tau < 0:
        raise ValueError("need R > 0 and tau >= 0")
    if n_nodes < 1000:
        raise ValueError("n_nodes must be at least 1000")
    lam1, _, _, _ = _solve_level(d, R, tau, n_nodes)
    lam2, r, u, slope = _solve_level(d, R, tau, 2 * n_nodes)
    if abs(lam1 - lam2) > agree_tol * abs(lam2):
        raise OracleError(f"oracle unresolved: {lam1} vs {lam2}")
    lam = (4 * lam2 - lam1) / 3
    return RadialSolution(d, R, tau, lam, r, u, slope, n_nodes)


def write_golden(path: str | Path = GOLDEN_PATH, table=GOLDEN_TABLE, n_nodes: int = 100_000,
                 agree: float = 1e-6) -> list[tuple]:
    """Regenerate the golden file; every row must agree between ``n`` and ``2n`` to ``agree``."""
    from .fileio import write_csv

    rows = []
    for d, R, tau in table:
        a = radial_eigen(d, R, tau, n_nodes)
        b = radial_eigen(d, R, tau, 2 * n_nodes)
        if abs(a.lam - b.lam) > agree * abs(b.lam):
            raise OracleError(f"golden row {(d, R, tau)} unresolved: {a.lam} vs {b.lam}")
        rows.append((d, float(R), float(tau), b.lam, b.slope_at_R, 2 * n_nodes))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(path, GOLDEN_HEADER, rows)
    return rows


def load_golden(path: str | Path = GOLDEN_PATH) -> dict[tuple[int, float, float], dict]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["d"]), float(row["R"]), float(row["tau"]))
            out[key] = {
                "lambda": float(row["lambda"]),
                "slope_at_R": float(row["slope_at_R"]),
                "n_nodes": int(row["n_nodes"]),
            }
    return out


def golden_lambda(d: int, R: float, tau: float, path: str | Path = GOLDEN_PATH) -> float:
    table = load_golden(path)
    key = (int(d), float(R), float(tau))
    if key in table:
        return table[key]["lambda"]
    # tau = 0 rows scale exactly like R^-2
    if tau == 0:
        for (dd, RR, tt), row in table.items():
            if dd == d and tt == 0:
                return row["lambda"] * (RR / R) ** 2
    raise KeyError(f"no golden value for {key}")
