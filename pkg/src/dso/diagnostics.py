"""Checks of the structural properties of a computed optimum ``(u, Omega, phi, lambda_m)``.

All volume integrals use cell-centered values: the gradient of the
multilinear interpolant at the cell center, the cell average of ``u``, and
``exp(-phi)`` at the cell average of ``phi``.  Integrals over balls weight
each cell by the fraction of a ``s x s`` sub-lattice of points that falls
inside the ball.  Circle integrals use 256 equally spaced angles and bilinear
interpolation.  The ball routines are implemented for ``d = 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .grid import Grid, Mask, boundary_cells, node_to_cell, perimeter_estimate
from .pde import cell_gradient

N_ANGLES = 256
SUBSAMPLE = 8


class DiagnosticsError(ValueError):
    pass


# -- cell quadrature ---------------------------------------------------------

def _phi_cells(phi, grid: Grid):
    if phi is None:
        return np.zeros(grid.cell_shape), np.zeros((grid.dim,) + grid.cell_shape)
    phi = np.asarray(phi, dtype=float)
    return node_to_cell(phi), cell_gradient(phi, grid)


def energy_density(u: np.ndarray, grid: Grid, phi=None) -> np.ndarray:
    """``|grad u|^2 exp(-phi)`` per cell."""
    g = cell_gradient(u, grid)
    phic, _ = _phi_cells(phi, grid)
    return (g**2).sum(axis=0) * np.exp(-phic)


def cell_energy(u: np.ndarray, grid: Grid, lam_m: float, phi=None) -> float:
    """``J(u) = int |grad u|^2 exp(-phi) - lam_m int u^2 exp(-phi)`` by the cell rule."""
    phic, _ = _phi_cells(phi, grid)
    w = np.exp(-phic)
    uc = node_to_cell(u)
    gu = cell_gradient(u, grid)
    return float((((gu**2).sum(axis=0) - lam_m * uc**2) * w).sum() * grid.cell_volume)


def _check_support(xi: np.ndarray, grid: Grid, collar: int, box: Mask | None) -> None:
    allowed = np.zeros(grid.node_shape, dtype=bool)
    inner = tuple(slice(collar, k + 1 - collar) for k in grid.n)
    allowed[inner] = True
    if box is not None:
        allowed &= box.interior_nodes()
    if np.any(xi[:, ~allowed]):
        raise DiagnosticsError(f"test field must vanish on a {collar}-cell collar of the box")


def first_variation(u: np.ndarray, grid: Grid, xi: np.ndarray, lam_m: float, phi=None,
                    collar: int = 2, box: Mask | None = None) -> float:
    """Inner variation of ``J`` at ``u`` along ``xi`` by the cell-centered midpoint rule."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (grid.dim,) + grid.node_shape:
        raise DiagnosticsError("xi must be a nodal vector field")
    _check_support(xi, grid, collar, box)
    gu = cell_gradient(u, grid)
    uc = node_to_cell(u)
    phic, gphi = _phi_cells(phi, grid)
    w = np.exp(-phic)
    Dxi = np.stack([cell_gradient(xi[i], grid) for i in range(grid.dim)])  # Dxi[i, k] = d_k xi_i
    xic = np.stack([node_to_cell(xi[i]) for i in range(grid.dim)])
    quad = np.einsum("ik...,k...,i...->...", Dxi, gu, gu)
    div = np.einsum("ii...->...", Dxi)
    transport = (gphi * xic).sum(axis=0) - div
    integrand = (2 * quad + ((gu**2).sum(axis=0) - lam_m * uc**2) * transport) * w
    return float(integrand.sum() * grid.cell_volume)


def divergence_integral(xi: np.ndarray, grid: Grid, omega: Mask) -> float:
    """``int_Omega div xi`` by the cell rule."""
    div = sum(cell_gradient(xi[i], grid)[i] for i in range(grid.dim))
    return float(div[omega.inside].sum() * grid.cell_volume)


def bump_field(grid: Grid, center, width: float, direction) -> np.ndarray:
    """Tensor-product bump ``prod_k (1 - s_k^2)^2`` of half-width ``width`` times a fixed direction."""
    coords = grid.node_coords()
    psi = np.ones(grid.node_shape)
    for k in range(grid.dim):
        s = (coords[k] - center[k]) / width
        psi *= np.where(np.abs(s) < 1, (1 - s**2) ** 2, 0.0)
    direction = np.asarray(direction, dtype=float)
    return np.stack([direction[k] * psi for k in range(grid.dim)])


def _near_edge(cells: np.ndarray, grid: Grid, margin: int, box: Mask | None) -> np.ndarray:
    """Cells within ``margin`` cells of the grid edge or of a cell outside ``box``."""
    near = np.zeros(len(cells), dtype=bool)
    for k in range(grid.dim):
        near |= (cells[:, k] < margin) | (cells[:, k] >= grid.n[k] - margin)
    if box is not None and not box.inside.all():
        from scipy.ndimage import binary_dilation

        outside = binary_dilation(~box.inside, iterations=margin)
        near |= outside[tuple(cells.T)]
    return near


def free_boundary_cells(omega: Mask, margin: int = 1, box: Mask | None = None) -> np.ndarray:
    cells = boundary_cells(omega)
    box = omega.parent if box is None else box
    if cells.size == 0:
        return cells
    return cells[~_near_edge(cells, omega.grid, margin, box)]


def estimate_lagrange(u: np.ndarray, grid: Grid, omega: Mask, lam_m: float, phi=None, n_fields: int = 32,
                      seed: int = 0, widths: tuple[float, float] | None = None,
                      box: Mask | None = None) -> tuple[float, float]:
    """Least-squares multiplier from bump test fields near the free boundary.

    Half of the fields use each of the two ``widths`` (default ``6h`` and
    ``12h``).  Each field points along the local outward normal (the
    direction of ``-grad u`` averaged over the bump), turned by a seeded
    random angle of at most 45 degrees.  Returns ``(Lambda_hat, fit_residual)``.
    """
    h = grid.hmax
    widths = (6 * h, 12 * h) if widths is None else widths
    collar = 2
    margin = collar + int(math.ceil(max(widths) / min(grid.h))) + 1
    cells = free_boundary_cells(omega, margin, box)
    if cells.size == 0:
        raise DiagnosticsError("no free boundary away from the box")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(cells), size=n_fields, replace=len(cells) < n_fields)
    centers = np.stack([c[tuple(cells[pick].T)] for c in grid.cell_centers()], axis=1)
    gu = np.stack([node_to_cell(gk) for gk in _node_grad(u, grid)])
    a = np.empty(n_fields)
    b = np.empty(n_fields)
    for j in range(n_fields):
        width = widths[j % 2]
        psi = bump_field(grid, centers[j], width, np.ones(grid.dim))[0]
        normal = -np.array([(node_to_cell(psi) * gk).sum() for gk in gu])
        nn = np.linalg.norm(normal)
        normal = normal / nn if nn > 0 else np.eye(grid.dim)[0]
        if grid.dim == 2:
            ang = rng.uniform(-math.pi / 4, math.pi / 4)
            c, s = math.cos(ang), math.sin(ang)
            normal = np.array([c * normal[0] - s * normal[1], s * normal[0] + c * normal[1]])
        xi = np.stack([normal[k] * psi for k in range(grid.dim)])
        a[j] = first_variation(u, grid, xi, lam_m, phi, collar, box)
        b[j] = divergence_integral(xi, grid, omega)
    if np.all(np.abs(b) < 1e-12):
        raise DiagnosticsError("degenerate test family")
    lam_hat = float(a @ b / (b @ b))
    anorm = np.linalg.norm(a)
    misfit = float(np.linalg.norm(a - lam_hat * b) / anorm) if anorm > 0 else 0.0
    return lam_hat, misfit


def _node_grad(u, grid):
    return np.gradient(np.asarray(u, dtype=float), *grid.h, edge_order=1)


# -- free-boundary condition ---------------------------------------------------

def _touching_box_edge(omega: Mask, box: Mask | None) -> np.ndarray:
    cells = np.argwhere(omega.inside)
    if cells.size == 0:
        return np.zeros(omega.grid.cell_shape, dtype=bool)
    near = _near_edge(cells, omega.grid, 1, box)
    out = np.zeros(omega.grid.cell_shape, dtype=bool)
    out[tuple(cells[near].T)] = True
    return out


def boundary_gradient(u: np.ndarray, grid: Grid, omega: Mask, cells: np.ndarray,
                      band: tuple[float, float] = (2.0, 5.0), window: int = 6) -> np.ndarray:
    """``|grad u|`` at the free boundary, one value per listed cell.

    Next to a staircase boundary the discrete gradient is depressed in a layer
    a few cells thick, so values at the boundary cells themselves do not
    converge.  Instead the central-difference ``|grad u|`` at unknown nodes
    whose distance to the nearest Dirichlet node lies in ``band`` (in cells)
    is regressed linearly on that distance, within ``window`` nodes of the
    cell, and the fit is evaluated at distance 0.  Cells with fewer than two
    distinct distances in the band get NaN.
    """
    from scipy.ndimage import distance_transform_edt

    unknown = omega.interior_nodes()
    depth = distance_transform_edt(unknown)
    gn = np.sqrt(sum(gk**2 for gk in _node_grad(u, grid)))
    lo, hi = band
    out = np.full(len(cells), np.nan)
    for j, c in enumerate(cells):
        sl = tuple(slice(max(c[k] - window, 0), c[k] + window + 2) for k in range(grid.dim))
        dd = depth[sl]
        sel = (dd >= lo) & (dd <= hi)
        if np.unique(dd[sel]).size < 2:
            continue
        A = np.stack([np.ones(int(sel.sum())), dd[sel] * grid.hmax], axis=1)
        out[j] = np.linalg.lstsq(A, gn[sl][sel], rcond=None)[0][0]
    return out


@dataclass
class OptimalityStats:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    count: int
    contact_fraction: float  # share of box-contact cells with ratio >= 1 - tol
    contact_count: int
    ratios: np.ndarray = field(repr=False)
    cells: np.ndarray = field(repr=False)

    def row(self) -> tuple:
        return (self.min, self.q1, self.median, self.q3, self.max, self.count,
                self.contact_fraction, self.contact_count)


def _ratio(u, grid, omega, cells, Lambda, phi):
    g = boundary_gradient(u, grid, omega, cells)
    phic, _ = _phi_cells(phi, grid)
    return g**2 * np.exp(-phic[tuple(cells.T)]) / Lambda


def optimality_residual(u: np.ndarray, grid: Grid, Lambda: float, omega: Mask, phi=None,
                        box: Mask | None = None, tol: float = 0.1) -> OptimalityStats:
    """Distribution of ``rho = |grad u|^2 exp(-phi) / Lambda`` on free-boundary cells.

    ``|grad u|`` comes from :func:`boundary_gradient`.  Cells next to the box
    edge are excluded from the quartiles; on Omega cells touching the box edge
    the share with ``rho >= 1 - tol`` is reported.
    """
    if not Lambda > 0:
        raise DiagnosticsError("Lambda must be positive")
    box = omega.parent if box is None else box
    cells = boundary_cells(omega)
    if cells.size:
        cells = cells[~_near_edge(cells, grid, 1, box)]
    if cells.size == 0:
        raise DiagnosticsError("empty free boundary")
    rho = _ratio(u, grid, omega, cells, Lambda, phi)
    keep = np.isfinite(rho)
    if not keep.any():
        raise DiagnosticsError("free boundary too thin to resolve the gradient")
    rho, cells = rho[keep], cells[keep]
    q = np.quantile(rho, [0.0, 0.25, 0.5, 0.75, 1.0])
    contact = np.argwhere(_touching_box_edge(omega, box) & omega.inside)
    frac, nc = math.nan, 0
    if contact.size:
        rc = _ratio(u, grid, omega, contact, Lambda, phi)
        rc = rc[np.isfinite(rc)]
        nc = int(rc.size)
        frac = float(np.mean(rc >= 1 - tol)) if nc else math.nan
    return OptimalityStats(*map(float, q), len(rho), frac, nc, rho, cells)


# -- ball integrals -------------------------------------------------------------

def _require_2d(grid: Grid) -> None:
    if grid.dim != 2:
        raise DiagnosticsError("ball diagnostics are implemented for d=2")


def _check_ball(grid: Grid, x0, r: float, box: Mask | None) -> None:
    lo = np.asarray(grid.origin)
    hi = lo + np.asarray(grid.extent)
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 - r < lo - 1e-12) or np.any(x0 + r > hi + 1e-12):
        raise DiagnosticsError(f"ball of radius {r} at {tuple(x0)} escapes the box")
    if box is not None and not box.inside.all():
        cx, cy = grid.cell_centers()
        near = (cx - x0[0]) ** 2 + (cy - x0[1]) ** 2 < (r + grid.hmax) ** 2
        if np.any(near & ~box.inside):
            raise DiagnosticsError(f"ball of radius {r} at {tuple(x0)} escapes the box")


def ball_fractions(grid: Grid, x0, r: float, subsample: int = SUBSAMPLE) -> tuple[tuple[slice, ...], np.ndarray]:
    """Covered share of every cell in the bounding window of ``B_r(x0)``."""
    x0 = np.asarray(x0, dtype=float)
    sl = []
    for k in range(grid.dim):
        i0 = max(int(math.floor((x0[k] - r - grid.origin[k]) / grid.h[k])), 0)
        i1 = min(int(math.ceil((x0[k] + r - grid.origin[k]) / grid.h[k])), grid.n[k])
        sl.append(slice(i0, i1))
    offs = (np.arange(subsample) + 0.5) / subsample
    axes = []
    for k in range(grid.dim):
        idx = np.arange(sl[k].start, sl[k].stop)
        pts = grid.origin[k] + (idx[:, None] + offs[None, :]) * grid.h[k] - x0[k]
        axes.append(pts)  # (cells_k, subsample)
    dx2 = axes[0][:, None, :, None] ** 2
    dy2 = axes[1][None, :, None, :] ** 2
    frac = ((dx2 + dy2) < r * r).mean(axis=(2, 3))
    return tuple(sl), frac


def ball_integral(cell_values: np.ndarray, grid: Grid, x0, r: float) -> float:
    sl, frac = ball_fractions(grid, x0, r)
    return float((cell_values[sl] * frac).sum() * grid.cell_volume)


def circle_samples(values: np.ndarray, grid: Grid, x0, r: float, n_angles: int = N_ANGLES) -> np.ndarray:
    """Bilinear samples of a node array on ``n_angles`` equally spaced points of ``dB_r(x0)``."""
    theta = 2 * math.pi * np.arange(n_angles) / n_angles
    px = (x0[0] + r * np.cos(theta) - grid.origin[0]) / grid.h[0]
    py = (x0[1] + r * np.sin(theta) - grid.origin[1]) / grid.h[1]
    return map_coordinates(np.asarray(values, dtype=float), [px, py], order=1, mode="nearest")


def circle_integral(values: np.ndarray, grid: Grid, x0, r: float, n_angles: int = N_ANGLES) -> float:
    # periodic trapezoid rule
    return float(2 * math.pi * r * circle_samples(values, grid, x0, r, n_angles).mean())


def sphere_weighted_sq(u: np.ndarray, grid: Grid, x0, r: float, phi=None) -> float:
    """``int_{dB_r} u^2 exp(-phi)`` with ``u`` and ``phi`` interpolated separately."""
    us = circle_samples(u, grid, x0, r)
    vals = us**2
    if phi is not None:
        vals = vals * np.exp(-circle_samples(phi, grid, x0, r))
    return float(2 * math.pi * r * vals.mean())


def geometric_radii(grid: Grid, x0, box: Mask | None = None, r_max: float | None = None,
                    count: int = 8, r_min: float | None = None) -> np.ndarray:
    """Radii ``r_min q^k`` (``r_min`` defaults to ``4h``), with ``q <= sqrt(2)``
    shrunk so that at least ``count`` fit below ``r_max``.

    ``r_max`` defaults to the smaller of the distance to the box edge and one
    eighth of the box diameter.
    """
    h = grid.hmax
    x0 = np.asarray(x0, dtype=float)
    if r_max is None:
        lo = np.asarray(grid.origin)
        hi = lo + np.asarray(grid.extent)
        dist = float(min((x0 - lo).min(), (hi - x0).min()))
        if box is not None and not box.inside.all():
            cx, cy = grid.cell_centers()
            out = ~box.inside
            dist = min(dist, float(np.sqrt((cx[out] - x0[0]) ** 2 + (cy[out] - x0[1]) ** 2).min()) - h)
        diam = math.hypot(*grid.extent) if box is None else _box_diameter(box)
        r_max = min(dist, diam / 8)
    r0 = 4 * h if r_min is None else r_min
    if r_max < 2 * r0:
        raise DiagnosticsError("ball ladder does not fit: center too close to the box edge")
    q = min(math.sqrt(2), (r_max / r0) ** (1.0 / (count - 1)))
    k = int(math.floor(math.log(r_max / r0) / math.log(q) + 1e-9)) + 1
    return r0 * q ** np.arange(k)


def _box_diameter(box: Mask) -> float:
    idx = np.argwhere(box.inside)
    span = (idx.max(axis=0) + 1 - idx.min(axis=0)) * np.asarray(box.grid.h)
    return float(np.linalg.norm(span))


def weiss_energy(u: np.ndarray, grid: Grid, Lambda: float, omega: Mask, x0, radii, phi=None,
                 box: Mask | None = None) -> np.ndarray:
    """Rows ``(r, W, volume_term, sphere_term, measure_term)`` with ``W = vol - sphere + measure``."""
    _require_2d(grid)
    box = omega.parent if box is None else box
    d = grid.dim
    dens = energy_density(u, grid, phi)
    ind = omega.inside.astype(float)
    rows = []
    for r in np.asarray(radii, dtype=float):
        _check_ball(grid, x0, r, box)
        vol = ball_integral(dens, grid, x0, r) / r**d
        sph = sphere_weighted_sq(u, grid, x0, r, phi) / r ** (d + 1)
        mea = Lambda * ball_integral(ind, grid, x0, r) / r**d
        rows.append((r, vol - sph + mea, vol, sph, mea))
    return np.asarray(rows)


def weiss_constant(profile: np.ndarray) -> float:
    """Smallest ``C >= 0`` making ``W(r) + C r`` nondecreasing on the sampled radii."""
    r, W = profile[:, 0], profile[:, 1]
    slopes = np.diff(W) / np.diff(r)
    return float(max(0.0, -slopes.min())) if slopes.size else 0.0


def fitted_slope(r: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(r, y, 1)[0])


def almgren_frequency(u: np.ndarray, grid: Grid, x0, radii, tau: float = 0.0, phi=None,
                      box: Mask | None = None) -> np.ndarray:
    """Rows ``(r, N, exp(2 tau r) N, D, H)`` with ``N = r D / H``."""
    _require_2d(grid)
    dens = energy_density(u, grid, phi)
    rows = []
    for r in np.asarray(radii, dtype=float):
        _check_ball(grid, x0, r, box)
        H = sphere_weighted_sq(u, grid, x0, r, phi)
        if H <= 1e-14:
            raise DiagnosticsError("center outside support influence")
        D = ball_integral(dens, grid, x0, r)
        N = r * D / H
        rows.append((r, N, math.exp(2 * tau * r) * N, D, H))
    return np.asarray(rows)


def doubling_ratio(u: np.ndarray, grid: Grid, x0, r: float, phi=None) -> float:
    """``H(2r) / H(r)``."""
    return sphere_weighted_sq(u, grid, x0, 2 * r, phi) / sphere_weighted_sq(u, grid, x0, r, phi)


def density_profile(omega: Mask, x0, radii) -> np.ndarray:
    """Rows ``(r, |Omega cap B_r| / |B_r|)``."""
    g = omega.grid
    _require_2d(g)
    ind = omega.inside.astype(float)
    rows = []
    for r in np.asarray(radii, dtype=float):
        _check_ball(g, x0, r, None)
        rows.append((r, ball_integral(ind, g, x0, r) / (math.pi * r * r)))
    return np.asarray(rows)


def free_boundary_nodes(omega: Mask, box: Mask | None = None) -> np.ndarray:
    """Nodes touching both an Omega cell and a box cell outside Omega, as an ``(N, d)`` index array."""
    from .grid import cell_fraction_outside

    box = omega.parent if box is None else box
    box_inside = np.ones(omega.grid.cell_shape, dtype=bool) if box is None else box.inside
    touch_in = cell_fraction_outside(omega.inside) < 1
    touch_gap = cell_fraction_outside(box_inside & ~omega.inside) < 1
    return np.argwhere(touch_in & touch_gap)


def nondegeneracy_check(u: np.ndarray, grid: Grid, omega: Mask, r_list, box: Mask | None = None,
                        points: np.ndarray | None = None) -> dict[float, float]:
    """For each ``r``: the minimum over free-boundary nodes ``x`` of ``max_{B_2r(x)} u / r``.

    Only nodes whose ball ``B_2r`` stays inside the box are used.
    """
    if omega.count == 0 or not np.any(u > 0):
        raise DiagnosticsError("nondegeneracy needs a nonempty positivity set")
    box = omega.parent if box is None else box
    pts = free_boundary_nodes(omega, box) if points is None else np.asarray(points)
    coords = grid.node_coords()
    xs = np.stack([coords[k][tuple(pts.T)] for k in range(grid.dim)], axis=1)
    lo = np.asarray(grid.origin)
    hi = lo + np.asarray(grid.extent)
    out = {}
    for r in r_list:
        R2 = 2 * r
        reach = int(math.ceil(R2 / min(grid.h))) + 1
        best = math.inf
        for p, x in zip(pts, xs):
            if np.any(x - R2 < lo - 1e-12) or np.any(x + R2 > hi + 1e-12):
                continue
            sl = tuple(slice(max(p[k] - reach, 0), p[k] + reach + 1) for k in range(grid.dim))
            dist2 = sum((coords[k][sl] - x[k]) ** 2 for k in range(grid.dim))
            local = u[sl][dist2 <= R2 * R2 * (1 + 1e-12)]
            best = min(best, float(local.max()) / r)
        if math.isinf(best):
            raise DiagnosticsError(f"no free-boundary node admits a ball of radius {R2}")
        out[float(r)] = best
    return out


def lipschitz_check(u_coarse: np.ndarray, grid_coarse: Grid, u_fine: np.ndarray, grid_fine: Grid) -> float:
    """``max |grad u_fine| / max |grad u_coarse|`` over cells, for a factor-2 refinement."""
    aligned = (
        grid_fine.dim == grid_coarse.dim
        and all(nf == 2 * nc for nf, nc in zip(grid_fine.n, grid_coarse.n))
        and np.allclose(grid_fine.origin, grid_coarse.origin)
        and np.allclose(grid_fine.extent, grid_coarse.extent)
    )
    if not aligned:
        raise DiagnosticsError("grids are not aligned for a factor-2 refinement")
    gc = np.sqrt((cell_gradient(u_coarse, grid_coarse) ** 2).sum(axis=0)).max()
    gf = np.sqrt((cell_gradient(u_fine, grid_fine) ** 2).sum(axis=0)).max()
    if gc == 0:
        raise DiagnosticsError("coarse gradient vanishes")
    return float(gf / gc)


# -- report ----------------------------------------------------------------------

@dataclass
class DiagnosticsReport:
    lambda_u: float
    fit_residual: float
    opt_residual_stats: OptimalityStats
    weiss_profiles: dict[tuple, np.ndarray]
    almgren_profiles: dict[tuple, np.ndarray]
    density_profiles: dict[tuple, np.ndarray]
    weiss_constants: dict[tuple, float]
    perimeter: float
    nondeg_min: float
    lipschitz_ratio: float | None = None

    def csv_blocks(self) -> list[tuple[str, tuple[str, ...], list[tuple]]]:
        """``(name, header, rows)`` blocks in a fixed order."""
        s = self.opt_residual_stats
        blocks = [
            ("summary", ("lambda_u", "fit_residual", "perimeter", "nondeg_min", "lipschitz_ratio"),
             [(self.lambda_u, self.fit_residual, self.perimeter, self.nondeg_min,
               math.nan if self.lipschitz_ratio is None else self.lipschitz_ratio)]),
            ("optimality", ("min", "q1", "median", "q3", "max", "count", "contact_fraction", "contact_count"),
             [s.row()]),
        ]
        for name, profiles, header in (
            ("weiss", self.weiss_profiles, ("x0", "y0", "r", "W", "volume", "sphere", "measure")),
            ("almgren", self.almgren_profiles, ("x0", "y0", "r", "N", "N_scaled", "D", "H")),
            ("density", self.density_profiles, ("x0", "y0", "r", "density")),
        ):
            rows = []
            for c in sorted(profiles):
                rows.extend(tuple(map(float, c)) + tuple(map(float, row)) for row in profiles[c])
            blocks.append((name, header, rows))
        blocks.append(("weiss_constant", ("x0", "y0", "C"),
                       [tuple(map(float, c)) + (float(self.weiss_constants[c]),) for c in sorted(self.weiss_constants)]))
        return blocks


def diagnose(u: np.ndarray, grid: Grid, omega: Mask, lam_m: float, phi=None, tau: float = 0.0,
             box: Mask | None = None, n_centers: int = 4, n_fields: int = 32, seed: int = 0,
             Lambda: float | None = None, fine: tuple[np.ndarray, Grid] | None = None) -> DiagnosticsReport:
    """Run every diagnostic on one computed optimum.

    Profiles are taken at ``n_centers`` seeded free-boundary nodes whose
    default radius ladder fits in the box.  ``Lambda`` overrides the fitted
    multiplier; ``fine`` is an optional ``(u, grid)`` on the twice-refined grid
    for the Lipschitz ratio.
    """
    _require_2d(grid)
    box = omega.parent if box is None else box
    lam_hat, misfit = estimate_lagrange(u, grid, omega, lam_m, phi, n_fields, seed, box=box)
    Lam = lam_hat if Lambda is None else Lambda
    stats = optimality_residual(u, grid, Lam, omega, phi, box)
    nodes = free_boundary_nodes(omega, box)
    coords = grid.node_coords()
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(nodes))
    weiss, alm, dens, consts = {}, {}, {}, {}
    r_small = []
    for i in order:
        if len(weiss) == n_centers:
            break
        x0 = tuple(float(coords[k][tuple(nodes[i])]) for k in range(grid.dim))
        try:
            radii = geometric_radii(grid, x0, box)
        except DiagnosticsError:
            continue
        weiss[x0] = weiss_energy(u, grid, Lam, omega, x0, radii, phi, box)
        alm[x0] = almgren_frequency(u, grid, x0, radii, tau, phi, box)
        dens[x0] = density_profile(omega, x0, radii)
        consts[x0] = weiss_constant(weiss[x0])
        r_small.append(radii[0])
    if not weiss:
        raise DiagnosticsError("no free-boundary center admits a radius ladder")
    nondeg = nondegeneracy_check(u, grid, omega, [min(r_small)], box)
    lip = None if fine is None else lipschitz_check(u, grid, fine[0], fine[1])
    return DiagnosticsReport(Lam, misfit, stats, weiss, alm, dens, consts,
                             perimeter_estimate(omega), min(nondeg.values()), lip)


# -- synthetic fixture -------------------------------------------------------------

def plane_fixture(n: int = 128, Lambda: float = 2.0, half_width: float = 1.0):
    """One-homogeneous solution ``u = sqrt(Lambda) max(y, 0)`` on ``[-a, a]^2``.

    The free boundary ``{y = 0}`` lies on a node line (``n`` must be even).
    Returns ``(grid, u, omega, box)`` with the box equal to the whole grid.
    """
    from .grid import full_mask, make_grid

    if n % 2:
        raise ValueError("n must be even")
    grid = make_grid((n, n), (2 * half_width, 2 * half_width), (-half_width, -half_width))
    box = full_mask(grid)
    _, y = grid.node_coords()
    u = math.sqrt(Lambda) * np.maximum(y, 0.0)
    _, yc = grid.cell_centers()
    omega = Mask(grid, yc > 0, box)
    return grid, u, omega, box
