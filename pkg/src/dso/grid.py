"""Uniform Cartesian grids, cell masks and their geometry.

Conventions used throughout the package:

* A grid with ``n[k]`` cells along axis ``k`` has ``n[k] + 1`` nodes along that
  axis, so ``make_grid((4, 4), ...)`` carries 5 x 5 = 25 nodes.
* Arrays are indexed by axis number: a node array has shape
  ``(n[0] + 1, n[1] + 1, ...)`` and ``u[i, j]`` lives at
  ``origin + (i * h[0], j * h[1])``.  Flattening uses Fortran order so the x
  index runs fastest.
* A mask is a boolean cell array.  A node belongs to the open set described by
  the mask iff every cell touching it is inside; these are the unknowns of all
  discrete problems.  Every other node carries the Dirichlet value 0.
* Cell and node lists are returned in lexicographic order of their index
  tuples.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

DEFAULT_NODE_CAP = 2**24
MIN_CELLS = 4


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    n: tuple[int, ...]
    h: tuple[float, ...]
    origin: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def node_shape(self) -> tuple[int, ...]:
        return tuple(k + 1 for k in self.n)

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return tuple(self.n)

    @property
    def num_nodes(self) -> int:
        return math.prod(self.node_shape)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.h)

    @property
    def extent(self) -> tuple[float, ...]:
        return tuple(n * h for n, h in zip(self.n, self.h))

    @property
    def hmax(self) -> float:
        return max(self.h)

    def node_axes(self) -> list[np.ndarray]:
        return [o + h * np.arange(n + 1) for o, h, n in zip(self.origin, self.h, self.n)]

    def cell_axes(self) -> list[np.ndarray]:
        return [o + h * (np.arange(n) + 0.5) for o, h, n in zip(self.origin, self.h, self.n)]

    def node_coords(self) -> list[np.ndarray]:
        return np.meshgrid(*self.node_axes(), indexing="ij")

    def cell_centers(self) -> list[np.ndarray]:
        return np.meshgrid(*self.cell_axes(), indexing="ij")

    def zeros(self) -> np.ndarray:
        return np.zeros(self.node_shape)

    def contains_box(self, lo: Sequence[float], hi: Sequence[float], slack: float = 1e-12) -> bool:
        for k in range(self.dim):
            if lo[k] < self.origin[k] - slack or hi[k] > self.origin[k] + self.extent[k] + slack:
                return False
        return True


def make_grid(
    n: Sequence[int],
    extent: Sequence[float],
    origin: Sequence[float] | None = None,
    max_nodes: int = DEFAULT_NODE_CAP,
) -> Grid:
    """Build a uniform grid with ``n[k]`` cells of size ``extent[k] / n[k]``."""
    n = tuple(int(k) for k in n)
    extent = tuple(float(e) for e in extent)
    if len(n) not in (2, 3) or len(extent) != len(n):
        raise GridError("grid must be 2- or 3-dimensional with matching extent")
    if origin is None:
        origin = (0.0,) * len(n)
    origin = tuple(float(o) for o in origin)
    if len(origin) != len(n):
        raise GridError("origin dimension mismatch")
    if any(k < MIN_CELLS for k in n):
        raise GridError(f"axis count below minimum ({MIN_CELLS})")
    if any(not e > 0 for e in extent):
        raise GridError("extent must be positive")
    if math.prod(k + 1 for k in n) > max_nodes:
        raise GridError(f"node count above cap {max_nodes}")
    h = tuple(e / k for e, k in zip(extent, n))
    return Grid(n=n, h=h, origin=origin)


@dataclass(frozen=True, eq=False)
class Mask:
    """Boolean cell indicator of a discrete open set, optionally inside a box ``parent``."""

    grid: Grid
    inside: np.ndarray
    parent: Mask | None = field(default=None, repr=False)

    def __post_init__(self):
        inside = np.asarray(self.inside, dtype=bool)
        if inside.shape != self.grid.cell_shape:
            raise GridError(f"mask shape {inside.shape} != cell shape {self.grid.cell_shape}")
        inside = inside.copy()
        inside.setflags(write=False)
        object.__setattr__(self, "inside", inside)
        if self.parent is not None:
            if self.parent.grid != self.grid:
                raise GridError("parent mask lives on a different grid")
            if np.any(inside & ~self.parent.inside):
                raise GridError("mask leaves its parent box")

    @property
    def count(self) -> int:
        return int(self.inside.sum())

    @property
    def box(self) -> np.ndarray:
        """Cells of the ambient box (the parent, or the whole grid)."""
        if self.parent is None:
            return np.ones(self.grid.cell_shape, dtype=bool)
        return self.parent.inside

    def with_parent(self, parent: Mask | None) -> Mask:
        return Mask(self.grid, self.inside, parent)

    def replace(self, inside: np.ndarray) -> Mask:
        return Mask(self.grid, inside, self.parent)

    def interior_nodes(self) -> np.ndarray:
        """Node array that is True where all surrounding cells are inside."""
        return interior_nodes(self.inside)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Mask):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.inside, other.inside)

    __hash__ = None


def interior_nodes(inside: np.ndarray) -> np.ndarray:
    padded = np.pad(inside, 1, constant_values=False)
    d = inside.ndim
    node_shape = tuple(s + 1 for s in inside.shape)
    result = np.ones(node_shape, dtype=bool)
    for shift in itertools.product((0, 1), repeat=d):
        sl = tuple(slice(s, s + n) for s, n in zip(shift, node_shape))
        result &= padded[sl]
    return result


def cell_fraction_outside(inside: np.ndarray) -> np.ndarray:
    """Fraction of the 2^d cells touching each node that are not in ``inside``.

    Cells beyond the grid edge count as outside.
    """
    padded = np.pad(inside, 1, constant_values=False).astype(float)
    d = inside.ndim
    node_shape = tuple(s + 1 for s in inside.shape)
    acc = np.zeros(node_shape)
    for shift in itertools.product((0, 1), repeat=d):
        sl = tuple(slice(s, s + n) for s, n in zip(shift, node_shape))
        acc += padded[sl]
    return 1.0 - acc / 2**d


# -- shape descriptors ------------------------------------------------------

def _shape_indicator(grid: Grid, shape: Mapping[str, Any], centers: list[np.ndarray]) -> np.ndarray:
    kind = shape.get("type")
    if kind == "full":
        return np.ones(grid.cell_shape, dtype=bool)
    if kind == "empty":
        return np.zeros(grid.cell_shape, dtype=bool)
    if kind == "rectangle":
        lo = [float(v) for v in shape["lo"]]
        hi = [float(v) for v in shape["hi"]]
        _check_dim(grid, lo, hi)
        if not grid.contains_box(lo, hi):
            raise GridError("rectangle lies outside the grid extent")
        out = np.ones(grid.cell_shape, dtype=bool)
        for k in range(grid.dim):
            out &= (centers[k] > lo[k]) & (centers[k] < hi[k])
        return out
    if kind in ("disk", "ball", "annulus"):
        c = [float(v) for v in shape["center"]]
        _check_dim(grid, c)
        if kind == "annulus":
            r_in, r_out = float(shape["r_inner"]), float(shape["r_outer"])
            if not 0 <= r_in < r_out:
                raise GridError("annulus radii must satisfy 0 <= r_inner < r_outer")
        else:
            r_in, r_out = None, float(shape["radius"])
            if r_out <= 0:
                raise GridError("radius must be positive")
        lo = [ck - r_out for ck in c]
        hi = [ck + r_out for ck in c]
        if not grid.contains_box(lo, hi):
            raise GridError(f"{kind} lies outside the grid extent")
        r2 = sum((centers[k] - c[k]) ** 2 for k in range(grid.dim))
        out = r2 < r_out**2
        if r_in is not None:
            out &= r2 >= r_in**2
        return out
    if kind == "union":
        parts = shape["parts"]
        out = np.zeros(grid.cell_shape, dtype=bool)
        for part in parts:
            out |= _shape_indicator(grid, part, centers)
        return out
    if kind == "difference":
        return _shape_indicator(grid, shape["base"], centers) & ~_shape_indicator(
            grid, shape["minus"], centers
        )
    if kind == "file":
        from .fileio import read_mask

        loaded = read_mask(shape["path"])
        if loaded.grid.n != grid.n or not np.allclose(loaded.grid.h, grid.h) or not np.allclose(
            loaded.grid.origin, grid.origin
        ):
            raise GridError("mask file grid does not match")
        return loaded.inside.copy()
    raise GridError(f"unknown shape type {kind!r}")


def _check_dim(grid: Grid, *vecs: Sequence[float]) -> None:
    for v in vecs:
        if len(v) != grid.dim:
            raise GridError("shape coordinates have the wrong dimension")


def mask_from_shape(grid: Grid, shape: Mapping[str, Any], parent: Mask | None = None) -> Mask:
    """Rasterize a shape descriptor: a cell is inside iff its center is.

    Descriptors are dicts with a ``type`` key: ``full``, ``empty``,
    ``rectangle`` (lo, hi), ``disk`` (center, radius), ``annulus`` (center,
    r_inner, r_outer), ``union`` (parts), ``difference`` (base, minus) and
    ``file`` (path to an MSK1 file).  Cells outside ``parent`` are dropped.
    """
    inside = _shape_indicator(grid, shape, grid.cell_centers())
    if parent is not None:
        inside &= parent.inside
    return Mask(grid, inside, parent)


def full_mask(grid: Grid) -> Mask:
    return Mask(grid, np.ones(grid.cell_shape, dtype=bool))


def measure(mask: Mask) -> float:
    return mask.count * mask.grid.cell_volume


def _face_neighbors(inside: np.ndarray, k: int, step: int) -> tuple[np.ndarray, np.ndarray]:
    """Neighbor values along axis k (step = +-1) and a flag for in-grid neighbors."""
    nb = np.zeros_like(inside)
    valid = np.zeros(inside.shape, dtype=bool)
    src = [slice(None)] * inside.ndim
    dst = [slice(None)] * inside.ndim
    if step > 0:
        src[k], dst[k] = slice(1, None), slice(None, -1)
    else:
        src[k], dst[k] = slice(None, -1), slice(1, None)
    nb[tuple(dst)] = inside[tuple(src)]
    valid[tuple(dst)] = True
    return nb, valid


def boundary_cells(mask: Mask) -> np.ndarray:
    """Cells of the mask with a face neighbor in the box but outside the mask.

    Returns an ``(N, d)`` integer array in lexicographic order.
    """
    inside, box = mask.inside, mask.box
    hit = np.zeros_like(inside)
    for k in range(inside.ndim):
        for step in (-1, 1):
            nb_in, valid = _face_neighbors(inside, k, step)
            nb_box, _ = _face_neighbors(box, k, step)
            hit |= valid & nb_box & ~nb_in
    return np.argwhere(inside & hit)


def perimeter_estimate(mask: Mask) -> float:
    """Face-counting perimeter: faces between mask cells and any non-mask cell or the exterior.

    On smooth shapes this overestimates the true perimeter by up to the
    l1/l2 anisotropy factor sqrt(d).
    """
    g = mask.grid
    inside = mask.inside
    total = 0.0
    for k in range(g.dim):
        face_area = g.cell_volume / g.h[k]
        for step in (-1, 1):
            nb_in, valid = _face_neighbors(inside, k, step)
            total += face_area * np.count_nonzero(inside & ~(valid & nb_in))
    return total


def connected_components(inside: np.ndarray) -> int:
    from scipy import ndimage

    _, count = ndimage.label(inside)
    return int(count)


def node_to_cell(u: np.ndarray) -> np.ndarray:
    """Average of the 2^d corner values of every cell."""
    d = u.ndim
    cell_shape = tuple(s - 1 for s in u.shape)
    acc = np.zeros(cell_shape)
    for shift in itertools.product((0, 1), repeat=d):
        sl = tuple(slice(s, s + n) for s, n in zip(shift, cell_shape))
        acc += u[sl]
    return acc / 2**d


def symmetric_difference(a: Mask, b: Mask) -> int:
    return int(np.count_nonzero(a.inside ^ b.inside))
