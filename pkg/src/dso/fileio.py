"""Plain-text field and mask formats (FLD1, MSK1), CSV helpers and PPM heatmaps.

Both text formats are 2-D only.  Rows are written bottom-up (y index 0 first)
with x running along each line; floats use 17 significant digits, which
round-trips IEEE doubles exactly.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import Grid, GridError, Mask, make_grid

FLOAT_FMT = "%.17g"


class FormatError(ValueError):
    pass


def fmt(x: float) -> str:
    return FLOAT_FMT % x


def _header(tag: str, grid: Grid) -> str:
    if grid.dim != 2:
        raise FormatError(f"{tag} supports d=2 only")
    (nx, ny), (ox, oy), (hx, hy) = grid.n, grid.origin, grid.h
    return f"{tag} d=2 nx={nx} ny={ny} ox={fmt(ox)} oy={fmt(oy)} hx={fmt(hx)} hy={fmt(hy)}"


def _parse_header(line: str, tag: str) -> Grid:
    parts = line.split()
    if not parts or parts[0] != tag:
        raise FormatError(f"expected {tag} header")
    kv = dict(p.split("=", 1) for p in parts[1:])
    try:
        if int(kv["d"]) != 2:
            raise FormatError(f"{tag}: only d=2 is supported")
        n = (int(kv["nx"]), int(kv["ny"]))
        h = (float(kv["hx"]), float(kv["hy"]))
        origin = (float(kv["ox"]), float(kv["oy"]))
    except KeyError as exc:
        raise FormatError(f"{tag}: missing header key {exc}") from None
    try:
        grid = make_grid(n, (n[0] * h[0], n[1] * h[1]), origin)
    except GridError as exc:
        raise FormatError(str(exc)) from None
    # keep the exact spacing from the file
    return Grid(n=grid.n, h=h, origin=origin)


def dumps_field(grid: Grid, values: np.ndarray) -> str:
    values = np.asarray(values, dtype=float)
    if values.shape != grid.node_shape:
        raise FormatError(f"field shape {values.shape} != node shape {grid.node_shape}")
    lines = [_header("FLD1", grid)]
    for j in range(values.shape[1]):
        lines.append(" ".join(fmt(v) for v in values[:, j]))
    return "\n".join(lines) + "\n"


def loads_field(text: str) -> tuple[Grid, np.ndarray]:
    rows = text.strip().splitlines()
    grid = _parse_header(rows[0], "FLD1")
    body = rows[1:]
    nx1, ny1 = grid.node_shape
    if len(body) != ny1:
        raise FormatError(f"FLD1: expected {ny1} rows, got {len(body)}")
    values = np.empty(grid.node_shape)
    for j, row in enumerate(body):
        vals = [float(t) for t in row.split()]
        if len(vals) != nx1:
            raise FormatError(f"FLD1: row {j} has {len(vals)} values, expected {nx1}")
        values[:, j] = vals
    if not np.all(np.isfinite(values)):
        raise FormatError("FLD1: non-finite values")
    return grid, values


def write_field(path: str | Path, grid: Grid, values: np.ndarray) -> None:
    Path(path).write_text(dumps_field(grid, values))


def read_field(path: str | Path) -> tuple[Grid, np.ndarray]:
    return loads_field(Path(path).read_text())


def dumps_mask(mask: Mask) -> str:
    grid = mask.grid
    lines = [_header("MSK1", grid)]
    for j in range(grid.n[1]):
        lines.append(" ".join("1" if b else "0" for b in mask.inside[:, j]))
    return "\n".join(lines) + "\n"


def loads_mask(text: str) -> Mask:
    rows = text.strip().splitlines()
    grid = _parse_header(rows[0], "MSK1")
    body = rows[1:]
    nx, ny = grid.n
    if len(body) != ny:
        raise FormatError(f"MSK1: expected {ny} rows, got {len(body)}")
    inside = np.zeros(grid.cell_shape, dtype=bool)
    for j, row in enumerate(body):
        toks = row.split()
        if len(toks) != nx or any(t not in ("0", "1") for t in toks):
            raise FormatError(f"MSK1: malformed row {j}")
        inside[:, j] = [t == "1" for t in toks]
    return Mask(grid, inside)


def write_mask(path: str | Path, mask: Mask) -> None:
    Path(path).write_text(dumps_mask(mask))


def read_mask(path: str | Path) -> Mask:
    return loads_mask(Path(path).read_text())


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, float) else v for v in row])
    Path(path).write_text(buf.getvalue())


# -- PPM heatmaps -----------------------------------------------------------

_PALETTE_PATH = Path(__file__).with_name("data") / "palette.txt"


def load_palette() -> np.ndarray:
    """The fixed 256-entry RGB palette shipped with the package."""
    rows = [
        [int(t) for t in line.split()]
        for line in _PALETTE_PATH.read_text().splitlines()
        if line.strip() and not line.startswith("#")
    ]
    pal = np.asarray(rows, dtype=np.uint8)
    if pal.shape != (256, 3):
        raise FormatError("palette must have 256 RGB rows")
    return pal


def field_to_ppm(values: np.ndarray) -> bytes:
    """Binary P6 image of a 2-D node array, top row = largest y."""
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    scale = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    idx = np.clip(np.round(scale * 255), 0, 255).astype(np.intp)
    rgb = load_palette()[idx]  # (nx, ny, 3)
    img = np.ascontiguousarray(rgb.transpose(1, 0, 2)[::-1])  # rows top-down
    height, width = img.shape[:2]
    return f"P6\n{width} {height}\n255\n".encode() + img.tobytes()


def write_ppm(path: str | Path, values: np.ndarray) -> None:
    Path(path).write_bytes(field_to_ppm(values))
