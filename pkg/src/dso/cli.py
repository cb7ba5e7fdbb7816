"""Command-line entry point: ``dso <command> --config <path> [--out <dir>] [--jobs N] [--seed S]``.

Exit status is 0 on success, 2 when a run finished but flagged
non-convergence, and 1 on any error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import fileio
from .config import COMMANDS, ConfigError, RunConfig, load_config, parse_config, write_resolved

log = logging.getLogger("dso")

EXIT_OK, EXIT_ERROR, EXIT_FLAGGED = 0, 1, 2
EIG_HEADER = ("lambda", "residual", "iterations", "normalization")


def _write_eig(out: Path, grid, res, name: str = "eig", extra: dict | None = None, ppm: bool = False) -> None:
    header = EIG_HEADER + tuple(extra or ())
    row = res.csv_row() + tuple((extra or {}).values())
    fileio.write_csv(out / f"{name}.csv", header, [row])
    if grid.dim == 2:
        fileio.write_field(out / "u.fld", grid, res.u)
        if ppm:
            fileio.write_ppm(out / "u.ppm", res.u)
    else:
        np.save(out / "u.npy", res.u)


def _write_drift(out: Path, grid, V) -> None:
    if V is None or grid.dim != 2:
        return
    fileio.write_field(out / "Vx.fld", grid, V[0])
    fileio.write_field(out / "Vy.fld", grid, V[1])


def _write_mask(out: Path, mask) -> None:
    if mask.grid.dim == 2:
        fileio.write_mask(out / "omega.msk", mask)


# -- commands -----------------------------------------------------------------

def cmd_eig(cfg: RunConfig, out: Path) -> int:
    from .eigen import optimal_drift_fixed_point, principal_eig_drift, principal_eig_selfadjoint

    grid = cfg.grid()
    box = cfg.box(grid)
    omega = cfg.omega(grid, box)
    kind = cfg["drift"]["type"]
    V = None
    if kind == "field":
        V = cfg.drift_field(grid)
        res = principal_eig_drift(omega, V, None, cfg["eig_tol"])
    elif kind == "optimal":
        res, V = optimal_drift_fixed_point(omega, cfg.drift_tau(), cfg["tol_lambda"], cfg["grad_tol"],
                                           eig_tol=cfg["eig_tol"])
    else:
        res = principal_eig_selfadjoint(omega, cfg.phi(grid), cfg["eig_tol"])
    _write_eig(out, grid, res, ppm=cfg["ppm"])
    _write_mask(out, omega)
    _write_drift(out, grid, V)
    return EXIT_OK


def cmd_optimize_drift(cfg: RunConfig, out: Path) -> int:
    from .eigen import FixedPointError, optimal_drift_fixed_point

    grid = cfg.grid()
    box = cfg.box(grid)
    omega = cfg.omega(grid, box)
    try:
        res, V = optimal_drift_fixed_point(omega, cfg.drift_tau(), cfg["tol_lambda"], cfg["grad_tol"],
                                           eig_tol=cfg["eig_tol"])
    except FixedPointError as exc:
        fileio.write_csv(out / "history.csv", ("iter", "lambda"), enumerate(exc.history))
        log.error("%s", exc)
        return EXIT_FLAGGED
    _write_eig(out, grid, res, extra={"nonlinear_residual": res.extra["nonlinear_residual"]}, ppm=cfg["ppm"])
    _write_drift(out, grid, V)
    _write_mask(out, omega)
    fileio.write_csv(out / "history.csv", ("iter", "lambda"), enumerate(res.extra["history"]))
    return EXIT_OK


def _shape_config(cfg: RunConfig):
    from .shape import ShapeOptConfig

    so = cfg["shape_opt"]
    return ShapeOptConfig(
        m=cfg["m"], penalty_start=so["penalty_start"], start_factor=so["start_factor"],
        target_factor=so["target_factor"], penalty_growth=so["penalty_growth"], penalty_max=so["penalty_max"],
        max_outer=so["max_outer"], tol_lambda=cfg["tol_lambda"], eig_tol=cfg["eig_tol"],
        stable_cells=so["stable_cells"], seed=cfg["seed"],
    )


def _write_shape(out: Path, grid, res, ppm: bool) -> int:
    from .grid import measure

    _write_eig(out, grid, res.eig, extra={"measure": measure(res.omega), "converged": int(res.converged)}, ppm=ppm)
    _write_mask(out, res.omega)
    fileio.write_csv(out / "history.csv", ("iter", "lambda", "measure", "penalty", "accepted"), res.history_rows())
    return EXIT_OK if res.converged else EXIT_FLAGGED


def cmd_optimize_shape(cfg: RunConfig, out: Path) -> int:
    from .shape import optimize_shape_fixed_drift

    grid = cfg.grid()
    box = cfg.box(grid)
    kind = cfg["drift"]["type"]
    if kind == "optimal":
        raise ConfigError("optimize-shape: use the joint command for an optimized drift")
    drift = cfg.drift_field(grid) if kind == "field" else None
    phi = None if drift is not None else cfg.phi(grid)
    res = optimize_shape_fixed_drift(box, _shape_config(cfg), phi=phi, drift=drift)
    code = _write_shape(out, grid, res, cfg["ppm"])
    _write_drift(out, grid, drift)
    return code


def cmd_joint(cfg: RunConfig, out: Path) -> int:
    from .shape import joint_optimize

    grid = cfg.grid()
    box = cfg.box(grid)
    res, V = joint_optimize(box, _shape_config(cfg), cfg.drift_tau())
    code = _write_shape(out, grid, res, cfg["ppm"])
    _write_drift(out, grid, V)
    return code


def cmd_diagnose(cfg: RunConfig, out: Path) -> int:
    from .diagnostics import diagnose, plane_fixture

    desc = cfg["diagnose"]
    if "fixture" in desc:
        grid, u, omega, box = plane_fixture(Lambda=desc["fixture_Lambda"])
        phi = None
    else:
        grid, u = fileio.read_field(cfg.path(desc["u"]))
        omega = fileio.read_mask(cfg.path(desc["mask"]))
        if omega.grid.n != grid.n:
            raise ConfigError("diagnose: mask and field grids differ")
        box = None
        phi = None if cfg["phi"]["type"] == "zero" else cfg.phi(grid)
    rep = diagnose(u, grid, omega, desc["lambda_m"], phi, tau=cfg["tau"], box=box,
                   n_centers=desc["n_centers"], n_fields=desc["n_fields"], seed=cfg["seed"],
                   Lambda=desc.get("Lambda"))
    parts = []
    for name, header, rows in rep.csv_blocks():
        parts.append(f"# {name}\n")
        buf = out / f".{name}.tmp"
        fileio.write_csv(buf, header, rows)
        parts.append(buf.read_text())
        buf.unlink()
    (out / "diagnostics.csv").write_text("".join(parts))
    return EXIT_OK


def cmd_radial(cfg: RunConfig, out: Path) -> int:
    from .radial import GOLDEN_HEADER, radial_eigen

    r = cfg["radial"]
    sol = radial_eigen(r["d"], r["R"], r["tau"], r["n_nodes"])
    fileio.write_csv(out / "radial.csv", GOLDEN_HEADER,
                     [(sol.d, float(sol.R), float(sol.tau), sol.lam, sol.slope_at_R, sol.n_nodes)])
    fileio.write_csv(out / "profile.csv", ("r", "u"), zip(sol.r.tolist(), sol.u.tolist()))
    return EXIT_OK


def cmd_golden(cfg: RunConfig, out: Path) -> int:
    from .radial import GOLDEN_TABLE, write_golden

    g = cfg["golden"]
    table = [(int(d), float(R), float(t)) for d, R, t in g.get("table", GOLDEN_TABLE)]
    write_golden(out / "radial.csv", table, g["n_nodes"])
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    (out / "GENERATED").write_text(f"generated {stamp} with n_nodes={g['n_nodes']} and 2*n_nodes\n")
    return EXIT_OK


HANDLERS = {
    "eig": cmd_eig,
    "optimize-shape": cmd_optimize_shape,
    "optimize-drift": cmd_optimize_drift,
    "joint": cmd_joint,
    "diagnose": cmd_diagnose,
    "radial": cmd_radial,
    "golden": cmd_golden,
}


def run(cfg: RunConfig, out: str | Path) -> int:
    """Execute one configured run into ``out``; returns the exit status."""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_resolved(cfg, out)
    except OSError as exc:
        log.error("cannot write to output directory %s: %s", out, exc)
        return EXIT_ERROR
    try:
        return HANDLERS[cfg.command](cfg, out)
    except Exception as exc:  # noqa: BLE001 - every failure maps to exit status 1
        log.error("%s failed: %s", cfg.command, exc)
        return EXIT_ERROR


def _sub_run(args: tuple[dict, str, str, str]) -> int:
    raw, command, base_dir, out = args
    try:
        cfg = load_config(raw, command, base_dir)
    except ConfigError as exc:
        log.error("%s: %s", out, exc)
        return EXIT_ERROR
    return run(cfg, out)


def _merge_override(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(merged.get(k), dict):
            merged[k] = _merge_override(merged[k], v)
        else:
            merged[k] = copy.deepcopy(v)
    return merged


def run_sweep(raw: dict, command: str, base_dir: Path, out: Path, jobs: int, seed: int | None) -> int:
    """One sub-run per ``sweep`` entry, written to ``out/run_000``, ``out/run_001``, ..."""
    base = {k: v for k, v in raw.items() if k != "sweep"}
    if seed is not None:
        base["seed"] = seed
    tasks = []
    for i, override in enumerate(raw["sweep"]):
        tasks.append((_merge_override(base, override), command, str(base_dir), str(out / f"run_{i:03d}")))
    for t in tasks:  # fail fast on invalid entries
        load_config(t[0], command, base_dir)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            codes = list(pool.map(_sub_run, tasks))
    else:
        codes = [_sub_run(t) for t in tasks]
    fileio.write_csv(out / "sweep.csv", ("run", "exit_status"), [(f"run_{i:03d}", c) for i, c in enumerate(codes)])
    if EXIT_ERROR in codes:
        return EXIT_ERROR
    return EXIT_FLAGGED if EXIT_FLAGGED in codes else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dso", description="Principal eigenvalues with drift and shape optimization.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", default=None, help="output directory (default: dso_out/<command>)")
    p.add_argument("--jobs", type=int, default=1, help="concurrent sub-runs for configs with a sweep list")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out) if args.out else Path("dso_out") / args.command
    if args.jobs < 1:
        log.error("--jobs must be at least 1")
        return EXIT_ERROR
    try:
        cfg = parse_config(args.config, args.command, args.seed)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    if "sweep" in cfg.data:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        try:
            return run_sweep(raw, args.command, Path(args.config).parent, out, args.jobs, args.seed)
        except ConfigError as exc:
            log.error("%s", exc)
            return EXIT_ERROR
    return run(cfg, out)


if __name__ == "__main__":
    sys.exit(main())
