"""Run configuration: JSON schema, defaults, and the objects built from a config."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .grid import Grid, GridError, Mask, make_grid, mask_from_shape, measure

COMMANDS = ("eig", "optimize-shape", "optimize-drift", "joint", "diagnose", "radial", "golden")


class ConfigError(ValueError):
    pass


_vec = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 3}
_shape = {"type": "object", "required": ["type"]}  # descriptors are checked by mask_from_shape

SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "extent"],
            "properties": {
                "n": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 3},
                "extent": _vec,
                "origin": _vec,
                "max_nodes": {"type": "integer", "minimum": 1},
            },
        },
        "box": _shape,
        "omega": _shape,
        "phi": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {
                "type": {"enum": ["zero", "radial", "linear", "gaussian", "file"]},
                "center": _vec,
                "slope": {"type": "number"},
                "gradient": _vec,
                "amplitude": {"type": "number"},
                "width": {"type": "number", "exclusiveMinimum": 0},
                "path": {"type": "string"},
            },
        },
        "drift": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {
                "type": {"enum": ["zero", "field", "gradient", "optimal"]},
                "paths": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2},
                "path": {"type": "string"},
                "tau": {"type": "number", "minimum": 0},
            },
        },
        "m": {"type": "number", "exclusiveMinimum": 0},
        "tau": {"type": "number", "minimum": 0},
        "tol_lambda": {"type": "number", "exclusiveMinimum": 0},
        "eig_tol": {"type": "number", "exclusiveMinimum": 0},
        "grad_tol": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer"},
        "ppm": {"type": "boolean"},
        "shape_opt": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "penalty_start": {"type": ["number", "null"], "minimum": 0},
                "start_factor": {"type": "number", "exclusiveMinimum": 0},
                "target_factor": {"type": "number", "exclusiveMinimum": 0},
                "penalty_growth": {"type": "number", "exclusiveMinimum": 1},
                "penalty_max": {"type": "number", "exclusiveMinimum": 0},
                "max_outer": {"type": "integer", "minimum": 1},
                "stable_cells": {"type": "integer", "minimum": 0},
            },
        },
        "radial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "d": {"enum": [1, 2, 3]},
                "R": {"type": "number", "exclusiveMinimum": 0},
                "tau": {"type": "number", "minimum": 0},
                "n_nodes": {"type": "integer", "minimum": 1000},
            },
        },
        "golden": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_nodes": {"type": "integer", "minimum": 1000},
                "table": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                                     "minItems": 3, "maxItems": 3}},
            },
        },
        "diagnose": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "fixture": {"enum": ["plane"]},
                "u": {"type": "string"},
                "mask": {"type": "string"},
                "lambda_m": {"type": "number"},
                "Lambda": {"type": "number", "exclusiveMinimum": 0},
                "fixture_Lambda": {"type": "number", "exclusiveMinimum": 0},
                "n_fields": {"type": "integer", "minimum": 1},
                "n_centers": {"type": "integer", "minimum": 1},
            },
        },
        "sweep": {"type": "array", "items": {"type": "object"}},
    },
}

DEFAULTS: dict[str, Any] = {
    "box": {"type": "full"},
    "phi": {"type": "zero"},
    "drift": {"type": "zero"},
    "tau": 0.0,
    "tol_lambda": 1e-8,
    "eig_tol": 1e-8,
    "grad_tol": 1e-8,
    "seed": 0,
    "ppm": False,
    "shape_opt": {
        "penalty_start": None,
        "start_factor": 1.0,
        "target_factor": 1e3,
        "penalty_growth": 10.0,
        "penalty_max": 1e9,
        "max_outer": 200,
        "stable_cells": 2,
    },
    "radial": {"d": 2, "R": 1.0, "tau": 0.0, "n_nodes": 4000},
    "golden": {"n_nodes": 100000},
    "diagnose": {"n_fields": 32, "n_centers": 4, "lambda_m": 0.0, "fixture_Lambda": 2.0},
}

NEEDS_GRID = {"eig", "optimize-shape", "optimize-drift", "joint"}


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _error_path(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def validate(raw: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if not errors:
        return
    err = errors[0]
    if err.validator == "additionalProperties":
        known = set(err.schema.get("properties", {}))
        extra = sorted(set(err.instance) - known)
        raise ConfigError(f"unknown key {extra[0]!r} at {_error_path(err)}")
    raise ConfigError(f"invalid value at {_error_path(err)}: {err.message}")


@dataclass
class RunConfig:
    command: str
    data: dict  # fully resolved settings
    base_dir: Path  # relative paths resolve against the config file's directory

    def __getitem__(self, key):
        return self.data[key]

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q

    # -- derived objects --------------------------------------------------

    def grid(self) -> Grid:
        g = self.data["grid"]
        try:
            return make_grid(g["n"], g["extent"], g.get("origin"), g.get("max_nodes", 2**24))
        except GridError as exc:
            raise ConfigError(f"grid: {exc}") from None

    def _shape(self, key: str, grid: Grid, parent: Mask | None) -> Mask:
        desc = copy.deepcopy(self.data[key])
        _resolve_paths(desc, self)
        try:
            return mask_from_shape(grid, desc, parent)
        except GridError as exc:
            raise ConfigError(f"{key}: {exc}") from None

    def box(self, grid: Grid) -> Mask:
        return self._shape("box", grid, None)

    def omega(self, grid: Grid, box: Mask) -> Mask:
        if "omega" not in self.data:
            return box
        return self._shape("omega", grid, box)

    def phi(self, grid: Grid) -> np.ndarray | None:
        desc = self.data["phi"]
        if self.data["drift"]["type"] == "gradient":
            if desc["type"] != "zero":
                raise ConfigError("drift: a gradient drift takes its potential from drift/path; leave phi zero")
            return self._field(self.data["drift"]["path"], grid)
        return build_phi(desc, grid, self)

    def drift_field(self, grid: Grid) -> np.ndarray | None:
        desc = self.data["drift"]
        if desc["type"] != "field":
            return None
        return np.stack([self._field(p, grid) for p in desc["paths"]])

    def _field(self, path: str, grid: Grid) -> np.ndarray:
        from .fileio import read_field

        fgrid, values = read_field(self.path(path))
        if fgrid.n != grid.n or not np.allclose(fgrid.h, grid.h) or not np.allclose(fgrid.origin, grid.origin):
            raise ConfigError(f"field file {path} does not match the configured grid")
        return values

    def drift_tau(self) -> float:
        desc = self.data["drift"]
        return float(desc.get("tau", self.data["tau"]))

    def resolved(self) -> dict:
        """Settings with every file reference made absolute."""
        data = copy.deepcopy(self.data)
        _absolutize(data, self)
        return {"command": self.command, **data}


_PATH_KEYS = ("path", "u", "mask")


def _absolutize(node: Any, cfg: RunConfig) -> None:
    if isinstance(node, dict):
        for k, v in node.items():
            if k in _PATH_KEYS and isinstance(v, str):
                node[k] = str(cfg.path(v).resolve())
            elif k == "paths" and isinstance(v, list):
                node[k] = [str(cfg.path(p).resolve()) for p in v]
            else:
                _absolutize(v, cfg)
    elif isinstance(node, list):
        for v in node:
            _absolutize(v, cfg)


def _resolve_paths(desc: Any, cfg: RunConfig) -> None:
    if isinstance(desc, dict):
        if desc.get("type") == "file" and "path" in desc:
            desc["path"] = str(cfg.path(desc["path"]))
        for v in desc.values():
            _resolve_paths(v, cfg)
    elif isinstance(desc, list):
        for v in desc:
            _resolve_paths(v, cfg)


def build_phi(desc: dict, grid: Grid, cfg: RunConfig | None = None) -> np.ndarray | None:
    """Node array for a potential descriptor (``None`` for the zero potential)."""
    kind = desc["type"]
    coords = grid.node_coords()
    if kind == "zero":
        return None
    if kind == "radial":  # slope * |x - center|
        c = desc.get("center", [0.0] * grid.dim)
        r = np.sqrt(sum((coords[k] - c[k]) ** 2 for k in range(grid.dim)))
        return desc.get("slope", 1.0) * r
    if kind == "linear":
        gvec = desc.get("gradient", [0.0] * grid.dim)
        return sum(gvec[k] * (coords[k] - grid.origin[k]) for k in range(grid.dim))
    if kind == "gaussian":
        c = desc.get("center", [0.0] * grid.dim)
        w = desc.get("width", 1.0)
        r2 = sum((coords[k] - c[k]) ** 2 for k in range(grid.dim))
        return desc.get("amplitude", 1.0) * np.exp(-r2 / (2 * w * w))
    if kind == "file":
        if cfg is None:
            raise ConfigError("phi: file potentials need a config context")
        return cfg._field(desc["path"], grid)
    raise ConfigError(f"phi: unknown type {kind!r}")


def load_config(raw: dict, command: str | None = None, base_dir: Path | str = ".",
                seed: int | None = None) -> RunConfig:
    """Validate ``raw``, fill defaults and check cross-field constraints."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    validate(raw)
    cmd = command or raw.get("command")
    if cmd is None:
        raise ConfigError("no command given")
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown command {cmd!r}")
    if raw.get("command") not in (None, cmd):
        raise ConfigError(f"config is for command {raw['command']!r}, not {cmd!r}")
    data = _merge(DEFAULTS, {k: v for k, v in raw.items() if k != "command"})
    if seed is not None:
        data["seed"] = seed
    cfg = RunConfig(cmd, data, Path(base_dir))
    _check(cfg)
    return cfg


def _check(cfg: RunConfig) -> None:
    d = cfg.data
    cmd = cfg.command
    if cmd in NEEDS_GRID and "grid" not in d:
        raise ConfigError(f"grid: required for {cmd}")
    if "grid" in d:
        cfg.grid()
    drift = d["drift"]
    need = {"field": "paths", "gradient": "path"}.get(drift["type"])
    if need and need not in drift:
        raise ConfigError(f"drift: type {drift['type']!r} needs {need!r}")
    for p in drift.get("paths", []) + ([drift["path"]] if "path" in drift else []):
        if not cfg.path(p).exists():
            raise ConfigError(f"drift: file {p} not found")
    if d["phi"]["type"] == "file" and not cfg.path(d["phi"].get("path", "")).is_file():
        raise ConfigError("phi: file not found")
    if cmd in ("optimize-shape", "joint"):
        if "m" not in d:
            raise ConfigError(f"m: required for {cmd}")
        grid = cfg.grid()
        box_measure = measure(cfg.box(grid))
        if d["m"] > box_measure * (1 + 1e-12):
            raise ConfigError(f"m={d['m']} exceeds the box measure |D|={box_measure}")
    if cmd == "joint" and drift["type"] not in ("zero", "optimal"):
        raise ConfigError("joint: the drift is optimized; use drift type 'optimal' or leave it out")
    if cmd == "optimize-drift" and drift["type"] not in ("zero", "optimal"):
        raise ConfigError("optimize-drift: drift type must be 'optimal'")
    if cmd == "diagnose":
        diag = d["diagnose"]
        if "fixture" not in diag and not ("u" in diag and "mask" in diag):
            raise ConfigError("diagnose: give either fixture or both u and mask")
        for key in ("u", "mask"):
            if key in diag and not cfg.path(diag[key]).is_file():
                raise ConfigError(f"diagnose/{key}: file {diag[key]} not found")
    if not math.isfinite(d["tol_lambda"]):
        raise ConfigError("tol_lambda must be finite")


def parse_config(path: str | Path, command: str | None = None, seed: int | None = None) -> RunConfig:
    """Read a UTF-8 JSON config file; relative paths inside resolve against its directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return load_config(raw, command, path.parent, seed)


def write_resolved(cfg: RunConfig, out_dir: Path) -> Path:
    target = out_dir / "resolved_config.json"
    target.write_text(json.dumps(cfg.resolved(), indent=2, sort_keys=True) + "\n")
    return target
