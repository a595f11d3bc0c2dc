"""Problem-file ingestion.

A problem is a JSON document with top-level keys grid, jumps, coefficients,
cones, initial (plus an optional delta_lower).  Control dimensions are
inferred from B1 and B2 and cross-checked against every other field;
coefficient entries are scalars/arrays (constant in time) or per-step
arrays of length n_steps.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import CoefficientSet, Cone, InitialLaw, JumpMeasure, TimeGrid

__all__ = ["Problem", "parse_problem", "load_problem", "config_hash"]


@dataclass(frozen=True)
class Problem:
    grid: TimeGrid
    jumps: JumpMeasure
    coeffs: CoefficientSet
    cones: tuple[Cone, Cone]
    init: InitialLaw
    delta_lower: float
    raw: dict


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"missing key {key!r} in {where}")
    return d[key]


def _vector_dim(name: str, value) -> int:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return 1
    if arr.ndim == 1:
        return arr.size
    if arr.ndim == 2:
        return arr.shape[1]
    raise ConfigError(f"{name}: cannot infer a control dimension from shape {arr.shape}")


def _parse_cone(spec, dim: int, name: str) -> Cone:
    if isinstance(spec, str):
        kind = spec.lower()
        if kind in ("full", "fullspace", "free"):
            return Cone.full(dim)
        if kind in ("orthant", "nonnegative", "nonneg"):
            return Cone.orthant(dim)
        if kind == "zero":
            return Cone.zero(dim)
        raise ConfigError(f"{name}: unknown cone shorthand {spec!r}")
    if not isinstance(spec, dict):
        raise ConfigError(f"{name}: cone must be a string or an object")
    kind = _require(spec, "type", name).lower()
    d = int(spec.get("dim", dim))
    if d != dim:
        raise ConfigError(f"{name}: cone dim {d} conflicts with control dimension {dim}")
    if kind in ("full", "fullspace"):
        return Cone.full(d)
    if kind in ("orthant", "nonnegative"):
        return Cone.orthant(d)
    if kind == "zero":
        return Cone.zero(d)
    if kind in ("generated", "finitely_generated"):
        gens = spec.get("generators", [])
        arr = np.asarray(gens, dtype=float)
        if arr.size == 0:
            return Cone.zero(d)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        # rows are generators in the file; columns internally
        if arr.shape[1] != d:
            raise ConfigError(f"{name}: each generator must have {d} entries")
        return Cone.generated(arr.T, dim=d)
    raise ConfigError(f"{name}: unknown cone type {kind!r}")


def _parse_initial(spec) -> InitialLaw:
    if not isinstance(spec, dict):
        raise ConfigError("initial must be an object with 'point' or 'sampler'")
    if "point" in spec:
        return InitialLaw.point(float(spec["point"]))
    if "sampler" in spec:
        s = spec["sampler"]
        kind = _require(s, "kind", "initial.sampler").lower()
        if kind == "normal":
            return InitialLaw.normal(float(s.get("mean", 0.0)), float(_require(s, "std", "initial.sampler")))
        if kind == "uniform":
            return InitialLaw.uniform(float(_require(s, "low", "initial.sampler")), float(_require(s, "high", "initial.sampler")))
        if kind == "choice":
            return InitialLaw.choice(_require(s, "values", "initial.sampler"), s.get("probs"))
        raise ConfigError(f"initial.sampler: unknown kind {kind!r}")
    raise ConfigError("initial must contain 'point' or 'sampler'")


def parse_problem(cfg: dict, n_steps_override: int | None = None) -> Problem:
    """Build a Problem from a parsed configuration dict."""
    if not isinstance(cfg, dict):
        raise ConfigError("configuration root must be an object")
    gspec = _require(cfg, "grid", "configuration")
    T = float(_require(gspec, "T", "grid"))
    n_steps = int(n_steps_override if n_steps_override is not None else _require(gspec, "n_steps", "grid"))
    grid = TimeGrid(T, n_steps)

    marks = cfg.get("jumps", {}).get("marks", [])
    nu = np.array([float(_require(m, "nu", f"jumps.marks[{i}]")) for i, m in enumerate(marks)])
    jumps = JumpMeasure(nu) if nu.size else JumpMeasure.none()

    cspec = _require(cfg, "coefficients", "configuration")
    for key in ("B1", "B2", "R11", "R22", "G"):
        _require(cspec, key, "coefficients")
    m1 = _vector_dim("B1", cspec["B1"])
    m2 = _vector_dim("B2", cspec["B2"])

    J = jumps.n_marks
    E_cols, F1_rows, F2_rows = [], [], []
    for i, m in enumerate(marks):
        E_cols.append(np.broadcast_to(np.asarray(m.get("E", 0.0), dtype=float), (n_steps,)).copy()
                      if np.asarray(m.get("E", 0.0)).ndim <= 1 and np.asarray(m.get("E", 0.0)).size in (1, n_steps)
                      else None)
        if E_cols[-1] is None:
            raise ConfigError(f"jumps.marks[{i}].E must be a scalar or a per-step array")
        f1 = np.asarray(m.get("F1", np.zeros(m1)), dtype=float).reshape(-1)
        f2 = np.asarray(m.get("F2", np.zeros(m2)), dtype=float).reshape(-1)
        if f1.size != m1:
            raise ConfigError(f"jumps.marks[{i}].F1 must have {m1} entries")
        if f2.size != m2:
            raise ConfigError(f"jumps.marks[{i}].F2 must have {m2} entries")
        F1_rows.append(f1)
        F2_rows.append(f2)
    E = np.column_stack(E_cols) if J else None
    F1 = np.stack(F1_rows) if J else None
    F2 = np.stack(F2_rows) if J else None

    try:
        coeffs = CoefficientSet.build(
            grid, jumps, m1, m2,
            A=cspec.get("A", 0.0), B1=cspec["B1"], B2=cspec["B2"], C=cspec.get("C", 0.0),
            D1=cspec.get("D1"), D2=cspec.get("D2"), Q=cspec.get("Q", 0.0),
            S1=cspec.get("S1"), S2=cspec.get("S2"),
            R11=cspec["R11"], R12=cspec.get("R12"), R22=cspec["R22"], G=cspec["G"],
            E=E, F1=F1, F2=F2,
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"coefficients: {exc}") from exc

    cones_spec = _require(cfg, "cones", "configuration")
    cone1 = _parse_cone(_require(cones_spec, "pi1", "cones"), m1, "cones.pi1")
    cone2 = _parse_cone(_require(cones_spec, "pi2", "cones"), m2, "cones.pi2")
    init = _parse_initial(_require(cfg, "initial", "configuration"))
    delta_lower = float(cfg.get("delta_lower", 1e-3))
    if delta_lower <= 0:
        raise ConfigError("delta_lower must be > 0")
    return Problem(grid, jumps, coeffs, (cone1, cone2), init, delta_lower, raw=cfg)


def load_problem(path, n_steps_override: int | None = None) -> Problem:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"problem file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"problem file is not valid JSON: {exc}") from exc
    return parse_problem(cfg, n_steps_override)
