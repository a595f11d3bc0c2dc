"""Backward solver for the coupled Riccati system in the deterministic-
coefficient regime.

With deterministic coefficients the martingale terms vanish, leaving a pair
of coupled scalar ODEs

    dP_k/dt = -[ (2A + C^2) P_k + Q + H_k^*(P_1, P_2) ],   P_k(T) = G,

whose right sides carry the cone-constrained saddle values.  Integration is
classic four-stage Runge-Kutta backward from T with the saddle evaluated at
every stage.  The truncation ladder solves the same system with the
Hamiltonian maps restricted to balls of radius n (min side) and nbar (max
side), which bounds the exact solution monotonically from above and below.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUpError, ConvergenceError, CurvatureError
from .hamiltonian import (
    SaddleResult,
    build_terms_from_step,
    fast_scalar_saddle,
    saddle,
    truncated_concave_max,
    truncated_convex_min,
)
from .model import AssumptionReport, CoefficientSet, Cone, TimeGrid, validate_coefficients

__all__ = [
    "RiccatiSolution",
    "BoundsEnvelope",
    "LadderReport",
    "solve_ode",
    "solve_truncated",
    "monotone_ladder",
    "bounds_envelope",
    "solution_to_csv",
    "solution_from_csv",
    "solution_to_json",
    "solution_from_json",
]

_FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class RiccatiSolution:
    """Time-indexed solution arrays plus the per-node saddle caches.

    In deterministic mode the martingale components L1, L2, G1, G2 are
    identically zero; they are kept so lattice solutions share the schema.
    """

    grid: TimeGrid
    P1: np.ndarray
    P2: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    G1: np.ndarray  # (n_nodes, J)
    G2: np.ndarray
    saddle1: list[SaddleResult]
    saddle2: list[SaddleResult]
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.P1.size

    def value_at_zero(self, xi: float) -> float:
        """The game value P1(0) (xi^+)^2 + P2(0) (xi^-)^2 for a point start."""
        return float(self.P1[0] * max(xi, 0.0) ** 2 + self.P2[0] * max(-xi, 0.0) ** 2)


@dataclass(frozen=True)
class BoundsEnvelope:
    """Exponential sub/super-solution envelopes evaluated on the grid."""

    grid: TimeGrid
    lower: np.ndarray
    upper: np.ndarray
    delta_lower: float
    c_lower1: float
    cbar: float
    delta_bar: float
    K: float


@dataclass(frozen=True)
class LadderComparison:
    level_a: tuple[float, float]
    level_b: tuple[float, float]
    axis: str  # "n" | "nbar"
    max_signed_diff: float  # max over nodes of P_b - P_a
    min_signed_diff: float
    ok: bool


@dataclass(frozen=True)
class LadderReport:
    levels: list[tuple[float, float]]
    comparisons: list[LadderComparison]
    tol: float

    @property
    def monotone(self) -> bool:
        return all(c.ok for c in self.comparisons)


def _blowup_threshold(report: AssumptionReport, G: float) -> float:
    if report.assumptions_ok:
        return 10.0 * report.K
    return 10.0 * max(abs(G), 1.0) * float(np.exp(10.0 * report.cbar * report.T))


def _stage_values(
    step,
    i: int,
    P1: float,
    P2: float,
    cones: tuple[Cone, Cone],
    trunc: tuple[float, float] | None,
    warm: list,
) -> tuple[float, float, SaddleResult | None, SaddleResult | None]:
    """Saddle values H_1^*, H_2^* at one coefficient slice and state."""
    fast1 = fast_scalar_saddle(1, step, P1, P2, cone1=cones[0], cone2=cones[1], trunc=trunc, warm=warm[0])
    if fast1 is not None:
        fast2 = fast_scalar_saddle(2, step, P1, P2, cone1=cones[0], cone2=cones[1], trunc=trunc, warm=warm[1])
        warm[0] = (float(fast1.v1[0]), float(fast1.v2[0]))
        warm[1] = (float(fast2.v1[0]), float(fast2.v2[0]))
        return fast1.value, fast2.value, fast1, fast2
    terms = build_terms_from_step(step, P1, P2, t_idx=i)
    if trunc is None:
        s1 = saddle(1, terms, cones[0], cones[1], warm=warm[0])
        s2 = saddle(2, terms, cones[0], cones[1], warm=warm[1])
        warm[0] = (s1.v1, s1.v2)
        warm[1] = (s2.v1, s2.v2)
        return s1.value, s2.value, s1, s2
    n_rad, nbar_rad = trunc
    vals = []
    sds = []
    for k in (1, 2):
        v1, low = truncated_convex_min(k, terms, cones[0], radius=n_rad)
        v2, high = truncated_concave_max(k, terms, cones[1], radius=nbar_rad)
        vals.append(low + high)
        sds.append(SaddleResult(v1, v2, low + high, 0, 0.0, "analytic"))
    return vals[0], vals[1], sds[0], sds[1]


def solve_ode(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    jumps,
    cones: tuple[Cone, Cone],
    *,
    trunc: tuple[float, float] | None = None,
    delta_lower: float = 1e-3,
    report: AssumptionReport | None = None,
    meta: dict | None = None,
) -> RiccatiSolution:
    """Integrate the coupled system backward from P_k(T) = G.

    Saddle iterations are warm-started from the previous node.  Aborts with
    a blow-up error when |P_k| leaves the guard region derived from the
    assumption report.
    """
    if coeffs.is_adapted:
        raise ValueError("solve_ode needs deterministic coefficients; use the lattice solver")
    if report is None:
        report = validate_coefficients(coeffs, grid, jumps, delta_lower)
    if not report.assumptions_ok:
        failed = [name for name, ok in report.flags.items() if not ok]
        warnings.warn(
            f"standing-assumption flags failed ({failed}); solving anyway without a priori bounds",
            stacklevel=2,
        )
    guard = _blowup_threshold(report, coeffs.G)
    n = grid.n_steps
    dt = grid.dt
    P1 = np.empty(n + 1)
    P2 = np.empty(n + 1)
    P1[n] = P2[n] = coeffs.G
    warm = [None, None]

    def f(i, step, p1, p2):
        if not (np.isfinite(p1) and np.isfinite(p2)):
            raise BlowUpError(f"non-finite state while stepping to node {i}", node=i)
        try:
            h1, h2, _, _ = _stage_values(step, i, p1, p2, cones, trunc, warm)
        except (CurvatureError, ConvergenceError) as exc:
            raise type(exc)(f"saddle evaluation failed at node {i}: {exc}") from exc
        lin = 2.0 * step.A + step.C * step.C
        return lin * p1 + step.Q + h1, lin * p2 + step.Q + h2

    y1 = y2 = float(coeffs.G)
    for i in range(n - 1, -1, -1):
        step = coeffs.at(i)
        a1, a2 = f(i, step, y1, y2)
        b1, b2 = f(i, step, y1 + 0.5 * dt * a1, y2 + 0.5 * dt * a2)
        c1, c2 = f(i, step, y1 + 0.5 * dt * b1, y2 + 0.5 * dt * b2)
        d1, d2 = f(i, step, y1 + dt * c1, y2 + dt * c2)
        y1 = y1 + (dt / 6.0) * (a1 + 2.0 * b1 + 2.0 * c1 + d1)
        y2 = y2 + (dt / 6.0) * (a2 + 2.0 * b2 + 2.0 * c2 + d2)
        if abs(y1) > guard or abs(y2) > guard:
            raise BlowUpError(
                f"|P| exceeded the guard {guard:.3e} at node {i} (P = ({y1}, {y2}))", node=i
            )
        P1[i], P2[i] = y1, y2

    # cache the saddle at every node for feedback extraction and reports
    saddle1: list[SaddleResult] = []
    saddle2: list[SaddleResult] = []
    warm = [None, None]
    for i in range(n + 1):
        j = min(i, n - 1)
        _, _, s1, s2 = _stage_values(coeffs.at(j), j, P1[i], P2[i], cones, trunc, warm)
        saddle1.append(s1)
        saddle2.append(s2)

    J = jumps.n_marks
    md = {"method": "rk4", "n_steps": n, "trunc": trunc, "guard": guard}
    if meta:
        md.update(meta)
    return RiccatiSolution(
        grid=grid,
        P1=P1,
        P2=P2,
        L1=np.zeros(n + 1),
        L2=np.zeros(n + 1),
        G1=np.zeros((n + 1, J)),
        G2=np.zeros((n + 1, J)),
        saddle1=saddle1,
        saddle2=saddle2,
        meta=md,
    )


def solve_truncated(
    n_radius: float,
    nbar_radius: float,
    coeffs: CoefficientSet,
    grid: TimeGrid,
    jumps,
    cones: tuple[Cone, Cone],
    *,
    delta_lower: float = 1e-3,
    report: AssumptionReport | None = None,
) -> RiccatiSolution:
    """Backward solve with the Hamiltonian maps restricted to balls.

    Requires the structural restriction (no v2 jump loading, no state-control
    cross weights, no control cross weight, orthogonal diffusion loadings)
    under which the saddle decomposes into independent min and max problems.
    """
    if report is None:
        report = validate_coefficients(coeffs, grid, jumps, delta_lower)
    if not report.structure_ok:
        failed = [k for k, v in report.structural.items() if not v]
        raise ValueError(f"truncated solve needs the structural restriction; failed: {failed}")
    if n_radius < 0 or nbar_radius < 0:
        raise ValueError("truncation radii must be >= 0")
    return solve_ode(
        coeffs,
        grid,
        jumps,
        cones,
        trunc=(float(n_radius), float(nbar_radius)),
        delta_lower=delta_lower,
        report=report,
        meta={"trunc": (float(n_radius), float(nbar_radius))},
    )


def monotone_ladder(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    jumps,
    cones: tuple[Cone, Cone],
    levels: list[tuple[float, float]],
    tol: float = 1e-8,
    *,
    delta_lower: float = 1e-3,
) -> tuple[RiccatiSolution, LadderReport]:
    """Solve the truncated system at every ladder level and check that the
    node values decrease in the min-side radius and increase in the max-side
    radius.  Returns the finest-level solution as the limit approximation."""
    if not levels:
        raise ValueError("levels must be non-empty")
    report = validate_coefficients(coeffs, grid, jumps, delta_lower)
    sols: dict[tuple[float, float], RiccatiSolution] = {}
    for lvl in levels:
        try:
            sols[lvl] = solve_truncated(lvl[0], lvl[1], coeffs, grid, jumps, cones, report=report)
        except Exception as exc:
            raise type(exc)(f"ladder level {lvl} failed: {exc}") from exc

    comparisons: list[LadderComparison] = []
    ns = sorted({lvl[0] for lvl in levels})
    nbars = sorted({lvl[1] for lvl in levels})
    for nbar in nbars:
        chain = [lvl for lvl in levels if lvl[1] == nbar]
        chain.sort()
        for a, b in zip(chain[:-1], chain[1:]):
            diff = np.concatenate([sols[b].P1 - sols[a].P1, sols[b].P2 - sols[a].P2])
            comparisons.append(
                LadderComparison(a, b, "n", float(diff.max()), float(diff.min()), bool(diff.max() <= tol))
            )
    for nval in ns:
        chain = [lvl for lvl in levels if lvl[0] == nval]
        chain.sort(key=lambda lv: lv[1])
        for a, b in zip(chain[:-1], chain[1:]):
            diff = np.concatenate([sols[b].P1 - sols[a].P1, sols[b].P2 - sols[a].P2])
            comparisons.append(
                LadderComparison(a, b, "nbar", float(diff.max()), float(diff.min()), bool(diff.min() >= -tol))
            )
    finest = max(levels, key=lambda lv: (lv[0] + lv[1], lv))
    return sols[finest], LadderReport(levels=list(levels), comparisons=comparisons, tol=tol)


def bounds_envelope(report: AssumptionReport, grid: TimeGrid) -> BoundsEnvelope:
    """Exact evaluation of the exponential sub/super-solution envelopes."""
    for name in ("cbar", "delta_lower", "delta_bar", "K", "c_lower1"):
        v = getattr(report, name)
        if not (np.isfinite(v) and v > 0):
            raise ValueError(f"report constant {name} must be positive and finite, got {v}")
    tau = report.T - grid.times()
    lower = report.delta_lower * np.exp(-report.c_lower1 * tau)
    ratio = (report.delta_bar + report.K**2) / report.delta_bar
    upper = (report.cbar + ratio) * np.exp(2.0 * report.cbar * tau) - ratio
    return BoundsEnvelope(
        grid=grid,
        lower=lower,
        upper=upper,
        delta_lower=report.delta_lower,
        c_lower1=report.c_lower1,
        cbar=report.cbar,
        delta_bar=report.delta_bar,
        K=report.K,
    )


# ----------------------------------------------------------------------
# serialization: columnar CSV and a JSON document, 17 significant digits
# ----------------------------------------------------------------------


def _csv_header(J: int, m1: int, m2: int) -> list[str]:
    cols = ["t", "P1", "P2", "L1", "L2"]
    cols += [f"G1_{j}" for j in range(J)] + [f"G2_{j}" for j in range(J)]
    cols += [f"v1p_{l}" for l in range(m1)] + [f"v2p_{l}" for l in range(m2)]
    cols += [f"v1m_{l}" for l in range(m1)] + [f"v2m_{l}" for l in range(m2)]
    cols += ["H1s", "H2s"]
    return cols


def solution_to_csv(sol: RiccatiSolution) -> str:
    J = sol.G1.shape[1]
    m1 = sol.saddle1[0].v1.size
    m2 = sol.saddle1[0].v2.size
    times = sol.grid.times()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_csv_header(J, m1, m2))
    for i in range(sol.n_nodes):
        row = [times[i], sol.P1[i], sol.P2[i], sol.L1[i], sol.L2[i]]
        row += list(sol.G1[i]) + list(sol.G2[i])
        row += list(sol.saddle1[i].v1) + list(sol.saddle1[i].v2)
        row += list(sol.saddle2[i].v1) + list(sol.saddle2[i].v2)
        row += [sol.saddle1[i].value, sol.saddle2[i].value]
        w.writerow([_FLOAT_FMT % v for v in row])
    return buf.getvalue()


def solution_from_csv(text: str) -> RiccatiSolution:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    rows = list(csv.reader(io.StringIO("\n".join(lines))))
    header, data = rows[0], rows[1:]
    J = sum(1 for h in header if h.startswith("G1_"))
    m1 = sum(1 for h in header if h.startswith("v1p_"))
    m2 = sum(1 for h in header if h.startswith("v2p_"))
    arr = np.array([[float(v) for v in row] for row in data])
    n_nodes = arr.shape[0]
    t = arr[:, 0]
    grid = TimeGrid(float(t[-1]), n_nodes - 1)
    idx = 5
    G1 = arr[:, idx : idx + J]
    G2 = arr[:, idx + J : idx + 2 * J]
    idx += 2 * J
    v1p = arr[:, idx : idx + m1]
    v2p = arr[:, idx + m1 : idx + m1 + m2]
    idx += m1 + m2
    v1m = arr[:, idx : idx + m1]
    v2m = arr[:, idx + m1 : idx + m1 + m2]
    idx += m1 + m2
    h1, h2 = arr[:, idx], arr[:, idx + 1]
    saddle1 = [SaddleResult(v1p[i], v2p[i], float(h1[i]), 0, 0.0, "loaded") for i in range(n_nodes)]
    saddle2 = [SaddleResult(v1m[i], v2m[i], float(h2[i]), 0, 0.0, "loaded") for i in range(n_nodes)]
    return RiccatiSolution(
        grid=grid,
        P1=arr[:, 1],
        P2=arr[:, 2],
        L1=arr[:, 3],
        L2=arr[:, 4],
        G1=G1,
        G2=G2,
        saddle1=saddle1,
        saddle2=saddle2,
        meta={"loaded_from": "csv"},
    )


def _saddle_to_dict(s: SaddleResult) -> dict:
    return {
        "v1": list(s.v1),
        "v2": list(s.v2),
        "value": s.value,
        "iterations": s.iterations,
        "residual": s.residual,
        "method": s.method,
    }


def solution_to_json(sol: RiccatiSolution, extra: dict | None = None) -> str:
    doc = {
        "format": "conelq.riccati",
        "grid": {"T": sol.grid.T, "n_steps": sol.grid.n_steps},
        "P1": list(sol.P1),
        "P2": list(sol.P2),
        "L1": list(sol.L1),
        "L2": list(sol.L2),
        "G1": [list(r) for r in sol.G1],
        "G2": [list(r) for r in sol.G2],
        "saddle1": [_saddle_to_dict(s) for s in sol.saddle1],
        "saddle2": [_saddle_to_dict(s) for s in sol.saddle2],
        "meta": {k: (list(v) if isinstance(v, tuple) else v) for k, v in sol.meta.items()},
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, sort_keys=True, indent=1)


def solution_from_json(text: str) -> RiccatiSolution:
    doc = json.loads(text)
    if doc.get("format") != "conelq.riccati":
        raise ValueError("not a riccati solution document")
    grid = TimeGrid(doc["grid"]["T"], doc["grid"]["n_steps"])

    def sd(d):
        return SaddleResult(
            np.array(d["v1"]), np.array(d["v2"]), d["value"], d["iterations"], d["residual"], d["method"]
        )

    return RiccatiSolution(
        grid=grid,
        P1=np.array(doc["P1"]),
        P2=np.array(doc["P2"]),
        L1=np.array(doc["L1"]),
        L2=np.array(doc["L2"]),
        G1=np.array(doc["G1"]).reshape(len(doc["P1"]), -1),
        G2=np.array(doc["G2"]).reshape(len(doc["P1"]), -1),
        saddle1=[sd(d) for d in doc["saddle1"]],
        saddle2=[sd(d) for d in doc["saddle2"]],
        meta=doc.get("meta", {}),
    )
