"""Forward simulation under the feedback saddle law and the Monte Carlo
verification suites.

Paths are generated in fixed-size batches.  Each batch owns a counter-based
random stream keyed by (master seed, batch index), so runs are reproducible
in fixed path order and comparison arms share every random draw (initial
state, Brownian increments, jump counts) with their baseline: common random
numbers throughout.  Jump counts per step are drawn from the exact Poisson
law of the per-mark exponential clocks; coefficients and state are frozen at
the left endpoint within a step, matching the predictability convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import NumericsError
from .lattice import LatticeSolution
from .model import CoefficientSet, Cone, InitialLaw, JumpMeasure, TimeGrid, cone_contains
from .riccati import RiccatiSolution

__all__ = [
    "FeedbackLaw",
    "ControlSpec",
    "SimulationResult",
    "Arm",
    "extract_feedback",
    "simulate_paths",
    "evaluate_cost",
    "path_cost",
    "verify_value_formula",
    "verify_saddle",
    "default_perturbation_corpus",
    "completion_residual",
    "verify_completion_identity",
    "verify_convexity_identity",
    "directional_stationarity",
]

DEFAULT_BATCH = 4096
CONE_TOL = 1e-9


@dataclass(frozen=True)
class FeedbackLaw:
    """Per-step saddle directions applied to the state's positive and
    negative parts: u(t) = theta_plus X^+(t) + theta_minus X^-(t)."""

    grid: TimeGrid
    th1p: np.ndarray  # (n, m1)
    th2p: np.ndarray  # (n, m2)
    th1m: np.ndarray
    th2m: np.ndarray

    def __post_init__(self):
        n = self.grid.n_steps
        for name in ("th1p", "th2p", "th1m", "th2m"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            if arr.ndim != 2 or arr.shape[0] != n:
                raise ValueError(f"{name} must have shape ({n}, m)")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def max_gain(self) -> float:
        return float(
            max(
                np.max(np.linalg.norm(self.th1p, axis=1), initial=0.0),
                np.max(np.linalg.norm(self.th2p, axis=1), initial=0.0),
                np.max(np.linalg.norm(self.th1m, axis=1), initial=0.0),
                np.max(np.linalg.norm(self.th2m, axis=1), initial=0.0),
            )
        )

    def scaled(self, factor_plus: float = 1.0, factor_minus: float = 1.0) -> "FeedbackLaw":
        """Rescale the positive-part and/or negative-part direction pairs
        (used by the corrupted-feedback falsification control)."""
        return FeedbackLaw(
            self.grid,
            factor_plus * self.th1p,
            factor_plus * self.th2p,
            factor_minus * self.th1m,
            factor_minus * self.th2m,
        )

    def check_cones(self, cone1: Cone, cone2: Cone, tol: float = CONE_TOL) -> bool:
        for i in range(self.grid.n_steps):
            if not (
                cone_contains(cone1, self.th1p[i], tol)
                and cone_contains(cone1, self.th1m[i], tol)
                and cone_contains(cone2, self.th2p[i], tol)
                and cone_contains(cone2, self.th2m[i], tol)
            ):
                return False
        return True


@dataclass(frozen=True)
class ControlSpec:
    """General control: scale * feedback + deterministic offset schedule.

    Replay components (per-path recorded controls) are attached internally
    by the verification suites, never by callers.
    """

    feedback: FeedbackLaw | None = None
    fb_scale: float = 1.0
    off1: np.ndarray | None = None  # (n, m1)
    off2: np.ndarray | None = None


@dataclass(frozen=True)
class SimulationResult:
    n_paths: int
    seed: int
    cost_samples: np.ndarray
    mean: float
    stderr: float
    x0_kept: np.ndarray
    X_kept: np.ndarray  # (keep, n+1)
    U1_kept: np.ndarray  # (keep, n, m1)
    U2_kept: np.ndarray
    jump_log: list  # per kept path: list of (step, mark)
    terminal: np.ndarray  # terminal states, all paths
    meta: dict = field(default_factory=dict)


def extract_feedback(sol, tol: float = CONE_TOL) -> FeedbackLaw:
    """Per-step saddle directions from a solution's saddle caches.

    The first equation's saddle pair drives the positive part of the state,
    the second equation's the negative part.  Lattice solutions collapse
    layer by layer, which requires deterministic coefficients: all nodes of
    a layer must carry the same directions within tolerance.
    """
    if isinstance(sol, RiccatiSolution):
        n = sol.grid.n_steps
        if not sol.saddle1 or sol.saddle1[0] is None:
            raise ValueError("solution carries no saddle cache")
        th1p = np.stack([sol.saddle1[i].v1 for i in range(n)])
        th2p = np.stack([sol.saddle1[i].v2 for i in range(n)])
        th1m = np.stack([sol.saddle2[i].v1 for i in range(n)])
        th2m = np.stack([sol.saddle2[i].v2 for i in range(n)])
        return FeedbackLaw(sol.grid, th1p, th2p, th1m, th2m)
    if isinstance(sol, LatticeSolution):
        n = sol.lattice.n_steps
        stacks = []
        for arrs in (sol.V1p, sol.V2p, sol.V1m, sol.V2m):
            rows = []
            for s in range(n):
                layer = arrs[s]
                spread = float(np.ptp(layer, axis=0).max(initial=0.0))
                if spread > 1e-6:
                    raise ValueError(
                        f"lattice saddle directions vary across layer {s} (spread {spread:.3e}); "
                        "a time-indexed law needs deterministic coefficients"
                    )
                rows.append(layer.mean(axis=0))
            stacks.append(np.stack(rows))
        return FeedbackLaw(sol.lattice.grid, *stacks)
    raise TypeError(f"cannot extract feedback from {type(sol).__name__}")


def _as_spec(law) -> ControlSpec:
    if isinstance(law, ControlSpec):
        return law
    if isinstance(law, FeedbackLaw):
        return ControlSpec(feedback=law)
    if isinstance(law, tuple) and len(law) == 2:
        return ControlSpec(feedback=None, fb_scale=0.0, off1=np.asarray(law[0], float), off2=np.asarray(law[1], float))
    raise TypeError("law must be a FeedbackLaw, a ControlSpec, or a (u1, u2) schedule pair")


def _batch_rng(seed: int, batch: int) -> np.random.Generator:
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(batch)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _batch_sizes(n_paths: int, batch_size: int) -> list[int]:
    full, rem = divmod(n_paths, batch_size)
    return [batch_size] * full + ([rem] if rem else [])


class _BatchDraws:
    """All randomness of one batch, drawn in a fixed order."""

    def __init__(self, rng, init: InitialLaw, n: int, nb: int, nu: np.ndarray, dt: float):
        self.x0 = np.ascontiguousarray(init.sample(rng, nb), dtype=float)
        self.dW = np.ascontiguousarray(rng.standard_normal((n, nb)) * math.sqrt(dt))
        if nu.size:
            self.counts = np.ascontiguousarray(
                np.stack([rng.poisson(nu[j] * dt, (n, nb)) for j in range(nu.size)]).astype(np.float64)
            )
        else:
            self.counts = np.zeros((0, n, nb))

    def with_zero_start(self) -> "_BatchDraws":
        """Same noise, state started at zero (for the homogeneous cost)."""
        clone = object.__new__(_BatchDraws)
        clone.x0 = np.zeros_like(self.x0)
        clone.dW = self.dW
        clone.counts = self.counts
        return clone


def _run_batch(coeffs: CoefficientSet, grid: TimeGrid, draws: _BatchDraws, spec: ControlSpec,
               rep1=None, rep2=None, keep: int = 0, record: bool = False):
    n = grid.n_steps
    m1, m2 = coeffs.m1, coeffs.m2
    fb = spec.feedback
    zeros = lambda m: np.zeros((1, m))
    th1p = fb.th1p if fb is not None else zeros(m1)
    th1m = fb.th1m if fb is not None else zeros(m1)
    th2p = fb.th2p if fb is not None else zeros(m2)
    th2m = fb.th2m if fb is not None else zeros(m2)
    fb_scale = spec.fb_scale if fb is not None else 0.0
    off1 = None if spec.off1 is None else np.ascontiguousarray(spec.off1, dtype=float)
    off2 = None if spec.off2 is None else np.ascontiguousarray(spec.off2, dtype=float)
    if off1 is not None or off2 is not None:
        off1 = off1 if off1 is not None else np.zeros((n, m1))
        off2 = off2 if off2 is not None else np.zeros((n, m2))
        if off1.shape != (n, m1) or off2.shape != (n, m2):
            raise ValueError(f"offset schedules must have shapes ({n}, {m1}) and ({n}, {m2})")
    if rep1 is not None:
        rep1 = np.ascontiguousarray(rep1)
        rep2 = np.ascontiguousarray(rep2)
    return backend.simulate_batch(
        draws.x0, draws.dW, draws.counts,
        coeffs.A, coeffs.C, coeffs.Q,
        coeffs.B1, coeffs.D1, coeffs.S1,
        coeffs.B2, coeffs.D2, coeffs.S2,
        coeffs.R11, coeffs.R12, coeffs.R22,
        coeffs.E, coeffs.F1, coeffs.F2, coeffs.nu,
        coeffs.G, grid.dt,
        np.ascontiguousarray(th1p), np.ascontiguousarray(th1m),
        np.ascontiguousarray(th2p), np.ascontiguousarray(th2m),
        float(fb_scale),
        off1, off2,
        rep1, rep2,
        int(keep), bool(record),
    )


def _mean_stderr(samples: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(samples))
    if samples.size < 2:
        return mean, float("inf")
    return mean, float(np.std(samples, ddof=1) / math.sqrt(samples.size))


def simulate_paths(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    jumps: JumpMeasure,
    law,
    init: InitialLaw,
    n_paths: int,
    seed: int,
    *,
    keep_paths: int = 32,
    batch_size: int = DEFAULT_BATCH,
) -> SimulationResult:
    """Euler stepping of the controlled state with exact per-step jump
    counts and the compensator folded into the drift; returns per-path cost
    samples plus full trajectories for the first keep_paths paths."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    spec = _as_spec(law)
    n = grid.n_steps
    costs = []
    terminals = []
    kept = None
    jump_log: list = []
    x0_kept = None
    for b, nb in enumerate(_batch_sizes(n_paths, batch_size)):
        draws = _BatchDraws(_batch_rng(seed, b), init, n, nb, jumps.nu, grid.dt)
        keep = min(keep_paths, nb) if b == 0 else 0
        cost, xT, Xk, U1k, U2k, _, _ = _run_batch(coeffs, grid, draws, spec, keep=keep)
        costs.append(cost)
        terminals.append(xT)
        if b == 0:
            kept = (Xk, U1k, U2k)
            x0_kept = draws.x0[:keep].copy()
            for p in range(keep):
                events = []
                for j in range(jumps.n_marks):
                    for i in np.nonzero(draws.counts[j, :, p])[0]:
                        events.extend([(int(i), j)] * int(draws.counts[j, i, p]))
                jump_log.append(sorted(events))
    cost_samples = np.concatenate(costs)
    terminal = np.concatenate(terminals)
    if not np.all(np.isfinite(cost_samples)):
        bad = int(np.argmin(np.isfinite(cost_samples)))
        raise NumericsError(f"non-finite cost on path {bad}")
    mean, stderr = _mean_stderr(cost_samples)
    Xk, U1k, U2k = kept
    return SimulationResult(
        n_paths=n_paths,
        seed=seed,
        cost_samples=cost_samples,
        mean=mean,
        stderr=stderr,
        x0_kept=x0_kept,
        X_kept=Xk,
        U1_kept=U1k,
        U2_kept=U2k,
        jump_log=jump_log,
        terminal=terminal,
        meta={"batch_size": batch_size, "backend": backend.BACKEND_NAME},
    )


def path_cost(X: np.ndarray, u1: np.ndarray, u2: np.ndarray, coeffs: CoefficientSet, grid: TimeGrid) -> float:
    """Left-endpoint Riemann sum of the running quadratic form plus the
    terminal term, for a single trajectory."""
    dt = grid.dt
    total = 0.0
    for i in range(grid.n_steps):
        x = X[i]
        a = u1[i]
        b = u2[i]
        total += dt * (
            coeffs.Q[i] * x * x
            + 2.0 * x * float(coeffs.S1[i] @ a)
            + 2.0 * x * float(coeffs.S2[i] @ b)
            + float(a @ coeffs.R11[i] @ a)
            + 2.0 * float(a @ coeffs.R12[i] @ b)
            + float(b @ coeffs.R22[i] @ b)
        )
    return total + coeffs.G * X[-1] * X[-1]


def evaluate_cost(
    result: SimulationResult,
    coeffs: CoefficientSet | None = None,
    grid: TimeGrid | None = None,
) -> tuple[float, float]:
    """Sample mean and standard error of the per-path cost.

    When coefficients and grid are supplied, the kept trajectories are
    re-integrated with the reference quadrature and checked against the
    kernel's inline accumulation before reporting."""
    if coeffs is not None and grid is not None and result.X_kept.shape[0]:
        for p in range(result.X_kept.shape[0]):
            ref = path_cost(result.X_kept[p], result.U1_kept[p], result.U2_kept[p], coeffs, grid)
            got = result.cost_samples[p]
            if abs(ref - got) > 1e-9 * (1.0 + abs(ref)):
                raise NumericsError(
                    f"kernel cost disagrees with the reference quadrature on path {p}: "
                    f"{got!r} vs {ref!r}"
                )
    return _mean_stderr(result.cost_samples)


def verify_value_formula(
    sol: RiccatiSolution,
    law,
    coeffs: CoefficientSet,
    grid: TimeGrid,
    jumps: JumpMeasure,
    init: InitialLaw,
    n_paths: int,
    seed: int,
    *,
    batch_size: int = DEFAULT_BATCH,
) -> dict:
    """Monte Carlo cost under the saddle law against P1(0) E(xi^+)^2 +
    P2(0) E(xi^-)^2, with the initial draws shared so the comparison is
    per-path."""
    spec = _as_spec(law)
    n = grid.n_steps
    residuals = []
    for b, nb in enumerate(_batch_sizes(n_paths, batch_size)):
        draws = _BatchDraws(_batch_rng(seed, b), init, n, nb, jumps.nu, grid.dt)
        cost, *_ = _run_batch(coeffs, grid, draws, spec)
        target = sol.P1[0] * np.maximum(draws.x0, 0.0) ** 2 + sol.P2[0] * np.maximum(-draws.x0, 0.0) ** 2
        residuals.append(cost - target)
    res = np.concatenate(residuals)
    mean, stderr = _mean_stderr(res)
    scale = 1.0 + abs(mean) + float(np.max(np.abs(sol.P1[0])) + np.max(np.abs(sol.P2[0])))
    exact = bool(float(np.max(np.abs(res))) <= 1e-9 * scale)
    if exact:
        z = 0.0
    elif stderr == 0.0 or not np.isfinite(stderr):
        z = float("inf")
    else:
        z = mean / stderr
    return {
        "check": "value_formula",
        "n_paths": n_paths,
        "estimate_gap": mean,
        "stderr": stderr,
        "z": z,
        "pass": bool(abs(z) <= 3.0),
        "exact": exact,
    }


@dataclass(frozen=True)
class Arm:
    """One comparison arm: perturb a single player, replay the other.

    The perturbed player's control is scale * (its recorded saddle control)
    plus the deterministic schedule; a schedule alone replaces the control,
    a scale alone rescales it, and schedule with scale=1 is an additive
    deviation from the saddle.
    """

    name: str
    player: int  # 1 | 2
    schedule: np.ndarray | None = None
    scale: float | None = None

    def __post_init__(self):
        if self.player not in (1, 2):
            raise ValueError("player must be 1 or 2")
        if self.schedule is None and self.scale is None:
            raise ValueError("an arm needs a schedule, a scale, or both")


def _cone_direction(cone: Cone, idx: int) -> np.ndarray:
    if cone.kind == "generated":
        gens = cone.generators
        if gens.shape[1] == 0:
            return np.zeros(cone.dim)
        g = gens[:, idx % gens.shape[1]]
        return g / np.linalg.norm(g)
    e = np.zeros(cone.dim)
    e[idx % cone.dim] = 1.0
    if cone.kind == "full" and idx % 2 == 1:
        e = -e
    return e


def _random_cone_point(cone: Cone, rng: np.random.Generator, scale: float) -> np.ndarray:
    if cone.kind == "generated":
        gens = cone.generators
        if gens.shape[1] == 0:
            return np.zeros(cone.dim)
        return scale * (gens @ np.abs(rng.standard_normal(gens.shape[1])))
    x = scale * rng.standard_normal(cone.dim)
    return np.abs(x) if cone.kind == "orthant" else x


def _piecewise_schedule(cone: Cone, rng, n: int, scale: float, blocks: int = 8) -> np.ndarray:
    sched = np.zeros((n, cone.dim))
    edges = np.linspace(0, n, blocks + 1).astype(int)
    for a, b in zip(edges[:-1], edges[1:]):
        sched[a:b] = _random_cone_point(cone, rng, scale)
    return sched


def default_perturbation_corpus(
    cone1: Cone,
    cone2: Cone,
    grid: TimeGrid,
    seed: int,
    ray_scale: float = 0.5,
) -> list[Arm]:
    """Deterministic cone rays, scaled saddle laws, and seeded random
    piecewise-constant cone schedules; at least six arms per player."""
    n = grid.n_steps
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0xC0DE], dtype=np.uint64)))
    arms: list[Arm] = []
    for player, cone in ((1, cone1), (2, cone2)):
        for r in range(2):
            direction = _cone_direction(cone, r)
            arms.append(Arm(f"p{player}_ray{r}", player, schedule=np.tile(ray_scale * direction, (n, 1))))
        for lam in (0.0, 0.5, 2.0):
            arms.append(Arm(f"p{player}_scale{lam}", player, scale=lam))
        for r in range(2):
            arms.append(Arm(f"p{player}_rand{r}", player, schedule=_piecewise_schedule(cone, rng, n, ray_scale)))
    return arms


def verify_saddle(
    sol: RiccatiSolution,
    law,
    coeffs: CoefficientSet,
    grid: TimeGrid,
    jumps: JumpMeasure,
    arms: list[Arm],
    init: InitialLaw,
    n_paths: int,
    seed: int,
    *,
    cones: tuple[Cone, Cone] | None = None,
    batch_size: int = DEFAULT_BATCH,
) -> dict:
    """Estimate J(arm) - J(saddle) per arm with common random numbers.

    The unperturbed player replays its recorded saddle control, so each arm
    is an open-loop unilateral deviation.  Player-1 deviations must not pay
    less, player-2 deviations must not gain more, each up to 3 standard
    errors."""
    spec = _as_spec(law)
    n = grid.n_steps
    if cones is not None:
        for arm in arms:
            if arm.schedule is None:
                continue
            cone = cones[0] if arm.player == 1 else cones[1]
            for i in range(n):
                if not cone_contains(cone, arm.schedule[i], CONE_TOL):
                    raise ValueError(f"arm {arm.name}: schedule leaves the cone at step {i}")
    diffs: dict[str, list] = {arm.name: [] for arm in arms}
    base_costs = []
    for b, nb in enumerate(_batch_sizes(n_paths, batch_size)):
        draws = _BatchDraws(_batch_rng(seed, b), init, n, nb, jumps.nu, grid.dt)
        cost0, _, _, _, _, U1r, U2r = _run_batch(coeffs, grid, draws, spec, record=True)
        base_costs.append(cost0)
        for arm in arms:
            scale = 0.0 if arm.scale is None else arm.scale
            if arm.player == 1:
                rep1 = scale * U1r
                off1 = np.asarray(arm.schedule, float) if arm.schedule is not None else None
                rep2, off2 = U2r, None
            else:
                rep2 = scale * U2r
                off2 = np.asarray(arm.schedule, float) if arm.schedule is not None else None
                rep1, off1 = U1r, None
            if off1 is not None or off2 is not None:
                off1 = off1 if off1 is not None else np.zeros((n, coeffs.m1))
                off2 = off2 if off2 is not None else np.zeros((n, coeffs.m2))
            arm_spec = ControlSpec(feedback=None, fb_scale=0.0, off1=off1, off2=off2)
            cost_arm, *_ = _run_batch(coeffs, grid, draws, arm_spec, rep1=rep1, rep2=rep2)
            diffs[arm.name].append(cost_arm - cost0)

    arm_reports = []
    all_pass = True
    for arm in arms:
        d = np.concatenate(diffs[arm.name])
        mean, stderr = _mean_stderr(d)
        exact_zero = bool(float(np.max(np.abs(d))) == 0.0)
        if arm.player == 1:
            ok = exact_zero or (np.isfinite(stderr) and mean >= -3.0 * stderr)
        else:
            ok = exact_zero or (np.isfinite(stderr) and mean <= 3.0 * stderr)
        all_pass &= ok
        arm_reports.append(
            {
                "name": arm.name,
                "player": arm.player,
                "diff_mean": mean,
                "diff_stderr": stderr,
                "pass": bool(ok),
                "exact": exact_zero,
            }
        )
    base = np.concatenate(base_costs)
    bmean, bstderr = _mean_stderr(base)
    return {
        "check": "saddle_inequalities",
        "n_paths": n_paths,
        "n_arms": len(arms),
        "baseline_mean": bmean,
        "baseline_stderr": bstderr,
        "arms": arm_reports,
        "pass": bool(all_pass),
    }


def completion_residual(
    t_idx: int,
    x_minus: float,
    u1,
    u2,
    sol: RiccatiSolution,
    coeffs: CoefficientSet,
) -> float:
    """Pathwise completion-of-squares residual at one grid node.

    Vanishes when both players apply the saddle directions; one-sided under
    unilateral deviations (nonpositive when only the maximizer deviates,
    nonnegative when only the minimizer deviates)."""
    u1 = np.asarray(u1, dtype=float).reshape(-1)
    u2 = np.asarray(u2, dtype=float).reshape(-1)
    i = min(t_idx, sol.grid.n_steps - 1)
    step = coeffs.at(i)
    if u1.size != step.m1 or u2.size != step.m2:
        raise ValueError("control dimensions do not match the coefficients")
    x = float(x_minus)
    xp = max(x, 0.0)
    xm = max(-x, 0.0)
    pos = x > 0.0
    P1 = float(sol.P1[t_idx])
    P2 = float(sol.P2[t_idx])
    L1 = float(sol.L1[t_idx])
    L2 = float(sol.L2[t_idx])
    G1 = sol.G1[t_idx]
    G2 = sol.G2[t_idx]
    Pind = P1 if pos else P2
    Lind = L1 if pos else L2

    val = float(u1 @ (step.R11 + Pind * np.outer(step.D1, step.D1)) @ u1)
    val += float(u2 @ (step.R22 + Pind * np.outer(step.D2, step.D2)) @ u2)
    val += 2.0 * float(u1 @ (Pind * np.outer(step.D1, step.D2) + step.R12) @ u2)
    lin1 = step.S1 + Pind * step.B1 + Pind * step.D1 * step.C + step.D1 * Lind
    lin2 = step.S2 + Pind * step.B2 + Pind * step.D2 * step.C + step.D2 * Lind
    if pos:
        val += 2.0 * float(u1 @ lin1) * xp + 2.0 * float(u2 @ lin2) * xp
    else:
        val += -2.0 * float(u1 @ lin1) * xm - 2.0 * float(u2 @ lin2) * xm

    if step.nu.size:
        amp = step.E * x + step.F1 @ u1 + step.F2 @ u2
        pref = 2.0 * P2 * xm if not pos else -2.0 * P1 * xp
        val += pref * float(step.nu @ amp)
        after = x + amp
        val += float(step.nu @ ((P1 + G1) * (np.maximum(after, 0.0) ** 2 - xp * xp)))
        val += float(step.nu @ ((P2 + G2) * (np.maximum(-after, 0.0) ** 2 - xm * xm)))

    h1 = sol.saddle1[t_idx].value
    h2 = sol.saddle2[t_idx].value
    val -= h1 * xp * xp + h2 * xm * xm
    return val


def verify_completion_identity(
    sol: RiccatiSolution,
    law: FeedbackLaw,
    coeffs: CoefficientSet,
    cones: tuple[Cone, Cone],
    x_mesh=(-2.0, -1.0, -0.1, 0.0, 0.1, 1.0, 2.0),
    node_stride: int = 1,
    tol: float = 1e-9,
    perturb_scale: float = 0.5,
) -> dict:
    """Sweep the completion-of-squares residual over grid nodes and a state
    mesh: zero at the saddle, nonpositive under maximizer-only deviations,
    nonnegative under minimizer-only deviations."""
    n = sol.grid.n_steps
    nodes = range(0, n, max(node_stride, 1))
    dirs1 = [perturb_scale * _cone_direction(cones[0], r) for r in range(2)]
    dirs2 = [perturb_scale * _cone_direction(cones[1], r) for r in range(2)]
    max_abs_saddle = 0.0
    max_player2 = -math.inf
    min_player1 = math.inf
    points = 0
    for i in nodes:
        for x in x_mesh:
            xp, xm = max(x, 0.0), max(-x, 0.0)
            u1s = law.th1p[i] * xp + law.th1m[i] * xm
            u2s = law.th2p[i] * xp + law.th2m[i] * xm
            psi0 = completion_residual(i, x, u1s, u2s, sol, coeffs)
            max_abs_saddle = max(max_abs_saddle, abs(psi0))
            mult = abs(x) if x != 0.0 else 1.0
            for d in dirs2:
                val = completion_residual(i, x, u1s, u2s + d * mult, sol, coeffs)
                max_player2 = max(max_player2, val)
            for d in dirs1:
                val = completion_residual(i, x, u1s + d * mult, u2s, sol, coeffs)
                min_player1 = min(min_player1, val)
            points += 1
    ok = max_abs_saddle <= tol and max_player2 <= tol and min_player1 >= -tol
    return {
        "check": "completion_identity",
        "points": points,
        "max_abs_at_saddle": max_abs_saddle,
        "max_under_maximizer_deviation": max_player2,
        "min_under_minimizer_deviation": min_player1,
        "tol": tol,
        "pass": bool(ok),
    }


def verify_convexity_identity(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    jumps: JumpMeasure,
    u1: np.ndarray,
    u1_prime: np.ndarray,
    u2: np.ndarray,
    lam: float,
    init: InitialLaw,
    n_paths: int,
    seed: int,
    *,
    check_ucc: bool = False,
    batch_size: int = DEFAULT_BATCH,
) -> dict:
    """Mixing identity for deterministic schedules:

        J(xi; lam u1 + (1-lam) u1', u2)
          = -lam (1-lam) Jt(0; u1 - u1', 0) + lam J(xi; u1, u2)
            + (1-lam) J(xi; u1', u2),

    estimated with common random numbers (the state map is linear in the
    control and the start, so the residual is pathwise round-off).  With
    check_ucc, also fits the coercivity ratio Jt / E int |u1 - u1'|^2 dt."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    n = grid.n_steps
    u1 = np.asarray(u1, float).reshape(n, -1)
    u1p = np.asarray(u1_prime, float).reshape(n, -1)
    u2 = np.asarray(u2, float).reshape(n, -1)
    mix = lam * u1 + (1.0 - lam) * u1p
    zero2 = np.zeros_like(u2)
    residuals = []
    jt_samples = []
    for b, nb in enumerate(_batch_sizes(n_paths, batch_size)):
        draws = _BatchDraws(_batch_rng(seed, b), init, n, nb, jumps.nu, grid.dt)
        c_mix, *_ = _run_batch(coeffs, grid, draws, ControlSpec(None, 0.0, mix, u2))
        c_a, *_ = _run_batch(coeffs, grid, draws, ControlSpec(None, 0.0, u1, u2))
        c_b, *_ = _run_batch(coeffs, grid, draws, ControlSpec(None, 0.0, u1p, u2))
        c_t, *_ = _run_batch(coeffs, grid, draws.with_zero_start(), ControlSpec(None, 0.0, u1 - u1p, zero2))
        residuals.append(c_mix + lam * (1.0 - lam) * c_t - lam * c_a - (1.0 - lam) * c_b)
        jt_samples.append(c_t)
    res = np.concatenate(residuals)
    mean, stderr = _mean_stderr(res)
    exact = bool(float(np.max(np.abs(res))) <= 1e-10 * (1.0 + float(np.max(np.abs(np.concatenate(jt_samples))))))
    ok = exact or (np.isfinite(stderr) and abs(mean) <= 3.0 * max(stderr, 1e-300))
    out = {
        "check": "convexity_identity",
        "lam": lam,
        "residual_mean": mean,
        "residual_stderr": stderr,
        "pass": bool(ok),
        "exact": exact,
    }
    if check_ucc:
        jt = np.concatenate(jt_samples)
        denom = float(np.sum((u1 - u1p) ** 2) * grid.dt)
        jt_mean, jt_stderr = _mean_stderr(jt)
        out["ucc_ratio"] = jt_mean / denom if denom > 0 else float("nan")
        out["ucc_denom"] = denom
        out["ucc_stderr"] = jt_stderr / denom if denom > 0 else float("nan")
    return out


def directional_stationarity(
    law,
    direction: tuple[np.ndarray, np.ndarray],
    h: float,
    coeffs: CoefficientSet,
    grid: TimeGrid,
    jumps: JumpMeasure,
    init: InitialLaw,
    n_paths: int,
    seed: int,
    *,
    batch_size: int = DEFAULT_BATCH,
    slack_scale: float = 1.0,
) -> dict:
    """One-sided difference quotients of the cost at the saddle along
    v - u^*, one player at a time, the other replaying its recorded control.

    The minimizing slot must not descend, the maximizing slot must not
    ascend, each up to 3 standard errors plus an O(h) allowance."""
    if not 0.0 < h <= 1.0:
        raise ValueError("h must lie in (0, 1]")
    spec = _as_spec(law)
    n = grid.n_steps
    v1 = np.asarray(direction[0], float).reshape(n, -1)
    v2 = np.asarray(direction[1], float).reshape(n, -1)
    d1, d2 = [], []
    for b, nb in enumerate(_batch_sizes(n_paths, batch_size)):
        draws = _BatchDraws(_batch_rng(seed, b), init, n, nb, jumps.nu, grid.dt)
        cost0, _, _, _, _, U1r, U2r = _run_batch(coeffs, grid, draws, spec, record=True)
        zero_off = np.zeros((n, coeffs.m2))
        spec1 = ControlSpec(None, 0.0, h * v1, zero_off)
        c1, *_ = _run_batch(coeffs, grid, draws, spec1, rep1=(1.0 - h) * U1r, rep2=U2r)
        zero_off1 = np.zeros((n, coeffs.m1))
        spec2 = ControlSpec(None, 0.0, zero_off1, h * v2)
        c2, *_ = _run_batch(coeffs, grid, draws, spec2, rep1=U1r, rep2=(1.0 - h) * U2r)
        d1.append(c1 - cost0)
        d2.append(c2 - cost0)
    q1 = np.concatenate(d1) / h
    q2 = np.concatenate(d2) / h
    m1_, s1_ = _mean_stderr(q1)
    m2_, s2_ = _mean_stderr(q2)
    slack = slack_scale * h
    exact1 = bool(float(np.max(np.abs(q1))) == 0.0)
    exact2 = bool(float(np.max(np.abs(q2))) == 0.0)
    ok1 = exact1 or (np.isfinite(s1_) and m1_ >= -(3.0 * s1_ + slack))
    ok2 = exact2 or (np.isfinite(s2_) and m2_ <= (3.0 * s2_ + slack))
    return {
        "check": "directional_stationarity",
        "h": h,
        "quotient_min_slot": m1_,
        "stderr_min_slot": s1_,
        "quotient_max_slot": m2_,
        "stderr_max_slot": s2_,
        "pass": bool(ok1 and ok2),
        "pass_min_slot": bool(ok1),
        "pass_max_slot": bool(ok2),
        "exact": bool(exact1 and exact2),
    }
