"""Cone-constrained saddle points of the game Hamiltonians.

For each equation index k the objective splits into a convex piece in the
minimizing control v1 (a quadratic plus positive-part jump terms, so it is
piecewise quadratic with a continuous gradient) and a concave quadratic
piece in the maximizing control v2, possibly coupled through a bilinear
cross term and shared jump loadings.  The saddle value

    H_k^* = max over v2 in Pi2 of ( min over v1 in Pi1 of H_k(v1, v2) )

feeds the backward Riccati drivers.  Whenever the cross term and the v2
jump loadings vanish the problem decouples and both sides are solved
exactly; the genuinely coupled case runs a projected extragradient
iteration.  An exhaustive grid oracle is provided as an independent check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .errors import ConvergenceError, CurvatureError
from .model import Cone, CoefficientSet, StepCoeffs, cone_project, project_cone_ball

__all__ = [
    "HamiltonianTerms",
    "SaddleResult",
    "InnerResult",
    "build_terms",
    "build_terms_from_step",
    "eval_convex_part",
    "eval_concave_part",
    "eval_hamiltonian",
    "inner_min",
    "saddle",
    "fast_scalar_saddle",
    "grid_oracle_saddle",
    "truncated_convex_min",
    "truncated_concave_max",
    "convexity_margin",
    "concavity_margin",
    "gradient_bound",
]

_MAX_ITER = 100_000
_DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class HamiltonianTerms:
    """Quadratic/linear building blocks at one evaluation point.

    M_kk' = R_kk + P_k' D_k D_k^T  (symmetric) and
    N_kk' = S_k^T + P_k' B_k^T + P_k' D_k^T C + D_k^T Lambda_k'  (row),
    together with the snapshot (P1, P2, Lambda1, Lambda2, Gamma1, Gamma2)
    they were computed from; the snapshot is echoed verbatim.
    """

    step: StepCoeffs
    t_idx: int
    P1: float
    P2: float
    L1: float
    L2: float
    G1: np.ndarray
    G2: np.ndarray
    M11: np.ndarray
    M12: np.ndarray
    M21: np.ndarray
    M22: np.ndarray
    N11: np.ndarray
    N12: np.ndarray
    N21: np.ndarray
    N22: np.ndarray

    @property
    def m1(self) -> int:
        return self.step.m1

    @property
    def m2(self) -> int:
        return self.step.m2


@dataclass(frozen=True)
class SaddleResult:
    v1: np.ndarray
    v2: np.ndarray
    value: float
    iterations: int
    residual: float
    method: str  # "analytic" | "extragradient" | "grid-oracle"
    value_minmax: float | None = None
    search_radius: tuple[float, float] | None = None  # coupled path: final ball radii


@dataclass(frozen=True)
class InnerResult:
    v1: np.ndarray
    value: float
    residual: float
    iterations: int


def build_terms_from_step(
    step: StepCoeffs,
    P1: float,
    P2: float,
    L1: float = 0.0,
    L2: float = 0.0,
    G1=None,
    G2=None,
    t_idx: int = 0,
) -> HamiltonianTerms:
    """Assemble all eight M/N terms from a coefficient slice and a snapshot."""
    for name, v in (("P1", P1), ("P2", P2), ("L1", L1), ("L2", L2)):
        if not np.isfinite(v):
            raise ValueError(f"snapshot value {name} is not finite")
    J = step.n_marks
    G1 = np.zeros(J) if G1 is None else np.asarray(G1, dtype=float).reshape(J)
    G2 = np.zeros(J) if G2 is None else np.asarray(G2, dtype=float).reshape(J)

    def M(R, D, Pk):
        return R + Pk * np.outer(D, D)

    def N(S, B, D, Pk, Lk):
        return S + Pk * B + Pk * D * step.C + D * Lk

    return HamiltonianTerms(
        step=step,
        t_idx=t_idx,
        P1=float(P1),
        P2=float(P2),
        L1=float(L1),
        L2=float(L2),
        G1=G1,
        G2=G2,
        M11=M(step.R11, step.D1, P1),
        M12=M(step.R11, step.D1, P2),
        M21=M(step.R22, step.D2, P1),
        M22=M(step.R22, step.D2, P2),
        N11=N(step.S1, step.B1, step.D1, P1, L1),
        N12=N(step.S1, step.B1, step.D1, P2, L2),
        N21=N(step.S2, step.B2, step.D2, P1, L1),
        N22=N(step.S2, step.B2, step.D2, P2, L2),
    )


def build_terms(
    coeffs: CoefficientSet,
    t_idx: int,
    P1: float,
    P2: float,
    L1: float = 0.0,
    L2: float = 0.0,
    G1=None,
    G2=None,
) -> HamiltonianTerms:
    if not 0 <= t_idx <= coeffs.grid.n_steps:
        raise ValueError(f"t_idx {t_idx} outside grid with {coeffs.grid.n_steps} steps")
    return build_terms_from_step(coeffs.at(t_idx), P1, P2, L1, L2, G1, G2, t_idx=t_idx)


# ----------------------------------------------------------------------
# assembled coupled form
#
# H_k(v1, v2) = v1' M1 v1 + 2 n1' v1 + v2' M2 v2 + 2 (n2q + n2j)' v2
#               + 2 v1' Cr v2
#               + sum_j nu_j [ pp_j (y_j^+)^2 + pm_j (y_j^-)^2 ] + const,
# with y_j = c0_j + F1_j' v1 + F2_j' v2.  The concave quadratic piece is
# v2' M2 v2 + 2 n2q' v2; everything else belongs to the convex piece.
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class _Parts:
    k: int
    M1: np.ndarray
    n1: np.ndarray
    M2: np.ndarray
    n2q: np.ndarray
    n2j: np.ndarray
    Cr: np.ndarray
    c0: np.ndarray
    pp: np.ndarray
    pm: np.ndarray
    nu: np.ndarray
    F1: np.ndarray
    F2: np.ndarray
    const: float


def _parts(k: int, terms: HamiltonianTerms) -> _Parts:
    if k not in (1, 2):
        raise ValueError("player index k must be 1 or 2")
    s = terms.step
    nu, E, F1, F2 = s.nu, s.E, s.F1, s.F2
    pp = terms.P1 + terms.G1
    pm = terms.P2 + terms.G2
    nuF1 = nu @ F1 if nu.size else np.zeros(s.m1)
    nuF2 = nu @ F2 if nu.size else np.zeros(s.m2)
    nuE = float(nu @ E) if nu.size else 0.0
    if k == 1:
        Pk = terms.P1
        M1, M2 = terms.M11, terms.M21
        n1 = terms.N11.copy() - Pk * nuF1
        n2q = terms.N21.copy()
        n2j = -Pk * nuF2
        const = -float(nu @ pp) - 2.0 * Pk * nuE if nu.size else 0.0
        c0 = 1.0 + E
        Cr = Pk * np.outer(s.D1, s.D2) + s.R12
    else:
        Pk = terms.P2
        M1, M2 = terms.M12, terms.M22
        n1 = -terms.N12.copy() + Pk * nuF1
        n2q = -terms.N22.copy()
        n2j = Pk * nuF2
        const = -float(nu @ pm) - 2.0 * Pk * nuE if nu.size else 0.0
        c0 = -1.0 - E
        Cr = Pk * np.outer(s.D1, s.D2) + s.R12
    return _Parts(k, M1, n1, M2, n2q, n2j, Cr, c0, pp, pm, nu, F1, F2, float(const))


def _jump_sum(p: _Parts, y: np.ndarray) -> float:
    pos = np.maximum(y, 0.0)
    neg = np.maximum(-y, 0.0)
    return float(p.nu @ (p.pp * pos**2 + p.pm * neg**2))


def _eval_parts(p: _Parts, v1: np.ndarray, v2: np.ndarray) -> float:
    val = float(v1 @ p.M1 @ v1 + 2.0 * p.n1 @ v1 + v2 @ p.M2 @ v2 + 2.0 * (p.n2q + p.n2j) @ v2)
    val += 2.0 * float(v1 @ p.Cr @ v2) + p.const
    if p.nu.size:
        y = p.c0 + p.F1 @ v1 + p.F2 @ v2
        val += _jump_sum(p, y)
    return val


def _grad_parts(p: _Parts, v1: np.ndarray, v2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    g1 = 2.0 * (p.M1 @ v1 + p.n1 + p.Cr @ v2)
    g2 = 2.0 * (p.M2 @ v2 + p.n2q + p.n2j + p.Cr.T @ v1)
    if p.nu.size:
        y = p.c0 + p.F1 @ v1 + p.F2 @ v2
        w = p.nu * (p.pp * np.maximum(y, 0.0) - p.pm * np.maximum(-y, 0.0))
        g1 = g1 + 2.0 * (w @ p.F1)
        g2 = g2 + 2.0 * (w @ p.F2)
    return g1, g2


def eval_convex_part(k: int, v1, v2, terms: HamiltonianTerms) -> float:
    """The convex (minimizing-player) Hamiltonian piece, jump integrals as
    exact finite sums over marks."""
    v1 = np.asarray(v1, dtype=float).reshape(-1)
    v2 = np.asarray(v2, dtype=float).reshape(-1)
    s = terms.step
    if v1.size != s.m1 or v2.size != s.m2:
        raise ValueError(f"control dimensions ({v1.size}, {v2.size}) do not match ({s.m1}, {s.m2})")
    p = _parts(k, terms)
    val = float(v1 @ p.M1 @ v1 + 2.0 * p.n1 @ v1 + 2.0 * v1 @ p.Cr @ v2 + 2.0 * p.n2j @ v2) + p.const
    if p.nu.size:
        y = p.c0 + p.F1 @ v1 + p.F2 @ v2
        val += _jump_sum(p, y)
    return val


def eval_concave_part(k: int, v2, terms: HamiltonianTerms) -> float:
    """The concave quadratic piece in the maximizing control: for k = 1 the
    linear term enters with a plus sign, for k = 2 with a minus sign."""
    v2 = np.asarray(v2, dtype=float).reshape(-1)
    if v2.size != terms.m2:
        raise ValueError(f"v2 has dimension {v2.size}, expected {terms.m2}")
    if k == 1:
        return float(v2 @ terms.M21 @ v2 + 2.0 * terms.N21 @ v2)
    if k == 2:
        return float(v2 @ terms.M22 @ v2 - 2.0 * terms.N22 @ v2)
    raise ValueError("player index k must be 1 or 2")


def eval_hamiltonian(k: int, v1, v2, terms: HamiltonianTerms) -> float:
    return eval_convex_part(k, v1, v2, terms) + eval_concave_part(k, v2, terms)


# ----------------------------------------------------------------------
# curvature checks
# ----------------------------------------------------------------------


def convexity_margin(k: int, terms: HamiltonianTerms) -> float:
    """Smallest eigenvalue of the worst-regime curvature in v1.

    Each mark contributes min(P1+Gamma1, P2+Gamma2) times F1 F1^T because the
    positive-part term switches between the two loadings across its kink.
    """
    p = _parts(k, terms)
    M = p.M1.copy()
    if p.nu.size:
        w = p.nu * np.minimum(p.pp, p.pm)
        M = M + np.einsum("j,ji,jl->il", w, p.F1, p.F1)
    return float(np.min(np.linalg.eigvalsh(0.5 * (M + M.T))))


def concavity_margin(k: int, terms: HamiltonianTerms) -> float:
    """Largest eigenvalue of the worst-regime curvature in v2 (must be < 0)."""
    p = _parts(k, terms)
    M = p.M2.copy()
    if p.nu.size:
        w = p.nu * np.maximum(p.pp, p.pm)
        M = M + np.einsum("j,ji,jl->il", w, p.F2, p.F2)
    return float(np.max(np.linalg.eigvalsh(0.5 * (M + M.T))))


def _scale(p: _Parts) -> float:
    s = 1.0 + float(np.abs(p.M1).max(initial=0.0) + np.abs(p.M2).max(initial=0.0) + np.abs(p.Cr).max(initial=0.0))
    if p.nu.size:
        s += float(np.sum(p.nu * (np.abs(p.pp) + np.abs(p.pm)) * (np.sum(np.abs(p.F1), axis=1) + np.sum(np.abs(p.F2), axis=1)) ** 2))
    return s


def gradient_bound(k: int, terms: HamiltonianTerms, radius: float) -> float:
    """Crude bound on |grad H_k| over the ball of the given radius; used to
    turn grid resolution into a value tolerance."""
    p = _parts(k, terms)
    lin = float(np.linalg.norm(p.n1) + np.linalg.norm(p.n2q + p.n2j))
    quad = float(np.linalg.norm(p.M1, 2) + np.linalg.norm(p.M2, 2) + 2.0 * np.linalg.norm(p.Cr, 2))
    L = 2.0 * (lin + quad * radius)
    if p.nu.size:
        fnorm = np.linalg.norm(p.F1, axis=1) + np.linalg.norm(p.F2, axis=1)
        ybound = np.abs(p.c0) + fnorm * radius
        L += float(np.sum(2.0 * p.nu * np.maximum(np.abs(p.pp), np.abs(p.pm)) * ybound * fnorm))
    return L


# ----------------------------------------------------------------------
# exact one-dimensional piecewise-quadratic minimization
# ----------------------------------------------------------------------


def _min_piecewise_1d(M, q, nu, pp, pm, c, f, lo, hi):
    """Minimize M v^2 + 2 q v + sum nu [pp ((c + f v)^+)^2 + pm ((c + f v)^-)^2]
    over [lo, hi].  The derivative is continuous, piecewise linear and
    nondecreasing, so the minimizer is its (clamped) root."""

    def deriv(v):
        g = 2.0 * (M * v + q)
        if nu.size:
            y = c + f * v
            g += 2.0 * float(nu @ (f * (pp * np.maximum(y, 0.0) - pm * np.maximum(-y, 0.0))))
        return g

    if lo == hi:
        return lo
    bps = sorted({float(-c[j] / f[j]) for j in range(nu.size) if f[j] != 0.0 and lo < -c[j] / f[j] < hi})
    knots = [lo] + bps + [hi]

    if np.isfinite(lo) and deriv(lo) >= 0.0:
        return lo
    if np.isfinite(hi) and deriv(hi) <= 0.0:
        return hi

    def slope_on(a, b):
        # curvature of the active regime on (a, b)
        mid_ref = 0.0
        if np.isfinite(a) and np.isfinite(b):
            mid_ref = 0.5 * (a + b)
        elif np.isfinite(a):
            mid_ref = a + 1.0
        elif np.isfinite(b):
            mid_ref = b - 1.0
        alpha = 2.0 * M
        if nu.size:
            y = c + f * mid_ref
            alpha += 2.0 * float(nu @ (f**2 * np.where(y > 0, pp, np.where(y < 0, pm, 0.0))))
        return alpha

    for a, b in zip(knots[:-1], knots[1:]):
        ga = deriv(a) if np.isfinite(a) else -np.inf
        gb = deriv(b) if np.isfinite(b) else np.inf
        if ga > 0.0 or gb < 0.0:
            continue
        alpha = slope_on(a, b)
        if alpha <= 0.0:
            # flat convex piece: the derivative vanishes throughout it
            if ga == 0.0 and gb == 0.0:
                ref = 0.0
                if np.isfinite(a):
                    ref = max(ref, a)
                if np.isfinite(b):
                    ref = min(ref, b)
                return ref
            raise CurvatureError("piecewise objective is degenerate and unbounded on the feasible interval")
        if np.isfinite(a):
            return a - ga / alpha
        if np.isfinite(b):
            return b - gb / alpha
        return -deriv(0.0) / alpha
    raise CurvatureError("no stationary point found on the feasible interval")


# ----------------------------------------------------------------------
# exact quadratic minimization over a cone (no jumps, no ball)
# ----------------------------------------------------------------------


def _min_quadratic_cone(M: np.ndarray, q: np.ndarray, cone: Cone) -> np.ndarray:
    """argmin of v'Mv + 2 q'v over the cone, M positive definite."""
    m = q.size
    if cone.kind == "full":
        return np.linalg.solve(M, -q)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise CurvatureError("quadratic curvature is not positive definite on the feasible cone")
    # v'Mv + 2q'v = |L^T v - cvec|^2 - |cvec|^2 with cvec = -L^{-1} q
    cvec = np.linalg.solve(L, -q)
    if cone.kind == "orthant":
        v, _ = nnls(L.T, cvec)
        return v
    gens = cone.generators
    if gens.shape[1] == 0:
        return np.zeros(m)
    alpha, _ = nnls(L.T @ gens, cvec)
    return gens @ alpha


# ----------------------------------------------------------------------
# projected gradient (general fallback: any dimension, ball, jumps)
# ----------------------------------------------------------------------


def _pgd_min(f, grad, project, v0, L, tol, max_iter=_MAX_ITER):
    v = project(v0)
    step = 1.0 / L
    for it in range(max_iter):
        g = grad(v)
        v_next = project(v - step * g)
        res = float(np.linalg.norm(v - project(v - g)))
        if res <= tol:
            return v, res, it + 1
        v = v_next
    res = float(np.linalg.norm(v - project(v - grad(v))))
    if res <= 10.0 * tol:
        return v, res, max_iter
    raise ConvergenceError(f"projected gradient stalled (residual {res:.3e})", residual=res)


def _inner_objective(p: _Parts, v2: np.ndarray):
    """Convex-piece objective/gradient in v1 at a fixed v2 (constants included)."""
    q = p.n1 + p.Cr @ v2
    c = p.c0 + (p.F2 @ v2 if p.nu.size else 0.0)
    const = p.const + 2.0 * float(p.n2j @ v2)

    def f(v1):
        val = float(v1 @ p.M1 @ v1 + 2.0 * q @ v1) + const
        if p.nu.size:
            val += _jump_sum(p, c + p.F1 @ v1)
        return val

    def grad(v1):
        g = 2.0 * (p.M1 @ v1 + q)
        if p.nu.size:
            y = c + p.F1 @ v1
            g = g + 2.0 * ((p.nu * (p.pp * np.maximum(y, 0.0) - p.pm * np.maximum(-y, 0.0))) @ p.F1)
        return g

    return q, c, const, f, grad


def _lipschitz_inner(p: _Parts) -> float:
    L = 2.0 * float(np.linalg.norm(p.M1, 2))
    if p.nu.size:
        L += 2.0 * float(np.sum(p.nu * np.maximum(np.abs(p.pp), np.abs(p.pm)) * np.linalg.norm(p.F1, axis=1) ** 2))
    return max(L, 1e-12)


def inner_min(
    k: int,
    v2,
    terms: HamiltonianTerms,
    cone1: Cone,
    trunc_radius: float | None = None,
    tol: float = _DEFAULT_TOL,
) -> InnerResult:
    """Minimize the convex piece over Pi1 (intersected with |v1| <= radius
    when truncating).  One-dimensional problems are solved exactly through
    the piecewise-linear derivative; higher dimensions use exact cone
    quadratic solves when jump loadings vanish and projected gradient
    otherwise."""
    v2 = np.asarray(v2, dtype=float).reshape(-1)
    if trunc_radius is not None and not trunc_radius >= 0:
        raise ValueError("trunc_radius must be >= 0")
    p = _parts(k, terms)
    if v2.size != terms.m2:
        raise ValueError(f"v2 has dimension {v2.size}, expected {terms.m2}")
    margin = convexity_margin(k, terms)
    scale = _scale(p)
    if margin < -1e-10 * scale:
        raise CurvatureError(
            f"convexity in the minimizing control fails: worst-regime curvature eigenvalue {margin:.3e} < 0"
        )
    q, c, const, f, grad = _inner_objective(p, v2)
    radius = np.inf if trunc_radius is None else float(trunc_radius)

    if np.linalg.norm(grad(np.zeros(terms.m1))) == 0.0:
        v1 = np.zeros(terms.m1)
        return InnerResult(v1, f(v1), 0.0, 0)
    if margin < 1e-12 * scale:
        raise CurvatureError("degenerate curvature in the minimizing control with a nonzero gradient")

    if terms.m1 == 1:
        lo, hi = cone1.interval_1d(radius)
        active = p.nu.size and np.any(p.F1 != 0.0)
        vstar = _min_piecewise_1d(
            float(p.M1[0, 0]),
            float(q[0]),
            p.nu if active else np.zeros(0),
            p.pp,
            p.pm,
            np.asarray(c, dtype=float) if active else np.zeros(0),
            p.F1[:, 0] if active else np.zeros(0),
            lo,
            hi,
        )
        v1 = np.array([vstar])
        res = float(np.linalg.norm(v1 - project_cone_ball(cone1, v1 - grad(v1), radius)))
        return InnerResult(v1, f(v1), res, 1)

    jumps_active = p.nu.size and np.any(p.F1 != 0.0)
    if not jumps_active and trunc_radius is None:
        v1 = _min_quadratic_cone(p.M1, q, cone1)
        res = float(np.linalg.norm(v1 - cone_project(cone1, v1 - grad(v1))))
        return InnerResult(v1, f(v1), res, 1)

    project = lambda v: project_cone_ball(cone1, v, radius)
    L = _lipschitz_inner(p)
    v1, res, its = _pgd_min(f, grad, project, np.zeros(terms.m1), L, tol)
    return InnerResult(v1, f(v1), res, its)


def _max_quadratic_1d(M2: float, n2: float, lo: float, hi: float) -> float:
    """argmax of M2 v^2 + 2 n2 v on [lo, hi] for M2 <= 0."""
    if M2 < 0.0:
        v = -n2 / M2
        return min(max(v, lo), hi)
    # linear (degenerate concavity, only reachable with n2 == 0 upstream)
    if n2 > 0:
        if not np.isfinite(hi):
            raise CurvatureError("degenerate concave piece unbounded above")
        return hi
    if n2 < 0:
        if not np.isfinite(lo):
            raise CurvatureError("degenerate concave piece unbounded above")
        return lo
    return min(max(0.0, lo), hi)


def truncated_concave_max(
    k: int,
    terms: HamiltonianTerms,
    cone2: Cone,
    radius: float | None = None,
    tol: float = _DEFAULT_TOL,
) -> tuple[np.ndarray, float]:
    """Maximize the concave quadratic piece over Pi2 (optionally within a ball)."""
    p = _parts(k, terms)
    margin = concavity_margin(k, terms)
    scale = _scale(p)
    n2 = p.n2q
    if margin > 1e-10 * scale:
        raise CurvatureError(
            f"concavity in the maximizing control fails: worst-regime curvature eigenvalue {margin:.3e} > 0"
        )
    r = np.inf if radius is None else float(radius)
    if margin > -1e-12 * scale and np.linalg.norm(n2) > 0.0:
        raise CurvatureError("degenerate curvature in the maximizing control with a nonzero gradient")
    if terms.m2 == 1:
        lo, hi = cone2.interval_1d(r)
        v = np.array([_max_quadratic_1d(float(p.M2[0, 0]), float(n2[0]), lo, hi)])
        return v, eval_concave_part(k, v, terms)
    if radius is None and margin < 0:
        v = _min_quadratic_cone(-p.M2, -n2, cone2)
        return v, eval_concave_part(k, v, terms)
    f = lambda v: float(v @ (-p.M2) @ v - 2.0 * n2 @ v)
    grad = lambda v: 2.0 * ((-p.M2) @ v - n2)
    L = max(2.0 * float(np.linalg.norm(p.M2, 2)), 1e-12)
    project = lambda v: project_cone_ball(cone2, v, r)
    v, _, _ = _pgd_min(f, grad, project, np.zeros(terms.m2), L, tol)
    return v, eval_concave_part(k, v, terms)


def truncated_convex_min(
    k: int,
    terms: HamiltonianTerms,
    cone1: Cone,
    radius: float | None = None,
    tol: float = _DEFAULT_TOL,
) -> tuple[np.ndarray, float]:
    """Minimize the convex piece at v2 = 0 over Pi1 within |v1| <= radius."""
    res = inner_min(k, np.zeros(terms.m2), terms, cone1, trunc_radius=radius, tol=tol)
    return res.v1, res.value


def _is_decoupled(p: _Parts) -> bool:
    if np.any(p.Cr != 0.0):
        return False
    if p.nu.size and np.any(p.F2 != 0.0):
        return False
    return True


def saddle(
    k: int,
    terms: HamiltonianTerms,
    cone1: Cone,
    cone2: Cone,
    trunc: tuple[float, float] | None = None,
    tol: float = _DEFAULT_TOL,
    max_iter: int = _MAX_ITER,
    warm: tuple[np.ndarray, np.ndarray] | None = None,
) -> SaddleResult:
    """Cone-constrained saddle point of H_k.

    Decoupled snapshots (no bilinear cross term, no v2 jump loading) compose
    the exact inner minimization with an exact concave maximization.  The
    coupled case runs a projected extragradient iteration with a fixed step
    1 / (2L); its search region is an adaptively grown ball, doubled until
    the iterate is strictly interior.
    """
    p = _parts(k, terms)
    scale = _scale(p)
    conv = convexity_margin(k, terms)
    conc = concavity_margin(k, terms)
    r1 = np.inf if trunc is None else float(trunc[0])
    r2 = np.inf if trunc is None else float(trunc[1])

    g1, g2 = _grad_parts(p, np.zeros(terms.m1), np.zeros(terms.m2))
    if np.linalg.norm(g1) == 0.0 and np.linalg.norm(g2) == 0.0 and conv >= -1e-10 * scale and conc <= 1e-10 * scale:
        v1, v2 = np.zeros(terms.m1), np.zeros(terms.m2)
        return SaddleResult(v1, v2, _eval_parts(p, v1, v2), 0, 0.0, "analytic")
    if conv < -1e-10 * scale or conv < 1e-12 * scale:
        raise CurvatureError(f"convexity in v1 fails (worst-regime eigenvalue {conv:.3e})")
    if conc > 1e-10 * scale or conc > -1e-12 * scale:
        raise CurvatureError(f"concavity in v2 fails (worst-regime eigenvalue {conc:.3e})")

    if _is_decoupled(p):
        inner = inner_min(k, np.zeros(terms.m2), terms, cone1, trunc_radius=None if trunc is None else r1, tol=tol)
        v2, outer_val = truncated_concave_max(k, terms, cone2, radius=None if trunc is None else r2, tol=tol)
        value = inner.value + outer_val
        return SaddleResult(inner.v1, v2, value, inner.iterations, inner.residual, "analytic")

    # coupled: projected extragradient on the convex-concave objective
    L = max(
        2.0 * float(np.linalg.norm(p.M1, 2) + np.linalg.norm(p.M2, 2) + 2.0 * np.linalg.norm(p.Cr, 2)),
        1e-12,
    )
    if p.nu.size:
        fn = np.linalg.norm(p.F1, axis=1) + np.linalg.norm(p.F2, axis=1)
        L += 2.0 * float(np.sum(p.nu * np.maximum(np.abs(p.pp), np.abs(p.pm)) * fn**2))
    step = 1.0 / (2.0 * L)

    lin = 1.0 + float(np.linalg.norm(p.n1) + np.linalg.norm(p.n2q + p.n2j))
    margin = min(-conc, conv)
    rad1 = r1 if np.isfinite(r1) else 8.0 * (lin / margin + abs(terms.L1) + abs(terms.L2) + 1.0)
    rad2 = r2 if np.isfinite(r2) else 8.0 * (lin / margin + abs(terms.L1) + abs(terms.L2) + 1.0)

    v1 = np.zeros(terms.m1) if warm is None else np.asarray(warm[0], dtype=float).copy()
    v2 = np.zeros(terms.m2) if warm is None else np.asarray(warm[1], dtype=float).copy()
    total_iter = 0
    for _grow in range(12):
        proj1 = lambda v: project_cone_ball(cone1, v, min(rad1, r1))
        proj2 = lambda v: project_cone_ball(cone2, v, min(rad2, r2))
        v1, v2 = proj1(v1), proj2(v2)
        res = np.inf
        for _ in range(max_iter):
            g1, g2 = _grad_parts(p, v1, v2)
            w1, w2 = proj1(v1 - step * g1), proj2(v2 + step * g2)
            res = float(np.hypot(np.linalg.norm(v1 - w1), np.linalg.norm(v2 - w2))) / step
            if res <= tol * (1.0 + scale):
                break
            h1, h2 = _grad_parts(p, w1, w2)
            v1, v2 = proj1(v1 - step * h1), proj2(v2 + step * h2)
            total_iter += 1
        else:
            raise ConvergenceError(
                f"extragradient hit the {max_iter}-iteration cap (residual {res:.3e})", residual=res
            )
        hit1 = np.isfinite(rad1) and rad1 < r1 and np.linalg.norm(v1) >= 0.95 * rad1
        hit2 = np.isfinite(rad2) and rad2 < r2 and np.linalg.norm(v2) >= 0.95 * rad2
        if not hit1 and not hit2:
            return SaddleResult(
                v1, v2, _eval_parts(p, v1, v2), total_iter, res, "extragradient",
                search_radius=(min(rad1, r1), min(rad2, r2)),
            )
        rad1 *= 2.0 if hit1 else 1.0
        rad2 *= 2.0 if hit2 else 1.0
    raise ConvergenceError("extragradient search ball kept growing; problem looks unbounded")


# ----------------------------------------------------------------------
# scalar fast path: m1 = m2 = 1, pure float arithmetic
# ----------------------------------------------------------------------


def _clamp(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else (hi if v > hi else v)


def _fast_scalar_coupled(k, step, P1, P2, L1, L2, G1, G2, cone1, cone2, trunc, warm, tol):
    """Scalar extragradient for coupled snapshots (cross term or shared
    jump loadings); mirrors the array path of saddle() in float arithmetic."""
    J = step.nu.size
    D1 = float(step.D1[0])
    D2 = float(step.D2[0])
    Pk = P1 if k == 1 else P2
    Lk = L1 if k == 1 else L2
    M1 = float(step.R11[0, 0]) + Pk * D1 * D1
    M2 = float(step.R22[0, 0]) + Pk * D2 * D2
    Cr = Pk * D1 * D2 + float(step.R12[0, 0])
    N1 = float(step.S1[0]) + Pk * float(step.B1[0]) + Pk * D1 * float(step.C) + D1 * Lk
    N2 = float(step.S2[0]) + Pk * float(step.B2[0]) + Pk * D2 * float(step.C) + D2 * Lk

    if J:
        g1a = [0.0] * J if G1 is None else [float(G1[j]) for j in range(J)]
        g2a = [0.0] * J if G2 is None else [float(G2[j]) for j in range(J)]
        pp = [P1 + g1a[j] for j in range(J)]
        pm = [P2 + g2a[j] for j in range(J)]
        nu = [float(step.nu[j]) for j in range(J)]
        E = [float(step.E[j]) for j in range(J)]
        f1 = [float(step.F1[j, 0]) for j in range(J)]
        f2 = [float(step.F2[j, 0]) for j in range(J)]
        sum_nuE = sum(nu[j] * E[j] for j in range(J))
        sum_nuf1 = sum(nu[j] * f1[j] for j in range(J))
        sum_nuf2 = sum(nu[j] * f2[j] for j in range(J))
        if k == 1:
            c0 = [1.0 + e for e in E]
            n1 = N1 - Pk * sum_nuf1
            n2 = N2 - Pk * sum_nuf2
            const = -sum(nu[j] * pp[j] for j in range(J)) - 2.0 * Pk * sum_nuE
        else:
            c0 = [-1.0 - e for e in E]
            n1 = -N1 + Pk * sum_nuf1
            n2 = -N2 + Pk * sum_nuf2
            const = -sum(nu[j] * pm[j] for j in range(J)) - 2.0 * Pk * sum_nuE
        conv = M1 + sum(nu[j] * min(pp[j], pm[j]) * f1[j] * f1[j] for j in range(J))
        conc = M2 + sum(nu[j] * max(pp[j], pm[j]) * f2[j] * f2[j] for j in range(J))
        jump_scale = sum(nu[j] * (abs(pp[j]) + abs(pm[j])) * (abs(f1[j]) + abs(f2[j])) ** 2 for j in range(J))
        Ljump = sum(2.0 * nu[j] * max(abs(pp[j]), abs(pm[j])) * (abs(f1[j]) + abs(f2[j])) ** 2 for j in range(J))
    else:
        c0 = pp = pm = nu = f1 = f2 = None
        n1 = N1 if k == 1 else -N1
        n2 = N2 if k == 1 else -N2
        const = 0.0
        conv, conc = M1, M2
        jump_scale = 0.0
        Ljump = 0.0

    def grads(v1, v2):
        g1 = 2.0 * (M1 * v1 + n1 + Cr * v2)
        g2 = 2.0 * (M2 * v2 + n2 + Cr * v1)
        if J:
            for j in range(J):
                y = c0[j] + f1[j] * v1 + f2[j] * v2
                w = nu[j] * (pp[j] * y if y > 0.0 else pm[j] * y)
                g1 += 2.0 * f1[j] * w
                g2 += 2.0 * f2[j] * w
        return g1, g2

    def value(v1, v2):
        val = M1 * v1 * v1 + 2.0 * n1 * v1 + M2 * v2 * v2 + 2.0 * n2 * v2 + 2.0 * Cr * v1 * v2 + const
        if J:
            for j in range(J):
                y = c0[j] + f1[j] * v1 + f2[j] * v2
                val += nu[j] * (pp[j] * y * y if y > 0.0 else pm[j] * y * y)
        return val

    scale = 1.0 + abs(M1) + abs(M2) + abs(Cr) + jump_scale
    ga, gb = grads(0.0, 0.0)
    if ga == 0.0 and gb == 0.0 and conv >= -1e-10 * scale and conc <= 1e-10 * scale:
        return SaddleResult(np.zeros(1), np.zeros(1), value(0.0, 0.0), 0, 0.0, "analytic")
    if conv < 1e-12 * scale:
        raise CurvatureError(f"convexity in v1 fails (worst-regime curvature {conv:.3e})")
    if conc > -1e-12 * scale:
        raise CurvatureError(f"concavity in v2 fails (worst-regime curvature {conc:.3e})")

    r1 = np.inf if trunc is None else float(trunc[0])
    r2 = np.inf if trunc is None else float(trunc[1])
    lo1, hi1 = cone1.interval_1d(r1)
    lo2, hi2 = cone2.interval_1d(r2)
    L = 2.0 * (abs(M1) + abs(M2) + 2.0 * abs(Cr)) + Ljump
    tau = 1.0 / (2.0 * L)
    margin = min(conv, -conc)
    lin = 1.0 + abs(n1) + abs(n2)
    rad1 = r1 if np.isfinite(r1) else 8.0 * (lin / margin + abs(L1) + abs(L2) + 1.0)
    rad2 = r2 if np.isfinite(r2) else 8.0 * (lin / margin + abs(L1) + abs(L2) + 1.0)
    v1 = 0.0 if warm is None else float(warm[0])
    v2 = 0.0 if warm is None else float(warm[1])
    total = 0
    stop = tol * (1.0 + scale)
    for _grow in range(12):
        a1, b1 = max(lo1, -rad1), min(hi1, rad1)
        a2, b2 = max(lo2, -rad2), min(hi2, rad2)
        v1, v2 = _clamp(v1, a1, b1), _clamp(v2, a2, b2)
        res = np.inf
        for _ in range(_MAX_ITER):
            g1, g2 = grads(v1, v2)
            w1 = _clamp(v1 - tau * g1, a1, b1)
            w2 = _clamp(v2 + tau * g2, a2, b2)
            res = ((v1 - w1) ** 2 + (v2 - w2) ** 2) ** 0.5 / tau
            if res <= stop:
                break
            h1, h2 = grads(w1, w2)
            v1 = _clamp(v1 - tau * h1, a1, b1)
            v2 = _clamp(v2 + tau * h2, a2, b2)
            total += 1
        else:
            raise ConvergenceError(
                f"extragradient hit the {_MAX_ITER}-iteration cap (residual {res:.3e})", residual=res
            )
        hit1 = rad1 < r1 and abs(v1) >= 0.95 * rad1
        hit2 = rad2 < r2 and abs(v2) >= 0.95 * rad2
        if not hit1 and not hit2:
            return SaddleResult(
                np.array([v1]), np.array([v2]), value(v1, v2), total, res, "extragradient",
                search_radius=(min(rad1, r1), min(rad2, r2)),
            )
        rad1 *= 2.0 if hit1 else 1.0
        rad2 *= 2.0 if hit2 else 1.0
    raise ConvergenceError("extragradient search ball kept growing; problem looks unbounded")


def fast_scalar_saddle(
    k: int,
    step: StepCoeffs,
    P1: float,
    P2: float,
    L1: float = 0.0,
    L2: float = 0.0,
    G1=None,
    G2=None,
    cone1: Cone | None = None,
    cone2: Cone | None = None,
    trunc: tuple[float, float] | None = None,
    warm: tuple[float, float] | None = None,
    tol: float = _DEFAULT_TOL,
) -> SaddleResult | None:
    """Saddle for scalar controls without array temporaries.

    Decoupled snapshots are solved exactly; coupled ones run a scalar
    extragradient loop.  Returns None for non-scalar controls so callers
    fall back to the general machinery.  Sits inside the backward
    integration loops, so it is kept allocation-free.
    """
    if step.m1 != 1 or step.m2 != 1:
        return None
    D1 = float(step.D1[0])
    D2 = float(step.D2[0])
    R12 = float(step.R12[0, 0])
    Pk = P1 if k == 1 else P2
    J = step.nu.size
    cross = Pk * D1 * D2 + R12
    f2_active = bool(J) and bool(np.any(step.F2[:, 0] != 0.0))
    if cross != 0.0 or f2_active:
        return _fast_scalar_coupled(k, step, P1, P2, L1, L2, G1, G2, cone1, cone2, trunc, warm, tol)

    B1 = float(step.B1[0])
    B2 = float(step.B2[0])
    C = float(step.C)
    S1 = float(step.S1[0])
    S2 = float(step.S2[0])
    R11 = float(step.R11[0, 0])
    R22 = float(step.R22[0, 0])
    Lk = L1 if k == 1 else L2
    M1 = R11 + Pk * D1 * D1
    M2 = R22 + Pk * D2 * D2
    N1 = S1 + Pk * B1 + Pk * D1 * C + D1 * Lk
    N2 = S2 + Pk * B2 + Pk * D2 * C + D2 * Lk

    if J:
        g1 = step.nu * 0.0 if G1 is None else np.asarray(G1, dtype=float)
        g2 = step.nu * 0.0 if G2 is None else np.asarray(G2, dtype=float)
        pp = [P1 + float(g1[j]) for j in range(J)]
        pm = [P2 + float(g2[j]) for j in range(J)]
        nu = [float(step.nu[j]) for j in range(J)]
        E = [float(step.E[j]) for j in range(J)]
        f1 = [float(step.F1[j, 0]) for j in range(J)]
        if k == 1:
            c0 = [1.0 + e for e in E]
            n1 = N1 - Pk * sum(nu[j] * f1[j] for j in range(J))
            const = -sum(nu[j] * pp[j] for j in range(J)) - 2.0 * Pk * sum(nu[j] * E[j] for j in range(J))
        else:
            c0 = [-1.0 - e for e in E]
            n1 = -N1 + Pk * sum(nu[j] * f1[j] for j in range(J))
            const = -sum(nu[j] * pm[j] for j in range(J)) - 2.0 * Pk * sum(nu[j] * E[j] for j in range(J))
        conv = M1 + sum(nu[j] * min(pp[j], pm[j]) * f1[j] * f1[j] for j in range(J))
    else:
        pp = pm = nu = E = f1 = c0 = None
        n1 = N1 if k == 1 else -N1
        const = 0.0
        conv = M1
    n2 = N2 if k == 1 else -N2

    scale = 1.0 + abs(M1) + abs(M2)
    if J:
        scale += sum(nu[j] * (abs(pp[j]) + abs(pm[j])) * f1[j] * f1[j] for j in range(J))

    def inner_deriv(v):
        g = 2.0 * (M1 * v + n1)
        if J:
            for j in range(J):
                y = c0[j] + f1[j] * v
                g += 2.0 * nu[j] * f1[j] * (pp[j] * y if y > 0.0 else pm[j] * y)
        return g

    g1_at0 = inner_deriv(0.0)
    g2_at0 = 2.0 * n2
    if g1_at0 == 0.0 and g2_at0 == 0.0 and conv >= -1e-10 * scale and M2 <= 1e-10 * scale:
        value = const
        if J:
            value += sum(
                nu[j] * (pp[j] * max(c0[j], 0.0) ** 2 + pm[j] * max(-c0[j], 0.0) ** 2) for j in range(J)
            )
        return SaddleResult(np.zeros(1), np.zeros(1), value, 0, 0.0, "analytic")
    if conv < 1e-12 * scale:
        raise CurvatureError(f"convexity in v1 fails (worst-regime curvature {conv:.3e})")
    if M2 > -1e-12 * scale:
        raise CurvatureError(f"concavity in v2 fails (curvature {M2:.3e})")

    r1 = np.inf if trunc is None else float(trunc[0])
    r2 = np.inf if trunc is None else float(trunc[1])
    lo1, hi1 = cone1.interval_1d(r1)
    lo2, hi2 = cone2.interval_1d(r2)

    if J:
        vs = _min_piecewise_1d(
            M1, n1, np.asarray(nu), np.asarray(pp), np.asarray(pm), np.asarray(c0), np.asarray(f1), lo1, hi1
        )
    elif lo1 == hi1:
        vs = lo1
    else:
        vs = min(max(-n1 / M1, lo1), hi1)
    inner_val = M1 * vs * vs + 2.0 * n1 * vs + const
    if J:
        for j in range(J):
            y = c0[j] + f1[j] * vs
            inner_val += nu[j] * (pp[j] * max(y, 0.0) ** 2 + pm[j] * max(-y, 0.0) ** 2)

    w = _max_quadratic_1d(M2, n2, lo2, hi2)
    outer_val = M2 * w * w + 2.0 * n2 * w

    gi = inner_deriv(vs)
    res1 = abs(vs - min(max(vs - gi, lo1), hi1))
    go = 2.0 * (M2 * w + n2)
    res2 = abs(w - min(max(w + go, lo2), hi2))
    return SaddleResult(
        np.array([vs]), np.array([w]), inner_val + outer_val, 1, max(res1, res2), "analytic"
    )


# ----------------------------------------------------------------------
# exhaustive grid oracle
# ----------------------------------------------------------------------


def _cone_grid(cone: Cone, radius: float, step: float) -> np.ndarray:
    """Points of cone intersect ball(radius) on an axis grid of the given step."""
    if cone.dim == 1:
        lo, hi = cone.interval_1d(radius)
        pts = np.arange(lo, hi + 0.5 * step, step)
        return pts.reshape(-1, 1)
    axes = [np.arange(-radius, radius + 0.5 * step, step)] * cone.dim
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, cone.dim)
    mesh = mesh[np.linalg.norm(mesh, axis=1) <= radius + 1e-12]
    if cone.kind == "full":
        return mesh
    if cone.kind == "orthant":
        return mesh[np.all(mesh >= 0.0, axis=1)]
    gens = cone.generators
    if gens.shape[1] == 0:
        return np.zeros((1, cone.dim))
    # generate through nonnegative combinations of the unit generators so
    # every grid point is feasible by construction
    unit = gens / np.linalg.norm(gens, axis=0)
    n_axis = int(np.ceil(radius / step)) + 1
    coef_axes = [np.linspace(0.0, radius, n_axis)] * gens.shape[1]
    coefs = np.stack(np.meshgrid(*coef_axes, indexing="ij"), axis=-1).reshape(-1, gens.shape[1])
    pts = coefs @ unit.T
    return pts[np.linalg.norm(pts, axis=1) <= radius + 1e-12]


def grid_oracle_saddle(
    k: int,
    terms: HamiltonianTerms,
    cone1: Cone,
    cone2: Cone,
    radius: float,
    step: float,
) -> SaddleResult:
    """Exhaustive max-over-v2 of min-over-v1 on a grid of cone-ball points.

    Also records the min-max value (value_minmax) so callers can check the
    two optimization orders agree to grid resolution.  Exponential in the
    control dimensions; refuses m1 + m2 > 4.
    """
    if terms.m1 + terms.m2 > 4:
        raise ValueError("grid oracle supports m1 + m2 <= 4 only")
    if step <= 0:
        raise ValueError("step must be > 0")
    p = _parts(k, terms)
    V1 = _cone_grid(cone1, radius, step)
    V2 = _cone_grid(cone2, radius, step)
    a = np.einsum("ni,il,nl->n", V1, p.M1, V1) + 2.0 * V1 @ p.n1
    b = np.einsum("ni,il,nl->n", V2, p.M2, V2) + 2.0 * V2 @ (p.n2q + p.n2j)
    cross = 2.0 * (V1 @ p.Cr) @ V2.T if np.any(p.Cr) else None

    n1, n2 = V1.shape[0], V2.shape[0]
    chunk = max(1, int(2e6 // max(n1, 1)))
    col_min = np.empty(n2)
    col_argmin = np.empty(n2, dtype=int)
    row_max = np.full(n1, -np.inf)
    for start in range(0, n2, chunk):
        sl = slice(start, min(start + chunk, n2))
        H = a[:, None] + b[None, sl]
        if cross is not None:
            H = H + cross[:, sl]
        if p.nu.size:
            y1 = V1 @ p.F1.T  # (n1, J)
            y2 = V2[sl] @ p.F2.T  # (nc, J)
            for j in range(p.nu.size):
                y = p.c0[j] + y1[:, j][:, None] + y2[:, j][None, :]
                H += p.nu[j] * (p.pp[j] * np.maximum(y, 0.0) ** 2 + p.pm[j] * np.maximum(-y, 0.0) ** 2)
        H += p.const
        col_min[sl] = H.min(axis=0)
        col_argmin[sl] = H.argmin(axis=0)
        np.maximum(row_max, H.max(axis=1), out=row_max)
    j_star = int(col_min.argmax())
    i_star = int(col_argmin[j_star])
    maxmin = float(col_min[j_star])
    minmax = float(row_max.min())
    return SaddleResult(
        v1=V1[i_star].copy(),
        v2=V2[j_star].copy(),
        value=maxmin,
        iterations=n1 * n2,
        residual=step,
        method="grid-oracle",
        value_minmax=minmax,
    )
