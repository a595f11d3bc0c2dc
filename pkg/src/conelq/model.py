"""Problem data: time grid, jump measure, coefficients, cones, initial law.

Coefficients are piecewise constant on a uniform grid (left-endpoint
convention) and the jump measure has finite support, so every integral
against the mark measure is an exact finite sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import nnls

from .errors import ConfigError, NumericsError

__all__ = [
    "TimeGrid",
    "JumpMeasure",
    "Cone",
    "InitialLaw",
    "CoefficientSet",
    "StepCoeffs",
    "AssumptionReport",
    "cone_project",
    "cone_contains",
    "validate_coefficients",
]

# The tightest-constant computation floors the uniform bound here so the
# derived constants stay strictly positive on degenerate (all-zero) inputs.
_CBAR_FLOOR = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with n_steps intervals."""

    T: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ConfigError(f"horizon T must be positive and finite, got {self.T}")
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    def times(self) -> np.ndarray:
        """Node times t_0 = 0, ..., t_n = T (length n_steps + 1)."""
        return np.linspace(0.0, self.T, self.n_steps + 1)


@dataclass(frozen=True)
class JumpMeasure:
    """Finite-support jump intensity: J marks with rates nu_j > 0.

    J = 0 encodes the pure-diffusion model.
    """

    nu: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float).reshape(-1)
        nu.setflags(write=False)
        object.__setattr__(self, "nu", nu)
        if nu.size and (not np.all(np.isfinite(nu)) or np.any(nu <= 0)):
            raise ConfigError("all jump intensities must be finite and > 0")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"z{j + 1}" for j in range(nu.size)))
        elif len(self.labels) != nu.size:
            raise ConfigError("labels must match the number of marks")

    @property
    def n_marks(self) -> int:
        return int(self.nu.size)

    @property
    def total_intensity(self) -> float:
        return float(self.nu.sum())

    @staticmethod
    def none() -> "JumpMeasure":
        return JumpMeasure(nu=np.zeros(0))


@dataclass(frozen=True)
class Cone:
    """Closed convex cone: full space, nonnegative orthant, or finitely
    generated {G a : a >= 0} (an empty generator set encodes {0})."""

    kind: str  # "full" | "orthant" | "generated"
    dim: int
    generators: np.ndarray | None = None  # shape (dim, n_gen)

    def __post_init__(self):
        if self.kind not in ("full", "orthant", "generated"):
            raise ConfigError(f"unknown cone kind {self.kind!r}")
        if self.dim < 1:
            raise ConfigError("cone dimension must be >= 1")
        if self.kind == "generated":
            gens = np.zeros((self.dim, 0)) if self.generators is None else np.asarray(self.generators, dtype=float)
            if gens.ndim != 2 or gens.shape[0] != self.dim:
                raise ConfigError(f"generator matrix must be {self.dim} x n_gen")
            if gens.shape[1] and np.any(np.linalg.norm(gens, axis=0) == 0.0):
                raise ConfigError("generators must be nonzero columns")
            gens.setflags(write=False)
            object.__setattr__(self, "generators", gens)
        elif self.generators is not None:
            raise ConfigError("generators only apply to the 'generated' kind")

    @staticmethod
    def full(dim: int) -> "Cone":
        return Cone("full", dim)

    @staticmethod
    def orthant(dim: int) -> "Cone":
        return Cone("orthant", dim)

    @staticmethod
    def generated(generators, dim: int | None = None) -> "Cone":
        gens = np.asarray(generators, dtype=float)
        if gens.ndim == 1:
            gens = gens.reshape(-1, 1)
        if gens.size == 0:
            if dim is None:
                raise ConfigError("an empty generator set needs an explicit dim")
            gens = np.zeros((dim, 0))
        return Cone("generated", dim if dim is not None else gens.shape[0], gens)

    @staticmethod
    def zero(dim: int) -> "Cone":
        return Cone("generated", dim, np.zeros((dim, 0)))

    def interval_1d(self, radius: float = np.inf) -> tuple[float, float]:
        """The cone intersected with [-radius, radius], as an interval.

        Only valid for dim == 1; used by the exact scalar optimizers.
        """
        if self.dim != 1:
            raise ValueError("interval_1d only applies to one-dimensional cones")
        if self.kind == "full":
            lo, hi = -radius, radius
        elif self.kind == "orthant":
            lo, hi = 0.0, radius
        else:
            gens = self.generators.reshape(-1)
            if gens.size == 0:
                lo = hi = 0.0
            elif np.all(gens > 0):
                lo, hi = 0.0, radius
            elif np.all(gens < 0):
                lo, hi = -radius, 0.0
            else:
                lo, hi = -radius, radius
        return lo, hi


def cone_project(cone: Cone, point) -> np.ndarray:
    """Euclidean projection onto the cone.

    Finitely generated cones reduce to a nonnegative least-squares
    subproblem, solved exactly by active-set iteration.
    """
    x = np.asarray(point, dtype=float).reshape(-1)
    if x.size != cone.dim:
        raise ValueError(f"point has dimension {x.size}, cone expects {cone.dim}")
    if cone.kind == "full":
        return x.copy()
    if cone.kind == "orthant":
        return np.maximum(x, 0.0)
    gens = cone.generators
    if gens.shape[1] == 0:
        return np.zeros_like(x)
    alpha, _ = nnls(gens, x)
    return gens @ alpha


def cone_contains(cone: Cone, point, tol: float = 0.0) -> bool:
    """True iff the point is within tol (Euclidean) of the cone."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    x = np.asarray(point, dtype=float).reshape(-1)
    return bool(np.linalg.norm(x - cone_project(cone, x)) <= tol)


def project_cone_ball(cone: Cone, point, radius: float) -> np.ndarray:
    """Projection onto cone  intersect  {|v| <= radius}.

    For a closed convex cone K the Moreau decomposition gives the closed
    form  P_{K and B}(x) = min(1, r / |P_K(x)|) * P_K(x), so no alternating
    scheme is needed.
    """
    p = cone_project(cone, point)
    if not np.isfinite(radius):
        return p
    nrm = float(np.linalg.norm(p))
    if nrm <= radius or nrm == 0.0:
        return p
    return (radius / nrm) * p


@dataclass(frozen=True)
class InitialLaw:
    """Initial state: a point mass or a seeded scalar sampler."""

    kind: str  # "point" | "normal" | "uniform" | "choice"
    params: dict = field(default_factory=dict)

    @staticmethod
    def point(x0: float) -> "InitialLaw":
        if not np.isfinite(x0):
            raise ConfigError("point initial value must be finite")
        return InitialLaw("point", {"x0": float(x0)})

    @staticmethod
    def normal(mean: float, std: float) -> "InitialLaw":
        if std < 0 or not np.isfinite(mean) or not np.isfinite(std):
            raise ConfigError("normal sampler needs finite mean and std >= 0")
        return InitialLaw("normal", {"mean": float(mean), "std": float(std)})

    @staticmethod
    def uniform(low: float, high: float) -> "InitialLaw":
        if not (np.isfinite(low) and np.isfinite(high) and low <= high):
            raise ConfigError("uniform sampler needs finite low <= high")
        return InitialLaw("uniform", {"low": float(low), "high": float(high)})

    @staticmethod
    def choice(values, probs=None) -> "InitialLaw":
        vals = [float(v) for v in values]
        if not vals or not all(np.isfinite(vals)):
            raise ConfigError("choice sampler needs finite values")
        if probs is not None:
            probs = [float(p) for p in probs]
            if len(probs) != len(vals) or any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
                raise ConfigError("choice probabilities must be nonnegative and sum to 1")
        return InitialLaw("choice", {"values": vals, "probs": probs})

    @property
    def is_point(self) -> bool:
        return self.kind == "point"

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "point":
            return np.full(size, self.params["x0"])
        if self.kind == "normal":
            return self.params["mean"] + self.params["std"] * rng.standard_normal(size)
        if self.kind == "uniform":
            return rng.uniform(self.params["low"], self.params["high"], size)
        vals = np.asarray(self.params["values"])
        return rng.choice(vals, size=size, p=self.params["probs"])


@dataclass(frozen=True)
class StepCoeffs:
    """Coefficient slice at one grid step (or lattice node).

    Scalars: A, C, Q, G; vectors B1, D1, S1 (m1) and B2, D2, S2 (m2);
    matrices R11, R12, R22; per-mark jump loadings E (J,), F1 (J, m1),
    F2 (J, m2) together with the intensities nu (J,).
    """

    A: float
    B1: np.ndarray
    B2: np.ndarray
    C: float
    D1: np.ndarray
    D2: np.ndarray
    Q: float
    S1: np.ndarray
    S2: np.ndarray
    R11: np.ndarray
    R12: np.ndarray
    R22: np.ndarray
    G: float
    E: np.ndarray
    F1: np.ndarray
    F2: np.ndarray
    nu: np.ndarray

    @property
    def m1(self) -> int:
        return int(self.B1.size)

    @property
    def m2(self) -> int:
        return int(self.B2.size)

    @property
    def n_marks(self) -> int:
        return int(self.nu.size)


def _broadcast_scalar(name: str, value, n: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    elif arr.shape != (n,):
        raise ConfigError(f"{name}: per-step array must have length {n}, got shape {arr.shape}")
    return arr


def _broadcast_vector(name: str, value, n: int, m: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        if m != 1:
            raise ConfigError(f"{name}: scalar given but dimension is {m}")
        arr = np.full((n, 1), float(arr))
    elif arr.ndim == 1:
        if arr.size != m:
            raise ConfigError(f"{name}: expected vector of length {m}, got {arr.size}")
        arr = np.tile(arr, (n, 1))
    elif arr.shape != (n, m):
        raise ConfigError(f"{name}: per-step form must have shape ({n}, {m}), got {arr.shape}")
    return arr


def _broadcast_matrix(name: str, value, n: int, r: int, c: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        if (r, c) != (1, 1):
            raise ConfigError(f"{name}: scalar given but shape is ({r}, {c})")
        arr = np.full((n, 1, 1), float(arr))
    elif arr.ndim == 2:
        if arr.shape != (r, c):
            raise ConfigError(f"{name}: expected ({r}, {c}) matrix, got {arr.shape}")
        arr = np.tile(arr, (n, 1, 1))
    elif arr.shape != (n, r, c):
        raise ConfigError(f"{name}: per-step form must have shape ({n}, {r}, {c})")
    return arr


@dataclass(frozen=True)
class CoefficientSet:
    """All model and cost coefficients on the grid, plus jump loadings.

    Shapes (n = n_steps, J = number of marks): A, C, Q are (n,); B1, D1, S1
    are (n, m1); B2, D2, S2 are (n, m2); R11 (n, m1, m1); R12 (n, m1, m2);
    R22 (n, m2, m2); E (n, J); F1 (n, J, m1); F2 (n, J, m2); G scalar.
    """

    grid: TimeGrid
    m1: int
    m2: int
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    Q: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    R11: np.ndarray
    R12: np.ndarray
    R22: np.ndarray
    G: float
    E: np.ndarray
    F1: np.ndarray
    F2: np.ndarray
    nu: np.ndarray
    node_overrides: dict[str, Callable] | None = None
    terminal_override: Callable | None = None

    def __post_init__(self):
        for name in ("A", "B1", "B2", "C", "D1", "D2", "Q", "S1", "S2", "R11", "R12", "R22", "E", "F1", "F2", "nu"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise NumericsError(f"coefficient {name} contains non-finite entries")
            arr.setflags(write=False)
        if not np.isfinite(self.G):
            raise NumericsError("terminal weight G is not finite")
        sym_err = max(
            float(np.max(np.abs(self.R11 - np.transpose(self.R11, (0, 2, 1)))) if self.R11.size else 0.0),
            float(np.max(np.abs(self.R22 - np.transpose(self.R22, (0, 2, 1)))) if self.R22.size else 0.0),
        )
        if sym_err > 1e-12:
            raise ConfigError(f"R11/R22 must be symmetric (max asymmetry {sym_err:.3e})")

    @staticmethod
    def build(
        grid: TimeGrid,
        jumps: JumpMeasure,
        m1: int,
        m2: int,
        *,
        A=0.0,
        B1=None,
        B2=None,
        C=0.0,
        D1=None,
        D2=None,
        Q=0.0,
        S1=None,
        S2=None,
        R11=None,
        R12=None,
        R22=None,
        G=0.0,
        E=None,
        F1=None,
        F2=None,
        node_overrides=None,
        terminal_override=None,
    ) -> "CoefficientSet":
        """Assemble a coefficient set, broadcasting constants over the grid."""
        n, J = grid.n_steps, jumps.n_marks
        zeros1, zeros2 = np.zeros(m1), np.zeros(m2)
        ident = lambda m: np.eye(m)
        E_arr = np.zeros((n, J)) if E is None else np.asarray(E, dtype=float)
        if E_arr.ndim == 1:
            if E_arr.size != J:
                raise ConfigError(f"E: expected {J} per-mark values")
            E_arr = np.tile(E_arr, (n, 1))
        elif E_arr.ndim == 0:
            E_arr = np.full((n, J), float(E_arr))
        elif E_arr.shape != (n, J):
            raise ConfigError(f"E: per-step form must have shape ({n}, {J})")

        def mark_vec(name, value, m):
            if value is None:
                return np.zeros((n, J, m))
            arr = np.asarray(value, dtype=float)
            if arr.ndim == 2 and arr.shape == (J, m):
                return np.tile(arr, (n, 1, 1))
            if arr.shape == (n, J, m):
                return arr
            raise ConfigError(f"{name}: expected ({J}, {m}) or ({n}, {J}, {m}), got {arr.shape}")

        return CoefficientSet(
            grid=grid,
            m1=m1,
            m2=m2,
            A=_broadcast_scalar("A", A, n),
            B1=_broadcast_vector("B1", zeros1 if B1 is None else B1, n, m1),
            B2=_broadcast_vector("B2", zeros2 if B2 is None else B2, n, m2),
            C=_broadcast_scalar("C", C, n),
            D1=_broadcast_vector("D1", zeros1 if D1 is None else D1, n, m1),
            D2=_broadcast_vector("D2", zeros2 if D2 is None else D2, n, m2),
            Q=_broadcast_scalar("Q", Q, n),
            S1=_broadcast_vector("S1", zeros1 if S1 is None else S1, n, m1),
            S2=_broadcast_vector("S2", zeros2 if S2 is None else S2, n, m2),
            R11=_broadcast_matrix("R11", ident(m1) if R11 is None else R11, n, m1, m1),
            R12=_broadcast_matrix("R12", np.zeros((m1, m2)) if R12 is None else R12, n, m1, m2),
            R22=_broadcast_matrix("R22", -ident(m2) if R22 is None else R22, n, m2, m2),
            G=float(G),
            E=E_arr,
            F1=mark_vec("F1", F1, m1),
            F2=mark_vec("F2", F2, m2),
            nu=jumps.nu.copy(),
            node_overrides=node_overrides,
            terminal_override=terminal_override,
        )

    @property
    def is_adapted(self) -> bool:
        return bool(self.node_overrides) or self.terminal_override is not None

    def at(self, i: int) -> StepCoeffs:
        """Deterministic coefficient slice for step i (left endpoint)."""
        i = min(max(i, 0), self.grid.n_steps - 1)
        return StepCoeffs(
            A=float(self.A[i]), B1=self.B1[i], B2=self.B2[i], C=float(self.C[i]),
            D1=self.D1[i], D2=self.D2[i], Q=float(self.Q[i]), S1=self.S1[i], S2=self.S2[i],
            R11=self.R11[i], R12=self.R12[i], R22=self.R22[i], G=self.G,
            E=self.E[i], F1=self.F1[i], F2=self.F2[i], nu=self.nu,
        )

    def at_node(self, i: int, level: int, counts: tuple[int, ...]) -> StepCoeffs:
        """Coefficient slice at a lattice node (step, Brownian level, jump counts).

        Adapted coefficients are keyed on this Markovian path summary; fields
        without an override fall back to the deterministic per-step value.
        """
        base = self.at(i)
        if not self.node_overrides:
            return base
        updates = {}
        for name, fn in self.node_overrides.items():
            value = fn(i, level, counts)
            cur = getattr(base, name)
            if isinstance(cur, np.ndarray):
                value = np.asarray(value, dtype=float).reshape(cur.shape)
            else:
                value = float(value)
            updates[name] = value
        from dataclasses import replace

        return replace(base, **updates)

    def terminal_weight(self, level: int = 0, counts: tuple[int, ...] = ()) -> float:
        if self.terminal_override is not None:
            return float(self.terminal_override(level, counts))
        return self.G


@dataclass(frozen=True)
class AssumptionReport:
    """Derived constants and standing-assumption flags for a problem.

    The uniform bound cbar is the tightest constant dominating the grid
    maxima of 2A + C^2, the mark-summed E^2 intensity, |B_k + D_k C|^2, the
    top eigenvalue of D_k D_k' + sum F_k F_k' nu, Q, and G.  K and delta_bar
    follow the closed forms K = (cbar+1) e^{2 cbar T} and
    delta_bar = (cbar+1)^2 e^{4 cbar T} (e^{2 cbar T} - 1).
    """

    cbar: float
    delta_lower: float
    delta_bar: float
    K: float
    c_lower1: float
    T: float
    flags: dict[str, bool]
    structural: dict[str, bool]
    cbar_terms: dict[str, float]

    @property
    def assumptions_ok(self) -> bool:
        return all(self.flags.values())

    @property
    def structure_ok(self) -> bool:
        return all(self.structural.values())

    def to_dict(self) -> dict:
        return {
            "cbar": self.cbar,
            "delta_lower": self.delta_lower,
            "delta_bar": self.delta_bar,
            "K": self.K,
            "c_lower1": self.c_lower1,
            "T": self.T,
            "flags": dict(self.flags),
            "structural": dict(self.structural),
            "cbar_terms": dict(self.cbar_terms),
            "assumptions_ok": self.assumptions_ok,
            "structure_ok": self.structure_ok,
        }


def _eig_max_sym(mats: np.ndarray) -> float:
    """Largest eigenvalue over a stack of symmetric matrices."""
    if mats.size == 0:
        return -np.inf
    return float(np.max(np.linalg.eigvalsh(mats)))


def _eig_min_sym(mats: np.ndarray) -> float:
    if mats.size == 0:
        return np.inf
    return float(np.min(np.linalg.eigvalsh(mats)))


def validate_coefficients(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    jumps: JumpMeasure,
    delta_lower: float = 1e-3,
) -> AssumptionReport:
    """Compute the uniform bound, the derived growth constants, and the
    assumption flags.

    A failed flag is recorded, not raised: the solvers remain well defined
    for many inputs outside the assumptions and merely lose their a priori
    bounds.
    """
    if not (np.isfinite(delta_lower) and delta_lower > 0):
        raise ValueError(f"delta_lower must be positive, got {delta_lower}")
    nu = jumps.nu
    T = grid.T

    drift_term = float(np.max(2.0 * coeffs.A + coeffs.C**2))
    e2_term = float(np.max(coeffs.E**2 @ nu)) if nu.size else 0.0
    b1 = coeffs.B1 + coeffs.D1 * coeffs.C[:, None]
    b2 = coeffs.B2 + coeffs.D2 * coeffs.C[:, None]
    b1_term = float(np.max(np.sum(b1**2, axis=1)))
    b2_term = float(np.max(np.sum(b2**2, axis=1)))

    def noise_matrix(D, F):
        mats = np.einsum("ni,nj->nij", D, D)
        if nu.size:
            mats = mats + np.einsum("nki,nkj,k->nij", F, F, nu)
        return mats

    noise1 = noise_matrix(coeffs.D1, coeffs.F1)
    noise2 = noise_matrix(coeffs.D2, coeffs.F2)
    noise1_term = _eig_max_sym(noise1)
    noise2_term = _eig_max_sym(noise2)
    q_term = float(np.max(coeffs.Q))
    g_term = float(coeffs.G)

    terms = {
        "2A+C^2": drift_term,
        "int E^2 nu": e2_term,
        "|B1+D1 C|^2": b1_term,
        "|B2+D2 C|^2": b2_term,
        "noise1 eigmax": noise1_term,
        "noise2 eigmax": noise2_term,
        "Q": q_term,
        "G": g_term,
    }
    cbar = max(max(terms.values()), _CBAR_FLOOR)
    K = (cbar + 1.0) * np.exp(2.0 * cbar * T)
    delta_bar = (cbar + 1.0) ** 2 * np.exp(4.0 * cbar * T) * (np.exp(2.0 * cbar * T) - 1.0)

    # Sub-solution decay rate: dominate 2A + C^2 + int E^2 nu minus the
    # completed-square drop, which is at most kappa |B1 + D1 C + int E F1 nu|^2
    # with kappa covering both the small- and large-delta_lower readings.
    ef1 = np.einsum("nk,nki,k->ni", coeffs.E, coeffs.F1, nu) if nu.size else 0.0
    bvec = coeffs.B1 + coeffs.D1 * coeffs.C[:, None] + ef1
    kappa = max(delta_lower, 1.0 / delta_lower)
    base = 2.0 * coeffs.A + coeffs.C**2 + (coeffs.E**2 @ nu if nu.size else 0.0)
    c_lower1 = max(float(np.max(kappa * np.sum(np.asarray(bvec) ** 2, axis=1) - base)), _CBAR_FLOOR)

    flags = {
        "R11 > delta_lower I": _eig_min_sym(coeffs.R11) > delta_lower,
        "R22 <= -(delta_bar + K cbar) I": _eig_max_sym(coeffs.R22) <= -(delta_bar + K * cbar),
        "Q >= 0": bool(np.min(coeffs.Q) >= 0.0),
        "G >= delta_lower": g_term >= delta_lower,
        "noise1 >= delta_lower I": _eig_min_sym(noise1) >= delta_lower,
        "noise2 >= delta_lower I": _eig_min_sym(noise2) >= delta_lower,
    }
    structural = {
        "F2 = 0": bool(np.all(coeffs.F2 == 0.0)),
        "S1 = S2 = 0": bool(np.all(coeffs.S1 == 0.0) and np.all(coeffs.S2 == 0.0)),
        "R12 = 0": bool(np.all(coeffs.R12 == 0.0)),
        "D1 D2^T = 0": bool(np.max(np.abs(np.einsum("ni,nj->nij", coeffs.D1, coeffs.D2))) == 0.0),
    }
    return AssumptionReport(
        cbar=float(cbar),
        delta_lower=float(delta_lower),
        delta_bar=float(delta_bar),
        K=float(K),
        c_lower1=float(c_lower1),
        T=float(T),
        flags=flags,
        structural=structural,
        cbar_terms=terms,
    )
