import dataclasses
import math

import numpy as np
import pytest

from conelq.errors import CurvatureError
from conelq.hamiltonian import (
    build_terms,
    build_terms_from_step,
    concavity_margin,
    convexity_margin,
    eval_concave_part,
    eval_convex_part,
    eval_hamiltonian,
    fast_scalar_saddle,
    gradient_bound,
    grid_oracle_saddle,
    inner_min,
    saddle,
    truncated_concave_max,
    truncated_convex_min,
)
from conelq.model import CoefficientSet, Cone, JumpMeasure, TimeGrid


def step_with(jumps=None, m1=1, m2=1, **kw):
    grid = TimeGrid(1.0, 4)
    jm = jumps if jumps is not None else JumpMeasure.none()
    kw.setdefault("R11", np.eye(m1))
    kw.setdefault("R22", -np.eye(m2))
    return CoefficientSet.build(grid, jm, m1, m2, **kw).at(0)


def scalar_terms(M11=1.0, N11=0.0, M21=-1.0, N21=0.0, P1=0.0, P2=0.0, **snap):
    """Scalar snapshot with no diffusion loadings: M terms come straight
    from R, N terms from S."""
    step = step_with(R11=np.array([[M11]]), R22=np.array([[M21]]), S1=np.array([N11]), S2=np.array([N21]))
    return build_terms_from_step(step, P1, P2, **snap)


orthant = Cone.orthant(1)
full1 = Cone.full(1)


class TestBuildTerms:
    def test_zero_diffusion_loading(self):
        # D1 = 0, R11 = I: M11 and M12 both reduce to the identity
        step = step_with(m1=2, m2=1, B1=np.zeros(2), R11=np.eye(2))
        t = build_terms_from_step(step, P1=3.7, P2=-1.2)
        assert np.array_equal(t.M11, np.eye(2))
        assert np.array_equal(t.M12, np.eye(2))

    def test_only_p_b_survives(self):
        step = step_with(B1=np.array([1.0]))
        t = build_terms_from_step(step, P1=1.0, P2=3.0)
        assert np.allclose(t.N12, [3.0], atol=0)

    def test_diffusion_loading_adds(self):
        step = step_with(R11=2 * np.eye(1), D1=np.array([1.0]))
        t = build_terms_from_step(step, P1=0.5, P2=0.0)
        assert np.allclose(t.M11, [[2.5]], atol=0)

    def test_snapshot_echoed(self):
        step = step_with(jumps=JumpMeasure(np.array([0.5])))
        t = build_terms_from_step(step, 1.0, 2.0, 0.3, -0.4, np.array([0.1]), np.array([-0.2]))
        assert (t.P1, t.P2, t.L1, t.L2) == (1.0, 2.0, 0.3, -0.4)
        assert np.array_equal(t.G1, [0.1]) and np.array_equal(t.G2, [-0.2])

    def test_bad_index(self):
        grid = TimeGrid(1.0, 4)
        co = CoefficientSet.build(grid, JumpMeasure.none(), 1, 1, R11=np.eye(1), R22=-np.eye(1))
        with pytest.raises(ValueError):
            build_terms(co, 9, 1.0, 1.0)


class TestEvalParts:
    def test_pure_quadratic(self):
        t = scalar_terms(M11=2.0, N11=-3.0)
        # 2 * 1.5^2 + 2 * (-3) * 1.5 = -4.5
        assert eval_convex_part(1, [1.5], [0.0], t) == pytest.approx(-4.5, abs=1e-14)

    def test_controls_vanish_leaves_mark_constant(self):
        jm = JumpMeasure(np.array([0.7, 0.4]))
        step = step_with(jumps=jm, E=np.array([-0.3, 0.2]))
        t = build_terms_from_step(step, P1=1.2, P2=0.8, G1=np.array([0.1, -0.05]), G2=np.array([0.0, 0.2]))
        expect = 0.0
        for j, nu in enumerate(jm.nu):
            e = step.E[j]
            pp = 1.2 + t.G1[j]
            pm = 0.8 + t.G2[j]
            expect += nu * (pp * (max(1 + e, 0) ** 2 - 1) - 2 * 1.2 * e + pm * max(-(1 + e), 0) ** 2)
        assert eval_convex_part(1, [0.0], [0.0], t) == pytest.approx(expect, rel=1e-14)

    def test_single_mark_hand_value(self):
        # one mark, E = -2, F = 0, P1 = P2 = 1, Gamma = 0, nu = 1, v = 0:
        # (1)((( -1)^+)^2 - 1) - 2(1)(-2) + (1)((-1)^-)^2 = -1 + 4 + 1 = 4
        jm = JumpMeasure(np.array([1.0]))
        step = step_with(jumps=jm, E=np.array([-2.0]))
        t = build_terms_from_step(step, P1=1.0, P2=1.0)
        assert eval_convex_part(1, [0.0], [0.0], t) == pytest.approx(4.0, abs=1e-14)

    def test_concave_part_zero_at_origin(self):
        t = scalar_terms(M21=-2.0, N21=1.0)
        assert eval_concave_part(1, [0.0], t) == 0.0

    def test_concave_part_signs(self):
        t = scalar_terms(M21=-2.0, N21=1.0, P1=0.0, P2=0.0)
        # k=1: -2 (0.5)^2 + 2 (1)(0.5) = 0.5 ; k=2 flips the linear sign
        assert eval_concave_part(1, [0.5], t) == pytest.approx(0.5, abs=1e-15)
        assert eval_concave_part(2, [0.5], t) == pytest.approx(-1.5, abs=1e-15)

    def test_dimension_mismatch(self):
        t = scalar_terms()
        with pytest.raises(ValueError):
            eval_convex_part(1, [1.0, 2.0], [0.0], t)


class TestInnerMin:
    def test_interior_minimum(self):
        t = scalar_terms(M11=2.0, N11=-3.0)
        res = inner_min(1, [0.0], t, orthant)
        assert res.v1 == pytest.approx([1.5], abs=1e-12)
        assert res.value == pytest.approx(-4.5, abs=1e-12)
        assert res.residual <= 1e-10

    def test_clamped_to_apex(self):
        t = scalar_terms(M11=2.0, N11=3.0)
        res = inner_min(1, [0.0], t, orthant)
        assert res.v1 == pytest.approx([0.0], abs=0)
        assert res.value == pytest.approx(0.0, abs=0)

    def test_jump_case_matches_brute_force(self):
        jm = JumpMeasure(np.array([0.8]))
        step = step_with(jumps=jm, E=np.array([-0.4]), F1=np.array([[0.6]]),
                         R11=np.array([[1.2]]), S1=np.array([-0.7]))
        t = build_terms_from_step(step, P1=0.9, P2=0.5, G1=np.array([0.1]), G2=np.array([-0.05]))
        res = inner_min(1, [0.0], t, orthant)
        grid_pts = np.arange(0.0, 5.0, 1e-3)
        vals = np.array([eval_convex_part(1, [v], [0.0], t) for v in grid_pts])
        brute = vals.min()
        assert res.value <= brute + 1e-12
        assert abs(res.value - brute) <= 2e-3 * 2  # within 2x grid resolution
        assert abs(res.v1[0] - grid_pts[vals.argmin()]) <= 2e-3

    def test_truncated_ball_active(self):
        t = scalar_terms(M11=1.0, N11=-5.0)
        res = inner_min(1, [0.0], t, orthant, trunc_radius=2.0)
        assert res.v1 == pytest.approx([2.0], abs=1e-12)

    def test_nonconvex_raises(self):
        t = scalar_terms(M11=-1.0)
        with pytest.raises(CurvatureError):
            inner_min(1, [0.0], t, orthant)

    def test_multidim_orthant(self):
        step = step_with(m1=2, m2=1, B1=np.zeros(2),
                         R11=np.array([[2.0, 0.3], [0.3, 1.5]]), S1=np.array([-1.0, 2.0]))
        t = build_terms_from_step(step, 0.0, 0.0)
        res = inner_min(1, [0.0], t, Cone.orthant(2))
        # KKT: v2-coordinate clamps to zero, first solves 2 v - 1 = 0
        assert res.v1 == pytest.approx([0.5, 0.0], abs=1e-10)
        assert res.residual <= 1e-9


class TestSaddle:
    def test_decoupled_hand_example(self):
        t = scalar_terms(M11=2.0, N11=-3.0, M21=-2.0, N21=1.0)
        res = saddle(1, t, orthant, orthant)
        assert res.v1 == pytest.approx([1.5], abs=1e-12)
        assert res.v2 == pytest.approx([0.5], abs=1e-12)
        assert res.value == pytest.approx(-4.0, abs=1e-12)
        assert res.method == "analytic"

    def test_homogeneous_origin(self):
        t = scalar_terms(M11=2.0, M21=-2.0)
        res = saddle(1, t, orthant, orthant)
        assert res.value == 0.0
        assert np.array_equal(res.v1, [0.0]) and np.array_equal(res.v2, [0.0])

    def test_homogeneous_with_mark_constant(self):
        jm = JumpMeasure(np.array([0.5]))
        step = step_with(jumps=jm, E=np.array([0.3]))
        t = build_terms_from_step(step, P1=1.0, P2=1.0)
        res = saddle(1, t, orthant, orthant)
        const = eval_convex_part(1, [0.0], [0.0], t)
        assert res.value == pytest.approx(const, rel=1e-14)
        assert np.array_equal(res.v1, [0.0])

    def test_coupled_matches_grid_oracle(self):
        step = step_with(R11=np.array([[1.4]]), R22=np.array([[-2.0]]), R12=np.array([[0.4]]),
                         S1=np.array([-0.8]), S2=np.array([0.5]))
        t = build_terms_from_step(step, 0.7, 0.4)
        res = saddle(1, t, orthant, orthant)
        orc = grid_oracle_saddle(1, t, orthant, orthant, radius=3.0, step=1e-3)
        L = gradient_bound(1, t, 3.0)
        assert res.method == "extragradient"
        assert abs(res.value - orc.value) <= 2 * L * 1e-3
        assert abs(orc.value - orc.value_minmax) <= 2 * L * 1e-3

    def test_saddle_inequality_pointwise(self):
        rng = np.random.default_rng(7)
        jm = JumpMeasure(np.array([0.6]))
        step = step_with(jumps=jm, E=np.array([-0.2]), F1=np.array([[0.3]]), F2=np.array([[0.2]]),
                         R11=np.array([[1.5]]), R22=np.array([[-2.5]]), R12=np.array([[0.2]]),
                         S1=np.array([-0.4]), S2=np.array([0.3]), D1=np.array([0.2]), D2=np.array([0.1]))
        t = build_terms_from_step(step, 0.8, 0.6, 0.1, -0.1, np.array([0.05]), np.array([0.02]))
        res = saddle(1, t, orthant, orthant, tol=1e-12)
        vstar = eval_hamiltonian(1, res.v1, res.v2, t)
        for _ in range(100):
            v1 = np.abs(rng.standard_normal(1)) * 2
            v2 = np.abs(rng.standard_normal(1)) * 2
            assert eval_hamiltonian(1, res.v1, v2, t) <= vstar + 1e-8
            assert vstar <= eval_hamiltonian(1, v1, res.v2, t) + 2e-8

    def test_concavity_violation_raises(self):
        t = scalar_terms(M21=1.0)
        with pytest.raises(CurvatureError):
            saddle(1, t, orthant, orthant)

    def test_positive_homogeneity_of_clamped_minimizers(self):
        # scaling both linear terms scales the clamped optimizers linearly
        # while the active faces stay fixed
        for lam in (0.5, 2.0, 3.5):
            t1 = scalar_terms(M11=2.0, N11=-3.0, M21=-2.0, N21=1.0)
            t2 = scalar_terms(M11=2.0, N11=-3.0 * lam, M21=-2.0, N21=1.0 * lam)
            r1 = saddle(1, t1, orthant, orthant)
            r2 = saddle(1, t2, orthant, orthant)
            assert r2.v1 == pytest.approx(lam * r1.v1, rel=1e-12)
            assert r2.v2 == pytest.approx(lam * r1.v2, rel=1e-12)


class TestFastScalarPath:
    def test_agrees_with_general_decoupled(self):
        rng = np.random.default_rng(3)
        jm = JumpMeasure(np.array([0.5]))
        for _ in range(25):
            step = step_with(jumps=jm, E=np.array([rng.uniform(-0.5, 0.5)]),
                             F1=np.array([[rng.uniform(-0.5, 0.5)]]),
                             R11=np.array([[rng.uniform(0.8, 2.0)]]),
                             R22=np.array([[rng.uniform(-3.0, -1.0)]]),
                             S1=np.array([rng.uniform(-1, 1)]), S2=np.array([rng.uniform(-1, 1)]),
                             B1=np.array([rng.uniform(-1, 1)]), B2=np.array([rng.uniform(-1, 1)]))
            P1, P2 = rng.uniform(0.2, 1.5, 2)
            fast = fast_scalar_saddle(1, step, P1, P2, cone1=orthant, cone2=orthant)
            t = build_terms_from_step(step, P1, P2)
            gen = saddle(1, t, orthant, orthant)
            assert fast.value == pytest.approx(gen.value, rel=1e-10, abs=1e-12)
            assert fast.v1 == pytest.approx(gen.v1, abs=1e-9)

    def test_agrees_with_general_coupled(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            step = step_with(R11=np.array([[rng.uniform(1.0, 2.0)]]),
                             R22=np.array([[rng.uniform(-3.0, -1.5)]]),
                             R12=np.array([[rng.uniform(-0.3, 0.3)]]),
                             S1=np.array([rng.uniform(-1, 1)]), S2=np.array([rng.uniform(-1, 1)]))
            P1, P2 = rng.uniform(0.2, 1.2, 2)
            fast = fast_scalar_saddle(1, step, P1, P2, cone1=orthant, cone2=full1, tol=1e-12)
            t = build_terms_from_step(step, P1, P2)
            gen = saddle(1, t, orthant, full1, tol=1e-12)
            assert fast.method == "extragradient"
            assert fast.value == pytest.approx(gen.value, rel=1e-8, abs=1e-10)


class TestTruncatedMaps:
    def setup_method(self):
        jm = JumpMeasure(np.array([0.6]))
        step = step_with(jumps=jm, E=np.array([-0.3]), F1=np.array([[0.4]]),
                         R11=np.array([[1.0]]), R22=np.array([[-2.0]]),
                         S1=np.array([-2.5]), S2=np.array([1.5]))
        self.terms = build_terms_from_step(step, 0.9, 0.7)

    def test_min_side_decreasing_in_radius(self):
        vals = [truncated_convex_min(1, self.terms, orthant, radius=n)[1] for n in (1, 2, 4, 8, 16)]
        for a, b in zip(vals[:-1], vals[1:]):
            assert b <= a + 1e-12

    def test_max_side_increasing_in_radius(self):
        vals = [truncated_concave_max(1, self.terms, orthant, radius=n)[1] for n in (1, 2, 4, 8, 16)]
        for a, b in zip(vals[:-1], vals[1:]):
            assert b >= a - 1e-12

    def test_limits_reach_untruncated(self):
        res = saddle(1, self.terms, orthant, orthant)
        lo = truncated_convex_min(1, self.terms, orthant, radius=64.0)[1]
        hi = truncated_concave_max(1, self.terms, orthant, radius=64.0)[1]
        assert lo + hi == pytest.approx(res.value, rel=1e-10)

    def test_radius_zero_forces_origin(self):
        v1, val = truncated_convex_min(1, self.terms, orthant, radius=0.0)
        assert np.array_equal(v1, [0.0])
        assert val == pytest.approx(eval_convex_part(1, [0.0], [0.0], self.terms), rel=1e-14)


class TestGridOracle:
    def test_decoupled_example_radius_10(self):
        t = scalar_terms(M11=2.0, N11=-3.0, M21=-2.0, N21=1.0)
        orc = grid_oracle_saddle(1, t, orthant, orthant, radius=10.0, step=1e-3)
        assert abs(orc.value - (-4.0)) <= 1e-2
        assert abs(orc.value - orc.value_minmax) <= 1e-6

    def test_zero_linear_terms(self):
        jm = JumpMeasure(np.array([0.5]))
        step = step_with(jumps=jm, E=np.array([0.4]))
        t = build_terms_from_step(step, P1=1.0, P2=1.0)
        const = eval_convex_part(1, [0.0], [0.0], t)
        orc = grid_oracle_saddle(1, t, orthant, orthant, radius=1.0, step=1e-2)
        # quadratic objective: one grid step of error in each control
        assert abs(orc.value - const) <= 4e-4

    def test_minmax_equals_maxmin_within_lipschitz_bound(self):
        step = step_with(R11=np.array([[1.5]]), R22=np.array([[-2.0]]), R12=np.array([[0.3]]),
                         S1=np.array([-0.6]), S2=np.array([0.4]))
        t = build_terms_from_step(step, 0.5, 0.5)
        orc = grid_oracle_saddle(1, t, orthant, orthant, radius=2.0, step=1e-3)
        L = gradient_bound(1, t, 2.0)
        assert abs(orc.value - orc.value_minmax) <= 2 * L * 1e-3

    def test_dimension_cap(self):
        step = step_with(m1=3, m2=2, B1=np.zeros(3), B2=np.zeros(2), R11=np.eye(3), R22=-np.eye(2))
        t = build_terms_from_step(step, 0.0, 0.0)
        with pytest.raises(ValueError):
            grid_oracle_saddle(1, t, Cone.orthant(3), Cone.orthant(2), 1.0, 0.5)


class TestSaddleValueBounds:
    def test_value_bounded_by_quadratic_in_lambda(self):
        # full-space configuration with equal components: fit constants on
        # the even sweep indices, check the odd ones
        jm = JumpMeasure(np.array([0.5]))
        step = step_with(jumps=jm, E=np.array([-0.2]), F1=np.array([[0.3]]),
                         B1=np.array([0.4]), B2=np.array([0.3]), D1=np.array([0.2]), D2=np.array([0.15]),
                         R11=np.array([[1.5]]), R22=np.array([[-2.5]]))
        lams = np.linspace(-10, 10, 41)
        vals = []
        for lam in lams:
            t = build_terms_from_step(step, 1.0, 1.0, lam, lam)
            vals.append(saddle(1, t, full1, full1).value)
        vals = np.array(vals)
        ratios = vals / (1.0 + lams**2)
        fit, check = ratios[::2], ratios[1::2]
        a = max(np.max(-fit), 0.0)
        b = max(np.max(fit), 0.0)
        # checked points interleave the fit points, so allow the observed
        # per-interval variation of the ratio as slack
        slack = np.max(np.abs(np.diff(fit))) + 1e-9
        assert np.all(check >= -(a + slack))
        assert np.all(check <= b + slack)


class TestCurvatureMargins:
    def test_jump_loadings_enter_margins(self):
        jm = JumpMeasure(np.array([1.0]))
        step = step_with(jumps=jm, F1=np.array([[1.0]]), F2=np.array([[1.0]]),
                         R11=np.array([[0.5]]), R22=np.array([[-0.5]]))
        t = build_terms_from_step(step, P1=1.0, P2=2.0)
        assert convexity_margin(1, t) == pytest.approx(0.5 + 1.0 * 1.0, abs=1e-14)  # min(P1, P2) = 1
        assert concavity_margin(1, t) == pytest.approx(-0.5 + 2.0, abs=1e-14)  # max = 2
