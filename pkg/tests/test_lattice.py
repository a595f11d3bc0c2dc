import json
import math

import numpy as np
import pytest

from conelq.lattice import build_lattice, lattice_to_csv, lattice_to_json, solve_bsde_on_lattice
from conelq.model import CoefficientSet, Cone, JumpMeasure, TimeGrid, validate_coefficients
from conelq.riccati import solve_ode

ORTH = (Cone.orthant(1), Cone.orthant(1))


def simple_coeffs(grid, jumps, **kw):
    kw.setdefault("R11", np.eye(1))
    kw.setdefault("R22", -np.eye(1))
    return CoefficientSet.build(grid, jumps, 1, 1, **kw)


class TestBuildLattice:
    def test_pure_binomial_terminal_levels(self):
        lat = build_lattice(TimeGrid(1.0, 3), JumpMeasure.none())
        assert len(lat.node_keys(3)) == 4
        assert list(lat.levels(3)) == [-3, -1, 1, 3]

    def test_branch_probabilities(self):
        lat = build_lattice(TimeGrid(1.0, 10), JumpMeasure(np.array([1.0])))
        # {up, down} x {no-jump, jump}: 0.5 * 0.9 and 0.5 * 0.1
        assert lat.p_nojump == pytest.approx(0.9, abs=1e-15)
        assert lat.jump_probs[0] == pytest.approx(0.1, abs=1e-15)
        probs = [0.5 * lat.p_nojump, 0.5 * lat.p_nojump, 0.5 * lat.jump_probs[0], 0.5 * lat.jump_probs[0]]
        assert probs == pytest.approx([0.45, 0.45, 0.05, 0.05], abs=1e-15)

    def test_probability_sum_exact(self):
        lat = build_lattice(TimeGrid(1.0, 16), JumpMeasure(np.array([0.7, 0.4])))
        assert lat.p_nojump + lat.sum_jump == 1.0

    def test_too_coarse_grid_rejected(self):
        with pytest.raises(ValueError):
            build_lattice(TimeGrid(1.0, 10), JumpMeasure(np.array([6.0])))

    def test_brownian_moments(self):
        lat = build_lattice(TimeGrid(1.0, 4), JumpMeasure.none())
        d = lat.sqrt_dt
        mean = 0.5 * d + 0.5 * (-d)
        var = 0.5 * d * d + 0.5 * d * d
        assert mean == 0.0
        assert abs(var - lat.grid.dt) <= 4 * np.finfo(float).eps * lat.grid.dt

    def test_jump_count_capping(self):
        lat = build_lattice(TimeGrid(1.0, 8), JumpMeasure(np.array([0.5])), max_jumps_per_mark=2)
        assert lat.child_counts((2,), 0) == (2,)
        assert lat.child_counts((1,), 0) == (2,)
        assert max(c[0] for c in lat.count_tuples(8)) == 2


class TestSolveOnLattice:
    def test_zero_driver_constant(self):
        grid = TimeGrid(1.0, 20)
        jumps = JumpMeasure(np.array([0.8]))
        co = simple_coeffs(grid, jumps, G=0.6)
        sol = solve_bsde_on_lattice(co, build_lattice(grid, jumps), ORTH)
        for s in range(21):
            assert np.max(np.abs(sol.P1[s] - 0.6)) == 0.0
            assert np.max(np.abs(sol.P2[s] - 0.6)) == 0.0
            if s < 20:
                assert np.max(np.abs(sol.L1[s])) == 0.0
                assert np.max(np.abs(sol.G1[s])) == 0.0

    def test_two_step_hand_calculation(self):
        # state-independent dynamics, split running weight at the penultimate
        # step: the root value averages the two branches through the driver
        grid = TimeGrid(0.5, 2)
        jumps = JumpMeasure.none()
        q_up, q_dn = 2.0, -1.0
        co = simple_coeffs(
            grid, jumps, G=0.3,
            node_overrides={"Q": lambda s, lvl, cnt: (q_up if lvl > 0 else q_dn) if s == 1 else 0.0},
        )
        sol = solve_bsde_on_lattice(co, build_lattice(grid, jumps), ORTH)
        root = sol.root()
        dt = grid.dt
        assert root["P1"] == pytest.approx(0.3 + dt * (q_up + q_dn) / 2, rel=1e-14)
        assert root["L1"] == pytest.approx(math.sqrt(dt) * (q_up - q_dn) / 2, rel=1e-14)

    def test_affine_terminal_extracts_slope(self):
        # terminal value affine in the Brownian level: martingale values stay
        # affine and the extracted volatility equals the slope
        grid = TimeGrid(1.0, 6)
        jumps = JumpMeasure.none()
        g0, g1 = 0.8, 0.25
        lat = build_lattice(grid, jumps)
        co = simple_coeffs(
            grid, jumps, G=g0,
            terminal_override=lambda lvl, cnt: g0 + g1 * (lvl * lat.sqrt_dt),
        )
        sol = solve_bsde_on_lattice(co, lat, ORTH)
        for s in range(6):
            assert np.max(np.abs(sol.L1[s] - g1)) <= 1e-12
        root = sol.root()
        assert root["P1"] == pytest.approx(g0, rel=1e-12)

    def test_deterministic_collapse_order(self):
        grid0 = TimeGrid(0.5, 800)
        jumps = JumpMeasure(np.array([0.5]))

        def coeffs(grid):
            return simple_coeffs(
                grid, jumps, A=0.05, C=0.1, B1=np.array([-0.3]), D1=np.array([0.2]), Q=0.4,
                R22=-3 * np.eye(1), G=0.8, E=np.array([-0.2]), F1=np.array([[0.1]]),
            )

        ref = solve_ode(coeffs(grid0), grid0, jumps, ORTH)
        errs = []
        for n in (25, 50, 100):
            g = TimeGrid(0.5, n)
            sol = solve_bsde_on_lattice(coeffs(g), build_lattice(g, jumps), ORTH)
            errs.append(abs(sol.root()["P1"] - ref.P1[0]))
        orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
        assert min(orders) >= 0.9

    def test_lambda_vanishes_for_deterministic_coefficients(self):
        grid = TimeGrid(0.5, 12)
        jumps = JumpMeasure(np.array([0.4]))
        co = simple_coeffs(grid, jumps, A=0.1, B1=np.array([-0.2]), Q=0.2, G=0.5,
                           E=np.array([0.2]), F1=np.array([[0.1]]))
        sol = solve_bsde_on_lattice(co, build_lattice(grid, jumps), ORTH)
        for s in range(12):
            assert np.max(np.abs(sol.L1[s])) <= 1e-12
            assert np.max(np.abs(sol.L2[s])) <= 1e-12

    def test_tower_property_exact(self):
        grid = TimeGrid(0.5, 10)
        jumps = JumpMeasure(np.array([0.6]))
        co = simple_coeffs(grid, jumps, A=0.1, C=0.2, B1=np.array([-0.3]), D2=np.array([0.2]),
                           Q=0.3, R22=-4 * np.eye(1), G=0.7, E=np.array([-0.2]), F1=np.array([[0.2]]))
        lat = build_lattice(grid, jumps)
        sol = solve_bsde_on_lattice(co, lat, ORTH)
        dt = grid.dt
        # E[P(s+1) | node] - P(node) = -dt * driver(node), with the driver
        # reconstructed from the stored snapshot at the node
        for s in (0, 4, 8):
            for key, i in sol.layers[s].items():
                lvl, cnt = key
                child = sol.layers[s + 1]
                p0 = lat.p_nojump
                up = p0 * sol.P1[s + 1][child[(lvl + 1, cnt)]]
                dn = p0 * sol.P1[s + 1][child[(lvl - 1, cnt)]]
                for j in range(lat.n_marks):
                    cj = lat.child_counts(cnt, j)
                    up += lat.jump_probs[j] * sol.P1[s + 1][child[(lvl + 1, cj)]]
                    dn += lat.jump_probs[j] * sol.P1[s + 1][child[(lvl - 1, cj)]]
                phat = 0.5 * (up + dn)
                step = co.at_node(s, lvl, cnt)
                lin = 2.0 * step.A + step.C * step.C
                driver = lin * phat + 2.0 * step.C * sol.L1[s][i] + step.Q + sol.H1s[s][i]
                assert phat - sol.P1[s][i] == pytest.approx(-dt * driver, abs=1e-15)

    def test_jump_bound_on_valid_instance(self):
        grid = TimeGrid(0.5, 40)
        jumps = JumpMeasure(np.array([0.5, 0.25]))
        co = CoefficientSet.build(
            grid, jumps, 1, 1,
            A=0.02, C=0.1, B1=np.array([-0.2]), B2=np.array([0.1]), D2=np.array([0.2]), Q=0.05,
            R11=np.eye(1), R22=-6.0 * np.eye(1), G=0.5,
            E=np.array([-0.1, 0.1]), F1=np.array([[0.3], [0.2]]),
        )
        rep = validate_coefficients(co, grid, jumps, 0.01)
        assert rep.assumptions_ok
        sol = solve_bsde_on_lattice(co, build_lattice(grid, jumps), ORTH)
        tol = 10.0 * grid.dt * rep.K
        for s in range(41):
            P1, P2 = sol.P1[s], sol.P2[s]
            assert np.all(P1 > 0) and np.all(P2 > 0)
            assert np.all(P1 <= rep.K + tol) and np.all(P2 <= rep.K + tol)
            if s < 40:
                for j in range(2):
                    assert np.all(P1 + sol.G1[s][:, j] > 0)
                    assert np.all(P1 + sol.G1[s][:, j] <= rep.K + tol)
                    assert np.all(P2 + sol.G2[s][:, j] > 0)
                    assert np.all(P2 + sol.G2[s][:, j] <= rep.K + tol)


class TestExports:
    def test_json_nodes(self):
        grid = TimeGrid(1.0, 3)
        jumps = JumpMeasure(np.array([0.5]))
        co = simple_coeffs(grid, jumps, G=0.4)
        sol = solve_bsde_on_lattice(co, build_lattice(grid, jumps), ORTH)
        doc = json.loads(lattice_to_json(sol))
        assert doc["format"] == "conelq.lattice"
        assert doc["nodes"]["0:0:0"]["P1"] == pytest.approx(0.4)

    def test_csv_rows(self):
        grid = TimeGrid(1.0, 3)
        jumps = JumpMeasure.none()
        co = simple_coeffs(grid, jumps, G=0.4)
        sol = solve_bsde_on_lattice(co, build_lattice(grid, jumps), ORTH)
        lines = lattice_to_csv(sol).strip().splitlines()
        assert lines[0].split(",")[:4] == ["step", "level", "P1", "P2"]
        n_nodes = sum(len(layer) for layer in sol.layers)
        assert len(lines) == 1 + n_nodes
