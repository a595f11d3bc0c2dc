import numpy as np
import pytest

import conelq.backend as backend_mod
from conelq.backend import available_backends
from conelq.model import CoefficientSet, Cone, InitialLaw, JumpMeasure, TimeGrid, cone_contains
from conelq.riccati import solve_ode
from conelq.simulate import (
    ControlSpec,
    _BatchDraws,
    _batch_rng,
    _run_batch,
    extract_feedback,
    path_cost,
    simulate_paths,
)

pytestmark = pytest.mark.skipif(
    len(available_backends()) < 2, reason="compiled kernel unavailable; nothing to compare"
)


def family(n_steps=200, m1=1, m2=1, J=1):
    grid = TimeGrid(0.5, n_steps)
    jumps = JumpMeasure(np.full(J, 0.6)) if J else JumpMeasure.none()
    co = CoefficientSet.build(
        grid, jumps, m1, m2,
        A=0.1, C=0.2,
        B1=np.linspace(-0.4, 0.2, m1), B2=np.linspace(0.3, -0.1, m2),
        D1=np.linspace(0.2, 0.1, m1), D2=np.linspace(-0.1, 0.2, m2),
        Q=0.3, S1=np.full(m1, 0.05), S2=np.full(m2, -0.05),
        R11=np.eye(m1) * 1.5, R12=np.full((m1, m2), 0.1), R22=-2.5 * np.eye(m2),
        G=0.7,
        E=np.full(J, -0.2) if J else None,
        F1=np.full((J, m1), 0.15) if J else None,
        F2=np.full((J, m2), 0.1) if J else None,
    )
    return co, grid, jumps


@pytest.mark.parametrize("m1,m2,J", [(1, 1, 0), (1, 1, 1), (2, 1, 2), (2, 2, 1)])
def test_backends_bitwise_identical(m1, m2, J):
    co, grid, jumps = family(120, m1, m2, J)
    draws = _BatchDraws(_batch_rng(3, 0), InitialLaw.normal(0.5, 0.8), 120, 512, jumps.nu, grid.dt)
    off1 = np.abs(np.random.default_rng(1).standard_normal((120, m1))) * 0.3
    off2 = np.abs(np.random.default_rng(2).standard_normal((120, m2))) * 0.2
    spec = ControlSpec(None, 0.0, off1, off2)
    outs = {}
    for name, impl in available_backends().items():
        backend_mod.simulate_batch = impl.simulate_batch
        outs[name] = _run_batch(co, grid, draws, spec, keep=8, record=True)
    backend_mod.simulate_batch = available_backends()[backend_mod.BACKEND_NAME].simulate_batch
    a, b = outs["numpy"], outs["cython"]
    for i, label in ((0, "cost"), (1, "xT"), (2, "X_kept"), (3, "U1_kept"), (4, "U2_kept"), (5, "U1_full"), (6, "U2_full")):
        assert np.array_equal(np.asarray(a[i]), np.asarray(b[i])), label


def test_feedback_path_identical_across_backends():
    co, grid, jumps = family(150)
    cones = (Cone.orthant(1), Cone.orthant(1))
    sol = solve_ode(co, grid, jumps, cones)
    law = extract_feedback(sol)
    draws = _BatchDraws(_batch_rng(11, 0), InitialLaw.point(1.0), 150, 256, jumps.nu, grid.dt)
    outs = {}
    for name, impl in available_backends().items():
        backend_mod.simulate_batch = impl.simulate_batch
        outs[name] = _run_batch(co, grid, draws, ControlSpec(feedback=law), keep=4)
    backend_mod.simulate_batch = available_backends()[backend_mod.BACKEND_NAME].simulate_batch
    assert np.array_equal(outs["numpy"][0], outs["cython"][0])


def test_replay_reproduces_feedback_run():
    co, grid, jumps = family(100)
    cones = (Cone.orthant(1), Cone.orthant(1))
    law = extract_feedback(solve_ode(co, grid, jumps, cones))
    draws = _BatchDraws(_batch_rng(5, 0), InitialLaw.point(0.8), 100, 64, jumps.nu, grid.dt)
    cost0, _, _, _, _, U1r, U2r = _run_batch(co, grid, draws, ControlSpec(feedback=law), record=True)
    cost1, *_ = _run_batch(co, grid, draws, ControlSpec(None, 0.0), rep1=U1r, rep2=U2r)
    assert np.array_equal(cost0, cost1)


def test_kernel_cost_matches_reference_path_cost():
    co, grid, jumps = family(80)
    cones = (Cone.orthant(1), Cone.orthant(1))
    law = extract_feedback(solve_ode(co, grid, jumps, cones))
    res = simulate_paths(co, grid, jumps, law, InitialLaw.point(1.0), 16, seed=9, keep_paths=16)
    for p in range(16):
        ref = path_cost(res.X_kept[p], res.U1_kept[p], res.U2_kept[p], co, grid)
        assert res.cost_samples[p] == pytest.approx(ref, rel=1e-12)


def test_trapezoid_cross_check_first_order():
    # independent quadrature: trapezoid vs the kernel's left-endpoint sum
    # differ by O(dt) on the same trajectory
    gaps = []
    for n in (100, 200, 400):
        co, grid, jumps = family(n)
        cones = (Cone.orthant(1), Cone.orthant(1))
        law = extract_feedback(solve_ode(co, grid, jumps, cones))
        res = simulate_paths(co, grid, jumps, law, InitialLaw.point(1.0), 4, seed=2, keep_paths=4)
        p = 0
        X, u1, u2 = res.X_kept[p], res.U1_kept[p], res.U2_kept[p]
        vals = np.empty(n + 1)
        for i in range(n + 1):
            j = min(i, n - 1)
            a = u1[j] if i < n else u1[n - 1]
            b = u2[j] if i < n else u2[n - 1]
            x = X[i]
            vals[i] = (
                co.Q[j] * x * x
                + 2 * x * (co.S1[j] @ a)
                + 2 * x * (co.S2[j] @ b)
                + a @ co.R11[j] @ a
                + 2 * (a @ co.R12[j] @ b)
                + b @ co.R22[j] @ b
            )
        trapz = grid.dt * (0.5 * vals[0] + vals[1:-1].sum() + 0.5 * vals[-1]) + co.G * X[-1] ** 2
        gaps.append(abs(trapz - res.cost_samples[p]))
    assert gaps[2] < gaps[0]  # shrinks under refinement
    assert gaps[0] <= 0.5  # O(dt) magnitude at dt = 5e-3


def test_simulated_controls_respect_cones():
    co, grid, jumps = family(100)
    cones = (Cone.orthant(1), Cone.orthant(1))
    law = extract_feedback(solve_ode(co, grid, jumps, cones))
    res = simulate_paths(co, grid, jumps, law, InitialLaw.normal(0.0, 1.0), 32, seed=17, keep_paths=32)
    for p in range(32):
        for i in range(grid.n_steps):
            assert cone_contains(cones[0], res.U1_kept[p, i], 1e-9)
            assert cone_contains(cones[1], res.U2_kept[p, i], 1e-9)


def test_jump_log_matches_counts():
    co, grid, jumps = family(60, J=2)
    res = simulate_paths(co, grid, jumps, (np.zeros((60, 1)), np.zeros((60, 1))),
                         InitialLaw.point(1.0), 8, seed=4, keep_paths=8)
    draws = _BatchDraws(_batch_rng(4, 0), InitialLaw.point(1.0), 60, 8, jumps.nu, grid.dt)
    for p in range(8):
        expect = []
        for j in range(2):
            for i in np.nonzero(draws.counts[j, :, p])[0]:
                expect.extend([(int(i), j)] * int(draws.counts[j, i, p]))
        assert res.jump_log[p] == sorted(expect)


def test_seed_determinism_bitwise():
    co, grid, jumps = family(90)
    cones = (Cone.orthant(1), Cone.orthant(1))
    law = extract_feedback(solve_ode(co, grid, jumps, cones))
    r1 = simulate_paths(co, grid, jumps, law, InitialLaw.normal(0.2, 1.0), 3000, seed=123)
    r2 = simulate_paths(co, grid, jumps, law, InitialLaw.normal(0.2, 1.0), 3000, seed=123)
    assert r1.mean == r2.mean and r1.stderr == r2.stderr
    assert np.array_equal(r1.cost_samples, r2.cost_samples)
    r3 = simulate_paths(co, grid, jumps, law, InitialLaw.normal(0.2, 1.0), 3000, seed=124)
    assert r3.mean != r1.mean
