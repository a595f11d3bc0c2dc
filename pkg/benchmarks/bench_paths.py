"""Benchmark the compiled path kernel against the NumPy fallback.

Runs the same batch through every importable backend, checks the outputs
agree, and reports throughput in path-steps per second.

    python3 benchmarks/bench_paths.py [--paths 100000] [--steps 1000] [--marks 1]
"""

import argparse
import time

import numpy as np

from conelq.backend import available_backends
from conelq.model import CoefficientSet, Cone, InitialLaw, JumpMeasure, TimeGrid
from conelq.riccati import solve_ode
from conelq.simulate import _BatchDraws, _batch_rng, _run_batch, extract_feedback, _as_spec
from conelq import backend as backend_mod


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--marks", type=int, default=1)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    grid = TimeGrid(1.0, args.steps)
    jumps = JumpMeasure(np.full(args.marks, 0.5)) if args.marks else JumpMeasure.none()
    coeffs = CoefficientSet.build(
        grid, jumps, 1, 1,
        A=0.05, C=0.15, B1=np.array([-0.3]), B2=np.array([0.2]), D1=np.array([0.2]),
        Q=0.4, R11=np.eye(1), R22=-3 * np.eye(1), G=0.8,
        E=np.full(args.marks, -0.2) if args.marks else None,
        F1=np.full((args.marks, 1), 0.1) if args.marks else None,
    )
    cones = (Cone.orthant(1), Cone.orthant(1))
    sol = solve_ode(coeffs, grid, jumps, cones)
    spec = _as_spec(extract_feedback(sol))
    init = InitialLaw.point(1.0)

    batch = 4096
    impls = available_backends()
    print(f"paths={args.paths} steps={args.steps} marks={args.marks} "
          f"batch={batch} default_backend={backend_mod.BACKEND_NAME}")

    results = {}
    draw_time = None
    for name, impl in impls.items():
        backend_mod.simulate_batch = impl.simulate_batch
        costs = []
        kernel_time = 0.0
        noise_time = 0.0
        remaining, b = args.paths, 0
        while remaining > 0:
            nb = min(batch, remaining)
            t0 = time.perf_counter()
            draws = _BatchDraws(_batch_rng(args.seed, b), init, args.steps, nb, jumps.nu, grid.dt)
            noise_time += time.perf_counter() - t0
            if b == 0:
                _run_batch(coeffs, grid, draws, spec)  # warm-up
            t0 = time.perf_counter()
            costs.append(np.asarray(_run_batch(coeffs, grid, draws, spec)[0]))
            kernel_time += time.perf_counter() - t0
            remaining -= nb
            b += 1
        results[name] = np.concatenate(costs)
        draw_time = noise_time
        rate = args.paths * args.steps / kernel_time
        print(f"  {name:<8} kernel {kernel_time:8.3f} s   {rate:12.3e} path-steps/s   "
              f"mean={results[name].mean():.12g}")
    print(f"  noise generation (identical for every backend): {draw_time:.3f} s")
    backend_mod.simulate_batch = impls[backend_mod.BACKEND_NAME].simulate_batch

    if len(results) == 2:
        a, b_ = results["numpy"], results["cython"]
        print(f"  max |numpy - cython| over per-path costs: {np.max(np.abs(a - b_)):.3e}")


if __name__ == "__main__":
    main()
