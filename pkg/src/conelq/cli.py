"""Command-line entry point: solve, verify, sweep, hamiltonian eval.

All artifacts are files under --out; the console shows a short summary.
Artifacts embed the configuration hash and tool version, contain no
timestamps, and use sorted JSON keys and 17-significant-digit floats, so a
given (config, seed) pair reproduces byte-identical outputs.

Exit codes: 0 success (verify: all enabled checks passed), 1 configuration
or check failure, 2 solver failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import Problem, config_hash, load_problem, parse_problem
from .errors import BlowUpError, ConfigError, ConvergenceError, CurvatureError, NumericsError
from .hamiltonian import build_terms_from_step, grid_oracle_saddle, saddle
from .lattice import build_lattice, lattice_to_csv, lattice_to_json, solve_bsde_on_lattice
from .model import validate_coefficients
from .riccati import monotone_ladder, solve_ode, solution_to_csv, solution_to_json
from .simulate import (
    default_perturbation_corpus,
    directional_stationarity,
    extract_feedback,
    simulate_paths,
    verify_completion_identity,
    verify_convexity_identity,
    verify_saddle,
    verify_value_formula,
    _piecewise_schedule,
)

SOLVER_ERRORS = (CurvatureError, ConvergenceError, BlowUpError, NumericsError)


def worker_count() -> int:
    env = os.environ.get("CONELQ_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _sanitize(obj):
    """Make a report JSON-safe: non-finite floats become strings."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else ("inf" if f > 0 else ("-inf" if f < 0 else "nan"))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_json(path: Path, doc: dict, provenance: dict):
    doc = dict(doc)
    doc["provenance"] = provenance
    path.write_text(json.dumps(_sanitize(doc), sort_keys=True, indent=1) + "\n")


def _write_csv(path: Path, text: str, provenance: dict):
    header = f"# conelq {provenance['tool_version']} config={provenance['config_hash']}\n"
    path.write_text(header + text)


def _provenance(problem: Problem, seed: int) -> dict:
    return {"config_hash": config_hash(problem.raw), "tool_version": __version__, "seed": int(seed)}


def _grid_override(args) -> int | None:
    if getattr(args, "dt", None) is not None and getattr(args, "n_steps", None) is not None:
        raise ConfigError("give either --dt or --n-steps, not both")
    if getattr(args, "n_steps", None) is not None:
        return int(args.n_steps)
    return None


def _load(args) -> Problem:
    override = _grid_override(args)
    if getattr(args, "dt", None) is not None:
        cfg = json.loads(Path(args.config).read_text()) if Path(args.config).exists() else None
        if cfg is None:
            raise ConfigError(f"problem file not found: {args.config}")
        T = float(cfg.get("grid", {}).get("T", 0.0))
        if T <= 0:
            raise ConfigError("grid.T must be positive to apply --dt")
        override = max(1, round(T / float(args.dt)))
    return load_problem(args.config, n_steps_override=override)


def _summary_table(rows: list[tuple[str, object]]):
    width = max((len(k) for k, _ in rows), default=0)
    for k, v in rows:
        print(f"  {k:<{width}}  {v}")


def cmd_solve(args) -> int:
    problem = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(problem, args.seed)
    report = validate_coefficients(problem.coeffs, problem.grid, problem.jumps, problem.delta_lower)
    _write_json(out / "assumptions.json", report.to_dict(), prov)

    fmt = args.format
    if args.mode == "lattice":
        lat = build_lattice(problem.grid, problem.jumps, args.max_jumps)
        sol = solve_bsde_on_lattice(problem.coeffs, lat, problem.cones)
        if fmt in ("json", "both"):
            (out / "lattice.json").write_text(lattice_to_json(sol, extra={"provenance": prov}))
        if fmt in ("csv", "both"):
            _write_csv(out / "lattice.csv", lattice_to_csv(sol), prov)
        root = sol.root()
        print(f"lattice solve: {problem.grid.n_steps} steps, {problem.jumps.n_marks} marks")
        _summary_table([("P1(0)", root["P1"]), ("P2(0)", root["P2"]), ("out", str(out))])
        return 0
    if args.mode == "ladder":
        levels = [(float(v), float(v)) for v in args.levels] if args.levels_paired else None
        if levels is None:
            vals = [float(v) for v in args.levels]
            levels = [(a, b) for a in vals for b in vals]
        sol, ladder = monotone_ladder(
            problem.coeffs, problem.grid, problem.jumps, problem.cones, levels, delta_lower=problem.delta_lower
        )
        _write_json(
            out / "ladder_report.json",
            {
                "levels": [list(l) for l in ladder.levels],
                "monotone": ladder.monotone,
                "tol": ladder.tol,
                "comparisons": [
                    {
                        "from": list(c.level_a),
                        "to": list(c.level_b),
                        "axis": c.axis,
                        "max_signed_diff": c.max_signed_diff,
                        "min_signed_diff": c.min_signed_diff,
                        "ok": c.ok,
                    }
                    for c in ladder.comparisons
                ],
            },
            prov,
        )
    else:
        sol = solve_ode(
            problem.coeffs, problem.grid, problem.jumps, problem.cones,
            delta_lower=problem.delta_lower, report=report,
        )
    if fmt in ("json", "both"):
        (out / "solution.json").write_text(solution_to_json(sol, extra={"provenance": prov}))
    if fmt in ("csv", "both"):
        _write_csv(out / "solution.csv", solution_to_csv(sol), prov)
    print(f"{args.mode} solve: {problem.grid.n_steps} steps, cbar={report.cbar:.6g}, K={report.K:.6g}")
    _summary_table(
        [
            ("P1(0)", sol.P1[0]),
            ("P2(0)", sol.P2[0]),
            ("assumptions_ok", report.assumptions_ok),
            ("out", str(out)),
        ]
    )
    return 0


_ALL_SUITES = ("value", "saddle", "psi", "convexity", "stationarity")


def _run_suites(problem: Problem, args, suites: list[str]) -> dict:
    report = validate_coefficients(problem.coeffs, problem.grid, problem.jumps, problem.delta_lower)
    if getattr(args, "solution", None):
        from .riccati import solution_from_json

        spath = Path(args.solution)
        if not spath.exists():
            raise ConfigError(f"solution artifact not found: {spath}")
        sol = solution_from_json(spath.read_text())
        if sol.grid.n_steps != problem.grid.n_steps or sol.grid.T != problem.grid.T:
            raise ConfigError(
                f"solution artifact grid ({sol.grid.T}, {sol.grid.n_steps}) does not match "
                f"the problem grid ({problem.grid.T}, {problem.grid.n_steps})"
            )
    else:
        sol = solve_ode(
            problem.coeffs, problem.grid, problem.jumps, problem.cones,
            delta_lower=problem.delta_lower, report=report,
        )
    law = extract_feedback(sol)
    if args.corrupt_feedback is not None:
        law = law.scaled(factor_plus=float(args.corrupt_feedback))
    checks = []
    n_paths = args.n_paths
    seed = args.seed
    co, grid, jumps, init = problem.coeffs, problem.grid, problem.jumps, problem.init
    if "value" in suites:
        checks.append(verify_value_formula(sol, law, co, grid, jumps, init, n_paths, seed))
    if "saddle" in suites:
        arms = default_perturbation_corpus(problem.cones[0], problem.cones[1], grid, seed)
        checks.append(
            verify_saddle(sol, law, co, grid, jumps, arms, init, max(n_paths // 5, 1), seed, cones=problem.cones)
        )
    if "psi" in suites:
        stride = max(1, grid.n_steps // 128)
        checks.append(verify_completion_identity(sol, law, co, problem.cones, node_stride=stride))
    if "convexity" in suites:
        rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0xF00D], dtype=np.uint64)))
        residual_max = 0.0
        ratios = []
        ok = True
        trials = []
        n_small = max(200, n_paths // 50)
        for t in range(20):
            u1 = _piecewise_schedule(problem.cones[0], rng, grid.n_steps, 0.5)
            u1p = _piecewise_schedule(problem.cones[0], rng, grid.n_steps, 0.5)
            u2 = _piecewise_schedule(problem.cones[1], rng, grid.n_steps, 0.3)
            lam = float(rng.uniform(0.2, 0.8))
            rep = verify_convexity_identity(
                co, grid, jumps, u1, u1p, u2, lam, init, n_small, seed + t, check_ucc=report.assumptions_ok
            )
            ok &= rep["pass"]
            residual_max = max(residual_max, abs(rep["residual_mean"]))
            if "ucc_ratio" in rep:
                ratios.append(rep["ucc_ratio"])
            trials.append({"lam": lam, "residual_mean": rep["residual_mean"], "pass": rep["pass"]})
        check = {
            "check": "convexity_identity",
            "trials": trials,
            "max_abs_residual": residual_max,
            "pass": bool(ok),
        }
        if ratios:
            check["ucc_ratio_min"] = min(ratios)
            check["pass"] = bool(ok and min(ratios) > 0)
        checks.append(check)
    if "stationarity" in suites:
        n = grid.n_steps
        from .simulate import _cone_direction

        d1 = np.tile(0.4 * _cone_direction(problem.cones[0], 0), (n, 1))
        d2 = np.tile(0.3 * _cone_direction(problem.cones[1], 0), (n, 1))
        checks.append(
            directional_stationarity(law, (d1, d2), 0.05, co, grid, jumps, init, max(n_paths // 10, 1), seed)
        )
    all_pass = all(c["pass"] for c in checks)
    return {
        "checks": checks,
        "all_pass": bool(all_pass),
        "suites": list(suites),
        "n_paths": n_paths,
        "corrupted_feedback": args.corrupt_feedback,
        "P1_0": float(sol.P1[0]),
        "P2_0": float(sol.P2[0]),
    }


def cmd_verify(args) -> int:
    problem = _load(args)
    suites = [s.strip() for s in args.suites.split(",") if s.strip()]
    unknown = [s for s in suites if s not in _ALL_SUITES]
    if unknown:
        raise ConfigError(f"unknown suites: {unknown}; available: {list(_ALL_SUITES)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(problem, args.seed)
    report = _run_suites(problem, args, suites)
    _write_json(out / "verification_report.json", report, prov)
    if args.dump_paths:
        sol = solve_ode(problem.coeffs, problem.grid, problem.jumps, problem.cones, delta_lower=problem.delta_lower)
        law = extract_feedback(sol)
        res = simulate_paths(
            problem.coeffs, problem.grid, problem.jumps, law, problem.init, min(args.n_paths, 64), args.seed,
            keep_paths=min(args.n_paths, 64),
        )
        lines = ["path,step,t,X" + "".join(f",u1_{l}" for l in range(problem.coeffs.m1))
                 + "".join(f",u2_{l}" for l in range(problem.coeffs.m2))]
        times = problem.grid.times()
        for p in range(res.X_kept.shape[0]):
            for i in range(problem.grid.n_steps):
                row = [str(p), str(i), "%.17g" % times[i], "%.17g" % res.X_kept[p, i]]
                row += ["%.17g" % v for v in res.U1_kept[p, i]]
                row += ["%.17g" % v for v in res.U2_kept[p, i]]
                lines.append(",".join(row))
        _write_csv(out / "paths.csv", "\n".join(lines) + "\n", prov)
    print(f"verification: {len(report['checks'])} checks, all_pass={report['all_pass']}")
    _summary_table([(c["check"], "pass" if c["pass"] else "FAIL") for c in report["checks"]])
    return 0 if report["all_pass"] else 1


def _sweep_one(problem_raw: dict, param: str, value: float, args):
    if param == "dt":
        T = float(problem_raw["grid"]["T"])
        problem = parse_problem(problem_raw, n_steps_override=max(1, round(T / value)))
    elif param == "n_steps":
        problem = parse_problem(problem_raw, n_steps_override=int(value))
    elif param.startswith("coefficients."):
        key = param.split(".", 1)[1]
        raw = json.loads(json.dumps(problem_raw))
        if key not in raw.get("coefficients", {}) or not isinstance(raw["coefficients"][key], (int, float)):
            raise ConfigError(f"sweep parameter {param!r} must name a scalar coefficient entry")
        raw["coefficients"][key] = value
        problem = parse_problem(raw)
    elif param == "ladder_n":
        problem = parse_problem(problem_raw)
    else:
        raise ConfigError(f"unknown sweep parameter {param!r}")

    if param == "ladder_n":
        from .riccati import solve_truncated

        sol = solve_truncated(value, args.ladder_nbar, problem.coeffs, problem.grid, problem.jumps, problem.cones,
                              delta_lower=problem.delta_lower)
    else:
        sol = solve_ode(problem.coeffs, problem.grid, problem.jumps, problem.cones, delta_lower=problem.delta_lower)
    metrics = {"P1_0": float(sol.P1[0]), "P2_0": float(sol.P2[0])}
    if args.verify:
        law = extract_feedback(sol)
        rep = verify_value_formula(
            sol, law, problem.coeffs, problem.grid, problem.jumps, problem.init, args.n_paths, args.seed
        )
        metrics["value_z"] = rep["z"]
    return metrics


def cmd_sweep(args) -> int:
    problem = _load(args)
    values = [v for v in (s.strip() for s in args.values.split(",")) if v]
    if not values:
        raise ConfigError("sweep needs a non-empty --values list")
    vals = [float(v) for v in values]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(problem, args.seed)

    runner = lambda v: _sweep_one(problem.raw, args.param, v, args)
    if args.parallel:
        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            results = list(pool.map(runner, vals))
    else:
        results = [runner(v) for v in vals]

    if args.param in ("dt", "n_steps"):
        finest = min(range(len(vals)), key=lambda i: vals[i]) if args.param == "dt" else max(
            range(len(vals)), key=lambda i: vals[i]
        )
        for i, m in enumerate(results):
            m["P1_0_gap_to_finest"] = abs(m["P1_0"] - results[finest]["P1_0"])

    lines = ["parameter,value,metric,result"]
    for v, metrics in zip(vals, results):
        for name in sorted(metrics):
            lines.append(f"{args.param},{'%.17g' % v},{name},{'%.17g' % metrics[name]}")
    _write_csv(out / "sweep.csv", "\n".join(lines) + "\n", prov)
    print(f"sweep over {args.param}: {len(vals)} values")
    _summary_table([("%.6g" % v, "P1_0=%.9g" % m["P1_0"]) for v, m in zip(vals, results)])
    return 0


def cmd_hamiltonian_eval(args) -> int:
    path = Path(args.snapshot)
    if not path.exists():
        raise ConfigError(f"snapshot file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"snapshot is not valid JSON: {exc}") from exc
    problem = parse_problem(doc.get("problem", doc.get("config")))
    t_idx = int(doc.get("t_idx", 0))
    k = int(doc.get("k", 1))
    J = problem.jumps.n_marks
    terms = build_terms_from_step(
        problem.coeffs.at(t_idx),
        float(doc.get("P1", 0.0)),
        float(doc.get("P2", 0.0)),
        float(doc.get("L1", 0.0)),
        float(doc.get("L2", 0.0)),
        np.asarray(doc.get("G1", [0.0] * J), dtype=float),
        np.asarray(doc.get("G2", [0.0] * J), dtype=float),
        t_idx=t_idx,
    )
    trunc = doc.get("trunc")
    if doc.get("oracle"):
        res = grid_oracle_saddle(
            k, terms, problem.cones[0], problem.cones[1],
            radius=float(doc.get("radius", 5.0)), step=float(doc.get("step", 1e-3)),
        )
    else:
        res = saddle(k, terms, problem.cones[0], problem.cones[1], trunc=None if trunc is None else tuple(trunc))
    out = {
        "k": k,
        "t_idx": t_idx,
        "v1": list(res.v1),
        "v2": list(res.v2),
        "value": res.value,
        "iterations": res.iterations,
        "residual": res.residual,
        "method": res.method,
    }
    if res.value_minmax is not None:
        out["value_minmax"] = res.value_minmax
    print(json.dumps(_sanitize(out), sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conelq", description=__doc__)
    parser.add_argument("--version", action="version", version=f"conelq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, paths=False):
        p.add_argument("--config", required=True, help="problem file (JSON)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=0, help="64-bit master seed")
        p.add_argument("--format", choices=("json", "csv", "both"), default="both")
        p.add_argument("--n-steps", type=int, default=None, help="override grid.n_steps")
        p.add_argument("--dt", type=float, default=None, help="override the time step")

    ps = sub.add_parser("solve", help="solve the backward system and write artifacts")
    common(ps)
    ps.add_argument("--mode", choices=("ode", "lattice", "ladder"), default="ode")
    ps.add_argument("--levels", type=lambda s: [x for x in s.split(",") if x], default=["1", "2", "4", "8"])
    ps.add_argument("--levels-paired", action="store_true",
                    help="treat --levels entries as paired (n, nbar) radii instead of a product grid")
    ps.add_argument("--max-jumps", type=int, default=3, help="lattice jump-count cap per mark")
    ps.set_defaults(fn=cmd_solve)

    pv = sub.add_parser("verify", help="solve, simulate, and run the verification suites")
    common(pv)
    pv.add_argument("--suites", default=",".join(_ALL_SUITES))
    pv.add_argument("--solution", default=None,
                    help="reuse a prior solution.json artifact instead of solving again")
    pv.add_argument("--n-paths", type=int, default=20000)
    pv.add_argument("--corrupt-feedback", type=float, default=None,
                    help="falsification control: scale the positive-part feedback pair")
    pv.add_argument("--dump-paths", action="store_true", help="also write per-path CSV (kept paths)")
    pv.set_defaults(fn=cmd_verify)

    pw = sub.add_parser("sweep", help="re-solve over a list of parameter values")
    common(pw)
    pw.add_argument("--param", required=True, help="dt | n_steps | ladder_n | coefficients.<name>")
    pw.add_argument("--values", required=True, help="comma-separated values")
    pw.add_argument("--verify", action="store_true", help="also run the value-formula check per value")
    pw.add_argument("--n-paths", type=int, default=20000)
    pw.add_argument("--parallel", action="store_true", help="run values in parallel (CONELQ_THREADS workers)")
    pw.add_argument("--ladder-nbar", type=float, default=8.0)
    pw.set_defaults(fn=cmd_sweep)

    ph = sub.add_parser("hamiltonian", help="hamiltonian utilities")
    hsub = ph.add_subparsers(dest="subcommand", required=True)
    pe = hsub.add_parser("eval", help="evaluate one saddle snapshot, print a JSON result")
    pe.add_argument("--snapshot", required=True, help="snapshot file (JSON)")
    pe.set_defaults(fn=cmd_hamiltonian_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except SOLVER_ERRORS as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
