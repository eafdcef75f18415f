"""Command line front end: scenario runs, baselines, oracles, data export.

Every run emits machine-readable artifacts only (CSV trajectories plus JSON
summaries); plotting is left to external tools. Exit codes: 0 solved,
1 input error, 2 no convergence / infeasible.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from jamopt import analysis, riccati, shooting
from jamopt.analysis import OracleInfeasibleError
from jamopt.model import (
    ConfigParseError,
    LqProblem,
    ReachProblem,
    ValidationError,
    load_problem,
    problem_hash,
)

__all__ = ["cmd_reach", "cmd_lq", "cmd_oracle", "cmd_riccati", "main", "entrypoint"]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _resolve_config(path_arg: str) -> Path:
    """Accept a filesystem path or the bare name of a shipped scenario."""
    path = Path(path_arg)
    if path.exists():
        return path
    from jamopt.scenarios import scenario_path

    name = path_arg[:-5] if path_arg.endswith(".json") else path_arg
    try:
        candidate = scenario_path(name)
    except KeyError:
        raise FileNotFoundError(f"config not found: {path_arg}")
    return candidate


def _load(path_arg: str):
    path = _resolve_config(path_arg)
    return load_problem(path.read_text())


def write_trajectory_csv(path: Path, extremal) -> int:
    """Trajectory table t,z1..zd,p1..pd,u1_1..u1_m,u2,H with 17 digits."""
    d = extremal.d
    m = extremal.u1.shape[1]
    header = (
        ["t"]
        + [f"z{i + 1}" for i in range(d)]
        + [f"p{i + 1}" for i in range(d)]
        + [f"u1_{j + 1}" for j in range(m)]
        + ["u2", "H"]
    )
    times = extremal.trajectory.times
    rows = []
    for i in range(times.shape[0]):
        vals = (
            [times[i]]
            + list(extremal.z[i])
            + list(extremal.p[i])
            + list(extremal.u1[i])
            + [float(extremal.u2[i]), extremal.hamiltonian[i]]
        )
        rows.append(",".join(_fmt(v) for v in vals))
    path.write_text(",".join(header) + "\n" + "\n".join(rows) + "\n")
    return len(rows)


def _certificate_payload(cert) -> dict:
    return {
        "hamiltonian_piecewise_drift": cert.hamiltonian_piecewise_drift,
        "hamiltonian_jumps_at_switches": list(cert.hamiltonian_jumps_at_switches),
        "boundary_residual": cert.boundary_residual,
        "nontriviality_min": cert.nontriviality_min,
        "conditions_met": cert.conditions_met,
    }


def _result_payload(result, cert, wall: float) -> dict:
    cost = result.extremal.cost
    return {
        "converged": result.converged,
        "residual": result.residual_norm,
        "eta": result.eta_used,
        "cost": {
            "l0": cost.l0_measure,
            "running": cost.running_quadratic,
            "terminal": cost.terminal_quadratic,
            "total": cost.gamma_weighted_total,
        },
        "switch_times": [float(s) for s in result.extremal.trajectory.switch_times],
        "certificate": _certificate_payload(cert),
        "wall_time_s": wall,
    }


def _record_path(out_dir: Path, phash: str) -> Path:
    return out_dir / f"run_{phash}.json"


def _write_run_record(out_dir, name, problem, result, cert, wall, cfg) -> str:
    phash = problem_hash(problem)
    payload = {
        "scenario_name": name,
        "problem_hash": phash,
        "result": {
            "converged": result.converged,
            "residual": result.residual_norm,
            "eta": result.eta_used,
            "iterations": result.iterations,
            "starts_tried": result.starts_tried,
            "p0": [float(v) for v in result.extremal.p[0]],
            "switch_times": [float(s) for s in result.extremal.trajectory.switch_times],
            "segments": cfg.segments,
            "threshold_factor": cfg.threshold_factor,
            "seed": cfg.seed,
        },
        "cost": {
            "l0": result.extremal.cost.l0_measure,
            "running": result.extremal.cost.running_quadratic,
            "terminal": result.extremal.cost.terminal_quadratic,
            "total": result.extremal.cost.gamma_weighted_total,
        },
        "certificate": _certificate_payload(cert),
        "wall_time_s": wall,
    }
    _record_path(Path(out_dir), phash).write_text(json.dumps(payload, indent=2))
    return phash


def _solve_and_export(problem, name, out_dir: Path, cfg) -> int:
    started = time.perf_counter()
    result = shooting.solve_bvp(problem, cfg)
    cert = analysis.certify(
        result.extremal, problem, residual_tolerance=cfg.residual_tolerance
    )
    wall = time.perf_counter() - started

    out_dir.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(out_dir / f"{name}_trajectory.csv", result.extremal)
    payload = _result_payload(result, cert, wall)
    (out_dir / f"{name}_result.json").write_text(json.dumps(payload, indent=2))
    _write_run_record(out_dir, name, problem, result, cert, wall, cfg)
    print(json.dumps(payload))
    if not result.converged:
        print(
            f"no convergence: best residual {result.residual_norm:.3e} "
            f"after {result.starts_tried} starts",
            file=sys.stderr,
        )
        return 2
    return 0


def _config_from_args(args) -> shooting.ShootingConfig:
    return shooting.ShootingConfig(
        segments=args.segments,
        seed=args.seed,
        threshold_factor=float(args.threshold_factor),
    )


def cmd_reach(args) -> int:
    problem = _load(args.config)
    if not isinstance(problem, ReachProblem):
        raise ValidationError("config is not a reach problem")
    name = Path(_resolve_config(args.config)).stem
    return _solve_and_export(problem, name, Path(args.out), _config_from_args(args))


def cmd_lq(args) -> int:
    problem = _load(args.config)
    if not isinstance(problem, LqProblem):
        raise ValidationError("config is not an LQ problem")
    name = Path(_resolve_config(args.config)).stem
    out_dir = Path(args.out)
    code = _solve_and_export(problem, name, out_dir, _config_from_args(args))
    if args.baseline:
        sol = riccati.classical_lqr(problem)
        times, Z, U = riccati.lqr_feedback_rollout(sol, problem)
        _write_baseline_csv(out_dir / f"{name}_baseline_trajectory.csv", problem, times, Z, U, sol)
    return code


def _write_baseline_csv(path, problem, times, Z, U, sol) -> None:
    # Baseline columns mirror the solver CSV; p = -P z, jammer always on.
    from jamopt.extremal import hamiltonian

    d = problem.system.d
    m = problem.system.m
    header = (
        ["t"]
        + [f"z{i + 1}" for i in range(d)]
        + [f"p{i + 1}" for i in range(d)]
        + [f"u1_{j + 1}" for j in range(m)]
        + ["u2", "H"]
    )
    rows = []
    for i in range(times.shape[0]):
        p = -(sol.P[i] @ Z[i])
        H = hamiltonian("lq", Z[i], p, U[i], 1, problem, eta=1)
        vals = [times[i]] + list(Z[i]) + list(p) + list(U[i]) + [1.0, H]
        rows.append(",".join(_fmt(v) for v in vals))
    path.write_text(",".join(header) + "\n" + "\n".join(rows) + "\n")


def cmd_oracle(args) -> int:
    problem = _load(args.config)
    name = Path(_resolve_config(args.config)).stem
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    if isinstance(problem, LqProblem):
        result = analysis.oracle_lq(problem, args.N)
    else:
        result = analysis.oracle_reach(problem, args.N)
    wall = time.perf_counter() - started

    phash = problem_hash(problem)
    gap = None
    record_file = _record_path(out_dir, phash)
    if record_file.exists():
        record = json.loads(record_file.read_text())
        gap = result.best_cost - record["cost"]["total"]
    payload = {
        "best_pattern": result.pattern_string,
        "best_cost": result.best_cost,
        "pattern_costs_evaluated": result.pattern_costs_evaluated,
        "discretization_N": result.discretization_N,
        "problem_hash": phash,
        "gap_vs_extremal": gap,
        "wall_time_s": wall,
    }
    (out_dir / f"{name}_oracle.json").write_text(json.dumps(payload, indent=2))
    print(json.dumps(payload))
    return 0


def cmd_riccati(args) -> int:
    problem = _load(args.config)
    if not isinstance(problem, LqProblem):
        raise ValidationError("config is not an LQ problem")
    name = Path(_resolve_config(args.config)).stem
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.from_run:
        record_file = _record_path(out_dir, problem_hash(problem))
        if not record_file.exists():
            raise FileNotFoundError(f"no run record for this problem in {out_dir}")
        record = json.loads(record_file.read_text())
        extremal = shooting.rollout_extremal(
            problem,
            np.asarray(record["result"]["p0"], dtype=float),
            eta=record["result"]["eta"],
            threshold_factor=record["result"].get("threshold_factor", 1.0),
        )
    else:
        result = shooting.solve_bvp(problem, _config_from_args(args))
        if not result.converged:
            print(
                f"no convergence: best residual {result.residual_norm:.3e}",
                file=sys.stderr,
            )
            return 2
        extremal = result.extremal

    sol = riccati.hybrid_riccati_from_extremal(extremal, problem)
    # p + P z defect, scaled by the local adjoint size.
    defect = extremal.p + np.einsum("nij,nj->ni", sol.P, extremal.z)
    norms = np.linalg.norm(defect, axis=1)
    scale = 1.0 + np.linalg.norm(extremal.p, axis=1)
    consistency_max = float(np.max(norms / scale))

    d = problem.system.d
    header = ["t"] + [f"P{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    rows = []
    for i in range(sol.times.shape[0]):
        vals = [sol.times[i]] + list(sol.P[i].reshape(-1))
        rows.append(",".join(_fmt(v) for v in vals))
    (out_dir / f"{name}_riccati.csv").write_text(
        ",".join(header) + "\n" + "\n".join(rows) + "\n"
    )
    payload = {
        "consistency_max": consistency_max,
        "active_set": [list(iv) for iv in sol.active_set],
    }
    (out_dir / f"{name}_riccati.json").write_text(json.dumps(payload, indent=2))
    print(json.dumps(payload))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jamopt",
        description="Extremal solvers for linear control under an on/off jammer",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in (
        ("reach", cmd_reach),
        ("lq", cmd_lq),
        ("oracle", cmd_oracle),
        ("riccati", cmd_riccati),
    ):
        sp = sub.add_parser(name)
        sp.add_argument("config", help="problem config JSON (or shipped scenario name)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--segments", type=int, default=1)
        sp.add_argument("--out", default=".")
        sp.add_argument("--threshold-factor", type=int, choices=(1, 2), default=1)
        sp.set_defaults(func=func)
        if name == "lq":
            sp.add_argument("--baseline", action="store_true")
        if name == "oracle":
            sp.add_argument("--N", type=int, default=8)
        if name == "riccati":
            sp.add_argument("--from-run", action="store_true", dest="from_run")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OracleInfeasibleError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (ValidationError, ConfigParseError, FileNotFoundError, ValueError) as exc:
        print(str(exc), file=sys.stderr)
        return 1


def entrypoint() -> None:
    raise SystemExit(main())
