# The subcommands behind main.py. Each takes the parsed arguments and returns
# an exit code; errors propagate to main, which maps them to exit codes.

import logging
import pathlib

import numpy as np

from grid.faultModel import FaultScenario, NominalLaw, scenario_to_record
from grid.gridModel import count_islands, line_flows, load_grid_file, steady_state
from reporting import bench, emitters
from risk.indicators import evaluate_overload, in_safety_polytope
from risk.riskEngine import (
    assess_risk, assess_risk_by_duration, assess_risk_mc, convergence_study, smallest_converged, study_frame,
)
from risk.scorers import OverloadScorer
from risk.screening import duration_sweep, screen_contingencies
from solvers.dynamics import ContingencySolver, reference_integrate
from utils.config import RiskConfig, load_config
from utils.nameToType import nameToFaultKind, nameToMethod

logger = logging.getLogger(__name__)


def build_config(args) -> RiskConfig:
    config = load_config(args.config) if getattr(args, "config", None) else RiskConfig()
    kind = getattr(args, "kind", None)
    method = getattr(args, "solver", None)
    return config.replace(
        seed=args.seed,
        T=args.T,
        dt=args.dt,
        gamma=getattr(args, "gamma", None),
        n_final=getattr(args, "n", None),
        n_per_iter=getattr(args, "n_per_iter", None),
        lambda_nominal=getattr(args, "rate", None),
        fault_kind=nameToFaultKind(kind) if kind else None,
        method=nameToMethod(method) if method else None,
        m=getattr(args, "m", None),
        workers=getattr(args, "workers", None),
        per_line=True if getattr(args, "per_line", False) else None,
    )


def _load_grid(args):
    grid = load_grid_file(args.grid)
    logger.info(f"loaded {args.grid}: {grid.n_buses} buses, {grid.n_lines} lines")
    return grid


def _out_dir(args) -> pathlib.Path:
    out_dir = pathlib.Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def cmd_validate(args) -> int:
    grid = _load_grid(args)
    theta = steady_state(grid)
    loading = np.abs(line_flows(grid, theta)) / grid.limits

    print(f"grid {args.grid}: {grid.n_buses} buses, {grid.n_lines} lines, reference bus {grid.reference_bus}")
    print(f"islands: {count_islands(grid)}, monitored lines: {int(grid.monitored.sum())}")
    print(f"steady state inside safety polytope: {in_safety_polytope(theta, grid)}")
    for line in np.argsort(-loading, kind="stable"):
        print(f"  line {line} ({grid.line_label(line)}): flow {loading[line]:.1%} of limit")
    return 0


def cmd_simulate(args) -> int:
    grid = _load_grid(args)
    config = build_config(args)
    scenario = FaultScenario(args.line, config.fault_kind, args.tau, args.onset)

    if args.reference:
        trajectory = reference_integrate(grid, scenario, config.T, config.dt)
    else:
        solver = ContingencySolver(grid, config.T, config.dt, config.method, config.m, cache=False)
        trajectory = solver.solve(scenario)
    result = evaluate_overload(trajectory, grid)

    out_dir = _out_dir(args)
    header = emitters.run_header(config.seed, config)
    emitters.write_trajectory_csv(out_dir / "trajectory.csv", trajectory, grid, header)
    if args.npz:
        emitters.save_trajectory_npz(out_dir / "trajectory.npz", trajectory)
    meta = dict(header, scenario=scenario_to_record(scenario), method=trajectory.label)
    emitters.write_table(out_dir / "overload.csv", emitters.overload_frame(result, grid), meta, args.format)

    print(emitters.format_overload_summary(result, grid, scenario))
    return 0


def cmd_screen(args) -> int:
    grid = _load_grid(args)
    config = build_config(args)
    solver = ContingencySolver(grid, config.T, config.dt, config.method, config.m)
    out_dir = _out_dir(args)
    header = emitters.run_header(config.seed, config, kind=config.fault_kind.value)

    if args.taus:
        table = duration_sweep(solver, config.fault_kind, args.taus, config.workers)
        emitters.write_table(out_dir / "duration_sweep.csv", table, header, args.format)
        print(f"duration sweep: {len(args.taus)} durations x {grid.n_lines} faults")
        return 0

    result = screen_contingencies(solver, config.fault_kind, args.tau, config.workers)
    meta = dict(header, tau=args.tau)
    emitters.write_table(out_dir / "screen_matrix.csv", result.to_frame(grid), meta, args.format)
    critical = result.critical_frame(grid)
    emitters.write_table(out_dir / "critical_lines.csv", critical, meta, args.format)

    print(f"N-1 screen, {config.fault_kind.value} faults, tau={args.tau}s")
    for row in critical[critical["worst_S"] > 0].itertuples(index=False):
        print(f"  line {row.line} ({row.label}): up to {row.worst_S:.4g} s overloaded")
    return 0


def cmd_estimate(args) -> int:
    grid = _load_grid(args)
    config = build_config(args)
    out_dir = _out_dir(args)

    if args.method == "compare":
        solver = ContingencySolver(grid, config.T, config.dt, config.method, config.m)
        scorer = OverloadScorer(solver, None, config.workers)
        nominal = NominalLaw.uniform(grid.n_lines, config.lambda_nominal)
        rows = convergence_study(scorer, nominal, config.gamma, args.sizes, config, args.tolerance)
        emitters.write_table(out_dir / "convergence.csv", study_frame(rows),
                             emitters.run_header(config.seed, config), args.format)
        for method in ("ce", "mc"):
            row = smallest_converged(rows, method)
            reached = f"{row.total_samples} samples" if row is not None else "not reached"
            print(f"{method}: half-width within {args.tolerance:.0%} of Q at {reached}")
        return 0

    if args.by_duration:
        table = assess_risk_by_duration(grid, config, args.bins)
        header = emitters.run_header(config.seed, config, gamma=config.gamma, kind=config.fault_kind.value)
        emitters.write_table(out_dir / "risk_by_duration.csv", table, header, args.format)
        print(emitters.format_duration_risk(table))
        return 0

    report = assess_risk_mc(grid, config) if args.method == "mc" else assess_risk(grid, config)
    emitters.write_risk_report(out_dir, report, grid, args.format)
    print(emitters.format_risk_table(report))
    if report.escalations:
        print(f"{report.escalations} perturbative solves escalated to exact")
    return 0


def cmd_bench(args) -> int:
    grid = _load_grid(args)
    config = build_config(args)
    out_dir = _out_dir(args)
    header = emitters.run_header(config.seed, config)

    records = bench.run_bench(grid, args.ms, args.taus, config.T, config.dt,
                              args.warmups, args.repeats, not args.no_reference)
    emitters.write_table(out_dir / "bench.csv", bench.bench_frame(records), header, args.format)
    errors = bench.error_sweep(grid, args.ms, args.taus, config.T, config.dt)
    emitters.write_table(out_dir / "error_vs_m.csv", errors, header, args.format)

    for record in records:
        print(f"{record.method:<20} {record.mean_time:.3e} s +- {record.std_time:.1e}  "
              f"sweep {record.ensemble_time:.3e} s  error {record.max_error:.2e}")
    fastest = bench.crossover(records)
    if fastest is None:
        print("no perturbative m beats the exact decomposition on this grid")
    else:
        print(f"perturbative beats exact up to m={fastest}")
    print("max relative error by m (rows) and tau (columns):")
    print(bench.error_grid(errors).to_string(float_format=lambda value: f"{value:.2e}"))
    return 0


commands = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "screen": cmd_screen,
    "estimate": cmd_estimate,
    "bench": cmd_bench,
}
