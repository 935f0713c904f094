# Writers (and readers, for round trips) of everything the command line emits.
#
# Tables are pandas DataFrames written as CSV after '#'-prefixed header lines,
# or as JSON lines whose first object carries the header under "meta". CSV
# floats read back exactly with the round-trip parser.

import json
import pathlib

import numpy as np
import pandas as pd

from grid.faultModel import FaultScenario, scenario_from_record, scenario_to_record
from grid.gridModel import Grid
from risk.indicators import OverloadResult
from solvers.dynamics import Trajectory
from utils.config import RiskConfig, config_hash

VERSION = "0.1.0"
FORMATS = ("csv", "json-lines")


def run_header(seed, config: RiskConfig = None, **extra) -> dict:
    header = {"version": VERSION, "seed": seed}
    if config is not None:
        header["config_hash"] = config_hash(config)
    header.update(extra)
    return header


def write_table(path, frame: pd.DataFrame, meta: dict, fmt: str = "csv") -> pathlib.Path:
    if fmt not in FORMATS:
        raise ValueError(f"unknown output format: {fmt}")
    path = pathlib.Path(path)
    if fmt == "json-lines":
        path = path.with_suffix(".jsonl")
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(json.dumps({"meta": meta}) + "\n")
            if len(frame):
                body = frame.to_json(orient="records", lines=True, double_precision=15)
                handle.write(body if body.endswith("\n") else body + "\n")
        return path

    with open(path, "w", encoding="utf-8", newline="") as handle:
        for key, value in meta.items():
            handle.write(f"# {key}: {json.dumps(value)}\n")
        frame.to_csv(handle, index=False, lineterminator="\n")
    return path


def read_table(path) -> tuple:
    """(meta, frame) of a CSV table written by write_table."""
    meta = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(": ")
            meta[key] = json.loads(value)
    frame = pd.read_csv(path, comment="#", float_precision="round_trip", keep_default_na=False)
    return meta, frame


def read_json_lines(path) -> tuple:
    with open(path, encoding="utf-8") as handle:
        records = [json.loads(line) for line in handle if line.strip()]
    return records[0]["meta"], records[1:]


def trajectory_columns(grid: Grid) -> list:
    ids = [bus.id for bus in grid.buses]
    return ["t"] + [f"dtheta_{bus}" for bus in ids] + [f"theta_{bus}" for bus in ids]


def trajectory_meta(trajectory: Trajectory, header: dict) -> dict:
    meta = dict(header)
    meta["scenario"] = scenario_to_record(trajectory.scenario)
    meta["method"] = trajectory.method
    meta["m"] = trajectory.steps
    meta["escalated"] = trajectory.escalated
    meta["dt"] = trajectory.step
    return meta


def trajectory_frame(trajectory: Trajectory, grid: Grid) -> pd.DataFrame:
    # wide layout: t, then every dtheta, then every theta
    table = np.column_stack([trajectory.times, trajectory.states])
    return pd.DataFrame(table, columns=trajectory_columns(grid))


def write_trajectory_csv(path, trajectory: Trajectory, grid: Grid, header: dict) -> pathlib.Path:
    return write_table(path, trajectory_frame(trajectory, grid), trajectory_meta(trajectory, header))


def read_trajectory_csv(path) -> Trajectory:
    meta, frame = read_table(path)
    table = frame.to_numpy(dtype=float)
    return Trajectory(
        times=table[:, 0],
        states=table[:, 1:],
        scenario=scenario_from_record(meta["scenario"]),
        method=meta.get("method", "exact"),
        steps=int(meta.get("m", 0)),
        escalated=bool(meta.get("escalated", False)),
        step=float(meta.get("dt", 0.01)),
    )


def save_trajectory_npz(path, trajectory: Trajectory) -> None:
    meta = {
        "scenario": scenario_to_record(trajectory.scenario),
        "method": trajectory.method,
        "m": trajectory.steps,
        "escalated": trajectory.escalated,
        "dt": trajectory.step,
    }
    np.savez(path, times=trajectory.times, states=trajectory.states, meta=json.dumps(meta))


def load_trajectory_npz(path) -> Trajectory:
    with np.load(path) as archive:
        meta = json.loads(str(archive["meta"]))
        return Trajectory(
            times=archive["times"],
            states=archive["states"],
            scenario=scenario_from_record(meta["scenario"]),
            method=meta["method"],
            steps=int(meta["m"]),
            escalated=bool(meta["escalated"]),
            step=float(meta["dt"]),
        )


def format_intervals(intervals: list) -> str:
    return ";".join(f"{start!r}:{end!r}" for start, end in intervals)


def parse_intervals(text: str) -> list:
    if not text:
        return []
    pairs = [item.split(":") for item in text.split(";")]
    return [(float(start), float(end)) for start, end in pairs]


OVERLOAD_COLUMNS = ["line", "label", "S", "intervals"]
RISK_COLUMNS = ["line", "label", "q_hat", "stderr", "zone"]


def overload_frame(result: OverloadResult, grid: Grid) -> pd.DataFrame:
    """Monitored lines, worst overload first."""
    rows = [(line, grid.line_label(line), float(result.per_line[line]), format_intervals(result.intervals[line]))
            for line in result.ranking() if grid.monitored[line]]
    return pd.DataFrame(rows, columns=OVERLOAD_COLUMNS)


def risk_frame(report) -> pd.DataFrame:
    rows = [(row.line, row.label, row.estimate.probability, row.estimate.stderr, row.zone.value)
            for row in report.ranked()]
    estimate = report.global_estimate
    rows.append(("global", "global", estimate.probability, estimate.stderr, ""))
    return pd.DataFrame(rows, columns=RISK_COLUMNS)


def write_risk_report(out_dir, report, grid: Grid, fmt: str = "csv") -> list:
    out_dir = pathlib.Path(out_dir)
    header = run_header(report.seed, report.config, gamma=report.config.gamma)
    table = write_table(out_dir / "risk_table.csv", risk_frame(report), header, fmt)

    document = {
        "header": header,
        "config": report.config.to_record(),
        "global": report.global_estimate.to_record(),
        "lines": [dict(row.estimate.to_record(), label=row.label, zone=row.zone.value) for row in report.lines],
        "escalations": report.escalations,
        "proposal": report.proposal.to_record(),
    }
    summary = out_dir / "risk_report.json"
    summary.write_text(json.dumps(document, indent=2), encoding="utf-8")

    # wall-clock times vary run to run and stay out of the report files
    timings = out_dir / "timings.json"
    timings.write_text(json.dumps(report.timings, indent=2), encoding="utf-8")
    return [table, summary, timings]


def format_risk_table(report) -> str:
    lines = [f"{'line':>6}  {'label':<12} {'Q':>10} {'stderr':>10}  zone"]
    for row in report.ranked():
        estimate = row.estimate
        lines.append(f"{row.line:>6}  {row.label:<12} {estimate.probability:>10.4g} "
                     f"{estimate.stderr:>10.2g}  {row.zone.value}")
    estimate = report.global_estimate
    lines.append(f"{'all':>6}  {'global':<12} {estimate.probability:>10.4g} {estimate.stderr:>10.2g}")
    return "\n".join(lines)


def format_overload_summary(result: OverloadResult, grid: Grid, scenario: FaultScenario) -> str:
    kind = scenario.kind.value if scenario.line is not None else "none"
    lines = [f"fault: line {scenario.line} ({kind}), tau={scenario.duration}s",
             f"global overload S = {result.total:.4g} s"]
    for row in overload_frame(result, grid).itertuples(index=False):
        if row.S > 0:
            lines.append(f"  line {row.line} ({row.label}): {row.S:.4g} s")
    return "\n".join(lines)


def format_duration_risk(table: pd.DataFrame) -> str:
    """Yellow and red (duration bin, line) pairs of a risk_by_duration table."""
    flagged = table[table["zone"] != "green"]
    if flagged.empty:
        return "every monitored line stays green in every duration bin"
    lines = [f"{'tau [s]':<13} {'line':>6}  {'label':<12} {'Q':>8}  zone"]
    for row in flagged.itertuples(index=False):
        window = f"{row.tau_low:.3g}-{row.tau_high:.3g}"
        lines.append(f"{window:<13} {row.line:>6}  {row.label:<12} {row.q_hat:>8.3g}  {row.zone}")
    return "\n".join(lines)
