# Overload indicators, the safety polytope and risk zones.
#
# A sample counts for the interval up to the next sample (left rectangle
# rule), so the fault switching instants, which are always samples, split
# the measure exactly.

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from errors import NonFiniteTrajectoryError
from grid.gridModel import Grid, line_flows
from solvers.dynamics import Trajectory

logger = logging.getLogger(__name__)

WARNING_THRESHOLD = 0.05
CRITICAL_THRESHOLD = 0.10


class RiskZone(Enum):
    GREEN = "green"
    YELLOW = "yellow"
    RED = "red"


@dataclass(frozen=True, eq=False)
class OverloadResult:
    per_line: np.ndarray
    total: float
    intervals: list

    def ranking(self) -> list:
        # monitored line indices, worst first
        return [int(k) for k in np.argsort(-self.per_line, kind="stable")]


def trajectory_flows(trajectory: Trajectory, grid: Grid) -> np.ndarray:
    """(n_t, n_lines) flows with the faulted line's stiffness reduced inside the fault window."""
    flows = line_flows(grid, trajectory.phases)
    scenario = trajectory.scenario
    if scenario.is_fault:
        faulted = trajectory.faulted_samples()
        flows[faulted, scenario.line] *= scenario.factor()
    return flows


def violation_mask(trajectory: Trajectory, grid: Grid) -> np.ndarray:
    if not np.isfinite(trajectory.states).all():
        raise NonFiniteTrajectoryError(
            f"{trajectory.label} trajectory of line {trajectory.scenario.line} is not finite, cannot score it")
    return (np.abs(trajectory_flows(trajectory, grid)) > grid.limits).astype(float)


def _weights(times: np.ndarray) -> np.ndarray:
    # each sample stands for the interval up to the next one
    return np.append(np.diff(times), 0.0)


def _intervals(times: np.ndarray, violating: np.ndarray) -> list:
    intervals = []
    start = None
    for k in range(len(times) - 1):
        if violating[k] and start is None:
            start = times[k]
        elif not violating[k] and start is not None:
            intervals.append((float(start), float(times[k])))
            start = None
    if start is not None:
        intervals.append((float(start), float(times[-1])))
    return intervals


def line_overload(trajectory: Trajectory, line: int, grid: Grid) -> float:
    violating = violation_mask(trajectory, grid)[:, line]
    return float(np.dot(_weights(trajectory.times), violating))


def overload_profile(trajectory: Trajectory, grid: Grid) -> np.ndarray:
    """S_ij for every line, monitored or not."""
    return _weights(trajectory.times) @ violation_mask(trajectory, grid)


def global_overload(trajectory: Trajectory, grid: Grid) -> float:
    if not grid.monitored.any():
        logger.warning("no monitored lines, global overload is 0")
        return 0.0
    return float(overload_profile(trajectory, grid)[grid.monitored].sum())


def evaluate_overload(trajectory: Trajectory, grid: Grid) -> OverloadResult:
    violating = violation_mask(trajectory, grid)
    per_line = _weights(trajectory.times) @ violating
    per_line = np.where(grid.monitored, per_line, 0.0)
    intervals = [
        _intervals(trajectory.times, violating[:, line] > 0) if grid.monitored[line] else []
        for line in range(grid.n_lines)
    ]
    return OverloadResult(per_line, float(per_line.sum()), intervals)


def in_safety_polytope(theta: np.ndarray, grid: Grid) -> bool:
    return bool(np.all(np.abs(line_flows(grid, theta)) <= grid.limits))


def classify_risk(probability: float, warning: float = WARNING_THRESHOLD,
                  critical: float = CRITICAL_THRESHOLD) -> RiskZone:
    if not 0.0 <= probability <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {probability}")
    if probability > critical:
        return RiskZone.RED
    if probability >= warning:
        return RiskZone.YELLOW
    return RiskZone.GREEN
