# Deterministic N-1 sweeps: every line faulted in turn at a fixed duration.

from dataclasses import dataclass

import numpy as np
import pandas as pd

from grid.faultModel import FaultKind, FaultScenario
from grid.gridModel import Grid
from risk.indicators import overload_profile
from solvers.dynamics import ContingencySolver

CRITICAL_COLUMNS = ["line", "label", "worst_S"]
SWEEP_COLUMNS = ["faulted", "tau", "line", "S"]


@dataclass(frozen=True, eq=False)
class ScreenResult:
    kind: FaultKind
    duration: float
    # rows: faulted line, columns: overloaded line, entries S_ij in seconds
    matrix: np.ndarray

    def critical_lines(self, monitored: np.ndarray) -> list:
        """(line, worst S over all faults) for monitored lines, worst first."""
        worst = self.matrix.max(axis=0) if len(self.matrix) else np.zeros(0)
        lines = [int(line) for line in np.flatnonzero(monitored)]
        return sorted(((line, float(worst[line])) for line in lines), key=lambda item: (-item[1], item[0]))

    def to_frame(self, grid: Grid) -> pd.DataFrame:
        """The matrix with a `faulted` column and one column per line label."""
        labels = [grid.line_label(line) for line in range(grid.n_lines)]
        frame = pd.DataFrame(self.matrix, columns=labels)
        frame.insert(0, "faulted", np.arange(len(self.matrix)))
        return frame

    def critical_frame(self, grid: Grid) -> pd.DataFrame:
        rows = [(line, grid.line_label(line), worst) for line, worst in self.critical_lines(grid.monitored)]
        return pd.DataFrame(rows, columns=CRITICAL_COLUMNS)


def screen_contingencies(solver: ContingencySolver, kind: FaultKind, duration: float,
                         workers: int = 1) -> ScreenResult:
    grid = solver.grid
    scenarios = [FaultScenario(line, kind, duration) for line in range(grid.n_lines)]
    trajectories = solver.solve_many(scenarios, workers)
    matrix = np.array([overload_profile(trajectory, grid) for trajectory in trajectories])
    return ScreenResult(kind, duration, matrix.reshape(grid.n_lines, grid.n_lines))


def duration_sweep(solver: ContingencySolver, kind: FaultKind, durations: list, workers: int = 1) -> pd.DataFrame:
    """Long-format table (faulted line, tau, overloaded line, S) of overload vs fault duration."""
    frames = []
    for duration in durations:
        result = screen_contingencies(solver, kind, duration, workers)
        faulted, line = np.indices(result.matrix.shape)
        frames.append(pd.DataFrame({
            "faulted": faulted.ravel(),
            "tau": float(duration),
            "line": line.ravel(),
            "S": result.matrix.ravel(),
        }))
    if not frames:
        return pd.DataFrame(columns=SWEEP_COLUMNS)
    return pd.concat(frames, ignore_index=True)
