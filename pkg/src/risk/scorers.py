from concurrent.futures import ThreadPoolExecutor

import numpy as np

from Scorer import Scorer
from grid.faultModel import FaultScenario, ScenarioBatch
from risk.indicators import overload_profile
from solvers.dynamics import ContingencySolver


class OverloadScorer(Scorer):
    """Overload time of simulated contingencies.

    target None scores the global indicator (sum over monitored lines),
    an integer scores that line alone.
    """

    def __init__(self, solver: ContingencySolver, target=None, workers: int = 1):
        grid = solver.grid
        if target is not None and not 0 <= target < grid.n_lines:
            raise ValueError(f"unknown target line: {target}")
        name = "global" if target is None else grid.line_label(target)
        super().__init__(name, grid.n_lines, target)
        self.solver = solver
        self.workers = workers

    def _profile(self, scenario: FaultScenario) -> np.ndarray:
        return overload_profile(self.solver.solve(scenario), self.solver.grid)

    def per_line(self, batch: ScenarioBatch) -> np.ndarray:
        """(N, n_lines) overload time of every line for every scenario."""
        if self.workers <= 1:
            rows = [self._profile(scenario) for scenario in batch]
        else:
            # map keeps scenario order
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                rows = list(pool.map(self._profile, batch))
        return np.array(rows, dtype=float).reshape(len(batch), self.n_lines)

    def from_profile(self, profile: np.ndarray) -> np.ndarray:
        if self.target is None:
            return profile[:, self.solver.grid.monitored].sum(axis=1)
        return profile[:, self.target]

    def score(self, batch: ScenarioBatch) -> np.ndarray:
        return self.from_profile(self.per_line(batch))
