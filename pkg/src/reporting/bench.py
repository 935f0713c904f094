# Processing time and accuracy of the solvers over every single-line
# three-phase contingency of a grid.
#
# Each repetition builds a fresh solver without the spectrum cache, so the
# exact rows pay one eigendecomposition per contingency and the perturbative
# rows pay one shared base decomposition plus m updates per contingency.

import logging
import statistics
import time
from dataclasses import dataclass
from typing import Optional

import pandas as pd

from grid.faultModel import FaultKind, FaultScenario
from grid.gridModel import Grid
from solvers.dynamics import ContingencySolver, reference_integrate, relative_error

logger = logging.getLogger(__name__)

WARMUPS = 3
REPEATS = 20


@dataclass(frozen=True)
class BenchRecord:
    method: str
    # seconds per contingency
    mean_time: float
    std_time: float
    # seconds per full sweep, base decomposition included
    ensemble_time: float
    max_error: float
    scenario_count: int
    steps: int = 0


BENCH_COLUMNS = ["method", "mean_time", "std_time", "ensemble_time", "max_error", "scenarios", "speedup"]
ERROR_COLUMNS = ["m", "tau", "max_error"]


def contingencies(grid: Grid, durations: list) -> list:
    return [FaultScenario(line, FaultKind.THREE_PHASE, float(tau))
            for tau in durations for line in range(grid.n_lines)]


def _label(method: str, steps: int) -> str:
    return f"perturbative({steps})" if method == "perturbative" else method


def _sweep(grid: Grid, scenarios: list, method: str, steps: int, horizon: float, step: float) -> list:
    solver = ContingencySolver(grid, horizon, step, method, steps, cache=False)
    return [solver.solve(scenario) for scenario in scenarios]


def time_method(grid: Grid, scenarios: list, method: str, steps: int, horizon: float, step: float,
                warmups: int = WARMUPS, repeats: int = REPEATS) -> tuple:
    """(mean, std) wall time of a full sweep over repeats, after warmups."""
    if method == "reference":
        run = lambda: [reference_integrate(grid, scenario, horizon, step) for scenario in scenarios]
    else:
        run = lambda: _sweep(grid, scenarios, method, steps, horizon, step)

    for _ in range(warmups):
        run()
    samples = []
    for _ in range(repeats):
        clock = time.perf_counter()
        run()
        samples.append(time.perf_counter() - clock)
    spread = statistics.stdev(samples) if len(samples) > 1 else 0.0
    return statistics.mean(samples), spread


def max_error(candidates: list, exact: list) -> float:
    return max((relative_error(candidate, truth) for candidate, truth in zip(candidates, exact)), default=0.0)


def run_bench(grid: Grid, ms: list, durations: list, horizon: float, step: float,
              warmups: int = WARMUPS, repeats: int = REPEATS, reference: bool = True) -> list:
    scenarios = contingencies(grid, durations)
    count = len(scenarios)
    exact = _sweep(grid, scenarios, "exact", 1, horizon, step)

    plans = [("exact", 0)] + [("perturbative", int(m)) for m in ms]
    if reference:
        plans.append(("reference", 0))

    records = []
    for method, steps in plans:
        if method == "exact":
            error = 0.0
        elif method == "reference":
            error = max_error([reference_integrate(grid, s, horizon, step) for s in scenarios], exact)
        else:
            error = max_error(_sweep(grid, scenarios, method, steps, horizon, step), exact)
        mean, spread = time_method(grid, scenarios, method, steps or 1, horizon, step, warmups, repeats)
        record = BenchRecord(_label(method, steps), mean / count, spread / count, mean, error, count, steps)
        logger.info(f"bench {record.method}: {record.mean_time:.3g} s per contingency, error {error:.2e}")
        records.append(record)
    return records


def bench_frame(records: list) -> pd.DataFrame:
    """One row per method; speedup is exact time over the method's time."""
    exact = next(record.mean_time for record in records if record.method == "exact")
    return pd.DataFrame(
        [(r.method, r.mean_time, r.std_time, r.ensemble_time, r.max_error, r.scenario_count, exact / r.mean_time)
         for r in records],
        columns=BENCH_COLUMNS,
    )


def crossover(records: list) -> Optional[int]:
    """Largest m whose perturbative sweep beats exact, None if none does."""
    exact = next(record.mean_time for record in records if record.method == "exact")
    faster = [record.steps for record in records
              if record.method.startswith("perturbative") and record.mean_time < exact]
    return max(faster) if faster else None


def error_sweep(grid: Grid, ms: list, durations: list, horizon: float, step: float) -> pd.DataFrame:
    """(m, tau, max relative error over all lines) for every m and tau."""
    rows = []
    for tau in durations:
        scenarios = contingencies(grid, [tau])
        exact = _sweep(grid, scenarios, "exact", 1, horizon, step)
        for m in ms:
            approximate = _sweep(grid, scenarios, "perturbative", m, horizon, step)
            rows.append((int(m), float(tau), max_error(approximate, exact)))
    return pd.DataFrame(rows, columns=ERROR_COLUMNS)


def error_grid(errors: pd.DataFrame) -> pd.DataFrame:
    """Error table pivoted to one row per m and one column per tau."""
    return errors.pivot(index="m", columns="tau", values="max_error")
