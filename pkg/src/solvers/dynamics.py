# Trajectories of the linearized swing equations under a single line fault.
#
# The state matrix is piecewise constant: A0 + V while the fault lasts and A0
# afterwards. Each piece is solved in closed form in its eigenbasis,
#   xi(t) = exp(l t) xi(0) + (exp(l t) - 1) / l * (U^-1 P)
# with a Taylor series for the second term when |l t| is tiny.

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import linalg

from errors import DegeneracyError, NonFiniteTrajectoryError, ScenarioError, TimeGridMismatchError
from grid.faultModel import FaultScenario, build_perturbation
from grid.gridModel import Grid, build_state_system
from solvers.spectral import SpectralDecomposition, eigendecompose, perturb_multistep

logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 20.0
DEFAULT_STEP = 0.01

SERIES_THRESHOLD = 1e-4
IMAGINARY_TOLERANCE = 1e-8
ERROR_FLOOR = 1e-12

METHODS = ("exact", "perturbative")


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    scenario: FaultScenario
    method: str = "exact"
    steps: int = 0
    escalated: bool = False
    step: float = DEFAULT_STEP

    @property
    def n_buses(self) -> int:
        return self.states.shape[1] // 2

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def velocities(self) -> np.ndarray:
        return self.states[:, :self.n_buses]

    @property
    def phases(self) -> np.ndarray:
        return self.states[:, self.n_buses:]

    @property
    def window(self) -> tuple:
        return self.scenario.window(self.horizon)

    def faulted_samples(self) -> np.ndarray:
        # samples whose following interval lies inside the fault window
        start, end = self.window
        return (self.times >= start) & (self.times < end)

    @property
    def label(self) -> str:
        return self.method if self.method != "perturbative" else f"perturbative({self.steps})"


def phi(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """(exp(l t) - 1) / l for every time (rows) and eigenvalue (columns)."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    z = np.multiply.outer(times, values)
    column = times[:, None]
    series = column * (1 + z / 2 + z ** 2 / 6 + z ** 3 / 24)
    with np.errstate(divide="ignore", invalid="ignore"):
        closed = np.expm1(z) / values
    return np.where(np.abs(z) < SERIES_THRESHOLD, series, closed)


def propagate_many(decomposition: SpectralDecomposition, x_start: np.ndarray,
                   forcing: np.ndarray, times: np.ndarray) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if len(times) == 0:
        return np.empty((0, decomposition.size))

    modal_start = decomposition.inverse @ x_start
    modal_forcing = decomposition.inverse @ forcing
    growth = np.exp(np.multiply.outer(times, decomposition.values))
    modes = growth * modal_start + phi(decomposition.values, times) * modal_forcing
    states = modes @ decomposition.vectors.T

    residue = float(np.abs(states.imag).max())
    if residue > IMAGINARY_TOLERANCE * max(1.0, float(np.abs(states.real).max())):
        logger.debug(f"discarding imaginary residue {residue:.2e} ({decomposition.provenance})")
    return states.real


def propagate(decomposition: SpectralDecomposition, x_start: np.ndarray,
              forcing: np.ndarray, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError(f"propagation time must be >= 0, got {t}")
    if t == 0:
        return np.array(x_start, dtype=float)
    return propagate_many(decomposition, x_start, forcing, np.array([t]))[0]


def time_grid(horizon: float, step: float, breakpoints: Iterable[float] = ()) -> np.ndarray:
    """Uniform samples 0..horizon plus every breakpoint as an explicit sample."""
    if not horizon > 0:
        raise ScenarioError(f"horizon must be positive, got {horizon}")
    if not step > 0:
        raise ScenarioError(f"time step must be positive, got {step}")

    count = int(round(horizon / step))
    if abs(count * step - horizon) > 1e-9 * horizon:
        count = int(np.ceil(horizon / step))
    count = max(count, 1)
    times = np.minimum(np.arange(count + 1) * step, horizon)
    times[-1] = horizon

    tolerance = 1e-12 * max(1.0, horizon)
    for point in breakpoints:
        if not 0 < point < horizon:
            continue
        nearest = int(np.argmin(np.abs(times - point)))
        if abs(times[nearest] - point) <= tolerance:
            times[nearest] = point
        else:
            times = np.insert(times, np.searchsorted(times, point), point)
    return times


def check_settings(horizon: float, step: float, method: str, steps: int) -> None:
    if not horizon > 0:
        raise ScenarioError(f"horizon T must be positive, got {horizon}")
    if not step > 0:
        raise ScenarioError(f"time step must be positive, got {step}")
    if method not in METHODS:
        raise ScenarioError(f"unknown solver method: {method}")
    if method == "perturbative" and steps < 1:
        raise ScenarioError(f"perturbative method needs m >= 1, got {steps}")


class ContingencySolver:
    """Solves many contingencies of one grid.

    The nominal spectrum is computed once and reused for every post-fault
    interval and as the starting point of every perturbative update.
    Faulted spectra are cached per (line, kind, method) unless cache=False.
    A perturbative spectrum that fails its checks or yields a non-finite
    trajectory is replaced by the exact one and counted in `escalations`.
    """

    def __init__(self, grid: Grid, horizon: float = DEFAULT_HORIZON, step: float = DEFAULT_STEP,
                 method: str = "exact", steps: int = 10, cache: bool = True):
        check_settings(horizon, step, method, steps)
        self.grid = grid
        self.horizon = horizon
        self.step = step
        self.method = method
        self.steps = steps
        self.cache = cache
        self.system = build_state_system(grid)
        self.base = eigendecompose(self.system.matrix)
        self.escalations = 0
        self._spectra = {}
        self._lock = threading.Lock()

    def _key(self, scenario: FaultScenario, method: str, steps: int) -> tuple:
        return scenario.line, scenario.kind, method, steps if method == "perturbative" else 0

    def escalate(self, scenario: FaultScenario, steps: int) -> SpectralDecomposition:
        """Exact faulted spectrum standing in for a perturbative one that broke down."""
        perturbation = build_perturbation(self.grid, scenario)
        decomposition = eigendecompose(self.system.matrix + perturbation.matrix)
        with self._lock:
            self.escalations += 1
            if self.cache:
                self._spectra[self._key(scenario, "perturbative", steps)] = (decomposition, True)
        return decomposition

    def faulted_spectrum(self, scenario: FaultScenario, method: Optional[str] = None,
                         steps: Optional[int] = None) -> tuple:
        method = method or self.method
        steps = steps or self.steps
        key = self._key(scenario, method, steps)
        if self.cache:
            with self._lock:
                if key in self._spectra:
                    return self._spectra[key]

        perturbation = build_perturbation(self.grid, scenario)
        if method == "exact":
            decomposition = eigendecompose(self.system.matrix + perturbation.matrix)
        else:
            try:
                decomposition = perturb_multistep(self.base, perturbation.matrix, steps)
            except DegeneracyError as error:
                logger.debug(f"line {scenario.line}: {error}; escalating to exact")
                return self.escalate(scenario, steps), True

        if self.cache:
            with self._lock:
                self._spectra[key] = (decomposition, False)
        return decomposition, False

    def _fill(self, states: np.ndarray, times: np.ndarray, window: tuple,
              faulted: SpectralDecomposition) -> None:
        start, end = window
        x0, forcing = self.system.equilibrium, self.system.forcing
        during = (times > start) & (times <= end)
        states[during] = propagate_many(faulted, x0, forcing, times[during] - start)

        after = times > end
        if after.any():
            # the state is continuous at the clearing instant, only A switches
            x_end = states[np.searchsorted(times, end)]
            states[after] = propagate_many(self.base, x_end, forcing, times[after] - end)

    def solve(self, scenario: FaultScenario, method: Optional[str] = None,
              steps: Optional[int] = None) -> Trajectory:
        method = method or self.method
        steps = steps or self.steps
        check_settings(self.horizon, self.step, method, steps)

        start, end = scenario.window(self.horizon)
        if scenario.is_fault and scenario.onset + scenario.duration > self.horizon:
            logger.debug(f"fault on line {scenario.line} outlasts the horizon, clipped at T={self.horizon}")

        times = time_grid(self.horizon, self.step, (start, end))
        states = np.tile(self.system.equilibrium, (len(times), 1))
        label_steps = steps if method == "perturbative" else 0

        if not scenario.is_fault or end <= start:
            return Trajectory(times, states, scenario, method, label_steps, False, self.step)

        faulted, escalated = self.faulted_spectrum(scenario, method, steps)
        self._fill(states, times, (start, end), faulted)

        if not np.isfinite(states).all() and method == "perturbative" and not escalated:
            logger.warning(f"line {scenario.line}: perturbative({steps}) trajectory is not finite, escalating to exact")
            faulted, escalated = self.escalate(scenario, steps), True
            self._fill(states, times, (start, end), faulted)
        if not np.isfinite(states).all():
            raise NonFiniteTrajectoryError(
                f"line {scenario.line}: {faulted.provenance} trajectory is not finite")

        return Trajectory(times, states, scenario, method, label_steps, escalated, self.step)

    def solve_many(self, scenarios: Iterable[FaultScenario], workers: int = 1) -> list:
        scenarios = list(scenarios)
        if workers <= 1:
            return [self.solve(scenario) for scenario in scenarios]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(self.solve, scenarios))


def solve_piecewise(grid: Grid, scenario: FaultScenario, horizon: float = DEFAULT_HORIZON,
                    step: float = DEFAULT_STEP, method: str = "exact", steps: int = 10) -> Trajectory:
    solver = ContingencySolver(grid, horizon, step, method, steps, cache=False)
    return solver.solve(scenario)


def reference_integrate(grid: Grid, scenario: FaultScenario, horizon: float = DEFAULT_HORIZON,
                        step: float = DEFAULT_STEP) -> Trajectory:
    """Classical fixed-step RK4 on the same time grid as the modal solvers."""
    check_settings(horizon, step, "exact", 0)
    system = build_state_system(grid)
    nominal = system.matrix
    faulted = nominal + build_perturbation(grid, scenario).matrix
    forcing = system.forcing

    fastest = max(np.abs(linalg.eigvals(nominal)).max(), np.abs(linalg.eigvals(faulted)).max())
    if fastest > 0 and step > 0.2 / fastest:
        logger.warning(f"time step {step} exceeds 0.2/max|lambda| = {0.2 / fastest:.3g}, RK4 accuracy degraded")

    start, end = scenario.window(horizon)
    times = time_grid(horizon, step, (start, end))
    states = np.empty((len(times), len(forcing)))
    x = system.equilibrium.copy()
    states[0] = x

    for k in range(len(times) - 1):
        h = times[k + 1] - times[k]
        matrix = faulted if start <= times[k] < end else nominal
        k1 = matrix @ x + forcing
        k2 = matrix @ (x + h / 2 * k1) + forcing
        k3 = matrix @ (x + h / 2 * k2) + forcing
        k4 = matrix @ (x + h * k3) + forcing
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        states[k + 1] = x

    return Trajectory(times, states, scenario, "reference", 0, False, step)


def relative_error(candidate: Trajectory, reference: Trajectory) -> float:
    """max_t |x_a(t) - x_b(t)| / max(|x_b(t)|, floor)."""
    if candidate.states.shape != reference.states.shape or \
            not np.allclose(candidate.times, reference.times, rtol=0, atol=1e-12):
        raise TimeGridMismatchError("trajectories are sampled on different time grids")
    difference = np.linalg.norm(candidate.states - reference.states, axis=1)
    scale = np.maximum(np.linalg.norm(reference.states, axis=1), ERROR_FLOOR)
    return float(np.max(difference / scale))
