# Line faults: scenarios, the state-matrix perturbation they induce, and
# the nominal / proposal laws scenarios are drawn from.

import json
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from errors import ScenarioError
from grid.gridModel import Grid

# faulted line keeps this share of its stiffness while the fault lasts
FAULT_FACTORS = {
    "three_phase": 0.0,
    "single_phase": 2.0 / 3.0,
}


class FaultKind(Enum):
    THREE_PHASE = "three_phase"
    SINGLE_PHASE = "single_phase"


def fault_factor(kind: Optional[FaultKind]) -> float:
    if kind is None:
        return 1.0
    return FAULT_FACTORS[kind.value]


@dataclass(frozen=True)
class FaultScenario:
    line: Optional[int]
    kind: FaultKind = FaultKind.THREE_PHASE
    duration: float = 0.5
    onset: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.duration) or self.duration < 0:
            raise ScenarioError(f"fault duration must be >= 0, got {self.duration}")
        if not np.isfinite(self.onset) or self.onset < 0:
            raise ScenarioError(f"fault onset must be >= 0, got {self.onset}")

    @property
    def is_fault(self) -> bool:
        return self.line is not None and self.duration > 0

    def window(self, horizon: float) -> tuple:
        """Interval [start, end) during which the line is faulted, clipped to [0, horizon]."""
        if not self.is_fault:
            return (0.0, 0.0)
        start = min(self.onset, horizon)
        end = min(self.onset + self.duration, horizon)
        return (start, end)

    def factor(self) -> float:
        return fault_factor(self.kind if self.line is not None else None)


@dataclass(frozen=True, eq=False)
class Perturbation:
    scale: float
    matrix: np.ndarray

    @property
    def rows(self) -> np.ndarray:
        # rows of V holding nonzero entries (at most the two faulted buses)
        return np.flatnonzero(np.any(self.matrix != 0, axis=1))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.matrix)


def build_perturbation(grid: Grid, scenario: FaultScenario) -> Perturbation:
    n = grid.n_buses
    matrix = np.zeros((2 * n, 2 * n))
    if scenario.line is None:
        return Perturbation(1.0, matrix)
    if not 0 <= scenario.line < grid.n_lines:
        raise ScenarioError(f"unknown line index: {scenario.line}")

    i, j = grid.terminals[scenario.line]
    # change of the Laplacian weight of the faulted line
    delta = (scenario.factor() - 1.0) * grid.stiffness[scenario.line]
    m = grid.inertia

    matrix[i, n + i] = -delta / m[i]
    matrix[i, n + j] = delta / m[i]
    matrix[j, n + j] = -delta / m[j]
    matrix[j, n + i] = delta / m[j]
    return Perturbation(1.0, matrix)


def faulted_grid(grid: Grid, scenario: FaultScenario) -> Grid:
    if scenario.line is None:
        return grid
    return grid.scaled_line(scenario.line, scenario.factor())


@dataclass(frozen=True, eq=False)
class ProposalLaw:
    """Categorical line choice times an exponential duration per line."""
    weights: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        rates = np.asarray(self.rates, dtype=float)
        if weights.ndim != 1 or weights.shape != rates.shape:
            raise ScenarioError("weights and rates must be vectors of equal length")
        if np.any(weights < 0) or not np.isclose(weights.sum(), 1.0, atol=1e-9):
            raise ScenarioError("line weights must be a probability vector")
        if np.any(rates <= 0) or not np.all(np.isfinite(rates)):
            raise ScenarioError("duration rates must be positive")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "rates", rates)

    @property
    def n_lines(self) -> int:
        return len(self.weights)

    def to_record(self) -> dict:
        return {"weights": self.weights.tolist(), "rates": self.rates.tolist()}


@dataclass(frozen=True, eq=False)
class NominalLaw:
    weights: np.ndarray
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ScenarioError(f"nominal rate must be positive, got {self.rate}")
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))

    @classmethod
    def uniform(cls, n_lines: int, rate: float) -> "NominalLaw":
        return cls(np.full(n_lines, 1.0 / n_lines), rate)

    def as_proposal(self) -> ProposalLaw:
        return ProposalLaw(self.weights.copy(), np.full(len(self.weights), float(self.rate)))


def log_density(lines: np.ndarray, durations: np.ndarray, law: ProposalLaw) -> np.ndarray:
    """Vectorized log q(line, tau); -inf outside the support."""
    lines = np.asarray(lines, dtype=int)
    durations = np.asarray(durations, dtype=float)
    if np.any(durations < 0):
        raise ScenarioError("fault durations must be >= 0")

    result = np.full(lines.shape, -np.inf)
    valid = (lines >= 0) & (lines < law.n_lines)
    weights = law.weights[lines[valid]]
    rates = law.rates[lines[valid]]
    with np.errstate(divide="ignore"):
        result[valid] = np.log(weights) + np.log(rates) - rates * durations[valid]
    return result


def _scenario_density(scenario: FaultScenario, law: ProposalLaw) -> float:
    if scenario.line is None:
        return 0.0
    line = np.array([scenario.line])
    return float(np.exp(log_density(line, np.array([scenario.duration]), law))[0])


def nominal_density(scenario: FaultScenario, nominal: NominalLaw) -> float:
    return _scenario_density(scenario, nominal.as_proposal())


def proposal_density(scenario: FaultScenario, law: ProposalLaw) -> float:
    return _scenario_density(scenario, law)


@dataclass(frozen=True, eq=False)
class ScenarioBatch:
    lines: np.ndarray
    durations: np.ndarray
    kind: FaultKind = FaultKind.THREE_PHASE
    onset: float = 0.0

    def __len__(self) -> int:
        return len(self.lines)

    def scenario(self, k: int) -> FaultScenario:
        line = int(self.lines[k])
        return FaultScenario(line if line >= 0 else None, self.kind, float(self.durations[k]), self.onset)

    def __iter__(self):
        return (self.scenario(k) for k in range(len(self)))


def sample_scenario(law: ProposalLaw, rng: np.random.Generator,
                    kind: FaultKind = FaultKind.THREE_PHASE) -> FaultScenario:
    line = int(rng.choice(law.n_lines, p=law.weights))
    duration = float(rng.exponential(1.0 / law.rates[line]))
    return FaultScenario(line, kind, duration)


def sample_batch(law: ProposalLaw, rng: np.random.Generator, size: int,
                 kind: FaultKind = FaultKind.THREE_PHASE) -> ScenarioBatch:
    lines = rng.choice(law.n_lines, size=size, p=law.weights)
    durations = rng.exponential(1.0, size=size) / law.rates[lines]
    return ScenarioBatch(lines.astype(int), durations, kind)


def scenario_to_record(scenario: FaultScenario) -> dict:
    return {
        "line": scenario.line,
        "kind": scenario.kind.value,
        "tau": scenario.duration,
        "onset": scenario.onset,
    }


def scenario_from_record(record: dict) -> FaultScenario:
    try:
        kind = FaultKind(record.get("kind", "three_phase"))
        return FaultScenario(record.get("line"), kind, float(record["tau"]), float(record.get("onset", 0.0)))
    except (KeyError, TypeError, ValueError) as error:
        raise ScenarioError(f"invalid scenario record {record!r}: {error}")


def dump_batch(batch: ScenarioBatch, seed: int, law: ProposalLaw) -> str:
    # (seed, law) in the header is enough to replay the batch
    document = {
        "seed": seed,
        "proposal": law.to_record(),
        "scenarios": [scenario_to_record(scenario) for scenario in batch],
    }
    return json.dumps(document)


def load_batch(text: str) -> tuple:
    document = json.loads(text)
    law = ProposalLaw(document["proposal"]["weights"], document["proposal"]["rates"])
    scenarios = [scenario_from_record(record) for record in document["scenarios"]]
    return document["seed"], law, scenarios
