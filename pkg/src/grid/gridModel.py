# The static network: buses, lines, the weighted Laplacian and the
# linearized swing equations in state-space form.
#
# State vectors are ordered x = (dtheta/dt ; theta), all quantities per-unit,
# time in seconds and phases in radians.

import json
import logging
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np
from scipy import linalg
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from errors import GridParseError, GridValidationError, SingularSystemError

logger = logging.getLogger(__name__)

GRID_FORMAT = "swingscreen-grid/1"
BALANCE_TOLERANCE = 1e-9


class BusKind(Enum):
    GENERATOR = "generator"
    LOAD = "load"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    inertia: float
    damping: float
    injection: float
    voltage: float = 1.0


@dataclass(frozen=True)
class Line:
    source: int
    target: int
    stiffness: float
    limit: float
    susceptance: Optional[float] = None
    monitored: bool = True

    @property
    def endpoints(self) -> tuple:
        return (self.source, self.target)


@dataclass(frozen=True)
class Grid:
    buses: tuple
    lines: tuple
    reference_bus: int

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @cached_property
    def bus_index(self) -> dict:
        return {bus.id: position for position, bus in enumerate(self.buses)}

    @cached_property
    def inertia(self) -> np.ndarray:
        return np.array([bus.inertia for bus in self.buses], dtype=float)

    @cached_property
    def damping(self) -> np.ndarray:
        return np.array([bus.damping for bus in self.buses], dtype=float)

    @cached_property
    def injection(self) -> np.ndarray:
        return np.array([bus.injection for bus in self.buses], dtype=float)

    @cached_property
    def stiffness(self) -> np.ndarray:
        return np.array([line.stiffness for line in self.lines], dtype=float)

    @cached_property
    def limits(self) -> np.ndarray:
        return np.array([line.limit for line in self.lines], dtype=float)

    @cached_property
    def monitored(self) -> np.ndarray:
        return np.array([line.monitored for line in self.lines], dtype=bool)

    @cached_property
    def terminals(self) -> np.ndarray:
        # (n_lines, 2) bus positions of each line's endpoints
        pairs = [(self.bus_index[line.source], self.bus_index[line.target]) for line in self.lines]
        return np.array(pairs, dtype=int).reshape(-1, 2)

    def line_label(self, index: int) -> str:
        line = self.lines[index]
        return f"{line.source}-{line.target}"

    def scaled_line(self, index: int, factor: float) -> "Grid":
        """Copy of the grid with one line's stiffness multiplied by factor.

        A factor of 0 removes the line. The result is not re-validated: a
        faulted grid may be disconnected.
        """
        if not 0 <= index < self.n_lines:
            raise GridValidationError(f"unknown line index: {index}")
        if factor == 1.0:
            return self
        lines = list(self.lines)
        if factor == 0.0:
            del lines[index]
        else:
            lines[index] = replace(lines[index], stiffness=lines[index].stiffness * factor)
        return Grid(self.buses, tuple(lines), self.reference_bus)


class StateSystem(NamedTuple):
    matrix: np.ndarray
    forcing: np.ndarray
    equilibrium: np.ndarray


def validate_grid(grid: Grid) -> Grid:
    if not grid.buses:
        raise GridValidationError("grid has no buses")

    ids = [bus.id for bus in grid.buses]
    if len(set(ids)) != len(ids):
        raise GridValidationError("duplicate bus id")

    for bus in grid.buses:
        for name, value in (("inertia", bus.inertia), ("damping", bus.damping), ("voltage", bus.voltage)):
            if not np.isfinite(value) or value <= 0:
                raise GridValidationError(f"nonpositive {name} at bus {bus.id}: {value}")
        if not np.isfinite(bus.injection):
            raise GridValidationError(f"non-finite injection at bus {bus.id}")

    if grid.reference_bus not in grid.bus_index:
        raise GridValidationError(f"reference bus {grid.reference_bus} does not exist")

    seen = set()
    for line in grid.lines:
        if line.source not in grid.bus_index or line.target not in grid.bus_index:
            raise GridValidationError(f"line {line.source}-{line.target} references an unknown bus")
        if line.source == line.target:
            raise GridValidationError(f"self-loop at bus {line.source}")
        pair = frozenset(line.endpoints)
        if pair in seen:
            raise GridValidationError(f"parallel line {line.source}-{line.target} must be merged")
        seen.add(pair)
        if not np.isfinite(line.stiffness) or line.stiffness <= 0:
            raise GridValidationError(f"nonpositive stiffness on line {line.source}-{line.target}")
        if not np.isfinite(line.limit) or line.limit <= 0:
            raise GridValidationError(f"nonpositive limit on line {line.source}-{line.target}")

    imbalance = float(np.sum(grid.injection))
    if abs(imbalance) > BALANCE_TOLERANCE:
        raise GridValidationError(f"injections unbalanced: sum p = {imbalance:.3e} pu")

    if count_islands(grid) != 1:
        raise GridValidationError("grid is disconnected")

    return grid


def count_islands(grid: Grid) -> int:
    n = grid.n_buses
    if grid.n_lines == 0:
        return n
    rows, cols = grid.terminals[:, 0], grid.terminals[:, 1]
    adjacency = coo_matrix((np.ones(grid.n_lines), (rows, cols)), shape=(n, n))
    islands, _ = connected_components(adjacency, directed=False)
    return islands


def _number(record: dict, key: str, where: str) -> float:
    if key not in record:
        raise GridParseError(f"{where}: missing key '{key}'")
    value = record[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise GridParseError(f"{where}: '{key}' must be a number")
    return float(value)


def _integer(record: dict, key: str, where: str) -> int:
    value = _number(record, key, where)
    if not value.is_integer():
        raise GridParseError(f"{where}: '{key}' must be an integer, got {record[key]!r}")
    return int(value)


def _records(document: dict, key: str) -> list:
    records = document[key]
    if not isinstance(records, list):
        raise GridParseError(f"'{key}' must be a list")
    return records


def grid_from_document(document: dict) -> Grid:
    if not isinstance(document, dict):
        raise GridParseError("grid document must be an object")

    version = document.get("format")
    if version is not None and version != GRID_FORMAT:
        raise GridParseError(f"unsupported grid format: {version}")
    if version is None:
        logger.debug(f"grid document has no format tag, assuming {GRID_FORMAT}")

    for key in ("buses", "lines", "reference_bus"):
        if key not in document:
            raise GridParseError(f"missing key '{key}'")

    buses = []
    for position, record in enumerate(_records(document, "buses")):
        where = f"bus #{position}"
        if not isinstance(record, dict) or "id" not in record:
            raise GridParseError(f"{where}: missing key 'id'")
        try:
            kind = BusKind(record.get("kind", "load"))
        except ValueError:
            raise GridParseError(f"{where}: invalid kind {record.get('kind')!r}")
        buses.append(Bus(
            id=_integer(record, "id", where),
            kind=kind,
            inertia=_number(record, "m", where),
            damping=_number(record, "d", where),
            injection=_number(record, "p", where),
            voltage=_number(record, "V", where) if "V" in record else 1.0,
        ))

    voltages = {bus.id: bus.voltage for bus in buses}

    lines = []
    for position, record in enumerate(_records(document, "lines")):
        where = f"line #{position}"
        if not isinstance(record, dict):
            raise GridParseError(f"{where}: must be an object")
        source, target = _integer(record, "from", where), _integer(record, "to", where)

        if ("B" in record) == ("beta" in record):
            raise GridParseError(f"{where}: exactly one of 'B' or 'beta' is required")
        if "B" in record:
            susceptance = _number(record, "B", where)
            if source not in voltages or target not in voltages:
                raise GridValidationError(f"line {source}-{target} references an unknown bus")
            stiffness = voltages[source] * voltages[target] * susceptance
        else:
            susceptance = None
            stiffness = _number(record, "beta", where)

        monitored = record.get("monitored", True)
        if not isinstance(monitored, bool):
            raise GridParseError(f"{where}: 'monitored' must be true or false, got {monitored!r}")

        lines.append(Line(
            source=source,
            target=target,
            stiffness=stiffness,
            limit=_number(record, "limit", where),
            susceptance=susceptance,
            monitored=monitored,
        ))

    return Grid(tuple(buses), tuple(lines), _integer(document, "reference_bus", "grid document"))


def load_grid(source: str) -> Grid:
    """Parse and validate a grid document (JSON text)."""
    try:
        document = json.loads(source)
    except json.JSONDecodeError as error:
        raise GridParseError(f"malformed grid document: {error}")
    return validate_grid(grid_from_document(document))


def load_grid_file(path) -> Grid:
    with open(path, encoding="utf-8") as handle:
        return load_grid(handle.read())


def dump_grid(grid: Grid) -> str:
    buses = []
    for bus in grid.buses:
        buses.append({
            "id": bus.id,
            "kind": bus.kind.value,
            "m": bus.inertia,
            "d": bus.damping,
            "p": bus.injection,
            "V": bus.voltage,
        })

    lines = []
    for line in grid.lines:
        record = {"from": line.source, "to": line.target}
        if line.susceptance is not None:
            record["B"] = line.susceptance
        else:
            record["beta"] = line.stiffness
        record["limit"] = line.limit
        record["monitored"] = line.monitored
        lines.append(record)

    document = {
        "format": GRID_FORMAT,
        "buses": buses,
        "lines": lines,
        "reference_bus": grid.reference_bus,
    }
    return json.dumps(document, indent=2)


def save_grid(grid: Grid, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(dump_grid(grid))


def build_laplacian(grid: Grid) -> np.ndarray:
    n = grid.n_buses
    laplacian = np.zeros((n, n))
    for (i, j), beta in zip(grid.terminals, grid.stiffness):
        laplacian[i, i] += beta
        laplacian[j, j] += beta
        laplacian[i, j] -= beta
        laplacian[j, i] -= beta
    return laplacian


def steady_state(grid: Grid) -> np.ndarray:
    """Pre-fault phases solving L theta = p with theta(reference) = 0.

    L is singular, so the reference row and column are removed and the
    reduced system is solved instead.
    """
    n = grid.n_buses
    theta = np.zeros(n)
    if n == 1:
        return theta

    reference = grid.bus_index[grid.reference_bus]
    keep = np.arange(n) != reference
    reduced = build_laplacian(grid)[np.ix_(keep, keep)]
    try:
        theta[keep] = linalg.solve(reduced, grid.injection[keep], assume_a="pos")
    except (linalg.LinAlgError, ValueError) as error:
        raise SingularSystemError(f"reduced Laplacian is singular, is the grid connected? ({error})")
    return theta


def state_matrix(grid: Grid) -> np.ndarray:
    # companion form [[-M^-1 D, -M^-1 L], [I, 0]]
    n = grid.n_buses
    matrix = np.zeros((2 * n, 2 * n))
    matrix[:n, :n] = np.diag(-grid.damping / grid.inertia)
    matrix[:n, n:] = -build_laplacian(grid) / grid.inertia[:, None]
    matrix[n:, :n] = np.eye(n)
    return matrix


def build_state_system(grid: Grid) -> StateSystem:
    n = grid.n_buses
    forcing = np.concatenate([grid.injection / grid.inertia, np.zeros(n)])
    equilibrium = np.concatenate([np.zeros(n), steady_state(grid)])
    return StateSystem(state_matrix(grid), forcing, equilibrium)


def line_flows(grid: Grid, theta: np.ndarray) -> np.ndarray:
    """Linearized flows beta_ij (theta_i - theta_j); theta may be (n,) or (n_t, n)."""
    theta = np.asarray(theta, dtype=float)
    difference = theta[..., grid.terminals[:, 0]] - theta[..., grid.terminals[:, 1]]
    return grid.stiffness * difference
