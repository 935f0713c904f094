import logging
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_ring, make_two_bus
from errors import NonFiniteTrajectoryError
from grid.faultModel import FaultKind, FaultScenario
from grid.gridModel import Bus, BusKind, Grid, Line, steady_state
from risk.indicators import (
    RiskZone, classify_risk, evaluate_overload, global_overload, in_safety_polytope, line_overload,
    overload_profile,
)
from solvers.dynamics import Trajectory, solve_piecewise, time_grid


def constant_difference(difference, horizon=10.0, scenario=FaultScenario(None), step=0.01):
    # two-bus states with theta_0 - theta_1 given per sample
    times = time_grid(horizon, step, scenario.window(horizon))
    difference = np.broadcast_to(difference(times) if callable(difference) else difference, times.shape)
    states = np.zeros((len(times), 4))
    states[:, 2] = difference
    return Trajectory(times, states, scenario, step=step)


def ring_fault(step=0.01, limit=1.0):
    grid = make_ring(limit)
    return grid, solve_piecewise(grid, FaultScenario(3, FaultKind.THREE_PHASE, 1.0), 10.0, step)


def test_always_violating_line():
    # beta = 2, limit 1.5: flow 3 is twice the limit
    trajectory = constant_difference(1.5)

    assert line_overload(trajectory, 0, make_two_bus()) == pytest.approx(10.0)


def test_never_violating_line():
    trajectory = constant_difference(0.5)

    assert line_overload(trajectory, 0, make_two_bus()) == 0.0


def test_step_violation_window():
    trajectory = constant_difference(lambda t: np.where((t >= 2) & (t < 5), 1.0, 0.5))
    result = evaluate_overload(trajectory, make_two_bus())

    assert abs(result.per_line[0] - 3.0) <= 0.01
    assert len(result.intervals[0]) == 1
    start, end = result.intervals[0][0]
    assert start == pytest.approx(2.0, abs=0.01)
    assert end == pytest.approx(5.0, abs=0.01)


def test_faulted_line_uses_the_fault_factor():
    # a de-energized line carries no flow while the fault lasts
    scenario = FaultScenario(0, FaultKind.THREE_PHASE, 1.0)
    trajectory = constant_difference(1.0, scenario=scenario)

    assert line_overload(trajectory, 0, make_two_bus()) == pytest.approx(9.0)


def test_global_overload_sums_monitored_lines():
    grid, trajectory = ring_fault()
    per_line = [line_overload(trajectory, line, grid) for line in range(grid.n_lines)]

    assert sum(per_line) > 0
    assert global_overload(trajectory, grid) == pytest.approx(sum(per_line))
    assert np.allclose(overload_profile(trajectory, grid), per_line)

    result = evaluate_overload(trajectory, grid)
    assert result.total == pytest.approx(sum(per_line))
    assert result.ranking()[0] == int(np.argmax(per_line))


def test_single_monitored_line():
    grid, trajectory = ring_fault()
    lines = tuple(replace(line, monitored=(k == 2)) for k, line in enumerate(grid.lines))
    partial = Grid(grid.buses, lines, grid.reference_bus)

    assert global_overload(trajectory, partial) == pytest.approx(line_overload(trajectory, 2, grid))
    assert evaluate_overload(trajectory, partial).per_line[0] == 0.0


def test_no_monitored_lines_warns(caplog):
    grid, trajectory = ring_fault()
    lines = tuple(replace(line, monitored=False) for line in grid.lines)

    with caplog.at_level(logging.WARNING):
        assert global_overload(trajectory, Grid(grid.buses, lines, 0)) == 0.0
    assert "no monitored lines" in caplog.text


def test_overload_is_bounded_by_horizon():
    grid, trajectory = ring_fault(limit=0.01)
    result = evaluate_overload(trajectory, grid)

    assert np.all(result.per_line <= 10.0 + 1e-12)
    assert result.total <= grid.n_lines * 10.0 + 1e-9
    for intervals in result.intervals:
        for start, end in intervals:
            assert 0 <= start < end <= 10.0


def test_refinement_changes_overload_by_crossings():
    grid, coarse = ring_fault(step=0.02)
    _, fine = ring_fault(step=0.01)
    coarse_result, fine_result = evaluate_overload(coarse, grid), evaluate_overload(fine, grid)

    for line in range(grid.n_lines):
        crossings = 2 * len(fine_result.intervals[line]) + 2
        assert abs(coarse_result.per_line[line] - fine_result.per_line[line]) <= crossings * 0.02


@given(st.floats(1.0, 10.0))
def test_raising_limits_never_increases_overload(factor):
    grid, trajectory = ring_fault()
    lines = tuple(replace(line, limit=line.limit * factor) for line in grid.lines)
    raised = Grid(grid.buses, lines, grid.reference_bus)

    assert np.all(overload_profile(trajectory, raised) <= overload_profile(trajectory, grid))


def test_non_finite_trajectory_cannot_be_scored():
    trajectory = constant_difference(lambda times: np.where(times > 5.0, np.nan, 0.1))

    with pytest.raises(NonFiniteTrajectoryError):
        evaluate_overload(trajectory, make_two_bus())


def test_safety_polytope():
    grid = make_two_bus()
    tight = Grid((Bus(0, BusKind.GENERATOR, 1.0, 1.0, 1.0), Bus(1, BusKind.LOAD, 1.0, 1.0, -1.0)),
                 (Line(0, 1, 1.0, 1.0),), 0)

    assert in_safety_polytope(steady_state(grid), grid)
    assert in_safety_polytope(np.zeros(2), grid)
    assert not in_safety_polytope(np.array([0.0, -1.5]), tight)


@pytest.mark.parametrize("probability, zone", [
    (0.12, RiskZone.RED),
    (0.07, RiskZone.YELLOW),
    (0.05, RiskZone.YELLOW),
    (0.10, RiskZone.YELLOW),
    (0.0, RiskZone.GREEN),
    (0.049, RiskZone.GREEN),
])
def test_classify_risk(probability, zone):
    assert classify_risk(probability) == zone


def test_classify_risk_rejects_non_probabilities():
    with pytest.raises(ValueError):
        classify_risk(1.2)
    with pytest.raises(ValueError):
        classify_risk(-0.1)


def test_custom_zone_thresholds():
    assert classify_risk(0.03, warning=0.01, critical=0.02) == RiskZone.RED
