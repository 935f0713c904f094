# Shared fixtures: small grids and a scorer with a closed-form tail.

import pathlib
import sys

import hypothesis
import numpy as np
import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent.resolve()))

from Scorer import Scorer  # noqa: E402
from grid.gridModel import Bus, BusKind, Grid, Line, line_flows, save_grid, steady_state  # noqa: E402

hypothesis.settings.register_profile("swingscreen", max_examples=40, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile("swingscreen")


def _bus(id, inertia, damping, injection):
    kind = BusKind.GENERATOR if injection > 0 else BusKind.LOAD
    return Bus(id, kind, inertia, damping, injection)


def make_two_bus(limit=1.5):
    buses = (_bus(0, 1.0, 1.0, 1.0), _bus(1, 1.5, 1.2, -1.0))
    return Grid(buses, (Line(0, 1, 2.0, limit),), 0)


def make_ring(limit=1.0):
    buses = (
        _bus(0, 1.2, 0.40, 1.0),
        _bus(1, 1.5, 0.30, -0.4),
        _bus(2, 1.8, 0.50, 0.6),
        _bus(3, 1.1, 0.35, -1.2),
    )
    lines = (
        Line(0, 1, 1.5, limit),
        Line(1, 2, 2.0, limit),
        Line(2, 3, 1.2, limit),
        Line(3, 0, 2.5, limit),
    )
    return Grid(buses, lines, 0)


MESH_CHORDS = ((0, 5), (2, 7), (4, 9))


def make_mesh(seed=11, margin=1.25):
    """Ten buses on a ring with three chords, limits a margin above the steady flows."""
    rng = np.random.default_rng(seed)
    inertia = rng.uniform(1.0, 2.0, 10)
    damping = rng.uniform(0.2, 0.6, 10)
    injection = rng.normal(0.0, 0.8, 10)
    injection -= injection.mean()
    pairs = [(k, (k + 1) % 10) for k in range(10)] + list(MESH_CHORDS)
    stiffness = rng.uniform(1.0, 3.0, len(pairs))

    buses = tuple(_bus(k, inertia[k], damping[k], injection[k]) for k in range(10))
    loose = Grid(buses, tuple(Line(i, j, b, 1e6) for (i, j), b in zip(pairs, stiffness)), 0)
    flows = np.abs(line_flows(loose, steady_state(loose)))
    limits = np.maximum(margin * flows, 0.05)
    lines = tuple(Line(i, j, b, limit) for (i, j), b, limit in zip(pairs, stiffness, limits))
    return Grid(buses, lines, 0)


@pytest.fixture
def two_bus():
    return make_two_bus()


@pytest.fixture
def ring():
    return make_ring()


@pytest.fixture
def mesh():
    return make_mesh()


@pytest.fixture
def ring_file(tmp_path):
    path = tmp_path / "ring.json"
    save_grid(make_ring(), path)
    return path


@pytest.fixture
def two_bus_file(tmp_path):
    path = tmp_path / "two_bus.json"
    save_grid(make_two_bus(), path)
    return path


class DurationScorer(Scorer):
    """S = tau when the scored line faults, else 0.

    Under the nominal law (weights w, rate lambda) P(S >= gamma) is
    w[line] * exp(-lambda * gamma).
    """

    def __init__(self, n_lines, line=0):
        super().__init__("duration", n_lines, None)
        self.line = line

    def score(self, batch):
        return np.where(batch.lines == self.line, batch.durations, 0.0)


@pytest.fixture
def duration_scorer():
    return DurationScorer(2, 0)
