import numpy as np
import pytest

from Scorer import Scorer
from conftest import DurationScorer, make_ring, make_two_bus
from errors import EmptyEliteError, ValidationError, ZeroDensityError
from grid.faultModel import FaultKind, NominalLaw, ProposalLaw, ScenarioBatch
from risk.indicators import RiskZone
from risk.riskEngine import (
    DURATION_COLUMNS, RiskEstimate, assess_risk, assess_risk_by_duration, assess_risk_mc, ce_optimize,
    convergence_study, draw_batch, duration_edges, is_estimate, likelihood_ratio, mc_estimate, nominal_proposal,
    risk_by_duration, smallest_converged, study_frame,
)
from risk.screening import duration_sweep
from solvers.dynamics import ContingencySolver
from utils.config import RiskConfig

# tail of the duration scorer on two lines, rate 1, gamma 5
TOY_Q = 0.5 * np.exp(-5.0)


def test_draw_batch_is_reproducible_and_sized():
    law = NominalLaw.uniform(3, 0.5).as_proposal()
    first = draw_batch(law, 2500, 3)
    second = draw_batch(law, 2500, 3)

    assert len(first) == 2500
    assert np.array_equal(first.lines, second.lines)
    assert np.array_equal(first.durations, second.durations)


def test_mc_certain_event():
    scorer = DurationScorer(2, line=5)

    estimate = mc_estimate(scorer, NominalLaw.uniform(2, 1.0), 0.0, 100, 0)

    assert estimate.probability == 1.0
    assert estimate.stderr == 0.0


def test_mc_impossible_event():
    estimate = mc_estimate(DurationScorer(2), NominalLaw.uniform(2, 1.0), 1e9, 1000, 0)

    assert estimate.probability == 0.0


def test_mc_exponential_tail():
    estimate = mc_estimate(DurationScorer(1), NominalLaw.uniform(1, 0.1), 10.0, 100_000, 11)

    assert abs(estimate.probability - np.exp(-1)) <= 4 * estimate.stderr
    assert estimate.stderr == pytest.approx(np.sqrt(estimate.probability * (1 - estimate.probability) / 100_000))
    assert estimate.method == "mc"


def test_mc_rejects_bad_arguments():
    with pytest.raises(ValidationError):
        mc_estimate(DurationScorer(2), NominalLaw.uniform(2, 1.0), 1.0, 0, 0)
    with pytest.raises(ValidationError):
        mc_estimate(DurationScorer(2), NominalLaw.uniform(2, 1.0), -1.0, 10, 0)


def test_ce_on_a_single_line():
    proposal = ce_optimize(DurationScorer(1), NominalLaw.uniform(1, 1.0), 5.0, size=1000, seed=1)

    assert proposal.iterations >= 1
    assert all(np.allclose(iteration.weights, [1.0]) for iteration in proposal.history)


def test_ce_tilts_towards_the_rare_event():
    nominal = NominalLaw.uniform(2, 1.0)
    proposal = ce_optimize(DurationScorer(2), nominal, 5.0, size=1000, seed=2)

    assert proposal.converged
    assert proposal.levels[-1] == 5.0
    assert np.all(np.diff(proposal.levels) >= 0)
    assert proposal.weights[0] > 0.9
    assert proposal.rates[0] < 1.0
    assert proposal.samples_used == 1000 * proposal.iterations
    # every update keeps the mixture floor
    for iteration in proposal.history:
        assert iteration.weights.min() >= 0.01 / 2 - 1e-12


def test_ce_level_is_capped_at_gamma():
    proposal = ce_optimize(DurationScorer(1), NominalLaw.uniform(1, 1.0), 0.1, size=500, seed=3)

    assert proposal.levels == [0.1]


def test_ce_elite_above_the_zero_atom_is_strict():
    # one line in twenty overloads, so the first quantile sits on S = 0
    proposal = ce_optimize(DurationScorer(20), NominalLaw.uniform(20, 1.0), 3.0, size=1000, seed=4)

    first = proposal.history[0]
    assert first.quantile == 0.0
    assert 0 < first.n_elite < 100
    assert first.weights[0] > 0.5
    # stops on the first iteration that reaches gamma
    assert proposal.levels[-1] == 3.0
    assert all(level < 3.0 for level in proposal.levels[:-1])


def test_ce_without_any_overload_has_no_elite():
    with pytest.raises(EmptyEliteError):
        ce_optimize(DurationScorer(2, line=5), NominalLaw.uniform(2, 1.0), 5.0, size=200, seed=0)


def test_ce_validates_its_settings():
    with pytest.raises(ValidationError):
        ce_optimize(DurationScorer(2), NominalLaw.uniform(2, 1.0), 5.0, rho=0.0)
    with pytest.raises(ValidationError):
        ce_optimize(DurationScorer(2), NominalLaw.uniform(2, 1.0), 5.0, size=50)


def test_ce_is_deterministic():
    nominal = NominalLaw.uniform(2, 1.0)
    first = ce_optimize(DurationScorer(2), nominal, 5.0, size=500, seed=8)
    second = ce_optimize(DurationScorer(2), nominal, 5.0, size=500, seed=8)

    assert np.array_equal(first.weights, second.weights)
    assert np.array_equal(first.rates, second.rates)


def test_nominal_proposal_reproduces_monte_carlo():
    scorer, nominal = DurationScorer(2), NominalLaw.uniform(2, 0.5)

    plain = mc_estimate(scorer, nominal, 2.0, 3000, 4)
    weighted = is_estimate(scorer, nominal_proposal(nominal), nominal, 2.0, 3000, 4)

    assert weighted.probability == pytest.approx(plain.probability, rel=1e-12)
    assert weighted.stderr == pytest.approx(plain.stderr, rel=1e-9)


def test_importance_sampling_reduces_variance():
    scorer, nominal = DurationScorer(2), NominalLaw.uniform(2, 1.0)
    proposal = ce_optimize(scorer, nominal, 5.0, size=1000, seed=5)
    estimate = is_estimate(scorer, proposal, nominal, 5.0, 5000, 6)

    assert abs(estimate.probability - TOY_Q) <= 4 * estimate.stderr
    # plain MC with the same total budget, CE iterations included
    mc_stderr = np.sqrt(TOY_Q * (1 - TOY_Q) / estimate.total_samples)
    assert estimate.stderr <= mc_stderr / np.sqrt(5)


def test_importance_sampling_is_unbiased():
    scorer, nominal = DurationScorer(2), NominalLaw.uniform(2, 1.0)
    law = ProposalLaw([0.9, 0.1], [0.2, 1.0])
    estimates = [is_estimate(scorer, law, nominal, 5.0, 200, seed).probability for seed in range(200)]

    spread = np.std(estimates) / np.sqrt(len(estimates))
    assert abs(np.mean(estimates) - TOY_Q) <= 3.5 * spread


def test_zero_proposal_density_is_fatal():
    batch = ScenarioBatch(np.array([1]), np.array([1.0]))

    with pytest.raises(ZeroDensityError):
        likelihood_ratio(batch, NominalLaw.uniform(2, 1.0), ProposalLaw([1.0, 0.0], [1.0, 1.0]))


def test_half_width():
    estimate = RiskEstimate(None, 5.0, 0.02, 0.001, 100, "mc")

    assert estimate.half_width() == pytest.approx(1.959964 * 0.001, rel=1e-6)
    assert estimate.relative_half_width() == pytest.approx(1.959964 * 0.05, rel=1e-6)
    assert RiskEstimate(None, 5.0, 0.0, 0.0, 100, "mc").relative_half_width() == np.inf


def small_config(**overrides):
    settings = dict(gamma=0.5, T=5.0, dt=0.05, n_per_iter=100, n_final=200, max_iter=5, seed=3)
    settings.update(overrides)
    return RiskConfig(**settings)


def test_kernel_without_overloads_is_all_green():
    report = assess_risk(make_ring(limit=1e6), small_config())

    assert report.global_estimate.probability == 0.0
    assert all(row.estimate.probability == 0.0 for row in report.lines)
    assert all(row.zone == RiskZone.GREEN for row in report.lines)
    # no elite ever forms, sampling falls back to the nominal law
    assert report.proposal.iterations == 0


def test_kernel_reports_every_monitored_line():
    grid = make_ring()
    report = assess_risk(grid, small_config())

    assert [row.line for row in report.lines] == [0, 1, 2, 3]
    assert [row.label for row in report.lines] == ["0-1", "1-2", "2-3", "3-0"]
    assert report.global_estimate.target is None
    assert set(report.timings) == {"base_decomposition", "cross_entropy", "importance_sampling"}
    ranked = [row.estimate.probability for row in report.ranked()]
    assert ranked == sorted(ranked, reverse=True)


def test_kernel_is_deterministic():
    grid = make_ring()
    first = assess_risk(grid, small_config())
    second = assess_risk(grid, small_config())

    assert first.global_estimate.probability == second.global_estimate.probability
    assert [row.estimate.probability for row in first.lines] == [row.estimate.probability for row in second.lines]
    assert np.array_equal(first.proposal.weights, second.proposal.weights)


def test_kernel_with_worker_threads_matches_serial():
    grid = make_ring()
    serial = assess_risk(grid, small_config())
    threaded = assess_risk(grid, small_config(workers=3))

    assert threaded.global_estimate.probability == serial.global_estimate.probability


def test_per_line_reoptimization():
    report = assess_risk(make_ring(), small_config(per_line=True, max_iter=3, n_final=100))

    assert len(report.lines) == 4
    assert all(row.estimate.method == "ce" for row in report.lines)
    assert all(row.estimate.target == row.line for row in report.lines)


def test_ce_and_mc_agree_on_two_buses():
    grid = make_two_bus()
    config = RiskConfig(gamma=1.0, lambda_nominal=1.0, T=10.0, dt=0.02, n_per_iter=500, n_final=2000, seed=7)

    tilted = assess_risk(grid, config).global_estimate
    plain = assess_risk_mc(grid, config.replace(n_final=4000, seed=8)).global_estimate

    assert 0 < plain.probability < 1
    combined = np.sqrt(tilted.stderr ** 2 + plain.stderr ** 2)
    assert abs(tilted.probability - plain.probability) <= 4 * combined


def test_convergence_study_rows():
    scorer, nominal = DurationScorer(2), NominalLaw.uniform(2, 1.0)
    config = RiskConfig(n_per_iter=500, seed=1)

    rows = convergence_study(scorer, nominal, 5.0, [500, 4000], config)

    assert [(row.method, row.n) for row in rows] == [("ce", 500), ("mc", 500), ("ce", 4000), ("mc", 4000)]
    assert all(row.total_samples > row.n for row in rows if row.method == "ce")
    assert all(row.total_samples == row.n for row in rows if row.method == "mc")
    ce = smallest_converged(rows, "ce")
    assert ce is not None and ce.relative_half_width <= 0.3


def test_study_frame_columns():
    rows = convergence_study(DurationScorer(2), NominalLaw.uniform(2, 1.0), 5.0, [500], RiskConfig(n_per_iter=200))

    frame = study_frame(rows)
    assert frame["method"].tolist() == ["ce", "mc"]
    assert frame["q_hat"].tolist() == [row.probability for row in rows]


@pytest.mark.parametrize("gamma", [5.0, 10.0, 30.0])
def test_exponential_tail_at_several_thresholds(gamma):
    scorer, nominal = DurationScorer(1), NominalLaw.uniform(1, 0.1)
    exact = np.exp(-0.1 * gamma)

    plain = mc_estimate(scorer, nominal, gamma, 20_000, 21)
    assert abs(plain.probability - exact) <= 3 * plain.stderr

    proposal = ce_optimize(scorer, nominal, gamma, size=1000, seed=22)
    tilted = is_estimate(scorer, proposal, nominal, gamma, 5000, 23)
    assert abs(tilted.probability - exact) <= 3 * tilted.stderr


class SteppedDurationScorer(DurationScorer):
    """Fault duration rounded down to a multiple of `step` on the scored line."""

    def __init__(self, n_lines, line=0, step=0.05):
        super().__init__(n_lines, line)
        self.step = step

    def score(self, batch):
        return np.floor(super().score(batch) / self.step) * self.step


def enumerate_tail(scorer, nominal, gamma, cutoff=1000.0):
    """P(S >= gamma) summed over every (line, duration cell) of the stepped law."""
    starts = np.arange(0.0, cutoff, scorer.step)
    total = 0.0
    rate = nominal.rate
    for line, weight in enumerate(nominal.weights):
        mass = np.exp(-rate * starts) - np.exp(-rate * (starts + scorer.step))
        # scored at the midpoint, which floors to the cell start
        cell = ScenarioBatch(np.full(len(starts), line), starts + scorer.step / 2)
        total += weight * mass[scorer(cell) >= gamma].sum()
    return total


def test_enumeration_matches_the_continuous_tail():
    scorer, nominal = SteppedDurationScorer(2, 0), NominalLaw.uniform(2, 0.1)

    for gamma in (5.02, 10.0, 30.0):
        assert enumerate_tail(scorer, nominal, gamma) == pytest.approx(0.5 * np.exp(-0.1 * gamma), rel=1e-2)


def test_importance_sampling_matches_enumeration():
    scorer, nominal = SteppedDurationScorer(2, 0), NominalLaw.uniform(2, 0.1)
    gamma = 10.02
    exact = enumerate_tail(scorer, nominal, gamma)

    proposal = ce_optimize(scorer, nominal, gamma, size=1000, seed=31)
    estimate = is_estimate(scorer, proposal, nominal, gamma, 20_000, 32)

    assert abs(estimate.probability - exact) <= 3 * estimate.stderr
    assert estimate.relative_half_width() <= 5e-2


class SweepScorer(Scorer):
    """Global overload time interpolated from a three-phase duration sweep of a grid."""

    def __init__(self, grid, durations, horizon, step):
        super().__init__("sweep", grid.n_lines)
        table = duration_sweep(ContingencySolver(grid, horizon, step), FaultKind.THREE_PHASE, durations)
        table = table[grid.monitored[table["line"].to_numpy()]]
        self.durations = np.asarray(durations, dtype=float)
        self.overload = table.groupby(["faulted", "tau"])["S"].sum().unstack().to_numpy()

    def score(self, batch):
        scores = np.empty(len(batch))
        for line in range(self.n_lines):
            chosen = batch.lines == line
            scores[chosen] = np.interp(batch.durations[chosen], self.durations, self.overload[line])
        return scores


def test_cross_entropy_beats_monte_carlo_on_a_stressed_ring():
    # outages of lines 2-3 and 3-0 push 1.2 through the other one, above 1.05
    grid = make_ring(limit=1.05)
    scorer = SweepScorer(grid, np.linspace(0.25, 60.0, 240), 60.0, 0.05)
    nominal = NominalLaw.uniform(grid.n_lines, 0.1)

    calibration = draw_batch(nominal.as_proposal(), 1_000_000, 41)
    gamma = float(np.quantile(scorer(calibration), 1 - 3e-3))
    truth = mc_estimate(scorer, nominal, gamma, 1_000_000, 42)
    assert 2e-3 <= truth.probability <= 4e-3

    proposal = ce_optimize(scorer, nominal, gamma, size=300, seed=43)
    tilted = is_estimate(scorer, proposal, nominal, gamma, 1000, 44)

    combined = np.sqrt(tilted.stderr ** 2 + truth.stderr ** 2)
    assert abs(tilted.probability - truth.probability) <= 3 * combined
    assert tilted.relative_half_width() <= 0.3
    # plain MC needs (z / 0.3)^2 (1 - Q) / Q samples for the same relative half-width
    q = truth.probability
    mc_needed = (1.959964 / 0.3) ** 2 * (1 - q) / q
    assert tilted.total_samples <= mc_needed / 5


def test_duration_table_from_a_known_profile():
    grid = make_ring()
    batch = ScenarioBatch(np.array([0, 1, 2, 3, 0, 1]), np.array([0.5, 1.5, 1.2, 2.5, 7.0, 0.1]))
    # line 2 is overloaded exactly as long as the fault lasts, the rest never
    profile = np.zeros((6, 4))
    profile[:, 2] = batch.durations

    table = risk_by_duration(batch, profile, grid, 1.0, duration_edges(3.0, 3))

    assert list(table.columns) == DURATION_COLUMNS
    line_2 = table[table["line"] == 2]
    assert line_2["tau_low"].tolist() == [0.0, 1.0, 2.0]
    assert line_2["n"].tolist() == [2, 2, 2]
    assert line_2["q_hat"].tolist() == [0.0, 1.0, 1.0]
    assert line_2["zone"].tolist() == ["green", "red", "red"]
    assert (table[table["line"] != 2]["q_hat"] == 0.0).all()


def test_duration_table_skips_empty_bins():
    grid = make_ring()
    batch = ScenarioBatch(np.array([0, 1]), np.array([0.2, 0.3]))

    table = risk_by_duration(batch, np.zeros((2, 4)), grid, 1.0, duration_edges(2.0, 4))

    assert set(table["tau_low"]) == {0.0}
    assert table["stderr"].tolist() == [0.0] * 4


def test_duration_edges_need_a_bin():
    with pytest.raises(ValidationError):
        duration_edges(5.0, 0)


def test_duration_kernel_counts_every_fault():
    config = small_config(n_final=150)

    table = assess_risk_by_duration(make_ring(), config, bins=5)

    assert table.groupby("tau_low")["n"].first().sum() == 150
    assert table.equals(assess_risk_by_duration(make_ring(), config, bins=5))
