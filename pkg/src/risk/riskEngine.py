# Probability that a contingency overloads a line (or the monitored set)
# for at least gamma seconds.
#
# Plain Monte Carlo samples the nominal law. The cross-entropy method tilts
# a proposal law (line weights, per-line duration rates) towards the rare
# event and the final estimate reweights by nominal / proposal densities.

import logging
import time
from dataclasses import astuple, dataclass, field
from typing import Optional, Union

import numpy as np
import pandas as pd
from scipy import stats

from errors import EmptyEliteError, ValidationError, ZeroDensityError
from grid.faultModel import FaultKind, NominalLaw, ProposalLaw, ScenarioBatch, log_density, sample_batch
from grid.gridModel import Grid
from risk.indicators import CRITICAL_THRESHOLD, WARNING_THRESHOLD, RiskZone, classify_risk
from risk.scorers import OverloadScorer
from solvers.dynamics import ContingencySolver
from utils.config import RiskConfig

logger = logging.getLogger(__name__)

Seed = Union[int, np.random.SeedSequence]

ESS_WARNING = 0.01


@dataclass(frozen=True, eq=False)
class CEIteration:
    level: float
    quantile: float
    n_elite: int
    ess: float
    weights: np.ndarray
    rates: np.ndarray

    def to_record(self) -> dict:
        return {
            "level": self.level,
            "quantile": self.quantile,
            "n_elite": self.n_elite,
            "ess": self.ess,
            "weights": self.weights.tolist(),
            "rates": self.rates.tolist(),
        }


@dataclass(frozen=True, eq=False)
class ProposalParams:
    law: ProposalLaw
    history: tuple = ()
    converged: bool = False
    samples_used: int = 0

    @property
    def weights(self) -> np.ndarray:
        return self.law.weights

    @property
    def rates(self) -> np.ndarray:
        return self.law.rates

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def levels(self) -> list:
        return [iteration.level for iteration in self.history]

    def to_record(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "rates": self.rates.tolist(),
            "converged": self.converged,
            "samples_used": self.samples_used,
            "trace": [iteration.to_record() for iteration in self.history],
        }


@dataclass(frozen=True, eq=False)
class RiskEstimate:
    target: Optional[int]
    gamma: float
    probability: float
    stderr: float
    n_samples: int
    method: str
    proposal: Optional[ProposalParams] = None
    iterations: int = 0

    @property
    def total_samples(self) -> int:
        # CE pays for its iterations too
        extra = self.proposal.samples_used if self.proposal is not None else 0
        return self.n_samples + extra

    def half_width(self, confidence: float = 0.95) -> float:
        return float(stats.norm.ppf(0.5 + confidence / 2) * self.stderr)

    def relative_half_width(self, confidence: float = 0.95) -> float:
        if self.probability == 0:
            return np.inf
        return self.half_width(confidence) / self.probability

    def to_record(self) -> dict:
        return {
            "target": "global" if self.target is None else self.target,
            "gamma": self.gamma,
            "q_hat": self.probability,
            "stderr": self.stderr,
            "n": self.n_samples,
            "method": self.method,
            "iterations": self.iterations,
        }


@dataclass(frozen=True, eq=False)
class LineRisk:
    line: int
    label: str
    estimate: RiskEstimate
    zone: RiskZone


@dataclass(eq=False)
class RiskReport:
    lines: list
    global_estimate: RiskEstimate
    proposal: ProposalParams
    escalations: int
    seed: int
    config: RiskConfig
    timings: dict = field(default_factory=dict)

    def ranked(self) -> list:
        return sorted(self.lines, key=lambda row: (-row.estimate.probability, row.line))


def _sequence(seed: Seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def draw_batch(law: ProposalLaw, size: int, seed: Seed, kind: FaultKind = FaultKind.THREE_PHASE,
               chunk_size: int = 1000) -> ScenarioBatch:
    """Scenarios drawn chunk by chunk, one rng stream per chunk.

    The streams are spawned from the seed, so the batch does not depend on how
    many workers later score it.
    """
    chunks = max(1, -(-size // chunk_size))
    lines, durations = [], []
    for k, child in enumerate(_sequence(seed).spawn(chunks)):
        count = min(chunk_size, size - k * chunk_size)
        part = sample_batch(law, np.random.default_rng(child), count, kind)
        lines.append(part.lines)
        durations.append(part.durations)
    return ScenarioBatch(np.concatenate(lines), np.concatenate(durations), kind)


def _check(gamma: float, size: int) -> None:
    if size < 1:
        raise ValidationError(f"sample size must be >= 1, got {size}")
    if gamma < 0:
        raise ValidationError(f"gamma must be >= 0, got {gamma}")


def likelihood_ratio(batch: ScenarioBatch, nominal: NominalLaw, law: ProposalLaw) -> np.ndarray:
    proposal = log_density(batch.lines, batch.durations, law)
    if np.any(np.isneginf(proposal)):
        raise ZeroDensityError("a sampled scenario has zero proposal density")
    return np.exp(log_density(batch.lines, batch.durations, nominal.as_proposal()) - proposal)


def estimate_from(scores: np.ndarray, weights: np.ndarray, gamma: float, target: Optional[int],
                  method: str, proposal: Optional[ProposalParams] = None) -> RiskEstimate:
    values = (scores >= gamma) * weights
    probability = float(values.mean())
    stderr = float(values.std() / np.sqrt(len(values)))
    return RiskEstimate(target, gamma, min(probability, 1.0), stderr, len(values), method,
                        proposal, proposal.iterations if proposal is not None else 0)


def mc_estimate(scorer, nominal: NominalLaw, gamma: float, size: int, seed: Seed,
                kind: FaultKind = FaultKind.THREE_PHASE, chunk_size: int = 1000) -> RiskEstimate:
    _check(gamma, size)
    batch = draw_batch(nominal.as_proposal(), size, seed, kind, chunk_size)
    hits = scorer(batch) >= gamma
    probability = float(hits.mean())
    stderr = float(np.sqrt(probability * (1 - probability) / size))
    return RiskEstimate(scorer.target, gamma, probability, stderr, size, "mc")


def ce_optimize(scorer, nominal: NominalLaw, gamma: float, rho: float = 0.1, size: int = 1000,
                seed: Seed = 0, kind: FaultKind = FaultKind.THREE_PHASE, epsilon_mix: float = 0.01,
                smoothing: float = 0.7, max_iter: int = 50, tolerance: float = 1e-3,
                chunk_size: int = 1000) -> ProposalParams:
    """Fit the proposal law by iterated elite-weighted maximum likelihood.

    The level is min(gamma, (1 - rho)-quantile of the batch). Below gamma the
    elite is the strict set S > level rather than S >= level: overload times
    have an atom at zero, and a non-strict elite would keep refitting the
    whole batch while the quantile sits on that atom. Once the level reaches
    gamma the elite is S >= gamma.

    The loop stops as soon as the level reaches gamma; it does not wait for
    the parameters to settle there. It also stops when the largest relative
    parameter change drops below `tolerance`, and gives up with a warning
    after max_iter iterations.
    """
    if not 0 < rho < 1:
        raise ValidationError(f"rho must lie in (0, 1), got {rho}")
    if size < 100:
        raise ValidationError(f"at least 100 samples per iteration are needed, got {size}")
    _check(gamma, size)

    law = nominal.as_proposal()
    history = []
    converged = False
    sequences = _sequence(seed).spawn(max_iter)

    for iteration, sequence in enumerate(sequences, start=1):
        batch = draw_batch(law, size, sequence, kind, chunk_size)
        scores = scorer(batch)

        quantile = float(np.quantile(scores, 1 - rho))
        level = min(gamma, quantile)
        reached = level >= gamma
        elite = scores >= level if reached else scores > level
        if not elite.any():
            raise EmptyEliteError(
                f"no sample exceeds level {level:.4g} (gamma {gamma}); increase the sample size or lower gamma")

        weights = likelihood_ratio(batch, nominal, law) * elite
        ess = float(weights.sum() ** 2 / np.sum(weights ** 2))
        if ess < ESS_WARNING * size:
            logger.warning(f"CE iteration {iteration}: effective sample size {ess:.1f} of {size}")

        # closed-form weighted MLE of the categorical x exponential family
        line_mass = np.bincount(batch.lines, weights=weights, minlength=law.n_lines)
        duration_mass = np.bincount(batch.lines, weights=weights * batch.durations, minlength=law.n_lines)
        fitted_weights = line_mass / line_mass.sum()
        informed = (line_mass > 0) & (duration_mass > 0)
        fitted_rates = law.rates.copy()
        fitted_rates[informed] = line_mass[informed] / duration_mass[informed]

        new_weights = smoothing * fitted_weights + (1 - smoothing) * law.weights
        new_weights = (1 - epsilon_mix) * new_weights + epsilon_mix * nominal.weights
        new_weights = new_weights / new_weights.sum()
        new_rates = smoothing * fitted_rates + (1 - smoothing) * law.rates

        change = max(
            float(np.max(np.abs(new_weights - law.weights) / np.maximum(law.weights, np.finfo(float).tiny))),
            float(np.max(np.abs(new_rates - law.rates) / law.rates)),
        )
        law = ProposalLaw(new_weights, new_rates)
        history.append(CEIteration(level, quantile, int(elite.sum()), ess, new_weights, new_rates))
        logger.info(f"CE iteration {iteration}: level {level:.4g}, elite {int(elite.sum())}, "
                    f"ESS {ess:.1f}, change {change:.2e}")

        if reached or change < tolerance:
            converged = True
            break
    else:
        logger.warning(f"CE stopped after {max_iter} iterations without reaching gamma={gamma}")

    return ProposalParams(law, tuple(history), converged, size * len(history))


def is_estimate(scorer, proposal: Union[ProposalParams, ProposalLaw], nominal: NominalLaw, gamma: float,
                size: int, seed: Seed, kind: FaultKind = FaultKind.THREE_PHASE,
                chunk_size: int = 1000) -> RiskEstimate:
    _check(gamma, size)
    if isinstance(proposal, ProposalLaw):
        proposal = ProposalParams(proposal)
    batch = draw_batch(proposal.law, size, seed, kind, chunk_size)
    weights = likelihood_ratio(batch, nominal, proposal.law)
    return estimate_from(scorer(batch), weights, gamma, scorer.target, "ce", proposal)


def nominal_proposal(nominal: NominalLaw) -> ProposalParams:
    return ProposalParams(nominal.as_proposal())


def _optimize(scorer, nominal: NominalLaw, config: RiskConfig, seed: Seed) -> ProposalParams:
    try:
        return ce_optimize(scorer, nominal, config.gamma, config.rho, config.n_per_iter, seed,
                           config.fault_kind, config.epsilon_mix, config.smoothing, config.max_iter,
                           config.tolerance, config.chunk_size)
    except EmptyEliteError as error:
        # nothing ever overloads: the nominal law is as good as any
        logger.warning(f"{error}; sampling from the nominal law")
        return nominal_proposal(nominal)


def assess_risk(grid: Grid, config: RiskConfig) -> RiskReport:
    """End-to-end kernel: CE on the global indicator, then per-line IS estimates."""
    timings = {}
    clock = time.perf_counter()
    solver = ContingencySolver(grid, config.T, config.dt, config.method, config.m)
    timings["base_decomposition"] = time.perf_counter() - clock

    nominal = NominalLaw.uniform(grid.n_lines, config.lambda_nominal)
    scorer = OverloadScorer(solver, None, config.workers)
    ce_seed, final_seed, *line_seeds = _sequence(config.seed).spawn(2 + grid.n_lines)

    clock = time.perf_counter()
    proposal = _optimize(scorer, nominal, config, ce_seed)
    timings["cross_entropy"] = time.perf_counter() - clock

    clock = time.perf_counter()
    batch = draw_batch(proposal.law, config.n_final, final_seed, config.fault_kind, config.chunk_size)
    weights = likelihood_ratio(batch, nominal, proposal.law)
    profile = scorer.per_line(batch)
    global_estimate = estimate_from(scorer.from_profile(profile), weights, config.gamma, None, "ce", proposal)

    rows = []
    for line in np.flatnonzero(grid.monitored):
        line = int(line)
        if config.per_line:
            line_scorer = OverloadScorer(solver, line, config.workers)
            line_proposal = _optimize(line_scorer, nominal, config, line_seeds[line])
            estimate = is_estimate(line_scorer, line_proposal, nominal, config.gamma, config.n_final,
                                   line_seeds[line], config.fault_kind, config.chunk_size)
        else:
            estimate = estimate_from(profile[:, line], weights, config.gamma, line, "ce", proposal)
        zone = classify_risk(estimate.probability, config.warning_zone, config.critical_zone)
        rows.append(LineRisk(line, grid.line_label(line), estimate, zone))
    timings["importance_sampling"] = time.perf_counter() - clock

    logger.info(f"risk assessment done: global Q={global_estimate.probability:.4g} "
                f"+- {global_estimate.stderr:.2g}, {solver.escalations} escalations")
    return RiskReport(rows, global_estimate, proposal, solver.escalations, config.seed, config, timings)


def assess_risk_mc(grid: Grid, config: RiskConfig) -> RiskReport:
    """Plain Monte Carlo counterpart of assess_risk, same report shape."""
    timings = {}
    clock = time.perf_counter()
    solver = ContingencySolver(grid, config.T, config.dt, config.method, config.m)
    timings["base_decomposition"] = time.perf_counter() - clock

    nominal = NominalLaw.uniform(grid.n_lines, config.lambda_nominal)
    scorer = OverloadScorer(solver, None, config.workers)
    clock = time.perf_counter()
    _check(config.gamma, config.n_final)
    batch = draw_batch(nominal.as_proposal(), config.n_final, config.seed, config.fault_kind, config.chunk_size)
    profile = scorer.per_line(batch)
    ones = np.ones(len(batch))
    global_estimate = estimate_from(scorer.from_profile(profile), ones, config.gamma, None, "mc")

    rows = []
    for line in np.flatnonzero(grid.monitored):
        line = int(line)
        estimate = estimate_from(profile[:, line], ones, config.gamma, line, "mc")
        zone = classify_risk(estimate.probability, config.warning_zone, config.critical_zone)
        rows.append(LineRisk(line, grid.line_label(line), estimate, zone))
    timings["monte_carlo"] = time.perf_counter() - clock

    return RiskReport(rows, global_estimate, nominal_proposal(nominal), solver.escalations,
                      config.seed, config, timings)


DURATION_COLUMNS = ["tau_low", "tau_high", "line", "label", "n", "q_hat", "stderr", "zone"]


def duration_edges(horizon: float, bins: int) -> np.ndarray:
    if bins < 1:
        raise ValidationError(f"need at least one duration bin, got {bins}")
    return np.linspace(0.0, horizon, bins + 1)


def risk_by_duration(batch: ScenarioBatch, profile: np.ndarray, grid: Grid, gamma: float, edges: np.ndarray,
                     warning: float = WARNING_THRESHOLD, critical: float = CRITICAL_THRESHOLD) -> pd.DataFrame:
    """Per monitored line, the share of sampled faults in each duration bin
    that overload the line for at least gamma seconds, with its risk zone.

    Bins are [low, high); faults at or beyond the last edge fall in the last
    bin. Empty bins are left out.
    """
    edges = np.asarray(edges, dtype=float)
    index = np.clip(np.searchsorted(edges, batch.durations, side="right") - 1, 0, len(edges) - 2)
    rows = []
    for k in range(len(edges) - 1):
        inside = index == k
        count = int(inside.sum())
        if count == 0:
            logger.debug(f"no sampled fault lasts between {edges[k]:.3g} and {edges[k + 1]:.3g} s")
            continue
        for line in np.flatnonzero(grid.monitored):
            probability = float(np.mean(profile[inside, line] >= gamma))
            stderr = float(np.sqrt(probability * (1 - probability) / count))
            zone = classify_risk(probability, warning, critical)
            rows.append((float(edges[k]), float(edges[k + 1]), int(line), grid.line_label(line), count,
                         probability, stderr, zone.value))
    return pd.DataFrame(rows, columns=DURATION_COLUMNS)


def assess_risk_by_duration(grid: Grid, config: RiskConfig, bins: int = 10) -> pd.DataFrame:
    """Nominal-law sample of n_final faults, binned by duration over [0, T]."""
    edges = duration_edges(config.T, bins)
    _check(config.gamma, config.n_final)
    solver = ContingencySolver(grid, config.T, config.dt, config.method, config.m)
    scorer = OverloadScorer(solver, None, config.workers)
    nominal = NominalLaw.uniform(grid.n_lines, config.lambda_nominal)

    batch = draw_batch(nominal.as_proposal(), config.n_final, config.seed, config.fault_kind, config.chunk_size)
    table = risk_by_duration(batch, scorer.per_line(batch), grid, config.gamma, edges,
                             config.warning_zone, config.critical_zone)
    logger.info(f"duration risk table: {len(table)} rows from {len(batch)} faults, "
                f"{solver.escalations} escalations")
    return table


@dataclass(frozen=True)
class StudyRow:
    method: str
    n: int
    total_samples: int
    probability: float
    stderr: float
    relative_half_width: float
    converged: bool


def convergence_study(scorer, nominal: NominalLaw, gamma: float, sizes: list, config: RiskConfig,
                      relative_tolerance: float = 0.3) -> list:
    """MC and CE-IS at increasing sample sizes, flagging those within tolerance.

    One CE proposal is fitted and reused for every size; its iterations count
    towards the CE rows' total samples.
    """
    ce_seed, *seeds = _sequence(config.seed).spawn(1 + 2 * len(sizes))
    proposal = _optimize(scorer, nominal, config.replace(gamma=gamma), ce_seed)

    rows = []
    for k, size in enumerate(sizes):
        plain = mc_estimate(scorer, nominal, gamma, size, seeds[2 * k], config.fault_kind, config.chunk_size)
        tilted = is_estimate(scorer, proposal, nominal, gamma, size, seeds[2 * k + 1],
                             config.fault_kind, config.chunk_size)
        for estimate in (tilted, plain):
            spread = estimate.relative_half_width()
            rows.append(StudyRow(estimate.method, size, estimate.total_samples, estimate.probability,
                                 estimate.stderr, spread, bool(spread <= relative_tolerance)))
    return rows


def smallest_converged(rows: list, method: str) -> Optional[StudyRow]:
    for row in rows:
        if row.method == method and row.converged:
            return row
    return None


STUDY_COLUMNS = ["method", "n", "total_samples", "q_hat", "stderr", "relative_half_width", "converged"]


def study_frame(rows: list) -> pd.DataFrame:
    return pd.DataFrame([astuple(row) for row in rows], columns=STUDY_COLUMNS)
