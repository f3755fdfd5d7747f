"""
Guarantees module v1.0
Wasserstein DRMDP certification toolkit
Finite-sample radius schedule and the Monte Carlo out-of-sample coverage experiment
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ambiguity import AmbiguitySpec, DiscreteModelDistribution, GroundNorm, build_empirical
from errors import ParameterError, StructuralError, UnsupportedParameterError
from estimation import count_transitions, estimate_tabular, per_state_sample_counts, simulate_episode
from mdp_core import Policy, TabularMdp, TransitionModel, ValueTable, batch_policy_values
from robust_dp import dr_policy_iteration

# Logging setup
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

COVER_SLACK = 1e-9


@dataclass(frozen=True)
class RadiusSchedule:
    """
    alpha_s(n_s, eps) = c0 * (log(c1 / eps) / (n_s * c2))^(1 / max(m, 2)) once n_s >= C = log(c1 / eps) / c2,
    c0 below the threshold

    Args:
        c0: diameter constant
        c1, c2: concentration constants
        epsilon: confidence level in (0, 1)
        m: |S| * |A|, m = 2 is not supported
    """

    c0: float = 2.0
    c1: float = 2.0
    c2: float = 0.5
    epsilon: float = 0.1
    m: int = 4

    def __post_init__(self):
        for name in ("c0", "c1", "c2"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"schedule constant {name} must be positive", "guarantees")
        if not 0.0 < self.epsilon < 1.0:
            raise ParameterError(f"epsilon must lie in (0, 1), got {self.epsilon}", "guarantees")
        if self.m < 1:
            raise ParameterError(f"m must be a positive integer, got {self.m}", "guarantees")
        if self.m == 2:
            raise UnsupportedParameterError("radius schedule for m = 2 is not supported", "guarantees")
        if self.log_term <= 0:
            raise ParameterError(f"degenerate schedule: c1 / epsilon = {self.c1 / self.epsilon} <= 1", "guarantees")

    @classmethod
    def for_mdp(cls, mdp: TabularMdp, c0: float = 2.0, c1: float = 2.0, c2: float = 0.5,
                epsilon: float = 0.1) -> "RadiusSchedule":
        return cls(c0=c0, c1=c1, c2=c2, epsilon=epsilon, m=mdp.num_states * mdp.num_actions)

    @property
    def log_term(self) -> float:
        return float(np.log(self.c1 / self.epsilon))

    @property
    def threshold(self) -> float:
        """C_m^eps = log(c1 / eps) / c2"""
        return self.log_term / self.c2

    @property
    def exponent(self) -> float:
        return 1.0 / max(self.m, 2)


def radius(schedule: RadiusSchedule, n_s: Union[int, float, np.ndarray]) -> Union[float, np.ndarray]:
    """
    Wasserstein radius at a state with n_s samples

    Args:
        schedule: radius schedule
        n_s: sample count, scalar or array

    Returns:
        alpha_s, same shape as n_s
    """
    counts = np.asarray(n_s, dtype=float)
    if np.any(counts < 0) or np.any(np.isnan(counts)):
        raise ParameterError(f"sample counts must be nonnegative, got {n_s}", "guarantees")
    above = (counts >= schedule.threshold) & (counts > 0)
    safe = np.where(above, counts, 1.0)
    shrunk = schedule.c0 * (schedule.log_term / (safe * schedule.c2)) ** schedule.exponent
    out = np.where(above, shrunk, schedule.c0)
    return float(out) if out.ndim == 0 else out


def wilson_interval(successes: int, total: int, z: float = 1.96) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion"""
    if total <= 0:
        raise ParameterError("Wilson interval needs at least one trial", "guarantees")
    p = successes / total
    z2 = z * z
    denom = 1.0 + z2 / total
    center = (p + z2 / (2.0 * total)) / denom
    margin = z * np.sqrt(p * (1.0 - p) / total + z2 / (4.0 * total * total)) / denom
    return max(0.0, center - margin), min(1.0, center + margin)


@dataclass
class OosTrialResult:
    """One trial: trained DR certificate against the true mixture performance of the trained policy"""

    trial_id: int
    certificate: ValueTable
    true_performance: ValueTable
    covered: bool
    policy: Optional[Policy] = None
    radii: Optional[np.ndarray] = None

    @property
    def margin(self) -> float:
        return float(np.min(self.true_performance.values - self.certificate.values))


@dataclass
class OosReport:
    """Coverage summary of the out-of-sample experiment"""

    trials: int
    covered: int
    coverage: float
    wilson_low: float
    wilson_high: float
    epsilon: float
    pass_threshold: float
    passed: bool
    results: List[OosTrialResult] = field(default_factory=list)
    meta: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "trials": self.trials,
            "covered": self.covered,
            "coverage": self.coverage,
            "wilson_low": self.wilson_low,
            "wilson_high": self.wilson_high,
            "epsilon": self.epsilon,
            "pass_threshold": self.pass_threshold,
            "passed": self.passed,
            "min_margin": min(r.margin for r in self.results),
        }


def _run_trial(trial_id: int, true_mu: DiscreteModelDistribution, mdp: TabularMdp,
               schedule: Optional[RadiusSchedule], n_episodes: int, episode_len: int, seed: int,
               norm: GroundNorm, tol: float, radius_scale: float, radius_override: Optional[Sequence[float]],
               behavior: Optional[Policy]) -> OosTrialResult:
    rng = np.random.default_rng(np.random.SeedSequence([seed, trial_id]))
    fallback = TransitionModel.uniform(mdp.num_states, mdp.num_actions)
    counts, estimates = [], []
    for i in range(n_episodes):
        j = int(rng.choice(true_mu.size, p=true_mu.weights))
        log = simulate_episode(mdp, true_mu.atoms[j], episode_len, rng, behavior=behavior, episode_id=i)
        tensor = count_transitions(log, mdp)
        counts.append(tensor)
        estimates.append(estimate_tabular(tensor, fallback))

    if radius_override is not None:
        radii = np.broadcast_to(np.asarray(radius_override, dtype=float), (mdp.num_states,)).copy()
    else:
        radii = radius(schedule, per_state_sample_counts(counts, mdp.num_states)) * radius_scale
    spec = AmbiguitySpec.from_radii(radii, norm)
    emp = build_empirical(estimates)

    certificate, policy = dr_policy_iteration(mdp, emp, spec, tol)
    true_values = true_mu.weights @ batch_policy_values(mdp, true_mu.stacked(), policy)
    truth = ValueTable(true_values)
    covered = bool(np.min(true_values - certificate.values) >= -COVER_SLACK)
    return OosTrialResult(trial_id, certificate, truth, covered, policy, radii)


def oos_experiment(true_mu: DiscreteModelDistribution, mdp: TabularMdp, schedule: Optional[RadiusSchedule],
                   n_episodes: int, episode_len: int, trials: int, seed: int,
                   norm: GroundNorm = GroundNorm.L1_PRODUCT, tol: float = 1e-8, radius_scale: float = 1.0,
                   radius_override: Optional[Sequence[float]] = None, behavior: Optional[Policy] = None,
                   threads: int = 1, epsilon: Optional[float] = None) -> OosReport:
    """
    Monte Carlo estimate of the probability that the trained certificate holds out of sample

    Each trial draws a model per episode from true_mu, simulates and estimates the episodes,
    sets per-state radii from the schedule, trains a policy by DR policy iteration and compares
    its DR value with the exact mixture value sum_j w_j v_{p_j}.

    Args:
        true_mu: generating distribution over transition models
        mdp: MDP backbone
        schedule: radius schedule, may be None when radius_override is given
        n_episodes: episodes per trial
        episode_len: transitions per episode
        trials: number of Monte Carlo trials
        seed: master seed, trial t uses SeedSequence([seed, t])
        norm: ground norm
        tol: DR evaluation accuracy
        radius_scale: multiplier applied to scheduled radii
        radius_override: fixed per-state radii replacing the schedule
        behavior: logging policy, uniform random if omitted
        threads: worker threads for trials
        epsilon: confidence level when no schedule is given, defaults to the schedule's

    Returns:
        OosReport with coverage, Wilson 95% interval and the 1 - eps - 3 sigma pass rule
    """
    if trials < 1:
        raise ParameterError(f"trials must be at least 1, got {trials}", "guarantees")
    if n_episodes < 1 or episode_len < 1:
        raise ParameterError("n_episodes and episode_len must be positive", "guarantees")
    if true_mu.shape != (mdp.num_states, mdp.num_actions, mdp.num_states):
        raise StructuralError(f"generating models have shape {true_mu.shape}", "guarantees")
    if schedule is None and radius_override is None:
        raise ParameterError("a radius schedule or radius_override is required", "guarantees")
    if epsilon is None and schedule is not None:
        epsilon = schedule.epsilon
    if epsilon is None or not 0.0 < epsilon < 1.0:
        raise ParameterError(f"epsilon must lie in (0, 1), got {epsilon}", "guarantees")
    if radius_override is None and schedule.m != mdp.num_states * mdp.num_actions:
        raise StructuralError(f"schedule m={schedule.m} but |S||A|={mdp.num_states * mdp.num_actions}", "guarantees")

    args = (true_mu, mdp, schedule, n_episodes, episode_len, seed, norm, tol, radius_scale, radius_override, behavior)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda t: _run_trial(t, *args), range(trials)))
    else:
        results = [_run_trial(t, *args) for t in range(trials)]
    results.sort(key=lambda r: r.trial_id)

    covered = sum(r.covered for r in results)
    coverage = covered / trials
    low, high = wilson_interval(covered, trials)
    sigma = np.sqrt(epsilon * (1.0 - epsilon) / trials)
    threshold = 1.0 - epsilon - 3.0 * sigma
    logger.info(f"out-of-sample coverage {covered}/{trials} = {coverage:.4f} (threshold {threshold:.4f})")
    return OosReport(
        trials=trials, covered=covered, coverage=coverage, wilson_low=low, wilson_high=high,
        epsilon=epsilon, pass_threshold=float(threshold), passed=bool(coverage >= threshold),
        results=results,
        meta={"policy_reading": "train_then_evaluate", "norm": norm.name,
              "radius_rule": "override" if radius_override is not None else f"schedule x {radius_scale}"},
    )
