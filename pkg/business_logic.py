"""
Business logic module v2.0
Wasserstein DRMDP certification toolkit
Experiment orchestration: sandwich, approximate, out-of-sample and robust value iteration runs
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ambiguity import AmbiguitySpec, DiscreteModelDistribution, EmpiricalDistribution, GroundNorm, build_empirical
from config import ExperimentConfig
from data_processor import DataProcessor
from errors import ParameterError, WdrmdpError
from estimation import count_transitions, estimate_tabular
from guarantees import RadiusSchedule, oos_experiment
from linear_approx import approx_dr_check
from mdp_core import Policy, TransitionModel, evaluate_policy, value_iteration
from oracles import simplex_product_grid
from regularization import lipschitz_constant, regularized_policy, sandwich_check
from robust_dp import UncertaintySet, robust_policy_evaluation, robust_value_iteration

# Logging setup
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

ORDER_SLACK = 1e-7
# An l1 row ball of radius 2 contains the whole simplex
FULL_SIMPLEX_RADIUS = 2.0


class ExperimentKind(Enum):
    SANDWICH = "sandwich"
    APPROX = "approx"
    OOS = "oos"
    ROBUST_VI = "robust-vi"


@dataclass
class ResultRecord:
    """
    One JSON line of experiment output

    Args:
        experiment: experiment kind
        digest: sha256 of the validated configuration
        outputs: numeric payload, deterministic for a given configuration
        passed: whether every asserted invariant held
        meta: design-decision readings in effect
        wall_clock: seconds spent, kept outside outputs
    """

    experiment: str
    digest: str
    outputs: Dict
    passed: bool
    meta: Dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def to_dict(self) -> Dict:
        return {
            "experiment": self.experiment,
            "digest": self.digest,
            "passed": self.passed,
            "outputs": self.outputs,
            "meta": self.meta,
            "wall_clock": self.wall_clock,
        }


class AtomSource:
    """Resolves the empirical atoms of an experiment"""

    @staticmethod
    def from_config(config: ExperimentConfig) -> Tuple[EmpiricalDistribution, str]:
        """
        Atoms listed under `models`, or one tabular estimate per episode of `episodes_csv`

        Returns:
            (empirical distribution, description of the source)
        """
        if config.models:
            return build_empirical(config.models), "models"
        success, logs, stats = DataProcessor().process_episode_file(config.episodes_csv, config.mdp)
        if not success:
            raise ParameterError(logs, "business_logic")
        if not logs:
            raise ParameterError(f"{config.episodes_csv} holds no episodes", "business_logic")
        fallback = TransitionModel.uniform(config.mdp.num_states, config.mdp.num_actions)
        estimates = [estimate_tabular(count_transitions(log, config.mdp), fallback) for log in logs]
        return build_empirical(estimates), f"episodes_csv ({stats['episodes']} episodes)"


class SpecBuilder:
    """Ambiguity specs for the radii requested in a configuration"""

    @staticmethod
    def sweep(config: ExperimentConfig) -> List[AmbiguitySpec]:
        n_s = config.mdp.num_states
        if config.alpha_grid:
            if config.radii is not None and config.aggregate == "explicit":
                return [AmbiguitySpec.from_radii(config.radii, config.norm, alpha) for alpha in config.alpha_grid]
            return [AmbiguitySpec.scalar(alpha, n_s, config.norm) for alpha in config.alpha_grid]
        if config.aggregate == "explicit":
            raise ParameterError("aggregate 'explicit' needs an alpha_grid", "business_logic")
        return [AmbiguitySpec.from_radii(config.radii, config.norm)]


class SandwichExperiment:
    """mean >= oracle >= dual >= mean - L alpha over an alpha sweep"""

    @staticmethod
    def run(config: ExperimentConfig) -> Tuple[Dict, bool, Dict]:
        mdp = config.mdp
        emp, source = AtomSource.from_config(config)
        specs = SpecBuilder.sweep(config)
        constant = lipschitz_constant(mdp, config.norm)
        policy_rule = "configured"
        pi = config.policy
        if pi is None:
            # L * alpha is the same for every policy, so one argmax serves the whole sweep
            pi, _ = regularized_policy(mdp, emp, constant, specs[0].scalar_radius)
            policy_rule = "regularized_argmax (alpha independent)"
        grid = simplex_product_grid(mdp, pi, config.oracle_step, emp.atoms)
        logger.info(f"sandwich: {emp.n} atoms, {grid.shape[0]} support models, {len(specs)} radii")

        sweep = []
        for spec in specs:
            reports = [sandwich_check(mdp, pi, emp, spec, s, grid, config.lambda_grid) for s in config.states]
            sweep.append({"alpha": spec.scalar_radius, "states": [r.to_dict() for r in reports]})
        passed = all(state["passed"] for point in sweep for state in point["states"])
        outputs = {"policy": pi.actions.tolist(), "beta": constant.beta, "l_value": constant.l_value,
                   "sweep": sweep}
        meta = {**specs[0].metadata(), "atoms": source, "policy_rule": policy_rule,
                "policy_alpha": specs[0].scalar_radius if config.policy is None else None,
                "oracle_step": config.oracle_step, "oracle_method": "hull", "kappa_rule": "secant",
                "support_models": int(grid.shape[0])}
        return outputs, passed, meta


class ApproxExperiment:
    """Approximate DR lower bound per state"""

    @staticmethod
    def run(config: ExperimentConfig) -> Tuple[Dict, bool, Dict]:
        mdp = config.mdp
        emp, source = AtomSource.from_config(config)
        specs = SpecBuilder.sweep(config)
        spec = specs[-1]
        pi = config.policy if config.policy is not None else Policy(np.zeros(mdp.num_states, dtype=int))
        grid = simplex_product_grid(mdp, pi, config.oracle_step, emp.atoms)
        alphas = [s.scalar_radius for s in specs]
        reports = [approx_dr_check(mdp, pi, emp, spec, config.features, s, grid, alphas) for s in config.states]
        passed = all(r.passed for r in reports)
        outputs = {"policy": pi.actions.tolist(), "features": config.features.m,
                   "states": [r.to_dict() for r in reports]}
        meta = {**spec.metadata(), "atoms": source, "weight_rule": "value_projection", "eta_rule": "secant",
                "oracle_step": config.oracle_step}
        return outputs, passed, meta


class OosExperiment:
    """Monte Carlo coverage of the trained DR certificate"""

    @staticmethod
    def run(config: ExperimentConfig) -> Tuple[Dict, bool, Dict]:
        mdp = config.mdp
        true_mu = DiscreteModelDistribution(config.models, config.weights)
        oos = config.oos
        override = oos.get("radius_override")
        # fixed radii make the schedule unnecessary, including the unsupported m = 2 case
        schedule = RadiusSchedule.for_mdp(mdp, **config.schedule) if override is None else None
        report = oos_experiment(true_mu, mdp, schedule, oos["n_episodes"], oos["episode_len"], oos["trials"],
                                config.seed, config.norm, config.tol, oos["radius_scale"], override,
                                threads=config.threads, epsilon=config.schedule["epsilon"])
        outputs = {**report.to_dict(),
                   "margins": [r.margin for r in report.results],
                   "threshold_samples": schedule.threshold if schedule is not None else None}
        return outputs, report.passed, dict(report.meta)


class RobustViExperiment:
    """nominal >= robust >= full-simplex optimal values around the first model"""

    @staticmethod
    def run(config: ExperimentConfig) -> Tuple[Dict, bool, Dict]:
        mdp = config.mdp
        center = config.models[0] if config.models else AtomSource.from_config(config)[0].atoms[0]
        nominal, nominal_pi = value_iteration(mdp, center, config.tol)
        u = UncertaintySet.norm_ball(center, config.robust_radius, config.norm)
        robust, robust_pi = robust_value_iteration(mdp, u, config.tol)
        whole = UncertaintySet.norm_ball(center, FULL_SIMPLEX_RADIUS, GroundNorm.L1_PRODUCT)
        floor, _ = robust_value_iteration(mdp, whole, config.tol)
        nominal_of_robust = evaluate_policy(mdp, center, robust_pi, config.tol).values
        robust_of_robust = robust_policy_evaluation(mdp, u, robust_pi, config.tol).values

        passed = bool(np.all(nominal.values >= robust.values - ORDER_SLACK)
                      and np.all(robust.values >= floor.values - ORDER_SLACK)
                      and np.all(nominal_of_robust >= robust_of_robust - ORDER_SLACK))
        outputs = {
            "radius": config.robust_radius,
            "nominal": nominal.values.tolist(),
            "robust": robust.values.tolist(),
            "full_simplex": floor.values.tolist(),
            "nominal_policy": nominal_pi.actions.tolist(),
            "robust_policy": robust_pi.actions.tolist(),
            "robust_policy_nominal_value": nominal_of_robust.tolist(),
        }
        return outputs, passed, {"norm": config.norm.name, "rectangularity": "s,a"}


class ExperimentRunner:
    """Coordinates one configured experiment"""

    def __init__(self):
        self.handlers = {
            ExperimentKind.SANDWICH: SandwichExperiment(),
            ExperimentKind.APPROX: ApproxExperiment(),
            ExperimentKind.OOS: OosExperiment(),
            ExperimentKind.ROBUST_VI: RobustViExperiment(),
        }

    def run_experiment(self, config: ExperimentConfig) -> Tuple[bool, Union[ResultRecord, str], Dict]:
        """
        Execute the experiment named in the configuration

        Args:
            config: validated configuration

        Returns:
            (success, ResultRecord or error message, statistics)
        """
        try:
            kind = ExperimentKind(config.experiment)
            logger.info(f"starting {kind.value} experiment (seed {config.seed})")
            started = time.perf_counter()
            outputs, passed, meta = self.handlers[kind].run(config)
            elapsed = time.perf_counter() - started
            record = ResultRecord(kind.value, config.digest, outputs, bool(passed),
                                  {**meta, "seed": config.seed}, elapsed)
            stats = {"experiment": kind.value, "passed": record.passed, "seconds": elapsed}
            logger.info(f"{kind.value} experiment finished: {'PASS' if passed else 'FAIL'} in {elapsed:.2f}s")
            return True, record, stats
        except WdrmdpError as e:
            logger.error(f"experiment failed in {e.origin}: {e}")
            return False, e.describe(), {"origin": e.origin}
        except Exception as e:
            logger.error(f"experiment failed: {str(e)}")
            return False, f"[business_logic] {str(e)}", {"origin": "business_logic"}
