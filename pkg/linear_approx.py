"""
Linear approximation module v1.0
Wasserstein DRMDP certification toolkit
Linear value approximation Phi(s)^T w_p, least-squares weight fitting and the
lower-bound certifier for approximate DR values
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ambiguity import AmbiguitySpec, EmpiricalDistribution
from errors import ParameterError, StructuralError
from mdp_core import MdpValidator, Policy, TabularMdp, TransitionModel, batch_policy_values, evaluate_policy
from robust_dp import ModelGrid, stack_models, transport_costs, worst_case_mixture

# Logging setup
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

RANK_TOL = 1e-10
MONOTONE_SLACK = 1e-9


@dataclass(frozen=True)
class FeatureMatrix:
    """Features Phi, row s = Phi(s)^T, full column rank"""

    phi: np.ndarray

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        if phi.ndim != 2 or phi.shape[1] < 1:
            raise StructuralError(f"feature matrix must be |S| x m, got shape {phi.shape}", "linear_approx")
        singular = np.linalg.svd(phi, compute_uv=False)
        if phi.shape[1] > phi.shape[0] or singular.min() <= RANK_TOL * singular.max():
            raise StructuralError(f"feature columns are linearly dependent (m={phi.shape[1]})", "linear_approx")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    @property
    def m(self) -> int:
        return int(self.phi.shape[1])

    @property
    def num_states(self) -> int:
        return int(self.phi.shape[0])

    def projection(self) -> np.ndarray:
        """Hat matrix Phi (Phi^T Phi)^{-1} Phi^T"""
        return self.phi @ np.linalg.pinv(self.phi)


@dataclass(frozen=True)
class WeightVector:
    """Fitted weights w_p with the least-squares residual v - Phi w"""

    w: np.ndarray
    residual: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ParameterError("weights must be finite", "linear_approx")
        object.__setattr__(self, "w", w)

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residual))


@dataclass
class ApproxReport:
    """Approximate DR lower bound at one state over an alpha sweep"""

    state: int
    alpha: float
    lhs: float
    rhs_mean: float
    eta_estimate: float
    alphas: List[float]
    lhs_curve: List[float]
    eta_curve: List[float]
    passed: bool
    meta: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "state": self.state,
            "alpha": self.alpha,
            "lhs": self.lhs,
            "rhs_mean": self.rhs_mean,
            "eta_estimate": self.eta_estimate,
            "alphas": self.alphas,
            "lhs_curve": self.lhs_curve,
            "eta_curve": self.eta_curve,
            "passed": self.passed,
        }


def fit_weights(mdp: TabularMdp, p: TransitionModel, pi: Policy, phi: FeatureMatrix,
                tol: float = 1e-10) -> WeightVector:
    """
    Least-squares projection of the exact value onto the feature span

    Args:
        mdp: MDP backbone
        p: transition model
        pi: evaluated policy
        phi: features with full column rank
        tol: accuracy of the evaluated value

    Returns:
        w = argmin ||Phi w - v_p^pi||_2 and its residual
    """
    MdpValidator.check(mdp, p, pi)
    if phi.num_states != mdp.num_states:
        raise StructuralError(f"features cover {phi.num_states} states, MDP has {mdp.num_states}", "linear_approx")
    v = evaluate_policy(mdp, p, pi, tol).values
    w, *_ = np.linalg.lstsq(phi.phi, v, rcond=None)
    return WeightVector(w, v - phi.phi @ w)


def approx_dr_check(mdp: TabularMdp, pi: Policy, emp: EmpiricalDistribution, spec: AmbiguitySpec,
                    phi: FeatureMatrix, s: int, oracle_grid: ModelGrid,
                    alpha_grid: Optional[Sequence[float]] = None) -> ApproxReport:
    """
    inf over the discretized ball of E[Phi(s)^T w_p] against (1/n) sum_i Phi(s)^T w_{p_hat_i}

    The secant slope eta = (rhs_mean - lhs) / alpha is reported for every alpha in the sweep;
    the report passes when lhs is non-increasing in alpha and every slope is finite and nonnegative.

    Args:
        mdp: MDP backbone
        pi: evaluated policy
        emp: empirical distribution
        spec: ambiguity spec, scalar_radius is the evaluation alpha
        phi: features
        s: state
        oracle_grid: support grid containing the atoms
        alpha_grid: extra radii for the monotonicity sweep

    Returns:
        ApproxReport
    """
    MdpValidator.check(mdp, pi=pi)
    if phi.num_states != mdp.num_states:
        raise StructuralError(f"features cover {phi.num_states} states, MDP has {mdp.num_states}", "linear_approx")
    grid = stack_models(oracle_grid)
    costs = transport_costs(emp, grid, spec.norm)
    hat_row = phi.projection()[s]
    approx_grid = batch_policy_values(mdp, grid, pi) @ hat_row
    approx_atoms = batch_policy_values(mdp, emp.stacked(), pi) @ hat_row
    rhs_mean = float(approx_atoms.mean())

    alpha = spec.scalar_radius
    sweep = sorted(set([0.0, alpha] + [float(a) for a in (alpha_grid or [])]))
    if any(a < 0 for a in sweep):
        raise ParameterError("alpha grid entries must be nonnegative", "linear_approx")
    lhs_curve = [rhs_mean if a == 0.0 else worst_case_mixture(approx_grid, costs, a) for a in sweep]
    eta_curve = [float("nan") if a == 0.0 else (rhs_mean - lhs) / a for a, lhs in zip(sweep, lhs_curve)]

    lhs = lhs_curve[sweep.index(alpha)]
    eta = eta_curve[sweep.index(alpha)]
    monotone = all(b <= a + MONOTONE_SLACK for a, b in zip(lhs_curve, lhs_curve[1:]))
    slopes = [e for a, e in zip(sweep, eta_curve) if a > 0]
    bounded = all(np.isfinite(e) and e >= -MONOTONE_SLACK for e in slopes)
    holds = alpha == 0.0 or lhs >= rhs_mean - eta * alpha - MONOTONE_SLACK
    passed = bool(monotone and bounded and holds)
    if not passed:
        logger.warning(f"approximate DR check failed at s={s}: lhs curve {lhs_curve}")
    return ApproxReport(
        state=int(s), alpha=alpha, lhs=float(lhs), rhs_mean=rhs_mean, eta_estimate=float(eta), alphas=sweep,
        lhs_curve=[float(x) for x in lhs_curve], eta_curve=[float(x) for x in eta_curve], passed=passed,
        meta={**spec.metadata(), "weight_rule": "value_projection", "features": phi.m},
    )
