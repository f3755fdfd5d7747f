"""
Regularization module v1.0
Wasserstein DRMDP certification toolkit
Regularized value function, the constant L = beta*gamma*R_max/(1-gamma)^2,
the sandwich certifier and the simulation-lemma checker
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ambiguity import AmbiguitySpec, EmpiricalDistribution, GroundNorm, norm_beta, sup_one_per_state
from errors import ParameterError
from mdp_core import MdpValidator, Policy, TabularMdp, TransitionModel, ValueTable, batch_policy_values, evaluate_policy
from oracles import enumerate_policies
from robust_dp import ModelGrid, dr_value_dual, dr_value_oracle

# Logging setup
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

CHAIN_SLACK = 1e-9


@dataclass(frozen=True)
class RegularizationConstant:
    """
    beta and L = beta * gamma * R_max / (1 - gamma)^2

    Args:
        beta: norm-compatibility constant
        l_value: Lipschitz-type constant L
        value_floor: -R_max / (1 - gamma), below which a regularized bound is vacuous
    """

    beta: float
    l_value: float
    value_floor: float = -np.inf


@dataclass
class SandwichReport:
    """One state of the chain mean >= oracle >= dual >= mean - L * alpha"""

    state: int
    alpha: float
    empirical_mean: float
    dr_lower: float
    dr_upper: float
    reg_value: float
    kappa_estimate: float
    l_value: float
    lambda_star: float
    passed: bool
    vacuous: bool
    meta: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "state": self.state,
            "alpha": self.alpha,
            "empirical_mean": self.empirical_mean,
            "dr_lower": self.dr_lower,
            "dr_upper": self.dr_upper,
            "reg_value": self.reg_value,
            "kappa_estimate": self.kappa_estimate,
            "l_value": self.l_value,
            "lambda_star": self.lambda_star,
            "passed": self.passed,
            "vacuous": self.vacuous,
        }


def lipschitz_constant(mdp: TabularMdp, norm: GroundNorm) -> RegularizationConstant:
    """
    beta from the ground-norm table and L = beta * gamma * R_max / (1 - gamma)^2

    Args:
        mdp: MDP backbone
        norm: ground norm

    Returns:
        RegularizationConstant
    """
    if mdp.discount >= 1.0:
        raise ParameterError("L is undefined for discount 1", "regularization")
    beta = norm_beta(norm, mdp.num_states, mdp.num_actions)
    l_value = beta * mdp.discount * mdp.r_max / (1.0 - mdp.discount) ** 2
    return RegularizationConstant(beta=beta, l_value=l_value, value_floor=-mdp.value_bound)


def regularized_value(values_per_atom: Sequence[ValueTable], l: RegularizationConstant, alpha: float) -> ValueTable:
    """
    (1/n) sum_i v_i - L * alpha, per state

    Args:
        values_per_atom: v^pi under each atom
        l: regularization constant
        alpha: radius >= 0

    Returns:
        ValueTable with meta["vacuous"] flagging states below the trivial value floor
    """
    if not values_per_atom:
        raise ParameterError("regularized value needs at least one atom value", "regularization")
    if alpha < 0:
        raise ParameterError(f"alpha must be nonnegative, got {alpha}", "regularization")
    mean = np.mean([v.values for v in values_per_atom], axis=0)
    reg = mean - l.l_value * alpha
    return ValueTable(reg, meta={"vacuous": (reg < l.value_floor).tolist()})


def sandwich_check(mdp: TabularMdp, pi: Policy, emp: EmpiricalDistribution, spec: AmbiguitySpec, s: int,
                   oracle_grid: ModelGrid, lambda_grid: Optional[Sequence[float]] = None,
                   l_override: Optional[float] = None) -> SandwichReport:
    """
    Certify mean >= dr_upper >= dr_lower >= mean - L * alpha at one state

    Args:
        mdp: MDP backbone
        pi: evaluated policy
        emp: empirical distribution
        spec: ambiguity spec, scalar_radius is alpha
        s: state
        oracle_grid: support grid for the transport oracle, also used to warm-start the dual
        lambda_grid: extra multiplier candidates for the dual
        l_override: replace L (negative controls)

    Returns:
        SandwichReport, passed iff the chain holds within 1e-9
    """
    constant = lipschitz_constant(mdp, spec.norm)
    l_value = constant.l_value if l_override is None else float(l_override)
    alpha = spec.scalar_radius

    atom_values = batch_policy_values(mdp, emp.stacked(), pi)[:, s]
    mean = float(atom_values.mean())
    dual = dr_value_dual(mdp, pi, emp, spec, s, lambda_grid=lambda_grid, warm_starts=oracle_grid)
    upper = dr_value_oracle(mdp, pi, emp, spec, s, oracle_grid)
    reg = mean - l_value * alpha if alpha > 0 else mean

    passed = (mean >= upper - CHAIN_SLACK) and (upper >= dual.value - CHAIN_SLACK) \
        and (dual.value >= reg - CHAIN_SLACK)
    kappa = (mean - upper) / alpha if 0 < alpha < np.inf else float("nan")
    vacuous = bool(reg < constant.value_floor)
    if not passed:
        logger.warning(f"sandwich chain violated at s={s}, alpha={alpha}: "
                       f"{mean:.10g} >= {upper:.10g} >= {dual.value:.10g} >= {reg:.10g}")
    return SandwichReport(
        state=int(s), alpha=alpha, empirical_mean=mean, dr_lower=dual.value, dr_upper=upper, reg_value=reg,
        kappa_estimate=kappa, l_value=l_value, lambda_star=dual.lambda_star, passed=bool(passed), vacuous=vacuous,
        meta={**spec.metadata(), "beta": constant.beta, "l_overridden": l_override is not None},
    )


def simulation_lemma_check(mdp: TabularMdp, pi: Policy, p: TransitionModel,
                           q: TransitionModel) -> Tuple[float, float, bool]:
    """
    max_s |v_p(s) - v_q(s)| <= gamma * R_max * max_s ||p_s - q_s||_{inf,1} / (1 - gamma)^2

    Returns:
        (lhs, rhs, passed)
    """
    MdpValidator.check(mdp, p, pi)
    MdpValidator.check(mdp, q)
    v_p = evaluate_policy(mdp, p, pi).values
    v_q = evaluate_policy(mdp, q, pi).values
    lhs = float(np.max(np.abs(v_p - v_q)))
    gap = float(sup_one_per_state(p.probs - q.probs).max())
    rhs = mdp.discount * mdp.r_max * gap / (1.0 - mdp.discount) ** 2
    return lhs, rhs, bool(lhs <= rhs + CHAIN_SLACK)


def regularized_policy(mdp: TabularMdp, atoms: Union[EmpiricalDistribution, List[TransitionModel]],
                       l: RegularizationConstant, alpha: float) -> Tuple[Policy, ValueTable]:
    """
    Policy with the largest regularized value, summed over states; first in enumeration order on ties

    L * alpha does not depend on the policy, so the winner maximizes the empirical mean value.

    Returns:
        (policy, its regularized value)
    """
    stack = atoms.stacked() if isinstance(atoms, EmpiricalDistribution) else np.stack([m.probs for m in atoms])
    best_policy, best_values, best_score = None, None, -np.inf
    for policy in enumerate_policies(mdp):
        values = batch_policy_values(mdp, stack, policy)
        score = float(values.mean(axis=0).sum())
        if score > best_score + 1e-12:
            best_policy, best_values, best_score = policy, values, score
    reg = regularized_value([ValueTable(v) for v in best_values], l, alpha)
    return best_policy, reg
