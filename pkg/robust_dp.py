"""
Robust dynamic programming module v1.0
Wasserstein DRMDP certification toolkit
Robust and Wasserstein distributionally robust Bellman operators, the Lagrangian dual of the
DR value and the discretized transport oracle that brackets it from above
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sps
from scipy.optimize import linprog

from ambiguity import AmbiguitySpec, EmpiricalDistribution, GroundNorm, norm_beta
from errors import ParameterError, StructuralError
from mdp_core import (MdpValidator, Policy, TabularMdp, TransitionModel, ValueTable,
                      batch_policy_values, policy_reward, stopping_threshold)

# Logging setup
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
MAX_SWEEPS = 100
SWEEP_TOL = 1e-10

ModelGrid = Union[Sequence[TransitionModel], np.ndarray]


# ---------------------------------------------------------------------------
# Row-level inner problems
# ---------------------------------------------------------------------------

def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)"""
    y = np.asarray(y, dtype=float)
    u = np.sort(y)[::-1]
    cssv = np.cumsum(u) - 1.0
    ind = np.arange(1, y.size + 1)
    rho = np.nonzero(u - cssv / ind > 0)[0][-1]
    theta = cssv[rho] / (rho + 1.0)
    return np.maximum(y - theta, 0.0)


def _golden_max(func, lo: float, hi: float, iterations: int = 60) -> Tuple[float, float]:
    """Maximize a unimodal function on [lo, hi]; returns (argmax, max)"""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = func(c), func(d)
    for _ in range(iterations):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = func(d)
    return (c, fc) if fc >= fd else (d, fd)


def _l1_penalized(v: np.ndarray, p_hat: np.ndarray, lam: float) -> Tuple[np.ndarray, float]:
    s_min = int(np.argmin(v))
    v_min = v[s_min]
    moved = (v - v_min) > 2.0 * lam
    q = np.where(moved, 0.0, p_hat)
    q[s_min] += float(p_hat[moved].sum())
    value = float(p_hat @ np.minimum(v, v_min + 2.0 * lam))
    return q, value


def _l2_path_point(vc: np.ndarray, p_hat: np.ndarray, mu: float) -> np.ndarray:
    return project_simplex(p_hat - vc / mu)


def _l2_penalized(v: np.ndarray, p_hat: np.ndarray, lam: float) -> Tuple[np.ndarray, float]:
    vc = v - v.mean()
    scale = float(np.linalg.norm(vc))
    if scale == 0.0 or lam >= scale:
        return p_hat.copy(), float(p_hat @ v)

    def objective(q: np.ndarray) -> float:
        return float(q @ v + lam * np.linalg.norm(q - p_hat))

    vertex = np.zeros_like(p_hat)
    vertex[int(np.argmin(v))] = 1.0
    candidates = [p_hat.copy(), vertex]
    # the penalized minimizer lies on the path mu -> proj(p_hat - v / mu)
    log_lo, log_hi = np.log(scale) - 30.0, np.log(scale) + 30.0
    best_log, _ = _golden_max(lambda t: -objective(_l2_path_point(vc, p_hat, np.exp(t))), log_lo, log_hi, 120)
    candidates.append(_l2_path_point(vc, p_hat, np.exp(best_log)))
    values = [objective(q) for q in candidates]
    k = int(np.argmin(values))
    return candidates[k], values[k]


def inner_min_linear(v: Union[ValueTable, np.ndarray], p_hat_row: np.ndarray, lam: float,
                     norm: GroundNorm = GroundNorm.L1_PRODUCT) -> Tuple[np.ndarray, float]:
    """
    Penalized one-row problem min_{q in simplex} <q, v> + lam * ||q - p_hat_row||

    Args:
        v: successor values
        p_hat_row: nominal row on the simplex
        lam: penalty multiplier >= 0
        norm: ground norm, applied rowwise (l1 for L1_PRODUCT and SUP_ONE)

    Returns:
        (minimizer q, minimum value)
    """
    if lam < 0 or np.isnan(lam):
        raise ParameterError(f"lambda must be nonnegative, got {lam}", "robust_dp")
    v = np.asarray(v.values if isinstance(v, ValueTable) else v, dtype=float)
    p_hat = np.asarray(p_hat_row, dtype=float)
    if v.shape != p_hat.shape:
        raise StructuralError(f"value length {v.size} does not match row length {p_hat.size}", "robust_dp")
    if norm.rowwise_l1:
        return _l1_penalized(v, p_hat, lam)
    return _l2_penalized(v, p_hat, lam)


def _l1_ball_min(v: np.ndarray, p_hat: np.ndarray, rho: float) -> np.ndarray:
    s_min = int(np.argmin(v))
    budget = min(rho / 2.0, 1.0)
    q = p_hat.copy()
    for j in np.argsort(-v, kind="stable"):
        if budget <= 0 or v[j] <= v[s_min]:
            break
        take = min(q[j], budget)
        q[j] -= take
        q[s_min] += take
        budget -= take
    return q


def _l2_ball_min(v: np.ndarray, p_hat: np.ndarray, rho: float, iterations: int = 200) -> np.ndarray:
    vc = v - v.mean()
    scale = float(np.linalg.norm(vc))
    if rho <= 0 or scale == 0.0:
        return p_hat.copy()
    if not np.isfinite(rho):
        vertex = np.zeros_like(p_hat)
        vertex[int(np.argmin(v))] = 1.0
        return vertex
    mu_lo, mu_hi = scale / rho * 1e-12, scale / rho
    q_far = _l2_path_point(vc, p_hat, mu_lo)
    if np.linalg.norm(q_far - p_hat) <= rho:
        return q_far
    lo, hi = np.log(mu_lo), np.log(mu_hi)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(_l2_path_point(vc, p_hat, np.exp(mid)) - p_hat) > rho:
            lo = mid
        else:
            hi = mid
    return _l2_path_point(vc, p_hat, np.exp(hi))


def constrained_row_min(v: np.ndarray, p_hat: np.ndarray, rho: float, norm: GroundNorm) -> Tuple[np.ndarray, float]:
    """min <q, v> over q in the simplex with ||q - p_hat|| <= rho (rowwise norm)"""
    if rho < 0:
        raise ParameterError(f"row radius must be nonnegative, got {rho}", "robust_dp")
    q = _l1_ball_min(v, p_hat, rho) if norm.rowwise_l1 else _l2_ball_min(v, p_hat, rho)
    return q, float(q @ v)


# ---------------------------------------------------------------------------
# Rectangular (per-state) Wasserstein DR backups
# ---------------------------------------------------------------------------

def _check_grid(lambda_grid: Optional[Sequence[float]]) -> np.ndarray:
    if lambda_grid is None:
        return np.zeros(0)
    grid = np.asarray(lambda_grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ParameterError("lambda grid must not be empty", "robust_dp")
    if np.any(grid < 0) or np.any(~np.isfinite(grid)):
        raise ParameterError("lambda grid entries must be finite and nonnegative", "robust_dp")
    return np.sort(grid)


def _check_emp(mdp: TabularMdp, emp: EmpiricalDistribution, spec: AmbiguitySpec) -> None:
    n_s, n_a = mdp.num_states, mdp.num_actions
    if emp.base.shape != (n_s, n_a, n_s):
        raise StructuralError(f"empirical atoms have shape {emp.base.shape}, MDP needs {(n_s, n_a, n_s)}", "robust_dp")
    if spec.num_states != n_s:
        raise StructuralError(f"ambiguity spec covers {spec.num_states} states, MDP has {n_s}", "robust_dp")


def _dr_expectations(v: np.ndarray, rows: np.ndarray, radii: np.ndarray, norm: GroundNorm,
                     grid: np.ndarray) -> np.ndarray:
    """
    sup_lam (1/n) sum_i min_q [<q, v> + lam ||q - p_hat_i||] - lam * alpha_s per state

    Args:
        v: successor values (S,)
        rows: atom rows (n, S, S), rows[i, s] = p_hat_i(. | s, a_s)
        radii: alpha_s (S,)
        norm: ground norm
        grid: extra lambda candidates

    Returns:
        worst-case expected successor value per state (S,)
    """
    v_min = float(v.min())
    if norm.rowwise_l1:
        # the closed form is linear in p_hat, and concave piecewise linear in lam with kinks at gaps / 2
        mean_rows = rows.mean(axis=0)
        lams = np.unique(np.concatenate([[0.0], (v - v_min) / 2.0, grid]))
        caps = np.minimum(v[None, :], v_min + 2.0 * lams[:, None])
        inner = mean_rows @ caps.T
        finite = np.isfinite(radii)
        penalty = np.where(finite[:, None], np.where(finite, radii, 0.0)[:, None] * lams[None, :], 0.0)
        dual = inner - penalty
        best = dual.max(axis=1)
        return np.where(finite, best, v_min)

    out = np.empty(rows.shape[1])
    lam_cap = float(np.linalg.norm(v - v.mean()))
    for s in range(rows.shape[1]):
        if not np.isfinite(radii[s]):
            out[s] = v_min
            continue

        def dual(lam: float, s=s) -> float:
            return float(np.mean([_l2_penalized(v, rows[i, s], lam)[1] for i in range(rows.shape[0])])) - lam * radii[s]

        values = [dual(lam) for lam in np.concatenate([[0.0, lam_cap], grid])]
        if lam_cap > 0:
            values.append(_golden_max(dual, 0.0, lam_cap, 50)[1])
        out[s] = max(values)
    return out


def _policy_rows(stack: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return stack[:, np.arange(stack.shape[1]), actions, :]


def dr_bellman_apply(mdp: TabularMdp, pi: Policy, emp: EmpiricalDistribution, spec: AmbiguitySpec,
                     v: ValueTable, lambda_grid: Optional[Sequence[float]] = None) -> ValueTable:
    """
    Rectangular Wasserstein DR policy backup

    Per state s: r(s, pi(s)) + gamma * sup_lam [(1/n) sum_i inner_min_linear(v, p_hat_i row, lam) - lam alpha_s].

    Args:
        mdp: MDP backbone
        pi: evaluated policy
        emp: empirical distribution of atoms
        spec: per-state radii and ground norm
        v: input value table
        lambda_grid: extra multiplier candidates

    Returns:
        backed-up value table
    """
    MdpValidator.check(mdp, pi=pi, v=v)
    _check_emp(mdp, emp, spec)
    grid = _check_grid(lambda_grid)
    rows = _policy_rows(emp.stacked(), pi.actions)
    expect = _dr_expectations(v.values, rows, spec.radius_per_state, spec.norm, grid)
    return ValueTable(policy_reward(mdp, pi) + mdp.discount * expect)


def _dr_q_values(mdp: TabularMdp, stack: np.ndarray, spec: AmbiguitySpec, v: np.ndarray,
                 grid: np.ndarray) -> np.ndarray:
    q = np.empty((mdp.num_states, mdp.num_actions))
    for a in range(mdp.num_actions):
        rows = stack[:, :, a, :]
        q[:, a] = mdp.reward[:, a] + mdp.discount * _dr_expectations(v, rows, spec.radius_per_state, spec.norm, grid)
    return q


def dr_bellman_optimality_apply(mdp: TabularMdp, emp: EmpiricalDistribution, spec: AmbiguitySpec,
                                v: ValueTable, lambda_grid: Optional[Sequence[float]] = None
                                ) -> Tuple[ValueTable, Policy]:
    """DR optimality backup, max over deterministic actions; ties to the lowest index"""
    MdpValidator.check(mdp, v=v)
    _check_emp(mdp, emp, spec)
    q = _dr_q_values(mdp, emp.stacked(), spec, v.values, _check_grid(lambda_grid))
    return ValueTable(q.max(axis=1)), Policy(np.argmax(q, axis=1))


def dr_policy_evaluation(mdp: TabularMdp, pi: Policy, emp: EmpiricalDistribution, spec: AmbiguitySpec,
                         tol: float = 1e-8, lambda_grid: Optional[Sequence[float]] = None,
                         max_iter: int = 100_000) -> ValueTable:
    """
    Fixed point of dr_bellman_apply within tol

    Args:
        mdp: MDP backbone
        pi: evaluated policy
        emp: empirical distribution
        spec: per-state radii
        tol: sup-norm accuracy, > 0

    Returns:
        DR value of pi under the rectangular ball
    """
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol}", "robust_dp")
    MdpValidator.check(mdp, pi=pi)
    _check_emp(mdp, emp, spec)
    grid = _check_grid(lambda_grid)
    rows = _policy_rows(emp.stacked(), pi.actions)
    r_pi = policy_reward(mdp, pi)
    threshold = stopping_threshold(tol, mdp.discount)

    v = np.zeros(mdp.num_states)
    for iteration in range(1, max_iter + 1):
        v_next = r_pi + mdp.discount * _dr_expectations(v, rows, spec.radius_per_state, spec.norm, grid)
        gap = float(np.max(np.abs(v_next - v)))
        v = v_next
        if gap <= threshold:
            logger.debug(f"DR evaluation converged after {iteration} sweeps")
            return ValueTable(v, meta={"iterations": iteration, **spec.metadata()})
    raise ParameterError(f"DR evaluation did not reach tol={tol} within {max_iter} sweeps", "robust_dp")


def dr_policy_iteration(mdp: TabularMdp, emp: EmpiricalDistribution, spec: AmbiguitySpec,
                        tol: float = 1e-8, lambda_grid: Optional[Sequence[float]] = None,
                        max_rounds: Optional[int] = None) -> Tuple[ValueTable, Policy]:
    """
    DR policy iteration over deterministic stationary policies

    Actions switch only on strict improvement (> 2 tol), so the loop stops once the greedy
    policy is stable or after |A|^|S| + 1 rounds.

    Returns:
        (DR value of the final policy, final policy)
    """
    _check_emp(mdp, emp, spec)
    grid = _check_grid(lambda_grid)
    stack = emp.stacked()
    limit = max_rounds if max_rounds is not None else min(mdp.num_actions ** mdp.num_states + 1, 10_000)
    actions = np.zeros(mdp.num_states, dtype=int)
    v = dr_policy_evaluation(mdp, Policy(actions), emp, spec, tol, lambda_grid)
    for round_id in range(1, limit + 1):
        q = _dr_q_values(mdp, stack, spec, v.values, grid)
        current = q[np.arange(mdp.num_states), actions]
        greedy = np.argmax(q, axis=1)
        improve = q[np.arange(mdp.num_states), greedy] > current + 2.0 * tol
        if not improve.any():
            logger.debug(f"DR policy iteration stable after {round_id} rounds")
            return v, Policy(actions)
        actions = np.where(improve, greedy, actions)
        v = dr_policy_evaluation(mdp, Policy(actions), emp, spec, tol, lambda_grid)
    logger.warning(f"DR policy iteration hit the round limit ({limit})")
    return v, Policy(actions)


# ---------------------------------------------------------------------------
# Classical robust MDPs
# ---------------------------------------------------------------------------

class UncertaintyKind(Enum):
    NORM_BALL = "norm_ball"
    FINITE = "finite"


@dataclass(frozen=True)
class UncertaintySet:
    """
    (s, a)-rectangular uncertainty set

    Args:
        kind: NORM_BALL or FINITE
        center: nominal model (NORM_BALL)
        radius_per_sa: (S, A) row radii (NORM_BALL)
        norm: rowwise ground norm (NORM_BALL)
        atoms: candidate models whose rows are mixed freely (FINITE)
    """

    kind: UncertaintyKind
    center: Optional[TransitionModel] = None
    radius_per_sa: Optional[np.ndarray] = None
    norm: GroundNorm = GroundNorm.L1_PRODUCT
    atoms: List[TransitionModel] = field(default_factory=list)

    def __post_init__(self):
        if self.kind is UncertaintyKind.NORM_BALL:
            if self.center is None:
                raise StructuralError("norm-ball uncertainty set needs a center", "robust_dp")
            radii = np.broadcast_to(np.asarray(self.radius_per_sa, dtype=float),
                                    self.center.probs.shape[:2]).copy()
            if np.any(np.isnan(radii)) or np.any(radii < 0):
                raise ParameterError("row radii must be nonnegative", "robust_dp")
            object.__setattr__(self, "radius_per_sa", radii)
        else:
            if not self.atoms:
                raise StructuralError("finite uncertainty set is empty", "robust_dp")
            shape = self.atoms[0].probs.shape
            if any(atom.probs.shape != shape for atom in self.atoms):
                raise StructuralError("finite uncertainty set mixes model shapes", "robust_dp")
            object.__setattr__(self, "atoms", list(self.atoms))

    @classmethod
    def norm_ball(cls, center: TransitionModel, radius, norm: GroundNorm = GroundNorm.L1_PRODUCT) -> "UncertaintySet":
        return cls(UncertaintyKind.NORM_BALL, center=center, radius_per_sa=np.asarray(radius, dtype=float), norm=norm)

    @classmethod
    def finite(cls, atoms: Sequence[TransitionModel]) -> "UncertaintySet":
        return cls(UncertaintyKind.FINITE, atoms=list(atoms))

    @property
    def shape(self):
        return self.center.probs.shape if self.kind is UncertaintyKind.NORM_BALL else self.atoms[0].probs.shape


def _robust_expectations(u: UncertaintySet, v: np.ndarray) -> np.ndarray:
    """Worst-case <p_sa, v> for every (s, a) row"""
    if u.kind is UncertaintyKind.FINITE:
        stack = np.stack([atom.probs for atom in u.atoms])
        return np.einsum("ksat,t->ksa", stack, v).min(axis=0)
    n_s, n_a, _ = u.center.probs.shape
    out = np.empty((n_s, n_a))
    for s in range(n_s):
        for a in range(n_a):
            out[s, a] = constrained_row_min(v, u.center.probs[s, a], u.radius_per_sa[s, a], u.norm)[1]
    return out


def _check_uncertainty(mdp: TabularMdp, u: UncertaintySet) -> None:
    expected = (mdp.num_states, mdp.num_actions, mdp.num_states)
    if u.shape != expected:
        raise StructuralError(f"uncertainty set shape {u.shape} does not match MDP {expected}", "robust_dp")


def robust_bellman_apply(mdp: TabularMdp, u: UncertaintySet, v: ValueTable) -> ValueTable:
    """
    Robust optimality backup max_a r(s, a) + gamma * min_{p_sa in P_sa} <p_sa, v>

    Args:
        mdp: MDP backbone
        u: rectangular uncertainty set
        v: input value table

    Returns:
        backed-up value table
    """
    MdpValidator.check(mdp, v=v)
    _check_uncertainty(mdp, u)
    q = mdp.reward + mdp.discount * _robust_expectations(u, v.values)
    return ValueTable(q.max(axis=1))


def robust_value_iteration(mdp: TabularMdp, u: UncertaintySet, tol: float = 1e-8,
                           max_iter: int = 100_000) -> Tuple[ValueTable, Policy]:
    """Robust optimal value within tol and a greedy robust policy"""
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol}", "robust_dp")
    _check_uncertainty(mdp, u)
    threshold = stopping_threshold(tol, mdp.discount)
    v = np.zeros(mdp.num_states)
    for iteration in range(1, max_iter + 1):
        q = mdp.reward + mdp.discount * _robust_expectations(u, v)
        v_next = q.max(axis=1)
        gap = float(np.max(np.abs(v_next - v)))
        v = v_next
        if gap <= threshold:
            q = mdp.reward + mdp.discount * _robust_expectations(u, v)
            logger.debug(f"robust value iteration converged after {iteration} sweeps")
            return ValueTable(v, meta={"iterations": iteration}), Policy(np.argmax(q, axis=1))
    raise ParameterError(f"robust value iteration did not reach tol={tol} within {max_iter} sweeps", "robust_dp")


def robust_policy_evaluation(mdp: TabularMdp, u: UncertaintySet, pi: Policy, tol: float = 1e-8,
                             max_iter: int = 100_000) -> ValueTable:
    """Robust value of a fixed policy under a rectangular uncertainty set"""
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol}", "robust_dp")
    MdpValidator.check(mdp, pi=pi)
    _check_uncertainty(mdp, u)
    idx = np.arange(mdp.num_states)
    r_pi = policy_reward(mdp, pi)
    threshold = stopping_threshold(tol, mdp.discount)
    v = np.zeros(mdp.num_states)
    for _ in range(max_iter):
        v_next = r_pi + mdp.discount * _robust_expectations(u, v)[idx, pi.actions]
        gap = float(np.max(np.abs(v_next - v)))
        v = v_next
        if gap <= threshold:
            return ValueTable(v)
    raise ParameterError(f"robust evaluation did not reach tol={tol} within {max_iter} sweeps", "robust_dp")


# ---------------------------------------------------------------------------
# Trajectory-level dual and discretized oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DualEvaluation:
    """
    Best Lagrangian dual objective for the DR value at one state

    Args:
        lambda_star: maximizing multiplier
        value: mean(inner_values) - lambda_star * alpha
        inner_values: per-atom inner infima at lambda_star
    """

    lambda_star: float
    value: float
    inner_values: np.ndarray
    meta: Dict = field(default_factory=dict, compare=False)


def stack_models(models: ModelGrid) -> np.ndarray:
    if isinstance(models, np.ndarray):
        return np.asarray(models, dtype=float)
    return np.stack([m.probs for m in models]) if len(models) else np.zeros((0,))


def _rows_cost(norm: GroundNorm, diff: np.ndarray) -> np.ndarray:
    """Norm of a model difference supported on the policy rows, diff shaped (..., S, S)"""
    if norm.rowwise_l1:
        return np.abs(diff).sum(axis=(-2, -1))
    return np.sqrt(np.sum(diff * diff, axis=(-2, -1)))


class _InnerModelProblem:
    """
    inf_p v_p^pi(s) + lam * ||p - p_hat_i|| for every atom, by block-coordinate descent on the
    policy rows; rows outside pi stay at the atom since they do not move v^pi
    """

    def __init__(self, mdp: TabularMdp, pi: Policy, emp: EmpiricalDistribution, norm: GroundNorm,
                 s: int, warm_starts: Optional[ModelGrid] = None, max_sweeps: int = MAX_SWEEPS):
        self.mdp = mdp
        self.s = s
        self.norm = norm
        self.max_sweeps = max_sweeps
        self.r_pi = policy_reward(mdp, pi)
        self.eye = np.eye(mdp.num_states)
        self.atom_rows = _policy_rows(emp.stacked(), pi.actions)
        self.atom_values = batch_policy_values(mdp, emp.stacked(), pi)[:, s]
        self.warm_rows = None
        if warm_starts is not None and len(warm_starts):
            warm = stack_models(warm_starts)
            self.warm_rows = _policy_rows(warm, pi.actions)
            self.warm_values = batch_policy_values(mdp, warm, pi)[:, s]
            self.warm_costs = np.stack([_rows_cost(norm, self.warm_rows - atom) for atom in self.atom_rows])
        self._cache: Dict[float, np.ndarray] = {}

    def _value(self, rows: np.ndarray) -> Tuple[float, np.ndarray]:
        inverse = np.linalg.inv(self.eye - self.mdp.discount * rows)
        return float(inverse[self.s] @ self.r_pi), inverse

    def _objective(self, rows: np.ndarray, i: int, lam: float) -> float:
        return self._value(rows)[0] + lam * float(_rows_cost(self.norm, rows - self.atom_rows[i]))

    def _descend(self, i: int, lam: float) -> float:
        start = self.atom_rows[i].copy()
        best = float(self.atom_values[i])
        if self.warm_rows is not None:
            scores = self.warm_values + lam * self.warm_costs[i]
            j = int(np.argmin(scores))
            if scores[j] < best:
                start, best = self.warm_rows[j].copy(), float(scores[j])

        rows, obj = start, best
        gamma = self.mdp.discount
        for _ in range(self.max_sweeps):
            before = obj
            for t in range(rows.shape[0]):
                _, inverse = self._value(rows)
                v_full = inverse @ self.r_pi
                weight = gamma * inverse[self.s, t]
                if weight <= 0:
                    target = self.atom_rows[i, t]
                else:
                    target = inner_min_linear(v_full, self.atom_rows[i, t], lam / weight, self.norm)[0]
                step = 1.0
                while step > 1e-6:
                    trial = rows.copy()
                    trial[t] = (1.0 - step) * rows[t] + step * target
                    trial_obj = self._objective(trial, i, lam)
                    if trial_obj < obj - 1e-15:
                        rows, obj = trial, trial_obj
                        break
                    step *= 0.5
            if before - obj < SWEEP_TOL:
                break
        return obj

    def evaluate(self, lam: float) -> np.ndarray:
        key = float(lam)
        if key not in self._cache:
            self._cache[key] = np.array([self._descend(i, key) for i in range(self.atom_rows.shape[0])])
        return self._cache[key]


def dr_value_dual(mdp: TabularMdp, pi: Policy, emp: EmpiricalDistribution, spec: AmbiguitySpec, s: int,
                  lambda_grid: Optional[Sequence[float]] = None, warm_starts: Optional[ModelGrid] = None,
                  refine: bool = True, max_sweeps: int = MAX_SWEEPS) -> DualEvaluation:
    """
    sup_{lam >= 0} (1/n) sum_i inf_p (v_p^pi(s) + lam ||p - p_hat_i||) - lam * alpha

    Args:
        mdp: MDP backbone
        pi: evaluated policy
        emp: empirical distribution
        spec: ambiguity spec, scalar_radius is alpha
        s: state
        lambda_grid: multiplier candidates, nonnegative
        warm_starts: extra starting models for the inner infimum
        refine: add golden-section search on [0, L] and the endpoint L

    Returns:
        DualEvaluation; a lower bound on the DR value at s
    """
    MdpValidator.check(mdp, pi=pi)
    _check_emp(mdp, emp, spec)
    if not 0 <= s < mdp.num_states:
        raise StructuralError(f"state {s} outside [0, {mdp.num_states})", "robust_dp")
    grid = _check_grid(lambda_grid)
    if grid.size == 0 and not refine:
        raise ParameterError("lambda grid must not be empty without refinement", "robust_dp")
    alpha = spec.scalar_radius
    l_value = norm_beta(spec.norm, mdp.num_states, mdp.num_actions) * mdp.discount * mdp.r_max \
        / (1.0 - mdp.discount) ** 2
    meta = {"l_value": l_value, **spec.metadata()}
    problem = _InnerModelProblem(mdp, pi, emp, spec.norm, s, warm_starts, max_sweeps)

    if alpha == 0.0:
        return DualEvaluation(l_value, float(problem.atom_values.mean()), problem.atom_values.copy(),
                              {**meta, "short_circuit": "zero_radius"})
    if np.isinf(alpha):
        inner = problem.evaluate(0.0)
        return DualEvaluation(0.0, float(inner.mean()), inner, {**meta, "short_circuit": "unbounded_radius"})

    def dual(lam: float) -> float:
        return float(problem.evaluate(lam).mean()) - lam * alpha

    candidates = list(grid)
    if refine:
        candidates.extend([0.0, l_value])
        if l_value > 0:
            candidates.append(_golden_max(dual, 0.0, l_value, 40)[0])
    values = np.array([dual(lam) for lam in candidates])
    k = int(np.argmax(values))
    lam_star = float(candidates[k])
    logger.debug(f"dual at s={s}: lambda*={lam_star:.6g}, value={values[k]:.10g}")
    return DualEvaluation(lam_star, float(values[k]), problem.evaluate(lam_star), meta)


def _lower_hull_segments(costs: np.ndarray, values: np.ndarray) -> List[Tuple[float, float]]:
    """Decreasing part of the lower convex hull of (cost, value) points as (d_cost, d_value) segments"""
    order = np.lexsort((values, costs))
    hull: List[Tuple[float, float]] = []
    for j in order:
        point = (float(costs[j]), float(values[j]))
        if hull and point[0] == hull[-1][0]:
            continue
        while len(hull) >= 2:
            (c1, v1), (c2, v2) = hull[-2], hull[-1]
            if (v2 - v1) * (point[0] - c1) >= (point[1] - v1) * (c2 - c1):
                hull.pop()
            else:
                break
        hull.append(point)
    segments = []
    for (c1, v1), (c2, v2) in zip(hull, hull[1:]):
        if v2 >= v1:
            break
        segments.append((c2 - c1, v2 - v1))
    return segments


def _oracle_hull(values: np.ndarray, costs: np.ndarray, alpha: float) -> float:
    n = costs.shape[0]
    costs = np.where(costs <= 1e-12, 0.0, costs)
    base = 0.0
    segments = []
    for i in range(n):
        zero = costs[i] == 0.0
        base += float(values[zero].min())
        for d_cost, d_value in _lower_hull_segments(costs[i], values):
            segments.append((d_value / d_cost, d_cost / n, d_value / n))
    total = base / n
    budget = alpha
    for _, d_cost, d_value in sorted(segments):
        if budget <= 0:
            break
        take = min(1.0, budget / d_cost)
        total += take * d_value
        budget -= take * d_cost
    return total


def _oracle_lp(values: np.ndarray, costs: np.ndarray, alpha: float) -> float:
    n, k = costs.shape
    objective = np.tile(values, n)
    a_eq = sps.kron(sps.eye(n), np.ones((1, k))).tocsr()
    b_eq = np.full(n, 1.0 / n)
    result = linprog(objective, A_ub=costs.reshape(1, -1), b_ub=[alpha], A_eq=a_eq, b_eq=b_eq,
                     bounds=(0, None), method="highs")
    if result.status != 0:
        raise StructuralError(f"oracle LP failed: {result.message}", "robust_dp")
    return float(result.fun)


def transport_costs(emp: EmpiricalDistribution, grid: np.ndarray, norm: GroundNorm) -> np.ndarray:
    """(n, k) ground distances from every atom to every grid model; each atom must sit on the grid"""
    if grid.ndim != 4 or grid.shape[1:] != emp.base.shape:
        raise StructuralError(f"support grid shape {grid.shape} does not match atoms {emp.base.shape}", "robust_dp")
    costs = np.stack([norm.evaluate_batch(grid - atom) for atom in emp.stacked()])
    if np.any(costs.min(axis=1) > 1e-12):
        missing = int(np.argmax(costs.min(axis=1)))
        raise ParameterError(f"support grid does not contain empirical atom {missing}", "robust_dp")
    return costs


def worst_case_mixture(values: np.ndarray, costs: np.ndarray, alpha: float, method: str = "hull") -> float:
    """
    min sum_ij T_ij values_j s.t. sum_j T_ij = 1/n, sum_ij T_ij costs_ij <= alpha, T >= 0

    Args:
        values: (k,) value of each grid model
        costs: (n, k) transport costs, zero on each atom's own grid entry
        alpha: transport budget
        method: "hull" (exact greedy over per-atom lower convex hulls) or "lp" (HiGHS)

    Returns:
        optimal objective
    """
    if np.isinf(alpha):
        return float(values.min())
    if method == "lp":
        return _oracle_lp(values, costs, alpha)
    if method == "hull":
        return _oracle_hull(values, costs, alpha)
    raise ParameterError(f"unknown oracle method '{method}'", "robust_dp")


def dr_value_oracle(mdp: TabularMdp, pi: Policy, emp: EmpiricalDistribution, spec: AmbiguitySpec, s: int,
                    support_grid: ModelGrid, method: str = "hull") -> float:
    """
    Worst expected value over distributions supported on the grid within the Wasserstein ball

    Args:
        mdp: MDP backbone
        pi: evaluated policy
        emp: empirical distribution, every atom must be in the grid
        spec: ambiguity spec, scalar_radius is alpha
        s: state
        support_grid: candidate models (list or stacked (k, S, A, S) array)
        method: see worst_case_mixture

    Returns:
        oracle value, an upper bound on the DR value at s
    """
    MdpValidator.check(mdp, pi=pi)
    _check_emp(mdp, emp, spec)
    grid = stack_models(support_grid)
    costs = transport_costs(emp, grid, spec.norm)
    if spec.scalar_radius == 0.0:
        return float(batch_policy_values(mdp, emp.stacked(), pi)[:, s].mean())
    values = batch_policy_values(mdp, grid, pi)[:, s]
    return worst_case_mixture(values, costs, spec.scalar_radius, method)
