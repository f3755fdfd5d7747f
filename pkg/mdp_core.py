"""
MDP core module v1.0
Wasserstein DRMDP certification toolkit
Finite MDP representation, exact policy evaluation and the classical Bellman operators
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from errors import ParameterError, StructuralError

# Logging setup
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class TabularMdp:
    """
    Finite MDP backbone <S, A, r, gamma>

    Args:
        reward: dense (|S|, |A|) reward matrix r(s, a)
        discount: gamma in [0, 1)
        r_max: reward bound R_max > 0, |r(s, a)| <= R_max
    """

    reward: np.ndarray
    discount: float
    r_max: float

    def __post_init__(self):
        reward = np.array(self.reward, dtype=float)
        if reward.ndim != 2 or reward.shape[0] < 1 or reward.shape[1] < 1:
            raise StructuralError(f"reward must be a non-empty |S| x |A| matrix, got shape {reward.shape}", "mdp_core")
        if not np.all(np.isfinite(reward)):
            raise ParameterError("reward contains non-finite entries", "mdp_core")
        if not 0.0 <= self.discount < 1.0:
            raise ParameterError(f"discount must lie in [0, 1), got {self.discount}", "mdp_core")
        if not self.r_max > 0:
            raise ParameterError(f"r_max must be positive, got {self.r_max}", "mdp_core")
        if np.max(np.abs(reward)) > self.r_max + 1e-12:
            raise ParameterError(
                f"|reward| exceeds r_max={self.r_max} (max |r| = {np.max(np.abs(reward))})", "mdp_core"
            )
        object.__setattr__(self, "reward", _frozen(reward))
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "r_max", float(self.r_max))

    @classmethod
    def from_rewards(cls, reward, discount: float, r_max: Optional[float] = None) -> "TabularMdp":
        """Build an MDP whose R_max defaults to max |r| (or 1 for an all-zero reward)."""
        reward = np.asarray(reward, dtype=float)
        if r_max is None:
            r_max = float(np.max(np.abs(reward))) if reward.size and np.max(np.abs(reward)) > 0 else 1.0
        return cls(reward=reward, discount=discount, r_max=r_max)

    @property
    def num_states(self) -> int:
        return int(self.reward.shape[0])

    @property
    def num_actions(self) -> int:
        return int(self.reward.shape[1])

    @property
    def value_bound(self) -> float:
        """R_max / (1 - gamma), the sup-norm bound on every value function"""
        return self.r_max / (1.0 - self.discount)


@dataclass(frozen=True)
class TransitionModel:
    """Row-stochastic transition tensor p(s' | s, a) stored as probs[s, a, s']"""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 3 or probs.shape[0] != probs.shape[2]:
            raise StructuralError(f"transition tensor must have shape (S, A, S), got {probs.shape}", "mdp_core")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ParameterError("transition probabilities must be finite and nonnegative", "mdp_core")
        row_sums = probs.sum(axis=2)
        if np.max(np.abs(row_sums - 1.0)) > ROW_SUM_TOL:
            bad = np.unravel_index(np.argmax(np.abs(row_sums - 1.0)), row_sums.shape)
            raise ParameterError(
                f"row (s={bad[0]}, a={bad[1]}) sums to {row_sums[bad]!r}, expected 1", "mdp_core"
            )
        object.__setattr__(self, "probs", _frozen(probs))

    @property
    def num_states(self) -> int:
        return int(self.probs.shape[0])

    @property
    def num_actions(self) -> int:
        return int(self.probs.shape[1])

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "TransitionModel":
        return cls(np.full((num_states, num_actions, num_states), 1.0 / num_states))

    def row(self, s: int, a: int) -> np.ndarray:
        return self.probs[s, a]

    def with_row(self, s: int, a: int, row: np.ndarray) -> "TransitionModel":
        probs = np.array(self.probs)
        probs[s, a] = row
        return TransitionModel(probs)

    def policy_matrix(self, pi: "Policy") -> np.ndarray:
        """P_pi[s, s'] = p(s' | s, pi(s))"""
        return self.probs[np.arange(self.num_states), pi.actions]


@dataclass(frozen=True)
class Policy:
    """Deterministic stationary policy, actions[s] = pi(s)"""

    actions: np.ndarray

    def __post_init__(self):
        actions = np.array(self.actions, dtype=int).reshape(-1)
        if actions.size == 0:
            raise StructuralError("policy must cover at least one state", "mdp_core")
        if np.any(actions < 0):
            raise StructuralError(f"policy actions must be nonnegative, got {actions.tolist()}", "mdp_core")
        object.__setattr__(self, "actions", _frozen(actions))

    @property
    def num_states(self) -> int:
        return int(self.actions.size)

    def __getitem__(self, s: int) -> int:
        return int(self.actions[s])

    def __eq__(self, other) -> bool:
        return isinstance(other, Policy) and np.array_equal(self.actions, other.actions)

    def __hash__(self) -> int:
        return hash(tuple(self.actions.tolist()))


@dataclass(frozen=True)
class ValueTable:
    """State values v(s), in units of discounted return"""

    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        object.__setattr__(self, "values", _frozen(values))

    @property
    def num_states(self) -> int:
        return int(self.values.size)

    def __getitem__(self, s: int) -> float:
        return float(self.values[s])

    def sup_distance(self, other: "ValueTable") -> float:
        return float(np.max(np.abs(self.values - other.values)))


class MdpValidator:
    """Dimension checks shared by every operator"""

    @staticmethod
    def check(mdp: TabularMdp, p: Optional[TransitionModel] = None,
              pi: Optional[Policy] = None, v: Optional[ValueTable] = None) -> None:
        n_s, n_a = mdp.num_states, mdp.num_actions
        if p is not None and p.probs.shape != (n_s, n_a, n_s):
            raise StructuralError(
                f"transition model shape {p.probs.shape} does not match MDP ({n_s}, {n_a}, {n_s})", "mdp_core"
            )
        if pi is not None:
            if pi.num_states != n_s:
                raise StructuralError(f"policy covers {pi.num_states} states, MDP has {n_s}", "mdp_core")
            if np.any(pi.actions >= n_a):
                raise StructuralError(f"policy action out of range [0, {n_a})", "mdp_core")
        if v is not None:
            if v.num_states != n_s:
                raise StructuralError(f"value table has {v.num_states} entries, MDP has {n_s}", "mdp_core")
            if not np.all(np.isfinite(v.values)):
                raise ParameterError("value table contains non-finite entries", "mdp_core")


def policy_reward(mdp: TabularMdp, pi: Policy) -> np.ndarray:
    return mdp.reward[np.arange(mdp.num_states), pi.actions]


def stopping_threshold(tol: float, discount: float) -> float:
    """Successive-iterate gap that guarantees sup-norm error <= tol"""
    if discount == 0.0:
        return np.inf
    return tol * (1.0 - discount) / discount


def bellman_apply(mdp: TabularMdp, p: TransitionModel, pi: Policy, v: ValueTable) -> ValueTable:
    """
    Policy Bellman operator T_p^pi v(s) = r(s, pi(s)) + gamma * sum_s' p(s, pi(s), s') v(s')

    Args:
        mdp: MDP backbone
        p: transition model
        pi: evaluated policy
        v: input value table

    Returns:
        T_p^pi v
    """
    MdpValidator.check(mdp, p, pi, v)
    return ValueTable(policy_reward(mdp, pi) + mdp.discount * p.policy_matrix(pi) @ v.values)


def bellman_optimality_apply(mdp: TabularMdp, p: TransitionModel, v: ValueTable) -> ValueTable:
    """Optimal-control backup max_a [r(s, a) + gamma * <p(.|s, a), v>]"""
    MdpValidator.check(mdp, p, v=v)
    return ValueTable(np.max(action_values(mdp, p, v.values), axis=1))


def action_values(mdp: TabularMdp, p: TransitionModel, v: np.ndarray) -> np.ndarray:
    """Q[s, a] = r(s, a) + gamma * <p(.|s, a), v>"""
    return mdp.reward + mdp.discount * np.einsum("sat,t->sa", p.probs, v)


def evaluate_policy(mdp: TabularMdp, p: TransitionModel, pi: Policy, tol: float = 1e-10,
                    method: str = "linear", max_iter: int = 100_000) -> ValueTable:
    """
    Policy evaluation v_p^pi

    Args:
        mdp: MDP backbone
        p: transition model
        pi: evaluated policy
        tol: sup-norm accuracy target, > 0
        method: "linear" solves (I - gamma P_pi) v = r_pi; "iterate" runs fixed-point iteration

    Returns:
        v with ||v - v_p^pi||_inf <= tol
    """
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol}", "mdp_core")
    MdpValidator.check(mdp, p, pi)
    r_pi = policy_reward(mdp, pi)
    p_pi = p.policy_matrix(pi)

    if method == "linear":
        values = np.linalg.solve(np.eye(mdp.num_states) - mdp.discount * p_pi, r_pi)
        return ValueTable(values, meta={"method": "linear"})
    if method != "iterate":
        raise ParameterError(f"unknown evaluation method '{method}'", "mdp_core")

    threshold = stopping_threshold(tol, mdp.discount)
    v = np.zeros(mdp.num_states)
    for iteration in range(1, max_iter + 1):
        v_next = r_pi + mdp.discount * p_pi @ v
        gap = float(np.max(np.abs(v_next - v)))
        v = v_next
        if gap <= threshold:
            logger.debug(f"policy evaluation converged after {iteration} sweeps (gap {gap:.3e})")
            return ValueTable(v, meta={"method": "iterate", "iterations": iteration})
    raise ParameterError(f"policy evaluation did not reach tol={tol} within {max_iter} sweeps", "mdp_core")


def batch_policy_values(mdp: TabularMdp, probs_stack: np.ndarray, pi: Policy) -> np.ndarray:
    """
    Exact v_p^pi for a stack of models

    Args:
        mdp: MDP backbone
        probs_stack: (k, S, A, S) stacked transition tensors
        pi: evaluated policy

    Returns:
        (k, S) array of values
    """
    probs_stack = np.asarray(probs_stack, dtype=float)
    n_s = mdp.num_states
    p_pi = probs_stack[:, np.arange(n_s), pi.actions, :]
    system = np.eye(n_s)[None, :, :] - mdp.discount * p_pi
    rhs = np.broadcast_to(policy_reward(mdp, pi), (probs_stack.shape[0], n_s))
    return np.linalg.solve(system, rhs[..., None])[..., 0]


def greedy_improve(mdp: TabularMdp, p: TransitionModel, v: ValueTable) -> Policy:
    """
    Greedy policy w.r.t. v, ties broken by lowest action index

    Args:
        mdp: MDP backbone
        p: transition model
        v: value table to act greedily on

    Returns:
        pi(s) in argmax_a r(s, a) + gamma <p(.|s, a), v>
    """
    MdpValidator.check(mdp, p, v=v)
    return Policy(np.argmax(action_values(mdp, p, v.values), axis=1))


def value_iteration(mdp: TabularMdp, p: TransitionModel, tol: float = 1e-10,
                    max_iter: int = 100_000) -> Tuple[ValueTable, Policy]:
    """Classical optimal value within tol and its greedy policy"""
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol}", "mdp_core")
    MdpValidator.check(mdp, p)
    threshold = stopping_threshold(tol, mdp.discount)
    v = np.zeros(mdp.num_states)
    for iteration in range(1, max_iter + 1):
        v_next = np.max(action_values(mdp, p, v), axis=1)
        gap = float(np.max(np.abs(v_next - v)))
        v = v_next
        if gap <= threshold:
            logger.debug(f"value iteration converged after {iteration} sweeps")
            table = ValueTable(v, meta={"iterations": iteration})
            return table, greedy_improve(mdp, p, table)
    raise ParameterError(f"value iteration did not reach tol={tol} within {max_iter} sweeps", "mdp_core")


def all_policies(num_states: int, num_actions: int):
    """Lexicographic iterator over deterministic stationary policies"""
    for actions in itertools.product(range(num_actions), repeat=num_states):
        yield Policy(np.array(actions, dtype=int))


class InstanceGenerator:
    """Seeded random instances for property sweeps and demos"""

    @staticmethod
    def random_mdp(rng: np.random.Generator, num_states: int, num_actions: int,
                   discount: float = 0.9, r_max: float = 1.0) -> TabularMdp:
        reward = rng.uniform(-r_max, r_max, size=(num_states, num_actions))
        return TabularMdp(reward=reward, discount=discount, r_max=r_max)

    @staticmethod
    def random_model(rng: np.random.Generator, num_states: int, num_actions: int,
                     concentration: float = 1.0) -> TransitionModel:
        probs = rng.dirichlet(np.full(num_states, concentration), size=(num_states, num_actions))
        return TransitionModel(probs / probs.sum(axis=2, keepdims=True))

    @staticmethod
    def perturbed_model(rng: np.random.Generator, base: TransitionModel, scale: float = 0.1) -> TransitionModel:
        """Mix the base model with a random model, weight `scale` on the random part"""
        noise = InstanceGenerator.random_model(rng, base.num_states, base.num_actions)
        probs = (1.0 - scale) * base.probs + scale * noise.probs
        return TransitionModel(probs / probs.sum(axis=2, keepdims=True))

    @staticmethod
    def random_policy(rng: np.random.Generator, num_states: int, num_actions: int) -> Policy:
        return Policy(rng.integers(0, num_actions, size=num_states))
