"""
Estimation module v1.0
Wasserstein DRMDP certification toolkit
Visit-count and kernel transition estimators, per-state sample counts and an episode simulator
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from errors import ParameterError, StructuralError
from mdp_core import Policy, TabularMdp, TransitionModel

# Logging setup
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpisodeLog:
    """
    One episode of logged transitions

    Args:
        episode_id: episode index i
        transitions: (T, 3) integer array of (s, a, s_next) rows, in time order
    """

    episode_id: int
    transitions: np.ndarray

    def __post_init__(self):
        transitions = np.asarray(self.transitions, dtype=int)
        if transitions.size == 0:
            transitions = np.zeros((0, 3), dtype=int)
        if transitions.ndim != 2 or transitions.shape[1] != 3:
            raise StructuralError(
                f"episode {self.episode_id}: transitions must be (T, 3), got {transitions.shape}", "estimation"
            )
        transitions.setflags(write=False)
        object.__setattr__(self, "transitions", transitions)

    @classmethod
    def from_tuples(cls, episode_id: int, rows: Sequence[Sequence[int]]) -> "EpisodeLog":
        return cls(episode_id, np.array(list(rows), dtype=int).reshape(-1, 3))

    def __len__(self) -> int:
        return int(self.transitions.shape[0])

    def concat(self, other: "EpisodeLog") -> "EpisodeLog":
        return EpisodeLog(self.episode_id, np.vstack([self.transitions, other.transitions]))


@dataclass(frozen=True)
class CountTensor:
    """Visit counts n_i(s, a, s')"""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 3 or counts.shape[0] != counts.shape[2]:
            raise StructuralError(f"count tensor must have shape (S, A, S), got {counts.shape}", "estimation")
        if np.any(counts < 0):
            raise ParameterError("visit counts must be nonnegative", "estimation")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "CountTensor") -> "CountTensor":
        return CountTensor(self.counts + other.counts)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel weights psi_a(s, s') stored as weight[a, s, s']"""

    weight: np.ndarray

    def __post_init__(self):
        weight = np.asarray(self.weight, dtype=float)
        if weight.ndim != 3 or weight.shape[1] != weight.shape[2]:
            raise StructuralError(f"kernel must have shape (A, S, S), got {weight.shape}", "estimation")
        if np.any(weight < 0) or not np.all(np.isfinite(weight)):
            raise ParameterError("kernel weights must be finite and nonnegative", "estimation")
        object.__setattr__(self, "weight", weight)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "KernelSpec":
        return cls(np.ones((num_actions, num_states, num_states)))


def count_transitions(log: EpisodeLog, dims: TabularMdp) -> CountTensor:
    """
    Tally n_i(s, a, s') for one episode

    Args:
        log: episode transitions
        dims: MDP supplying |S| and |A|

    Returns:
        dense count tensor
    """
    n_s, n_a = dims.num_states, dims.num_actions
    counts = np.zeros((n_s, n_a, n_s), dtype=np.int64)
    if len(log) == 0:
        return CountTensor(counts)

    rows = log.transitions
    bounds = np.array([n_s, n_a, n_s])
    bad = np.argwhere((rows < 0) | (rows >= bounds))
    if bad.size:
        t, col = bad[0]
        name = ("s", "a", "s_next")[col]
        raise StructuralError(
            f"episode {log.episode_id}, step {t}: {name}={rows[t, col]} outside [0, {bounds[col]})", "estimation"
        )
    np.add.at(counts, (rows[:, 0], rows[:, 1], rows[:, 2]), 1)
    return CountTensor(counts)


def _normalize_rows(weighted: np.ndarray, fallback: TransitionModel) -> TransitionModel:
    totals = weighted.sum(axis=2, keepdims=True)
    visited = totals[..., 0] > 0
    probs = np.array(fallback.probs)
    probs[visited] = weighted[visited] / totals[visited]
    return TransitionModel(probs)


def estimate_tabular(counts: CountTensor, fallback: Optional[TransitionModel] = None) -> TransitionModel:
    """
    Visit-count estimator p_hat(s'|s,a) = n(s,a,s') / sum_s'' n(s,a,s'')

    Args:
        counts: episode visit counts
        fallback: model whose rows replace unvisited (s, a) rows, uniform if omitted

    Returns:
        row-stochastic estimate
    """
    n_s, n_a, _ = counts.counts.shape
    fallback = fallback if fallback is not None else TransitionModel.uniform(n_s, n_a)
    if fallback.probs.shape != counts.counts.shape:
        raise StructuralError("fallback model does not match count dimensions", "estimation")
    return _normalize_rows(counts.counts.astype(float), fallback)


def estimate_kernel(counts: CountTensor, kernel: KernelSpec,
                    fallback: Optional[TransitionModel] = None) -> TransitionModel:
    """Kernel-weighted estimator psi_a(s,s') n(s,a,s') / sum_s'' psi_a(s,s'') n(s,a,s'')"""
    n_s, n_a, _ = counts.counts.shape
    if kernel.weight.shape != (n_a, n_s, n_s):
        raise StructuralError(f"kernel shape {kernel.weight.shape} does not match ({n_a}, {n_s}, {n_s})", "estimation")
    fallback = fallback if fallback is not None else TransitionModel.uniform(n_s, n_a)
    if fallback.probs.shape != counts.counts.shape:
        raise StructuralError("fallback model does not match count dimensions", "estimation")
    weighted = np.transpose(kernel.weight, (1, 0, 2)) * counts.counts
    return _normalize_rows(weighted, fallback)


def per_state_sample_counts(counts: List[CountTensor], num_states: Optional[int] = None) -> np.ndarray:
    """
    n_s = total visits to s over all episodes, actions and successors

    Args:
        counts: per-episode count tensors
        num_states: |S|, needed only when `counts` is empty

    Returns:
        integer array indexed by state
    """
    if not counts:
        return np.zeros(num_states or 0, dtype=np.int64)
    shapes = {c.counts.shape for c in counts}
    if len(shapes) != 1:
        raise StructuralError(f"inconsistent count tensor shapes {sorted(shapes)}", "estimation")
    return np.sum([c.counts.sum(axis=(1, 2)) for c in counts], axis=0).astype(np.int64)


def simulate_episode(mdp: TabularMdp, p: TransitionModel, length: int, rng: np.random.Generator,
                     behavior: Optional[Policy] = None, start: Optional[int] = None,
                     episode_id: int = 0) -> EpisodeLog:
    """
    Draw one trajectory of `length` transitions

    Args:
        mdp: MDP supplying dimensions
        p: generating transition model
        length: number of transitions T_i
        rng: random generator owned by the caller
        behavior: logging policy, uniform random actions if omitted
        start: initial state, uniform if omitted
        episode_id: id stamped on the log

    Returns:
        EpisodeLog with `length` rows
    """
    if length < 0:
        raise ParameterError(f"episode length must be nonnegative, got {length}", "estimation")
    n_s, n_a = mdp.num_states, mdp.num_actions
    state = int(rng.integers(n_s)) if start is None else int(start)
    if not 0 <= state < n_s:
        raise StructuralError(f"start state {state} outside [0, {n_s})", "estimation")

    cumulative = np.cumsum(p.probs, axis=2)
    draws = rng.random(length)
    actions = rng.integers(0, n_a, size=length) if behavior is None else None
    rows = np.zeros((length, 3), dtype=int)
    for t in range(length):
        action = int(actions[t]) if behavior is None else behavior[state]
        nxt = int(np.searchsorted(cumulative[state, action], draws[t], side="right"))
        nxt = min(nxt, n_s - 1)
        rows[t] = (state, action, nxt)
        state = nxt
    return EpisodeLog(episode_id, rows)
