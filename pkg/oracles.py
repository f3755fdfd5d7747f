"""
Oracle module v1.0
Wasserstein DRMDP certification toolkit
Brute-force verifiers: simplex grid search, product support grids for the transport oracle
and exhaustive policy enumeration
"""

import itertools
import logging
from dataclasses import dataclass
from math import comb
from typing import Iterator, List, Sequence

import numpy as np

from ambiguity import GroundNorm
from errors import OracleRefusalError, ParameterError, StructuralError
from mdp_core import Policy, TabularMdp, TransitionModel, ValueTable, all_policies

# Logging setup
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

MAX_GRID_DIMENSION = 4
MAX_GRID_POINTS = 1_000_000_000
MAX_POLICIES = 10_000
MAX_SUPPORT_MODELS = 5_000_000


@dataclass(frozen=True)
class SimplexGrid:
    """Regular grid {k / N : k in N^d, sum k = N} over the probability simplex, N = 1 / step"""

    dimension: int
    step: float

    def __post_init__(self):
        if self.dimension < 1:
            raise ParameterError(f"grid dimension must be positive, got {self.dimension}", "oracles")
        if not 0 < self.step <= 1:
            raise ParameterError(f"grid step must lie in (0, 1], got {self.step}", "oracles")
        divisions = 1.0 / self.step
        if abs(divisions - round(divisions)) > 1e-9 * divisions:
            raise ParameterError(f"1 / step must be an integer, got step {self.step}", "oracles")

    @property
    def divisions(self) -> int:
        return int(round(1.0 / self.step))

    @property
    def size(self) -> int:
        return comb(self.divisions + self.dimension - 1, self.dimension - 1)

    def guard(self) -> None:
        if self.dimension > MAX_GRID_DIMENSION:
            raise OracleRefusalError(
                f"simplex grid of dimension {self.dimension} refused (limit {MAX_GRID_DIMENSION})", "oracles"
            )
        if self.size > MAX_GRID_POINTS:
            raise OracleRefusalError(f"simplex grid with {self.size} points refused", "oracles")

    def iter_chunks(self) -> Iterator[np.ndarray]:
        """Grid points in chunks; the last two coordinates vary within a chunk"""
        self.guard()
        n = self.divisions
        d = self.dimension
        if d == 1:
            yield np.ones((1, 1))
            return
        for prefix in itertools.product(range(n + 1), repeat=d - 2):
            used = sum(prefix)
            if used > n:
                continue
            last = np.arange(n - used + 1)
            chunk = np.empty((last.size, d))
            chunk[:, : d - 2] = prefix
            chunk[:, d - 2] = last
            chunk[:, d - 1] = n - used - last
            yield chunk / n

    def points(self) -> np.ndarray:
        return np.vstack(list(self.iter_chunks()))


def grid_inner_min(v, p_hat_row: np.ndarray, lam: float, norm: GroundNorm, grid: SimplexGrid) -> float:
    """
    min over grid points q of <q, v> + lam * ||q - p_hat_row||

    Args:
        v: successor values (ValueTable or array)
        p_hat_row: nominal row
        lam: penalty multiplier
        norm: ground norm, applied rowwise
        grid: simplex grid of matching dimension

    Returns:
        grid minimum, never below the exact minimum
    """
    v = np.asarray(v.values if isinstance(v, ValueTable) else v, dtype=float)
    p_hat = np.asarray(p_hat_row, dtype=float)
    if v.size != grid.dimension or p_hat.size != grid.dimension:
        raise StructuralError(f"row length {p_hat.size} / values {v.size} vs grid dimension {grid.dimension}",
                              "oracles")
    if lam < 0:
        raise ParameterError(f"lambda must be nonnegative, got {lam}", "oracles")
    best = np.inf
    for chunk in grid.iter_chunks():
        values = chunk @ v + lam * norm.row_norm(chunk - p_hat)
        best = min(best, float(values.min()))
    return best


def enumerate_policies(mdp: TabularMdp, limit: int = MAX_POLICIES) -> List[Policy]:
    """
    Every deterministic stationary policy, lexicographic in (pi(0), pi(1), ...)

    Args:
        mdp: MDP backbone
        limit: refusal threshold on |A|^|S|

    Returns:
        list of policies, the first maps every state to action 0
    """
    count = mdp.num_actions ** mdp.num_states
    if count > limit:
        raise OracleRefusalError(f"{count} policies exceed the enumeration guard {limit}", "oracles")
    return list(all_policies(mdp.num_states, mdp.num_actions))


def simplex_product_grid(mdp: TabularMdp, pi: Policy, step: float, base_models: Sequence[TransitionModel],
                         max_models: int = MAX_SUPPORT_MODELS) -> np.ndarray:
    """
    Support grid for the transport oracle

    Every combination of simplex-grid rows on (s, pi(s)) for all s, with the remaining rows copied
    from each distinct base model; the base models themselves are appended.

    Args:
        mdp: MDP backbone
        pi: policy whose rows are gridded
        step: simplex grid resolution
        base_models: models supplying off-policy rows (normally the empirical atoms)
        max_models: refusal threshold

    Returns:
        stacked (k, S, A, S) array of row-stochastic models
    """
    if not base_models:
        raise ParameterError("simplex product grid needs at least one base model", "oracles")
    n_s = mdp.num_states
    row_grid = SimplexGrid(n_s, step)
    idx = np.arange(n_s)
    base = np.stack([m.probs for m in base_models])

    # bases that differ only on policy rows give identical grids
    mask = np.ones(base.shape[1:3], dtype=bool)
    mask[idx, pi.actions] = False
    off_policy = base[:, mask, :].reshape(base.shape[0], -1)
    if off_policy.shape[1] == 0:
        distinct = base[:1]
    else:
        _, first = np.unique(off_policy, axis=0, return_index=True)
        distinct = base[np.sort(first)]

    total = distinct.shape[0] * row_grid.size ** n_s + base.shape[0]
    if total > max_models:
        raise OracleRefusalError(f"support grid with {total} models refused (limit {max_models})", "oracles")

    rows = row_grid.points()
    combos = np.stack(np.meshgrid(*[np.arange(rows.shape[0])] * n_s, indexing="ij"), axis=-1).reshape(-1, n_s)
    blocks = []
    for model in distinct:
        block = np.broadcast_to(model, (combos.shape[0],) + model.shape).copy()
        block[:, idx, pi.actions, :] = rows[combos]
        blocks.append(block)
    blocks.append(base)
    grid = np.concatenate(blocks)
    logger.debug(f"support grid: {grid.shape[0]} models at step {step}")
    return grid
