"""
Ambiguity module v1.0
Wasserstein DRMDP certification toolkit
Ground norms on transition models, discrete 1-Wasserstein distance, Wasserstein balls
and the Dirac-mixture empirical distribution
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sps
from scipy.optimize import linprog

from errors import ParameterError, StructuralError
from mdp_core import TransitionModel

# Logging setup
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

WEIGHT_SUM_TOL = 1e-12
BALL_SLACK = 1e-10


class GroundNorm(Enum):
    """Norm on transition-model differences used as Wasserstein transport cost"""

    L1_PRODUCT = "l1"
    L2_PRODUCT = "l2"
    SUP_ONE = "sup_one"

    @classmethod
    def parse(cls, text: str) -> "GroundNorm":
        key = str(text).strip().lower()
        for member in cls:
            if key in (member.value, member.name.lower()):
                return member
        raise ParameterError(f"unknown ground norm '{text}'", "ambiguity")

    def evaluate(self, diff: np.ndarray) -> float:
        """||diff|| for a (S, A, S) difference tensor"""
        diff = np.asarray(diff, dtype=float)
        if self is GroundNorm.L1_PRODUCT:
            return float(np.abs(diff).sum())
        if self is GroundNorm.L2_PRODUCT:
            return float(np.sqrt(np.sum(diff * diff)))
        return float(np.abs(diff).sum(axis=2).max(axis=1).sum())

    def evaluate_batch(self, diff: np.ndarray) -> np.ndarray:
        """Norms of a stack (..., S, A, S) of difference tensors"""
        diff = np.asarray(diff, dtype=float)
        if self is GroundNorm.L1_PRODUCT:
            return np.abs(diff).sum(axis=(-3, -2, -1))
        if self is GroundNorm.L2_PRODUCT:
            return np.sqrt(np.sum(diff * diff, axis=(-3, -2, -1)))
        return np.abs(diff).sum(axis=-1).max(axis=-1).sum(axis=-1)

    def row_norm(self, diff: np.ndarray) -> np.ndarray:
        """Norm restricted to a single (s, a) row; l1 for the additive norms"""
        diff = np.asarray(diff, dtype=float)
        if self is GroundNorm.L2_PRODUCT:
            return np.sqrt(np.sum(diff * diff, axis=-1))
        return np.abs(diff).sum(axis=-1)

    @property
    def rowwise_l1(self) -> bool:
        return self is not GroundNorm.L2_PRODUCT


def norm_beta(norm: GroundNorm, num_states: int, num_actions: int) -> float:
    """
    Constant beta with sum_s ||p_s||_{inf,1} <= beta * ||p||

    L1_PRODUCT and SUP_ONE give 1. For L2_PRODUCT, ||x||_1 <= sqrt(|S|) ||x||_2 per row
    and Cauchy-Schwarz over states give |S|.
    """
    if norm is GroundNorm.L2_PRODUCT:
        return float(num_states)
    return 1.0


def sup_one_per_state(diff: np.ndarray) -> np.ndarray:
    """||p_s||_{inf,1} = max_a sum_s' |p(s, a, s')| for every s"""
    return np.abs(np.asarray(diff, dtype=float)).sum(axis=2).max(axis=1)


@dataclass(frozen=True)
class DiscreteModelDistribution:
    """Finite mixture of transition models, sum_j w_j delta_{p_j}"""

    atoms: List[TransitionModel]
    weights: np.ndarray

    def __post_init__(self):
        atoms = list(self.atoms)
        if not atoms:
            raise ParameterError("distribution needs at least one atom", "ambiguity")
        shape = atoms[0].probs.shape
        for j, atom in enumerate(atoms):
            if atom.probs.shape != shape:
                raise StructuralError(f"atom {j} has shape {atom.probs.shape}, expected {shape}", "ambiguity")
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if weights.size != len(atoms):
            raise StructuralError(f"{weights.size} weights for {len(atoms)} atoms", "ambiguity")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ParameterError(f"weights must be nonnegative and sum to 1, got sum {weights.sum()!r}", "ambiguity")
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def dirac(cls, model: TransitionModel) -> "DiscreteModelDistribution":
        return cls([model], np.ones(1))

    @property
    def size(self) -> int:
        return len(self.atoms)

    @property
    def shape(self):
        return self.atoms[0].probs.shape

    def stacked(self) -> np.ndarray:
        return np.stack([atom.probs for atom in self.atoms])


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Uniform Dirac mixture (1/n) sum_i delta_{p_hat_i}"""

    base: DiscreteModelDistribution

    def __post_init__(self):
        n = self.base.size
        if not np.allclose(self.base.weights, 1.0 / n, rtol=0.0, atol=WEIGHT_SUM_TOL):
            raise ParameterError("empirical distribution weights must all equal 1/n", "ambiguity")

    @property
    def atoms(self) -> List[TransitionModel]:
        return self.base.atoms

    @property
    def n(self) -> int:
        return self.base.size

    @property
    def weights(self) -> np.ndarray:
        return self.base.weights

    def stacked(self) -> np.ndarray:
        return self.base.stacked()


@dataclass(frozen=True)
class AmbiguitySpec:
    """
    Wasserstein ambiguity set parameters

    Args:
        radius_per_state: alpha_s >= 0 for every state (np.inf allowed)
        scalar_radius: aggregate alpha used by the trajectory-level dual
        norm: ground norm
        aggregate_rule: how scalar_radius was derived, carried into report metadata
    """

    radius_per_state: np.ndarray
    scalar_radius: float
    norm: GroundNorm = GroundNorm.L1_PRODUCT
    aggregate_rule: str = "sum"

    def __post_init__(self):
        radii = np.asarray(self.radius_per_state, dtype=float).reshape(-1)
        if radii.size == 0 or np.any(np.isnan(radii)) or np.any(radii < 0):
            raise ParameterError(f"per-state radii must be nonnegative, got {radii.tolist()}", "ambiguity")
        if np.isnan(self.scalar_radius) or self.scalar_radius < 0:
            raise ParameterError(f"scalar radius must be nonnegative, got {self.scalar_radius}", "ambiguity")
        radii.setflags(write=False)
        object.__setattr__(self, "radius_per_state", radii)
        object.__setattr__(self, "scalar_radius", float(self.scalar_radius))

    @classmethod
    def from_radii(cls, radii: Sequence[float], norm: GroundNorm = GroundNorm.L1_PRODUCT,
                   scalar_radius: Optional[float] = None) -> "AmbiguitySpec":
        """Per-state radii with the aggregate defaulting to sum_s alpha_s"""
        radii = np.asarray(radii, dtype=float).reshape(-1)
        if scalar_radius is None:
            return cls(radii, float(np.sum(radii)), norm, "sum")
        return cls(radii, float(scalar_radius), norm, "explicit")

    @classmethod
    def scalar(cls, alpha: float, num_states: int, norm: GroundNorm = GroundNorm.L1_PRODUCT) -> "AmbiguitySpec":
        """Aggregate radius alpha; every state is given alpha as its own radius"""
        return cls(np.full(num_states, float(alpha)), float(alpha), norm, "explicit")

    def scaled(self, factor: float) -> "AmbiguitySpec":
        return AmbiguitySpec(self.radius_per_state * factor, self.scalar_radius * factor,
                             self.norm, self.aggregate_rule)

    @property
    def num_states(self) -> int:
        return int(self.radius_per_state.size)

    def metadata(self) -> dict:
        return {"norm": self.norm.name, "aggregate_rule": self.aggregate_rule}


def ground_distance(a: TransitionModel, b: TransitionModel, norm: GroundNorm) -> float:
    """
    Transport cost ||a - b|| between two transition models

    Args:
        a: first model
        b: second model
        norm: ground norm

    Returns:
        nonnegative distance
    """
    if a.probs.shape != b.probs.shape:
        raise StructuralError(f"model shapes differ: {a.probs.shape} vs {b.probs.shape}", "ambiguity")
    return norm.evaluate(a.probs - b.probs)


def cost_matrix(mu: DiscreteModelDistribution, nu: DiscreteModelDistribution, norm: GroundNorm) -> np.ndarray:
    if mu.shape != nu.shape:
        raise StructuralError(f"model shapes differ: {mu.shape} vs {nu.shape}", "ambiguity")
    diff = mu.stacked()[:, None] - nu.stacked()[None, :]
    return norm.evaluate_batch(diff)


def wasserstein_discrete(mu: DiscreteModelDistribution, nu: DiscreteModelDistribution,
                         norm: GroundNorm) -> float:
    """
    Exact 1-Wasserstein distance between two finite mixtures

    Solves min <C, T> s.t. T 1 = w_mu, T^T 1 = w_nu, T >= 0 with HiGHS.

    Args:
        mu: first distribution
        nu: second distribution
        norm: ground norm

    Returns:
        optimal transport cost
    """
    for dist in (mu, nu):
        if abs(dist.weights.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ParameterError("distribution weights are not normalized", "ambiguity")
    costs = cost_matrix(mu, nu, norm)
    n, m = costs.shape
    if n == 1 or m == 1:
        # one marginal is a Dirac: the coupling is forced
        return float(np.sum(costs * np.outer(mu.weights, nu.weights)))

    a_eq = sps.vstack([
        sps.kron(sps.eye(n), np.ones((1, m))),
        sps.kron(np.ones((1, n)), sps.eye(m)),
    ]).tocsr()
    b_eq = np.concatenate([mu.weights, nu.weights])
    result = linprog(costs.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if result.status != 0:
        raise StructuralError(f"transport LP failed: {result.message}", "ambiguity")
    logger.debug(f"transport LP {n}x{m}: cost {result.fun:.6g}")
    return max(float(result.fun), 0.0)


def in_ball(mu: DiscreteModelDistribution, spec: AmbiguitySpec, center: EmpiricalDistribution) -> bool:
    """True iff W(mu, center) <= aggregate radius (+1e-10)"""
    if np.isinf(spec.scalar_radius):
        return True
    return wasserstein_discrete(mu, center.base, spec.norm) <= spec.scalar_radius + BALL_SLACK


def build_empirical(models: List[TransitionModel]) -> EmpiricalDistribution:
    """
    Uniform Dirac mixture over per-episode estimates, duplicates kept as separate atoms

    Args:
        models: p_hat_1 .. p_hat_n

    Returns:
        EmpiricalDistribution with weights 1/n
    """
    models = list(models)
    if not models:
        raise ParameterError("cannot build an empirical distribution from zero models", "ambiguity")
    n = len(models)
    return EmpiricalDistribution(DiscreteModelDistribution(models, np.full(n, 1.0 / n)))
