"""
Oracle tests
Simplex grids, grid search of the inner problem, product support grids and policy enumeration
"""

from math import comb

import numpy as np
import pytest

from ambiguity import GroundNorm
from errors import OracleRefusalError, ParameterError, StructuralError
from mdp_core import Policy, TabularMdp, TransitionModel
from oracles import SimplexGrid, enumerate_policies, grid_inner_min, simplex_product_grid
from robust_dp import inner_min_linear


@pytest.fixture
def mdp():
    return TabularMdp.from_rewards([[1.0, 0.0], [0.0, 0.5]], 0.9)


@pytest.fixture
def bases():
    return [
        TransitionModel(np.array([[[0.90, 0.10], [0.20, 0.80]], [[0.30, 0.70], [0.60, 0.40]]])),
        TransitionModel(np.array([[[0.80, 0.20], [0.25, 0.75]], [[0.35, 0.65], [0.50, 0.50]]])),
    ]


def test_grid_points_cover_the_simplex():
    grid = SimplexGrid(3, 0.5)
    points = grid.points()
    assert grid.size == comb(4, 2) == points.shape[0]
    assert np.allclose(points.sum(axis=1), 1.0)
    assert len({tuple(p) for p in points.tolist()}) == points.shape[0]


def test_one_dimensional_grid_is_a_single_point():
    assert SimplexGrid(1, 0.1).points().tolist() == [[1.0]]


def test_step_must_divide_one():
    with pytest.raises(ParameterError):
        SimplexGrid(3, 0.3)
    with pytest.raises(ParameterError):
        SimplexGrid(3, 0.0)


def test_large_grids_are_refused():
    with pytest.raises(OracleRefusalError):
        SimplexGrid(5, 0.5).points()


def test_grid_search_never_beats_the_exact_minimum():
    rng = np.random.default_rng(12)
    grid = SimplexGrid(4, 0.1)
    for norm in (GroundNorm.L1_PRODUCT, GroundNorm.L2_PRODUCT):
        for _ in range(5):
            v = rng.normal(size=4)
            p_hat = rng.dirichlet(np.ones(4))
            lam = float(rng.uniform(0.0, 2.0))
            searched = grid_inner_min(v, p_hat, lam, norm, grid)
            assert searched >= inner_min_linear(v, p_hat, lam, norm)[1] - 1e-9


def test_grid_search_checks_dimensions():
    with pytest.raises(StructuralError):
        grid_inner_min(np.zeros(3), np.array([0.5, 0.5]), 1.0, GroundNorm.L1_PRODUCT, SimplexGrid(3, 0.5))


def test_policy_enumeration(mdp):
    policies = enumerate_policies(mdp)
    assert len(policies) == 4
    assert policies[0] == Policy([0, 0])
    with pytest.raises(OracleRefusalError):
        enumerate_policies(mdp, limit=3)


def test_product_grid_contains_the_bases(mdp, bases):
    pi = Policy([0, 1])
    grid = simplex_product_grid(mdp, pi, 0.5, bases)
    assert grid.shape == (2 * 3 ** 2 + 2, 2, 2, 2)
    for base in bases:
        assert np.any(np.all(np.isclose(grid, base.probs), axis=(1, 2, 3)))
    assert np.allclose(grid.sum(axis=3), 1.0)


def test_product_grid_copies_off_policy_rows(mdp, bases):
    grid = simplex_product_grid(mdp, Policy([0, 1]), 0.5, bases[:1])
    assert np.allclose(grid[:, 0, 1], bases[0].probs[0, 1])
    assert np.allclose(grid[:, 1, 0], bases[0].probs[1, 0])


def test_bases_differing_only_on_policy_rows_share_a_grid(mdp, bases):
    twin = bases[0].with_row(0, 0, np.array([0.5, 0.5]))
    grid = simplex_product_grid(mdp, Policy([0, 1]), 0.5, [bases[0], twin])
    assert grid.shape[0] == 3 ** 2 + 2


def test_single_action_bases_share_a_grid():
    mdp = TabularMdp.from_rewards([[1.0], [0.0]], 0.9)
    atoms = [TransitionModel(np.array([[[0.5, 0.5]], [[0.0, 1.0]]])),
             TransitionModel(np.array([[[1.0, 0.0]], [[0.5, 0.5]]]))]
    grid = simplex_product_grid(mdp, Policy([0, 0]), 0.5, atoms)
    assert grid.shape == (3 ** 2 + 2, 2, 1, 2)


def test_product_grid_guard(mdp, bases):
    with pytest.raises(OracleRefusalError):
        simplex_product_grid(mdp, Policy([0, 1]), 0.5, bases, max_models=10)
    with pytest.raises(ParameterError):
        simplex_product_grid(mdp, Policy([0, 1]), 0.5, [])
