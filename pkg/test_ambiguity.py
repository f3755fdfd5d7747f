"""
Ambiguity tests
Ground norms, the beta table, discrete Wasserstein distances and ball membership
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ambiguity import (AmbiguitySpec, DiscreteModelDistribution, EmpiricalDistribution, GroundNorm,
                       build_empirical, ground_distance, in_ball, norm_beta, sup_one_per_state,
                       wasserstein_discrete)
from errors import ParameterError, StructuralError
from mdp_core import InstanceGenerator, TransitionModel


@pytest.fixture
def rng():
    return np.random.default_rng(314)


def _models(rng, count, num_states=3, num_actions=2):
    return [InstanceGenerator.random_model(rng, num_states, num_actions) for _ in range(count)]


def test_norm_names_parse():
    assert GroundNorm.parse("L1") is GroundNorm.L1_PRODUCT
    assert GroundNorm.parse(" sup_one ") is GroundNorm.SUP_ONE
    assert GroundNorm.parse("l2_product") is GroundNorm.L2_PRODUCT
    with pytest.raises(ParameterError):
        GroundNorm.parse("linf")


def test_norms_on_a_hand_difference():
    diff = np.zeros((2, 2, 2))
    diff[0, 0] = [0.2, -0.2]
    diff[0, 1] = [0.1, -0.1]
    diff[1, 1] = [-0.3, 0.3]
    assert GroundNorm.L1_PRODUCT.evaluate(diff) == pytest.approx(1.2)
    assert GroundNorm.SUP_ONE.evaluate(diff) == pytest.approx(0.4 + 0.6)
    assert GroundNorm.L2_PRODUCT.evaluate(diff) == pytest.approx(np.sqrt(0.08 + 0.02 + 0.18))
    assert_allclose(sup_one_per_state(diff), [0.4, 0.6])


@pytest.mark.parametrize("norm", list(GroundNorm))
def test_beta_bounds_the_sup_one_sum(rng, norm):
    beta = norm_beta(norm, 3, 2)
    for _ in range(1000):
        p, q = _models(rng, 2)
        diff = p.probs - q.probs
        assert sup_one_per_state(diff).sum() <= beta * norm.evaluate(diff) + 1e-12


def test_beta_table():
    assert norm_beta(GroundNorm.L1_PRODUCT, 5, 3) == 1.0
    assert norm_beta(GroundNorm.SUP_ONE, 5, 3) == 1.0
    assert norm_beta(GroundNorm.L2_PRODUCT, 5, 3) == 5.0


def test_batch_norms_match_single_norms(rng):
    models = _models(rng, 4)
    diffs = np.stack([m.probs - models[0].probs for m in models])
    for norm in GroundNorm:
        assert_allclose(norm.evaluate_batch(diffs), [norm.evaluate(d) for d in diffs])


def test_wasserstein_between_identical_distributions_is_zero(rng):
    mu = DiscreteModelDistribution(_models(rng, 3), np.array([0.2, 0.3, 0.5]))
    assert wasserstein_discrete(mu, mu, GroundNorm.L1_PRODUCT) == pytest.approx(0.0, abs=1e-9)


def test_wasserstein_between_diracs_is_the_ground_distance(rng):
    a, b = _models(rng, 2)
    w = wasserstein_discrete(DiscreteModelDistribution.dirac(a), DiscreteModelDistribution.dirac(b),
                             GroundNorm.SUP_ONE)
    assert w == pytest.approx(ground_distance(a, b, GroundNorm.SUP_ONE))


def test_wasserstein_splits_mass(rng):
    a, b = _models(rng, 2)
    mu = DiscreteModelDistribution([a, b], np.array([0.5, 0.5]))
    nu = DiscreteModelDistribution([a, a], np.array([0.5, 0.5]))
    assert wasserstein_discrete(mu, nu, GroundNorm.L1_PRODUCT) == pytest.approx(
        0.5 * ground_distance(a, b, GroundNorm.L1_PRODUCT), abs=1e-9)


@pytest.mark.parametrize("norm", list(GroundNorm))
def test_wasserstein_is_a_metric(rng, norm):
    for _ in range(10):
        dists = [DiscreteModelDistribution(_models(rng, 3), rng.dirichlet(np.ones(3))) for _ in range(3)]
        ab = wasserstein_discrete(dists[0], dists[1], norm)
        ba = wasserstein_discrete(dists[1], dists[0], norm)
        bc = wasserstein_discrete(dists[1], dists[2], norm)
        ac = wasserstein_discrete(dists[0], dists[2], norm)
        assert ab == pytest.approx(ba, abs=1e-8)
        assert ac <= ab + bc + 1e-8
        assert ab >= 0.0


def test_mismatched_shapes_are_structural(rng):
    a = InstanceGenerator.random_model(rng, 3, 2)
    b = InstanceGenerator.random_model(rng, 2, 2)
    with pytest.raises(StructuralError):
        ground_distance(a, b, GroundNorm.L1_PRODUCT)


def test_weights_must_be_normalized(rng):
    with pytest.raises(ParameterError):
        DiscreteModelDistribution(_models(rng, 2), np.array([0.5, 0.6]))


def test_empirical_weights_must_be_uniform(rng):
    with pytest.raises(ParameterError):
        EmpiricalDistribution(DiscreteModelDistribution(_models(rng, 2), np.array([0.4, 0.6])))


def test_build_empirical_keeps_duplicates(rng):
    model = InstanceGenerator.random_model(rng, 3, 2)
    emp = build_empirical([model, model, model])
    assert emp.n == 3
    assert_allclose(emp.weights, [1.0 / 3.0] * 3)
    with pytest.raises(ParameterError):
        build_empirical([])


def test_aggregate_radius_defaults_to_the_sum():
    spec = AmbiguitySpec.from_radii([0.1, 0.2, 0.05])
    assert spec.scalar_radius == pytest.approx(0.35)
    assert spec.aggregate_rule == "sum"
    explicit = AmbiguitySpec.from_radii([0.1, 0.2], scalar_radius=0.15)
    assert explicit.aggregate_rule == "explicit"
    with pytest.raises(ParameterError):
        AmbiguitySpec.from_radii([0.1, -0.2])


def test_ball_membership(rng):
    emp = build_empirical(_models(rng, 2))
    far = DiscreteModelDistribution.dirac(TransitionModel.uniform(3, 2))
    assert in_ball(emp.base, AmbiguitySpec.scalar(0.0, 3), emp)
    assert in_ball(far, AmbiguitySpec.scalar(np.inf, 3), emp)
    distance = wasserstein_discrete(far, emp.base, GroundNorm.L1_PRODUCT)
    assert in_ball(far, AmbiguitySpec.scalar(distance, 3), emp)
    assert not in_ball(far, AmbiguitySpec.scalar(distance / 2.0, 3), emp)
