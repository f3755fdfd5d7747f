"""
Guarantee tests
Radius schedule, Wilson intervals and the out-of-sample coverage experiment
"""

import numpy as np
import pytest

from ambiguity import DiscreteModelDistribution
from errors import ParameterError, StructuralError, UnsupportedParameterError
from guarantees import RadiusSchedule, oos_experiment, radius, wilson_interval
from mdp_core import TabularMdp, TransitionModel


@pytest.fixture
def mdp():
    return TabularMdp.from_rewards([[1.0, 0.0], [0.0, 0.5]], 0.9, r_max=1.0)


@pytest.fixture
def true_mu():
    return DiscreteModelDistribution([
        TransitionModel(np.array([[[0.90, 0.10], [0.20, 0.80]], [[0.30, 0.70], [0.60, 0.40]]])),
        TransitionModel(np.array([[[0.80, 0.20], [0.25, 0.75]], [[0.35, 0.65], [0.50, 0.50]]])),
        TransitionModel(np.array([[[0.85, 0.15], [0.10, 0.90]], [[0.20, 0.80], [0.55, 0.45]]])),
    ], np.array([0.4, 0.3, 0.3]))


def test_radius_follows_the_schedule():
    schedule = RadiusSchedule()
    assert schedule.threshold == pytest.approx(np.log(20.0) / 0.5)
    assert radius(schedule, 100) == pytest.approx(2.0 * (np.log(20.0) / 50.0) ** 0.25)
    assert radius(schedule, 3) == 2.0
    assert radius(schedule, 0) == 2.0
    np.testing.assert_allclose(radius(schedule, np.array([0, 100])), [2.0, radius(schedule, 100)])


def test_radius_shrinks_with_more_samples():
    schedule = RadiusSchedule(m=6)
    values = radius(schedule, np.array([10.0, 100.0, 1000.0, 10000.0]))
    assert np.all(np.diff(values) < 0)
    assert schedule.exponent == pytest.approx(1.0 / 6.0)


def test_small_m_uses_the_square_root_rate():
    assert RadiusSchedule(m=1).exponent == 0.5


def test_radius_worked_example():
    schedule = RadiusSchedule(c0=1.0, c1=np.e, c2=1.0, epsilon=np.exp(-3.0), m=4)
    assert schedule.log_term == pytest.approx(4.0, abs=1e-12)
    assert radius(schedule, 64) == pytest.approx(0.5, abs=1e-12)


def test_radius_is_continuous_at_the_threshold():
    schedule = RadiusSchedule(m=6)
    at = radius(schedule, schedule.threshold)
    assert at == pytest.approx(schedule.c0, abs=1e-12)
    assert radius(schedule, schedule.threshold * (1.0 + 1e-13)) == pytest.approx(at, abs=1e-12)
    assert radius(schedule, np.nextafter(schedule.threshold, 0.0)) == schedule.c0


def test_radius_vanishes_with_many_samples():
    schedule = RadiusSchedule()
    assert radius(schedule, 1e9) < 0.1 * schedule.c0


def test_schedule_rejects_bad_constants():
    with pytest.raises(UnsupportedParameterError):
        RadiusSchedule(m=2)
    with pytest.raises(ParameterError):
        RadiusSchedule(c1=0.1, epsilon=0.1)
    with pytest.raises(ParameterError):
        RadiusSchedule(epsilon=1.0)
    with pytest.raises(ParameterError):
        radius(RadiusSchedule(), -1)


def test_wilson_interval():
    low, high = wilson_interval(10, 10)
    assert low == pytest.approx(0.7225, abs=1e-3)
    assert high == pytest.approx(1.0)
    low, high = wilson_interval(5, 10)
    assert low < 0.5 < high
    with pytest.raises(ParameterError):
        wilson_interval(0, 0)


def test_full_diameter_radius_always_covers(mdp, true_mu):
    report = oos_experiment(true_mu, mdp, RadiusSchedule.for_mdp(mdp), n_episodes=3, episode_len=20,
                            trials=3, seed=5, radius_override=[4.0, 4.0])
    assert report.covered == 3
    assert report.passed
    assert report.to_dict()["min_margin"] >= -1e-9


def test_experiment_is_reproducible(mdp, true_mu):
    schedule = RadiusSchedule.for_mdp(mdp)
    first = oos_experiment(true_mu, mdp, schedule, n_episodes=3, episode_len=30, trials=3, seed=9)
    second = oos_experiment(true_mu, mdp, schedule, n_episodes=3, episode_len=30, trials=3, seed=9)
    threaded = oos_experiment(true_mu, mdp, schedule, n_episodes=3, episode_len=30, trials=3, seed=9, threads=2)
    margins = [r.margin for r in first.results]
    assert margins == [r.margin for r in second.results]
    assert margins == [r.margin for r in threaded.results]
    assert first.covered == second.covered == threaded.covered


def test_experiment_validates_arguments(mdp, true_mu):
    schedule = RadiusSchedule.for_mdp(mdp)
    with pytest.raises(ParameterError):
        oos_experiment(true_mu, mdp, schedule, n_episodes=3, episode_len=30, trials=0, seed=1)
    with pytest.raises(StructuralError):
        oos_experiment(true_mu, mdp, RadiusSchedule(m=3), n_episodes=3, episode_len=30, trials=1, seed=1)
    with pytest.raises(ParameterError):
        oos_experiment(true_mu, mdp, None, n_episodes=3, episode_len=30, trials=1, seed=1)
    with pytest.raises(ParameterError):
        oos_experiment(true_mu, mdp, None, n_episodes=3, episode_len=30, trials=1, seed=1, radius_override=0.1)


def test_fixed_radii_run_without_a_schedule():
    mdp = TabularMdp.from_rewards([[1.0], [0.0]], 0.8)
    single = DiscreteModelDistribution([TransitionModel(np.array([[[0.7, 0.3]], [[0.4, 0.6]]]))], np.array([1.0]))
    report = oos_experiment(single, mdp, None, n_episodes=2, episode_len=20, trials=2, seed=3,
                            radius_override=[4.0, 4.0], epsilon=0.2)
    assert report.epsilon == 0.2
    assert report.covered == 2
    assert report.meta["radius_rule"] == "override"


@pytest.mark.slow
def test_coverage_meets_the_confidence_level(mdp, true_mu):
    schedule = RadiusSchedule.for_mdp(mdp)
    report = oos_experiment(true_mu, mdp, schedule, n_episodes=10, episode_len=100, trials=500, seed=2024,
                            threads=4)
    assert report.coverage >= 0.85
    assert report.passed
    doubled = oos_experiment(true_mu, mdp, schedule, n_episodes=10, episode_len=100, trials=500, seed=2024,
                             radius_scale=2.0, threads=4)
    assert doubled.covered >= report.covered
