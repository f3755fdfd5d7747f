"""
Estimation tests
Visit counts, tabular and kernel estimators, sample counts and the episode simulator
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import StructuralError
from estimation import (CountTensor, EpisodeLog, KernelSpec, count_transitions, estimate_kernel,
                        estimate_tabular, per_state_sample_counts, simulate_episode)
from mdp_core import InstanceGenerator, Policy, TabularMdp, TransitionModel


@pytest.fixture
def mdp():
    return TabularMdp.from_rewards([[1.0, 0.0], [0.0, 0.5]], 0.9)


def test_counts_tally_every_transition(mdp):
    log = EpisodeLog.from_tuples(0, [(0, 0, 1), (1, 1, 1), (1, 1, 0), (0, 0, 1)])
    counts = count_transitions(log, mdp)
    assert counts.total == 4
    assert counts.counts[0, 0, 1] == 2
    assert counts.counts[1, 1, 0] == 1


def test_out_of_range_index_names_the_step(mdp):
    log = EpisodeLog.from_tuples(3, [(0, 0, 1), (1, 2, 0)])
    with pytest.raises(StructuralError, match="episode 3, step 1: a=2"):
        count_transitions(log, mdp)


def test_empty_episode_counts_nothing(mdp):
    assert count_transitions(EpisodeLog.from_tuples(0, []), mdp).total == 0


def test_tabular_estimate_normalizes_visited_rows(mdp):
    log = EpisodeLog.from_tuples(0, [(0, 0, 0), (0, 0, 1), (0, 0, 1), (1, 1, 0)])
    p_hat = estimate_tabular(count_transitions(log, mdp))
    assert_allclose(p_hat.row(0, 0), [1.0 / 3.0, 2.0 / 3.0])
    assert_allclose(p_hat.row(1, 1), [1.0, 0.0])


def test_unvisited_rows_fall_back_to_uniform(mdp):
    log = EpisodeLog.from_tuples(0, [(0, 0, 1)])
    p_hat = estimate_tabular(count_transitions(log, mdp))
    assert_allclose(p_hat.row(1, 0), [0.5, 0.5])
    assert_allclose(p_hat.row(0, 1), [0.5, 0.5])


def test_unvisited_rows_use_given_fallback(mdp):
    fallback = TransitionModel(np.array([[[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]]))
    p_hat = estimate_tabular(count_transitions(EpisodeLog.from_tuples(0, []), mdp), fallback)
    assert_allclose(p_hat.probs, fallback.probs)


def test_uniform_kernel_reproduces_tabular_estimate(mdp):
    log = EpisodeLog.from_tuples(0, [(0, 0, 0), (0, 0, 1), (1, 1, 1), (1, 0, 0)])
    counts = count_transitions(log, mdp)
    assert_allclose(estimate_kernel(counts, KernelSpec.uniform(2, 2)).probs, estimate_tabular(counts).probs)


def test_kernel_weights_reshape_the_row(mdp):
    log = EpisodeLog.from_tuples(0, [(0, 0, 0), (0, 0, 1)])
    weight = np.ones((2, 2, 2))
    weight[0, 0, 1] = 3.0
    p_hat = estimate_kernel(count_transitions(log, mdp), KernelSpec(weight))
    assert_allclose(p_hat.row(0, 0), [0.25, 0.75])


def test_kernel_shape_mismatch_is_structural(mdp):
    counts = count_transitions(EpisodeLog.from_tuples(0, [(0, 0, 1)]), mdp)
    with pytest.raises(StructuralError):
        estimate_kernel(counts, KernelSpec(np.ones((3, 2, 2))))


def test_per_state_counts_sum_over_episodes(mdp):
    logs = [EpisodeLog.from_tuples(0, [(0, 0, 1), (1, 0, 0)]), EpisodeLog.from_tuples(1, [(0, 1, 0)])]
    counts = [count_transitions(log, mdp) for log in logs]
    assert per_state_sample_counts(counts).tolist() == [2, 1]
    assert per_state_sample_counts([], num_states=2).tolist() == [0, 0]


def test_count_tensors_add(mdp):
    a = count_transitions(EpisodeLog.from_tuples(0, [(0, 0, 1)]), mdp)
    b = count_transitions(EpisodeLog.from_tuples(1, [(0, 0, 1)]), mdp)
    assert (a + b).counts[0, 0, 1] == 2
    assert isinstance(a + b, CountTensor)


def test_simulated_episode_follows_deterministic_dynamics(mdp):
    p = TransitionModel(np.array([[[0.0, 1.0], [0.0, 1.0]], [[1.0, 0.0], [1.0, 0.0]]]))
    log = simulate_episode(mdp, p, 6, np.random.default_rng(1), behavior=Policy([0, 1]), start=0)
    assert log.transitions.tolist() == [[0, 0, 1], [1, 1, 0]] * 3


def test_simulation_is_reproducible_under_a_seed(mdp):
    p = TransitionModel.uniform(2, 2)
    first = simulate_episode(mdp, p, 50, np.random.default_rng(7))
    second = simulate_episode(mdp, p, 50, np.random.default_rng(7))
    assert np.array_equal(first.transitions, second.transitions)
    assert len(first) == 50


def test_long_episodes_recover_the_generating_model(mdp):
    rng = np.random.default_rng(99)
    p = InstanceGenerator.random_model(rng, 2, 2, concentration=2.0)
    log = simulate_episode(mdp, p, 20000, rng)
    p_hat = estimate_tabular(count_transitions(log, mdp))
    assert np.max(np.abs(p_hat.probs - p.probs)) < 0.05
