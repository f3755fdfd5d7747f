"""
Robust DP tests
Row-level inner problems, rectangular DR backups, classical robust value iteration,
the trajectory-level dual and the transport oracle
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ambiguity import AmbiguitySpec, GroundNorm, build_empirical
from errors import ParameterError, StructuralError
from mdp_core import (InstanceGenerator, Policy, TabularMdp, TransitionModel, ValueTable, all_policies,
                      batch_policy_values, bellman_optimality_apply, evaluate_policy, value_iteration)
from oracles import SimplexGrid, grid_inner_min, simplex_product_grid
from robust_dp import (UncertaintySet, constrained_row_min, dr_bellman_apply, dr_bellman_optimality_apply,
                       dr_policy_evaluation, dr_policy_iteration, dr_value_dual, dr_value_oracle,
                       inner_min_linear, project_simplex, robust_bellman_apply, robust_policy_evaluation,
                       robust_value_iteration, worst_case_mixture)


@pytest.fixture
def mdp():
    return TabularMdp.from_rewards([[1.0, 0.0], [0.0, 0.5]], 0.9, r_max=1.0)


@pytest.fixture
def emp():
    atoms = [
        TransitionModel(np.array([[[0.90, 0.10], [0.20, 0.80]], [[0.30, 0.70], [0.60, 0.40]]])),
        TransitionModel(np.array([[[0.80, 0.20], [0.25, 0.75]], [[0.35, 0.65], [0.50, 0.50]]])),
        TransitionModel(np.array([[[0.85, 0.15], [0.10, 0.90]], [[0.20, 0.80], [0.55, 0.45]]])),
    ]
    return build_empirical(atoms)


@pytest.fixture
def pi():
    return Policy([0, 1])


def test_projection_lands_on_the_simplex():
    rng = np.random.default_rng(5)
    for _ in range(50):
        q = project_simplex(rng.normal(size=4) * 3)
        assert q.min() >= 0.0
        assert q.sum() == pytest.approx(1.0)


def test_l1_inner_minimum_matches_grid_search():
    rng = np.random.default_rng(8)
    grid = SimplexGrid(3, 0.05)
    points = grid.points()
    for _ in range(20):
        v = rng.uniform(-1.0, 1.0, size=3)
        p_hat = points[rng.integers(points.shape[0])]
        lam = float(rng.uniform(0.0, 1.5))
        _, exact = inner_min_linear(v, p_hat, lam, GroundNorm.L1_PRODUCT)
        assert exact == pytest.approx(grid_inner_min(v, p_hat, lam, GroundNorm.L1_PRODUCT, grid), abs=1e-12)


@pytest.mark.slow
def test_l1_inner_minimum_matches_a_fine_grid():
    rng = np.random.default_rng(18)
    grid = SimplexGrid(3, 1e-3)
    for _ in range(100):
        v = rng.uniform(-1.0, 1.0, size=3)
        p_hat = rng.multinomial(grid.divisions, rng.dirichlet(np.ones(3))) / grid.divisions
        lam = float(rng.uniform(0.0, 1.5))
        _, exact = inner_min_linear(v, p_hat, lam, GroundNorm.L1_PRODUCT)
        assert exact == pytest.approx(grid_inner_min(v, p_hat, lam, GroundNorm.L1_PRODUCT, grid), abs=1e-9)


def test_l2_inner_minimum_is_bracketed_by_grid_search():
    rng = np.random.default_rng(9)
    grid = SimplexGrid(3, 0.01)
    for _ in range(10):
        v = rng.uniform(0.0, 1.0, size=3)
        p_hat = rng.dirichlet(np.ones(3))
        lam = float(rng.uniform(0.0, 1.0))
        q, exact = inner_min_linear(v, p_hat, lam, GroundNorm.L2_PRODUCT)
        searched = grid_inner_min(v, p_hat, lam, GroundNorm.L2_PRODUCT, grid)
        assert exact <= searched + 1e-9
        assert searched - exact < 0.05
        assert q.sum() == pytest.approx(1.0)


def test_inner_minimum_limits():
    v = np.array([0.0, 1.0, 3.0])
    p_hat = np.array([0.2, 0.3, 0.5])
    assert inner_min_linear(v, p_hat, 0.0)[1] == pytest.approx(0.0)
    assert inner_min_linear(v, p_hat, 10.0)[1] == pytest.approx(p_hat @ v)
    with pytest.raises(ParameterError):
        inner_min_linear(v, p_hat, -0.1)


def test_constrained_l1_row_moves_mass_from_the_top():
    v = np.array([0.0, 1.0, 2.0])
    q, value = constrained_row_min(v, np.array([0.2, 0.3, 0.5]), 0.4, GroundNorm.L1_PRODUCT)
    assert_allclose(q, [0.4, 0.3, 0.3])
    assert value == pytest.approx(0.9)
    q, value = constrained_row_min(v, np.array([0.2, 0.3, 0.5]), 2.0, GroundNorm.L1_PRODUCT)
    assert_allclose(q, [1.0, 0.0, 0.0])


def test_zero_radius_gives_the_mean_kernel_value(mdp, emp, pi):
    spec = AmbiguitySpec.from_radii([0.0, 0.0])
    v = dr_policy_evaluation(mdp, pi, emp, spec, tol=1e-10)
    mean_model = TransitionModel(emp.stacked().mean(axis=0))
    assert_allclose(v.values, evaluate_policy(mdp, mean_model, pi).values, atol=1e-8)


def test_unbounded_radius_gives_the_full_simplex_value(mdp, emp, pi):
    spec = AmbiguitySpec.from_radii([np.inf, np.inf])
    v = dr_policy_evaluation(mdp, pi, emp, spec, tol=1e-10)
    whole = UncertaintySet.norm_ball(emp.atoms[0], 2.0, GroundNorm.L1_PRODUCT)
    assert_allclose(v.values, robust_policy_evaluation(mdp, whole, pi, tol=1e-10).values, atol=1e-7)


@pytest.mark.parametrize("norm", [GroundNorm.L1_PRODUCT, GroundNorm.SUP_ONE, GroundNorm.L2_PRODUCT])
def test_dr_value_is_nonincreasing_in_the_radius(mdp, emp, pi, norm):
    values = [dr_policy_evaluation(mdp, pi, emp, AmbiguitySpec.from_radii([a, a], norm), tol=1e-9).values
              for a in [0.0, 0.02, 0.1, 0.4]]
    for smaller, larger in zip(values, values[1:]):
        assert np.all(larger <= smaller + 1e-7)


def test_rowwise_l1_norms_share_the_rectangular_value(mdp, emp, pi):
    l1 = dr_policy_evaluation(mdp, pi, emp, AmbiguitySpec.from_radii([0.1, 0.05], GroundNorm.L1_PRODUCT))
    sup = dr_policy_evaluation(mdp, pi, emp, AmbiguitySpec.from_radii([0.1, 0.05], GroundNorm.SUP_ONE))
    assert_allclose(l1.values, sup.values)


def test_dr_backup_is_a_contraction(mdp, emp, pi):
    rng = np.random.default_rng(4)
    spec = AmbiguitySpec.from_radii([0.1, 0.2])
    for _ in range(20):
        v = ValueTable(rng.normal(size=2) * 3)
        w = ValueTable(rng.normal(size=2) * 3)
        gap = dr_bellman_apply(mdp, pi, emp, spec, v).sup_distance(dr_bellman_apply(mdp, pi, emp, spec, w))
        assert gap <= mdp.discount * v.sup_distance(w) + 1e-10


def test_dr_value_is_a_fixed_point(mdp, emp, pi):
    spec = AmbiguitySpec.from_radii([0.1, 0.2])
    v = dr_policy_evaluation(mdp, pi, emp, spec, tol=1e-10)
    assert dr_bellman_apply(mdp, pi, emp, spec, v).sup_distance(v) <= 1e-9


@pytest.mark.parametrize("norm", [GroundNorm.L1_PRODUCT, GroundNorm.SUP_ONE, GroundNorm.L2_PRODUCT])
def test_constant_shift_moves_the_backup_by_gamma_c(mdp, emp, pi, norm):
    rng = np.random.default_rng(6)
    spec = AmbiguitySpec.from_radii([0.1, 0.3], norm)
    for _ in range(10):
        v = rng.normal(size=2) * 2
        c = float(rng.uniform(-5.0, 5.0))
        base = dr_bellman_apply(mdp, pi, emp, spec, ValueTable(v)).values
        shifted = dr_bellman_apply(mdp, pi, emp, spec, ValueTable(v + c)).values
        assert_allclose(shifted - base, mdp.discount * c, rtol=0, atol=1e-12)
    flat = dr_bellman_apply(mdp, pi, emp, spec, ValueTable(np.full(2, 1.5))).values
    assert_allclose(flat, mdp.reward[np.arange(2), pi.actions] + mdp.discount * 1.5, rtol=0, atol=1e-12)


@pytest.mark.parametrize("norm", [GroundNorm.L1_PRODUCT, GroundNorm.L2_PRODUCT])
def test_dr_backup_matches_grid_minimization(norm):
    rng = np.random.default_rng(12)
    rows = SimplexGrid(2, 1e-3).points()
    for _ in range(20):
        mdp = InstanceGenerator.random_mdp(rng, 2, 2, discount=0.9)
        pi = InstanceGenerator.random_policy(rng, 2, 2)
        first = rng.integers(0, 1001, size=(int(rng.integers(1, 4)), 2, 2)) / 1000.0
        emp = build_empirical([TransitionModel(np.stack([f, 1.0 - f], axis=-1)) for f in first])
        radii = rng.uniform(0.0, 0.5, size=2)
        v = ValueTable(rng.normal(size=2) * 3)
        backed = dr_bellman_apply(mdp, pi, emp, AmbiguitySpec.from_radii(radii, norm), v).values
        for s in range(2):
            a = pi.actions[s]
            costs = np.stack([norm.row_norm(rows - row) for row in emp.stacked()[:, s, a]])
            expected = mdp.reward[s, a] + mdp.discount * worst_case_mixture(rows @ v.values, costs, radii[s])
            assert backed[s] == pytest.approx(expected, abs=5e-3)


def test_dr_policy_iteration_beats_every_policy(mdp, emp):
    spec = AmbiguitySpec.from_radii([0.1, 0.2])
    v_star, pi_star = dr_policy_iteration(mdp, emp, spec, tol=1e-9)
    for pi in all_policies(2, 2):
        v = dr_policy_evaluation(mdp, pi, emp, spec, tol=1e-9)
        assert np.all(v_star.values >= v.values - 1e-6)
    greedy_value, greedy = dr_bellman_optimality_apply(mdp, emp, spec, v_star)
    assert greedy == pi_star
    assert greedy_value.sup_distance(v_star) <= 1e-6


def test_dr_backup_rejects_mismatched_spec(mdp, emp, pi):
    with pytest.raises(StructuralError):
        dr_bellman_apply(mdp, pi, emp, AmbiguitySpec.from_radii([0.1, 0.1, 0.1]), ValueTable(np.zeros(2)))


def test_robust_values_are_ordered(mdp, emp):
    center = emp.atoms[0]
    nominal, _ = value_iteration(mdp, center, tol=1e-10)
    robust, _ = robust_value_iteration(mdp, UncertaintySet.norm_ball(center, 0.2), tol=1e-10)
    floor, _ = robust_value_iteration(mdp, UncertaintySet.norm_ball(center, 2.0), tol=1e-10)
    assert np.all(nominal.values >= robust.values - 1e-8)
    assert np.all(robust.values >= floor.values - 1e-8)


def test_robust_backup_takes_the_rowwise_minimum(mdp, emp):
    v = ValueTable([3.0, -1.0])
    backed = robust_bellman_apply(mdp, UncertaintySet.finite(emp.atoms), v)
    rows = np.min(emp.stacked() @ v.values, axis=0)
    assert_allclose(backed.values, np.max(mdp.reward + mdp.discount * rows, axis=1))
    zero_ball = robust_bellman_apply(mdp, UncertaintySet.norm_ball(emp.atoms[0], 0.0), v)
    assert_allclose(zero_ball.values, bellman_optimality_apply(mdp, emp.atoms[0], v).values)


def test_single_atom_finite_set_is_nominal(mdp, emp):
    nominal, _ = value_iteration(mdp, emp.atoms[1], tol=1e-10)
    robust, _ = robust_value_iteration(mdp, UncertaintySet.finite([emp.atoms[1]]), tol=1e-10)
    assert_allclose(robust.values, nominal.values, atol=1e-8)


def test_uncertainty_set_validation(emp):
    with pytest.raises(StructuralError):
        UncertaintySet.finite([])
    with pytest.raises(ParameterError):
        UncertaintySet.norm_ball(emp.atoms[0], -0.1)


def test_worst_case_mixture_hand_example():
    values = np.array([1.0, 0.0])
    costs = np.array([[0.0, 1.0]])
    assert worst_case_mixture(values, costs, 0.3) == pytest.approx(0.7)
    assert worst_case_mixture(values, costs, 0.3, method="lp") == pytest.approx(0.7, abs=1e-7)
    assert worst_case_mixture(values, costs, np.inf) == pytest.approx(0.0)
    with pytest.raises(ParameterError):
        worst_case_mixture(values, costs, 0.3, method="simplex")


def test_dual_at_zero_radius_is_the_atom_mean(mdp, emp, pi):
    dual = dr_value_dual(mdp, pi, emp, AmbiguitySpec.scalar(0.0, 2), 0)
    mean = batch_policy_values(mdp, emp.stacked(), pi)[:, 0].mean()
    assert dual.value == pytest.approx(mean)


def test_dual_rejects_bad_multiplier_grids(mdp, emp, pi):
    spec = AmbiguitySpec.scalar(0.1, 2)
    with pytest.raises(ParameterError):
        dr_value_dual(mdp, pi, emp, spec, 0, lambda_grid=[-1.0])
    with pytest.raises(ParameterError):
        dr_value_dual(mdp, pi, emp, spec, 0, refine=False)
    with pytest.raises(StructuralError):
        dr_value_dual(mdp, pi, emp, spec, 5)


@pytest.mark.parametrize("alpha", [0.01, 0.05, 0.2])
def test_dual_and_oracle_bracket_the_mean(mdp, emp, pi, alpha):
    spec = AmbiguitySpec.scalar(alpha, 2)
    grid = simplex_product_grid(mdp, pi, 0.05, emp.atoms)
    mean = batch_policy_values(mdp, emp.stacked(), pi)[:, 1].mean()
    l_value = mdp.discount * mdp.r_max / (1.0 - mdp.discount) ** 2
    upper = dr_value_oracle(mdp, pi, emp, spec, 1, grid)
    lower = dr_value_dual(mdp, pi, emp, spec, 1, lambda_grid=[0.5, 1.0], warm_starts=grid)
    assert mean >= upper - 1e-9
    assert upper >= lower.value - 1e-9
    assert lower.value >= mean - l_value * alpha - 1e-9
    assert 0.0 <= lower.lambda_star <= max(l_value, 1.0)


def test_oracle_methods_agree(mdp, emp, pi):
    spec = AmbiguitySpec.scalar(0.05, 2)
    grid = simplex_product_grid(mdp, pi, 0.1, emp.atoms)
    hull = dr_value_oracle(mdp, pi, emp, spec, 0, grid)
    lp = dr_value_oracle(mdp, pi, emp, spec, 0, grid, method="lp")
    assert hull == pytest.approx(lp, abs=1e-6)


def test_oracle_needs_the_atoms_on_its_grid(mdp, emp, pi):
    grid = [TransitionModel.uniform(2, 2)]
    with pytest.raises(ParameterError):
        dr_value_oracle(mdp, pi, emp, AmbiguitySpec.scalar(0.1, 2), 0, grid)


def test_random_instances_keep_the_chain():
    rng = np.random.default_rng(77)
    for _ in range(3):
        mdp = InstanceGenerator.random_mdp(rng, 2, 2, discount=0.8)
        base = InstanceGenerator.random_model(rng, 2, 2)
        atoms = [InstanceGenerator.perturbed_model(rng, base, 0.2) for _ in range(2)]
        emp = build_empirical(atoms)
        pi = InstanceGenerator.random_policy(rng, 2, 2)
        spec = AmbiguitySpec.scalar(0.1, 2)
        grid = simplex_product_grid(mdp, pi, 0.1, emp.atoms)
        upper = dr_value_oracle(mdp, pi, emp, spec, 0, grid)
        lower = dr_value_dual(mdp, pi, emp, spec, 0, warm_starts=grid).value
        mean = batch_policy_values(mdp, emp.stacked(), pi)[:, 0].mean()
        assert mean + 1e-9 >= upper >= lower - 1e-9


def _atoms_on_policy_rows(rng, base, pi, n):
    """Atoms that differ from base only on the rows pi visits"""
    atoms = []
    for _ in range(n):
        probs = base.probs.copy()
        probs[np.arange(base.num_states), pi.actions] = rng.dirichlet(np.ones(base.num_states), size=base.num_states)
        atoms.append(TransitionModel(probs))
    return build_empirical(atoms)


@pytest.mark.slow
@pytest.mark.parametrize("alpha", [0.01, 0.05, 0.1, 0.5])
def test_dual_meets_the_oracle_on_a_fine_grid(alpha):
    rng = np.random.default_rng(31)
    for _ in range(5):
        mdp = InstanceGenerator.random_mdp(rng, 2, 2, discount=0.9)
        pi = InstanceGenerator.random_policy(rng, 2, 2)
        emp = _atoms_on_policy_rows(rng, InstanceGenerator.random_model(rng, 2, 2), pi, 2)
        grid = simplex_product_grid(mdp, pi, 0.01, emp.atoms)
        spec = AmbiguitySpec.scalar(alpha, 2)
        for s in range(2):
            upper = dr_value_oracle(mdp, pi, emp, spec, s, grid)
            lower = dr_value_dual(mdp, pi, emp, spec, s, warm_starts=grid).value
            assert -1e-9 <= upper - lower < 5e-3


@pytest.mark.slow
def test_dual_meets_the_oracle_at_step_one_thousandth():
    rng = np.random.default_rng(32)
    mdp = InstanceGenerator.random_mdp(rng, 2, 2, discount=0.9)
    pi = Policy([1, 0])
    emp = _atoms_on_policy_rows(rng, InstanceGenerator.random_model(rng, 2, 2), pi, 2)
    grid = simplex_product_grid(mdp, pi, 1e-3, emp.atoms)
    spec = AmbiguitySpec.scalar(0.1, 2)
    for s in range(2):
        upper = dr_value_oracle(mdp, pi, emp, spec, s, grid)
        lower = dr_value_dual(mdp, pi, emp, spec, s, warm_starts=grid).value
        assert -1e-9 <= upper - lower < 5e-3
