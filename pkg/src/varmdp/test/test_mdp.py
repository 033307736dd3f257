import logging

import numpy as np
import pytest

from ..domains import random_mdp
from ..exceptions import ModelError
from ..mdp import (TabularMdp, TransitionModel, bellman_eval_update, bellman_optimality_update,
                   expected_return, iterate_to_fixed_point, load_mdp, mdp_from_dict, mdp_to_dict,
                   one_step_returns, policy_value, rollout_return, save_mdp, value_iteration)


def test_invalid_mdps_fail():
    """ Check malformed decision problems are rejected """
    rewards = np.zeros((2, 1, 2))
    with pytest.raises(ModelError):
        TabularMdp(rewards, 1.0, [0.5, 0.5])
    with pytest.raises(ModelError):
        TabularMdp(rewards, -0.1, [0.5, 0.5])
    with pytest.raises(ModelError):
        TabularMdp(np.zeros((2, 1, 3)), 0.9, [0.5, 0.5])
    with pytest.raises(ModelError):
        TabularMdp(rewards, 0.9, [0.6, 0.6])
    with pytest.raises(ModelError):
        TabularMdp(rewards, 0.9, [0.5, 0.5, 0.0])
    with pytest.raises(ModelError):
        TabularMdp(np.full((2, 1, 2), np.nan), 0.9, [0.5, 0.5])


def test_invalid_models_fail():
    with pytest.raises(ModelError, match="sums to"):
        TransitionModel([[[0.5, 0.4]], [[0.0, 1.0]]])
    with pytest.raises(ModelError, match="negative"):
        TransitionModel([[[1.5, -0.5]], [[0.0, 1.0]]])
    with pytest.raises(ModelError):
        TransitionModel(np.ones((2, 2)))


def test_arrays_are_read_only():
    mdp, model = random_mdp(3, 2, seed=0)
    with pytest.raises(ValueError):
        mdp.rewards[0, 0, 0] = 1.0
    with pytest.raises(ValueError):
        model.probs[0, 0, 0] = 1.0


def test_self_loop_value():
    """ A single state paying 1 forever is worth 1 / (1 - gamma) """
    mdp = TabularMdp(np.ones((1, 1, 1)), 0.9, [1.0])
    model = TransitionModel(np.ones((1, 1, 1)))
    assert policy_value(mdp, model, np.array([0]))[0] == pytest.approx(10.0)
    assert expected_return(mdp, model, np.array([0])) == pytest.approx(10.0)


def test_policy_value_is_a_fixed_point():
    for seed in range(10):
        mdp, model = random_mdp(6, 3, seed=seed)
        policy = np.random.default_rng(seed).integers(3, size=6)
        value = policy_value(mdp, model, policy)
        residual = bellman_eval_update(mdp, model, policy, value) - value
        assert np.max(np.abs(residual)) <= 1e-10


@pytest.mark.parametrize("discount", [0.0, 0.5, 0.9, 0.99])
def test_updates_are_discount_contractions(discount):
    for seed in range(20):
        mdp, model = random_mdp(6, 3, seed=seed, discount=discount)
        rng = np.random.default_rng(seed)
        policy = rng.integers(3, size=6)
        u, v = 5 * rng.normal(size=(2, 6))
        limit = discount * np.max(np.abs(u - v)) + 1e-12
        gap = bellman_eval_update(mdp, model, policy, u) - bellman_eval_update(mdp, model, policy, v)
        assert np.max(np.abs(gap)) <= limit
        gap = (bellman_optimality_update(mdp, model, u)[0]
               - bellman_optimality_update(mdp, model, v)[0])
        assert np.max(np.abs(gap)) <= limit


def test_policy_value_matches_rollouts():
    """ Monte Carlo returns agree with the exact value within a few standard errors """
    mdp, model = random_mdp(5, 2, seed=11)
    policy = np.array([0, 1, 1, 0, 1])
    mean, error = rollout_return(mdp, model, policy, episodes=4000, seed=1)
    assert mean == pytest.approx(expected_return(mdp, model, policy), abs=4 * error)


def test_invalid_policies_fail():
    mdp, model = random_mdp(3, 2, seed=0)
    with pytest.raises(ModelError):
        policy_value(mdp, model, np.array([0, 1]))
    with pytest.raises(ModelError):
        policy_value(mdp, model, np.array([0, 2, 1]))
    with pytest.raises(ModelError):
        policy_value(mdp, model, np.array([0.0, 1.0, 1.0]))
    with pytest.raises(ValueError):
        policy_value(mdp, model, np.array([0, 1, 1]), tol=0.0)


def test_one_step_returns():
    mdp, _ = random_mdp(3, 2, seed=0)
    v = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(one_step_returns(mdp, v, 2, 1), mdp.rewards[2, 1] + 0.9 * v)


def test_value_iteration_is_near_optimal():
    """ The VI policy is epsilon-optimal and its value is within epsilon of the fixed point """
    mdp, model = random_mdp(6, 3, seed=4)
    epsilon = 1e-4
    solution = value_iteration(mdp, model, epsilon)
    assert solution.converged
    assert solution.method == "value-iteration"
    optimal = value_iteration(mdp, model, 1e-10).value
    assert np.max(np.abs(solution.value - optimal)) <= epsilon + 1e-10
    achieved = policy_value(mdp, model, solution.policy)
    assert np.all(achieved >= optimal - 2 * epsilon / (1 - mdp.discount))


def test_ties_go_to_the_lowest_action():
    mdp = TabularMdp(np.zeros((3, 4, 3)), 0.9, np.full(3, 1 / 3))
    model = TransitionModel(np.full((3, 4, 3), 1 / 3))
    value, policy = bellman_optimality_update(mdp, model, np.zeros(3))
    np.testing.assert_array_equal(policy, [0, 0, 0])
    solution = value_iteration(mdp, model, 0.01)
    assert solution.iterations == 1
    np.testing.assert_array_equal(solution.value, np.zeros(3))


def test_zero_discount_is_a_single_update():
    mdp, model = random_mdp(4, 2, seed=2, discount=0.0)
    solution = value_iteration(mdp, model, 1e-6)
    assert solution.iterations == 1
    expected, _ = bellman_optimality_update(mdp, model, np.zeros(4))
    np.testing.assert_allclose(solution.value, expected)


def test_iteration_cap_warns(caplog):
    mdp, model = random_mdp(4, 2, seed=2, discount=0.99)
    with caplog.at_level(logging.WARNING):
        solution = value_iteration(mdp, model, 1e-8, max_iterations=3)
    assert not solution.converged
    assert solution.iterations == 3
    assert "cap" in caplog.text


def test_non_positive_epsilon_fails():
    mdp, model = random_mdp(2, 2, seed=0)
    with pytest.raises(ValueError):
        iterate_to_fixed_point(mdp, lambda v: (v, np.zeros(2, dtype=int)), 0.0)


def test_mdp_file_reload_is_exact(tmp_path):
    mdp, _ = random_mdp(5, 3, seed=9)
    path = tmp_path / "mdp.yaml"
    save_mdp(mdp, path)
    loaded = load_mdp(path)
    np.testing.assert_array_equal(loaded.rewards, mdp.rewards)
    np.testing.assert_array_equal(loaded.initial_dist, mdp.initial_dist)
    assert loaded.discount == mdp.discount


def test_mdp_documents_are_checked():
    mdp, _ = random_mdp(2, 2, seed=0)
    document = mdp_to_dict(mdp)
    with pytest.raises(ModelError, match="unknown"):
        mdp_from_dict(dict(document, terminal=[1]))
    with pytest.raises(ModelError, match="missing"):
        mdp_from_dict({key: value for key, value in document.items() if key != "discount"})
    with pytest.raises(ModelError, match="declared"):
        mdp_from_dict(dict(document, num_actions=3))
