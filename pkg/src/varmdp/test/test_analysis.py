import math

import numpy as np
import pytest
from scipy.stats import chi2, norm

from . import load_fixtures
from ..analysis import (asymptotic_gap_bound, bcr_ellipsoid_membership, chi_squared_quantile,
                        coverage_check, iteration_bound, performance_gap_bound, radius_ratio,
                        radius_table, return_density, sample_complexity, std_normal_quantile,
                        var_ellipsoid_membership)
from ..domains import random_mdp, single_decision_example
from ..exceptions import NumericalError
from ..mdp import TabularMdp, policy_value, value_iteration
from ..posterior import DirichletPosterior, ModelEnsemble, PosteriorMoments, sample_models


def test_normal_quantiles():
    for fixture in load_fixtures('quantiles')['normal']:
        assert std_normal_quantile(fixture['p']) == pytest.approx(fixture['answer'], abs=1e-6)


def test_normal_quantile_symmetry_and_range():
    levels = np.array([1e-12, 1e-6, 0.01, 0.3, 0.5])
    np.testing.assert_allclose(std_normal_quantile(levels), -std_normal_quantile(1 - levels),
                               atol=1e-9)
    for p in (0.0, 1.0, -0.5, 1.5):
        with pytest.raises(ValueError):
            std_normal_quantile(p)


def test_chi_squared_quantiles():
    for fixture in load_fixtures('quantiles')['chi_squared']:
        result = chi_squared_quantile(fixture['dof'], fixture['p'])
        assert result == pytest.approx(fixture['answer'], abs=1e-3)
        assert result == pytest.approx(chi2.ppf(fixture['p'], fixture['dof']), rel=1e-9)


def test_chi_squared_closed_forms():
    """ Two degrees of freedom invert 1 - exp(-x / 2); one is a squared normal """
    for p in np.linspace(0.01, 0.99, 25):
        assert chi_squared_quantile(2, p) == pytest.approx(-2 * math.log(1 - p), abs=1e-9)
        assert chi_squared_quantile(1, p) == pytest.approx(std_normal_quantile((1 + p) / 2) ** 2,
                                                           abs=1e-9)
    with pytest.raises(ValueError):
        chi_squared_quantile(0, 0.5)
    with pytest.raises(ValueError):
        chi_squared_quantile(2.5, 0.5)


def test_radius_ratio_example():
    """ S = 2, alpha = 0.2 reduces to Phi^-1(0.9) / Phi^-1(0.8) """
    assert radius_ratio(2, 0.2) == pytest.approx(norm.ppf(0.9) / norm.ppf(0.8), abs=1e-9)
    assert radius_ratio(2, 0.2) == pytest.approx(1.52272, abs=1e-4)


def test_radius_ratio_growth():
    ratios = [radius_ratio(s, 0.05) for s in range(3, 101)]
    assert all(ratio > 1 for ratio in ratios)
    assert all(later > earlier for earlier, later in zip(ratios, ratios[1:]))
    assert radius_ratio(100, 0.05) / radius_ratio(25, 0.05) == pytest.approx(1.84, abs=0.02)
    expected = math.sqrt(chi2.ppf(0.95, 99)) / norm.ppf(0.95)
    assert radius_ratio(100, 0.05) == pytest.approx(expected, rel=1e-9)


def test_radius_ratio_grows_like_root_states():
    """ ratio / sqrt(S) settles towards 1 / Phi^-1(1 - alpha) """
    scaled = [radius_ratio(s, 0.05) / math.sqrt(s) for s in (100, 400, 1600, 6400)]
    steps = np.abs(np.diff(scaled))
    assert np.all(steps[1:] < steps[:-1])
    assert scaled[-1] == pytest.approx(1 / norm.ppf(0.95), abs=0.02)


def test_radius_ratio_errors():
    with pytest.raises(ValueError):
        radius_ratio(1, 0.05)
    with pytest.raises(ValueError):
        radius_ratio(5, 0.5)


def test_radius_table():
    table = radius_table(range(3, 101), 0.05)
    assert list(table.columns) == ["S", "alpha", "ratio"]
    assert len(table) == 98
    assert table["S"].iloc[0] == 3
    assert table["ratio"].iloc[-1] == pytest.approx(radius_ratio(100, 0.05))


def test_iteration_bounds():
    for fixture in load_fixtures('iteration_bounds'):
        answer = fixture.pop('answer')
        assert iteration_bound(**fixture) == answer
    with pytest.raises(ValueError):
        iteration_bound(1.0, 0.1, 1.0)
    with pytest.raises(ValueError):
        iteration_bound(0.9, 0.0, 1.0)


def test_value_iteration_respects_the_bound():
    for seed, (gamma, epsilon) in enumerate([(0.9, 1e-3), (0.99, 1e-2), (0.5, 1e-6), (0.7, 0.5)]):
        mdp, model = random_mdp(6, 3, seed=seed, discount=gamma, reward_scale=2.0)
        solution = value_iteration(mdp, model, epsilon)
        assert solution.iterations <= iteration_bound(gamma, epsilon, mdp.reward_bound)


def test_sample_complexity():
    assert sample_complexity(1.0, 1.0, 2 / math.e) == pytest.approx(0.5)
    assert sample_complexity(0.5, 0.1, 0.05) == pytest.approx(737.78, abs=0.01)
    with pytest.raises(ValueError):
        sample_complexity(0.0, 0.1, 0.05)
    with pytest.raises(ValueError):
        sample_complexity(1.0, 0.1, 1.0)


def test_return_density():
    samples = np.random.default_rng(0).normal(size=20000)
    assert return_density(samples, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=0.03)
    with pytest.raises(NumericalError):
        return_density(np.full(10, 3.0), 3.0)


def test_gap_bound_vanishes_without_uncertainty():
    mdp, model = random_mdp(4, 2, seed=1)
    ensemble = ModelEnsemble(np.repeat(model.probs[np.newaxis], 20, axis=0))
    report = performance_gap_bound(mdp, ensemble, np.ones(4), 0.1)
    assert report.gap_bound == pytest.approx(0.0, abs=1e-12)
    assert report.alpha == pytest.approx(0.025)
    assert report.upper_level == pytest.approx(1 - 0.9 / 4)


def test_gap_bound_matches_sorted_returns(small_problem, small_ensemble):
    mdp, _ = small_problem
    value = np.array([0.2, -0.1, 0.4, 0.0])
    report = performance_gap_bound(mdp, small_ensemble, value, 0.2)
    returns = np.sort(small_ensemble.returns(mdp, value), axis=0)
    lower = returns[math.floor(50 * report.alpha)]
    upper = returns[math.floor(50 * report.upper_level)]
    np.testing.assert_allclose(report.per_sa_gaps, upper - lower)
    assert report.gap_bound == pytest.approx((upper - lower).max() / (1 - mdp.discount))
    assert np.all(report.per_sa_gaps >= 0)


def test_gap_bound_shrinks_with_concentration():
    bounds = []
    for scale in (1, 10, 100):
        mdp, ensemble = single_decision_example(20000, seed=scale,
                                                concentration=(10 * scale, 10 * scale, scale))
        bounds.append(performance_gap_bound(mdp, ensemble, np.zeros(4), 0.1).gap_bound)
    assert bounds[0] > bounds[1] > bounds[2] > 0


def test_asymptotic_gap_example():
    """ S = 5, delta = 0.05, gamma = 0.9 and sigma_max / sqrt(N) = 0.1 """
    rewards = np.zeros((5, 1, 5))
    rewards[:, 0, 0] = 1.0
    mdp = TabularMdp(rewards, 0.9, np.full(5, 0.2))
    cov = 0.0125 * (np.eye(5) - np.full((5, 5), 0.2))
    moments_ = PosteriorMoments(np.full((5, 1, 5), 0.2), np.tile(cov, (5, 1, 1, 1)))
    gap = asymptotic_gap_bound(mdp, moments_, np.zeros(5), 0.05, 100)
    assert gap.tight == pytest.approx(4.652696, abs=1e-5)
    assert gap.sigma_max == pytest.approx(1.0)
    assert gap.loose >= gap.tight

    still = PosteriorMoments(moments_.mean, np.zeros_like(moments_.cov))
    assert asymptotic_gap_bound(mdp, still, np.zeros(5), 0.05, 100).tight == 0.0
    with pytest.raises(ValueError):
        asymptotic_gap_bound(mdp, moments_, np.zeros(5), 0.05, 0)


def test_coverage_check(small_problem, small_ensemble):
    mdp, _ = small_problem
    policy = np.array([0, 1, 0, 1])
    assert coverage_check(mdp, policy, np.full(4, -100.0), small_ensemble) == 1.0
    assert coverage_check(mdp, policy, np.full(4, 100.0), small_ensemble) == 0.0
    center = policy_value(mdp, small_ensemble.mean_model(), policy)
    statewise = coverage_check(mdp, policy, center, small_ensemble)
    overall = coverage_check(mdp, policy, center, small_ensemble, statewise=False)
    assert 0.0 <= statewise <= overall <= 1.0
    assert 0.0 < overall < 1.0


def test_ellipsoid_membership_basics():
    p_star = np.array([0.5, 0.3, 0.2])
    cov_reduced = np.array([[0.25, -0.15], [-0.15, 0.21]])
    assert var_ellipsoid_membership(p_star, p_star, cov_reduced, 0.05, 100)
    assert bcr_ellipsoid_membership(p_star, p_star, cov_reduced, 0.05, 100)
    far = np.array([0.9, 0.05, 0.05])
    assert not var_ellipsoid_membership(far, p_star, cov_reduced, 0.05, 100)
    with pytest.raises(NumericalError):
        var_ellipsoid_membership(far, p_star, np.array([[1.0, 1.0], [1.0, 1.0]]), 0.05, 100)
    with pytest.raises(ValueError):
        var_ellipsoid_membership(far, p_star, np.eye(3), 0.05, 100)


def test_ellipsoid_membership_rates():
    """ For a nearly normal posterior the credible region holds about 1 - alpha of the
    mass and the VaR ellipsoid about P(chi2_2 <= z^2) """
    concentration = np.array([4000.0, 4000.0, 2000.0])
    posterior = DirichletPosterior(np.tile(concentration, (3, 1, 1)))
    draws = sample_models(posterior, 5000, seed=2).probs[:, 0, 0]
    mean = concentration / concentration.sum()
    full = (np.diag(mean) - np.outer(mean, mean)) / (concentration.sum() + 1)
    cov_reduced = 10000 * full[:2, :2]
    var_share = np.mean([var_ellipsoid_membership(p, mean, cov_reduced, 0.05, 10000)
                         for p in draws])
    bcr_share = np.mean([bcr_ellipsoid_membership(p, mean, cov_reduced, 0.05, 10000)
                         for p in draws])
    z = norm.ppf(0.95)
    assert var_share == pytest.approx(chi2.cdf(z ** 2, 2), abs=0.03)
    assert bcr_share == pytest.approx(0.95, abs=0.03)
    assert var_share < bcr_share
