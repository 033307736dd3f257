import numpy as np
import pytest

from ..exceptions import DatasetIndexError, ModelError
from ..posterior import (BatchDataset, DirichletPosterior, ModelEnsemble, PosteriorMoments,
                         counts_from_dataset, empirical_model, load_ensemble, moments,
                         read_dataset, sample_models, save_ensemble, visit_counts, write_dataset)


def test_counts_add_to_the_prior():
    dataset = BatchDataset([0, 0, 1, 0], [1, 1, 0, 0], [0.0, 0.5, 1.0, 0.0], [1, 1, 0, 0])
    posterior = counts_from_dataset(dataset, 2, 2, prior_pseudocount=0.5)
    expected = np.full((2, 2, 2), 0.5)
    expected[0, 1, 1] += 2
    expected[1, 0, 0] += 1
    expected[0, 0, 0] += 1
    np.testing.assert_array_equal(posterior.concentration, expected)
    np.testing.assert_array_equal(visit_counts(posterior), [[1, 2], [1, 0]])


def test_empty_dataset_gives_the_prior():
    dataset = BatchDataset([], [], [], [])
    posterior = counts_from_dataset(dataset, 3, 2)
    np.testing.assert_array_equal(posterior.concentration, np.ones((3, 2, 3)))
    np.testing.assert_allclose(empirical_model(posterior).probs, np.full((3, 2, 3), 1 / 3))


def test_out_of_range_tuples_fail():
    """ The error names the tuple and the offending field """
    dataset = BatchDataset([0, 1, 3], [0, 0, 0], [0.0, 0.0, 0.0], [1, 1, 1])
    with pytest.raises(DatasetIndexError) as caught:
        counts_from_dataset(dataset, 3, 1)
    assert caught.value.row == 2
    assert caught.value.field == "s"
    assert "tuple 2: s=3" in str(caught.value)
    with pytest.raises(DatasetIndexError, match="a=1"):
        counts_from_dataset(BatchDataset([0], [1], [0.0], [0]), 3, 1)


def test_invalid_inputs_fail():
    with pytest.raises(ModelError):
        BatchDataset([0, 1], [0], [0.0], [1])
    with pytest.raises(ModelError):
        BatchDataset([0], [0], [np.inf], [1])
    with pytest.raises(ModelError):
        DirichletPosterior(np.zeros((2, 1, 2)))
    with pytest.raises(ModelError):
        counts_from_dataset(BatchDataset([], [], [], []), 2, 1, prior_pseudocount=0.0)
    with pytest.raises(ModelError):
        sample_models(DirichletPosterior(np.ones((2, 1, 2))), 0, seed=1)


def test_sampled_models_are_kernels(small_posterior):
    ensemble = sample_models(small_posterior, 25, seed=3)
    assert ensemble.probs.shape == (25, 4, 2, 4)
    assert np.all(ensemble.probs >= 0)
    np.testing.assert_allclose(ensemble.probs.sum(axis=-1), 1.0, atol=1e-12)
    assert ensemble.seed == 3
    assert len(ensemble.models) == 25


def test_sampling_is_reproducible(small_posterior):
    first = sample_models(small_posterior, 10, seed=42)
    second = sample_models(small_posterior, 10, seed=42)
    other = sample_models(small_posterior, 10, seed=43)
    np.testing.assert_array_equal(first.probs, second.probs)
    assert not np.array_equal(first.probs, other.probs)


def test_large_concentration_is_nearly_a_point_mass():
    concentration = np.array([[[3e6, 1e6]], [[1e6, 1e6]]])
    ensemble = sample_models(DirichletPosterior(concentration), 20, seed=0)
    np.testing.assert_allclose(ensemble.probs[:, 0, 0], [[0.75, 0.25]] * 20, atol=2e-3)


def test_analytic_moments_match_samples(single_decision_posterior):
    """ Dirichlet(10, 10, 1): closed form against 20000 draws """
    analytic = moments(single_decision_posterior)
    np.testing.assert_allclose(analytic.mean[0, 0], [10 / 21, 10 / 21, 1 / 21])
    m = analytic.mean[0, 0]
    np.testing.assert_allclose(analytic.cov[0, 0], (np.diag(m) - np.outer(m, m)) / 22)

    sampled = moments(sample_models(single_decision_posterior, 20000, seed=8))
    np.testing.assert_allclose(sampled.mean, analytic.mean, atol=1e-2)
    np.testing.assert_allclose(sampled.cov, analytic.cov, atol=3e-3)


def test_single_member_has_zero_covariance(small_ensemble):
    single = ModelEnsemble(small_ensemble.probs[:1])
    result = moments(single)
    np.testing.assert_array_equal(result.cov, 0.0)
    np.testing.assert_allclose(result.mean, small_ensemble.probs[0])


def test_invalid_moments_fail():
    mean = np.array([[[0.5, 0.5]], [[0.5, 0.5]]])
    with pytest.raises(ModelError, match="sum to zero"):
        PosteriorMoments(mean, np.tile(np.eye(2), (2, 1, 1, 1)))
    with pytest.raises(ModelError, match="semidefinite"):
        PosteriorMoments(mean, np.tile([[-1.0, 1.0], [1.0, -1.0]], (2, 1, 1, 1)))
    with pytest.raises(TypeError):
        moments(np.ones(3))


def test_subsets_draw_distinct_members(small_ensemble):
    subset = small_ensemble.subset(20, np.random.default_rng(0))
    assert subset.size == 20
    matches = [np.flatnonzero([np.array_equal(member, other) for other in small_ensemble.probs])
               for member in subset.probs]
    indices = [int(match[0]) for match in matches]
    assert len(set(indices)) == 20
    assert indices == sorted(indices)
    with pytest.raises(ModelError):
        small_ensemble.subset(51, np.random.default_rng(0))


def test_mean_model_and_returns(small_problem, small_ensemble):
    mdp, _ = small_problem
    np.testing.assert_allclose(small_ensemble.mean_model().probs, small_ensemble.probs.mean(axis=0))
    v = np.array([1.0, 0.0, -1.0, 2.0])
    returns = small_ensemble.returns(mdp, v)
    assert returns.shape == (50, 4, 2)
    member = small_ensemble.probs[7, 2, 1]
    assert returns[7, 2, 1] == pytest.approx(member @ (mdp.rewards[2, 1] + mdp.discount * v))


def test_dataset_file(tmp_path):
    dataset = BatchDataset([0, 2, 1], [1, 0, 1], [0.25, -1.0, 3.5], [2, 2, 0])
    path = tmp_path / "dataset.csv"
    write_dataset(dataset, path)
    assert path.read_text().splitlines()[0] == "s,a,r,s_next"
    loaded = read_dataset(path)
    assert loaded.tuples == dataset.tuples

    wrong = tmp_path / "wrong.csv"
    wrong.write_text("state,action,reward,next\n0,0,0.0,1\n")
    with pytest.raises(ModelError, match="header"):
        read_dataset(wrong)


def test_ensemble_file(tmp_path, small_ensemble):
    path = tmp_path / "models.h5"
    save_ensemble(small_ensemble, path)
    loaded = load_ensemble(path)
    np.testing.assert_array_equal(loaded.probs, small_ensemble.probs)
    assert loaded.seed == 7

    unseeded = ModelEnsemble(small_ensemble.probs[:2])
    save_ensemble(unseeded, path)
    assert load_ensemble(path).seed is None
