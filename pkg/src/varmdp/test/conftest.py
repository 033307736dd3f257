import numpy as np
import pytest

from ..domains import random_mdp, sample_dataset
from ..posterior import DirichletPosterior, counts_from_dataset, sample_models


@pytest.fixture
def small_problem():
    """ A 4-state, 2-action MDP with its true kernel. """
    return random_mdp(4, 2, seed=3)


@pytest.fixture
def small_posterior(small_problem):
    mdp, model = small_problem
    dataset = sample_dataset(mdp, model, 400, seed=5, episode_length=20)
    return counts_from_dataset(dataset, mdp.num_states, mdp.num_actions)


@pytest.fixture
def small_ensemble(small_posterior):
    return sample_models(small_posterior, 50, seed=7)


@pytest.fixture
def single_decision_posterior():
    """ Dirichlet(10, 10, 1) over the outcomes of a one-row, three-state problem. """
    concentration = np.array([[[10.0, 10.0, 1.0]], [[1.0, 1.0, 1.0]], [[1.0, 1.0, 1.0]]])
    return DirichletPosterior(concentration)
