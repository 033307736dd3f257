""" Dirichlet posterior over transition kernels, model ensembles and moments.

With Dirichlet priors the posterior is again Dirichlet, so ensembles are drawn
directly from it. Every (s, a) row owns an independent random stream spawned
from the root seed, which keeps sampling reproducible however rows are
scheduled.
"""
import logging

import attrs
import h5py
import numpy as np
import pandas as pd

from .exceptions import DatasetIndexError, ModelError
from .mdp import TransitionModel, check_simplex_rows, return_tensor, _readonly

logger = logging.getLogger(__name__)

DATASET_COLUMNS = ["s", "a", "r", "s_next"]
ENSEMBLE_LAYOUT = "probs[m][s][a][s_next], row-major float64"


@attrs.frozen(eq=False)
class BatchDataset:
    """ Batch data D as four aligned columns. """
    states: np.ndarray = attrs.field(converter=lambda x: _readonly(x, dtype=np.int64))
    actions: np.ndarray = attrs.field(converter=lambda x: _readonly(x, dtype=np.int64))
    rewards: np.ndarray = attrs.field(converter=_readonly)
    next_states: np.ndarray = attrs.field(converter=lambda x: _readonly(x, dtype=np.int64))

    @rewards.validator
    def _check_rewards(self, attribute, value):
        if not np.all(np.isfinite(value)):
            raise ModelError("dataset rewards must be finite")

    def __attrs_post_init__(self):
        lengths = {len(self.states), len(self.actions), len(self.rewards), len(self.next_states)}
        if len(lengths) != 1:
            raise ModelError("dataset columns have different lengths")

    def __len__(self):
        return len(self.states)

    @property
    def tuples(self):
        return list(zip(self.states.tolist(), self.actions.tolist(),
                        self.rewards.tolist(), self.next_states.tolist()))

    def check_bounds(self, num_states, num_actions):
        for name, column, bound in (("s", self.states, num_states),
                                    ("a", self.actions, num_actions),
                                    ("s_next", self.next_states, num_states)):
            bad = np.flatnonzero((column < 0) | (column >= bound))
            if len(bad):
                raise DatasetIndexError(int(bad[0]), name, int(column[bad[0]]), bound)


def _positive_concentration(instance, attribute, value):
    if value.ndim != 3 or value.shape[0] != value.shape[2]:
        raise ModelError(f"concentration must have shape (S, A, S), got {value.shape}")
    if not np.all(value > 0) or not np.all(np.isfinite(value)):
        raise ModelError("Dirichlet concentrations must be finite and strictly positive")


@attrs.frozen(eq=False)
class DirichletPosterior:
    concentration: np.ndarray = attrs.field(converter=_readonly,
                                            validator=_positive_concentration)
    prior_pseudocount: float = attrs.field(default=1.0, converter=float)

    @property
    def num_states(self):
        return self.concentration.shape[0]

    @property
    def num_actions(self):
        return self.concentration.shape[1]

    @property
    def counts(self):
        """ Observed transition counts, the concentration minus the prior. """
        return np.maximum(self.concentration - self.prior_pseudocount, 0.0)


def _validate_ensemble(instance, attribute, value):
    if value.ndim != 4 or value.shape[0] < 1 or value.shape[1] != value.shape[3]:
        raise ModelError(f"ensemble must have shape (M, S, A, S) with M >= 1, got {value.shape}")
    check_simplex_rows(value, "ensemble member")


@attrs.frozen(eq=False)
class ModelEnsemble:
    """ M transition kernels drawn from the posterior, stacked as (M, S, A, S). """
    probs: np.ndarray = attrs.field(converter=_readonly, validator=_validate_ensemble)
    seed: int = attrs.field(default=None)

    @property
    def size(self):
        return self.probs.shape[0]

    @property
    def num_states(self):
        return self.probs.shape[1]

    @property
    def num_actions(self):
        return self.probs.shape[2]

    @property
    def models(self):
        return [TransitionModel(member) for member in self.probs]

    def model(self, index):
        return TransitionModel(self.probs[index])

    def mean_model(self):
        return TransitionModel(self.probs.mean(axis=0))

    def subset(self, count, rng):
        """ ``count`` members drawn uniformly without replacement. """
        if not 1 <= count <= self.size:
            raise ModelError(f"subset size must lie in [1, {self.size}], got {count}")
        chosen = np.sort(rng.choice(self.size, size=count, replace=False))
        return ModelEnsemble(self.probs[chosen], seed=self.seed)

    def returns(self, mdp, v):
        """ p~_{s,a}' w_{s,a} for every member, shape (M, S, A). """
        return np.einsum("msat,sat->msa", self.probs, return_tensor(mdp, v))


def _validate_moments(instance, attribute, value):
    mean, cov = instance.mean, instance.cov
    check_simplex_rows(mean, "posterior mean")
    num_states = mean.shape[-1]
    if cov.shape != mean.shape + (num_states,):
        raise ModelError(f"covariance shape {cov.shape} does not match mean shape {mean.shape}")
    if not np.allclose(cov, np.swapaxes(cov, -1, -2), atol=1e-8, rtol=0):
        raise ModelError("covariance matrices must be symmetric")
    if np.any(np.abs(cov.sum(axis=-1)) > 1e-8):
        raise ModelError("covariance rows must sum to zero on the simplex")
    if np.any(np.linalg.eigvalsh(cov) < -1e-8):
        raise ModelError("covariance matrices must be positive semidefinite")


@attrs.frozen(eq=False)
class PosteriorMoments:
    """ Per-(s, a) mean p_bar (S, A, S) and covariance Sigma (S, A, S, S). """
    mean: np.ndarray = attrs.field(converter=_readonly)
    cov: np.ndarray = attrs.field(converter=_readonly, validator=_validate_moments)

    @property
    def num_states(self):
        return self.mean.shape[0]

    @property
    def num_actions(self):
        return self.mean.shape[1]


def counts_from_dataset(dataset, num_states, num_actions, prior_pseudocount=1.0):
    """ Conjugate update of a symmetric Dirichlet prior with batch data.

    Parameters
    ----------
    dataset: BatchDataset
    num_states, num_actions: int
    prior_pseudocount: float
        Prior concentration added to every successor state.

    Returns
    -------
    DirichletPosterior
        alpha[s][a][s'] = prior + #{(s, a, s') in dataset}
    """
    if prior_pseudocount <= 0:
        raise ModelError(f"prior pseudo-count must be positive, got {prior_pseudocount}")
    dataset.check_bounds(num_states, num_actions)
    concentration = np.full((num_states, num_actions, num_states), float(prior_pseudocount))
    np.add.at(concentration, (dataset.states, dataset.actions, dataset.next_states), 1.0)
    return DirichletPosterior(concentration, prior_pseudocount)


def sample_models(posterior, num_models, seed):
    """ Draw ``num_models`` kernels, normalising independent Gamma draws per row. """
    if num_models < 1:
        raise ModelError(f"number of models must be at least 1, got {num_models}")
    num_states, num_actions = posterior.num_states, posterior.num_actions
    streams = np.random.SeedSequence(seed).spawn(num_states * num_actions)
    probs = np.empty((num_models, num_states, num_actions, num_states))
    for index, stream in enumerate(streams):
        s, a = divmod(index, num_actions)
        draws = np.random.default_rng(stream).standard_gamma(
            posterior.concentration[s, a], size=(num_models, num_states))
        probs[:, s, a, :] = draws / draws.sum(axis=1, keepdims=True)
    return ModelEnsemble(probs, seed=seed)


def moments(source):
    """ Mean and covariance of the transition rows.

    A :class:`DirichletPosterior` gives the closed form
    m = alpha / alpha_0, Sigma = (diag(m) - m m') / (alpha_0 + 1); a
    :class:`ModelEnsemble` gives the sample mean and sample covariance, which is
    the zero matrix for a single member.
    """
    if isinstance(source, DirichletPosterior):
        total = source.concentration.sum(axis=-1, keepdims=True)
        mean = source.concentration / total
        outer = np.einsum("sai,saj->saij", mean, mean)
        diagonal = np.einsum("sai,ij->saij", mean, np.eye(source.num_states))
        cov = (diagonal - outer) / (total[..., np.newaxis] + 1.0)
        return PosteriorMoments(mean, cov)
    if isinstance(source, ModelEnsemble):
        mean = source.probs.mean(axis=0)
        if source.size == 1:
            cov = np.zeros(mean.shape + (source.num_states,))
        else:
            centred = source.probs - mean
            cov = np.einsum("msai,msaj->saij", centred, centred) / (source.size - 1)
        return PosteriorMoments(mean, cov)
    raise TypeError(f"cannot compute moments of {type(source).__name__}")


def visit_counts(posterior):
    """ n_{s,a}: the number of tuples observed from each state-action pair. """
    return np.rint(posterior.counts.sum(axis=-1)).astype(np.int64)


def empirical_model(posterior):
    """ Frequency estimate of P; rows without data fall back to uniform. """
    counts = posterior.counts
    visits = counts.sum(axis=-1, keepdims=True)
    uniform = np.full_like(counts, 1.0 / posterior.num_states)
    probs = np.divide(counts, visits, out=uniform, where=visits > 0)
    return TransitionModel(probs)


def read_dataset(path):
    frame = pd.read_csv(path)
    if list(frame.columns) != DATASET_COLUMNS:
        raise ModelError(f"{path}: expected header {','.join(DATASET_COLUMNS)}, "
                         f"got {','.join(frame.columns)}")
    return BatchDataset(frame["s"].to_numpy(), frame["a"].to_numpy(),
                        frame["r"].to_numpy(dtype=float), frame["s_next"].to_numpy())


def write_dataset(dataset, path):
    frame = pd.DataFrame({"s": dataset.states, "a": dataset.actions,
                          "r": dataset.rewards, "s_next": dataset.next_states},
                         columns=DATASET_COLUMNS)
    frame.to_csv(path, index=False)
    logger.info("wrote %d tuples to %s", len(dataset), path)


def save_ensemble(ensemble, path):
    """ One HDF5 file per ensemble; header attributes carry S, A, M and the seed. """
    with h5py.File(path, "w") as stream:
        stream.create_dataset("probs", data=np.ascontiguousarray(ensemble.probs))
        stream.attrs["num_states"] = ensemble.num_states
        stream.attrs["num_actions"] = ensemble.num_actions
        stream.attrs["num_models"] = ensemble.size
        stream.attrs["seed"] = -1 if ensemble.seed is None else int(ensemble.seed)
        stream.attrs["layout"] = ENSEMBLE_LAYOUT
    logger.info("wrote %d models to %s", ensemble.size, path)


def load_ensemble(path):
    with h5py.File(path, "r") as stream:
        probs = stream["probs"][...]
        header = (int(stream.attrs["num_models"]), int(stream.attrs["num_states"]),
                  int(stream.attrs["num_actions"]))
        seed = int(stream.attrs["seed"])
    if header != probs.shape[:3]:
        raise ModelError(f"{path}: header (M, S, A) = {header} does not match data {probs.shape}")
    return ModelEnsemble(probs, seed=None if seed < 0 else seed)
