""" Value-at-Risk Bellman operators and VaR value iteration.

For each state-action pair the next-state distribution p~_{s,a} is uncertain.
The VaR Bellman operator takes, per state, the best action's alpha-quantile
of the one-step return p~_{s,a}' (r_{s,a} + gamma v). With an ensemble of
posterior models the quantile is an order statistic; with posterior moments
it is the Gaussian closed form or its sub-Gaussian lower bound.
"""
import logging
import math

import attrs
import numpy as np
from numba import njit

from .analysis import std_normal_quantile
from .exceptions import ConfigurationError, NumericalError
from .mdp import Solution, check_policy, iterate_to_fixed_point, return_tensor
from .posterior import ModelEnsemble, PosteriorMoments, moments

logger = logging.getLogger(__name__)

VarSolution = Solution

MODES = ("empirical", "gaussian", "subgaussian")
QUADRATIC_TOLERANCE = 1e-10


@njit(cache=True, nogil=True)
def _select(values, k):
    """ k-th smallest (0-based) entry; reorders ``values`` in place.

    Quick select with a median-of-three pivot and three-way partitioning, so
    runs of equal values do not degrade it.
    """
    low = 0
    high = len(values) - 1
    while high > low:
        middle = (low + high) // 2
        a, b, c = values[low], values[middle], values[high]
        pivot = max(min(a, b), min(max(a, b), c))
        less, scan, greater = low, low, high
        while scan <= greater:
            current = values[scan]
            if current < pivot:
                values[scan] = values[less]
                values[less] = current
                less += 1
                scan += 1
            elif current > pivot:
                values[scan] = values[greater]
                values[greater] = current
                greater -= 1
            else:
                scan += 1
        if k < less:
            high = less - 1
        elif k > greater:
            low = greater + 1
        else:
            return pivot
    return values[k]


@njit(cache=True, nogil=True)
def _select_rows(samples, k):
    result = np.empty(samples.shape[0])
    for row in range(samples.shape[0]):
        result[row] = _select(samples[row].copy(), k)
    return result


def var_rank(size, alpha):
    """ 0-based rank of the empirical VaR: floor(alpha M), i.e. the
    (floor(alpha M) + 1)-th smallest sample. """
    return min(int(math.floor(alpha * size + 1e-9)), size - 1)


def empirical_var(values, alpha):
    """ VaR_alpha of the empirical distribution of ``values``.

    Parameters
    ----------
    values: sequence of float
        Samples X_1..X_M.
    alpha: float
        Level in (0, 1).

    Returns
    -------
    float
        sup{t : #{X_i >= t} >= (1 - alpha) M}, the (floor(alpha M) + 1)-th
        smallest sample.

    Raises
    ------
    ValueError
        If ``values`` is empty, contains NaN, or alpha is outside (0, 1).
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("empirical VaR of an empty sample")
    if np.any(np.isnan(values)):
        raise ValueError("empirical VaR of a sample containing NaN")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float(_select(values.copy(), var_rank(values.size, alpha)))


def order_statistic_rows(samples, rank):
    """ The ``rank``-th smallest (0-based) entry of every row of a 2-D array. """
    samples = np.ascontiguousarray(samples, dtype=float)
    if samples.shape[-1] == 0:
        raise ValueError("order statistic of an empty sample")
    if np.any(np.isnan(samples)):
        raise ValueError("order statistic of a sample containing NaN")
    if not 0 <= rank < samples.shape[-1]:
        raise ValueError(f"rank {rank} outside a sample of size {samples.shape[-1]}")
    return _select_rows(samples, rank)


def empirical_var_rows(samples, alpha):
    """ :func:`empirical_var` of every row of a 2-D array. """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return order_statistic_rows(samples, var_rank(np.shape(samples)[-1], alpha))


def alpha_for_optimality(delta, num_states):
    """ Per-state level alpha = delta / S giving a 1 - delta lower bound overall. """
    if not 0 < delta < 0.5:
        raise ValueError(f"delta must lie in (0, 0.5), got {delta}")
    if num_states < 1:
        raise ValueError(f"number of states must be positive, got {num_states}")
    return delta / num_states


def _gaussian_terms(mdp, moments_, v):
    returns = return_tensor(mdp, v)
    means = np.einsum("sai,sai->sa", moments_.mean, returns)
    quadratic = np.einsum("sai,saij,saj->sa", returns, moments_.cov, returns)
    if np.any(quadratic < -QUADRATIC_TOLERANCE):
        s, a = np.unravel_index(np.argmin(quadratic), quadratic.shape)
        raise NumericalError(
            f"negative quadratic form w'Sigma w = {quadratic[s, a]:.3e} at state {s}, action {a}")
    if np.any(quadratic < 0):
        logger.warning("clamped %d slightly negative quadratic forms to zero",
                       int(np.sum(quadratic < 0)))
        quadratic = np.maximum(quadratic, 0.0)
    return means, np.sqrt(quadratic)


def var_q_values(mdp, source, v, alpha, mode="empirical"):
    """ VaR of the one-step return of every (s, a), shape (S, A). """
    if mode == "empirical":
        samples = np.moveaxis(source.returns(mdp, v), 0, -1).reshape(-1, source.size)
        return empirical_var_rows(samples, alpha).reshape(mdp.num_states, mdp.num_actions)
    means, spreads = _gaussian_terms(mdp, source, v)
    if mode == "gaussian":
        return means - std_normal_quantile(1 - alpha) * spreads
    if mode == "subgaussian":
        return means - math.sqrt(2.0 * math.log(1.0 / alpha)) * spreads
    raise ConfigurationError(f"unknown VaR mode {mode!r}; expected one of {', '.join(MODES)}")


def _greedy(q_values):
    policy = np.argmax(q_values, axis=1)
    return q_values[np.arange(q_values.shape[0]), policy], policy


def var_bellman_update_empirical(mdp, ensemble, v, alpha):
    """ (T_VaR v)_s = max_a VaR_alpha over the ensemble of p_m' w_{s,a}; ties go
    to the lowest action. """
    return _greedy(var_q_values(mdp, ensemble, v, alpha, "empirical"))


def var_bellman_update_gaussian(mdp, moments_, v, alpha):
    """ Closed-form VaR update for normally distributed rows:
    max_a p_bar' w - Phi^{-1}(1 - alpha) sqrt(w' Sigma w). """
    return _greedy(var_q_values(mdp, moments_, v, alpha, "gaussian"))


def subgaussian_lower_bound(moments_, w, s, a, alpha):
    """ p_bar' w - sqrt(2 ln(1/alpha)) sqrt(w' Sigma w) for a single (s, a). """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    w = np.asarray(w, dtype=float)
    quadratic = float(w @ moments_.cov[s, a] @ w)
    if quadratic < -QUADRATIC_TOLERANCE:
        raise NumericalError(f"negative quadratic form w'Sigma w = {quadratic:.3e}")
    spread = math.sqrt(max(quadratic, 0.0))
    return float(moments_.mean[s, a] @ w) - math.sqrt(2.0 * math.log(1.0 / alpha)) * spread


@attrs.frozen
class VarConfig:
    alpha: float = attrs.field(converter=float)
    epsilon: float = attrs.field(converter=float)
    mode: str = attrs.field(default="empirical", validator=attrs.validators.in_(MODES))

    @alpha.validator
    def _check_alpha(self, attribute, value):
        if not 0 < value < 0.5:
            raise ConfigurationError(f"alpha must lie in (0, 0.5), got {value}")

    @epsilon.validator
    def _check_epsilon(self, attribute, value):
        if value <= 0:
            raise ConfigurationError(f"epsilon must be positive, got {value}")


def _source_for_mode(source, mode):
    if mode == "empirical":
        if not isinstance(source, ModelEnsemble):
            raise ConfigurationError("empirical VaR needs a model ensemble")
        return source
    return source if isinstance(source, PosteriorMoments) else moments(source)


def var_value_iteration(mdp, source, cfg, initial_value=None, max_iterations=None):
    """ VaR value iteration.

    Parameters
    ----------
    mdp: TabularMdp
    source: ModelEnsemble or PosteriorMoments
        Ensembles feed any mode (the Gaussian modes use their sample moments);
        moments feed only the Gaussian modes.
    cfg: VarConfig
    initial_value: array, optional
        u_0, zero by default.
    max_iterations: int, optional
        Sweep cap, ten times the theoretical count by default.

    Returns
    -------
    VarSolution
        Greedy policy and value within ``cfg.epsilon`` of the operator's fixed point.
    """
    source = _source_for_mode(source, cfg.mode)
    return iterate_to_fixed_point(
        mdp, lambda v: _greedy(var_q_values(mdp, source, v, cfg.alpha, cfg.mode)),
        cfg.epsilon, initial_value=initial_value, max_iterations=max_iterations,
        method=f"var-{cfg.mode}")


def var_policy_evaluation(mdp, ensemble, policy, alpha, epsilon, mode="empirical"):
    """ Fixed point of the policy-restricted VaR operator, within epsilon. """
    policy = check_policy(mdp, policy)
    source = _source_for_mode(ensemble, mode)
    states = np.arange(mdp.num_states)

    def update(v):
        return var_q_values(mdp, source, v, alpha, mode)[states, policy], policy

    solution = iterate_to_fixed_point(mdp, update, epsilon, method="var-evaluation")
    return solution.value
