""" Quantile mathematics, performance-gap bounds and ambiguity-set geometry.

Everything here is a pure function of its arguments.
"""
import logging
import math

import attrs
import numpy as np
import pandas as pd
import scipy.linalg
from scipy.special import gammaincinv, ndtri
from scipy.stats import gaussian_kde

from .exceptions import NumericalError
from .mdp import policy_value, return_tensor

logger = logging.getLogger(__name__)


def _check_open_unit(name, p):
    if not np.all((np.asarray(p) > 0) & (np.asarray(p) < 1)):
        raise ValueError(f"{name} must lie in (0, 1), got {p}")


def std_normal_quantile(p):
    """ Inverse standard normal CDF.

    Parameters
    ----------
    p: float or array
        Probability level(s) in (0, 1).

    Returns
    -------
    float or ndarray
        Phi^{-1}(p), accurate to about 1e-15 absolute on [1e-12, 1 - 1e-12].
    """
    _check_open_unit("p", p)
    result = ndtri(p)
    return float(result) if np.ndim(result) == 0 else result


def chi_squared_quantile(dof, p):
    """ p-quantile of the chi-squared distribution with ``dof`` degrees of freedom,
    inverting the regularized lower incomplete gamma function. """
    if dof < 1 or int(dof) != dof:
        raise ValueError(f"degrees of freedom must be a positive integer, got {dof}")
    _check_open_unit("p", p)
    return float(2.0 * gammaincinv(dof / 2.0, p))


def radius_ratio(num_states, alpha):
    """ xi = sqrt(chi2_{S-1, 1-alpha}) / Phi^{-1}(1-alpha): how much larger a
    credible-region ellipsoid is than the VaR ellipsoid along its worst direction. """
    if num_states < 2:
        raise ValueError(f"radius ratio needs at least 2 states, got {num_states}")
    if not 0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 0.5), got {alpha}")
    return math.sqrt(chi_squared_quantile(num_states - 1, 1 - alpha)) / std_normal_quantile(1 - alpha)


def radius_table(states, alpha):
    """ One row per state count, columns S, alpha, ratio. """
    rows = [(int(s), alpha, radius_ratio(int(s), alpha)) for s in states]
    return pd.DataFrame(rows, columns=["S", "alpha", "ratio"])


def iteration_bound(gamma, epsilon, r_max):
    """ Sweeps needed for epsilon accuracy from u_0 = 0:
    ceil(log_{1/gamma}(r_max / (epsilon (1 - gamma)))), at least 1. """
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if epsilon <= 0 or r_max <= 0:
        raise ValueError("epsilon and r_max must be positive")
    argument = r_max / (epsilon * (1.0 - gamma))
    if argument <= 1:
        return 1
    exponent = math.log(argument) / math.log(1.0 / gamma)
    return max(1, math.ceil(exponent - 1e-12))


def sample_complexity(density, epsilon, zeta):
    """ Asymptotic number of posterior samples M* with M* eps^2 = ln(2/zeta) / (2 eta^2).

    Parameters
    ----------
    density: float
        Density eta of the return distribution at its VaR.
    epsilon: float
        Target VaR accuracy.
    zeta: float
        Failure probability.
    """
    if density <= 0 or epsilon <= 0:
        raise ValueError("density and epsilon must be positive")
    _check_open_unit("zeta", zeta)
    return math.log(2.0 / zeta) / (2.0 * epsilon ** 2 * density ** 2)


def return_density(samples, at):
    """ Gaussian kernel density estimate of ``samples`` evaluated at ``at``. """
    samples = np.asarray(samples, dtype=float)
    if np.ptp(samples) == 0:
        raise NumericalError("cannot estimate a density from identical samples")
    return float(gaussian_kde(samples)(at)[0])


@attrs.frozen(eq=False)
class GapReport:
    gap_bound: float
    per_sa_gaps: np.ndarray
    delta: float
    alpha: float
    upper_level: float


def performance_gap_bound(mdp, ensemble, value, delta):
    """ Finite-sample bound on the loss of the VaR policy against the best percentile return.

    Parameters
    ----------
    mdp: TabularMdp
    ensemble: ModelEnsemble
    value: ndarray
        The VaR value function u_hat.
    delta: float
        Overall confidence; the lower level is alpha = delta / S and the
        upper level 1 - (1 - delta) / S.

    Returns
    -------
    GapReport
        ``gap_bound`` is max over (s, a) of the difference of the two empirical
        VaRs of the ensemble returns, divided by 1 - gamma.
    """
    from .var_solver import empirical_var_rows

    if not 0 < delta < 0.5:
        raise ValueError(f"delta must lie in (0, 0.5), got {delta}")
    alpha = delta / mdp.num_states
    upper_level = 1.0 - (1.0 - delta) / mdp.num_states
    returns = ensemble.returns(mdp, value)
    samples = np.moveaxis(returns, 0, -1).reshape(-1, ensemble.size)
    lower = empirical_var_rows(samples, alpha)
    upper = empirical_var_rows(samples, upper_level)
    gaps = (upper - lower).reshape(mdp.num_states, mdp.num_actions)
    bound = float(gaps.max()) / (1.0 - mdp.discount)
    return GapReport(bound, gaps, delta, alpha, upper_level)


@attrs.frozen
class AsymptoticGap:
    tight: float
    loose: float
    sigma_max: float


def asymptotic_gap_bound(mdp, moments, value, delta, num_samples):
    """ Limit of sqrt(N) times the performance loss, scaled back by sqrt(N).

    sigma_max^2 = N max_{s,a} w' Sigma w with the posterior covariance standing in
    for the inverse Fisher information. ``tight`` uses 2 Phi^{-1}(1 - delta/S) and
    ``loose`` the sub-Gaussian constant sqrt(8 ln(S/delta)).
    """
    if not 0 < delta < 0.5:
        raise ValueError(f"delta must lie in (0, 0.5), got {delta}")
    if num_samples < 1:
        raise ValueError(f"number of data samples must be positive, got {num_samples}")
    returns = return_tensor(mdp, value)
    quadratic = np.einsum("sai,saij,saj->sa", returns, moments.cov, returns)
    sigma_max = math.sqrt(num_samples * max(float(quadratic.max()), 0.0))
    scale = sigma_max / math.sqrt(num_samples) / (1.0 - mdp.discount)
    alpha = delta / mdp.num_states
    tight = 2.0 * std_normal_quantile(1.0 - alpha) * scale
    loose = math.sqrt(8.0 * math.log(1.0 / alpha)) * scale
    return AsymptoticGap(tight, loose, sigma_max)


def coverage_check(mdp, policy, value, fresh_ensemble, statewise=True):
    """ Fraction of independently drawn models under which ``value`` is a lower bound.

    ``statewise`` compares value <= v^pi(P) in every state; otherwise the
    comparison is p0' value <= rho(pi, P).
    """
    value = np.asarray(value, dtype=float)
    covered = 0
    for model in fresh_ensemble.models:
        exact = policy_value(mdp, model, policy)
        if statewise:
            covered += bool(np.all(value <= exact + 1e-10))
        else:
            covered += bool(mdp.initial_dist @ value <= mdp.initial_dist @ exact + 1e-10)
    return covered / fresh_ensemble.size


def _reduced_norm(p, p_star, cov_reduced, num_samples):
    difference = (np.asarray(p, dtype=float) - np.asarray(p_star, dtype=float))[:-1]
    cov_reduced = np.atleast_2d(np.asarray(cov_reduced, dtype=float))
    if cov_reduced.shape != (len(difference), len(difference)):
        raise ValueError(f"reduced covariance must be {len(difference)}x{len(difference)}")
    try:
        factor = scipy.linalg.cho_factor(cov_reduced)
    except np.linalg.LinAlgError as error:
        raise NumericalError(f"reduced covariance is not positive definite: {error}")
    return math.sqrt(num_samples * difference @ scipy.linalg.cho_solve(factor, difference))


def var_ellipsoid_membership(p, p_star, cov_reduced, alpha, num_samples):
    """ Whether p lies in the asymptotic VaR ellipsoid of level alpha around p_star.

    Only the first S - 1 coordinates are used, which removes the simplex
    degeneracy of the full covariance.
    """
    return _reduced_norm(p, p_star, cov_reduced, num_samples) <= std_normal_quantile(1 - alpha)


def bcr_ellipsoid_membership(p, p_star, cov_reduced, alpha, num_samples):
    """ As :func:`var_ellipsoid_membership`, for the credible region of radius
    sqrt(chi2_{S-1, 1-alpha}). """
    dof = len(p) - 1
    radius = math.sqrt(chi_squared_quantile(dof, 1 - alpha))
    return _reduced_norm(p, p_star, cov_reduced, num_samples) <= radius
