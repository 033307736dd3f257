""" SA-rectangular robust MDP baselines.

Ambiguity sets are weighted norm balls
{p in simplex : ||p - p_bar||_{q,b} <= psi} around a center p_bar, one per
state-action pair. Radii come either from the posterior ensemble (Bayesian
credible regions, optionally with value-dependent weights) or from a
Hoeffding concentration bound on the data counts.
"""
import logging
import math

import attrs
import numpy as np
from numba import njit
from scipy import sparse
from scipy.optimize import linprog

from .exceptions import ConfigurationError, InfeasibleSetError, ModelError, NumericalError
from .mdp import (Solution, TransitionModel, check_simplex_rows, iterate_to_fixed_point,
                  return_tensor, value_iteration, _readonly)
from .posterior import DirichletPosterior, empirical_model, visit_counts
from .var_solver import order_statistic_rows

logger = logging.getLogger(__name__)

RobustSolution = Solution

WEIGHT_FLOOR = 1e-3
LINF_RELATIVE_FLOOR = 0.1
LP_TOLERANCE = 1e-10


def canonical_norm(norm):
    """ 1 or math.inf from any of 1, "1", "l1", inf, "inf", "linf". """
    if norm in (1, "1", "l1"):
        return 1
    if norm in ("inf", "linf") or (isinstance(norm, float) and math.isinf(norm) and norm > 0):
        return math.inf
    raise ConfigurationError(f"unsupported norm {norm!r}; expected l1 or linf")


def _validate_spec(instance, attribute, value):
    centers, weights, radii = instance.centers, instance.weights, instance.radii
    if centers.ndim != 3 or weights.shape != centers.shape:
        raise ModelError(f"centers {centers.shape} and weights {weights.shape} must share "
                         "an (S, A, S) shape")
    if radii.shape != centers.shape[:2]:
        raise ModelError(f"radii must have shape {centers.shape[:2]}, got {radii.shape}")
    check_simplex_rows(centers, "ambiguity set center")
    if not np.all(weights > 0):
        raise ModelError("ambiguity set weights must be strictly positive")
    if not np.all(radii >= 0) or not np.all(np.isfinite(radii)):
        raise ModelError("ambiguity set radii must be finite and nonnegative")


@attrs.frozen(eq=False)
class AmbiguitySetSpec:
    """ P_{s,a} = {p in simplex : ||p - centers[s, a]||_{norm, weights[s, a]} <= radii[s, a]} """
    norm: float = attrs.field(converter=canonical_norm)
    centers: np.ndarray = attrs.field(converter=_readonly)
    weights: np.ndarray = attrs.field(converter=_readonly)
    radii: np.ndarray = attrs.field(converter=_readonly, validator=_validate_spec)


def spec_to_dict(spec):
    return {
        "norm": "l1" if spec.norm == 1 else "linf",
        "radii": spec.radii.tolist(),
        "weights": spec.weights.tolist(),
        "centers": spec.centers.tolist(),
    }


def spec_from_dict(document):
    return AmbiguitySetSpec(document["norm"], document["centers"], document["weights"],
                            document["radii"])


def weighted_norm_distance(p, p_bar, weights, norm):
    """ ||p - p_bar||_{q,b} along the last axis; broadcasts over leading axes. """
    scaled = np.asarray(weights) * np.abs(np.asarray(p, dtype=float) - np.asarray(p_bar))
    if canonical_norm(norm) == 1:
        return scaled.sum(axis=-1)
    return scaled.max(axis=-1)


def fit_bcr_radius(ensemble, centers, weights, norm, alpha):
    """ Smallest radii whose balls contain at least ceil((1 - alpha) M) members.

    Parameters
    ----------
    ensemble: ModelEnsemble
    centers, weights: ndarray (S, A, S)
    norm: 1 or inf
    alpha: float
        Per-row miss probability in (0, 1).

    Returns
    -------
    ndarray (S, A)
        The ceil((1 - alpha) M)-th smallest member distance of every row.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    distances = weighted_norm_distance(ensemble.probs, centers, weights, norm)
    count = min(ensemble.size, max(1, math.ceil((1.0 - alpha) * ensemble.size - 1e-9)))
    samples = np.moveaxis(distances, 0, -1).reshape(-1, ensemble.size)
    radii = order_statistic_rows(samples, count - 1)
    return radii.reshape(ensemble.num_states, ensemble.num_actions)


@njit(cache=True)
def _l1_uniform(p_bar, w, budget):
    # moves up to budget/2 of mass onto the smallest return, taken from the largest
    p = p_bar.copy()
    order = np.argsort(w, kind="mergesort")
    target = order[0]
    shift = min(budget / 2.0, 1.0 - p[target])
    p[target] += shift
    remaining = shift
    for index in range(len(order) - 1, 0, -1):
        if remaining <= 0.0:
            break
        donor = order[index]
        taken = min(remaining, p[donor])
        p[donor] -= taken
        remaining -= taken
    return p


@njit(cache=True)
def _l1_uniform_rows(centers, returns, budgets):
    values = np.empty(centers.shape[0])
    for row in range(centers.shape[0]):
        p = _l1_uniform(centers[row], returns[row], budgets[row])
        values[row] = np.dot(p, returns[row])
    return values


@njit(cache=True)
def _linf_pour(lower, upper, w):
    p = lower.copy()
    residual = 1.0 - lower.sum()
    for index in np.argsort(w, kind="mergesort"):
        if residual <= 0.0:
            break
        added = min(upper[index] - lower[index], residual)
        p[index] += added
        residual -= added
    return p


@njit(cache=True)
def _linf_rows(lower, upper, returns):
    values = np.empty(lower.shape[0])
    for row in range(lower.shape[0]):
        values[row] = np.dot(_linf_pour(lower[row], upper[row], returns[row]), returns[row])
    return values


def _l1_programs(centers, returns, radii, weights):
    """ Worst-case distributions of many weighted l1 rows in one linear program.

    Row r owns variables x_r (mass added) and y_r (mass removed), with
    p_r = centers[r] + x_r - y_r, sum(x_r) = sum(y_r) and
    weights[r]' (x_r + y_r) <= radii[r]. Rows share no constraint, so
    minimising the sum minimises every row.
    """
    rows, size = centers.shape
    cost = np.concatenate([returns, -returns], axis=1).ravel()
    columns = np.arange(2 * rows * size)
    owners = np.repeat(np.arange(rows), 2 * size)
    signs = np.tile(np.concatenate([np.ones(size), -np.ones(size)]), rows)
    balance = sparse.csr_matrix((signs, (owners, columns)), shape=(rows, 2 * rows * size))
    budget = sparse.csr_matrix((np.concatenate([weights, weights], axis=1).ravel(),
                                (owners, columns)), shape=(rows, 2 * rows * size))
    upper = np.concatenate([1.0 - centers, centers], axis=1).ravel()
    bounds = np.column_stack([np.zeros_like(upper), np.maximum(upper, 0.0)])
    result = linprog(cost, A_ub=budget, b_ub=radii, A_eq=balance, b_eq=np.zeros(rows),
                     bounds=bounds, method="highs",
                     options={"primal_feasibility_tolerance": LP_TOLERANCE,
                              "dual_feasibility_tolerance": LP_TOLERANCE})
    if result.status != 0:
        raise NumericalError(f"weighted l1 inner problem failed: {result.message}")
    moves = result.x.reshape(rows, 2, size)
    p = np.clip(centers + moves[:, 0] - moves[:, 1], 0.0, None)
    return p / p.sum(axis=1, keepdims=True)


def worst_case_l1(p_bar, w, psi, weights=None):
    """ Minimise p' w over the weighted l1 ball of radius ``psi`` around ``p_bar``.

    Parameters
    ----------
    p_bar: ndarray
        Center on the simplex.
    w: ndarray
        One-step returns.
    psi: float
        Radius.
    weights: ndarray, optional
        Positive weights b, all ones when omitted.

    Returns
    -------
    (ndarray, float)
        Minimiser p* and its value p*' w. Equal weights use the exact greedy
        transfer onto argmin w; unequal weights solve a linear program.
    """
    p_bar = np.asarray(p_bar, dtype=float)
    w = np.asarray(w, dtype=float)
    weights = np.ones_like(p_bar) if weights is None else np.asarray(weights, dtype=float)
    if psi < 0 or not np.all(weights > 0):
        raise ValueError("radius must be nonnegative and weights positive")
    if np.all(weights == weights[0]):
        p = _l1_uniform(p_bar, w, psi / weights[0])
    else:
        p = _l1_programs(p_bar[np.newaxis], w[np.newaxis], np.array([psi]), weights[np.newaxis])[0]
    return p, float(p @ w)


def _box(p_bar, psi, weights):
    lower = np.maximum(0.0, p_bar - psi / weights)
    upper = np.minimum(1.0, p_bar + psi / weights)
    if np.any(upper.sum(axis=-1) < 1.0 - 1e-12) or np.any(lower.sum(axis=-1) > 1.0 + 1e-12):
        raise InfeasibleSetError("the weighted linf ball does not intersect the simplex")
    return lower, upper


def worst_case_linf(p_bar, w, psi, weights=None):
    """ Minimise p' w over {p in simplex : max_i b_i |p_i - p_bar_i| <= psi}: start at
    the lower box corner and pour the rest into the smallest returns first. """
    p_bar = np.asarray(p_bar, dtype=float)
    w = np.asarray(w, dtype=float)
    weights = np.ones_like(p_bar) if weights is None else np.asarray(weights, dtype=float)
    if psi < 0 or not np.all(weights > 0):
        raise ValueError("radius must be nonnegative and weights positive")
    lower, upper = _box(p_bar, psi, weights)
    p = _linf_pour(lower, upper, w)
    return p, float(p @ w)


def robust_q_values(mdp, spec, v):
    """ min over P_{s,a} of p' (r_{s,a} + gamma v), shape (S, A). """
    num_states, num_actions = mdp.num_states, mdp.num_actions
    rows = num_states * num_actions
    returns = return_tensor(mdp, v).reshape(rows, num_states)
    centers = spec.centers.reshape(rows, num_states)
    weights = spec.weights.reshape(rows, num_states)
    radii = spec.radii.reshape(rows)

    if spec.norm == 1:
        values = np.empty(rows)
        uniform = np.all(weights == weights[:, :1], axis=1)
        if np.any(uniform):
            values[uniform] = _l1_uniform_rows(centers[uniform], returns[uniform],
                                               radii[uniform] / weights[uniform, 0])
        if not np.all(uniform):
            worst = _l1_programs(centers[~uniform], returns[~uniform], radii[~uniform],
                                 weights[~uniform])
            values[~uniform] = np.einsum("ri,ri->r", worst, returns[~uniform])
    else:
        lower, upper = _box(centers, radii[:, np.newaxis], weights)
        values = _linf_rows(lower, upper, returns)
    return values.reshape(num_states, num_actions)


def robust_bellman_update(mdp, spec, v):
    q_values = robust_q_values(mdp, spec, v)
    policy = np.argmax(q_values, axis=1)
    return q_values[np.arange(mdp.num_states), policy], policy


def robust_value_iteration(mdp, spec, epsilon, initial_value=None, max_iterations=None,
                           method=None):
    if spec.centers.shape != mdp.rewards.shape:
        raise ModelError(f"ambiguity set shape {spec.centers.shape} does not match MDP "
                         f"shape {mdp.rewards.shape}")
    if method is None:
        method = "robust-l1" if spec.norm == 1 else "robust-linf"
    return iterate_to_fixed_point(mdp, lambda v: robust_bellman_update(mdp, spec, v), epsilon,
                                  initial_value=initial_value, max_iterations=max_iterations,
                                  method=method)


def _spread_weights(centers, returns, norm=1):
    spread = np.abs(returns - np.einsum("sai,sai->sa", centers, returns)[..., np.newaxis])
    weights = spread + WEIGHT_FLOOR
    if norm != 1:
        # box half-widths psi / b stay within a bounded multiple of the mean one
        weights = np.maximum(weights, LINF_RELATIVE_FLOOR * weights.mean(axis=-1, keepdims=True))
    return weights / weights.mean(axis=-1, keepdims=True)


def optimize_weights(mdp, ensemble, v, norm=1):
    """ Value-spread weights b_i = |w_i - p_bar' w| + 0.001 around the ensemble mean,
    normalised to mean one per (s, a). Coordinates whose return is far from the
    mean get large weights, which narrows the set along them. For the linf norm
    the weights are also floored at a tenth of their mean before normalising, so
    no box side grows without bound.
    """
    norm = canonical_norm(norm)
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("value function must be finite")
    return _spread_weights(ensemble.mean_model().probs, return_tensor(mdp, v), norm)


def _interleaved_solve(mdp, centers, radii_for, norm, epsilon, outer_iterations, method):
    """ Weight refits around fixed centers, starting from uniform weights.

    Every refit takes value-spread weights from the incumbent value function and
    refits the radii. A refit replaces the incumbent only when it raises the
    robust return p0' v; the loop ends at the first refit gaining at most
    ``epsilon``.
    """
    if outer_iterations < 1:
        raise ValueError(f"at least one weight refit is needed, got {outer_iterations}")
    norm = canonical_norm(norm)
    weights = np.ones_like(centers)
    best_spec = AmbiguitySetSpec(norm, centers, weights, radii_for(weights))
    best = robust_value_iteration(mdp, best_spec, epsilon, method=method)
    score = float(mdp.initial_dist @ best.value)
    for outer in range(1, outer_iterations + 1):
        weights = _spread_weights(centers, return_tensor(mdp, best.value), norm)
        spec = AmbiguitySetSpec(norm, centers, weights, radii_for(weights))
        solution = robust_value_iteration(mdp, spec, epsilon, initial_value=best.value,
                                          method=method)
        gain = float(mdp.initial_dist @ solution.value) - score
        logger.debug("%s weight refit %d changed the robust return by %.3e", method, outer, gain)
        if gain > 0:
            best, best_spec, score = solution, spec, score + gain
        if gain <= epsilon:
            break
    else:
        logger.warning("%s was still improving after %d weight refits", method, outer_iterations)
    return best, best_spec


def bcr_value_iteration(mdp, ensemble, alpha, norm, epsilon):
    """ Unweighted credible-region robust MDP around the ensemble mean. """
    centers = ensemble.mean_model().probs
    weights = np.ones_like(centers)
    radii = fit_bcr_radius(ensemble, centers, weights, norm, alpha)
    spec = AmbiguitySetSpec(norm, centers, weights, radii)
    label = "bcr-l1" if spec.norm == 1 else "bcr-linf"
    return robust_value_iteration(mdp, spec, epsilon, method=label), spec


def weighted_bcr_value_iteration(mdp, ensemble, alpha, norm, epsilon, outer_iterations=10):
    """ Credible-region robust MDP with value-spread weights.

    Starting from the unweighted region, weights are recomputed from the best
    value function so far and the radii refit to keep a (1 - alpha) share of the
    ensemble inside every ball. A refit is kept only when it raises the robust
    return, so the result is never below :func:`bcr_value_iteration`.

    Returns
    -------
    (RobustSolution, AmbiguitySetSpec)
    """
    centers = ensemble.mean_model().probs
    label = "wbcr-l1" if canonical_norm(norm) == 1 else "wbcr-linf"
    return _interleaved_solve(
        mdp, centers, lambda weights: fit_bcr_radius(ensemble, centers, weights, norm, alpha),
        norm, epsilon, outer_iterations, label)


def hoeffding_radius(counts, delta, weights_mode="naive", weights=None):
    """ l1 concentration radii from the visit counts.

    Parameters
    ----------
    counts: ndarray (S, A) or DirichletPosterior
        Visit counts n_{s,a}.
    delta: float
        Overall failure probability, split over all S A rows inside the logarithm.
    weights_mode: {"naive", "optimized"}
    weights: ndarray (S, A, S), optional
        Required for "optimized"; any positive weights.

    Returns
    -------
    ndarray (S, A)
        sqrt((2 / n) ln(S A 2^S / delta)), capped at the l1 diameter 2; rows
        without data get 2. Optimized radii bound the weighted norm instead:
        every sign pattern of sum_i b_i (p_hat_i - p_i) averages terms spanning
        at most b_(1) + b_(2), the two largest weights of the row, so the naive
        radius is scaled by (b_(1) + b_(2)) / 2, with the weighted diameter
        b_(1) + b_(2) as the cap.
    """
    if isinstance(counts, DirichletPosterior):
        counts = visit_counts(counts)
    counts = np.asarray(counts, dtype=float)
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    num_states, num_actions = counts.shape
    log_term = math.log(num_states * num_actions) + num_states * math.log(2.0) - math.log(delta)
    unvisited = counts <= 0
    if np.any(unvisited):
        logger.warning("%d state-action pairs have no data; their Hoeffding radius is 2",
                       int(unvisited.sum()))
    safe_counts = np.where(unvisited, 1.0, counts)
    radii = np.where(unvisited, 2.0, np.minimum(np.sqrt(2.0 * log_term / safe_counts), 2.0))
    if weights_mode == "naive":
        return radii
    if weights_mode == "optimized":
        if weights is None:
            raise ValueError("optimized Hoeffding radii need weights")
        weights = np.asarray(weights, dtype=float)
        if weights.shape[:-1] != counts.shape or np.any(weights <= 0):
            raise ValueError(f"weights must be positive with shape {counts.shape} + (S,)")
        top_two = np.sort(weights, axis=-1)[..., -2:].sum(axis=-1)
        return radii * top_two / 2.0
    raise ConfigurationError(f"unknown Hoeffding weights mode {weights_mode!r}")


def hoeffding_spec(mdp, posterior, delta, weights_mode="naive", value=None):
    """ Hoeffding ambiguity set centered on the empirical transition frequencies. """
    centers = empirical_model(posterior).probs
    counts = visit_counts(posterior)
    if weights_mode == "naive":
        weights = np.ones_like(centers)
    else:
        value = np.zeros(mdp.num_states) if value is None else value
        weights = _spread_weights(centers, return_tensor(mdp, value))
    radii = hoeffding_radius(counts, delta, weights_mode, weights)
    return AmbiguitySetSpec(1, centers, weights, radii)


def hoeffding_value_iteration(mdp, posterior, delta, epsilon, weights_mode="naive",
                              outer_iterations=10):
    """ Returns (RobustSolution, AmbiguitySetSpec) for a naive or optimized Hoeffding set. """
    if weights_mode == "naive":
        spec = hoeffding_spec(mdp, posterior, delta)
        return robust_value_iteration(mdp, spec, epsilon, method="naive-hoeffding"), spec
    centers = empirical_model(posterior).probs
    counts = visit_counts(posterior)
    return _interleaved_solve(
        mdp, centers, lambda weights: hoeffding_radius(counts, delta, "optimized", weights),
        1, epsilon, outer_iterations, "opt-hoeffding")


def soft_robust_solve(mdp, moments, epsilon):
    """ Classical value iteration on the posterior mean model. """
    solution = value_iteration(mdp, TransitionModel(moments.mean), epsilon)
    return attrs.evolve(solution, method="soft-robust")


def worst_model_solve(mdp, ensemble, epsilon):
    """ Sample-based robust MDP: each action is scored by its worst ensemble member. """

    def update(v):
        q_values = ensemble.returns(mdp, v).min(axis=0)
        policy = np.argmax(q_values, axis=1)
        return q_values[np.arange(mdp.num_states), policy], policy

    return iterate_to_fixed_point(mdp, update, epsilon, method="worst-rmdp")
