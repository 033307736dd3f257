""" Tabular MDPs, exact policy evaluation and classical Bellman machinery.

Terminal states are absorbing self-loops with zero reward; there is no
terminal flag. Rewards are stored per (s, a, s') triple and expected
rewards are always derived from a transition model.
"""
import logging
import math

import attrs
import numpy as np
import yaml

from .exceptions import ModelError

logger = logging.getLogger(__name__)

ValueFunction = np.ndarray
DeterministicPolicy = np.ndarray

SIMPLEX_TOLERANCE = 1e-9
DIRECT_SOLVE_LIMIT = 2000


def _readonly(array, dtype=float):
    result = np.array(array, dtype=dtype)
    result.setflags(write=False)
    return result


def check_simplex_rows(probs, name, tolerance=SIMPLEX_TOLERANCE):
    """ Raise :class:`ModelError` unless every last-axis row is a distribution. """
    if not np.all(np.isfinite(probs)):
        raise ModelError(f"{name} contains non-finite entries")
    if np.any(probs < 0):
        index = tuple(int(i) for i in np.argwhere(probs < 0)[0])
        raise ModelError(f"{name} has a negative entry at {index}")
    sums = probs.sum(axis=-1)
    bad = np.abs(sums - 1.0) > tolerance
    if np.any(bad):
        index = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ModelError(f"{name} row {index} sums to {sums[index]!r}, not 1")


def _validate_rewards(instance, attribute, value):
    if value.ndim != 3 or value.shape[0] != value.shape[2] or 0 in value.shape:
        raise ModelError(f"rewards must have shape (S, A, S), got {value.shape}")
    if not np.all(np.isfinite(value)):
        raise ModelError("rewards must be finite")


def _validate_discount(instance, attribute, value):
    if not 0.0 <= value < 1.0:
        raise ModelError(f"discount must lie in [0, 1), got {value}")


def _validate_initial(instance, attribute, value):
    if value.shape != (instance.rewards.shape[0],):
        raise ModelError(
            f"initial_dist must have length {instance.rewards.shape[0]}, got {value.shape}")
    check_simplex_rows(value, "initial_dist")


@attrs.frozen(eq=False)
class TabularMdp:
    """ The decision problem: rewards R[s][a][s'], discount and initial distribution.

    Transition probabilities live separately in :class:`TransitionModel`, since
    the whole point of the package is that they are uncertain.
    """
    rewards: np.ndarray = attrs.field(converter=_readonly, validator=_validate_rewards)
    discount: float = attrs.field(converter=float, validator=_validate_discount)
    initial_dist: np.ndarray = attrs.field(converter=_readonly, validator=_validate_initial)

    @property
    def num_states(self):
        return self.rewards.shape[0]

    @property
    def num_actions(self):
        return self.rewards.shape[1]

    @property
    def reward_bound(self):
        """ r_max = max |R(s, a, s')| """
        return float(np.max(np.abs(self.rewards)))


def _validate_probs(instance, attribute, value):
    if value.ndim != 3 or value.shape[0] != value.shape[2]:
        raise ModelError(f"transition probabilities must have shape (S, A, S), got {value.shape}")
    check_simplex_rows(value, "transition model")


@attrs.frozen(eq=False)
class TransitionModel:
    """ One complete transition kernel P[s][a][s']. """
    probs: np.ndarray = attrs.field(converter=_readonly, validator=_validate_probs)

    def check_compatible(self, mdp):
        if self.probs.shape != mdp.rewards.shape:
            raise ModelError(
                f"model shape {self.probs.shape} does not match MDP shape {mdp.rewards.shape}")


@attrs.frozen(eq=False)
class Solution:
    """ Output of every iterative solver.

    Attributes
    ----------
    policy: ndarray of int
        Greedy deterministic policy of the final sweep.
    value: ndarray
        Final iterate u_k.
    iterations: int
        Number of Bellman sweeps performed (at least 1).
    converged: bool
        True when the stopping rule held at exit, False when the cap was hit.
    residual: float
        Sup-norm change of the final sweep.
    method: str
        Name of the solver that produced it.
    """
    policy: np.ndarray = attrs.field(converter=lambda p: _readonly(p, dtype=np.int64))
    value: np.ndarray = attrs.field(converter=_readonly)
    iterations: int = attrs.field(converter=int)
    converged: bool = attrs.field(converter=bool)
    residual: float = attrs.field(converter=float)
    method: str = ""


def check_policy(mdp, policy):
    policy = np.asarray(policy)
    if policy.shape != (mdp.num_states,):
        raise ModelError(f"policy must have length {mdp.num_states}, got {policy.shape}")
    if policy.dtype.kind not in "iu":
        raise ModelError("policy must contain integer action indices")
    if np.any(policy < 0) or np.any(policy >= mdp.num_actions):
        raise ModelError(f"policy actions must lie in [0, {mdp.num_actions})")
    return policy.astype(np.int64)


def one_step_returns(mdp, v, s, a):
    """ w_{s,a} = r_{s,a} + gamma * v, the one-step return vector of (s, a). """
    return mdp.rewards[s, a] + mdp.discount * np.asarray(v, dtype=float)


def return_tensor(mdp, v):
    """ One-step returns of every (s, a) at once, shape (S, A, S). """
    return mdp.rewards + mdp.discount * np.asarray(v, dtype=float)[np.newaxis, np.newaxis, :]


def _policy_rows(mdp, model, policy):
    states = np.arange(mdp.num_states)
    return model.probs[states, policy], mdp.rewards[states, policy]


def bellman_eval_update(mdp, model, policy, v):
    """ (T^pi_P v)_s = p_{s,pi(s)}' (r_{s,pi(s)} + gamma v) """
    policy = check_policy(mdp, policy)
    probs, rewards = _policy_rows(mdp, model, policy)
    returns = rewards + mdp.discount * np.asarray(v, dtype=float)[np.newaxis, :]
    return np.einsum("st,st->s", probs, returns)


def policy_value(mdp, model, policy, tol=1e-10):
    """ Value of a deterministic policy under one transition model.

    Parameters
    ----------
    mdp: TabularMdp
    model: TransitionModel
    policy: array of int
    tol: float
        Bound on the Bellman residual ||v - T^pi v||_inf of the result.

    Returns
    -------
    ndarray
        v^pi, by a dense linear solve of (I - gamma P_pi) v = r_pi for up to
        2000 states and by successive approximation beyond that.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    policy = check_policy(mdp, policy)
    model.check_compatible(mdp)
    probs, rewards = _policy_rows(mdp, model, policy)
    expected_rewards = np.einsum("st,st->s", probs, rewards)
    if mdp.num_states <= DIRECT_SOLVE_LIMIT:
        system = np.eye(mdp.num_states) - mdp.discount * probs
        return np.linalg.solve(system, expected_rewards)

    value = np.zeros(mdp.num_states)
    while True:
        updated = expected_rewards + mdp.discount * probs @ value
        if np.max(np.abs(updated - value)) <= tol:
            return updated
        value = updated


def expected_return(mdp, model, policy):
    """ rho(pi, P) = p0' v^pi """
    return float(mdp.initial_dist @ policy_value(mdp, model, policy))


def bellman_optimality_update(mdp, model, v):
    """ Classical max-backup; ties go to the lowest action index. """
    q_values = np.einsum("sat,sat->sa", model.probs, return_tensor(mdp, v))
    policy = np.argmax(q_values, axis=1)
    return q_values[np.arange(mdp.num_states), policy], policy


def iterate_to_fixed_point(mdp, update, epsilon, initial_value=None, max_iterations=None,
                           method=""):
    """ Drive a gamma-contraction to its fixed point.

    Starts from ``initial_value`` (zero by default) and stops once
    ||u_k - u_{k-1}||_inf <= epsilon (1 - gamma) / gamma, which leaves u_k
    within epsilon of the fixed point. With gamma = 0 a single exact update
    is returned.

    Parameters
    ----------
    mdp: TabularMdp
    update: callable
        Maps a value vector to ``(value, policy)``.
    epsilon: float
        Value approximation error.
    initial_value: array, optional
    max_iterations: int, optional
        Defaults to ten times the theoretical iteration count.
    method: str
        Label recorded in the solution and in log messages.

    Returns
    -------
    Solution
    """
    from .analysis import iteration_bound

    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    gamma = mdp.discount
    value = (np.zeros(mdp.num_states) if initial_value is None
             else np.array(initial_value, dtype=float))

    if gamma == 0.0:
        updated, policy = update(value)
        residual = float(np.max(np.abs(updated - value)))
        return Solution(policy, updated, 1, True, residual, method)

    if max_iterations is None:
        r_max = mdp.reward_bound
        theoretical = iteration_bound(gamma, epsilon, r_max) if r_max > 0 else 1
        max_iterations = 10 * theoretical
    threshold = epsilon * (1.0 - gamma) / gamma

    iterations = 0
    while True:
        updated, policy = update(value)
        iterations += 1
        residual = float(np.max(np.abs(updated - value)))
        logger.debug("%s sweep %d residual %.3e", method, iterations, residual)
        value = updated
        if residual <= threshold:
            logger.info("%s converged after %d sweeps (residual %.3e)",
                        method, iterations, residual)
            return Solution(policy, value, iterations, True, residual, method)
        if iterations >= max_iterations:
            logger.warning("%s stopped at the cap of %d sweeps without converging "
                           "(residual %.3e > %.3e)", method, iterations, residual, threshold)
            return Solution(policy, value, iterations, False, residual, method)


def value_iteration(mdp, model, epsilon, initial_value=None, max_iterations=None):
    model.check_compatible(mdp)
    return iterate_to_fixed_point(
        mdp, lambda v: bellman_optimality_update(mdp, model, v), epsilon,
        initial_value=initial_value, max_iterations=max_iterations, method="value-iteration")


def rollout_return(mdp, model, policy, episodes, seed, horizon=None):
    """ Monte Carlo estimate of rho(pi, P) with its standard error.

    Episodes are truncated once gamma^t drops below 1e-10.
    """
    policy = check_policy(mdp, policy)
    rng = np.random.default_rng(seed)
    if horizon is None:
        horizon = 1 if mdp.discount == 0 else int(math.ceil(math.log(1e-10) / math.log(mdp.discount)))
    cumulative = np.cumsum(model.probs, axis=-1)
    totals = np.zeros(episodes)
    states = rng.choice(mdp.num_states, size=episodes, p=mdp.initial_dist)
    weight = 1.0
    for _ in range(horizon):
        actions = policy[states]
        draws = rng.random(episodes)
        rows = cumulative[states, actions]
        successors = np.minimum((rows < draws[:, np.newaxis]).sum(axis=1), mdp.num_states - 1)
        totals += weight * mdp.rewards[states, actions, successors]
        weight *= mdp.discount
        states = successors
    return float(totals.mean()), float(totals.std(ddof=1) / math.sqrt(episodes))


MDP_KEYS = ("num_states", "num_actions", "discount", "initial_dist", "rewards")


def mdp_to_dict(mdp):
    return {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "discount": mdp.discount,
        "initial_dist": mdp.initial_dist.tolist(),
        "rewards": mdp.rewards.tolist(),
    }


def mdp_from_dict(document):
    unknown = set(document) - set(MDP_KEYS)
    if unknown:
        raise ModelError(f"unknown MDP fields: {sorted(unknown)}")
    missing = set(MDP_KEYS) - set(document)
    if missing:
        raise ModelError(f"missing MDP fields: {sorted(missing)}")
    mdp = TabularMdp(document["rewards"], document["discount"], document["initial_dist"])
    if (mdp.num_states, mdp.num_actions) != (document["num_states"], document["num_actions"]):
        raise ModelError(
            f"declared dimensions ({document['num_states']}, {document['num_actions']}) "
            f"do not match rewards shape {mdp.rewards.shape}")
    return mdp


def save_mdp(mdp, path):
    """ Write the YAML MDP schema. Floats are written with repr precision,
    so a reload is bit-identical. """
    with open(path, "w") as stream:
        yaml.safe_dump(mdp_to_dict(mdp), stream, sort_keys=False, default_flow_style=None)


def load_mdp(path):
    with open(path) as stream:
        return mdp_from_dict(yaml.safe_load(stream))
