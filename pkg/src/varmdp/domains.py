""" Benchmark MDPs and the batch-data sampler.

Each generator returns the decision problem together with its ground-truth
transition kernel. Riverswim and Population are reconstructions: only their
sizes and the sign and scale of their returns are fixed, so every constant
is a keyword argument.
"""
import inspect
import logging
import math

import attrs
import numpy as np
from scipy.stats import lognorm, norm

from .exceptions import ConfigurationError
from .mdp import TabularMdp, TransitionModel
from .posterior import BatchDataset, ModelEnsemble

logger = logging.getLogger(__name__)

DOMAIN_NAMES = ("riverswim", "inventory", "population", "population-small")


def riverswim(discount=0.95, num_states=5, small_reward=0.005, large_reward=1.0,
              success=0.3, slip=0.1):
    """ A swimmer in a river of ``num_states`` positions.

    Action 0 swims left (downstream) and always succeeds; state 0 then loops on
    itself and pays ``small_reward``. Action 1 swims right against the current:
    it advances with probability ``success``, slips back with ``slip`` and
    otherwise stays. At the left bank a failed attempt stays; at the right bank
    the swimmer stays with 1 - ``slip`` and collects ``large_reward``.
    """
    if num_states < 2:
        raise ConfigurationError(f"riverswim needs at least 2 states, got {num_states}")
    if success + slip > 1 or success <= 0 or slip < 0:
        raise ConfigurationError("riverswim probabilities must satisfy 0 < success, "
                                 "0 <= slip, success + slip <= 1")
    last = num_states - 1
    probs = np.zeros((num_states, 2, num_states))
    rewards = np.zeros((num_states, 2, num_states))
    for s in range(num_states):
        probs[s, 0, max(s - 1, 0)] = 1.0
        if s == 0:
            probs[s, 1, 1] = success
            probs[s, 1, 0] = 1.0 - success
        elif s == last:
            probs[s, 1, last] = 1.0 - slip
            probs[s, 1, last - 1] = slip
        else:
            probs[s, 1, s + 1] = success
            probs[s, 1, s - 1] = slip
            probs[s, 1, s] = 1.0 - success - slip
    rewards[0, 0, 0] = small_reward
    rewards[last, 1, last] = large_reward
    initial = np.full(num_states, 1.0 / num_states)
    return TabularMdp(rewards, discount, initial), TransitionModel(probs)


def _binned_normal(mean, sd, size):
    """ Normal(mean, sd) rounded to {0, ..., size - 1}, tails folded into the end bins. """
    if sd <= 0:
        pmf = np.zeros(size)
        pmf[min(max(int(round(mean)), 0), size - 1)] = 1.0
        return pmf
    edges = norm.cdf((np.arange(size + 1) - 0.5 - mean) / sd)
    edges[0], edges[-1] = 0.0, 1.0
    return np.diff(edges)


def inventory(discount=0.95, capacity=30, sale_price=3.99, holding_cost=0.03,
              purchase_cost=2.219, demand_from_state=False):
    """ Single-product inventory control.

    Parameters
    ----------
    discount: float
    capacity: int
        Number of inventory levels 0..capacity-1 and of order quantities.
    sale_price, holding_cost, purchase_cost: float
    demand_from_state: bool
        Demand is Normal(sale_price / 4, sale_price / 6) by default; when True
        it is Normal(level / 4, level / 6) instead.

    Returns
    -------
    (TabularMdp, TransitionModel)
        Orders are clipped so the stock never exceeds capacity - 1; the reward
        is sale_price * sales - holding_cost * next level - purchase_cost * order.
    """
    if capacity < 2:
        raise ConfigurationError(f"inventory capacity must be at least 2, got {capacity}")
    probs = np.zeros((capacity, capacity, capacity))
    rewards = np.zeros((capacity, capacity, capacity))
    levels = np.arange(capacity)
    fixed_demand = _binned_normal(sale_price / 4.0, sale_price / 6.0, capacity)
    for level in range(capacity):
        demand = (_binned_normal(level / 4.0, level / 6.0, capacity) if demand_from_state
                  else fixed_demand)
        for order in range(capacity):
            placed = min(order, capacity - 1 - level)
            stock = level + placed
            successors = np.maximum(stock - levels, 0)
            np.add.at(probs[level, order], successors, demand)
            sales = np.maximum(stock - levels, 0)
            rewards[level, order] = (sale_price * sales - holding_cost * levels
                                     - purchase_cost * placed)
    initial = np.zeros(capacity)
    initial[0] = 1.0
    return TabularMdp(rewards, discount, initial), TransitionModel(probs)


def _rounded_lognormal(mean, log_sd, size):
    location = math.log(mean) - log_sd ** 2 / 2.0
    edges = lognorm.cdf(np.arange(size + 1) - 0.5, s=log_sd, scale=math.exp(location))
    edges[0], edges[-1] = 0.0, 1.0
    return np.diff(edges)


def population_model(discount=0.95, size=50, actions=5, growth_rate=1.3, control_efficacy=0.6,
                     log_sd=0.4, extinction_floor=0.9, immigration_mean=2.0, damage_cost=10.0,
                     action_cost=15.0):
    """ Pest population under control measures.

    From a population s >= 1 under control intensity a the next population is a
    rounded lognormal with mean s * growth_rate * (1 - control_efficacy * a / (actions - 1)),
    saturating at ``size - 1``. An extinct population stays extinct with
    probability ``extinction_floor`` and is otherwise recolonised with mean
    ``immigration_mean``. Each step costs damage_cost per pest plus action_cost
    per unit of control.
    """
    if size < 2 or actions < 2:
        raise ConfigurationError("population model needs at least 2 states and 2 actions")
    if not 0 <= control_efficacy < 1 or not 0 <= extinction_floor <= 1:
        raise ConfigurationError("control_efficacy must lie in [0, 1), "
                                 "extinction_floor in [0, 1]")
    probs = np.zeros((size, actions, size))
    recolonised = _rounded_lognormal(immigration_mean, log_sd, size)
    probs[0, :] = (1.0 - extinction_floor) * recolonised
    probs[0, :, 0] += extinction_floor
    for s in range(1, size):
        for a in range(actions):
            mean = s * growth_rate * (1.0 - control_efficacy * a / (actions - 1))
            probs[s, a] = _rounded_lognormal(mean, log_sd, size)
    next_states = np.arange(size)[np.newaxis, np.newaxis, :]
    controls = np.arange(actions)[np.newaxis, :, np.newaxis]
    rewards = np.broadcast_to(-damage_cost * next_states - action_cost * controls,
                              (size, actions, size))
    initial = np.full(size, 1.0 / size)
    return TabularMdp(rewards, discount, initial), TransitionModel(probs)


GENERATORS = {
    "riverswim": riverswim,
    "inventory": inventory,
    "population": population_model,
    "population-small": population_model,
}


def _check_name(instance, attribute, value):
    if value not in DOMAIN_NAMES:
        raise ConfigurationError(f"unknown domain {value!r}; expected one of "
                                 f"{', '.join(DOMAIN_NAMES)}")


def _check_parameters(instance, attribute, value):
    if instance.name not in GENERATORS:
        return
    accepted = set(inspect.signature(GENERATORS[instance.name]).parameters) - {"discount"}
    unknown = set(value) - accepted
    if unknown:
        raise ConfigurationError(f"unknown {instance.name} parameters: {sorted(unknown)}")


@attrs.frozen
class DomainSpec:
    name: str = attrs.field(validator=_check_name)
    parameters: dict = attrs.field(factory=dict, converter=dict, validator=_check_parameters)
    discount: float = attrs.field(default=0.95, converter=float)
    seed: int = 0


def make_domain(spec):
    """ (TabularMdp, TransitionModel) for a :class:`DomainSpec`. """
    return GENERATORS[spec.name](discount=spec.discount, **spec.parameters)


def sample_dataset(mdp, true_model, n_tuples, seed, episode_length=50):
    """ Batch data from a uniformly random behaviour policy.

    Episodes start from the initial distribution and restart every
    ``episode_length`` steps; exactly ``n_tuples`` tuples are returned.
    """
    if n_tuples < 1:
        raise ValueError(f"number of tuples must be positive, got {n_tuples}")
    if episode_length < 1:
        raise ValueError(f"episode length must be positive, got {episode_length}")
    true_model.check_compatible(mdp)
    rng = np.random.default_rng(seed)
    actions = rng.integers(mdp.num_actions, size=n_tuples)
    draws = rng.random(n_tuples)
    starts = rng.choice(mdp.num_states, size=-(-n_tuples // episode_length), p=mdp.initial_dist)
    cumulative = np.cumsum(true_model.probs, axis=-1)

    states = np.empty(n_tuples, dtype=np.int64)
    next_states = np.empty(n_tuples, dtype=np.int64)
    state = 0
    for step in range(n_tuples):
        if step % episode_length == 0:
            state = starts[step // episode_length]
        row = cumulative[state, actions[step]]
        successor = min(int(np.searchsorted(row, draws[step], side="right")), mdp.num_states - 1)
        states[step], next_states[step] = state, successor
        state = successor
    rewards = mdp.rewards[states, actions, next_states]
    return BatchDataset(states, actions, rewards, next_states)


def single_decision_example(num_models, seed, concentration=(10.0, 10.0, 1.0),
                            outcome_rewards=(0.25, 0.25, -1.0), safe_reward=None,
                            discount=0.9):
    """ One decision followed by absorption.

    State 0 chooses action 0, which moves to one of the absorbing states 1..3
    with uncertain probabilities Dirichlet(``concentration``) and pays
    ``outcome_rewards``. With ``safe_reward`` set, action 1 moves to state 1
    for that reward with certainty. Absorbing states pay nothing.

    Returns
    -------
    (TabularMdp, ModelEnsemble)
    """
    num_actions = 1 if safe_reward is None else 2
    outcomes = len(concentration)
    num_states = outcomes + 1
    rewards = np.zeros((num_states, num_actions, num_states))
    rewards[0, 0, 1:] = outcome_rewards
    base = np.zeros((num_states, num_actions, num_states))
    for s in range(1, num_states):
        base[s, :, s] = 1.0
    if safe_reward is not None:
        rewards[0, 1, 1] = safe_reward
        base[0, 1, 1] = 1.0
    initial = np.zeros(num_states)
    initial[0] = 1.0
    mdp = TabularMdp(rewards, discount, initial)

    rng = np.random.default_rng(seed)
    probs = np.repeat(base[np.newaxis], num_models, axis=0)
    probs[:, 0, 0, 1:] = rng.dirichlet(concentration, size=num_models)
    return mdp, ModelEnsemble(probs, seed=seed)


def random_mdp(num_states, num_actions, seed, discount=0.9, reward_scale=1.0):
    """ Random rewards in [-reward_scale, reward_scale] and Dirichlet(1) rows. """
    rng = np.random.default_rng(seed)
    rewards = rng.uniform(-reward_scale, reward_scale,
                          size=(num_states, num_actions, num_states))
    probs = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    initial = rng.dirichlet(np.ones(num_states))
    return TabularMdp(rewards, discount, initial), TransitionModel(probs)
