""" Offline evaluation protocol.

Batch data is drawn from the true model, a Dirichlet posterior is fit, and
two independent ensembles are sampled: D1 for training and D2 for testing.
Every method is trained on L random subsets of D1 and scored by its robust
performance, the delta-percentile of exact expected returns across D2.
"""
import logging
import math
import subprocess
import time
from pathlib import Path

import attrs
import dask
import numpy as np
import pandas as pd
import yaml

from .domains import DomainSpec, make_domain, sample_dataset
from .exceptions import ConfigurationError
from .mdp import expected_return
from .posterior import counts_from_dataset, moments, sample_models
from .robust import (bcr_value_iteration, hoeffding_value_iteration, soft_robust_solve,
                     weighted_bcr_value_iteration, worst_model_solve)
from .var_solver import VarConfig, empirical_var, var_value_iteration

logger = logging.getLogger(__name__)

METHODS = ("var", "varn", "bcr-l1", "bcr-linf", "wbcr-l1", "wbcr-linf", "soft-robust",
           "naive-hoeffding", "opt-hoeffding", "worst-rmdp")
# methods whose value function is not a lower bound on the return
NO_BOUND_METHODS = ("soft-robust",)

# (train models M, test models K, train subsets L) per domain
DOMAIN_DEFAULTS = {
    "riverswim": (80, 700, 10),
    "inventory": (80, 200, 10),
    "population-small": (80, 100, 10),
    "population": (800, 1000, 9),
}

Z_95 = 1.96


def _default(position):
    return attrs.Factory(lambda self: DOMAIN_DEFAULTS[self.domain.name][position],
                         takes_self=True)


def _check_deltas(instance, attribute, value):
    if not value or not all(0 < delta < 0.5 for delta in value):
        raise ConfigurationError(f"deltas must be a nonempty list in (0, 0.5), got {list(value)}")


def _check_methods(instance, attribute, value):
    if not value:
        raise ConfigurationError("at least one method is required")
    unknown = [method for method in value if method not in METHODS]
    if unknown:
        raise ConfigurationError(f"unknown methods {unknown}; expected any of {', '.join(METHODS)}")


def _positive(instance, attribute, value):
    if value <= 0:
        raise ConfigurationError(f"{attribute.name} must be positive, got {value}")


def _check_fraction(instance, attribute, value):
    if not 0 < value <= 1:
        raise ConfigurationError(f"train_fraction must lie in (0, 1], got {value}")


@attrs.frozen
class ExperimentConfig:
    """ Everything that determines an experiment; equal configs give identical results.

    ``num_train_models``, ``num_test_models`` and ``num_runs`` (M, K and L)
    default per domain.
    """
    domain: DomainSpec
    deltas: tuple = attrs.field(default=(0.05, 0.15, 0.30), converter=tuple,
                                validator=_check_deltas)
    epsilon: float = attrs.field(default=0.01, converter=float, validator=_positive)
    num_train_models: int = attrs.field(default=_default(0), validator=_positive)
    num_test_models: int = attrs.field(default=_default(1), validator=_positive)
    num_runs: int = attrs.field(default=_default(2), validator=_positive)
    train_fraction: float = attrs.field(default=0.8, converter=float, validator=_check_fraction)
    methods: tuple = attrs.field(default=METHODS, converter=tuple, validator=_check_methods)
    seed: int = 0
    prior_pseudocount: float = attrs.field(default=1.0, converter=float, validator=_positive)
    num_tuples: int = attrs.field(default=3000, validator=_positive)
    episode_length: int = attrs.field(default=50, validator=_positive)
    outer_iterations: int = attrs.field(default=10, validator=_positive)
    record_walltime: bool = True

    def to_dict(self):
        document = attrs.asdict(self)
        document["deltas"] = list(self.deltas)
        document["methods"] = list(self.methods)
        return document


@attrs.frozen(eq=False)
class MethodResult:
    """ Outcome of one method at one delta over the L training subsets. """
    method: str
    delta: float
    alpha: float
    robust_returns: np.ndarray
    train_returns: np.ndarray
    bounds: np.ndarray
    bound_coverage: np.ndarray
    walltimes: np.ndarray

    @property
    def mean(self):
        return confidence_interval(self.robust_returns)[0]

    @property
    def ci_halfwidth(self):
        return confidence_interval(self.robust_returns)[1]


def confidence_interval(values):
    """ Normal-approximation 95% interval: (mean, 1.96 * sample std / sqrt(L)). """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("confidence interval of an empty sample")
    mean = float(values.mean())
    if values.size == 1:
        return mean, 0.0
    return mean, Z_95 * float(values.std(ddof=1)) / math.sqrt(values.size)


def model_returns(mdp, policy, ensemble):
    """ rho(pi, P) for every member of the ensemble. """
    return np.array([expected_return(mdp, model, policy) for model in ensemble.models])


def robust_performance(mdp, policy, test_models, delta):
    """ delta-percentile (empirical VaR) of the exact returns across the test models. """
    return empirical_var(model_returns(mdp, policy, test_models), delta)


def method_alpha(method, delta, num_states, num_actions):
    """ Per-row confidence a method is solved at, or None when it takes none. """
    if method in ("var", "varn"):
        return delta / num_states
    if method in ("bcr-l1", "bcr-linf", "wbcr-l1", "wbcr-linf"):
        return delta / (num_states * num_actions)
    return None


def solve_with_method(method, mdp, train_models, posterior, delta, epsilon, outer_iterations=10):
    """ Train one method.

    Parameters
    ----------
    method: str
        One of :data:`METHODS`.
    mdp: TabularMdp
    train_models: ModelEnsemble
    posterior: DirichletPosterior
        Needed by the Hoeffding methods, which work from data counts.
    delta: float
    epsilon: float
    outer_iterations: int
        Weight refits of the weighted methods.

    Returns
    -------
    Solution
    """
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}")
    alpha = method_alpha(method, delta, mdp.num_states, mdp.num_actions)
    if alpha is not None:
        split = "delta/S" if method in ("var", "varn") else "delta/(S*A)"
        logger.info("%s at delta=%g solves at alpha=%s=%.4g", method, delta, split, alpha)

    if method == "var":
        return var_value_iteration(mdp, train_models, VarConfig(alpha, epsilon, "empirical"))
    if method == "varn":
        return var_value_iteration(mdp, moments(train_models), VarConfig(alpha, epsilon, "gaussian"))
    if method in ("bcr-l1", "bcr-linf"):
        return bcr_value_iteration(mdp, train_models, alpha, method[4:], epsilon)[0]
    if method in ("wbcr-l1", "wbcr-linf"):
        return weighted_bcr_value_iteration(mdp, train_models, alpha, method[5:], epsilon,
                                            outer_iterations)[0]
    if method == "soft-robust":
        return soft_robust_solve(mdp, moments(train_models), epsilon)
    if method == "worst-rmdp":
        return worst_model_solve(mdp, train_models, epsilon)
    mode = "naive" if method == "naive-hoeffding" else "optimized"
    return hoeffding_value_iteration(mdp, posterior, delta, epsilon, mode, outer_iterations)[0]


def _run_task(mdp, posterior, train_models, test_models, method, delta, cfg):
    started = time.perf_counter()
    solution = solve_with_method(method, mdp, train_models, posterior, delta, cfg.epsilon,
                                 cfg.outer_iterations)
    walltime = time.perf_counter() - started
    test_returns = model_returns(mdp, solution.policy, test_models)
    bound = float(mdp.initial_dist @ solution.value)
    coverage = (math.nan if method in NO_BOUND_METHODS
                else float(np.mean(test_returns >= bound - 1e-10)))
    return {
        "robust_return": empirical_var(test_returns, delta),
        "train_return": robust_performance(mdp, solution.policy, train_models, delta),
        "bound": bound,
        "bound_coverage": coverage,
        "walltime": walltime,
    }


def _collect(rows, name):
    return np.array([row[name] for row in rows])


def derive_seeds(seed):
    """ Integer seeds for the dataset, D1, D2 and the training subsets. """
    return dict(zip(("dataset", "train_models", "test_models", "subsets"),
                    (int(value) for value in np.random.SeedSequence(seed).generate_state(4))))


def run_experiment(cfg, num_workers=None):
    """ Run every (delta, method, subset) task of an experiment.

    Tasks share the read-only data and ensembles and are scheduled on dask's
    threaded scheduler; results come back in submission order, so the
    outcome does not depend on ``num_workers``.

    Returns
    -------
    list of MethodResult
        Ordered by delta, then method, as listed in the configuration.
    """
    seeds = derive_seeds(cfg.seed)
    mdp, true_model = make_domain(cfg.domain)
    dataset = sample_dataset(mdp, true_model, cfg.num_tuples, seeds["dataset"], cfg.episode_length)
    posterior = counts_from_dataset(dataset, mdp.num_states, mdp.num_actions,
                                    cfg.prior_pseudocount)
    train_pool = sample_models(posterior, cfg.num_train_models, seeds["train_models"])
    test_models = sample_models(posterior, cfg.num_test_models, seeds["test_models"])
    subset_size = max(1, round(cfg.train_fraction * cfg.num_train_models))
    subsets = [train_pool.subset(subset_size, np.random.default_rng(stream))
               for stream in np.random.SeedSequence(seeds["subsets"]).spawn(cfg.num_runs)]
    logger.info("%s: %d tuples, %d train models (subsets of %d), %d test models, %d runs",
                cfg.domain.name, cfg.num_tuples, cfg.num_train_models, subset_size,
                cfg.num_test_models, cfg.num_runs)

    keys = [(delta, method, run) for delta in cfg.deltas for method in cfg.methods
            for run in range(cfg.num_runs)]
    tasks = [dask.delayed(_run_task)(mdp, posterior, subsets[run], test_models, method, delta, cfg)
             for delta, method, run in keys]
    outcomes = dask.compute(*tasks, scheduler="threads", num_workers=num_workers)

    grouped = {}
    for (delta, method, run), outcome in zip(keys, outcomes):
        grouped.setdefault((delta, method), []).append(outcome)
    results = []
    for (delta, method), rows in grouped.items():
        alpha = method_alpha(method, delta, mdp.num_states, mdp.num_actions)
        columns = [_collect(rows, name) for name in
                   ("robust_return", "train_return", "bound", "bound_coverage", "walltime")]
        results.append(MethodResult(method, delta, alpha, *columns))
        logger.info("%s delta=%g: robust return %.4g +/- %.3g", method, delta,
                    results[-1].mean, results[-1].ci_halfwidth)
    return results


def runs_frame(results):
    rows = []
    for result in results:
        for run, values in enumerate(zip(result.robust_returns, result.train_returns,
                                         result.bounds, result.bound_coverage)):
            rows.append((result.method, result.delta, run) + tuple(float(v) for v in values))
    return pd.DataFrame(rows, columns=["method", "delta", "run", "robust_return", "train_return",
                                       "bound", "bound_coverage"])


def summary_frame(results, record_walltime=True):
    rows = []
    for result in results:
        row = {"method": result.method, "delta": result.delta, "mean": result.mean,
               "ci_halfwidth": result.ci_halfwidth}
        if record_walltime:
            row["walltime_s"] = float(result.walltimes.sum())
        rows.append(row)
    return pd.DataFrame(rows)


def git_describe():
    try:
        completed = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                                   capture_output=True, text=True, check=True,
                                   cwd=Path(__file__).parent)
    except (OSError, subprocess.CalledProcessError):
        return "unknown"
    return completed.stdout.strip() or "unknown"


def write_results(results, cfg, output_dir, effective_config=None):
    """ Write runs.csv, summary.csv and manifest.yaml into ``output_dir``.

    The manifest records the effective configuration, the derived seeds and
    the source revision.
    """
    from . import __version__

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: output_dir / name for name in ("runs.csv", "summary.csv", "manifest.yaml")}
    runs_frame(results).to_csv(paths["runs.csv"], index=False)
    summary_frame(results, cfg.record_walltime).to_csv(paths["summary.csv"], index=False)
    manifest = {
        "varmdp_version": __version__,
        "git_describe": git_describe(),
        "seeds": derive_seeds(cfg.seed),
        "config": effective_config if effective_config is not None else cfg.to_dict(),
    }
    with open(paths["manifest.yaml"], "w") as stream:
        yaml.safe_dump(manifest, stream, sort_keys=False)
    logger.info("wrote results for %d method/delta pairs to %s", len(results), output_dir)
    return paths

