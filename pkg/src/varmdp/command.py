""" The ``varmdp`` command line.

Every subcommand reads the same configuration document (``--config``) and
writes its artifacts into the output directory. Exit status is 0 on
success, 1 on a runtime failure and 2 on a usage or configuration error.
"""
import logging
import sys
from argparse import ArgumentParser
from pathlib import Path

import numpy as np
import yaml

from .analysis import coverage_check, radius_table
from .config import apply_overrides, load_config
from .domains import make_domain, sample_dataset
from .exceptions import ConfigurationError, VarMdpError
from .experiment import (derive_seeds, model_returns, run_experiment, solve_with_method,
                         write_results)
from .mdp import load_mdp, save_mdp
from .posterior import (ModelEnsemble, counts_from_dataset, load_ensemble, read_dataset,
                        sample_models, save_ensemble, write_dataset)
from .var_solver import empirical_var

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"


def _prepare(paths):
    Path(paths.output_dir).mkdir(parents=True, exist_ok=True)


def _load_posterior(config, mdp):
    dataset = read_dataset(config.paths.resolve("dataset"))
    return counts_from_dataset(dataset, mdp.num_states, mdp.num_actions,
                               config.experiment.prior_pseudocount)


def generate_domain(config, arguments):
    mdp, true_model = make_domain(config.domain)
    _prepare(config.paths)
    save_mdp(mdp, config.paths.resolve("mdp"))
    save_ensemble(ModelEnsemble(true_model.probs[np.newaxis], seed=config.domain.seed),
                  config.paths.resolve("true_model"))
    logger.info("wrote %s with %d states and %d actions", config.domain.name,
                mdp.num_states, mdp.num_actions)


def sample_data(config, arguments):
    mdp = load_mdp(config.paths.resolve("mdp"))
    true_model = load_ensemble(config.paths.resolve("true_model")).model(0)
    seeds = derive_seeds(config.experiment.seed)
    dataset = sample_dataset(mdp, true_model, config.experiment.num_tuples, seeds["dataset"],
                             config.experiment.episode_length)
    write_dataset(dataset, config.paths.resolve("dataset"))


def fit_posterior(config, arguments):
    mdp = load_mdp(config.paths.resolve("mdp"))
    posterior = _load_posterior(config, mdp)
    seeds = derive_seeds(config.experiment.seed)
    train = sample_models(posterior, config.experiment.num_train_models, seeds["train_models"])
    test = sample_models(posterior, config.experiment.num_test_models, seeds["test_models"])
    save_ensemble(train, config.paths.resolve("ensemble"))
    save_ensemble(test, config.paths.resolve("test_ensemble"))


def solve(config, arguments):
    mdp = load_mdp(config.paths.resolve("mdp"))
    ensemble = load_ensemble(config.paths.resolve("ensemble"))
    posterior = None
    if config.solve.method.endswith("hoeffding"):
        posterior = _load_posterior(config, mdp)
    settings = config.solve
    solution = solve_with_method(settings.method, mdp, ensemble, posterior, settings.delta,
                                 settings.epsilon, settings.outer_iterations)
    document = {
        "method": solution.method or settings.method,
        "delta": settings.delta,
        "epsilon": settings.epsilon,
        "iterations": solution.iterations,
        "converged": solution.converged,
        "residual": solution.residual,
        "bound": float(mdp.initial_dist @ solution.value),
        "policy": solution.policy.tolist(),
        "value": solution.value.tolist(),
        "config": config.to_dict(),
    }
    path = config.paths.resolve("solution")
    with open(path, "w") as stream:
        yaml.safe_dump(document, stream, sort_keys=False, default_flow_style=None)
    logger.info("wrote %s solution to %s", settings.method, path)


def _read_solution(path):
    try:
        with open(path) as stream:
            stored = yaml.safe_load(stream)
        return (str(stored["method"]), np.asarray(stored["policy"], dtype=np.int64),
                np.asarray(stored["value"], dtype=float))
    except (yaml.YAMLError, KeyError, TypeError, ValueError) as error:
        raise VarMdpError(f"malformed solution file {path}: {error!r}") from error


def evaluate(config, arguments):
    mdp = load_mdp(config.paths.resolve("mdp"))
    test = load_ensemble(config.paths.resolve("test_ensemble"))
    method, policy, value = _read_solution(config.paths.resolve("solution"))
    returns = model_returns(mdp, policy, test)
    delta = config.evaluate.delta
    document = {
        "method": method,
        "delta": delta,
        "num_test_models": test.size,
        "robust_return": empirical_var(returns, delta),
        "mean_return": float(returns.mean()),
        "bound_coverage": coverage_check(mdp, policy, value, test, config.evaluate.statewise),
    }
    path = Path(config.paths.output_dir) / "evaluation.yaml"
    with open(path, "w") as stream:
        yaml.safe_dump(document, stream, sort_keys=False)
    logger.info("robust return %.6g at delta=%g over %d models",
                document["robust_return"], delta, test.size)


def run(config, arguments):
    results = run_experiment(config.experiment, num_workers=arguments.threads)
    write_results(results, config.experiment, config.paths.output_dir, config.to_dict())


def radius_analysis(config, arguments):
    settings = config.radius
    table = radius_table(range(settings.min_states, settings.max_states + 1), settings.alpha)
    _prepare(config.paths)
    path = Path(config.paths.output_dir) / "radius.csv"
    table.to_csv(path, index=False)
    logger.info("wrote %d radius ratios to %s", len(table), path)


COMMANDS = {
    "generate-domain": generate_domain,
    "sample-data": sample_data,
    "fit-posterior": fit_posterior,
    "solve": solve,
    "evaluate": evaluate,
    "run-experiment": run,
    "radius-analysis": radius_analysis,
}


def build_parser():
    parser = ArgumentParser(description="Percentile-criterion solvers for offline tabular RL")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", "-c", help="YAML configuration document")
    parser.add_argument("--output-dir", "-o",
                        help="directory for all artifacts (overrides VARMDP_OUTPUT_DIR)")
    parser.add_argument("--domain", help="benchmark domain name")
    parser.add_argument("--seed", type=int, help="root seed")
    parser.add_argument("--method", help="solver used by 'solve'")
    parser.add_argument("--delta", type=float, help="confidence for 'solve' and 'evaluate'")
    parser.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true")
    verbosity.add_argument("--quiet", "-q", action="store_true")
    return parser


def main(argv=None):
    """ Run one subcommand and return its exit status. """
    arguments = build_parser().parse_args(argv)
    level = logging.DEBUG if arguments.verbose else (
        logging.WARNING if arguments.quiet else logging.INFO)
    logging.basicConfig(format=LOG_FORMAT, level=level)

    try:
        config = apply_overrides(load_config(arguments.config), output_dir=arguments.output_dir,
                                 seed=arguments.seed, method=arguments.method,
                                 delta=arguments.delta, domain=arguments.domain)
        COMMANDS[arguments.command](config, arguments)
    except ConfigurationError as error:
        logger.error("configuration error: %s", error)
        return 2
    except (VarMdpError, OSError, ValueError) as error:
        logger.error("%s failed: %s", arguments.command, error)
        return 1
    return 0


def process():
    sys.exit(main())


if __name__ == "__main__":
    process()
