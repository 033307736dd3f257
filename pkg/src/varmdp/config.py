""" YAML configuration documents for the command line.

A document has up to six sections; every one is optional::

    domain:      {name: riverswim, discount: 0.95, parameters: {}, seed: 0}
    experiment:  {deltas: [0.05, 0.15, 0.3], epsilon: 0.01, seed: 0, ...}
    solve:       {method: var, delta: 0.05, epsilon: 0.01, outer_iterations: 10}
    evaluate:    {delta: 0.05, statewise: true}
    radius:      {min_states: 3, max_states: 100, alpha: 0.05}
    paths:       {output_dir: results, mdp: mdp.yaml, ...}

Relative artifact paths are resolved inside ``output_dir``.
"""
import logging
import os
from pathlib import Path

import attrs
import yaml

from .domains import DomainSpec
from .exceptions import ConfigurationError
from .experiment import METHODS, ExperimentConfig

logger = logging.getLogger(__name__)

OUTPUT_DIR_VARIABLE = "VARMDP_OUTPUT_DIR"


def _check_delta(instance, attribute, value):
    if not 0 < value < 0.5:
        raise ConfigurationError(f"{attribute.name} must lie in (0, 0.5), got {value}")


def _check_positive(instance, attribute, value):
    if value <= 0:
        raise ConfigurationError(f"{attribute.name} must be positive, got {value}")


def _check_method(instance, attribute, value):
    if value not in METHODS:
        raise ConfigurationError(f"unknown method {value!r}; expected one of {', '.join(METHODS)}")


@attrs.frozen
class SolveConfig:
    method: str = attrs.field(default="var", validator=_check_method)
    delta: float = attrs.field(default=0.05, converter=float, validator=_check_delta)
    epsilon: float = attrs.field(default=0.01, converter=float, validator=_check_positive)
    outer_iterations: int = attrs.field(default=10, validator=_check_positive)


@attrs.frozen
class EvaluateConfig:
    delta: float = attrs.field(default=0.05, converter=float, validator=_check_delta)
    statewise: bool = True


@attrs.frozen
class RadiusConfig:
    min_states: int = attrs.field(default=3)
    max_states: int = attrs.field(default=100)
    alpha: float = attrs.field(default=0.05, converter=float, validator=_check_delta)

    def __attrs_post_init__(self):
        if not 2 <= self.min_states <= self.max_states:
            raise ConfigurationError("radius analysis needs 2 <= min_states <= max_states")


@attrs.frozen
class PathsConfig:
    output_dir: str = "results"
    mdp: str = "mdp.yaml"
    true_model: str = "true_model.h5"
    dataset: str = "dataset.csv"
    ensemble: str = "train_models.h5"
    test_ensemble: str = "test_models.h5"
    solution: str = "solution.yaml"

    def resolve(self, name):
        """ Absolute location of artifact ``name`` inside the output directory. """
        return Path(self.output_dir) / getattr(self, name)


@attrs.frozen
class CliConfig:
    experiment: ExperimentConfig
    solve: SolveConfig = attrs.Factory(SolveConfig)
    evaluate: EvaluateConfig = attrs.Factory(EvaluateConfig)
    radius: RadiusConfig = attrs.Factory(RadiusConfig)
    paths: PathsConfig = attrs.Factory(PathsConfig)

    @property
    def domain(self):
        return self.experiment.domain

    def to_dict(self):
        document = attrs.asdict(self)
        document["experiment"] = self.experiment.to_dict()
        return document


SECTIONS = {
    "domain": DomainSpec,
    "experiment": ExperimentConfig,
    "solve": SolveConfig,
    "evaluate": EvaluateConfig,
    "radius": RadiusConfig,
    "paths": PathsConfig,
}


def _key_lines(node):
    """ 1-based source line of every section and of every key within a section. """
    lines = {}
    if not isinstance(node, yaml.MappingNode):
        return lines
    for key_node, value_node in node.value:
        lines[(key_node.value,)] = key_node.start_mark.line + 1
        if isinstance(value_node, yaml.MappingNode):
            for inner_key, _ in value_node.value:
                lines[(key_node.value, inner_key.value)] = inner_key.start_mark.line + 1
    return lines


def _build(cls, values, line, source, **extra):
    try:
        return cls(**extra, **values)
    except ConfigurationError as error:
        raise ConfigurationError(error.message, line=line, source=source) from error
    except (TypeError, ValueError) as error:
        raise ConfigurationError(str(error), line=line, source=source) from error


def parse_config(text, source=None):
    """ Validate a configuration document and build a :class:`CliConfig`.

    Raises
    ------
    ConfigurationError
        With the source line of the offending section or key.
    """
    try:
        node = yaml.compose(text)
        document = yaml.safe_load(text)
    except yaml.YAMLError as error:
        mark = getattr(error, "problem_mark", None)
        raise ConfigurationError(f"invalid YAML: {getattr(error, 'problem', error)}",
                                 line=None if mark is None else mark.line + 1, source=source)
    document = {} if document is None else document
    if not isinstance(document, dict):
        raise ConfigurationError("a configuration document must be a mapping", line=1,
                                 source=source)
    lines = _key_lines(node)

    for section, values in document.items():
        if section not in SECTIONS:
            raise ConfigurationError(f"unknown section {section!r}", line=lines.get((section,)),
                                     source=source)
        if values is None:
            document[section] = {}
            continue
        if not isinstance(values, dict):
            raise ConfigurationError(f"section {section!r} must be a mapping",
                                     line=lines.get((section,)), source=source)
        accepted = {field.name for field in attrs.fields(SECTIONS[section])}
        accepted.discard("domain")
        for key in values:
            if key not in accepted:
                raise ConfigurationError(f"unknown key {key!r} in section {section!r}",
                                         line=lines.get((section, key)), source=source)

    def section(name):
        return document.get(name) or {}, lines.get((name,)), source

    domain = _build(DomainSpec, *section("domain")) if "domain" in document \
        else DomainSpec("riverswim")
    return CliConfig(
        experiment=_build(ExperimentConfig, *section("experiment"), domain=domain),
        solve=_build(SolveConfig, *section("solve")),
        evaluate=_build(EvaluateConfig, *section("evaluate")),
        radius=_build(RadiusConfig, *section("radius")),
        paths=_build(PathsConfig, *section("paths")),
    )


def load_config(path=None):
    """ Read a configuration file; without one every default applies. """
    if path is None:
        return parse_config("")
    with open(path) as stream:
        return parse_config(stream.read(), source=str(path))


def apply_overrides(config, output_dir=None, seed=None, method=None, delta=None, domain=None):
    """ Command-line options take precedence over the environment, which takes
    precedence over the file. """
    try:
        experiment = config.experiment
        if domain is not None and domain != experiment.domain.name:
            experiment = attrs.evolve(experiment, domain=DomainSpec(domain))
        if seed is not None:
            experiment = attrs.evolve(experiment, seed=seed)
        solve = config.solve
        if method is not None:
            solve = attrs.evolve(solve, method=method)
        if delta is not None:
            solve = attrs.evolve(solve, delta=delta)
        evaluate = config.evaluate if delta is None else attrs.evolve(config.evaluate, delta=delta)
    except (TypeError, ValueError) as error:
        if isinstance(error, ConfigurationError):
            raise
        raise ConfigurationError(str(error)) from error

    paths = config.paths
    environment_dir = os.environ.get(OUTPUT_DIR_VARIABLE)
    if output_dir is not None:
        paths = attrs.evolve(paths, output_dir=str(output_dir))
    elif environment_dir:
        logger.info("output directory %s taken from %s", environment_dir, OUTPUT_DIR_VARIABLE)
        paths = attrs.evolve(paths, output_dir=environment_dir)
    return attrs.evolve(config, experiment=experiment, solve=solve, evaluate=evaluate, paths=paths)
