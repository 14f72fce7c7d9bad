"""Experiment configuration: an INI file with one section per module.

Every key is optional; unknown sections or keys are rejected so typos do not
silently fall back to defaults.  ``ExperimentConfig.echo()`` returns every
resolved value, which the CLI persists next to its outputs.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import ConfigurationError
from .learner import LearnerConfig
from .mdp import Mdp, TabularPolicy, pendulum_mdp, random_mdp
from .penalty import PenaltyConfig


@dataclass(frozen=True)
class EnvironmentSpec:
    kind: str = "random"
    n_states: int = 8
    n_actions: int = 4
    seed: int = 7
    discount: float = 0.9
    n_angle_bins: int = 21
    n_velocity_bins: int = 21
    n_action_bins: int = 17

    def build(self) -> Mdp:
        if self.kind == "random":
            return random_mdp(self.n_states, self.n_actions, self.seed, discount=self.discount)
        if self.kind == "pendulum":
            return pendulum_mdp(self.n_angle_bins, self.n_velocity_bins, self.n_action_bins,
                                discount=self.discount)
        raise ConfigurationError(f"unknown environment kind {self.kind!r}")


@dataclass(frozen=True)
class BehaviorSpec:
    """``uniform``; ``narrow`` (uniform over the ``width`` middle actions); ``random`` (Dirichlet rows)."""

    kind: str = "uniform"
    width: int = 3
    concentration: float = 1.0
    seed: int = 0

    def build(self, n_states, n_actions) -> TabularPolicy:
        if self.kind == "uniform":
            return TabularPolicy.uniform(n_states, n_actions)
        if self.kind == "narrow":
            if not 1 <= self.width <= n_actions:
                raise ConfigurationError("behavior width must lie in [1, n_actions]")
            lo = (n_actions - self.width) // 2
            probs = np.zeros((n_states, n_actions))
            probs[:, lo:lo + self.width] = 1.0 / self.width
            return TabularPolicy(probs)
        if self.kind == "random":
            rng = np.random.default_rng(self.seed)
            return TabularPolicy(rng.dirichlet(np.full(n_actions, self.concentration), n_states))
        raise ConfigurationError(f"unknown behavior kind {self.kind!r}")


@dataclass(frozen=True)
class DatasetSpec:
    n_episodes: int = 50
    horizon: int = 100
    seed: int = 0


@dataclass(frozen=True)
class TrainingSpec:
    """How the CLI drives the learner: which policy to evaluate and which model exact sweeps use."""

    policy: str = "improve"       # improve | behavior | uniform
    model: str = "empirical"      # empirical | true


@dataclass(frozen=True)
class AnalysisSpec:
    n_rollouts: int = 0
    xi: float = 0.0
    mc_seed: int = 0


@dataclass(frozen=True)
class SweepSpec:
    alpha: tuple = (20.0,)
    tau_ratio: tuple = (0.2, 0.5, 1.0, 2.0, 5.0, 10.0)
    c_min: tuple = (0.2,)
    epsilon_radius: tuple = (2.0,)
    zeta: tuple = (2.0,)

    def cells(self):
        for a in self.alpha:
            for t in self.tau_ratio:
                for c in self.c_min:
                    for e in self.epsilon_radius:
                        for z in self.zeta:
                            yield dict(alpha=a, tau_ratio=t, c_min=c, epsilon_radius=e, zeta=z)


@dataclass(frozen=True)
class ScenarioSpec:
    cases: tuple = ("case_a", "case_b", "case_c")
    methods: tuple = ("cql", "epq")
    alpha: tuple = (1.0, 5.0, 10.0)
    tau_ratio: float = 2.0
    n_angle_bins: int = 11
    n_velocity_bins: int = 11
    n_action_bins: int = 41
    n_behavior_samples: int = 10000
    discount: float = 0.99
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    environment: EnvironmentSpec = field(default_factory=EnvironmentSpec)
    behavior: BehaviorSpec = field(default_factory=BehaviorSpec)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    training: TrainingSpec = field(default_factory=TrainingSpec)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    seed: int = 0

    def echo(self) -> dict:
        return asdict(self)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Apply a global seed to every stochastic stage that is not part of the instance definition."""
        return replace(self, seed=seed, dataset=replace(self.dataset, seed=seed),
                       learner=replace(self.learner, seed=seed),
                       scenario=replace(self.scenario, seed=seed),
                       analysis=replace(self.analysis, mc_seed=seed))


SECTIONS = {
    "environment": EnvironmentSpec,
    "behavior": BehaviorSpec,
    "dataset": DatasetSpec,
    "learner": LearnerConfig,
    "penalty": PenaltyConfig,
    "training": TrainingSpec,
    "analysis": AnalysisSpec,
    "sweep": SweepSpec,
    "scenario": ScenarioSpec,
}


def _coerce(raw: str, default, key):
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            if default is None and text.lower() in ("", "none"):
                return None
            return float(text)
        if isinstance(default, tuple):
            items = [x.strip() for x in text.split(",") if x.strip()]
            if not items:
                raise ValueError("empty list")
            kind = type(default[0]) if default else str
            return tuple(kind(x) for x in items)
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc
    return text


def _section(cls, items: dict, name: str):
    defaults = cls()
    known = {f.name for f in fields(cls)} - {"penalty"}
    values = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigurationError(f"unknown key [{name}] {key}")
        values[key] = _coerce(raw, getattr(defaults, key), f"[{name}] {key}")
    return values


def parse_config(text: str) -> ExperimentConfig:
    """Parse INI text; a missing file section means "all defaults"."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse config: {exc}") from exc
    unknown = set(parser.sections()) - set(SECTIONS) - {"experiment"}
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    parts = {}
    for name, cls in SECTIONS.items():
        items = dict(parser.items(name)) if parser.has_section(name) else {}
        parts[name] = _section(cls, items, name)
    seed = 0
    if parser.has_section("experiment"):
        extra = set(parser["experiment"]) - {"seed"}
        if extra:
            raise ConfigurationError(f"unknown key [experiment] {sorted(extra)[0]}")
        seed = _coerce(parser["experiment"].get("seed", "0"), 0, "[experiment] seed")
    penalty = PenaltyConfig(**parts.pop("penalty"))
    learner = LearnerConfig(penalty=penalty, **parts.pop("learner"))
    cfg = ExperimentConfig(
        environment=EnvironmentSpec(**parts["environment"]),
        behavior=BehaviorSpec(**parts["behavior"]),
        dataset=DatasetSpec(**parts["dataset"]),
        learner=learner,
        training=TrainingSpec(**parts["training"]),
        analysis=AnalysisSpec(**parts["analysis"]),
        sweep=SweepSpec(**parts["sweep"]),
        scenario=ScenarioSpec(**parts["scenario"]),
        seed=seed,
    )
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc


def validate(cfg: ExperimentConfig) -> None:
    """Check choices and that every sweep cell is itself a valid penalty config."""
    if cfg.environment.kind not in ("random", "pendulum"):
        raise ConfigurationError(f"unknown environment kind {cfg.environment.kind!r}")
    if cfg.behavior.kind not in ("uniform", "narrow", "random"):
        raise ConfigurationError(f"unknown behavior kind {cfg.behavior.kind!r}")
    if cfg.training.policy not in ("improve", "behavior", "uniform"):
        raise ConfigurationError(f"unknown training policy {cfg.training.policy!r}")
    if cfg.training.model not in ("empirical", "true"):
        raise ConfigurationError(f"unknown training model {cfg.training.model!r}")
    if cfg.dataset.n_episodes < 1 or cfg.dataset.horizon < 1:
        raise ConfigurationError("dataset n_episodes and horizon must be >= 1")
    for cell in cfg.sweep.cells():
        replace(cfg.learner.penalty, **cell)
    for alpha in cfg.scenario.alpha:
        if alpha < 0:
            raise ConfigurationError("scenario alpha must be >= 0")
    from .analysis import SCENARIOS
    for case in cfg.scenario.cases:
        if case not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario case {case!r}")
    for method in cfg.scenario.methods:
        if method not in ("cql", "epq"):
            raise ConfigurationError(f"unknown scenario method {method!r}")
