"""Experiment configuration: sectioned ``key = value`` text.

Sections and their keys::

    [experiment]  seed, output_dir, workers
    [robot]       RobotModel fields
    [physics]     PhysicsParams fields
    [gait]        GaitParams fields
    [policy]      task, mask (five comma-separated rows of twelve 0/1 digits)
    [trainer]     TrainConfig fields (iterations, step_size, noise, ...)
    [reward]      RewardWeights fields
    [eval]        EvalConfig fields

Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .gait import GaitParams
from .physics import PhysicsParams
from .policy import N_ACT, N_OBS
from .robot_model import RobotModel
from .rollout import RewardWeights
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    trials: int = 5
    episode_len: int = 15000
    terrain: str = "flat"
    velocity: float = 0.2
    push_time: float = 2.0
    log_every: int = 10

    def __post_init__(self):
        if self.trials < 1 or self.episode_len < 1 or self.log_every < 1:
            raise ValueError("trials, episode_len and log_every must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()

    @property
    def model(self) -> RobotModel:
        return self.train.model

    @property
    def physics(self) -> PhysicsParams:
        return self.train.physics

    @property
    def gait(self) -> GaitParams:
        return self.train.gait

    @property
    def weights(self) -> RewardWeights:
        return self.train.weights


def _parse(template, text: str, key: str):
    text = text.strip()
    try:
        if isinstance(template, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(template, int):
            return int(text)
        if isinstance(template, float):
            return float(text)
        if isinstance(template, str):
            return text
        if isinstance(template, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            if template and isinstance(template[0], tuple):
                return tuple(tuple(float(x) for x in s.replace("/", ":").split(":"))
                             for s in items)
            return tuple(float(x) for x in items)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    raise ConfigError(f"unsupported key {key}")


def _build(cls, section: dict, name: str, skip=()):
    defaults = cls()
    names = {f.name for f in fields(cls)} - set(skip)
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {', '.join(sorted(unknown))}")
    kwargs = {k: _parse(getattr(defaults, k), v, f"{name}.{k}") for k, v in section.items()}
    try:
        return replace(defaults, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def parse_mask(text: str):
    rows = [r.strip() for r in text.split(",") if r.strip()]
    if len(rows) != N_ACT or any(len(r) != N_OBS or set(r) - {"0", "1"} for r in rows):
        raise ConfigError("mask needs five rows of twelve 0/1 digits")
    return tuple(tuple(c == "1" for c in r) for r in rows)


SECTIONS = ("experiment", "robot", "physics", "gait", "policy", "trainer", "reward", "eval")
TRAINER_OWNED = ("task", "mask", "seed", "workers", "weights", "model", "physics", "gait")


def parse_config(text: str, env=None) -> ExperimentConfig:
    env = os.environ if env is None else env
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    sec = {s: dict(parser[s]) if parser.has_section(s) else {} for s in SECTIONS}

    exp = dict(sec["experiment"])
    bad = set(exp) - {"seed", "output_dir", "workers"}
    if bad:
        raise ConfigError(f"unknown keys in [experiment]: {', '.join(sorted(bad))}")
    seed = _parse(0, exp.get("seed", "0"), "experiment.seed")
    output_dir = exp.get("output_dir", ExperimentConfig.output_dir).strip()
    workers = _parse(0, exp.get("workers", str(os.cpu_count() or 1)), "experiment.workers")
    if env.get("GAITFORGE_WORKERS"):
        workers = _parse(0, env["GAITFORGE_WORKERS"], "GAITFORGE_WORKERS")
    if workers < 1 or seed < 0:
        raise ConfigError("workers must be >= 1 and seed >= 0")

    try:
        model = _build(RobotModel, sec["robot"], "robot")
        physics = _build(PhysicsParams, sec["physics"], "physics")
        gait = _build(GaitParams, sec["gait"], "gait")
        weights = _build(RewardWeights, sec["reward"], "reward")
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    pol = dict(sec["policy"])
    bad = set(pol) - {"task", "mask"}
    if bad:
        raise ConfigError(f"unknown keys in [policy]: {', '.join(sorted(bad))}")
    mask = parse_mask(pol["mask"]) if "mask" in pol else None
    task = pol.get("task", "slope").strip()
    trainer = _build(TrainConfig, sec["trainer"], "trainer", skip=TRAINER_OWNED)
    try:
        train = replace(trainer, task=task, mask=mask, seed=seed, workers=workers,
                        weights=weights, model=model, physics=physics, gait=gait)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ev = _build(EvalConfig, sec["eval"], "eval")
    return ExperimentConfig(seed, output_dir, workers, train, ev)


def load_config(path, env=None) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), env)


def parse_range(text: str) -> list:
    """``start:step:stop`` (inclusive) or a comma-separated list of numbers."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [float(x) for x in text.split(":")]
            if len(parts) != 3:
                raise ValueError(text)
            start, step, stop = parts
            if step <= 0 or stop < start:
                raise ValueError(text)
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + k * step, 12) for k in range(n)]
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad range {text!r}; use start:step:stop or a comma list") from None
    if not values:
        raise ConfigError("empty range")
    return values
