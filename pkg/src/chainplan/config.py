"""Experiment configuration: key = value sections parsed from an INI file."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .schedule import ConfigError, NoiseSchedule, build_linear_schedule


@dataclass
class TaskConfig:
    kind: str = "arcs"
    radius: float = 1.0
    N: int = 3
    F: int = 3
    count: int = 4000
    seed: int = 0


@dataclass
class ModelConfig:
    hidden: tuple = (256, 256, 256)
    time_dim: int = 16
    nonlinearity: str = "silu"


@dataclass
class ScheduleConfig:
    T: int = 500
    beta_start: float = 1e-4
    beta_end: float = 0.02
    eta_ddim: float = 1.0

    def build(self) -> NoiseSchedule:
        return build_linear_schedule(self.T, self.beta_start, self.beta_end, self.eta_ddim)


@dataclass
class TrainConfig:
    steps: int = 20000
    batch: int = 128
    lr: float = 1e-4
    ema_decay: float = 0.999
    seed: int = 0


@dataclass
class SamplerConfig:
    kind: str = "guided"
    n: int = 3
    steps: int = 300
    g_r: float = 0.6
    gamma: float = 0.6
    w_sync: float = 1.0
    w_async: float = 1.0
    seeds: tuple = (0, 1, 2, 3, 4)


@dataclass
class ComposeConfig:
    start: np.ndarray | None = None
    goal: np.ndarray | None = None
    pair: tuple | None = None  # (start_index, goal_index) for segment tasks


@dataclass
class ExperimentConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    compose: ComposeConfig = field(default_factory=ComposeConfig)
    output_dir: Path = Path("runs/default")

    def validate(self):
        if self.task.kind not in ("arcs", "segments"):
            raise ConfigError(f"unknown task kind {self.task.kind!r}")
        if self.sampler.kind not in ("guided", "diffcollage", "independent"):
            raise ConfigError(f"unknown sampler kind {self.sampler.kind!r}")
        if not self.sampler.seeds:
            raise ConfigError("sampler seeds must be non-empty")
        if self.task.kind == "segments" and self.task.N < 2:
            raise ConfigError("segments task needs N >= 2")
        return self


def _ints(s):
    return tuple(int(v) for v in s.split(","))


def _floats(s):
    return np.array([float(v) for v in s.split(",")])


_PARSERS = {
    ("task", "kind"): str, ("task", "radius"): float, ("task", "n"): int,
    ("task", "f"): int, ("task", "count"): int, ("task", "seed"): int,
    ("model", "hidden"): _ints, ("model", "time_dim"): int,
    ("model", "nonlinearity"): str,
    ("schedule", "t"): int, ("schedule", "beta_start"): float,
    ("schedule", "beta_end"): float, ("schedule", "eta_ddim"): float,
    ("train", "steps"): int, ("train", "batch"): int, ("train", "lr"): float,
    ("train", "ema_decay"): float, ("train", "seed"): int,
    ("sampler", "kind"): str, ("sampler", "n"): int, ("sampler", "steps"): int,
    ("sampler", "g_r"): float, ("sampler", "gamma"): float,
    ("sampler", "w_sync"): float, ("sampler", "w_async"): float,
    ("sampler", "seeds"): _ints,
    ("compose", "start"): _floats, ("compose", "goal"): _floats,
    ("compose", "pair"): _ints,
    ("output", "dir"): Path,
}

_FIELD_NAMES = {("task", "n"): "N", ("task", "f"): "F", ("schedule", "t"): "T"}


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment config file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    cfg = ExperimentConfig()
    sections = {"task": cfg.task, "model": cfg.model, "schedule": cfg.schedule,
                "train": cfg.train, "sampler": cfg.sampler, "compose": cfg.compose}
    for section in parser.sections():
        if section == "output":
            if parser.has_option("output", "dir"):
                cfg.output_dir = Path(parser.get("output", "dir"))
            continue
        if section not in sections:
            raise ConfigError(f"unknown config section [{section}]")
        target = sections[section]
        for key, raw in parser.items(section):
            parse = _PARSERS.get((section, key))
            if parse is None:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            name = _FIELD_NAMES.get((section, key), key)
            try:
                setattr(target, name, parse(raw))
            except ValueError as e:
                raise ConfigError(f"[{section}] {key} = {raw!r}: {e}") from e
    return cfg.validate()
