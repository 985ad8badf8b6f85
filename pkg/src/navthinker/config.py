"""JSON run configuration with strict key checking."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .collect import SimSetup
from .policy import PPOConfig, ShapingConfig
from .ppo_train import Ablation
from .sim import EnvConfig, SceneConfig
from .wm_train import WMTrainConfig
from .world_model import WMConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WMTrainSection:
    batch: int = 32
    lr: float = 3e-4
    grad_clip: float = 1.0
    eval_every: int = 1000
    checkpoint_every: int = 1000
    eval_episodes: int = 200
    min_transitions: int = 64


@dataclass(frozen=True)
class Schedule:
    wm_steps: int = 3000
    policy_steps: int = 100_000
    interleave_rounds: int = 0  # extra collect -> WM -> policy rounds with the learned policy


@dataclass(frozen=True)
class EvalSection:
    episodes: int = 100
    n_robots: int | None = None  # defaults to the run's n_robots
    every_updates: int = 0


@dataclass(frozen=True)
class Inputs:
    replay: str | None = None
    wm_checkpoint: str | None = None
    policy_checkpoint: str | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs"
    scene: SceneConfig = field(default_factory=SceneConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    n_robots: int = 1
    n_humans: int = 4
    collect_episodes: int = 2000
    collect_epsilon: float = 0.5
    world_model: WMConfig = field(default_factory=WMConfig)
    wm_train: WMTrainSection = field(default_factory=WMTrainSection)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    shaping: ShapingConfig = field(default_factory=ShapingConfig)
    ablation: Ablation = field(default_factory=Ablation)
    schedule: Schedule = field(default_factory=Schedule)
    eval: EvalSection = field(default_factory=EvalSection)
    n_seeds: int = 5
    inputs: Inputs = field(default_factory=Inputs)

    def __post_init__(self):
        if self.n_robots < 1 or self.n_humans < 0:
            raise ConfigError("n_robots must be >= 1 and n_humans >= 0")
        if self.collect_episodes < 0 or self.n_seeds < 1:
            raise ConfigError("collect_episodes must be >= 0 and n_seeds >= 1")
        if not 0.0 <= self.collect_epsilon <= 1.0:
            raise ConfigError("collect_epsilon must lie in [0, 1]")

    # -- derived objects

    def sim_setup(self, n_robots: int | None = None) -> SimSetup:
        return SimSetup(self.scene, n_robots or self.n_robots, self.n_humans, self.env)

    def eval_setup(self) -> SimSetup:
        return self.sim_setup(self.eval.n_robots or self.n_robots)

    def wm_train_config(self) -> WMTrainConfig:
        return WMTrainConfig(steps=self.schedule.wm_steps, **dataclasses.asdict(self.wm_train))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def replace(self, **kw) -> RunConfig:
        return dataclasses.replace(self, **kw)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"unknown config key: {where}")
        kwargs[key] = _coerce(hints[key], value, where)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path or '<root>'}: {e}") from e


def _coerce(tp, value, path: str):
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    args = typing.get_args(tp)
    if type(None) in args:
        if value is None:
            return None
        tp = next(a for a in args if a is not type(None))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    return value


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return from_dict(data)
