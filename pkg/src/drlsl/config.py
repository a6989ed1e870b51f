"""Run configuration: one dataclass tree, loadable from YAML with dotted overrides."""

from __future__ import annotations

import dataclasses
import enum
import os
import typing
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

from .agent import Hyperparams
from .env import EnvConfig
from .traffic import SynthSpec

OUTPUT_ENV_VAR = "DRLSL_OUTPUT_DIR"

MODES = ("train", "test", "shield-audit")
AGENTS = ("dqn", "dqnsl")
DIRECTIONS = ("left_to_right", "right_to_left")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str = "train"
    agent: str = "dqnsl"
    episodes: int = 300
    seeds: Tuple[int, ...] = (0,)
    # recorded track (delimited text); synthetic traffic from ``synth`` when None
    track_file: Optional[str] = None
    direction: str = "left_to_right"
    # None: on for dqnsl training, off otherwise
    shield: Optional[bool] = None
    env: EnvConfig = field(default_factory=EnvConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    hyper: Hyperparams = field(default_factory=lambda: Hyperparams(episodes=300))
    # frames between lane-keeping decisions; lane changes hold until complete
    decision_interval: int = 10
    # gradient updates per stored transition
    updates_per_decision: int = 1
    # with the shield on, also store a penalised terminal transition for each blocked action
    learn_blocked: bool = True
    spawn_retries: int = 20
    # frames the spawn is delayed after a blocked attempt
    spawn_retry_frames: int = 25
    # test-time traffic density multiplier range
    test_density: Tuple[float, float] = (0.5, 1.5)
    checkpoint: Optional[str] = None
    checkpoint_every: int = 0
    output_dir: Optional[str] = None
    workers: int = 4

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.test_density = tuple(float(d) for d in self.test_density)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.agent not in AGENTS:
            raise ConfigError(f"agent must be one of {AGENTS}")
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"direction must be one of {DIRECTIONS}")
        if self.episodes <= 0 or not self.seeds:
            raise ConfigError("need at least one episode and one seed")
        if self.decision_interval <= 0 or self.updates_per_decision < 0:
            raise ConfigError("decision_interval must be positive")
        if self.mode == "train" and self.agent == "dqnsl" and self.shield is False:
            raise ConfigError("dqnsl trains with the shield on")
        if self.mode == "test" and not self.checkpoint:
            raise ConfigError("test mode needs a checkpoint")
        lo, hi = self.test_density
        if not 0 < lo <= hi:
            raise ConfigError("test_density must be an increasing positive pair")

    @property
    def shield_on(self) -> bool:
        if self.shield is not None:
            return self.shield
        return self.mode == "train" and self.agent == "dqnsl"

    def resolved_output_dir(self) -> str:
        return self.output_dir or os.environ.get(OUTPUT_ENV_VAR) or "runs"


# ---------------------------------------------------------------------------
# dict conversion


def _plain(value: Any) -> Any:
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, dict):
        return {(k.value if isinstance(k, enum.Enum) else k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def to_dict(cfg: RunConfig) -> Dict[str, Any]:
    return _plain(cfg)


def _build(cls, data: Mapping[str, Any], path: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config keys at '{path or '<root>'}': {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint) and isinstance(value, Mapping):
            value = _build(hint, value, f"{path}{name}.")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value under '{path or '<root>'}': {exc}") from exc


def from_dict(data: Mapping[str, Any]) -> RunConfig:
    return _build(RunConfig, data)


def merge(base: Dict[str, Any], patch: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursive dict update; ``patch`` wins."""
    out = dict(base)
    for k, v in patch.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def dotted(key: str, value: Any) -> Dict[str, Any]:
    """``a.b.c`` and a value to ``{"a": {"b": {"c": value}}}``."""
    parts = key.split(".")
    out: Dict[str, Any] = {parts[-1]: value}
    for p in reversed(parts[:-1]):
        out = {p: out}
    return out


def parse_assignment(text: str) -> Dict[str, Any]:
    if "=" not in text:
        raise ConfigError(f"expected key=value, got '{text}'")
    key, raw = text.split("=", 1)
    return dotted(key.strip(), yaml.safe_load(raw))


def load_file(path: str) -> Dict[str, Any]:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True)
