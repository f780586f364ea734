"""Scenario and learner parameters, plus the YAML config loader."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import yaml

from .channel import ChannelParams, Position3


class ConfigError(ValueError):
    """Invalid configuration. ``field`` names the offending key when known."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class ConfigFileNotFound(ConfigError):
    pass


class ConfigParseError(ConfigError):
    pass


class ConfigValidationError(ConfigError):
    pass


def _fail(fld: str, msg: str):
    raise ConfigValidationError(f"{fld}: {msg}", field=fld)


@dataclass(frozen=True)
class WorldConfig:
    ue_pos: Position3 = Position3(50.0, 50.0, 0.0)
    eve_pos: Position3 = Position3(70.0, 30.0, 0.0)
    altitude: float = 10.0
    uav_start: Tuple[float, float] = (0.0, 0.0)
    bounds: Tuple[float, float] = (100.0, 100.0)
    grid_step: float = 1.0
    p_max: float = 1.0
    p1: Optional[float] = None  # None -> p_max / 10
    initial_power: Optional[float] = None  # None -> p_max / 2
    zeta0_over_sigma2: float = 1e4
    T: int = 100
    random_start: bool = False
    observe_power: bool = False
    # network input scaling: "altitude" divides all offsets by the altitude, "bounds" by (L_x, L_y, altitude),
    # a number by that many metres
    obs_scale: Union[str, float] = "altitude"

    def __post_init__(self):
        # Resolve the power defaults so the frozen instance is self-contained.
        if self.p1 is None:
            object.__setattr__(self, "p1", self.p_max / 10)
        if self.initial_power is None:
            object.__setattr__(self, "initial_power", self.p_max / 2)
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        object.__setattr__(self, "uav_start", tuple(float(v) for v in self.uav_start))
        self.validate()

    def validate(self) -> None:
        lx, ly = self.bounds
        if not (math.isfinite(lx) and math.isfinite(ly)) or lx < 0 or ly < 0:
            _fail("bounds", f"must be finite and >= 0, got {self.bounds}")
        if not self.altitude > 0:
            _fail("altitude", f"must be > 0, got {self.altitude}")
        if not self.grid_step > 0:
            _fail("grid_step", f"must be > 0, got {self.grid_step}")
        if not self.p_max > 0:
            _fail("p_max", f"must be > 0, got {self.p_max}")
        if not self.p1 > 0:
            _fail("p1", f"must be > 0, got {self.p1}")
        if self.p1 > self.p_max:
            _fail("p1", f"must be <= p_max ({self.p_max}), got {self.p1}")
        if not 0 <= self.initial_power <= self.p_max:
            _fail("initial_power", f"must lie in [0, p_max], got {self.initial_power}")
        if not self.zeta0_over_sigma2 > 0:
            _fail("zeta0_over_sigma2", f"must be > 0, got {self.zeta0_over_sigma2}")
        if int(self.T) != self.T or self.T < 1:
            _fail("T", f"must be a positive integer, got {self.T}")
        if not (0 <= self.ue_pos.x <= lx and 0 <= self.ue_pos.y <= ly):
            _fail("ue_pos", f"{self.ue_pos.as_tuple()} lies outside bounds {self.bounds}")
        if isinstance(self.obs_scale, str):
            if self.obs_scale not in ("altitude", "bounds"):
                _fail("obs_scale", f"must be 'altitude', 'bounds' or a length > 0, got {self.obs_scale!r}")
        elif not self.obs_scale > 0:
            _fail("obs_scale", f"must be 'altitude', 'bounds' or a length > 0, got {self.obs_scale}")
        if len(self.uav_start) != 2:
            _fail("uav_start", "must be an (x, y) pair")
        sx, sy = self.uav_start
        if not (0 <= sx <= lx and 0 <= sy <= ly):
            _fail("uav_start", f"{self.uav_start} lies outside bounds {self.bounds}")

    @property
    def channel(self) -> ChannelParams:
        return ChannelParams(self.zeta0_over_sigma2, self.p_max, self.bounds)

    @property
    def start_pos(self) -> Position3:
        return Position3(self.uav_start[0], self.uav_start[1], self.altitude)

    @property
    def optimal_reward(self) -> float:
        """Best achievable SNR: peak power with the UAV straight above the UE."""
        return self.zeta0_over_sigma2 * self.p_max / (self.altitude - self.ue_pos.z) ** 2

    def replace(self, **changes) -> "WorldConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class QLearnParams:
    alpha: float = 0.1
    gamma: float = 0.9
    eps_initial: float = 1.0
    eps_final: float = 0.05
    eps_decay: float = 0.995
    episodes: int = 1000
    alpha_decay: bool = False  # alpha_n = max(alpha / n_visits(s, a)**0.6, alpha_min)
    alpha_min: float = 0.0
    random_init: bool = False

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            _fail("tabular.alpha", f"must lie in (0, 1], got {self.alpha}")
        if not 0 < self.gamma < 1:
            _fail("tabular.gamma", f"must lie in (0, 1), got {self.gamma}")
        if not 1 >= self.eps_initial >= self.eps_final >= 0:
            _fail("tabular.eps_initial", "need 1 >= eps_initial >= eps_final >= 0")
        if not 0 < self.eps_decay <= 1:
            _fail("tabular.eps_decay", f"must lie in (0, 1], got {self.eps_decay}")
        if self.episodes < 1:
            _fail("tabular.episodes", f"must be >= 1, got {self.episodes}")


@dataclass(frozen=True)
class DqnParams:
    gamma: float = 0.95
    eps_initial: float = 1.0
    eps_min: float = 0.05
    eps_decay: float = 0.995
    replay_capacity: int = 10_000
    batch_size: int = 32
    target_sync: int = 100
    lr: float = 1e-2
    episodes: int = 1000
    hidden: Tuple[int, ...] = (64, 64)
    raw_reward: bool = False
    reward_transform: str = "snr"  # "snr": reward / optimum, "capacity": log2(1 + reward) / log2(1 + optimum)
    train_random_start: float = 0.5  # probability that a training episode starts at a random grid cell
    terminal_on_time_limit: bool = False  # False: the last slot still bootstraps (time limit as truncation)
    eval_episodes: int = 100

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0 <= self.gamma < 1:
            _fail("dqn.gamma", f"must lie in [0, 1), got {self.gamma}")
        if not 0 <= self.eps_min <= self.eps_initial <= 1:
            _fail("dqn.eps_initial", "need 0 <= eps_min <= eps_initial <= 1")
        if not 0 < self.eps_decay <= 1:
            _fail("dqn.eps_decay", f"must lie in (0, 1], got {self.eps_decay}")
        if self.replay_capacity < 1:
            _fail("dqn.replay_capacity", "must be >= 1")
        if not 1 <= self.batch_size <= self.replay_capacity:
            _fail("dqn.batch_size", "must lie in [1, replay_capacity]")
        if self.target_sync < 1:
            _fail("dqn.target_sync", "must be >= 1")
        if not self.lr > 0:
            _fail("dqn.lr", f"must be > 0, got {self.lr}")
        if self.episodes < 1:
            _fail("dqn.episodes", "must be >= 1")
        if any(h < 1 for h in self.hidden):
            _fail("dqn.hidden", "layer widths must be >= 1")
        if self.reward_transform not in ("snr", "capacity"):
            _fail("dqn.reward_transform", f"must be 'snr' or 'capacity', got {self.reward_transform!r}")
        object.__setattr__(self, "train_random_start", float(self.train_random_start))
        if not 0 <= self.train_random_start <= 1:
            _fail("dqn.train_random_start", f"must lie in [0, 1], got {self.train_random_start}")
        if self.eval_episodes < 1:
            _fail("dqn.eval_episodes", "must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    dqn: DqnParams = field(default_factory=DqnParams)
    tabular: QLearnParams = field(default_factory=QLearnParams)

    def to_dict(self) -> Dict[str, Any]:
        world = dataclasses.asdict(self.world)
        for key in ("ue_pos", "eve_pos"):
            pos = getattr(self.world, key)
            world[key] = [pos.x, pos.y, pos.z]
        world["bounds"] = list(self.world.bounds)
        world["uav_start"] = list(self.world.uav_start)
        dqn = dataclasses.asdict(self.dqn)
        dqn["hidden"] = list(self.dqn.hidden)
        return {"world": world, "dqn": dqn, "tabular": dataclasses.asdict(self.tabular)}


def _build(cls, section: str, raw: Any):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigValidationError(f"{section}: expected a mapping", field=section)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigValidationError(
            f"{section}.{unknown[0]}: unknown key (allowed: {', '.join(sorted(known))})",
            field=f"{section}.{unknown[0]}",
        )
    kwargs = dict(raw)
    if cls is WorldConfig:
        for key in ("ue_pos", "eve_pos"):
            if key in kwargs:
                try:
                    kwargs[key] = Position3(*[float(v) for v in kwargs[key]])
                except (TypeError, ValueError) as exc:
                    raise ConfigValidationError(f"{section}.{key}: {exc}", field=key) from exc
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigValidationError(f"{section}: {exc}", field=section) from exc


def config_from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigValidationError("top level must be a mapping")
    unknown = sorted(set(raw) - {"world", "dqn", "tabular"})
    if unknown:
        raise ConfigValidationError(f"{unknown[0]}: unknown section", field=unknown[0])
    return ExperimentConfig(
        world=_build(WorldConfig, "world", raw.get("world")),
        dqn=_build(DqnParams, "dqn", raw.get("dqn")),
        tabular=_build(QLearnParams, "tabular", raw.get("tabular")),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigFileNotFound(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigParseError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(raw)
