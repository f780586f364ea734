"""Episodic MDP: the UAV moves one grid step per slot and nudges the UE's power.

Observation is the UAV - UE offset. Reward is the uplink SNR after the move.
Both the horizontal bounds and the power range are enforced by clamping, so an
episode always lasts exactly ``T`` slots.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import NamedTuple, Optional, Tuple

import numpy as np

from .channel import Position3, capacity_eve, capacity_ue, distance, secrecy_rate_per_slot, snr_ue
from .config import ConfigValidationError, WorldConfig

MOVES = ((1, 0), (-1, 0), (0, 1), (0, -1))  # +x, -x, +y, -y
MOVE_NAMES = ("+x", "-x", "+y", "-y")
POWER_DELTAS = (1, 0, -1)  # multiples of p1
N_ACTIONS = len(MOVES) * len(POWER_DELTAS)


@dataclass(frozen=True)
class Action:
    move: int  # index into MOVES
    power: int  # index into POWER_DELTAS

    @property
    def index(self) -> int:
        return encode_action(self.move, self.power)

    def __str__(self):
        return f"({MOVE_NAMES[self.move]}, {POWER_DELTAS[self.power]:+d}p1)"


def encode_action(move: int, power: int) -> int:
    if not (0 <= move < len(MOVES) and 0 <= power < len(POWER_DELTAS)):
        raise ValueError(f"invalid action components ({move}, {power})")
    return move * len(POWER_DELTAS) + power


def decode_action(index: int) -> Action:
    if not 0 <= index < N_ACTIONS:
        raise ValueError(f"action index must lie in [0, {N_ACTIONS}), got {index}")
    return Action(*divmod(int(index), len(POWER_DELTAS)))


class State(NamedTuple):
    dx: float
    dy: float
    dz: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz])


class Diagnostics(NamedTuple):
    c_u: float
    c_j: float
    secrecy: float
    uav_pos: Position3
    power: float


class StepOutcome(NamedTuple):
    next_state: State
    reward: float
    done: bool
    diagnostics: Diagnostics


class EpisodeDone(RuntimeError):
    pass


def reward_capacity_identity(reward: float) -> float:
    """Uplink capacity implied by an SNR reward."""
    if reward < 0:
        raise ValueError("reward must be >= 0")
    return math.log2(1.0 + reward)


def _snap_power(p: float, p1: float, p_max: float) -> float:
    # repeated +/- p1 accumulates rounding error; pull back onto the exact level
    if abs(p - p_max) <= 1e-9 * p_max:
        return p_max
    k = round(p / p1)
    if abs(p - k * p1) > 1e-9 * p_max:
        return p
    n = round(p_max / p1)
    # k / n * p_max is exact at the ends and avoids 7 * 0.1 == 0.7000000000000001
    return k / n * p_max if abs(n * p1 - p_max) <= 1e-9 * p_max else k * p1


class UavEnv:
    """Single-owner environment; not safe for concurrent stepping."""

    def __init__(self, config: WorldConfig):
        self.config = config
        self.channel = config.channel
        lx, ly = config.bounds
        # UE and eavesdropper are static within an episode
        self._d_eve = distance(config.ue_pos, config.eve_pos)
        if config.obs_scale == "bounds":
            self._norm = np.array([lx if lx > 0 else 1.0, ly if ly > 0 else 1.0, config.altitude])
        elif config.obs_scale == "altitude":
            self._norm = np.full(3, config.altitude)
        else:
            self._norm = np.full(3, float(config.obs_scale))
        self.uav_pos: Optional[Position3] = None
        self.power = 0.0
        self.slot = 0

    @property
    def obs_dim(self) -> int:
        return 4 if self.config.observe_power else 3

    def reset(self, seed: Optional[int] = None) -> State:
        cfg = self.config
        if cfg.random_start:
            rng = np.random.default_rng(seed)
            nx = int(math.floor(cfg.bounds[0] / cfg.grid_step + 1e-9))
            ny = int(math.floor(cfg.bounds[1] / cfg.grid_step + 1e-9))
            x = cfg.grid_step * int(rng.integers(0, nx + 1))
            y = cfg.grid_step * int(rng.integers(0, ny + 1))
            self.uav_pos = Position3(x, y, cfg.altitude)
        else:
            self.uav_pos = cfg.start_pos
        self.power = cfg.initial_power
        self.slot = 0
        return self.state()

    def state(self) -> State:
        ue = self.config.ue_pos
        return State(self.uav_pos.x - ue.x, self.uav_pos.y - ue.y, self.uav_pos.z - ue.z)

    def features(self) -> np.ndarray:
        """Normalized network input for the current state."""
        s = self.state()
        x = np.array([s.dx, s.dy, s.dz]) / self._norm
        if self.config.observe_power:
            x = np.append(x, self.power / self.config.p_max)
        return x

    @property
    def done(self) -> bool:
        return self.slot >= self.config.T

    def step(self, action) -> StepOutcome:
        if self.uav_pos is None:
            raise EpisodeDone("call reset() before step()")
        if self.done:
            raise EpisodeDone(f"episode finished after {self.config.T} slots; call reset()")
        cfg = self.config
        if isinstance(action, Action):
            move, power = action.move, action.power
        elif 0 <= action < N_ACTIONS:
            move, power = divmod(int(action), len(POWER_DELTAS))
        else:
            raise ValueError(f"action index must lie in [0, {N_ACTIONS}), got {action}")
        mx, my = MOVES[move]
        lx, ly = cfg.bounds
        x = min(max(self.uav_pos.x + mx * cfg.grid_step, 0.0), lx)
        y = min(max(self.uav_pos.y + my * cfg.grid_step, 0.0), ly)
        self.uav_pos = Position3(x, y, self.uav_pos.z)
        p = self.power + POWER_DELTAS[power] * cfg.p1
        p = min(max(p, 0.0), cfg.p_max)
        self.power = _snap_power(p, cfg.p1, cfg.p_max)
        self.slot += 1

        d_u = distance(self.uav_pos, cfg.ue_pos)
        reward = snr_ue(self.power, d_u, self.channel)
        c_u = capacity_ue(self.power, d_u, self.channel)
        c_j = capacity_eve(self.power, self._d_eve, self.channel)
        diag = Diagnostics(c_u, c_j, secrecy_rate_per_slot(c_u, c_j), self.uav_pos, self.power)
        return StepOutcome(self.state(), reward, self.done, diag)


def optimal_static_policy(config: WorldConfig) -> Tuple[Position3, float, float]:
    """Closed-form maximizer of the uplink capacity: peak power, UAV above the UE."""
    lx, ly = config.bounds
    ue = config.ue_pos
    pos = Position3(min(max(ue.x, 0.0), lx), min(max(ue.y, 0.0), ly), config.altitude)
    reward = snr_ue(config.p_max, distance(pos, ue), config.channel)
    return pos, config.p_max, reward


def lattice_shape(config: WorldConfig) -> Tuple[int, int, int]:
    """(nx, ny, n_power_levels) of the reachable lattice; raises if not a lattice."""
    cfg = config
    counts = []
    for name, length in (("bounds[0]", cfg.bounds[0]), ("bounds[1]", cfg.bounds[1])):
        n = length / cfg.grid_step
        if abs(n - round(n)) > 1e-9:
            raise ConfigValidationError(f"{name}: {length} is not a multiple of grid_step {cfg.grid_step}", field="bounds")
        counts.append(int(round(n)) + 1)
    for name, v in (("uav_start[0]", cfg.uav_start[0]), ("uav_start[1]", cfg.uav_start[1])):
        n = v / cfg.grid_step
        if abs(n - round(n)) > 1e-9:
            raise ConfigValidationError(f"{name}: {v} is off the movement grid", field="uav_start")
    for name, v in (("p_max", cfg.p_max), ("initial_power", cfg.initial_power)):
        n = v / cfg.p1
        if abs(n - round(n)) > 1e-9:
            raise ConfigValidationError(f"{name}: {v} is not a multiple of p1 {cfg.p1}", field=name)
    return counts[0], counts[1], int(round(cfg.p_max / cfg.p1)) + 1


def grid_optimal_policy(config: WorldConfig) -> Tuple[Position3, float, float]:
    """Exhaustive argmax of the reward over every lattice position and power level."""
    nx, ny, nl = lattice_shape(config)
    best = None
    for ix, iy, lvl in product(range(nx), range(ny), range(nl)):
        pos = Position3(ix * config.grid_step, iy * config.grid_step, config.altitude)
        p = lvl * config.p1
        r = snr_ue(p, distance(pos, config.ue_pos), config.channel)
        if best is None or r > best[2]:
            best = (pos, p, r)
    return best
