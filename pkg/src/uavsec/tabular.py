"""Tabular Q-learning on the position x power lattice, and value iteration as its oracle.

The table key is (UAV grid column, UAV grid row, power level). Power is part of
the key because the reward depends on it; without it the lattice problem is
not Markov and has no well-defined optimal Q-function.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .channel import distance, snr_ue, Position3
from .config import QLearnParams, WorldConfig
from .dqn import EpisodeMetrics, Rollout
from .env import MOVES, N_ACTIONS, POWER_DELTAS, UavEnv, lattice_shape

QTABLE_FORMAT = "uavsec-qtable"
QTABLE_VERSION = 1


def q_update(q_old: float, reward: float, max_next_q: float, params) -> float:
    """One blended Bellman update; ``params`` needs ``alpha`` and ``gamma``."""
    return (1.0 - params.alpha) * q_old + params.alpha * (reward + params.gamma * max_next_q)


def greedy_actions(q: np.ndarray) -> np.ndarray:
    """Row-wise argmax, lowest index on ties."""
    return np.argmax(q, axis=-1)


class Lattice:
    """Enumerates lattice states and their deterministic transitions."""

    def __init__(self, config: WorldConfig):
        self.config = config
        self.shape = lattice_shape(config)
        nx, ny, nl = self.shape
        ix, iy, lv = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nl), indexing="ij")
        ix, iy, lv = ix.ravel(), iy.ravel(), lv.ravel()
        self.n_states = ix.size
        self.next = np.empty((self.n_states, N_ACTIONS), dtype=np.int64)
        for a in range(N_ACTIONS):
            (mx, my), dp = MOVES[a // 3], POWER_DELTAS[a % 3]
            self.next[:, a] = self.index(
                np.clip(ix + mx, 0, nx - 1), np.clip(iy + my, 0, ny - 1), np.clip(lv + dp, 0, nl - 1)
            )
        step, p1 = config.grid_step, config.p1
        ue = config.ue_pos
        d2 = (ix * step - ue.x) ** 2 + (iy * step - ue.y) ** 2 + (config.altitude - ue.z) ** 2
        # reward earned on arriving in each state
        self.reward = config.zeta0_over_sigma2 * (lv * p1) / d2

    def index(self, ix, iy, level):
        _, ny, nl = self.shape
        return (ix * ny + iy) * nl + level

    def unravel(self, s: int) -> Tuple[int, int, int]:
        _, ny, nl = self.shape
        ixy, level = divmod(int(s), nl)
        return ixy // ny, ixy % ny, level

    def key_of(self, env: UavEnv) -> int:
        cfg = self.config
        return int(self.index(
            int(round(env.uav_pos.x / cfg.grid_step)),
            int(round(env.uav_pos.y / cfg.grid_step)),
            int(round(env.power / cfg.p1)),
        ))


@dataclass
class ValueIterationResult:
    q: np.ndarray  # (n_states, 12)
    residual: float
    sweeps: int
    deltas: List[float] = field(repr=False, default_factory=list)


def value_iteration(env_config: WorldConfig, gamma: float, tol: float = 1e-10, max_sweeps: int = 100_000) -> ValueIterationResult:
    """Optimal Q on the lattice, iterated until the sup-norm Bellman residual is below ``tol``."""
    lat = Lattice(env_config)
    return bellman_fixed_point(lat.next, lat.reward, gamma, tol, max_sweeps)


def bellman_fixed_point(next_state: np.ndarray, arrival_reward: np.ndarray, gamma: float,
                        tol: float = 1e-10, max_sweeps: int = 100_000) -> ValueIterationResult:
    """Synchronous value iteration for a deterministic MDP given as a successor table."""
    r_next = arrival_reward[next_state]
    q = np.zeros(next_state.shape)
    deltas = []
    for sweep in range(1, max_sweeps + 1):
        q_new = r_next + gamma * q.max(axis=1)[next_state]
        delta = float(np.max(np.abs(q_new - q)))
        deltas.append(delta)
        q = q_new
        # stop once the distance to the fixed point, <= gamma * delta / (1 - gamma), is below tol
        if gamma * delta < tol * (1 - gamma):
            break
    residual = float(np.max(np.abs(r_next + gamma * q.max(axis=1)[next_state] - q)))
    return ValueIterationResult(q, residual, sweeps=sweep, deltas=deltas)


def best_secrecy_capacity(config: WorldConfig) -> float:
    """Largest secrecy capacity any action sequence can reach in one episode from the fixed start.

    Finite-horizon dynamic programming over the lattice, scoring each slot by its secrecy rate
    instead of the SNR reward.
    """
    lat = Lattice(config)
    nx, ny, nl = lat.shape
    ix, iy, lv = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nl), indexing="ij")
    step, ue = config.grid_step, config.ue_pos
    d2 = ((ix * step - ue.x) ** 2 + (iy * step - ue.y) ** 2 + (config.altitude - ue.z) ** 2).ravel()
    p = (lv * config.p1).ravel()
    z = config.zeta0_over_sigma2
    d_eve = distance(config.ue_pos, config.eve_pos)
    rate = np.maximum(np.log2(1 + z * p / d2) - np.log2(1 + z * p / d_eve**4), 0.0)
    value = np.zeros(lat.n_states)
    for _ in range(config.T):
        value = (rate[lat.next] + value[lat.next]).max(axis=1)
    start = lat.index(int(round(config.uav_start[0] / step)), int(round(config.uav_start[1] / step)),
                      int(round(config.initial_power / config.p1)))
    return float(value[start] / config.T)


def epsilon_greedy(q_row: np.ndarray, epsilon: float, rng: np.random.Generator) -> Tuple[int, bool]:
    """(action, explored); explores uniformly with probability ``epsilon``."""
    if rng.random() < epsilon:
        return int(rng.integers(len(q_row))), True
    return int(np.argmax(q_row)), False


@dataclass
class TabularResult:
    q: np.ndarray
    lattice: Lattice
    metrics: List[EpisodeMetrics]
    visits: np.ndarray

    def greedy_policy(self) -> np.ndarray:
        return greedy_actions(self.q)


def train_tabular(env_config: WorldConfig, params: QLearnParams, seed: int = 0) -> TabularResult:
    """Epsilon-greedy Q-learning with one table update per slot.

    The slot limit is a time limit rather than a terminal state (time is not
    part of the key), so the last slot of an episode still bootstraps.
    """
    lat = Lattice(env_config)
    rng = np.random.default_rng(seed)
    q = rng.random((lat.n_states, N_ACTIONS)) if params.random_init else np.zeros((lat.n_states, N_ACTIONS))
    visits = np.zeros((lat.n_states, N_ACTIONS), dtype=np.int64)
    env = UavEnv(env_config)
    eps = params.eps_initial
    history = []
    for k in range(params.episodes):
        env.reset(int(rng.integers(2**31)))
        s = lat.key_of(env)
        rewards, c_u, c_j = [], [], []
        done = False
        while not done:
            a, _ = epsilon_greedy(q[s], eps, rng)
            out = env.step(a)
            s2 = lat.key_of(env)
            visits[s, a] += 1
            alpha = params.alpha
            if params.alpha_decay:
                alpha = max(params.alpha / visits[s, a] ** 0.6, params.alpha_min)
            q[s, a] = (1.0 - alpha) * q[s, a] + alpha * (out.reward + params.gamma * q[s2].max())
            rewards.append(out.reward)
            c_u.append(out.diagnostics.c_u)
            c_j.append(out.diagnostics.c_j)
            s, done = s2, out.done
        st = out.next_state
        history.append(Rollout(rewards, c_u, c_j, env.uav_pos, env.power, st.dx, st.dy).metrics(k, eps))
        eps = max(params.eps_final, eps * params.eps_decay)
    return TabularResult(q, lat, history, visits)


def save_qtable(q: np.ndarray, lattice: Lattice, path) -> None:
    """CSV with a version comment line, then one row per (state, action)."""
    cfg = lattice.config
    nx, ny, nl = lattice.shape
    with open(path, "w", newline="") as fh:
        fh.write(f"# {QTABLE_FORMAT} v{QTABLE_VERSION} shape={nx}x{ny}x{nl}x{N_ACTIONS}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ix", "iy", "power_level", "dx", "dy", "action", "q_value"])
        for s in range(lattice.n_states):
            ix, iy, lv = lattice.unravel(s)
            dx = repr(ix * cfg.grid_step - cfg.ue_pos.x)
            dy = repr(iy * cfg.grid_step - cfg.ue_pos.y)
            for a in range(N_ACTIONS):
                w.writerow([ix, iy, lv, dx, dy, a, repr(float(q[s, a]))])


def load_qtable(path, lattice: Lattice) -> np.ndarray:
    with open(path, newline="") as fh:
        head = fh.readline()
        if not head.startswith(f"# {QTABLE_FORMAT} v{QTABLE_VERSION}"):
            raise ValueError(f"{path}: not a v{QTABLE_VERSION} Q-table file")
        q = np.full((lattice.n_states, N_ACTIONS), np.nan)
        for row in csv.DictReader(fh):
            s = lattice.index(int(row["ix"]), int(row["iy"]), int(row["power_level"]))
            q[s, int(row["action"])] = float(row["q_value"])
    if np.isnan(q).any():
        raise ValueError(f"{path}: table does not match the lattice {lattice.shape}")
    return q


def optimal_action_sets(q_star: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """Boolean mask of actions whose optimal value ties the row maximum within ``rtol``."""
    best = q_star.max(axis=1, keepdims=True)
    scale = max(float(np.abs(q_star).max()), 1e-300)
    return q_star >= best - rtol * scale


def policy_agreement(q: np.ndarray, q_star: np.ndarray, rtol: float = 1e-9) -> Tuple[float, float]:
    """(fraction of states whose greedy action is optimal under ``q_star``, strict index agreement).

    Both tables are read with the same lowest-index argmax. A state counts as
    agreeing when the learned greedy action is one of the ``q_star`` argmax
    actions, since exactly tied optimal values leave the index itself arbitrary.
    """
    learned = greedy_actions(q)
    rows = np.arange(len(learned))
    optimal = optimal_action_sets(q_star, rtol)[rows, learned]
    strict = learned == greedy_actions(q_star)
    return float(optimal.mean()), float(strict.mean())
