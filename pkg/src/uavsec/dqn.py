"""Deep Q-learning loop: replay memory, epsilon-greedy control, periodic target sync."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .channel import Position3, secrecy_capacity
from .config import DqnParams, WorldConfig
from .env import N_ACTIONS, UavEnv
from .neural import Experiences, Mlp, copy_weights, forward, loss_and_backward, sgd_step

log = logging.getLogger(__name__)


class InsufficientData(ValueError):
    """The replay memory holds fewer experiences than requested."""


class DivergenceError(RuntimeError):
    def __init__(self, message: str, report: dict):
        super().__init__(message)
        self.report = report


@dataclass
class Experience:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayMemory:
    """Fixed-capacity FIFO ring buffer of transitions."""

    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, e: Experience) -> None:
        i = self._next
        self.states[i] = e.state
        self.actions[i] = e.action
        self.rewards[i] = e.reward
        self.next_states[i] = e.next_state
        self.dones[i] = e.done
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _order(self) -> np.ndarray:
        start = self._next if self._size == self.capacity else 0
        return (start + np.arange(self._size)) % self.capacity

    def batch(self, idx) -> Experiences:
        idx = np.asarray(idx)
        return Experiences(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.dones[idx])

    def contents(self) -> List[Experience]:
        """Stored experiences, oldest first."""
        return [
            Experience(self.states[i].copy(), int(self.actions[i]), float(self.rewards[i]), self.next_states[i].copy(), bool(self.dones[i]))
            for i in self._order()
        ]


def push_experience(mem: ReplayMemory, e: Experience) -> None:
    mem.push(e)


def sample_batch(mem: ReplayMemory, k: int, rng: np.random.Generator) -> Experiences:
    """``k`` distinct experiences drawn uniformly."""
    if len(mem) < k:
        raise InsufficientData(f"replay memory holds {len(mem)} experiences, batch needs {k}")
    return mem.batch(rng.choice(len(mem), size=k, replace=False))


def greedy_action(q_values) -> int:
    # np.argmax returns the first maximum, i.e. the lowest index on ties
    return int(np.argmax(q_values))


def select_action(net: Mlp, state, epsilon: float, rng: np.random.Generator) -> int:
    if not 0 <= epsilon <= 1:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return int(rng.integers(N_ACTIONS))
    return greedy_action(forward(net, state))


@dataclass
class EpisodeMetrics:
    episode: int
    cumulative_reward: float
    mean_c_u: float
    mean_c_j: float
    secrecy_capacity: float
    final_dx: float
    final_dy: float
    final_power: float
    epsilon: float


@dataclass
class Rollout:
    rewards: List[float]
    c_u: List[float]
    c_j: List[float]
    final_pos: Position3
    final_power: float
    final_dx: float
    final_dy: float

    @property
    def cumulative_reward(self) -> float:
        return math.fsum(self.rewards)

    @property
    def secrecy_capacity(self) -> float:
        return secrecy_capacity(zip(self.c_u, self.c_j))

    def metrics(self, episode: int, epsilon: float) -> EpisodeMetrics:
        return EpisodeMetrics(
            episode, self.cumulative_reward, float(np.mean(self.c_u)), float(np.mean(self.c_j)),
            self.secrecy_capacity, self.final_dx, self.final_dy, self.final_power, epsilon,
        )


def rollout(env: UavEnv, policy: Callable[[UavEnv], int], seed: Optional[int] = None) -> Rollout:
    """Run one full episode with ``policy`` mapping the environment to an action index."""
    env.reset(seed)
    rewards, c_u, c_j = [], [], []
    done = False
    while not done:
        out = env.step(policy(env))
        rewards.append(out.reward)
        c_u.append(out.diagnostics.c_u)
        c_j.append(out.diagnostics.c_j)
        done = out.done
    s = out.next_state
    return Rollout(rewards, c_u, c_j, env.uav_pos, env.power, s.dx, s.dy)


@dataclass
class EvalResult:
    mean_cumulative_reward: float
    mean_secrecy_capacity: float
    final_positions: List[Position3]
    final_powers: List[float]
    final_rewards: List[float]
    episodes: List[Rollout] = field(repr=False, default_factory=list)


def evaluate_with(config: WorldConfig, policy, episodes: int, seed: int) -> EvalResult:
    """Roll out ``policy`` for ``episodes`` episodes; episode ``i`` resets with ``seed + i``."""
    env = UavEnv(config)
    runs = [rollout(env, policy, seed + i) for i in range(episodes)]
    return EvalResult(
        float(np.mean([r.cumulative_reward for r in runs])),
        float(np.mean([r.secrecy_capacity for r in runs])),
        [r.final_pos for r in runs],
        [r.final_power for r in runs],
        [r.rewards[-1] for r in runs],
        runs,
    )


def evaluate_policy(net: Mlp, env_config: WorldConfig, episodes: int = 1, seed: int = 0) -> EvalResult:
    """Greedy (epsilon = 0) rollouts; episode ``i`` resets with ``seed + i``."""
    return evaluate_with(env_config, lambda env: greedy_action(forward(net, env.features())), episodes, seed)


def evaluate_random(env_config: WorldConfig, episodes: int = 1, seed: int = 0) -> EvalResult:
    """Uniformly random actions; the action stream is seeded by ``seed``."""
    rng = np.random.default_rng(seed)
    return evaluate_with(env_config, lambda env: int(rng.integers(N_ACTIONS)), episodes, seed)


def make_reward_transform(env_config: WorldConfig, params: DqnParams) -> Callable[[float], float]:
    """Agent-side reward scaling; the environment itself always reports the raw SNR."""
    if params.raw_reward:
        return float
    best = env_config.optimal_reward
    if params.reward_transform == "capacity":
        top = math.log2(1.0 + best)
        return lambda r: math.log2(1.0 + r) / top
    return lambda r: r / best


@dataclass
class TrainResult:
    net: Mlp
    metrics: List[EpisodeMetrics]
    evaluation: Optional[EvalResult]
    n_updates: int
    n_syncs: int
    losses: List[float]  # mean training loss per episode (nan before warmup)


def train_dqn(
    env_config: WorldConfig,
    params: DqnParams,
    seed: int = 0,
    evaluate: bool = True,
    callback: Optional[Callable] = None,
) -> TrainResult:
    """Train a Q-network on ``env_config``.

    Per slot: epsilon-greedy action, environment step, store the transition,
    one SGD step on a uniform mini-batch once the memory holds ``batch_size``
    transitions, and a hard target sync every ``target_sync`` slots. Epsilon
    decays once per episode. ``callback(event, **info)`` observes the loop
    (events: ``"slot"``, ``"update"``, ``"sync"``, ``"episode"``).
    """
    rng = np.random.default_rng(seed)
    fixed_env = UavEnv(env_config)
    random_env = UavEnv(env_config.replace(random_start=True))
    mix = params.train_random_start
    env = random_env if mix == 1.0 else fixed_env
    net = Mlp.init([env.obs_dim, *params.hidden, N_ACTIONS], rng)
    target = copy_weights(net)
    memory = ReplayMemory(params.replay_capacity, env.obs_dim)
    shape_reward = make_reward_transform(env_config, params)

    eps = params.eps_initial
    slots = n_updates = n_syncs = 0
    history: List[EpisodeMetrics] = []
    losses: List[float] = []
    for k in range(params.episodes):
        if 0.0 < mix < 1.0:
            env = random_env if rng.random() < mix else fixed_env
        env.reset(int(rng.integers(2**31)))
        rewards, c_u, c_j, ep_loss = [], [], [], []
        x = env.features()
        done = False
        while not done:
            a = select_action(net, x, eps, rng)
            out = env.step(a)
            x_next = env.features()
            done = out.done
            memory.push(Experience(x, a, shape_reward(out.reward), x_next, done and params.terminal_on_time_limit))
            rewards.append(out.reward)
            c_u.append(out.diagnostics.c_u)
            c_j.append(out.diagnostics.c_j)
            slots += 1
            if callback:
                callback("slot", slot=slots, outcome=out)
            if len(memory) >= params.batch_size:
                batch = sample_batch(memory, params.batch_size, rng)
                value, grads = loss_and_backward(batch, net, target, params.gamma)
                if not math.isfinite(value):
                    report = {"episode": k, "slot": slots, "loss": value, "epsilon": eps, "updates": n_updates}
                    raise DivergenceError(f"non-finite loss at episode {k}, slot {slots}", report)
                sgd_step(net, grads, params.lr)
                ep_loss.append(value)
                n_updates += 1
                if callback:
                    callback("update", slot=slots, loss=value, memory_size=len(memory))
            if slots % params.target_sync == 0:
                target = copy_weights(net)
                n_syncs += 1
                if callback:
                    callback("sync", slot=slots, net=net, target=target)
            x = x_next
        s = out.next_state
        run = Rollout(rewards, c_u, c_j, env.uav_pos, env.power, s.dx, s.dy)
        history.append(run.metrics(k, eps))
        losses.append(float(np.mean(ep_loss)) if ep_loss else float("nan"))
        if callback:
            callback("episode", episode=k, metrics=history[-1], epsilon=eps)
        if k % 100 == 0:
            log.debug("episode %d eps=%.3f return=%.2f loss=%.3g", k, eps, history[-1].cumulative_reward, losses[-1])
        eps = max(params.eps_min, eps * params.eps_decay)

    evaluation = evaluate_policy(net, env_config, params.eval_episodes, seed) if evaluate else None
    return TrainResult(net, history, evaluation, n_updates, n_syncs, losses)
