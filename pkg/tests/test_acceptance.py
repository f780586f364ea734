"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerances and budgets.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are printed even when
output capture is on.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from uavsec.channel import (
    ChannelParams,
    Position3,
    a2g_gain,
    capacity_eve,
    capacity_ue,
    g2g_gain,
    secrecy_rate_per_slot,
)
from uavsec.config import DqnParams, ExperimentConfig, QLearnParams, WorldConfig, load_config
from uavsec.dqn import (
    Experience,
    ReplayMemory,
    evaluate_policy,
    evaluate_random,
    push_experience,
    train_dqn,
)
from uavsec.env import N_ACTIONS, UavEnv, optimal_static_policy
from uavsec.harness import run_experiment, static_optimal_metrics
from uavsec.neural import Experiences, Mlp, forward, loss, loss_and_backward
from uavsec.tabular import best_secrecy_capacity, greedy_actions, train_tabular, value_iteration

ROOT = Path(__file__).resolve().parents[1]
SHIPPED = load_config(ROOT / "configs" / "default.yaml")
SEEDS = (0, 1, 2, 3, 4)


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance {number}] {'PASS' if ok else 'FAIL'}: {detail}")


# 1. physics identities ---------------------------------------------------

def test_criterion_1_physics_identities(capsys):
    rng = np.random.default_rng(2024)
    n_cases = 10_000
    tol = 1e-12
    worst = 0.0
    violations = 0
    start = time.perf_counter()
    env = None
    for i in range(n_cases):
        zeta = 10 ** rng.uniform(-2, 6)
        p_max = rng.uniform(0.1, 10.0)
        params = ChannelParams(zeta, p_max)
        d = rng.uniform(0.5, 500.0)
        k = rng.uniform(1.0, 8.0)
        # scaling laws: gain(k d) * k^n == gain(d)
        for got, want in ((a2g_gain(k * d, zeta) * k**2, a2g_gain(d, zeta)),
                          (g2g_gain(k * d, zeta) * k**4, g2g_gain(d, zeta))):
            worst = max(worst, abs(got - want) / want)
        # monotonicity in power (up) and distance (down)
        p_lo, p_hi = sorted(rng.uniform(0, p_max, 2))
        if capacity_ue(p_hi, d, params) < capacity_ue(p_lo, d, params) - tol:
            violations += 1
        if capacity_ue(p_lo, k * d, params) > capacity_ue(p_lo, d, params) + tol:
            violations += 1
        if capacity_eve(p_hi, d, params) < capacity_eve(p_lo, d, params) - tol:
            violations += 1
        if secrecy_rate_per_slot(capacity_ue(p_hi, d, params), capacity_eve(p_hi, d / k, params)) < 0:
            violations += 1
        # reward / capacity identity on a live environment step
        if i % 100 == 0:
            world = WorldConfig(
                ue_pos=Position3(*rng.uniform(0, 100, 2)), eve_pos=Position3(*rng.uniform(0, 100, 2)),
                altitude=rng.uniform(1, 50), zeta0_over_sigma2=zeta, random_start=True,
            )
            env = UavEnv(world)
            env.reset(seed=i)
        if env.done:
            env.reset(seed=i)
        out = env.step(int(rng.integers(N_ACTIONS)))
        c_u = out.diagnostics.c_u
        worst = max(worst, abs(math.log2(1 + out.reward) - c_u) / max(1.0, abs(c_u)))
    elapsed = time.perf_counter() - start
    ok = worst <= tol and violations == 0 and elapsed < 5
    report(capsys, 1, ok, f"{n_cases} cases, worst relative error {worst:.2e} (tol {tol:g}), "
                          f"{violations} monotonicity/sign violations, {elapsed:.2f} s (budget 5 s)")
    assert ok


# 2. gradient correctness -------------------------------------------------

def _norm_rel(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def test_criterion_2_gradient_check(capsys):
    rng = np.random.default_rng(7)
    h = 1e-5
    worst = 0.0
    start = time.perf_counter()
    for _ in range(100):
        d_in = int(rng.integers(3, 5))
        hidden = [int(n) for n in rng.integers(3, 10, int(rng.integers(1, 3)))]
        net = Mlp.init([d_in, *hidden, N_ACTIONS], rng)
        for layer in net.layers:
            layer.biases[:] = rng.normal(scale=0.5, size=layer.biases.shape)
        target = Mlp.init([d_in, *hidden, N_ACTIONS], rng)
        n = int(rng.integers(1, 9))
        batch = Experiences(rng.normal(size=(n, d_in)), rng.integers(0, N_ACTIONS, n), rng.random(n),
                            rng.normal(size=(n, d_in)), rng.random(n) < 0.2)
        gamma = float(rng.uniform(0, 1))
        _, grads = loss_and_backward(batch, net, target, gamma)
        for layer, pair in zip(net.layers, grads):
            for arr, g in zip((layer.weights, layer.biases), pair):
                fd = np.zeros_like(arr)
                for idx in np.ndindex(arr.shape):
                    orig = arr[idx]
                    arr[idx] = orig + h
                    up = loss(batch, net, target, gamma)
                    arr[idx] = orig - h
                    down = loss(batch, net, target, gamma)
                    arr[idx] = orig
                    fd[idx] = (up - down) / (2 * h)
                worst = max(worst, _norm_rel(g, fd))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 30
    report(capsys, 2, ok, f"100 (net, batch) instances, worst relative error {worst:.2e} (tol 1e-4), "
                          f"{elapsed:.2f} s (budget 30 s)")
    assert ok


# 3. tabular oracle equivalence -------------------------------------------

LATTICE_WORLD = WorldConfig(
    bounds=(10.0, 10.0), ue_pos=Position3(4.0, 6.0, 0.0), eve_pos=Position3(8.0, 2.0, 0.0),
    altitude=3.0, uav_start=(0.0, 0.0), p_max=1.0, p1=0.5, T=50, random_start=True,
)
LATTICE_Q = QLearnParams(alpha=1.0, gamma=0.9, eps_initial=1.0, eps_final=1.0, eps_decay=1.0, episodes=8000)


def test_criterion_3_tabular_matches_value_iteration(capsys):
    start = time.perf_counter()
    vi = value_iteration(LATTICE_WORLD, LATTICE_Q.gamma, tol=1e-12)
    learned = train_tabular(LATTICE_WORLD, LATTICE_Q, seed=0)
    elapsed = time.perf_counter() - start
    n_states = vi.q.shape[0]
    agree = float(np.mean(greedy_actions(learned.q) == greedy_actions(vi.q)))
    ok = n_states == 11 * 11 * 3 and agree >= 0.95 and vi.residual < 1e-10 and elapsed < 60
    report(capsys, 3, ok, f"{n_states} states, greedy agreement {agree:.4f} (need >= 0.95, lowest-index ties), "
                          f"Bellman residual {vi.residual:.1e} (need < 1e-10), {elapsed:.1f} s (budget 60 s)")
    assert ok


# 4. DQN convergence to the analytic optimum ------------------------------

@pytest.fixture(scope="module")
def default_runs():
    world, params = SHIPPED.world, SHIPPED.dqn
    runs, times = {}, {}
    for seed in SEEDS:
        t0 = time.perf_counter()
        runs[seed] = train_dqn(world, params, seed=seed, evaluate=False)
        times[seed] = time.perf_counter() - t0
    return runs, times


@pytest.mark.slow
def test_criterion_4_dqn_reaches_the_analytic_optimum(capsys, default_runs):
    runs, times = default_runs
    world = SHIPPED.world
    best, p_best, r_best = optimal_static_policy(world)
    lines, hits = [], 0
    for seed, run in runs.items():
        t0 = time.perf_counter()
        ev = evaluate_policy(run.net, world, 1, seed=seed)
        times[seed] += time.perf_counter() - t0
        end, power, reward = ev.final_positions[0], ev.final_powers[0], ev.final_rewards[0]
        good = (max(abs(end.x - best.x), abs(end.y - best.y)) <= world.grid_step
                and power == p_best and reward >= 0.95 * r_best)
        hits += good
        lines.append(f"seed {seed}: end ({end.x:g}, {end.y:g}) power {power:g} reward {reward / r_best:.3f}x")
    total = sum(times.values())
    ok = hits >= 4 and total < 600
    report(capsys, 4, ok, f"{hits}/5 seeds at the optimum (need 4), {total:.0f} s (budget 600 s); " + "; ".join(lines))
    assert ok


# 5. baseline dominance ---------------------------------------------------

@pytest.mark.slow
def test_criterion_5_baseline_dominance(capsys, default_runs):
    runs, _ = default_runs
    world = SHIPPED.world
    start = time.perf_counter()
    trained = evaluate_policy(runs[0].net, world, 100, seed=0).mean_secrecy_capacity
    rand = evaluate_random(world, 100, seed=0).mean_secrecy_capacity
    static = static_optimal_metrics(world).secrecy_capacity
    reachable = best_secrecy_capacity(world)  # best any policy can do from the start in T slots
    elapsed = time.perf_counter() - start
    beats = trained > rand
    close = abs(trained - static) <= 0.05 * static
    ok = beats and close and elapsed < 120
    report(capsys, 5, ok, f"trained {trained:.4f} vs random {rand:.4f} bits/s/Hz ({'>' if beats else '<='}), "
                          f"static optimum {static:.4f} (trained at {trained / static:.1%}, need >= 95%; "
                          f"best reachable from the start is {reachable:.4f} = {reachable / static:.1%}), "
                          f"{elapsed:.1f} s (budget 120 s)")
    assert ok


# 6. mechanism invariants -------------------------------------------------

SMALL = WorldConfig(bounds=(6.0, 6.0), ue_pos=Position3(3.0, 2.0, 0.0), eve_pos=Position3(6.0, 6.0, 0.0),
                    altitude=2.0, p1=0.5, T=10)


def test_criterion_6_mechanism_invariants(capsys, tmp_path):
    start = time.perf_counter()
    checks = {}

    mem = ReplayMemory(3, 1)
    for i in range(1, 5):
        push_experience(mem, Experience(np.array([float(i)]), 0, float(i), np.array([0.0]), False))
    checks["fifo"] = [e.reward for e in mem.contents()] == [2.0, 3.0, 4.0]

    events = []
    probes = np.random.default_rng(0).normal(size=(16, 3))

    def watch(event, **info):
        if event == "sync":
            same = (info["net"].to_bytes() == info["target"].to_bytes()
                    and forward(info["net"], probes).tobytes() == forward(info["target"], probes).tobytes())
            events.append(("sync", info["slot"], same))
        elif event == "update":
            events.append(("update", info["slot"], info["memory_size"]))

    params = DqnParams(episodes=12, batch_size=16, replay_capacity=200, target_sync=7, eps_decay=0.7,
                       eps_min=0.1, eval_episodes=1)
    result = train_dqn(SMALL, params, seed=3, evaluate=False, callback=watch)
    updates = [e for e in events if e[0] == "update"]
    syncs = [e for e in events if e[0] == "sync"]
    checks["warmup"] = updates[0][1] == params.batch_size and all(u[2] >= params.batch_size for u in updates)
    checks["sync"] = ([s[1] for s in syncs] == list(range(7, 12 * SMALL.T + 1, 7))
                      and all(s[2] for s in syncs))
    eps = [m.epsilon for m in result.metrics]
    checks["epsilon"] = all(b <= a for a, b in zip(eps, eps[1:])) and eps[-1] == params.eps_min

    cfg = ExperimentConfig(world=SMALL, dqn=params)
    run_experiment("dqn", cfg, seed=11, out_dir=tmp_path / "a")
    run_experiment("dqn", cfg, seed=11, out_dir=tmp_path / "b")
    checks["reproducible"] = all(
        (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        for name in ("metrics.csv", "evaluation.csv", "model.qmlp")
    )
    elapsed = time.perf_counter() - start
    ok = all(checks.values()) and elapsed < 10
    report(capsys, 6, ok, ", ".join(f"{k} {'ok' if v else 'BROKEN'}" for k, v in checks.items())
           + f", {elapsed:.2f} s (budget 10 s)")
    assert ok
