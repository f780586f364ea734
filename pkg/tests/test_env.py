import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uavsec.channel import Position3
from uavsec.config import ConfigValidationError, WorldConfig
from uavsec.env import (
    N_ACTIONS,
    Action,
    EpisodeDone,
    UavEnv,
    decode_action,
    encode_action,
    grid_optimal_policy,
    optimal_static_policy,
    reward_capacity_identity,
)

PLUS_X, MINUS_X, PLUS_Y, MINUS_Y = 0, 1, 2, 3
UP, HOLD, DOWN = 0, 1, 2


def act(move, power=HOLD):
    return encode_action(move, power)


def test_action_space_round_trip():
    assert N_ACTIONS == 12
    decoded = {decode_action(i) for i in range(N_ACTIONS)}
    assert len(decoded) == 12
    for i in range(N_ACTIONS):
        assert decode_action(i).index == i
    with pytest.raises(ValueError):
        decode_action(12)


def test_reset_fixed_start():
    env = UavEnv(WorldConfig())
    s = env.reset(0)
    assert (s.dx, s.dy, s.dz) == (-50.0, -50.0, 10.0)
    above = UavEnv(WorldConfig(uav_start=(50.0, 50.0)))
    s = above.reset(0)
    assert (s.dx, s.dy, s.dz) == (0.0, 0.0, 10.0)


def test_reset_seeded_random_start_is_deterministic():
    cfg = WorldConfig(random_start=True)
    a, b = UavEnv(cfg), UavEnv(cfg)
    assert a.reset(123) == b.reset(123)
    starts = {UavEnv(cfg).reset(s) for s in range(20)}
    assert len(starts) > 1


def test_start_out_of_bounds_is_rejected():
    with pytest.raises(ConfigValidationError, match="uav_start"):
        WorldConfig(uav_start=(101.0, 0.0))


def test_step_clamps_position_and_power():
    env = UavEnv(WorldConfig())
    env.reset(0)
    out = env.step(act(MINUS_X))
    assert env.uav_pos == Position3(0.0, 0.0, 10.0)
    assert out.reward == pytest.approx(1e4 * 0.5 / (50**2 + 50**2 + 100))

    env = UavEnv(WorldConfig(initial_power=1.0))
    env.reset(0)
    env.step(act(PLUS_X, UP))
    assert env.power == 1.0


def test_reward_directly_above_ue():
    cfg = WorldConfig(uav_start=(49.0, 50.0), initial_power=0.7)
    env = UavEnv(cfg)
    env.reset(0)
    out = env.step(act(PLUS_X))
    assert out.next_state.dx == 0 and out.next_state.dy == 0
    assert out.reward == pytest.approx(1e4 * 0.7 / 10.0**2, rel=1e-15)


def test_reward_capacity_identity_examples():
    assert reward_capacity_identity(1.0) == 1.0
    assert reward_capacity_identity(0.0) == 0.0
    assert reward_capacity_identity(3.0) == 2.0


def test_episode_length_and_step_after_done():
    env = UavEnv(WorldConfig(T=5))
    env.reset(0)
    dones = [env.step(act(PLUS_X)).done for _ in range(5)]
    assert dones == [False] * 4 + [True]
    with pytest.raises(EpisodeDone):
        env.step(act(PLUS_X))


def test_opposite_moves_cancel():
    env = UavEnv(WorldConfig(uav_start=(20.0, 30.0)))
    s0 = env.reset(0)
    env.step(act(PLUS_X))
    assert env.step(act(MINUS_X)).next_state == s0
    env.step(act(PLUS_Y))
    assert env.step(act(MINUS_Y)).next_state == s0


def test_observation_features():
    env = UavEnv(WorldConfig(observe_power=True, obs_scale="bounds"))
    env.reset(0)
    np.testing.assert_allclose(env.features(), [-0.5, -0.5, 1.0, 0.5])
    env = UavEnv(WorldConfig())
    env.reset(0)
    np.testing.assert_allclose(env.features(), [-5.0, -5.0, 1.0])
    env = UavEnv(WorldConfig(obs_scale=25.0))
    env.reset(0)
    np.testing.assert_allclose(env.features(), [-2.0, -2.0, 0.4])
    env = UavEnv(WorldConfig())
    env.reset(0)
    assert env.features().shape == (3,)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, N_ACTIONS - 1), min_size=1, max_size=60), st.integers(0, 2**16))
def test_random_action_sequences_respect_constraints(actions, seed):
    cfg = WorldConfig(bounds=(6.0, 4.0), ue_pos=Position3(3.0, 1.0, 0.0), uav_start=(0.0, 0.0), T=60, random_start=True)
    env = UavEnv(cfg)
    env.reset(seed)
    for a in actions:
        out = env.step(a)
        assert 0 <= env.uav_pos.x <= 6 and 0 <= env.uav_pos.y <= 4
        assert env.uav_pos.z == cfg.altitude
        assert 0 <= env.power <= cfg.p_max
        s = out.next_state
        assert (s.dx, s.dy, s.dz) == (env.uav_pos.x - 3.0, env.uav_pos.y - 1.0, cfg.altitude)
        assert out.reward >= 0
        assert abs(math.log2(1 + out.reward) - out.diagnostics.c_u) <= 1e-12


def test_trajectories_are_deterministic():
    cfg = WorldConfig(random_start=True)
    rng = np.random.default_rng(5)
    actions = rng.integers(0, N_ACTIONS, 40)
    runs = []
    for _ in range(2):
        env = UavEnv(cfg)
        env.reset(9)
        runs.append([env.step(int(a)) for a in actions])
    assert runs[0] == runs[1]


def test_optimal_static_policy():
    pos, p, r = optimal_static_policy(WorldConfig())
    assert pos == Position3(50.0, 50.0, 10.0)
    assert p == 1.0
    assert r == pytest.approx(100.0, rel=1e-15)
    corner = WorldConfig(ue_pos=Position3(100.0, 100.0, 0.0))
    assert optimal_static_policy(corner)[0] == Position3(100.0, 100.0, 10.0)


@pytest.mark.parametrize("ue", [(2.0, 3.0), (0.0, 4.0), (4.0, 0.0), (1.0, 1.0)])
def test_optimal_static_policy_matches_grid_enumeration(ue):
    cfg = WorldConfig(bounds=(4.0, 4.0), ue_pos=Position3(*ue, 0.0), uav_start=(0.0, 0.0), p1=0.25)
    pos, p, r = optimal_static_policy(cfg)
    gpos, gp, gr = grid_optimal_policy(cfg)
    assert (gpos, gp) == (pos, p)
    assert gr == pytest.approx(r, rel=1e-15)
