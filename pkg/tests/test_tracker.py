import numpy as np
import pytest
import torch

from loopmotion.motion import GlobalFrame, yaw_matrix
from loopmotion.tracker import (TrackingPolicy, build_state, reset_check,
                                tracking_reward)


def frame_of(sk, positions, velocities=None, heading=0.0):
    vel = np.zeros_like(positions) if velocities is None else velocities
    return GlobalFrame(np.asarray(positions, float), vel, heading)


def test_state_zero_delta(sk13):
    rest = sk13.rest_pose()
    state = build_state(frame_of(sk13, rest), frame_of(sk13, rest))
    j = sk13.joint_count
    assert state.shape == (12 * j,)
    assert np.allclose(state[: 6 * j], 0.0, atol=1e-7)


def test_state_yaw_invariance(sk13):
    rest = sk13.rest_pose()
    ref = rest + np.array([0.2, 0.0, 0.1])
    base = build_state(frame_of(sk13, ref), frame_of(sk13, rest))
    phi = 1.2
    rot = yaw_matrix(phi).T
    moved = build_state(
        frame_of(sk13, ref @ rot, heading=phi),
        frame_of(sk13, rest @ rot, heading=phi))
    assert np.abs(base - moved).max() < 1e-5


def test_state_offset_lands_in_right_slot(sk13):
    rest = sk13.rest_pose()
    ref = rest.copy()
    joint = 4
    ref[joint, 0] += 0.1  # forward offset on one joint, heading 0
    state = build_state(frame_of(sk13, ref), frame_of(sk13, rest))
    j = sk13.joint_count
    delta_pos = state[: 3 * j].reshape(j, 3)
    assert delta_pos[joint, 0] == pytest.approx(0.1, abs=1e-7)
    mask = np.ones(j, dtype=bool)
    mask[joint] = False
    assert np.abs(delta_pos[mask]).max() < 1e-9


def test_zero_network_gives_zero_action(sk13, small_cfg):
    policy = TrackingPolicy.fresh(sk13, small_cfg.tracker, small_cfg.sim.a_max, seed=0)
    with torch.no_grad():
        for p in policy.net.actor.parameters():
            p.zero_()
    state = np.random.default_rng(0).normal(0, 1, 12 * sk13.joint_count).astype(np.float32)
    action = policy.act(state, stochastic=False)
    assert np.array_equal(action, np.zeros((sk13.joint_count, 3)))


def test_action_determinism_and_clamp(sk13, small_cfg):
    policy = TrackingPolicy.fresh(sk13, small_cfg.tracker, small_cfg.sim.a_max, seed=1)
    state = np.random.default_rng(1).normal(0, 1, 12 * sk13.joint_count).astype(np.float32)
    a1 = policy.act(state, stochastic=False)
    a2 = policy.act(state, stochastic=False)
    assert np.array_equal(a1, a2)
    g1 = torch.Generator().manual_seed(5)
    g2 = torch.Generator().manual_seed(5)
    s1 = policy.act(state, stochastic=True, generator=g1)
    s2 = policy.act(state, stochastic=True, generator=g2)
    assert np.array_equal(s1, s2)
    assert np.abs(s1).max() <= small_cfg.sim.a_max + 1e-12


def test_stochastic_std_matches_learned(sk13, small_cfg):
    policy = TrackingPolicy.fresh(sk13, small_cfg.tracker, small_cfg.sim.a_max, seed=2)
    state = np.zeros(12 * sk13.joint_count, dtype=np.float32)
    gen = torch.Generator().manual_seed(11)
    n = 100_000
    with torch.no_grad():
        mean = policy.net.actor(torch.as_tensor(state))
        std = policy.net.log_std.exp()
        noise = torch.randn((n, mean.shape[0]), generator=gen)
        samples = mean + std * noise  # pre-clamp samples define the distribution
    sample_std = samples.std(dim=0)
    assert float(((sample_std - std).abs() / std).max()) < 0.05


def test_tracking_reward_examples(sk13):
    rest = sk13.rest_pose()
    perfect = tracking_reward(frame_of(sk13, rest), frame_of(sk13, rest),
                              np.zeros((sk13.joint_count, 3)), k_r=5.0, w_e=0.01)
    assert perfect == pytest.approx(1.0)
    # k_r = 5, mean squared error 0.04, no energy cost -> exp(-0.2)
    off = rest + np.array([0.2, 0.0, 0.0])  # every joint offset by 0.2 m
    r = tracking_reward(frame_of(sk13, off), frame_of(sk13, rest),
                        np.zeros((sk13.joint_count, 3)), k_r=5.0, w_e=0.0)
    assert r == pytest.approx(np.exp(-0.2), abs=1e-9)
    assert r == pytest.approx(0.8187, abs=1e-4)
    # strictly decreasing in tracking error
    last = 2.0
    for err in (0.0, 0.1, 0.2, 0.3, 0.5):
        ri = tracking_reward(frame_of(sk13, rest + [err, 0.0, 0.0]),
                             frame_of(sk13, rest), np.zeros((sk13.joint_count, 3)))
        assert ri < last
        last = ri
    # energy penalty
    act = np.full((sk13.joint_count, 3), 0.1)
    r_e = tracking_reward(frame_of(sk13, rest), frame_of(sk13, rest), act,
                          k_r=5.0, w_e=0.01)
    assert r_e == pytest.approx(1.0 - 0.01 * float((act ** 2).sum()), abs=1e-12)


def test_reset_check_boundary(sk13):
    rest = sk13.rest_pose()
    assert not reset_check(frame_of(sk13, rest), frame_of(sk13, rest))
    one = rest.copy()
    one[3, 0] += 0.6
    assert reset_check(frame_of(sk13, one), frame_of(sk13, rest))
    # the 0.5 m boundary itself terminates (closed threshold)
    edge = rest.copy()
    edge[3, 0] += 0.5
    assert reset_check(frame_of(sk13, edge), frame_of(sk13, rest))
    near = rest.copy()
    near[3, 0] += 0.499999
    assert not reset_check(frame_of(sk13, near), frame_of(sk13, rest))


def test_policy_checkpoint_round_trip(tmp_path, sk13, small_cfg):
    policy = TrackingPolicy.fresh(sk13, small_cfg.tracker, small_cfg.sim.a_max, seed=3)
    path = tmp_path / "tracker.lmck"
    policy.save(path, "deadbeef", phase="pretrain")
    again = TrackingPolicy.load(path)
    assert again.phase == "pretrain"
    assert again.config_hash == "deadbeef"
    state = np.random.default_rng(2).normal(0, 1, 12 * sk13.joint_count).astype(np.float32)
    assert np.array_equal(policy.act(state), again.act(state))
