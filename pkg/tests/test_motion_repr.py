import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from loopmotion.errors import RepresentationError
from loopmotion.motion import (FeatureLayout, GlobalFrame, GlobalMotion,
                               RelativeMotion, TargetCondition, angle_diff,
                               foot_contact_labels, global_to_relative,
                               heading_from_positions, hold_pose, identity_anchor,
                               relative_to_global, relative_to_global_torch,
                               wrap_angle, yaw_matrix)


def make_wander(sk, n=30, seed=0, turn=0.1, step=0.06):
    """Random smooth world-frame motion for round-trip tests."""
    rng = np.random.default_rng(seed)
    theta = np.cumsum(rng.uniform(-turn, turn, n))
    root = np.cumsum(rng.uniform(-step, step, (n, 2)), axis=0)
    rest = sk.rest_pose()
    local = rest - [rest[0, 0], 0.0, rest[0, 2]]
    pos = np.zeros((n, sk.joint_count, 3))
    for i in range(n):
        wobble = local + rng.normal(0, 0.02, local.shape)
        world = wobble @ yaw_matrix(theta[i]).T
        world[:, 0] += root[i, 0]
        world[:, 2] += root[i, 1]
        pos[i] = world
    vel = np.zeros_like(pos)
    vel[1:] = (pos[1:] - pos[:-1]) * sk.frame_rate
    vel[0] = vel[1]
    return GlobalMotion(pos, vel, wrap_angle(theta))


def test_feature_width(sk13, sk22):
    assert sk13.feature_width == 12 * 13 - 1 == 155
    assert sk22.feature_width == 12 * 22 - 1 == 263
    assert FeatureLayout(22).width == 263


def test_static_hold_is_fixed_point(sk13):
    # all-zero velocities and a constant pose stay put at the anchor
    anchor = identity_anchor(sk13)
    held = hold_pose(sk13, anchor, 6)
    rel = global_to_relative(sk13, held)
    assert np.allclose(rel.features[:, :3], 0.0)
    back = relative_to_global(sk13, rel, anchor)
    assert np.abs(back.positions - held.positions).max() < 1e-12
    assert back.positions[0, 0, 1] == pytest.approx(anchor.joint_pos[0, 1])


def test_single_frame_advances_along_facing(sk13):
    # one frame with local forward velocity 0.1 m advances 0.1 m along facing
    anchor = identity_anchor(sk13)
    rel = global_to_relative(sk13, hold_pose(sk13, anchor, 2))
    feats = rel.features[:1].copy()
    feats[0, 1] = 0.1  # local x velocity = facing axis at heading 0
    out = relative_to_global(sk13, RelativeMotion(feats), anchor)
    assert out.positions[0, 0, 0] == pytest.approx(0.1)
    assert out.positions[0, 0, 2] == pytest.approx(0.0)
    # rotated anchor: the advance follows the anchor's facing direction
    pos = anchor.joint_pos @ yaw_matrix(np.pi / 2).T
    rot = GlobalFrame(pos, np.zeros_like(pos), np.pi / 2)
    out2 = relative_to_global(sk13, RelativeMotion(feats), rot)
    delta = out2.positions[0, 0] - rot.joint_pos[0]
    assert np.allclose(delta, [0.0, 0.0, 0.1], atol=1e-9)


def test_round_trip_wandering_motion(sk13, sk22):
    for sk in (sk13, sk22):
        motion = make_wander(sk, n=40, seed=3)
        rel = global_to_relative(sk, motion)
        back = relative_to_global(sk, rel, motion.frame(0))
        assert np.abs(back.positions - motion.positions).max() < 1e-3


def test_equivariance(sk13):
    motion = make_wander(sk13, n=25, seed=5)
    rel = global_to_relative(sk13, motion)
    base = relative_to_global(sk13, rel, motion.frame(0))
    phi, off = 0.8, np.array([2.0, 0.0, -1.5])
    pos2 = motion.positions[0] @ yaw_matrix(phi).T + off
    vel2 = motion.velocities[0] @ yaw_matrix(phi).T
    moved = GlobalFrame(pos2, vel2, motion.headings[0] + phi)
    out = relative_to_global(sk13, rel, moved)
    expect = base.positions @ yaw_matrix(phi).T + off
    assert np.abs(out.positions - expect).max() < 1e-6


def test_pure_rotation_gives_yaw_rate_only(sk13):
    # in-place rotation: yaw rate equals omega, ground velocities stay zero
    omega = 0.07
    n = 12
    rest = sk13.rest_pose()
    local = rest - [rest[0, 0], 0.0, rest[0, 2]]
    pos = np.stack([local @ yaw_matrix(omega * i).T for i in range(n)])
    vel = np.zeros_like(pos)
    vel[1:] = (pos[1:] - pos[:-1]) * sk13.frame_rate
    motion = GlobalMotion(pos, vel, omega * np.arange(n))
    rel = global_to_relative(sk13, motion)
    assert np.allclose(rel.features[1:, 0], omega, atol=1e-12)
    assert np.abs(rel.features[1:, 1:3]).max() < 1e-12


def test_g2r_requires_two_frames(sk13):
    held = hold_pose(sk13, identity_anchor(sk13), 1)
    with pytest.raises(RepresentationError):
        global_to_relative(sk13, held)


def test_degenerate_bone_raises(sk13):
    motion = hold_pose(sk13, identity_anchor(sk13), 3)
    motion.positions[1, 4] = motion.positions[1, 1]  # knee collapses onto hip
    with pytest.raises(RepresentationError):
        global_to_relative(sk13, motion)


def test_width_mismatch_raises(sk13):
    bad = RelativeMotion(np.zeros((4, 42)))
    with pytest.raises(RepresentationError):
        relative_to_global(sk13, bad, identity_anchor(sk13))


def test_foot_contacts_rule(sk13):
    held = hold_pose(sk13, identity_anchor(sk13), 3)
    # pin one foot joint to the ground at rest: contact
    labels = foot_contact_labels(sk13, held, 0.05, 0.1)
    toe_cols = [1, 3]  # toes sit at 0.02 m in the rest pose
    assert np.all(labels[:, toe_cols] == 1.0)
    # foot at 0.5 m: no contact
    lifted = hold_pose(sk13, identity_anchor(sk13), 3)
    lifted.positions[:, sk13.foot_joints[1], 1] = 0.5
    assert np.all(foot_contact_labels(sk13, lifted, 0.05, 0.1)[:, 1] == 0.0)
    # low but fast foot: no contact (0.02 m at 0.5 m/s with v_c = 0.1)
    fast = hold_pose(sk13, identity_anchor(sk13), 3)
    fast.velocities[:, sk13.foot_joints[1], 0] = 0.5
    assert np.all(foot_contact_labels(sk13, fast, 0.05, 0.1)[:, 1] == 0.0)


def test_angle_diff_examples():
    assert angle_diff(np.pi / 2, np.pi / 2) == pytest.approx(0.0)
    # wrap arithmetic: (pi - 0.1) - (-pi + 0.1) = 2*pi - 0.2 -> -0.2
    assert angle_diff(np.pi - 0.1, -np.pi + 0.1) == pytest.approx(-0.2)
    assert angle_diff(-np.pi, np.pi) == pytest.approx(0.0)


@given(st.floats(-50, 50), st.floats(-50, 50))
@settings(max_examples=200, deadline=None)
def test_angle_diff_range_property(a, b):
    d = float(angle_diff(a, b))
    assert -np.pi < d <= np.pi + 1e-12
    assert abs(d) <= np.pi + 1e-12
    # equals a - b modulo 2*pi
    assert abs((d - (a - b) + np.pi) % (2 * np.pi) - np.pi) < 1e-6


def test_r2g_gradient_matches_finite_differences(sk13):
    rng = np.random.default_rng(11)
    feats = torch.tensor(rng.normal(0, 0.1, (5, sk13.feature_width)),
                         dtype=torch.float64, requires_grad=True)
    w_pos = torch.tensor(rng.normal(0, 1, (5, sk13.joint_count, 3)), dtype=torch.float64)
    w_head = torch.tensor(rng.normal(0, 1, (5,)), dtype=torch.float64)

    def objective(x):
        pos, head = relative_to_global_torch(sk13, x)
        return (w_pos * pos).sum() + (w_head * head).sum()

    objective(feats).backward()
    grad = feats.grad
    base = feats.detach()
    eps = 1e-6
    for frame, col in [(rng.integers(5), rng.integers(sk13.feature_width))
                       for _ in range(100)]:
        up = base.clone()
        up[frame, col] += eps
        down = base.clone()
        down[frame, col] -= eps
        fd = (float(objective(up)) - float(objective(down))) / (2 * eps)
        an = float(grad[frame, col])
        assert abs(fd - an) <= 1e-3 * max(abs(fd), abs(an), 1e-6)


def test_heading_from_positions(sk13):
    rest = sk13.rest_pose()
    assert heading_from_positions(sk13, rest) == pytest.approx(0.0)
    for phi in (0.5, -2.2, 3.0):
        rotated = rest @ yaw_matrix(phi).T
        assert angle_diff(heading_from_positions(sk13, rotated), phi) == pytest.approx(0.0, abs=1e-9)


def test_target_condition_invalid_slots_ignored(sk13):
    t = TargetCondition.none(sk13)
    enc_a = t.encode()
    t.joint_targets[2] = [9.0, 9.0, 9.0]  # invalid slot: must not leak
    enc_b = t.encode()
    assert np.array_equal(enc_a, enc_b)
    t2 = TargetCondition.for_joint(sk13, 0, [1.0, 0.9, 0.0], 0.3)
    assert t2.encode()[0] == pytest.approx(1.0)
    width = 4 * len(sk13.target_joints) + 2
    assert t.encode().shape == (width,) == t2.encode().shape


def test_target_localization(sk13):
    t = TargetCondition.for_joint(sk13, 0, [1.0, 0.9, 1.0], np.pi / 2)
    local = t.localized(np.pi / 2, np.array([1.0, 0.0]))
    # anchor at (1, 0) facing +z: the point (1, 1) sits 1 m ahead
    assert np.allclose(local.joint_targets[0], [1.0, 0.9, 0.0], atol=1e-9)
    assert local.heading_target == pytest.approx(0.0)
