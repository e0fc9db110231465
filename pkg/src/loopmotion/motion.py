"""Motion representations and the converters between them.

Two representations:
  * relative: per-frame features of width F = 12*J - 1, laid out as
    (yaw rate, local ground velocity x/z, root height, local joint positions,
    local joint 6D rotations, root-local joint velocities, foot contacts).
    Frame n is expressed relative to frame n-1's root transform; linear
    velocities are meters/frame, the yaw rate is radians/frame.
  * global: world-frame joint positions and linear velocities (m/s) plus the
    ground-plane heading angle per frame.

relative_to_global integrates the root transform from an anchor frame and is
differentiable with respect to the features (torch path), which the planner's
target loss relies on.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from .errors import RepresentationError, ShapeError
from .skeleton import SkeletonSpec

UP = np.array([0.0, 1.0, 0.0])

# defaults for the foot-contact height heuristic, overridable via config
CONTACT_HEIGHT = 0.05  # m
CONTACT_SPEED = 0.1    # m/s


@dataclass
class FeatureLayout:
    """Index slices into one relative-representation frame of width 12*J - 1."""

    joints: int

    def __post_init__(self):
        j = self.joints
        self.yaw_rate = 0
        self.vel_x = 1
        self.vel_z = 2
        self.height = 3
        self.joint_pos = slice(4, 4 + 3 * (j - 1))
        self.joint_rot = slice(self.joint_pos.stop, self.joint_pos.stop + 6 * (j - 1))
        self.joint_vel = slice(self.joint_rot.stop, self.joint_rot.stop + 3 * j)
        self.contacts = slice(self.joint_vel.stop, self.joint_vel.stop + 4)
        self.width = self.contacts.stop
        assert self.width == 12 * j - 1


@dataclass
class GlobalFrame:
    """One world-frame pose: positions (J, 3), velocities (J, 3) m/s, heading rad."""

    joint_pos: np.ndarray
    joint_vel: np.ndarray
    heading: float

    def __post_init__(self):
        self.heading = float(wrap_angle(self.heading))
        if not (np.all(np.isfinite(self.joint_pos)) and np.all(np.isfinite(self.joint_vel))):
            raise RepresentationError("non-finite global frame")

    @property
    def root_xz(self) -> np.ndarray:
        return self.joint_pos[0, [0, 2]].copy()


@dataclass
class GlobalMotion:
    """World-frame motion: positions (N, J, 3), velocities (N, J, 3), headings (N,)."""

    positions: np.ndarray
    velocities: np.ndarray
    headings: np.ndarray

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def joint_count(self) -> int:
        return self.positions.shape[1]

    def frame(self, i: int) -> GlobalFrame:
        return GlobalFrame(self.positions[i].copy(), self.velocities[i].copy(), float(self.headings[i]))

    def slice(self, start: int, stop: int) -> "GlobalMotion":
        return GlobalMotion(self.positions[start:stop].copy(),
                            self.velocities[start:stop].copy(),
                            self.headings[start:stop].copy())

    @classmethod
    def from_frames(cls, frames: list[GlobalFrame]) -> "GlobalMotion":
        return cls(np.stack([f.joint_pos for f in frames]),
                   np.stack([f.joint_vel for f in frames]),
                   np.array([f.heading for f in frames]))

    @classmethod
    def concatenate(cls, parts: list["GlobalMotion"]) -> "GlobalMotion":
        return cls(np.concatenate([p.positions for p in parts]),
                   np.concatenate([p.velocities for p in parts]),
                   np.concatenate([p.headings for p in parts]))


@dataclass
class RelativeMotion:
    """Relative-representation motion: features (N, F) with F = 12*J - 1."""

    features: np.ndarray

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]

    @property
    def joint_count(self) -> int:
        if (self.width + 1) % 12:
            raise RepresentationError(f"feature width {self.width} is not 12*J - 1")
        return (self.width + 1) // 12

    def slice(self, start: int, stop: int) -> "RelativeMotion":
        return RelativeMotion(self.features[start:stop].copy())


@dataclass
class TargetCondition:
    """Per-joint target positions with validity flags plus a heading target.

    Entries follow the order of skeleton.target_joints. Invalid entries are
    ignored by every consumer: their values never influence any output.
    """

    joint_targets: np.ndarray  # (K, 3) m
    joint_valid: np.ndarray    # (K,) bool
    heading_target: float
    heading_valid: bool

    @classmethod
    def none(cls, skeleton: SkeletonSpec) -> "TargetCondition":
        k = len(skeleton.target_joints)
        return cls(np.zeros((k, 3)), np.zeros(k, dtype=bool), 0.0, False)

    @classmethod
    def for_joint(cls, skeleton: SkeletonSpec, joint: int, position,
                  heading: float | None = None) -> "TargetCondition":
        """Single valid joint target; joint is a skeleton joint index."""
        t = cls.none(skeleton)
        k = skeleton.target_joints.index(joint)
        t.joint_targets[k] = np.asarray(position, dtype=float)
        t.joint_valid[k] = True
        if heading is not None:
            t.heading_target = float(heading)
            t.heading_valid = True
        return t

    def encode(self) -> np.ndarray:
        """Fixed-width vector (values + validity flags + heading + flag).

        Invalid slots are zeroed so that their stored values cannot leak into
        any consumer.
        """
        vals = np.where(self.joint_valid[:, None], self.joint_targets, 0.0)
        head = self.heading_target if self.heading_valid else 0.0
        return np.concatenate([
            vals.reshape(-1),
            self.joint_valid.astype(float),
            [head, float(self.heading_valid)],
        ]).astype(np.float32)

    def localized(self, anchor_heading: float, anchor_xz: np.ndarray) -> "TargetCondition":
        """Express world-frame targets relative to an anchor root transform."""
        c, s = np.cos(-anchor_heading), np.sin(-anchor_heading)
        shifted = self.joint_targets.copy()
        shifted[:, 0] -= anchor_xz[0]
        shifted[:, 2] -= anchor_xz[1]
        local = shifted.copy()
        local[:, 0] = c * shifted[:, 0] - s * shifted[:, 2]
        local[:, 2] = s * shifted[:, 0] + c * shifted[:, 2]
        return TargetCondition(local, self.joint_valid.copy(),
                               float(wrap_angle(self.heading_target - anchor_heading)),
                               self.heading_valid)


# ---------------------------------------------------------------------------
# angles and yaw rotations


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a), 2.0 * np.pi)


def angle_diff(a, b):
    """a - b wrapped to (-pi, pi]."""
    return wrap_angle(np.asarray(a) - np.asarray(b))


def angle_diff_torch(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    d = a - b
    return torch.atan2(torch.sin(d), torch.cos(d))


def yaw_matrix(theta: float) -> np.ndarray:
    """Rotation about +Y mapping local +X to the facing direction of theta."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def rotate_xz(x, z, theta):
    """Rotate ground-plane components by theta (numpy, elementwise)."""
    c, s = np.cos(theta), np.sin(theta)
    return c * x - s * z, s * x + c * z


def heading_from_positions(skeleton: SkeletonSpec, positions: np.ndarray) -> float:
    """Facing angle from the hip axis; positions (J, 3)."""
    l, r = skeleton.hip_pair
    across = positions[l] - positions[r]
    # forward = across x up, projected to the ground plane
    fx, fz = -across[2], across[0]
    if fx * fx + fz * fz < 1e-12:
        return 0.0
    return float(np.arctan2(fz, fx))


# ---------------------------------------------------------------------------
# relative -> global (torch core, differentiable; numpy wrapper below)


def relative_to_global_torch(skeleton: SkeletonSpec, features: torch.Tensor,
                             init_heading=None, init_xz=None):
    """Integrate features (..., N, F) into world joint positions.

    Returns (positions (..., N, J, 3), headings (..., N)). Differentiable with
    respect to features. init_heading (...,) and init_xz (..., 2) default to
    the identity anchor (origin, heading 0).
    """
    j = skeleton.joint_count
    lay = FeatureLayout(j)
    if features.shape[-1] != lay.width:
        raise RepresentationError(
            f"feature width {features.shape[-1]} does not match skeleton (expected {lay.width})")
    batch = features.shape[:-2]
    n = features.shape[-2]
    dtype = features.dtype
    if init_heading is None:
        init_heading = torch.zeros(batch, dtype=dtype)
    else:
        init_heading = torch.as_tensor(init_heading, dtype=dtype).expand(batch)
    if init_xz is None:
        init_xz = torch.zeros(batch + (2,), dtype=dtype)
    else:
        init_xz = torch.as_tensor(init_xz, dtype=dtype).expand(batch + (2,))

    yaw_rate = features[..., lay.yaw_rate]
    headings = init_heading.unsqueeze(-1) + torch.cumsum(yaw_rate, dim=-1)
    prev_headings = headings - yaw_rate  # heading of the previous frame (anchor for n=0)

    vx = features[..., lay.vel_x]
    vz = features[..., lay.vel_z]
    cp, sp = torch.cos(prev_headings), torch.sin(prev_headings)
    dx = cp * vx - sp * vz
    dz = sp * vx + cp * vz
    root_x = init_xz[..., 0:1] + torch.cumsum(dx, dim=-1)
    root_z = init_xz[..., 1:2] + torch.cumsum(dz, dim=-1)
    root_y = features[..., lay.height]

    local = features[..., lay.joint_pos].reshape(batch + (n, j - 1, 3))
    c, s = torch.cos(headings).unsqueeze(-1), torch.sin(headings).unsqueeze(-1)
    wx = c * local[..., 0] - s * local[..., 2] + root_x.unsqueeze(-1)
    wz = s * local[..., 0] + c * local[..., 2] + root_z.unsqueeze(-1)
    wy = local[..., 1]

    root = torch.stack([root_x, root_y, root_z], dim=-1).unsqueeze(-2)
    rest = torch.stack([wx, wy, wz], dim=-1)
    positions = torch.cat([root, rest], dim=-2)
    return positions, headings


def relative_to_global(skeleton: SkeletonSpec, motion: RelativeMotion,
                       init: GlobalFrame) -> GlobalMotion:
    """R2G: integrate a relative motion from an anchor frame.

    The anchor contributes its root ground-plane position and heading; the
    first feature frame describes the motion from the anchor to frame 0.
    World velocities are forward differences scaled by the frame rate.
    """
    if len(motion) == 0:
        raise RepresentationError("empty motion")
    feats = torch.from_numpy(np.ascontiguousarray(motion.features, dtype=np.float64))
    pos_t, head_t = relative_to_global_torch(
        skeleton, feats,
        init_heading=torch.tensor(init.heading, dtype=torch.float64),
        init_xz=torch.tensor([init.joint_pos[0, 0], init.joint_pos[0, 2]], dtype=torch.float64),
    )
    positions = pos_t.numpy()
    headings = wrap_angle(head_t.numpy())
    fps = skeleton.frame_rate
    if len(motion) > 1:
        vel = np.empty_like(positions)
        vel[:-1] = (positions[1:] - positions[:-1]) * fps
        vel[-1] = vel[-2]
    else:
        vel = (positions - init.joint_pos[None]) * fps
    return GlobalMotion(positions, vel, headings)


# ---------------------------------------------------------------------------
# global -> relative


def _skew(v: np.ndarray) -> np.ndarray:
    """(N, 3) -> (N, 3, 3) cross-product matrices."""
    n = v.shape[0]
    k = np.zeros((n, 3, 3))
    k[:, 0, 1], k[:, 0, 2] = -v[:, 2], v[:, 1]
    k[:, 1, 0], k[:, 1, 2] = v[:, 2], -v[:, 0]
    k[:, 2, 0], k[:, 2, 1] = -v[:, 1], v[:, 0]
    return k


def _rotations_from_to(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Shortest rotations taking unit vector a (3,) to unit vectors b (N, 3)."""
    v = np.cross(np.broadcast_to(a, b.shape), b)
    c = b @ a
    out = np.empty((b.shape[0], 3, 3))
    regular = c > -1.0 + 1e-8
    k = _skew(v[regular])
    out[regular] = (np.eye(3) + k
                    + (k @ k) / (1.0 + c[regular])[:, None, None])
    if not np.all(regular):
        helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        axis = np.cross(a, helper)
        axis /= np.linalg.norm(axis)
        out[~regular] = 2.0 * np.outer(axis, axis) - np.eye(3)
    return out


def _local_rotations_6d(skeleton: SkeletonSpec, local_pos: np.ndarray) -> np.ndarray:
    """First-order IK: per-bone alignment rotations composed down the tree.

    local_pos (N, J, 3) are heading-local positions. Each non-root joint gets
    the rotation of its incoming bone relative to its parent's bone alignment,
    encoded as the first two columns of the rotation matrix. Returns
    (N, J - 1, 6).
    """
    n, j, _ = local_pos.shape
    eye = np.broadcast_to(np.eye(3), (n, 3, 3))
    world = [eye] + [None] * (j - 1)
    out = np.zeros((n, j - 1, 6))
    for i in range(1, j):
        parent = skeleton.parent_index[i]
        rest_dir = skeleton.rest_offsets[i] / skeleton.bone_length(i)
        obs = local_pos[:, i] - local_pos[:, parent]
        norm = np.linalg.norm(obs, axis=1)
        if np.any(norm < 1e-8):
            frame = int(np.argmax(norm < 1e-8))
            raise RepresentationError(f"degenerate bone into joint {i} at frame {frame}")
        q = _rotations_from_to(rest_dir, obs / norm[:, None])
        world[i] = q
        local = np.transpose(world[parent], (0, 2, 1)) @ q
        out[:, i - 1, :3] = local[:, :, 0]
        out[:, i - 1, 3:] = local[:, :, 1]
    return out


def foot_contact_labels(skeleton: SkeletonSpec, motion: GlobalMotion,
                        height_thresh: float = CONTACT_HEIGHT,
                        speed_thresh: float = CONTACT_SPEED) -> np.ndarray:
    """Height-heuristic contact labels (N, 4): low and slow means contact."""
    fj = list(skeleton.foot_joints)
    heights = motion.positions[:, fj, 1]
    speed = np.linalg.norm(motion.velocities[:, fj][:, :, [0, 2]], axis=-1)
    return ((heights <= height_thresh) & (speed <= speed_thresh)).astype(np.float64)


def global_to_relative(skeleton: SkeletonSpec, motion: GlobalMotion,
                       contact_height: float = CONTACT_HEIGHT,
                       contact_speed: float = CONTACT_SPEED) -> RelativeMotion:
    """G2R: express each frame relative to the previous frame's root transform.

    Frame 0 has no predecessor: its root velocities are zero, so integrating
    the result from frame 0's own transform reproduces the input exactly.
    Requires at least 2 frames.
    """
    n = len(motion)
    if n < 2:
        raise RepresentationError("global_to_relative needs at least 2 frames")
    j = skeleton.joint_count
    if motion.joint_count != j:
        raise RepresentationError("joint count does not match skeleton")
    lay = FeatureLayout(j)
    feats = np.zeros((n, lay.width))

    theta = motion.headings
    root = motion.positions[:, 0]

    feats[1:, lay.yaw_rate] = angle_diff(theta[1:], theta[:-1])
    dxz = root[1:, [0, 2]] - root[:-1, [0, 2]]
    lx, lz = rotate_xz(dxz[:, 0], dxz[:, 1], -theta[:-1])
    feats[1:, lay.vel_x] = lx
    feats[1:, lay.vel_z] = lz
    feats[:, lay.height] = root[:, 1]

    # heading-local joint positions (y stays absolute)
    q = motion.positions - np.concatenate([root[:, None, [0]], np.zeros((n, 1, 1)), root[:, None, [2]]], axis=2)
    px, pz = rotate_xz(q[:, :, 0], q[:, :, 2], -theta[:, None])
    local_pos = np.stack([px, q[:, :, 1], pz], axis=-1)
    feats[:, lay.joint_pos] = local_pos[:, 1:].reshape(n, -1)

    feats[:, lay.joint_rot] = _local_rotations_6d(skeleton, local_pos).reshape(n, -1)

    dpos = motion.positions[1:] - motion.positions[:-1]
    vx, vz = rotate_xz(dpos[:, :, 0], dpos[:, :, 2], -theta[:-1, None])
    feats[1:, lay.joint_vel] = np.stack([vx, dpos[:, :, 1], vz], axis=-1).reshape(n - 1, -1)
    feats[0, lay.joint_vel] = feats[1, lay.joint_vel]

    feats[:, lay.contacts] = foot_contact_labels(skeleton, motion, contact_height, contact_speed)
    return RelativeMotion(feats)


def identity_anchor(skeleton: SkeletonSpec) -> GlobalFrame:
    """Rest-pose anchor at the origin with heading 0."""
    pos = skeleton.rest_pose()
    pos[:, 0] -= pos[0, 0]
    pos[:, 2] -= pos[0, 2]
    return GlobalFrame(pos, np.zeros_like(pos), 0.0)


def anchor_from_frame(frame: GlobalFrame) -> GlobalFrame:
    """Reduce a frame to its anchoring transform (used to seed R2G)."""
    return frame


def hold_pose(skeleton: SkeletonSpec, frame: GlobalFrame, frames: int) -> GlobalMotion:
    """A static motion holding one pose (zero velocities)."""
    pos = np.repeat(frame.joint_pos[None], frames, axis=0)
    vel = np.zeros_like(pos)
    headings = np.full(frames, frame.heading)
    return GlobalMotion(pos, vel, headings)
