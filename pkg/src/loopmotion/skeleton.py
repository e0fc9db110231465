"""Skeleton definitions: joint tree, rest pose, and named joint sets.

Conventions used throughout the package:
  * Y is up, the ground plane is XZ.
  * heading 0 faces +X; heading theta rotates the facing direction to
    (cos(theta), 0, sin(theta)).
  * the character's left side is -Z at heading 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RepresentationError


@dataclass(frozen=True)
class SkeletonSpec:
    """Joint tree plus the joint subsets the rest of the system needs.

    rest_offsets[j] is the offset of joint j from its parent in the canonical
    standing pose (meters); for the root it is the absolute rest position.
    target_joints is the condition/target set (pelvis + end effectors).
    foot_joints are the four contact-label joints, ordered
    (left ankle, left toe, right ankle, right toe).
    """

    joint_names: tuple[str, ...]
    parent_index: tuple[int, ...]
    rest_offsets: np.ndarray
    target_joints: tuple[int, ...]
    foot_joints: tuple[int, int, int, int]
    hip_pair: tuple[int, int]  # (left hip, right hip), defines the facing direction
    frame_rate: float = 20.0

    def __post_init__(self):
        j = len(self.joint_names)
        if len(self.parent_index) != j or self.rest_offsets.shape != (j, 3):
            raise RepresentationError("skeleton field lengths disagree")
        if self.parent_index[0] != -1 or any(
            not (0 <= p < i) for i, p in enumerate(self.parent_index[1:], start=1)
        ):
            raise RepresentationError("parent_index must form a tree rooted at joint 0")
        lengths = np.linalg.norm(self.rest_offsets[1:], axis=1)
        if np.any(lengths <= 0.0):
            raise RepresentationError("rest bone lengths must be positive")
        if not self.target_joints or 0 not in self.target_joints:
            raise RepresentationError("target set must be non-empty and contain the pelvis")
        if self.frame_rate <= 0:
            raise RepresentationError("frame_rate must be positive")
        self.rest_offsets.setflags(write=False)

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    @property
    def feature_width(self) -> int:
        """Width of one relative-representation frame: 12*J - 1."""
        return 12 * self.joint_count - 1

    @property
    def pelvis(self) -> int:
        return 0

    def bone_length(self, joint: int) -> float:
        return float(np.linalg.norm(self.rest_offsets[joint]))

    def rest_pose(self) -> np.ndarray:
        """Absolute joint positions (J, 3) of the canonical standing pose."""
        pos = np.zeros((self.joint_count, 3))
        pos[0] = self.rest_offsets[0]
        for j in range(1, self.joint_count):
            pos[j] = pos[self.parent_index[j]] + self.rest_offsets[j]
        return pos

    def children(self, joint: int) -> list[int]:
        return [i for i, p in enumerate(self.parent_index) if p == joint]

    def joint_index(self, name: str) -> int:
        return self.joint_names.index(name)

    def describe(self) -> dict:
        return {"joints": self.joint_count, "frame_rate": self.frame_rate}


def _offsets_from_positions(positions: dict[str, tuple], names: list[str], parents: list[int]) -> np.ndarray:
    pos = np.array([positions[n] for n in names], dtype=float)
    off = pos.copy()
    for j in range(len(names) - 1, 0, -1):
        off[j] = pos[j] - pos[parents[j]]
    return off


def skeleton_22(frame_rate: float = 20.0) -> SkeletonSpec:
    """Full 22-joint skeleton (feature width 263)."""
    names = [
        "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
        "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
        "neck", "left_collar", "right_collar", "head", "left_shoulder",
        "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    ]
    parents = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19]
    # standing pose, x forward, y up, left side at -z
    positions = {
        "pelvis": (0.0, 0.94, 0.0),
        "left_hip": (0.0, 0.86, -0.10), "right_hip": (0.0, 0.86, 0.10),
        "spine1": (0.0, 1.06, 0.0),
        "left_knee": (0.0, 0.47, -0.10), "right_knee": (0.0, 0.47, 0.10),
        "spine2": (0.0, 1.19, 0.0),
        "left_ankle": (0.0, 0.08, -0.10), "right_ankle": (0.0, 0.08, 0.10),
        "spine3": (0.0, 1.31, 0.0),
        "left_foot": (0.12, 0.02, -0.10), "right_foot": (0.12, 0.02, 0.10),
        "neck": (0.0, 1.43, 0.0),
        "left_collar": (0.0, 1.38, -0.07), "right_collar": (0.0, 1.38, 0.07),
        "head": (0.0, 1.58, 0.0),
        "left_shoulder": (0.0, 1.40, -0.18), "right_shoulder": (0.0, 1.40, 0.18),
        "left_elbow": (0.0, 1.12, -0.21), "right_elbow": (0.0, 1.12, 0.21),
        "left_wrist": (0.0, 0.88, -0.23), "right_wrist": (0.0, 0.88, 0.23),
    }
    return SkeletonSpec(
        joint_names=tuple(names),
        parent_index=tuple(parents),
        rest_offsets=_offsets_from_positions(positions, names, parents),
        target_joints=(0, 20, 21, 10, 11),
        foot_joints=(7, 10, 8, 11),
        hip_pair=(1, 2),
        frame_rate=frame_rate,
    )


def skeleton_13(frame_rate: float = 20.0) -> SkeletonSpec:
    """Reduced 13-joint skeleton for fast tests (feature width 155).

    Hands attach directly to the chest (no elbows), so hand targets live on a
    sphere around the chest; the procedural corpus accounts for that.
    """
    names = [
        "pelvis", "left_hip", "right_hip", "chest", "left_knee", "right_knee",
        "left_ankle", "right_ankle", "left_foot", "right_foot", "head",
        "left_hand", "right_hand",
    ]
    parents = [-1, 0, 0, 0, 1, 2, 4, 5, 6, 7, 3, 3, 3]
    positions = {
        "pelvis": (0.0, 0.94, 0.0),
        "left_hip": (0.0, 0.86, -0.10), "right_hip": (0.0, 0.86, 0.10),
        "chest": (0.0, 1.25, 0.0),
        "left_knee": (0.0, 0.47, -0.10), "right_knee": (0.0, 0.47, 0.10),
        "left_ankle": (0.0, 0.08, -0.10), "right_ankle": (0.0, 0.08, 0.10),
        "left_foot": (0.12, 0.02, -0.10), "right_foot": (0.12, 0.02, 0.10),
        "head": (0.0, 1.55, 0.0),
        "left_hand": (0.10, 0.88, -0.28), "right_hand": (0.10, 0.88, 0.28),
    }
    return SkeletonSpec(
        joint_names=tuple(names),
        parent_index=tuple(parents),
        rest_offsets=_offsets_from_positions(positions, names, parents),
        target_joints=(0, 11, 12, 8, 9),
        foot_joints=(6, 8, 7, 9),
        hip_pair=(1, 2),
        frame_rate=frame_rate,
    )


def make_skeleton(joints: int, frame_rate: float = 20.0) -> SkeletonSpec:
    if joints == 22:
        return skeleton_22(frame_rate)
    if joints == 13:
        return skeleton_13(frame_rate)
    raise RepresentationError(f"no built-in skeleton with {joints} joints")
