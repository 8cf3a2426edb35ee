"""Per-frame character state, pelvis-aligned deltas, and forward kinematics.

A pose is pelvis translation (world meters), root orientation (6D), and 21
local joint rotations (6D): 3 + 6 + 21*6 = 135 channels.  A delta is the
change between consecutive poses with global yaw removed: xy translation in
the previous frame's yaw-aligned frame plus relative rotations, 2 + 6 +
21*6 = 134 channels.  Relative rotations are composed multiplicatively
(prev^-1 * next) and re-encoded in 6D so apply_delta inverts compute_delta
exactly on the rotation manifold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRotation
from .rotations import (
    matrix_to_rot6d_unchecked,
    rot6d_to_matrix,
    rotation_z,
)
from .skeleton import KinematicSkeleton

BODY_JOINTS = 21  # non-root joints carrying local rotations
POSE_DIM = 3 + 6 + 6 * BODY_JOINTS  # 135
DELTA_DIM = 2 + 6 + 6 * BODY_JOINTS  # 134
FORWARD_AXIS = np.array([1.0, 0.0, 0.0])  # facing direction at identity root


@dataclass(frozen=True)
class PoseState:
    """One frame of character state."""

    pelvis_translation: np.ndarray  # (3,)
    root_orientation: np.ndarray  # (6,)
    joint_rotations: np.ndarray  # (21, 6)

    def __post_init__(self):
        object.__setattr__(
            self, "pelvis_translation", np.asarray(self.pelvis_translation, dtype=np.float64)
        )
        object.__setattr__(
            self, "root_orientation", np.asarray(self.root_orientation, dtype=np.float64)
        )
        object.__setattr__(
            self, "joint_rotations", np.asarray(self.joint_rotations, dtype=np.float64)
        )
        if self.pelvis_translation.shape != (3,):
            raise ValueError("pelvis_translation must be (3,)")
        if self.root_orientation.shape != (6,):
            raise ValueError("root_orientation must be (6,)")
        if self.joint_rotations.shape != (BODY_JOINTS, 6):
            raise ValueError(f"joint_rotations must be ({BODY_JOINTS}, 6)")

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [self.pelvis_translation, self.root_orientation, self.joint_rotations.ravel()]
        )

    @staticmethod
    def from_flat(v) -> "PoseState":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (POSE_DIM,):
            raise ValueError(f"flat pose must be ({POSE_DIM},)")
        return PoseState(v[:3], v[3:9], v[9:].reshape(BODY_JOINTS, 6))


@dataclass(frozen=True)
class DeltaFeature:
    """Pelvis-yaw-aligned change between two consecutive poses."""

    translation_xy: np.ndarray  # (2,)
    root_rotation: np.ndarray  # (6,)
    joint_rotations: np.ndarray  # (21, 6)

    def __post_init__(self):
        object.__setattr__(self, "translation_xy", np.asarray(self.translation_xy, dtype=np.float64))
        object.__setattr__(self, "root_rotation", np.asarray(self.root_rotation, dtype=np.float64))
        object.__setattr__(self, "joint_rotations", np.asarray(self.joint_rotations, dtype=np.float64))
        if self.translation_xy.shape != (2,):
            raise ValueError("translation_xy must be (2,)")
        if self.root_rotation.shape != (6,):
            raise ValueError("root_rotation must be (6,)")
        if self.joint_rotations.shape != (BODY_JOINTS, 6):
            raise ValueError(f"joint_rotations must be ({BODY_JOINTS}, 6)")

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [self.translation_xy, self.root_rotation, self.joint_rotations.ravel()]
        )

    @staticmethod
    def from_flat(v) -> "DeltaFeature":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (DELTA_DIM,):
            raise ValueError(f"flat delta must be ({DELTA_DIM},)")
        return DeltaFeature(v[:2], v[2:8], v[8:].reshape(BODY_JOINTS, 6))


def root_yaw(pose: PoseState) -> float:
    """Yaw angle of the root's forward axis projected onto the ground plane."""
    fwd = rot6d_to_matrix(pose.root_orientation) @ FORWARD_AXIS
    n = np.hypot(fwd[0], fwd[1])
    if n <= 1e-8:
        raise DegenerateRotation("root forward axis is vertical; yaw undefined")
    return float(np.arctan2(fwd[1], fwd[0]))


def heading_xy(pose: PoseState) -> np.ndarray:
    """Unit heading vector in the ground plane."""
    yaw = root_yaw(pose)
    return np.array([np.cos(yaw), np.sin(yaw)])


def forward_kinematics(pose: PoseState, skeleton: KinematicSkeleton) -> np.ndarray:
    """Global joint positions, shape (J, 3).

    Root position equals the pelvis translation; each child sits at
    parent position + parent global rotation @ offset.
    """
    positions, _ = forward_kinematics_full(pose, skeleton)
    return positions


def forward_kinematics_full(pose: PoseState, skeleton: KinematicSkeleton):
    """Global joint positions (J, 3) and global rotations (J, 3, 3)."""
    j = skeleton.joint_count
    positions = np.empty((j, 3))
    rotations = np.empty((j, 3, 3))
    positions[0] = pose.pelvis_translation
    rotations[0] = rot6d_to_matrix(pose.root_orientation)
    local = rot6d_to_matrix(pose.joint_rotations)  # (21, 3, 3)
    for i in range(1, j):
        p = skeleton.parent[i]
        positions[i] = positions[p] + rotations[p] @ skeleton.offsets[i]
        rotations[i] = rotations[p] @ local[i - 1]
    return positions, rotations


def compute_delta(prev: PoseState, next: PoseState) -> DeltaFeature:
    """Change from prev to next, expressed in prev's yaw-aligned frame."""
    yaw = root_yaw(prev)
    d_world = next.pelvis_translation - prev.pelvis_translation
    d_local = rotation_z(-yaw) @ d_world

    r_prev = rot6d_to_matrix(prev.root_orientation)
    r_next = rot6d_to_matrix(next.root_orientation)
    d_root = matrix_to_rot6d_unchecked(r_prev.T @ r_next)

    j_prev = rot6d_to_matrix(prev.joint_rotations)
    j_next = rot6d_to_matrix(next.joint_rotations)
    d_joints = matrix_to_rot6d_unchecked(np.swapaxes(j_prev, -1, -2) @ j_next)

    return DeltaFeature(d_local[:2], d_root, d_joints)


def apply_delta(
    pose: PoseState,
    delta: DeltaFeature,
    z_mode: str = "carry",
    z_value: float | None = None,
) -> PoseState:
    """Advance a pose by one delta.

    z_mode "carry" keeps the previous pelvis height (the delta carries no
    vertical channel); "override" writes z_value, used when a feedback
    correction supplies the authoritative height.
    """
    yaw = root_yaw(pose)
    step = rotation_z(yaw) @ np.array([delta.translation_xy[0], delta.translation_xy[1], 0.0])
    t = pose.pelvis_translation + step
    if z_mode == "carry":
        z = pose.pelvis_translation[2]
    elif z_mode == "override":
        if z_value is None:
            raise ValueError("z_mode='override' requires z_value")
        z = float(z_value)
    else:
        raise ValueError(f"unknown z_mode {z_mode!r}")
    t = np.array([t[0], t[1], z])

    r = rot6d_to_matrix(pose.root_orientation) @ rot6d_to_matrix(delta.root_rotation)
    j = rot6d_to_matrix(pose.joint_rotations) @ rot6d_to_matrix(delta.joint_rotations)

    return PoseState(t, matrix_to_rot6d_unchecked(r), matrix_to_rot6d_unchecked(j))
