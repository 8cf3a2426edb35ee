"""Batched, differentiable mirrors of the numpy kinematics.

Used by the joint-position loss and autoregressive training rollouts.
Tensors keep whatever dtype they arrive with; gradient-check mode runs the
same code in float64.
"""

from __future__ import annotations

import numpy as np
import torch

from .pose import BODY_JOINTS, DELTA_DIM, POSE_DIM
from .skeleton import KinematicSkeleton

_EPS = 1e-8


def rot6d_to_matrix_t(r: torch.Tensor) -> torch.Tensor:
    """(..., 6) -> (..., 3, 3) via Gram-Schmidt; columns are the basis."""
    a1, a2 = r[..., 0:3], r[..., 3:6]
    b1 = a1 / a1.norm(dim=-1, keepdim=True).clamp_min(_EPS)
    a2 = a2 - (b1 * a2).sum(dim=-1, keepdim=True) * b1
    b2 = a2 / a2.norm(dim=-1, keepdim=True).clamp_min(_EPS)
    b3 = torch.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


def matrix_to_rot6d_t(m: torch.Tensor) -> torch.Tensor:
    """(..., 3, 3) -> (..., 6): first two columns, flattened."""
    return torch.cat([m[..., :, 0], m[..., :, 1]], dim=-1)


def split_pose(pose: torch.Tensor):
    """(B, 135) -> translation (B, 3), root 6D (B, 6), joints (B, 21, 6)."""
    if pose.shape[-1] != POSE_DIM:
        raise ValueError(f"pose must have {POSE_DIM} channels")
    return pose[..., 0:3], pose[..., 3:9], pose[..., 9:].reshape(*pose.shape[:-1], BODY_JOINTS, 6)


def split_delta(delta: torch.Tensor):
    """(B, 134) -> xy (B, 2), root 6D (B, 6), joints (B, 21, 6)."""
    if delta.shape[-1] != DELTA_DIM:
        raise ValueError(f"delta must have {DELTA_DIM} channels")
    return delta[..., 0:2], delta[..., 2:8], delta[..., 8:].reshape(*delta.shape[:-1], BODY_JOINTS, 6)


def skeleton_tensors(skeleton: KinematicSkeleton, dtype=torch.float32):
    offsets = torch.from_numpy(np.asarray(skeleton.offsets, dtype=np.float64)).to(dtype)
    return list(skeleton.parent), offsets


def fk_positions_t(pose: torch.Tensor, parents: list, offsets: torch.Tensor) -> torch.Tensor:
    """(B, 135) -> (B, J, 3) global joint positions."""
    trans, root6, joints6 = split_pose(pose)
    rot_root = rot6d_to_matrix_t(root6)
    rot_joints = rot6d_to_matrix_t(joints6)
    positions = [trans]
    globals_ = [rot_root]
    for j in range(1, len(parents)):
        p = parents[j]
        off = offsets[j].to(pose.dtype)
        positions.append(positions[p] + globals_[p] @ off)
        globals_.append(globals_[p] @ rot_joints[..., j - 1, :, :])
    return torch.stack(positions, dim=-2)


def root_yaw_t(root6: torch.Tensor) -> torch.Tensor:
    """Yaw of the root's forward (+x) axis projected to the ground plane."""
    fwd = rot6d_to_matrix_t(root6)[..., :, 0]
    return torch.atan2(fwd[..., 1], fwd[..., 0])


def apply_delta_t(pose: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
    """Differentiable pose update; pelvis z carried forward unchanged."""
    trans, root6, joints6 = split_pose(pose)
    dxy, droot6, djoints6 = split_delta(delta)
    yaw = root_yaw_t(root6)
    c, s = torch.cos(yaw), torch.sin(yaw)
    world_x = c * dxy[..., 0] - s * dxy[..., 1]
    world_y = s * dxy[..., 0] + c * dxy[..., 1]
    new_trans = torch.stack([trans[..., 0] + world_x, trans[..., 1] + world_y, trans[..., 2]], dim=-1)
    new_root = matrix_to_rot6d_t(rot6d_to_matrix_t(root6) @ rot6d_to_matrix_t(droot6))
    new_joints = matrix_to_rot6d_t(rot6d_to_matrix_t(joints6) @ rot6d_to_matrix_t(djoints6))
    return torch.cat([new_trans, new_root, new_joints.reshape(*pose.shape[:-1], -1)], dim=-1)
