"""Evaluation metrics and protocol grid generators.

Success rate, distance-to-goal and foot skate score goal-reaching runs;
L2P/L2Q/NPSS score in-betweening against ground truth.  The grid builders
enumerate the cylindrical single-joint sweep, the multi-joint pairing
protocol and the long-horizon sequential protocol in a deterministic,
documented order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientInitialPoses, LengthMismatch, TooShort
from .generate import DEFAULT_DURATION, DEFAULT_SUCCESS_RADIUS, EpisodeConfig
from .intention import ControlMask, GoalSpec, JointGoal
from .pose import PoseState, forward_kinematics, forward_kinematics_full, heading_xy
from .rotations import matrix_to_quaternion
from .skeleton import CONTROL_JOINT_NAMES, CONTROL_SET_SIZE, KinematicSkeleton

CONTACT_HEIGHT = 0.05
TRAVEL_FLOOR = 1e-6


def trace_positions(data: np.ndarray, skeleton: KinematicSkeleton) -> np.ndarray:
    """(T, 135) pose channels -> (T, J, 3) global joint positions."""
    return np.stack([forward_kinematics(PoseState.from_flat(row), skeleton) for row in data])


def joint_min_distances(positions: np.ndarray, skeleton: KinematicSkeleton, goals: GoalSpec) -> dict:
    """Per goal joint, the minimum distance to its target over all frames."""
    out = {}
    for name, goal in goals.joints.items():
        track = positions[:, skeleton.index(name), :]
        out[name] = float(np.linalg.norm(track - goal.position, axis=1).min())
    return out


def success_rate(positions: np.ndarray, skeleton: KinematicSkeleton, goals: GoalSpec,
                 radius: float = DEFAULT_SUCCESS_RADIUS) -> tuple:
    """Per-joint success flags and their mean."""
    dists = joint_min_distances(positions, skeleton, goals)
    flags = {name: d <= radius for name, d in dists.items()}
    aggregate = float(np.mean([float(v) for v in flags.values()])) if flags else 0.0
    return flags, aggregate


def distance_to_goal(positions: np.ndarray, skeleton: KinematicSkeleton, goals: GoalSpec) -> dict:
    """Minimum distance per goal joint, in centimeters."""
    return {name: 100.0 * d for name, d in joint_min_distances(positions, skeleton, goals).items()}


def foot_skate(positions: np.ndarray, skeleton: KinematicSkeleton,
               contact_height: float = CONTACT_HEIGHT) -> float:
    """Contact-weighted horizontal ankle sliding, percent of pelvis travel.

    Per frame transition and ankle: below contact_height, the xy
    displacement accumulates with weight 2 - 2^(h / contact_height).
    """
    if positions.shape[0] < 2:
        raise TooShort("foot skate needs at least 2 frames")
    feet = [skeleton.index("left_ankle"), skeleton.index("right_ankle")]
    skate = 0.0
    for j in feet:
        track = positions[:, j, :]
        disp = np.linalg.norm(np.diff(track[:, :2], axis=0), axis=1)
        h = track[1:, 2]
        contact = h < contact_height
        weight = 2.0 - np.power(2.0, np.clip(h / contact_height, 0.0, 1.0))
        skate += float((disp * weight * contact).sum())
    pelvis = positions[:, skeleton.index("pelvis"), :2]
    travel = float(np.linalg.norm(np.diff(pelvis, axis=0), axis=1).sum())
    return 100.0 * skate / max(travel, TRAVEL_FLOOR)


def global_rotations(data: np.ndarray, skeleton: KinematicSkeleton) -> np.ndarray:
    """(T, 135) -> (T, J, 3, 3) global joint rotations."""
    out = []
    for row in data:
        _, rots = forward_kinematics_full(PoseState.from_flat(row), skeleton)
        out.append(rots)
    return np.stack(out)


def l2p_l2q(pred_data: np.ndarray, gt_data: np.ndarray, skeleton: KinematicSkeleton) -> tuple:
    """Mean global position error and double-cover quaternion error."""
    if pred_data.shape[0] != gt_data.shape[0]:
        raise LengthMismatch("traces must have equal length")
    pp = trace_positions(pred_data, skeleton)
    gp = trace_positions(gt_data, skeleton)
    l2p = float(np.linalg.norm(pp - gp, axis=-1).mean())

    pq = matrix_to_quaternion(global_rotations(pred_data, skeleton).reshape(-1, 3, 3))
    gq = matrix_to_quaternion(global_rotations(gt_data, skeleton).reshape(-1, 3, 3))
    direct = np.linalg.norm(pq - gq, axis=-1)
    flipped = np.linalg.norm(pq + gq, axis=-1)
    l2q = float(np.minimum(direct, flipped).mean())
    return l2p, l2q


def npss(pred_channels: np.ndarray, gt_channels: np.ndarray) -> float:
    """Normalized power spectrum similarity.

    Per channel: power spectrum over time (DC excluded), normalized to a
    distribution; the spectra's cumulative L1 gap is averaged over channels
    weighted by ground-truth power.  Channels with zero ground-truth power
    are excluded.
    """
    pred = np.asarray(pred_channels, dtype=np.float64)
    gt = np.asarray(gt_channels, dtype=np.float64)
    if pred.shape != gt.shape:
        raise LengthMismatch("sequences must have identical shape")
    if pred.ndim == 1:
        pred, gt = pred[:, None], gt[:, None]
    if pred.shape[0] < 4:
        raise TooShort("npss needs at least 4 frames")

    pred_power = np.abs(np.fft.rfft(pred, axis=0)[1:]) ** 2
    gt_power = np.abs(np.fft.rfft(gt, axis=0)[1:]) ** 2
    weights = gt_power.sum(axis=0)
    keep = weights > 0.0
    if not np.any(keep):
        return 0.0
    emd = np.zeros(pred.shape[1])
    for c in np.nonzero(keep)[0]:
        p = pred_power[:, c]
        p = p / p.sum() if p.sum() > 0 else np.zeros_like(p)
        g = gt_power[:, c] / weights[c]
        emd[c] = np.abs(np.cumsum(p) - np.cumsum(g)).sum()
    return float((emd[keep] * weights[keep]).sum() / weights[keep].sum())


@dataclass(frozen=True)
class ProtocolParams:
    """Everything the grid builders need; defaults follow the evaluation
    protocol (counts and ranges) and are config-overridable."""

    initial_poses: tuple  # pool of PoseState
    target_poses: tuple = ()  # pool for the multi protocol
    seed: int = 0
    duration: int = DEFAULT_DURATION
    trials: int = 5
    angles: int = 5
    heights: int = 5
    distances: int = 5
    height_range: tuple = (0.5, 1.8)
    distance_range: tuple = (0.5, 5.0)
    poses_used: int = 6
    control_joint: str = "right_wrist"
    success_radius: float = DEFAULT_SUCCESS_RADIUS
    # sequential protocol
    segments: int = 3
    directions: int = 5
    segment_distance: float = 5.0
    wrist_height: float = 1.0
    # multi protocol
    targets_used: int = 6


@dataclass(frozen=True)
class GridCase:
    config: EpisodeConfig
    initial_pose: PoseState
    pose_index: int
    trial: int
    cell: dict = field(default_factory=dict)
    goal_list: tuple = None  # sequential only: per-segment GoalSpec
    segment_duration: int = None
    path_index: int = None


def _pose_pool(params: ProtocolParams) -> list:
    if len(params.initial_poses) < params.poses_used:
        raise InsufficientInitialPoses(
            f"need {params.poses_used} initial poses, have {len(params.initial_poses)}")
    return list(params.initial_poses[: params.poses_used])


def single_joint_grid(params: ProtocolParams, skeleton: KinematicSkeleton) -> list:
    """Cylindrical sweep: angle x height x distance x pose x trial.

    Goals sit on a cylinder around each initial pelvis; only the control
    joint (right wrist by default) is active, and the heading goal defaults
    to the pelvis-to-goal direction.
    """
    poses = _pose_pool(params)
    angles = np.arange(params.angles) * (2.0 * np.pi / params.angles)
    heights = np.linspace(*params.height_range, params.heights)
    distances = np.linspace(*params.distance_range, params.distances)
    mask = ControlMask.from_names([params.control_joint])
    cases = []
    index = 0
    for p_idx, pose in enumerate(poses):
        pelvis_xy = pose.pelvis_translation[:2]
        for a_idx, angle in enumerate(angles):
            for h_idx, height in enumerate(heights):
                for d_idx, dist in enumerate(distances):
                    goal_xy = pelvis_xy + dist * np.array([np.cos(angle), np.sin(angle)])
                    goal = JointGoal(np.array([goal_xy[0], goal_xy[1], height]), params.duration - 1)
                    goals = GoalSpec({params.control_joint: goal})
                    for trial in range(params.trials):
                        cfg = EpisodeConfig(
                            goals=goals, mask=mask, duration=params.duration,
                            seed=params.seed + index, success_radius=params.success_radius)
                        cases.append(GridCase(
                            config=cfg, initial_pose=pose, pose_index=p_idx, trial=trial,
                            cell={"angle": a_idx, "height": h_idx, "distance": d_idx}))
                        index += 1
    return cases


def sequential_grid(params: ProtocolParams, skeleton: KinematicSkeleton) -> list:
    """Three chained wrist goals, one of `directions` headings per segment.

    Paths per pose = directions ** segments; each path runs `trials` times.
    Goal deadlines are global frame indices (segment ends).
    """
    poses = _pose_pool(params)
    angles = np.arange(params.directions) * (2.0 * np.pi / params.directions)
    mask = ControlMask.from_names([params.control_joint])
    cases = []
    index = 0
    path_index = 0
    for p_idx, pose in enumerate(poses):
        start_xy = pose.pelvis_translation[:2]
        for combo in itertools.product(range(params.directions), repeat=params.segments):
            goal_list = []
            xy = start_xy.copy()
            for s, dir_idx in enumerate(combo):
                xy = xy + params.segment_distance * np.array(
                    [np.cos(angles[dir_idx]), np.sin(angles[dir_idx])])
                deadline = (s + 1) * params.duration - 1
                goal = JointGoal(np.array([xy[0], xy[1], params.wrist_height]), deadline)
                goal_list.append(GoalSpec({params.control_joint: goal}))
            for trial in range(params.trials):
                cfg = EpisodeConfig(
                    goals=goal_list[0], mask=mask, duration=params.duration,
                    seed=params.seed + index, success_radius=params.success_radius)
                cases.append(GridCase(
                    config=cfg, initial_pose=pose, pose_index=p_idx, trial=trial,
                    cell={"directions": list(combo)}, goal_list=tuple(goal_list),
                    segment_duration=params.duration, path_index=path_index))
                index += 1
            path_index += 1
    return cases


def multi_joint_grid(params: ProtocolParams, skeleton: KinematicSkeleton) -> list:
    """Held-out target poses displaced in the plane, all goals from one pose.

    For each (target pose, initial pose, direction, distance, trial), the
    target pose's joint positions are translated so its pelvis lands on the
    displaced xy point; a seeded random subset of control joints is active.
    """
    poses = _pose_pool(params)
    if len(params.target_poses) < params.targets_used:
        raise InsufficientInitialPoses(
            f"need {params.targets_used} target poses, have {len(params.target_poses)}")
    targets = list(params.target_poses[: params.targets_used])
    angles = np.arange(params.directions) * (2.0 * np.pi / params.directions)
    distances = np.linspace(*params.distance_range, params.distances)
    rng = np.random.default_rng(params.seed)
    cases = []
    index = 0
    for t_idx, target in enumerate(targets):
        target_fk = forward_kinematics(target, skeleton)
        target_pelvis_xy = target.pelvis_translation[:2]
        for p_idx, pose in enumerate(poses):
            pelvis_xy = pose.pelvis_translation[:2]
            for a_idx, angle in enumerate(angles):
                for d_idx, dist in enumerate(distances):
                    goal_xy = pelvis_xy + dist * np.array([np.cos(angle), np.sin(angle)])
                    offset = np.array([*(goal_xy - target_pelvis_xy), 0.0])
                    k = int(rng.integers(1, CONTROL_SET_SIZE + 1))
                    chosen = rng.choice(CONTROL_SET_SIZE, size=k, replace=False)
                    mask = ControlMask(tuple(i in chosen for i in range(CONTROL_SET_SIZE)))
                    joints = {
                        name: JointGoal(target_fk[skeleton.index(name)] + offset, params.duration - 1)
                        for name, on in zip(CONTROL_JOINT_NAMES, mask.active) if on
                    }
                    goals = GoalSpec(joints, heading_xy(target))
                    for trial in range(params.trials):
                        cfg = EpisodeConfig(
                            goals=goals, mask=mask, duration=params.duration,
                            seed=params.seed + index, success_radius=params.success_radius)
                        cases.append(GridCase(
                            config=cfg, initial_pose=pose, pose_index=p_idx, trial=trial,
                            cell={"target": t_idx, "angle": a_idx, "distance": d_idx}))
                        index += 1
    return cases


def protocol_grid(kind: str, params: ProtocolParams, skeleton: KinematicSkeleton) -> list:
    if kind == "single":
        return single_joint_grid(params, skeleton)
    if kind == "sequential":
        return sequential_grid(params, skeleton)
    if kind == "multi":
        return multi_joint_grid(params, skeleton)
    raise ValueError(f"unknown protocol kind {kind!r}")
