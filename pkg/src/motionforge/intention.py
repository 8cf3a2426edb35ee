"""Goal specifications, control masks and intention features.

Each joint in the control set can carry a positional goal with a deadline
frame.  Per frame the goals become intention features:

  joints       (G_j - P_j) / (t_goal - i)          per active control joint
  pelvis       2 * (1 - exp(-|d|)) * d_hat         d = goal centroid xy - pelvis xy
  orientation  h_goal - h_current                  unit heading vectors in xy

The pelvis and orientation intentions are always active; the mask only
gates the six per-joint intention tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GoalFrameReached, NoActiveJointForPelvisIntention, NotUnitVector
from .pose import PoseState, forward_kinematics, heading_xy, root_yaw
from .skeleton import CONTROL_JOINT_NAMES, CONTROL_SET_SIZE, KinematicSkeleton

INTENTION_DIM = 2 + 2 + 3 * CONTROL_SET_SIZE  # pelvis, orientation, joints
PELVIS_EPS = 1e-9
HEADING_TOL = 1e-6


@dataclass(frozen=True)
class JointGoal:
    """Target position for one control joint, to be reached by goal_frame."""

    position: np.ndarray  # (3,)
    goal_frame: int

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        object.__setattr__(self, "goal_frame", int(self.goal_frame))


@dataclass(frozen=True)
class GoalSpec:
    """Per-joint goals plus an optional explicit heading goal (unit xy)."""

    joints: dict  # joint name -> JointGoal
    heading: np.ndarray = None  # (2,) unit vector or None

    def __post_init__(self):
        for name in self.joints:
            if name not in CONTROL_JOINT_NAMES:
                raise KeyError(f"{name!r} is not a control joint")
        if self.heading is not None:
            h = np.asarray(self.heading, dtype=np.float64).reshape(2)
            if abs(float(np.linalg.norm(h)) - 1.0) > HEADING_TOL:
                raise NotUnitVector("heading goal must be a unit vector")
            object.__setattr__(self, "heading", h)

    def to_dict(self) -> dict:
        return {
            "joints": {
                n: {"position": g.position.tolist(), "goal_frame": g.goal_frame}
                for n, g in sorted(self.joints.items())
            },
            "heading": None if self.heading is None else self.heading.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "GoalSpec":
        joints = {
            n: JointGoal(np.asarray(g["position"], dtype=np.float64), int(g["goal_frame"]))
            for n, g in d.get("joints", {}).items()
        }
        heading = d.get("heading")
        return GoalSpec(joints, None if heading is None else np.asarray(heading, dtype=np.float64))

    @staticmethod
    def empty() -> "GoalSpec":
        return GoalSpec({}, None)

    def shift_frames(self, offset: int) -> "GoalSpec":
        return GoalSpec(
            {n: JointGoal(g.position, g.goal_frame + offset) for n, g in self.joints.items()},
            self.heading,
        )

    def scale_frames(self, scale: float) -> "GoalSpec":
        return GoalSpec(
            {n: JointGoal(g.position, int(round(g.goal_frame * scale))) for n, g in self.joints.items()},
            self.heading,
        )


@dataclass(frozen=True)
class ControlMask:
    """Active flags for the six control joints, in CONTROL_JOINT_NAMES order."""

    active: tuple = (True,) * CONTROL_SET_SIZE

    def __post_init__(self):
        flags = tuple(bool(v) for v in self.active)
        if len(flags) != CONTROL_SET_SIZE:
            raise ValueError(f"need {CONTROL_SET_SIZE} flags")
        object.__setattr__(self, "active", flags)

    def count(self) -> int:
        return sum(self.active)

    def active_joint_names(self) -> list:
        return [n for n, on in zip(CONTROL_JOINT_NAMES, self.active) if on]

    def to_dict(self) -> dict:
        return {n: on for n, on in zip(CONTROL_JOINT_NAMES, self.active)}

    @staticmethod
    def from_dict(d: dict) -> "ControlMask":
        return ControlMask(tuple(bool(d.get(n, False)) for n in CONTROL_JOINT_NAMES))

    @staticmethod
    def from_names(names) -> "ControlMask":
        wanted = set(names)
        unknown = wanted - set(CONTROL_JOINT_NAMES)
        if unknown:
            raise KeyError(f"not control joints: {sorted(unknown)}")
        return ControlMask(tuple(n in wanted for n in CONTROL_JOINT_NAMES))

    @staticmethod
    def all_active() -> "ControlMask":
        return ControlMask((True,) * CONTROL_SET_SIZE)

    @staticmethod
    def none_active() -> "ControlMask":
        return ControlMask((False,) * CONTROL_SET_SIZE)


@dataclass(frozen=True)
class IntentionVector:
    pelvis: np.ndarray  # (2,)
    orientation: np.ndarray  # (2,)
    joints: np.ndarray  # (CONTROL_SET_SIZE, 3), zero rows for inactive joints
    mask: ControlMask = ControlMask()

    def __post_init__(self):
        object.__setattr__(self, "pelvis", np.asarray(self.pelvis, dtype=np.float64).reshape(2))
        object.__setattr__(self, "orientation", np.asarray(self.orientation, dtype=np.float64).reshape(2))
        object.__setattr__(self, "joints", np.asarray(self.joints, dtype=np.float64).reshape(CONTROL_SET_SIZE, 3))

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.pelvis, self.orientation, self.joints.reshape(-1)])

    @staticmethod
    def zero(mask: ControlMask = None) -> "IntentionVector":
        return IntentionVector(
            np.zeros(2), np.zeros(2), np.zeros((CONTROL_SET_SIZE, 3)),
            ControlMask.none_active() if mask is None else mask,
        )


def control_joint_intention(goal_position, joint_position, goal_frame: int, frame: int) -> np.ndarray:
    """Per-frame displacement that reaches the goal exactly on its deadline."""
    if goal_frame <= frame:
        raise GoalFrameReached(f"goal frame {goal_frame} not after current frame {frame}")
    goal_position = np.asarray(goal_position, dtype=np.float64)
    joint_position = np.asarray(joint_position, dtype=np.float64)
    return (goal_position - joint_position) / float(goal_frame - frame)


def pelvis_intention(goal_avg_xy, pelvis_xy) -> np.ndarray:
    """Saturating attractor toward the goal centroid, magnitude below 2."""
    d = np.asarray(goal_avg_xy, dtype=np.float64) - np.asarray(pelvis_xy, dtype=np.float64)
    dist = float(np.linalg.norm(d))
    if dist < PELVIS_EPS:
        return np.zeros(2)
    return 2.0 * (1.0 - np.exp(-dist)) * (d / dist)


def orientation_intention(goal_heading_xy, current_heading_xy) -> np.ndarray:
    """Difference of unit heading vectors in the ground plane."""
    goal = np.asarray(goal_heading_xy, dtype=np.float64).reshape(2)
    cur = np.asarray(current_heading_xy, dtype=np.float64).reshape(2)
    for v in (goal, cur):
        if abs(float(np.linalg.norm(v)) - 1.0) > HEADING_TOL:
            raise NotUnitVector("headings must be unit vectors")
    return goal - cur


def goal_centroid_xy(goals: GoalSpec, mask: ControlMask) -> np.ndarray:
    """Mean xy over active joints' goal positions."""
    points = [goals.joints[n].position[:2] for n in mask.active_joint_names() if n in goals.joints]
    if not points:
        raise NoActiveJointForPelvisIntention("no active joint goal to average")
    return np.mean(points, axis=0)


def assemble_intention(
    pose: PoseState,
    skeleton: KinematicSkeleton,
    goals: GoalSpec,
    mask: ControlMask,
    frame: int,
) -> IntentionVector:
    """Build the full intention feature for one frame.

    Expired goals keep conditioning with the denominator clamped to one
    frame.  With no active joint, a heading goal must be supplied; the
    pelvis intention is then zero.
    """
    positions = forward_kinematics(pose, skeleton)
    joints = np.zeros((CONTROL_SET_SIZE, 3))
    for k, name in enumerate(CONTROL_JOINT_NAMES):
        if not mask.active[k]:
            continue
        if name not in goals.joints:
            raise KeyError(f"active joint {name!r} has no goal")
        g = goals.joints[name]
        effective = max(g.goal_frame, frame + 1)
        joints[k] = control_joint_intention(g.position, positions[skeleton.index(name)], effective, frame)

    pelvis_xy = pose.pelvis_translation[:2]
    current = heading_xy(pose)
    if mask.count() > 0:
        centroid = goal_centroid_xy(goals, mask)
        pelvis = pelvis_intention(centroid, pelvis_xy)
        target = goals.heading if goals.heading is not None else default_goal_heading(centroid, pelvis_xy, current)
    else:
        if goals.heading is None:
            raise NoActiveJointForPelvisIntention("all-inactive mask requires a heading goal")
        pelvis = np.zeros(2)
        target = goals.heading
    orientation = orientation_intention(target, current)
    return IntentionVector(pelvis, orientation, joints, mask)


def default_goal_heading(goal_avg_xy, pelvis_xy, current_heading_xy) -> np.ndarray:
    """Face the goal centroid; keep the current heading when on top of it."""
    d = np.asarray(goal_avg_xy, dtype=np.float64) - np.asarray(pelvis_xy, dtype=np.float64)
    dist = float(np.linalg.norm(d))
    if dist < PELVIS_EPS:
        return np.asarray(current_heading_xy, dtype=np.float64).reshape(2)
    return d / dist


def yaw_localize(intention: IntentionVector, pose: PoseState) -> IntentionVector:
    """Rotate an intention into the pose's yaw-aligned frame.

    The model consumes intentions in the character frame so that "goal to
    my left" reads the same regardless of global heading; magnitudes and
    the mask are unchanged, and zero rows stay zero.
    """
    yaw = root_yaw(pose)
    c, s = np.cos(yaw), np.sin(yaw)
    rot2 = np.array([[c, s], [-s, c]])
    joints = intention.joints.copy()
    joints[:, :2] = joints[:, :2] @ rot2.T
    return IntentionVector(rot2 @ intention.pelvis, rot2 @ intention.orientation,
                           joints, intention.mask)
