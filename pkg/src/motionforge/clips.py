"""Motion clips: the universal interchange unit, plus resampling/regrounding.

A clip stores frames as a (T, 135) array (see pose.PoseState.flatten for
channel order) together with the frame rate, a free-form source tag, and
optional goal annotations.  On disk a clip is a container with frame-major
float32 channels and the skeleton hash in the header.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container
from .errors import ClipTooShort, EmptyClip
from .intention import GoalSpec
from .pose import POSE_DIM, PoseState, forward_kinematics
from .rotations import renormalize_rot6d
from .skeleton import KinematicSkeleton

CLIP_FORMAT = "motion-clip"
CLIP_VERSION = 1


@dataclass
class MotionClip:
    fps: float
    data: np.ndarray  # (T, POSE_DIM) float64
    source: str = ""
    goals: GoalSpec = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != POSE_DIM:
            raise ValueError(f"clip data must be (T, {POSE_DIM})")

    def __len__(self) -> int:
        return self.data.shape[0]

    def frame(self, i: int) -> PoseState:
        return PoseState.from_flat(self.data[i])

    def frames(self):
        for i in range(len(self)):
            yield self.frame(i)

    def to_bytes(self, skeleton: KinematicSkeleton) -> bytes:
        meta = {
            "fps": self.fps,
            "frame_count": len(self),
            "channels": POSE_DIM,
            "skeleton_hash": skeleton.content_hash(),
            "source": self.source,
            "goals": None if self.goals is None else self.goals.to_dict(),
        }
        return container.pack(CLIP_FORMAT, CLIP_VERSION, meta, {"frames": self.data.astype(np.float32)})

    def save(self, path, skeleton: KinematicSkeleton):
        with open(path, "wb") as f:
            f.write(self.to_bytes(skeleton))

    @staticmethod
    def from_bytes(data: bytes) -> "MotionClip":
        fmt, _, meta, arrays = container.unpack(data)
        if fmt != CLIP_FORMAT:
            raise ValueError(f"expected {CLIP_FORMAT} container, found {fmt}")
        goals = meta.get("goals")
        return MotionClip(
            fps=float(meta["fps"]),
            data=arrays["frames"].astype(np.float64),
            source=meta.get("source", ""),
            goals=None if goals is None else GoalSpec.from_dict(goals),
        )

    @staticmethod
    def load(path) -> "MotionClip":
        with open(path, "rb") as f:
            return MotionClip.from_bytes(f.read())


def min_joint_height(clip: MotionClip, skeleton: KinematicSkeleton) -> float:
    """Lowest global joint z over all frames."""
    if len(clip) == 0:
        raise EmptyClip("clip has no frames")
    lowest = np.inf
    for pose in clip.frames():
        z = forward_kinematics(pose, skeleton)[:, 2].min()
        lowest = min(lowest, z)
    return float(lowest)


def reground_clip(clip: MotionClip, skeleton: KinematicSkeleton) -> MotionClip:
    """Shift pelvis z by one constant so the lowest joint touches z=0."""
    shift = min_joint_height(clip, skeleton)
    if shift == 0.0:
        return clip
    data = clip.data.copy()
    data[:, 2] -= shift
    return MotionClip(clip.fps, data, clip.source, clip.goals)


def resample_clip(clip: MotionClip, target_fps: float) -> MotionClip:
    """Resample to target_fps by linear interpolation in channel space.

    6D rotation blocks are re-orthonormalized after interpolation.  Goal
    frame indices are rescaled to the new rate.
    """
    if len(clip) < 2:
        raise ClipTooShort("resampling needs at least 2 frames")
    if clip.fps == target_fps:
        return clip
    duration = (len(clip) - 1) / clip.fps
    n_out = int(np.floor(duration * target_fps)) + 1
    t_out = np.arange(n_out) / target_fps
    t_in = np.arange(len(clip)) / clip.fps
    data = np.empty((n_out, POSE_DIM))
    for c in range(POSE_DIM):
        data[:, c] = np.interp(t_out, t_in, clip.data[:, c])
    data[:, 3:9] = renormalize_rot6d(data[:, 3:9])
    blocks = data[:, 9:].reshape(n_out, -1, 6)
    data[:, 9:] = renormalize_rot6d(blocks).reshape(n_out, -1)
    goals = None if clip.goals is None else clip.goals.scale_frames(target_fps / clip.fps)
    return MotionClip(target_fps, data, clip.source, goals)


def window_clip(clip: MotionClip, max_frames: int) -> list:
    """Split a clip into consecutive windows of at most max_frames frames.

    A trailing remainder shorter than 2 frames is dropped.  Goals are kept
    by the window containing their deadline, with indices rebased.
    """
    if len(clip) < 2:
        raise ClipTooShort("windowing needs at least 2 frames")
    windows = []
    for start in range(0, len(clip), max_frames):
        chunk = clip.data[start : start + max_frames]
        if chunk.shape[0] < 2:
            break
        goals = None
        if clip.goals is not None:
            kept = {
                n: g for n, g in clip.goals.joints.items()
                if start <= g.goal_frame < start + chunk.shape[0]
            }
            if kept or clip.goals.heading is not None:
                goals = GoalSpec(kept, clip.goals.heading).shift_frames(-start)
        windows.append(MotionClip(clip.fps, chunk.copy(), clip.source, goals))
    return windows
