"""Dataset preprocessing and on-disk layout.

preprocess() takes raw clips at arbitrary frame rates and produces a
Dataset: clips are resampled to the target rate, regrounded, split into
train/val/test by whole clips (so no window of one clip leaks across
splits), and cut into bounded windows.  Standardization statistics come
from the training split only; the intention statistics are gathered in a
seeded pre-pass that draws pseudo-goals the same way training will, and
each joint-intention channel is aggregated only over draws where that
joint was active.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import container
from .clips import MotionClip, reground_clip, resample_clip, window_clip
from .errors import NoFutureFrames, TooFewSamples
from .intention import (
    ControlMask,
    GoalSpec,
    INTENTION_DIM,
    JointGoal,
    assemble_intention,
    yaw_localize,
)
from .pose import POSE_DIM, DELTA_DIM, compute_delta, forward_kinematics, heading_xy
from .skeleton import CONTROL_JOINT_NAMES, CONTROL_SET_SIZE, KinematicSkeleton
from .stats import ChannelStats, NormStats

STATS_FORMAT = "norm-stats"
STATS_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")
DEFAULT_WINDOW = 240
STATS_DRAWS_PER_WINDOW = 4


def sample_control_mask(rng: np.random.Generator) -> ControlMask:
    """Random mask with 1..6 active joints, uniform over cardinality."""
    k = int(rng.integers(1, CONTROL_SET_SIZE + 1))
    idx = rng.choice(CONTROL_SET_SIZE, size=k, replace=False)
    flags = [False] * CONTROL_SET_SIZE
    for i in idx:
        flags[int(i)] = True
    return ControlMask(tuple(flags))


def sample_pseudo_goal(
    window: MotionClip,
    frame: int,
    mask: ControlMask,
    rng: np.random.Generator,
    skeleton: KinematicSkeleton,
) -> GoalSpec:
    """Goals taken from a future frame of the same window.

    A frame g is drawn uniformly from (frame, T-1]; active joints get
    their forward-kinematics position at g as the goal with deadline g,
    and the window's heading at g becomes the heading goal.
    """
    t_total = len(window)
    if frame >= t_total - 1:
        raise NoFutureFrames(f"frame {frame} has no successor in a {t_total}-frame window")
    g = int(rng.integers(frame + 1, t_total))
    pose_g = window.frame(g)
    positions = forward_kinematics(pose_g, skeleton)
    joints = {
        name: JointGoal(positions[skeleton.index(name)], g)
        for name, on in zip(CONTROL_JOINT_NAMES, mask.active)
        if on
    }
    return GoalSpec(joints, heading_xy(pose_g))


def split_counts(n: int, ratios=(0.8, 0.1, 0.1)) -> tuple:
    n_train = int(np.floor(n * ratios[0]))
    n_val = int(np.floor(n * ratios[1]))
    return n_train, n_val, n - n_train - n_val


@dataclass
class Dataset:
    splits: dict  # split name -> list[MotionClip] windows
    stats: NormStats
    skeleton_hash: str
    fps: float
    seed: int
    max_window: int

    def windows(self, split: str) -> list:
        return self.splits[split]

    def manifest(self) -> dict:
        return {
            "fps": self.fps,
            "seed": self.seed,
            "max_window": self.max_window,
            "skeleton_hash": self.skeleton_hash,
            "counts": {name: len(clips) for name, clips in sorted(self.splits.items())},
        }

    def save(self, root, skeleton: KinematicSkeleton):
        os.makedirs(root, exist_ok=True)
        for name, clips in self.splits.items():
            split_dir = os.path.join(root, name)
            os.makedirs(split_dir, exist_ok=True)
            for i, clip in enumerate(clips):
                clip.save(os.path.join(split_dir, f"clip_{i:05d}.mfc"), skeleton)
        container.save(
            os.path.join(root, "stats.mfc"),
            STATS_FORMAT,
            STATS_VERSION,
            {"skeleton_hash": self.skeleton_hash},
            self.stats.to_arrays(),
        )
        with open(os.path.join(root, "manifest.json"), "w") as f:
            json.dump(self.manifest(), f, indent=2, sort_keys=True)
            f.write("\n")

    @staticmethod
    def load(root) -> "Dataset":
        with open(os.path.join(root, "manifest.json")) as f:
            manifest = json.load(f)
        _, _, _, arrays = container.load(
            os.path.join(root, "stats.mfc"), expect_format=STATS_FORMAT
        )
        splits = {}
        for name in SPLIT_NAMES:
            split_dir = os.path.join(root, name)
            clips = []
            if os.path.isdir(split_dir):
                for fn in sorted(os.listdir(split_dir)):
                    if fn.endswith(".mfc"):
                        clips.append(MotionClip.load(os.path.join(split_dir, fn)))
            splits[name] = clips
        return Dataset(
            splits=splits,
            stats=NormStats.from_arrays(arrays),
            skeleton_hash=manifest["skeleton_hash"],
            fps=float(manifest["fps"]),
            seed=int(manifest["seed"]),
            max_window=int(manifest["max_window"]),
        )


def load_stats(path) -> NormStats:
    _, _, _, arrays = container.load(path, expect_format=STATS_FORMAT)
    return NormStats.from_arrays(arrays)


def _intention_stats(windows, skeleton, seed) -> ChannelStats:
    """Active-channel statistics from a seeded pseudo-goal pre-pass."""
    rng = np.random.default_rng(seed)
    sums = np.zeros(INTENTION_DIM)
    sq_sums = np.zeros(INTENTION_DIM)
    counts = np.zeros(INTENTION_DIM)
    for window in windows:
        t_total = len(window)
        for _ in range(STATS_DRAWS_PER_WINDOW):
            i = int(rng.integers(0, t_total - 1))
            mask = sample_control_mask(rng)
            goals = sample_pseudo_goal(window, i, mask, rng, skeleton)
            pose = window.frame(i)
            vec = yaw_localize(
                assemble_intention(pose, skeleton, goals, mask, i), pose
            ).flatten()
            active = np.ones(INTENTION_DIM, dtype=bool)
            for k, on in enumerate(mask.active):
                active[4 + 3 * k : 7 + 3 * k] = on
            sums[active] += vec[active]
            sq_sums[active] += vec[active] ** 2
            counts[active] += 1
    if np.any(counts == 0):
        raise TooFewSamples("intention stats pre-pass left channels unobserved")
    mean = sums / counts
    var = np.maximum(sq_sums / counts - mean**2, 0.0)
    return ChannelStats(mean, np.sqrt(var))


def compute_stats(windows, skeleton: KinematicSkeleton, seed: int) -> NormStats:
    """Per-channel standardization statistics from training windows."""
    if not windows:
        raise TooFewSamples("no training windows to compute statistics from")
    poses = np.concatenate([w.data for w in windows], axis=0)

    deltas = np.empty((sum(len(w) - 1 for w in windows), DELTA_DIM))
    row = 0
    for w in windows:
        for i in range(len(w) - 1):
            deltas[row] = compute_delta(w.frame(i), w.frame(i + 1)).flatten()
            row += 1

    joints = np.empty((poses.shape[0], skeleton.joint_count * 3))
    row = 0
    for w in windows:
        for i in range(len(w)):
            joints[row] = forward_kinematics(w.frame(i), skeleton).reshape(-1)
            row += 1

    return NormStats(
        pose=ChannelStats.from_samples(poses),
        delta=ChannelStats.from_samples(deltas),
        intention=_intention_stats(windows, skeleton, seed + 1),
        joints=ChannelStats.from_samples(joints),
    )


def preprocess(
    clips,
    skeleton: KinematicSkeleton,
    seed: int = 0,
    target_fps: float = 30.0,
    max_window: int = DEFAULT_WINDOW,
    ratios=(0.8, 0.1, 0.1),
) -> Dataset:
    """Resample, reground, split by clip, window, and standardize."""
    prepared = [
        reground_clip(resample_clip(clip, target_fps), skeleton) for clip in clips
    ]

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(prepared))
    n_train, n_val, _ = split_counts(len(prepared), ratios)
    assignment = {}
    for pos, clip_index in enumerate(order):
        if pos < n_train:
            assignment[clip_index] = "train"
        elif pos < n_train + n_val:
            assignment[clip_index] = "val"
        else:
            assignment[clip_index] = "test"

    splits = {name: [] for name in SPLIT_NAMES}
    for idx, clip in enumerate(prepared):
        splits[assignment[idx]].extend(window_clip(clip, max_window))

    stats = compute_stats(splits["train"], skeleton, seed)
    return Dataset(
        splits=splits,
        stats=stats,
        skeleton_hash=skeleton.content_hash(),
        fps=target_fps,
        seed=seed,
        max_window=max_window,
    )


def save_raw_clips(root, clips, skeleton: KinematicSkeleton):
    """Write a flat directory of clip containers (the synth output layout)."""
    os.makedirs(root, exist_ok=True)
    for i, clip in enumerate(clips):
        clip.save(os.path.join(root, f"clip_{i:05d}.mfc"), skeleton)


def load_raw_clips(root) -> list:
    clips = []
    for fn in sorted(os.listdir(root)):
        if fn.endswith(".mfc"):
            clips.append(MotionClip.load(os.path.join(root, fn)))
    return clips
