"""Per-channel standardization statistics for every feature family."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STD_FLOOR = 1e-8


@dataclass
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        self.std = np.maximum(std, STD_FLOOR)

    def standardize(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def destandardize(self, x):
        return np.asarray(x) * self.std + self.mean

    @staticmethod
    def from_samples(samples: np.ndarray) -> "ChannelStats":
        samples = np.asarray(samples, dtype=np.float64)
        return ChannelStats(samples.mean(axis=0), samples.std(axis=0))

    @staticmethod
    def identity(dim: int) -> "ChannelStats":
        return ChannelStats(np.zeros(dim), np.ones(dim))


@dataclass
class NormStats:
    """Dataset-wide mean/std for pose, delta, intention, and joint channels.

    Computed on the training split only.  Standard deviations are floored
    at 1e-8 so standardize/destandardize is always invertible.
    """

    pose: ChannelStats
    delta: ChannelStats
    intention: ChannelStats
    joints: ChannelStats = field(default=None)

    def to_arrays(self) -> dict:
        return {
            "pose_mean": self.pose.mean,
            "pose_std": self.pose.std,
            "delta_mean": self.delta.mean,
            "delta_std": self.delta.std,
            "intention_mean": self.intention.mean,
            "intention_std": self.intention.std,
            "joints_mean": self.joints.mean,
            "joints_std": self.joints.std,
        }

    @staticmethod
    def from_arrays(arrays: dict) -> "NormStats":
        return NormStats(
            pose=ChannelStats(arrays["pose_mean"], arrays["pose_std"]),
            delta=ChannelStats(arrays["delta_mean"], arrays["delta_std"]),
            intention=ChannelStats(arrays["intention_mean"], arrays["intention_std"]),
            joints=ChannelStats(arrays["joints_mean"], arrays["joints_std"]),
        )

    @staticmethod
    def identity(pose_dim: int, delta_dim: int, intention_dim: int, joint_dim: int) -> "NormStats":
        return NormStats(
            pose=ChannelStats.identity(pose_dim),
            delta=ChannelStats.identity(delta_dim),
            intention=ChannelStats.identity(intention_dim),
            joints=ChannelStats.identity(joint_dim),
        )
