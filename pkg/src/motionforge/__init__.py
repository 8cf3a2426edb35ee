"""Goal-driven character motion synthesis toolkit.

Autoregressive generation of skeletal motion from per-joint positional
goals, with masked partial control, distribution-anchored feedback
stabilization for long rollouts, swappable motion styles, and an
evaluation harness for goal-reaching protocols.
"""

__version__ = "0.1.0"

from .clips import MotionClip
from .errors import MotionForgeError
from .generate import (
    EpisodeConfig,
    EpisodeRunner,
    EpisodeTrace,
    RgfSettings,
    run_episode,
    run_inbetween,
    run_sequential,
)
from .intention import ControlMask, GoalSpec, JointGoal
from .model import ModelConfig, ModelRuntime, build_model, load_checkpoint, save_checkpoint
from .pose import DeltaFeature, PoseState
from .skeleton import CONTROL_JOINT_NAMES, KinematicSkeleton, default_skeleton
from .training import TrainConfig, train

__all__ = [
    "__version__",
    "MotionClip",
    "MotionForgeError",
    "EpisodeConfig",
    "EpisodeRunner",
    "EpisodeTrace",
    "RgfSettings",
    "run_episode",
    "run_inbetween",
    "run_sequential",
    "ControlMask",
    "GoalSpec",
    "JointGoal",
    "ModelConfig",
    "ModelRuntime",
    "build_model",
    "load_checkpoint",
    "save_checkpoint",
    "DeltaFeature",
    "PoseState",
    "CONTROL_JOINT_NAMES",
    "KinematicSkeleton",
    "default_skeleton",
    "TrainConfig",
    "train",
]
