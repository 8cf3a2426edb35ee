"""Autoregressive generation: per frame, refresh intentions, decode a delta
from a fresh prior sample, apply it, then softly correct the result toward
the reference manifold until the goal vicinity latches the feedback off.

EpisodeRunner is the single stepping engine; offline episode runs, the
sequential and in-betweening drivers, and the network service all drive it
frame by frame so their outputs match bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clips import MotionClip
from .errors import UnknownStyle
from .feedback import (DEFAULT_ALPHA, DEFAULT_STOP_DISTANCE, INBETWEEN_ALPHA, FeedbackGate,
                       GmmModel, StyleBank, apply_feedback, extract_feature, point_mass_gmm)
from .intention import ControlMask, GoalSpec, JointGoal, assemble_intention, goal_centroid_xy
from .model import ModelRuntime
from .pose import PoseState, apply_delta, forward_kinematics, heading_xy
from .skeleton import CONTROL_JOINT_NAMES

FPS = 30.0
DEFAULT_DURATION = 240  # 8 seconds at 30 fps
DEFAULT_SUCCESS_RADIUS = 0.10


@dataclass(frozen=True)
class RgfSettings:
    """Feedback configuration for an episode; gmm None disables feedback."""

    gmm: GmmModel = None
    alpha: float = DEFAULT_ALPHA
    stop_distance: float = DEFAULT_STOP_DISTANCE
    style: str = None

    @staticmethod
    def off() -> "RgfSettings":
        return RgfSettings(None, 0.0, DEFAULT_STOP_DISTANCE, None)


@dataclass(frozen=True)
class EpisodeConfig:
    goals: GoalSpec
    mask: ControlMask = ControlMask.all_active()
    duration: int = DEFAULT_DURATION
    seed: int = 0
    success_radius: float = DEFAULT_SUCCESS_RADIUS
    fixed_z: bool = False  # decode at the prior mean instead of sampling

    def __post_init__(self):
        if self.duration < 2:
            raise ValueError("duration must be at least 2 frames")
        if self.success_radius <= 0:
            raise ValueError("success_radius must be positive")

    def to_dict(self) -> dict:
        return {
            "goals": self.goals.to_dict(), "mask": self.mask.to_dict(),
            "duration": self.duration, "seed": self.seed,
            "success_radius": self.success_radius, "fixed_z": self.fixed_z,
        }

    @staticmethod
    def from_dict(d: dict) -> "EpisodeConfig":
        return EpisodeConfig(
            goals=GoalSpec.from_dict(d["goals"]),
            mask=ControlMask.from_dict(d.get("mask", {})) if "mask" in d else ControlMask.all_active(),
            duration=int(d.get("duration", DEFAULT_DURATION)),
            seed=int(d.get("seed", 0)),
            success_radius=float(d.get("success_radius", DEFAULT_SUCCESS_RADIUS)),
            fixed_z=bool(d.get("fixed_z", False)),
        )


@dataclass
class FrameDiagnostics:
    frame: int  # index of the newly generated frame
    gate_on: bool  # whether feedback corrected this frame
    component: int  # selected mixture component, -1 when uncorrected
    distances: dict  # joint name -> distance to its goal, meters
    style: str = None

    def centroid_distance(self) -> float:
        return float(np.mean(list(self.distances.values()))) if self.distances else float("nan")


@dataclass
class EpisodeTrace:
    frames: list  # PoseState, length = duration
    diagnostics: list  # FrameDiagnostics, one per frame after the first
    config: EpisodeConfig
    fps: float = FPS
    z_draws: np.ndarray = None  # (duration-1, latent_dim)
    segments: list = field(default_factory=list)  # dicts: start, end, goals

    def __len__(self) -> int:
        return len(self.frames)

    def data(self) -> np.ndarray:
        return np.stack([p.flatten() for p in self.frames])

    def to_clip(self, source: str = "generated") -> MotionClip:
        return MotionClip(self.fps, self.data(), source, self.config.goals)

    def timestamps(self) -> np.ndarray:
        return np.arange(len(self.frames)) / self.fps


class EpisodeRunner:
    """Stateful frame stepper implementing the generation loop."""

    def __init__(self, runtime: ModelRuntime, initial: PoseState, cfg: EpisodeConfig,
                 rgf: RgfSettings = None, style_bank: StyleBank = None,
                 relatch_on_goal_move: bool = False):
        self.runtime = runtime
        self.cfg = cfg
        self.rgf = rgf if rgf is not None else RgfSettings.off()
        self.style_bank = style_bank
        self.relatch_on_goal_move = relatch_on_goal_move
        self.rng = np.random.default_rng(cfg.seed)
        self.gate = FeedbackGate(self.rgf.stop_distance)
        self.goals = cfg.goals
        self.mask = cfg.mask
        self.style = self.rgf.style
        self.frames = [initial]
        self.diagnostics = []
        self.z_draws = []

    @property
    def pose(self) -> PoseState:
        return self.frames[-1]

    @property
    def frame_index(self) -> int:
        return len(self.frames) - 1

    def _feedback_on(self) -> bool:
        return self.rgf.gmm is not None and self.rgf.alpha > 0.0 and self.gate.active

    def set_goals(self, goals: GoalSpec):
        self.goals = goals
        if self.relatch_on_goal_move:
            self.gate.reset()

    def set_mask(self, mask: ControlMask):
        self.mask = mask

    def set_style(self, label: str):
        if self.style_bank is None:
            raise UnknownStyle("no style bank configured")
        gmm, alpha = self.style_bank.get(label)
        self.rgf = RgfSettings(
            gmm, self.rgf.alpha if alpha is None else alpha, self.rgf.stop_distance, label)
        self.style = label

    def set_alpha(self, alpha: float):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        self.rgf = RgfSettings(self.rgf.gmm, float(alpha), self.rgf.stop_distance, self.rgf.style)

    def step(self) -> tuple:
        """Generate one frame; returns (pose, diagnostics)."""
        i = self.frame_index
        intention = assemble_intention(self.pose, self.runtime.skeleton, self.goals, self.mask, i)
        latent_dim = self.runtime.model.cfg.latent_dim
        z = np.zeros(latent_dim) if self.cfg.fixed_z else self.rng.standard_normal(latent_dim)
        delta = self.runtime.decode(self.pose, z, intention)
        pose = apply_delta(self.pose, delta)

        gate_on = self._feedback_on()
        component = -1
        if gate_on:
            pose, component = apply_feedback(pose, self.rgf.gmm, self.rgf.alpha, True)
            if self.mask.count() > 0:
                centroid = goal_centroid_xy(self.goals, self.mask)
                self.gate.update(pose.pelvis_translation[:2], centroid)

        diag = FrameDiagnostics(
            frame=i + 1, gate_on=gate_on, component=component,
            distances=self._goal_distances(pose), style=self.style)
        self.frames.append(pose)
        self.diagnostics.append(diag)
        self.z_draws.append(z)
        return pose, diag

    def _goal_distances(self, pose: PoseState) -> dict:
        positions = forward_kinematics(pose, self.runtime.skeleton)
        out = {}
        for name in CONTROL_JOINT_NAMES:
            if name in self.goals.joints:
                p = positions[self.runtime.skeleton.index(name)]
                out[name] = float(np.linalg.norm(p - self.goals.joints[name].position))
        return out

    def run(self, n: int):
        for _ in range(n):
            self.step()

    def trace(self) -> EpisodeTrace:
        z = np.stack(self.z_draws) if self.z_draws else np.zeros((0, self.runtime.model.cfg.latent_dim))
        return EpisodeTrace(list(self.frames), list(self.diagnostics), self.cfg, FPS, z)


def run_episode(initial: PoseState, cfg: EpisodeConfig, runtime: ModelRuntime,
                rgf: RgfSettings = None) -> EpisodeTrace:
    runner = EpisodeRunner(runtime, initial, cfg, rgf)
    runner.run(cfg.duration - 1)
    return runner.trace()


def run_sequential(initial: PoseState, goal_list: list, segment_duration: int,
                   cfg: EpisodeConfig, runtime: ModelRuntime,
                   rgf: RgfSettings = None) -> EpisodeTrace:
    """Chain segments, each re-targeted and re-armed, into one trace.

    The first segment spans segment_duration frames including the initial
    pose; every later segment contributes segment_duration new frames from
    the previous segment's final pose.  Total length is
    len(goal_list) * segment_duration.  Goal deadlines are global trace
    frame indices and are rebased per segment.
    """
    if not goal_list:
        raise ValueError("goal_list must not be empty")
    frames = []
    diagnostics = []
    z_all = []
    segments = []
    pose = initial
    for s, goals in enumerate(goal_list):
        steps = (segment_duration - 1) if s == 0 else segment_duration
        runner_start = 0 if s == 0 else s * segment_duration - 1
        seg_cfg = EpisodeConfig(
            goals=goals.shift_frames(-runner_start), mask=cfg.mask, duration=steps + 1,
            seed=cfg.seed + s, success_radius=cfg.success_radius, fixed_z=cfg.fixed_z)
        runner = EpisodeRunner(runtime, pose, seg_cfg, rgf)
        runner.run(steps)
        new_frames = runner.frames if s == 0 else runner.frames[1:]
        start = len(frames)
        frames.extend(new_frames)
        offset = start - (0 if s == 0 else 1)
        for d in runner.diagnostics:
            d.frame += offset
            diagnostics.append(d)
        z_all.append(np.stack(runner.z_draws))
        segments.append({"start": start, "end": len(frames) - 1, "goals": goals})
        pose = frames[-1]
    trace = EpisodeTrace(frames, diagnostics, cfg, FPS, np.concatenate(z_all), segments)
    return trace


def inbetween_goals(end: PoseState, skeleton, last_frame: int) -> GoalSpec:
    """Goals for every control joint at the end pose's joint positions."""
    positions = forward_kinematics(end, skeleton)
    joints = {
        name: JointGoal(positions[skeleton.index(name)], last_frame)
        for name in CONTROL_JOINT_NAMES
    }
    return GoalSpec(joints, heading_xy(end))


def run_inbetween(start: PoseState, end: PoseState, duration: int, runtime: ModelRuntime,
                  seed: int = 0, alpha: float = INBETWEEN_ALPHA) -> EpisodeTrace:
    """Generate between two keyframes.

    All six control joints target the end pose, the feedback reference is a
    point mass at the end pose's feature, and the latch never disengages so
    the pull stays active through the final frame.
    """
    goals = inbetween_goals(end, runtime.skeleton, duration - 1)
    cfg = EpisodeConfig(goals=goals, mask=ControlMask.all_active(), duration=duration, seed=seed)
    rgf = RgfSettings(point_mass_gmm(extract_feature(end)), alpha, stop_distance=0.0, style=None)
    return run_episode(start, cfg, runtime, rgf)


def trace_artifacts(trace: EpisodeTrace, skeleton) -> tuple:
    """(clip container bytes, diagnostics table text) for one trace.

    The offline exporter and the control service both serialize through
    here, so their outputs are byte-identical for identical traces.
    """
    clip_bytes = trace.to_clip().to_bytes(skeleton)
    lines = []
    cols = ["frame", "gate", "component", "style"] + [f"dtg_{n}" for n in CONTROL_JOINT_NAMES]
    lines.append("\t".join(cols))
    for d in trace.diagnostics:
        row = [str(d.frame), "1" if d.gate_on else "0", str(d.component), d.style or "-"]
        for name in CONTROL_JOINT_NAMES:
            row.append(f"{d.distances[name]:.9g}" if name in d.distances else "-")
        lines.append("\t".join(row))
    return clip_bytes, "\n".join(lines) + "\n"


def export_trace(trace: EpisodeTrace, clip_path, diagnostics_path, skeleton):
    """Write the clip container and the delimited diagnostics sidecar."""
    clip_bytes, table = trace_artifacts(trace, skeleton)
    with open(clip_path, "wb") as f:
        f.write(clip_bytes)
    with open(diagnostics_path, "w") as f:
        f.write(table)
