"""Procedural motion generator for the synthetic training corpus.

Two clip families:

* walk: the pelvis follows a waypoint-steered path with a bounded turn
  rate and slowly modulated speed; legs are solved with closed-form
  two-link IK against ankle plant points that stay world-fixed for the
  whole stance phase (near-zero ground-truth foot skate); arms swing in
  opposition and the torso carries a slight pitch.
* reach: a standing character sweeps one wrist along a smoothed path to
  a sampled target point and holds it there, bending the spine forward
  for low targets.  The target is recorded as the clip's goal so tests
  can check the final wrist position by forward kinematics.

Everything is deterministic under the supplied numpy Generator.
"""

from __future__ import annotations

import numpy as np

from .clips import MotionClip
from .intention import GoalSpec, JointGoal
from .pose import BODY_JOINTS, PoseState, forward_kinematics_full
from .rotations import (
    IDENTITY_6D,
    axis_angle,
    matrix_to_rot6d_unchecked,
    rotation_x,
    rotation_y,
    rotation_z,
)
from .skeleton import KinematicSkeleton, default_skeleton

THIGH_LEN = 0.40
SHANK_LEN = 0.42
UPPER_ARM_LEN = 0.26
FOREARM_LEN = 0.25
HIP_HALF_WIDTH = 0.09
ANKLE_REST_HEIGHT = 0.04  # straight leg over a flat foot puts the ankle here

WALK_PELVIS_HEIGHT = 0.87
CROUCH_PELVIS_HEIGHT = 0.80
STAND_PELVIS_HEIGHT = 0.90
MAX_PLANT_AHEAD = 0.21  # keeps the hip-to-ankle distance inside leg reach
TURN_RATE_LIMIT = 2.2  # rad/s
ARM_SPAN = UPPER_ARM_LEN + FOREARM_LEN


def _smooth01(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _wrap_angle(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def two_link_ik(target, len1, len2, rest_dir, rest_hinge, bend_hint):
    """Closed-form IK for a two-bone chain with a hinged middle joint.

    The chain at rest runs len1 * rest_dir to the middle joint and then
    len2 * rest_dir to the end effector; the middle joint is a pure hinge
    about rest_hinge (which must be orthogonal to rest_dir).  Returns the
    local rotation matrices (parent, child) that place the end effector
    at `target` (same frame as rest_dir), with the bend apex pushed
    toward `bend_hint`.  Unreachable targets are clamped to the reach
    annulus, so the solution is always defined.
    """
    target = np.asarray(target, dtype=np.float64)
    r1 = np.asarray(rest_dir, dtype=np.float64)
    r2 = np.asarray(rest_hinge, dtype=np.float64)
    dist = float(np.linalg.norm(target))
    t_hat = target / dist if dist > 1e-9 else r1
    reach = np.clip(dist, abs(len1 - len2) + 1e-6, len1 + len2 - 1e-6)

    axis = np.cross(t_hat, np.asarray(bend_hint, dtype=np.float64))
    if np.linalg.norm(axis) < 1e-8:
        for fallback in ((0.0, 0.0, -1.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)):
            axis = np.cross(t_hat, np.asarray(fallback))
            if np.linalg.norm(axis) >= 1e-8:
                break
    axis = axis / np.linalg.norm(axis)

    cos_top = (len1 * len1 + reach * reach - len2 * len2) / (2.0 * len1 * reach)
    gamma = float(np.arccos(np.clip(cos_top, -1.0, 1.0)))
    upper_dir = axis_angle(axis, gamma) @ t_hat

    basis_target = np.column_stack([upper_dir, -axis, np.cross(upper_dir, -axis)])
    basis_rest = np.column_stack([r1, r2, np.cross(r1, r2)])
    parent = basis_target @ basis_rest.T

    cos_mid = (len1 * len1 + len2 * len2 - reach * reach) / (2.0 * len1 * len2)
    flex = np.pi - float(np.arccos(np.clip(cos_mid, -1.0, 1.0)))
    child = axis_angle(r2, flex)
    return parent, child


class _PoseBuilder:
    """Accumulates local joint rotations by name before flattening."""

    def __init__(self, skeleton: KinematicSkeleton):
        self.skeleton = skeleton
        self.rows = np.tile(IDENTITY_6D, (BODY_JOINTS, 1))

    def set_local(self, name: str, matrix):
        self.rows[self.skeleton.index(name) - 1] = matrix_to_rot6d_unchecked(matrix)

    def pose(self, pelvis, root_matrix) -> PoseState:
        return PoseState(pelvis, matrix_to_rot6d_unchecked(root_matrix), self.rows.copy())


def _solve_leg(builder, side, root_m, pelvis, ankle_target, foot_yaw):
    """IK one leg so the ankle lands on ankle_target (world) and the foot's
    global orientation is a pure yaw (flat on the ground)."""
    sk = builder.skeleton
    hip_name = f"{side}_hip"
    hip_world = pelvis + root_m @ sk.offsets[sk.index(hip_name)]
    local_target = root_m.T @ (np.asarray(ankle_target) - hip_world)
    hip_m, knee_m = two_link_ik(
        local_target,
        THIGH_LEN,
        SHANK_LEN,
        rest_dir=(0.0, 0.0, -1.0),
        rest_hinge=(0.0, 1.0, 0.0),
        bend_hint=(1.0, 0.0, 0.0),
    )
    leg_global = root_m @ hip_m @ knee_m
    ankle_m = leg_global.T @ rotation_z(foot_yaw)
    builder.set_local(hip_name, hip_m)
    builder.set_local(f"{side}_knee", knee_m)
    builder.set_local(f"{side}_ankle", ankle_m)


def _hang_arm(builder, side, swing=0.0, elbow_bend=0.3):
    """Arms hanging from the T-pose rig, optionally swung fore/aft."""
    if side == "left":
        shoulder = rotation_y(swing) @ rotation_x(-np.pi / 2.0)
        elbow = rotation_z(-elbow_bend)
    else:
        shoulder = rotation_y(swing) @ rotation_x(np.pi / 2.0)
        elbow = rotation_z(elbow_bend)
    builder.set_local(f"{side}_shoulder", shoulder)
    builder.set_local(f"{side}_elbow", elbow)


def standing_pose(
    skeleton: KinematicSkeleton | None = None,
    yaw: float = 0.0,
    pelvis_xy=(0.0, 0.0),
    pelvis_height: float = STAND_PELVIS_HEIGHT,
) -> PoseState:
    """Relaxed upright stance: feet planted under the hips, arms hanging."""
    skeleton = skeleton or default_skeleton()
    root_m = rotation_z(yaw)
    pelvis = np.array([pelvis_xy[0], pelvis_xy[1], pelvis_height])
    builder = _PoseBuilder(skeleton)
    for side, lat in (("left", HIP_HALF_WIDTH), ("right", -HIP_HALF_WIDTH)):
        ankle = pelvis + root_m @ np.array([0.0, lat, 0.0])
        ankle[2] = ANKLE_REST_HEIGHT
        _solve_leg(builder, side, root_m, pelvis, ankle, yaw)
    _hang_arm(builder, "left")
    _hang_arm(builder, "right")
    return builder.pose(pelvis, root_m)


def _steered_path(rng, n_frames, dt, base_speed):
    """Waypoint-steered planar path: positions, headings, arc length.

    Some waypoints get a dwell: speed ramps to zero and the character
    holds in place before moving on.  Reaching the last waypoint usually
    ends the clip in a hold, so arriving-and-stopping is in the corpus,
    not just perpetual locomotion.
    """
    heading = float(rng.uniform(-np.pi, np.pi))
    # bearing changes up to +-160 degrees so sharp turns and U-turns
    # appear in the corpus, not just gentle arcs
    bearings = heading + np.cumsum(rng.uniform(-2.8, 2.8, size=rng.integers(3, 6)))
    dists = rng.uniform(1.5, 3.5, size=bearings.shape[0])
    waypoints = np.cumsum(
        np.stack([dists * np.cos(bearings), dists * np.sin(bearings)], axis=1), axis=0
    )
    mod_period = float(rng.uniform(2.5, 4.0))
    mod_phase = float(rng.uniform(0.0, 2.0 * np.pi))
    dwell_at = rng.random(waypoints.shape[0]) < 0.65
    dwell_at[-1] = rng.random() < 0.7
    dwell_lens = rng.uniform(0.8, 2.0, size=waypoints.shape[0])

    pos = np.zeros(2)
    target_i = 0
    dwell_until = -1.0
    positions = np.empty((n_frames, 2))
    headings = np.empty(n_frames)
    speeds = np.empty(n_frames)
    for i in range(n_frames):
        t = i * dt
        if t < dwell_until:
            positions[i] = pos
            headings[i] = heading
            speeds[i] = 0.0
            continue
        if dwell_until > 0.0:
            dwell_until = -1.0
            if target_i < len(waypoints) - 1:
                target_i += 1
        to_target = waypoints[target_i] - pos
        d = float(np.linalg.norm(to_target))
        arrive_radius = 0.18 if dwell_at[target_i] else 0.5
        if d < arrive_radius:
            if dwell_at[target_i]:
                last = target_i == len(waypoints) - 1
                dwell_until = np.inf if last else t + dwell_lens[target_i]
                positions[i] = pos
                headings[i] = heading
                speeds[i] = 0.0
                continue
            if target_i < len(waypoints) - 1:
                target_i += 1
                to_target = waypoints[target_i] - pos
                d = float(np.linalg.norm(to_target))
        desired = np.arctan2(to_target[1], to_target[0])
        err = _wrap_angle(desired - heading)
        heading += float(np.clip(err, -TURN_RATE_LIMIT * dt, TURN_RATE_LIMIT * dt))
        speed = base_speed * (1.0 - 0.12 * np.sin(2.0 * np.pi * t / mod_period + mod_phase))
        speed *= 1.0 - 0.45 * min(abs(err) / 1.2, 1.0)
        speed = max(speed, 0.2)
        if dwell_at[target_i]:
            # brake on the approach so the stop is not a step discontinuity
            speed *= float(np.clip(d / 0.6, 0.3, 1.0))
        positions[i] = pos
        headings[i] = heading
        speeds[i] = speed
        pos = pos + speed * dt * np.array([np.cos(heading), np.sin(heading)])
    seg = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    return positions, headings, arc, speeds


def _gait_clock(speeds, dt, step_time):
    """Per-frame gait time: ticks while moving, pauses at step boundaries.

    When the path stops, the clock runs the current step out to its
    boundary (the swing foot lands) and then freezes, so a stopped
    character stands on both plants instead of marching in place.
    """
    g = np.empty(speeds.shape[0])
    val = 0.0
    for i in range(speeds.shape[0]):
        g[i] = val
        if speeds[i] > 0.0:
            val += dt
        else:
            boundary = step_time * np.ceil(val / step_time - 1e-9)
            if boundary > val + 1e-12:
                val = min(val + dt, boundary)
    return g


def _plant_schedule(positions, headings, arc, gait, step_time):
    """World-fixed ankle plant points, one per step boundary.

    The foot planting at step k lands half the upcoming stance travel
    ahead of the pelvis; even steps are the left foot.  Index k=-1 holds
    the fictitious previous plant of the foot that starts in swing.
    Plants are looked up in gait time, which stalls during dwells.
    """
    n_frames = positions.shape[0]
    frame_axis = np.arange(n_frames, dtype=np.float64)

    def at_gait(t):
        x = float(np.interp(t, gait, frame_axis))
        lo = int(np.floor(x))
        hi = min(lo + 1, n_frames - 1)
        w = x - lo
        pos = positions[lo] * (1.0 - w) + positions[hi] * w
        hd = headings[lo] + _wrap_angle(headings[hi] - headings[lo]) * w
        s = arc[lo] * (1.0 - w) + arc[hi] * w
        return pos, hd, s

    n_steps = int(np.ceil(gait[-1] / step_time)) + 2
    plants = {}
    yaws = {}
    for k in range(-1, n_steps + 1):
        t_plant = max(k, 0) * step_time
        pos, hd, s_here = at_gait(t_plant)
        _, _, s_next = at_gait(t_plant + step_time)
        ahead = min(0.5 * (s_next - s_here), MAX_PLANT_AHEAD)
        if k < 0:
            ahead = -ahead
        lat = HIP_HALF_WIDTH if k % 2 == 0 else -HIP_HALF_WIDTH
        c, s = np.cos(hd), np.sin(hd)
        plants[k] = np.array(
            [pos[0] + ahead * c - lat * s, pos[1] + ahead * s + lat * c, ANKLE_REST_HEIGHT]
        )
        yaws[k] = hd
    return plants, yaws


def generate_walk_clip(
    rng: np.random.Generator,
    skeleton: KinematicSkeleton | None = None,
    fps: float = 30.0,
    crouch: bool = False,
) -> MotionClip:
    skeleton = skeleton or default_skeleton()
    dt = 1.0 / fps
    n_frames = int(round(rng.uniform(4.0, 8.0) * fps))
    base_speed = float(rng.uniform(0.8, 1.25)) * (0.75 if crouch else 1.0)
    step_time = float(np.clip(0.40 / base_speed, 0.28, 0.42))
    bump = float(rng.uniform(0.05, 0.09))
    swing_amp = float(rng.uniform(0.2, 0.4))
    base_z = CROUCH_PELVIS_HEIGHT if crouch else WALK_PELVIS_HEIGHT
    bob_amp = 0.008 if crouch else 0.010
    spine_pitch = 0.28 if crouch else 0.06

    positions, headings, arc, speeds = _steered_path(rng, n_frames, dt, base_speed)
    gait = _gait_clock(speeds, dt, step_time)
    plants, plant_yaws = _plant_schedule(positions, headings, arc, gait, step_time)

    frames = np.empty((n_frames, 3 + 6 + 6 * BODY_JOINTS))
    for i in range(n_frames):
        k = int(np.floor(gait[i] / step_time + 1e-9))
        u = float(np.clip(gait[i] / step_time - k, 0.0, 1.0))
        phase = np.pi * gait[i] / step_time

        pelvis = np.array(
            [positions[i, 0], positions[i, 1], base_z + bob_amp * np.cos(2.0 * phase)]
        )
        root_m = rotation_z(headings[i]) @ rotation_x(0.03 * np.sin(phase))
        builder = _PoseBuilder(skeleton)

        stance_side = "left" if k % 2 == 0 else "right"
        swing_side = "right" if k % 2 == 0 else "left"
        swing_from, swing_to = plants[k - 1], plants[k + 1]
        # horizontal travel dwells at both ends so the foot is stationary
        # for a full frame on either side of contact height
        su = _smooth01((u - 0.12) / 0.68)
        swing_pos = swing_from * (1.0 - su) + swing_to * su
        swing_pos = np.array(
            [swing_pos[0], swing_pos[1], ANKLE_REST_HEIGHT + bump * np.sin(np.pi * u)]
        )
        swing_yaw = plant_yaws[k - 1] + _wrap_angle(plant_yaws[k + 1] - plant_yaws[k - 1]) * su
        _solve_leg(builder, stance_side, root_m, pelvis, plants[k], plant_yaws[k])
        _solve_leg(builder, swing_side, root_m, pelvis, swing_pos, swing_yaw)

        pitch_each = spine_pitch / 3.0
        builder.set_local("spine1", rotation_y(pitch_each))
        builder.set_local("spine2", rotation_y(pitch_each))
        builder.set_local("spine3", rotation_z(0.06 * np.sin(phase)) @ rotation_y(pitch_each))

        arm = swing_amp * np.sin(phase)
        _hang_arm(builder, "left", swing=arm)
        _hang_arm(builder, "right", swing=-arm)

        frames[i] = builder.pose(pelvis, root_m).flatten()

    source = "walk-crouch" if crouch else "walk"
    return MotionClip(fps=fps, data=frames, source=source)


def generate_reach_clip(
    rng: np.random.Generator,
    skeleton: KinematicSkeleton | None = None,
    fps: float = 30.0,
) -> MotionClip:
    skeleton = skeleton or default_skeleton()
    dt = 1.0 / fps
    move_s = float(rng.uniform(1.8, 2.6))
    hold_s = float(rng.uniform(0.4, 0.8))
    n_frames = max(int(round((move_s + hold_s) * fps)), 60)
    yaw = float(rng.uniform(-np.pi, np.pi))
    pelvis0 = np.array([0.0, 0.0, STAND_PELVIS_HEIGHT])
    root_m = rotation_z(yaw)

    rest = standing_pose(skeleton, yaw=yaw, pelvis_height=STAND_PELVIS_HEIGHT)
    rest_pos, _ = forward_kinematics_full(rest, skeleton)
    shoulder0 = rest_pos[skeleton.index("right_shoulder")]
    wrist_start = rest_pos[skeleton.index("right_wrist")]

    azimuth = yaw + float(rng.uniform(-1.75, 0.79))
    elevation = float(rng.uniform(-0.96, 0.70))
    radius = float(rng.uniform(0.30, 0.48))
    direction = np.array(
        [
            np.cos(elevation) * np.cos(azimuth),
            np.cos(elevation) * np.sin(azimuth),
            np.sin(elevation),
        ]
    )
    target = shoulder0 + radius * direction

    pitch_max = float(np.clip(0.5 * max(0.0, 0.9 - target[2]), 0.0, 0.45))

    def torso(builder, pitch):
        each = pitch / 3.0
        builder.set_local("spine1", rotation_y(each))
        builder.set_local("spine2", rotation_y(each))
        builder.set_local("spine3", rotation_y(each))

    # Clamp the target into the pitched-forward reach sphere so the final
    # wrist position matches the recorded goal.
    probe = _PoseBuilder(skeleton)
    torso(probe, pitch_max)
    probe_pos, _ = forward_kinematics_full(probe.pose(pelvis0, root_m), skeleton)
    shoulder_end = probe_pos[skeleton.index("right_shoulder")]
    offset = target - shoulder_end
    span = float(np.linalg.norm(offset))
    if span > ARM_SPAN - 0.015:
        target = shoulder_end + offset * (ARM_SPAN - 0.015) / span
    elif span < 0.12:
        target = shoulder_end + offset * (0.12 / max(span, 1e-9))

    plant_l = pelvis0 + root_m @ np.array([0.0, HIP_HALF_WIDTH, 0.0])
    plant_r = pelvis0 + root_m @ np.array([0.0, -HIP_HALF_WIDTH, 0.0])
    plant_l[2] = plant_r[2] = ANKLE_REST_HEIGHT
    sway_period = float(rng.uniform(2.0, 3.5))

    frames = np.empty((n_frames, 3 + 6 + 6 * BODY_JOINTS))
    for i in range(n_frames):
        t = i * dt
        ramp = _smooth01(t / move_s)
        sway = 0.008 * np.sin(2.0 * np.pi * t / sway_period)
        pelvis = pelvis0 + root_m @ np.array([0.0, sway, 0.0])

        builder = _PoseBuilder(skeleton)
        torso(builder, pitch_max * ramp)
        _solve_leg(builder, "left", root_m, pelvis, plant_l, yaw)
        _solve_leg(builder, "right", root_m, pelvis, plant_r, yaw)
        _hang_arm(builder, "left")

        partial = builder.pose(pelvis, root_m)
        pos, rot = forward_kinematics_full(partial, skeleton)
        collar_global = rot[skeleton.index("right_collar")]
        shoulder_world = pos[skeleton.index("right_shoulder")]

        wrist_goal = wrist_start + (target - wrist_start) * ramp
        local_target = collar_global.T @ (wrist_goal - shoulder_world)
        local_hint = collar_global.T @ np.array([0.0, 0.0, -1.0])
        shoulder_m, elbow_m = two_link_ik(
            local_target,
            UPPER_ARM_LEN,
            FOREARM_LEN,
            rest_dir=(0.0, -1.0, 0.0),
            rest_hinge=(0.0, 0.0, 1.0),
            bend_hint=local_hint,
        )
        builder.set_local("right_shoulder", shoulder_m)
        builder.set_local("right_elbow", elbow_m)

        frames[i] = builder.pose(pelvis, root_m).flatten()

    goals = GoalSpec(
        joints={"right_wrist": JointGoal(position=target, goal_frame=n_frames - 1)},
        heading=np.array([np.cos(yaw), np.sin(yaw)]),
    )
    return MotionClip(fps=fps, data=frames, source="reach", goals=goals)


def synth_dataset(
    n_clips: int,
    rng: np.random.Generator,
    skeleton: KinematicSkeleton | None = None,
    fps: float = 30.0,
) -> list:
    """Procedural corpus: a mix of walking, crouch-walking, and reaching."""
    skeleton = skeleton or default_skeleton()
    clips = []
    for _ in range(n_clips):
        draw = rng.random()
        if draw < 0.6:
            clips.append(generate_walk_clip(rng, skeleton, fps=fps))
        elif draw < 0.7:
            clips.append(generate_walk_clip(rng, skeleton, fps=fps, crouch=True))
        else:
            clips.append(generate_reach_clip(rng, skeleton, fps=fps))
    return clips
