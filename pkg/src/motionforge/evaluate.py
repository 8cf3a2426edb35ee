"""Protocol evaluation: fan out grid cases, reduce to metric tables.

Each case runs one episode (or one chained sequential path) and yields a
flat row of metrics; rows keep the grid cell coordinates so reports can
slice by angle, height, distance, or segment.  Reduction is a plain mean
over rows, deterministic for a fixed grid and seed.  Optional process
parallelism fans cases out in chunks and reassembles rows in case order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import InsufficientInitialPoses, TooShort
from .generate import (
    EpisodeConfig,
    RgfSettings,
    run_episode,
    run_inbetween,
    run_sequential,
)
from .metrics import (
    GridCase,
    ProtocolParams,
    distance_to_goal,
    foot_skate,
    l2p_l2q,
    npss,
    protocol_grid,
    success_rate,
    trace_positions,
)
from .model import ModelRuntime
from .pose import PoseState


@dataclass
class EvalReport:
    protocol: str
    rows: list  # one dict per case, in grid order
    aggregates: dict
    params: dict

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "aggregates": self.aggregates,
            "params": self.params,
            "rows": self.rows,
        }


def poses_from_dataset(
    dataset: Dataset, split: str = "test", count: int = 6, seed: int = 0
) -> tuple:
    """Deterministically draw distinct (clip, frame) poses from a split."""
    clips = dataset.windows(split)
    if not clips:
        raise InsufficientInitialPoses(f"split {split!r} has no clips")
    rng = np.random.default_rng(seed)
    poses = []
    for k in range(count):
        clip = clips[int(rng.integers(0, len(clips)))] if len(clips) > 1 else clips[0]
        frame = int(rng.integers(0, len(clip)))
        poses.append(clip.frame(frame))
    return tuple(poses)


def _sequential_segment_dtg(trace, skeleton, control_joint):
    """Min distance to each segment's goal within that segment's frames."""
    positions = trace_positions(trace.data(), skeleton)
    joint_idx = skeleton.index(control_joint)
    out = []
    for seg in trace.segments:
        goal = seg["goals"].joints[control_joint].position
        window = positions[seg["start"] : seg["end"] + 1, joint_idx]
        out.append(float(np.linalg.norm(window - goal, axis=1).min()) * 100.0)
    return out


def evaluate_case(
    case: GridCase, runtime: ModelRuntime, rgf: RgfSettings = None
) -> dict:
    skeleton = runtime.skeleton
    row = {"pose_index": case.pose_index, "trial": case.trial, "seed": case.config.seed}
    for key, value in case.cell.items():
        row[key] = value

    if case.goal_list is not None:
        trace = run_sequential(
            case.initial_pose,
            list(case.goal_list),
            case.segment_duration,
            case.config,
            runtime,
            rgf,
        )
        control_joint = next(iter(case.goal_list[0].joints))
        seg_dtg = _sequential_segment_dtg(trace, skeleton, control_joint)
        for s, value in enumerate(seg_dtg):
            row[f"dtg_segment{s}_cm"] = value
        row["dtg_cm"] = float(np.mean(seg_dtg))
        row["dtg_final_segment_cm"] = seg_dtg[-1]
        radius_cm = case.config.success_radius * 100.0
        row["success_rate"] = float(np.mean([d <= radius_cm for d in seg_dtg]))
        row["path_index"] = case.path_index
    else:
        trace = run_episode(case.initial_pose, case.config, runtime, rgf)
        positions = trace_positions(trace.data(), skeleton)
        flags, sr = success_rate(
            positions, skeleton, case.config.goals, case.config.success_radius
        )
        dtg = distance_to_goal(positions, skeleton, case.config.goals)
        row["success_rate"] = sr
        row["dtg_cm"] = float(np.mean(list(dtg.values())))
        for name, value in sorted(dtg.items()):
            row[f"dtg_{name}_cm"] = value

    row["foot_skate_pct"] = foot_skate(trace_positions(trace.data(), skeleton), skeleton)
    row["frames"] = len(trace)
    return row


def _case_chunk(args):
    cases, runtime, rgf = args
    return [evaluate_case(c, runtime, rgf) for c in cases]


def evaluate_grid(
    cases, runtime: ModelRuntime, rgf: RgfSettings = None, workers: int = 0, progress=None
) -> list:
    """Rows for every case, in case order."""
    if workers and workers > 1 and len(cases) > 1:
        chunks = [list(c) for c in np.array_split(np.array(cases, dtype=object), workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_case_chunk, [(c, runtime, rgf) for c in chunks if c]))
        rows = [row for part in parts for row in part]
    else:
        rows = []
        for i, case in enumerate(cases):
            rows.append(evaluate_case(case, runtime, rgf))
            if progress is not None:
                progress(i + 1, len(cases))
    return rows


def aggregate_rows(rows: list) -> dict:
    if not rows:
        return {"cases": 0}
    agg = {"cases": len(rows)}
    for key in ("success_rate", "dtg_cm", "dtg_final_segment_cm", "foot_skate_pct"):
        values = [r[key] for r in rows if key in r]
        if values:
            agg[key] = float(np.mean(values))
    return agg


def evaluate_protocol(
    kind: str,
    params: ProtocolParams,
    runtime: ModelRuntime,
    rgf: RgfSettings = None,
    workers: int = 0,
    max_cases: int = None,
    progress=None,
) -> EvalReport:
    """Build the grid for one protocol and evaluate it.

    max_cases truncates the grid deterministically (first N cases), for
    subset runs; the full grid sizes are fixed by the protocol counts.
    """
    cases = protocol_grid(kind, params, runtime.skeleton)
    if max_cases is not None:
        cases = cases[:max_cases]
    rows = evaluate_grid(cases, runtime, rgf, workers=workers, progress=progress)
    snapshot = {
        "kind": kind,
        "cases": len(cases),
        "duration": params.duration,
        "trials": params.trials,
        "seed": params.seed,
        "success_radius": params.success_radius,
    }
    return EvalReport(kind, rows, aggregate_rows(rows), snapshot)


def evaluate_inbetween(
    dataset: Dataset,
    runtime: ModelRuntime,
    count: int = 10,
    duration: int = 60,
    seed: int = 0,
    split: str = "test",
) -> EvalReport:
    """Keyframe in-betweening against held-out windows.

    Each selected window contributes one transition: generate from its
    first frame to its frame duration-1, then compare against the ground
    truth slice with position, rotation, and spectral metrics.
    """
    windows = [w for w in dataset.windows(split) if len(w) >= duration]
    if not windows:
        raise TooShort(f"no {split} window has {duration} frames")
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(count):
        window = windows[int(rng.integers(0, len(windows)))]
        start_frame = int(rng.integers(0, len(window) - duration + 1))
        gt = window.data[start_frame : start_frame + duration]
        start = PoseState.from_flat(gt[0])
        end = PoseState.from_flat(gt[-1])
        trace = run_inbetween(start, end, duration, runtime, seed=seed + k)
        pred = trace.data()
        l2p, l2q = l2p_l2q(pred, gt, runtime.skeleton)
        row = {
            "case": k,
            "l2p": l2p,
            "l2q": l2q,
            "npss": npss(pred, gt),
            "foot_skate_pct": foot_skate(trace_positions(pred, runtime.skeleton), runtime.skeleton),
            "frames": duration,
        }
        rows.append(row)
    agg = {"cases": len(rows)}
    for key in ("l2p", "l2q", "npss", "foot_skate_pct"):
        agg[key] = float(np.mean([r[key] for r in rows]))
    return EvalReport("inbetween", rows, agg, {"kind": "inbetween", "duration": duration, "seed": seed})
