"""Command-line interface.

Subcommands cover the full pipeline: synth, preprocess, train, fit-gmm,
generate, evaluate, serve.  Exit codes: 0 on success, 1 for usage
errors, 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .clips import MotionClip
from .config import (
    load_config,
    model_config_from,
    train_config_from,
    write_provenance,
)
from .data import (
    Dataset,
    load_raw_clips,
    preprocess,
    save_raw_clips,
)
from .errors import MotionForgeError
from .evaluate import (
    evaluate_inbetween,
    evaluate_protocol,
    poses_from_dataset,
)
from .feedback import GmmModel, extract_feature, fit_gmm
from .generate import (
    EpisodeConfig,
    RgfSettings,
    export_trace,
    run_episode,
    run_inbetween,
)
from .intention import ControlMask, GoalSpec, JointGoal
from .metrics import ProtocolParams
from .model import load_checkpoint, save_checkpoint
from .pose import PoseState
from .report import (
    loss_curve_figure,
    render_eval_report,
    trajectory_figure,
    write_rows_tsv,
)
from .skeleton import default_skeleton, load_skeleton
from .synth import standing_pose, synth_dataset
from .training import train


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _skeleton_from(config):
    path = config.get("skeleton")
    return default_skeleton() if path is None else load_skeleton(path)


def _parse_goal(spec: str, default_frame: int):
    """joint=x,y,z[,frame] -> (joint, JointGoal)."""
    if "=" not in spec:
        raise MotionForgeError(f"goal {spec!r} must look like joint=x,y,z[,frame]")
    name, rest = spec.split("=", 1)
    parts = rest.split(",")
    if len(parts) not in (3, 4):
        raise MotionForgeError(f"goal {spec!r} needs 3 coordinates and an optional frame")
    position = [float(v) for v in parts[:3]]
    frame = int(parts[3]) if len(parts) == 4 else default_frame
    return name.strip(), JointGoal(position, frame)


def _initial_pose(spec, skeleton):
    """PATH[:frame] of a clip, or None for the built-in standing pose."""
    if spec is None:
        return standing_pose(skeleton)
    path, _, frame = spec.partition(":")
    clip = MotionClip.load(path)
    return clip.frame(int(frame) if frame else 0)


def cmd_synth(args) -> int:
    config = load_config(args.config, args.set or ())
    skeleton = _skeleton_from(config)
    rng = np.random.default_rng(config["seed"])
    clips = synth_dataset(config["synth"]["clips"], rng, skeleton, fps=config["synth"]["fps"])
    save_raw_clips(args.out, clips, skeleton)
    write_provenance(config, args.out)
    total = sum(len(c) for c in clips)
    print(f"wrote {len(clips)} clips ({total} frames) to {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    config = load_config(args.config, args.set or ())
    skeleton = _skeleton_from(config)
    clips = load_raw_clips(args.clips)
    pre = config["preprocess"]
    dataset = preprocess(
        clips,
        skeleton,
        seed=config["seed"],
        target_fps=pre["target_fps"],
        max_window=pre["max_window"],
        ratios=tuple(pre["ratios"]),
    )
    dataset.save(args.out, skeleton)
    write_provenance(config, args.out)
    counts = {k: len(v) for k, v in dataset.splits.items()}
    print(f"dataset written to {args.out}: windows {counts}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config, args.set or ())
    skeleton = _skeleton_from(config)
    dataset = Dataset.load(args.dataset)
    model_cfg = model_config_from(config)
    train_cfg = train_config_from(config)

    def progress(entry):
        print(
            "epoch {epoch:>3}  ar={ar_steps:>2}  total={total:.5f}  "
            "recon={reconstruction:.5f}  kl={kl:.3f}  joint={joint:.5f}".format(**entry),
            flush=True,
        )

    model, curve = train(dataset, skeleton, model_cfg, train_cfg, progress=progress)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "checkpoint.mfc")
    save_checkpoint(
        ckpt, model, dataset.stats, skeleton,
        extra_meta={"train_config": train_cfg.to_dict(), "loss_curve": curve},
    )
    write_rows_tsv(os.path.join(args.out, "loss_curve.tsv"), curve)
    loss_curve_figure(curve, os.path.join(args.out, "loss_curve.png"))
    write_provenance(config, args.out)
    print(f"checkpoint written to {ckpt}; final loss {curve[-1]['total']:.5f}")
    return 0


def cmd_fit_gmm(args) -> int:
    config = load_config(args.config, args.set or ())
    dataset = Dataset.load(args.dataset)
    gcfg = config["gmm"]
    source_filter = args.source_filter or gcfg["source_filter"]
    windows = dataset.windows("train")
    if source_filter:
        windows = [w for w in windows if source_filter in w.source]
    features = []
    for window in windows:
        for i in range(len(window)):
            features.append(extract_feature(window.frame(i)))
    if not features:
        raise MotionForgeError("no frames matched; check --source-filter")
    features = np.asarray(features)
    limit = gcfg["subsample"]
    if limit and features.shape[0] > limit:
        rng = np.random.default_rng(config["seed"])
        keep = np.sort(rng.choice(features.shape[0], size=limit, replace=False))
        features = features[keep]
    gmm, history = fit_gmm(
        features,
        k=gcfg["components"],
        max_iter=gcfg["max_iterations"],
        seed=config["seed"],
        covariance=gcfg["covariance"],
    )
    gmm.save(args.out, label=args.label or "", alpha=args.alpha)
    print(
        f"fit {gmm.k} components on {features.shape[0]} frames in "
        f"{len(history) - 1} iterations; mean log-likelihood {history[-1]:.4f}"
    )
    return 0


def _rgf_from(args, config) -> RgfSettings:
    if not getattr(args, "gmm", None):
        return None
    gmm, meta = GmmModel.load(args.gmm)
    alpha = args.alpha if args.alpha is not None else config["rgf"]["alpha"]
    return RgfSettings(
        gmm, alpha, config["rgf"]["stop_distance"], meta.get("label") or None
    )


def cmd_generate(args) -> int:
    config = load_config(args.config, args.set or ())
    runtime = load_checkpoint(args.checkpoint)
    skeleton = runtime.skeleton
    episode = config["episode"]
    duration = args.duration or episode["duration"]
    initial = _initial_pose(args.initial, skeleton)
    os.makedirs(args.out, exist_ok=True)

    if args.end is not None:
        end = _initial_pose(args.end, skeleton)
        trace = run_inbetween(initial, end, duration, runtime, seed=args.seed)
    else:
        joints = {}
        for spec in args.goal or ():
            name, goal = _parse_goal(spec, duration - 1)
            joints[name] = goal
        heading = None
        if args.heading:
            h = np.array([float(v) for v in args.heading.split(",")])
            heading = h / np.linalg.norm(h)
        if not joints and heading is None:
            raise MotionForgeError("provide at least one --goal or a --heading")
        goals = GoalSpec(joints, heading)
        mask = (
            ControlMask.from_names([s.strip() for s in args.mask.split(",") if s.strip()])
            if args.mask
            else ControlMask.from_names(list(joints))
        )
        cfg = EpisodeConfig(
            goals=goals,
            mask=mask,
            duration=duration,
            seed=args.seed,
            success_radius=episode["success_radius"],
            fixed_z=episode["fixed_z"],
        )
        trace = run_episode(initial, cfg, runtime, _rgf_from(args, config))

    clip_path = os.path.join(args.out, "episode.mfc")
    diag_path = os.path.join(args.out, "diagnostics.tsv")
    export_trace(trace, clip_path, diag_path, skeleton)
    joint = next(iter(trace.config.goals.joints), None)
    trajectory_figure(trace, skeleton, os.path.join(args.out, "trajectory.png"), joint=joint)
    write_provenance(config, args.out)
    if trace.diagnostics and trace.diagnostics[-1].distances:
        final = trace.diagnostics[-1].distances
        summary = "  ".join(f"{k}={v:.3f}m" for k, v in sorted(final.items()))
        print(f"episode of {len(trace)} frames written to {args.out}; final distances: {summary}")
    else:
        print(f"episode of {len(trace)} frames written to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    config = load_config(args.config, args.set or ())
    runtime = load_checkpoint(args.checkpoint)
    dataset = Dataset.load(args.dataset)
    rgf = _rgf_from(args, config)
    os.makedirs(args.out, exist_ok=True)

    if args.protocol == "inbetween":
        report = evaluate_inbetween(
            dataset,
            runtime,
            count=args.max_cases or 10,
            duration=args.duration or 60,
            seed=config["seed"],
        )
    else:
        proto = config["protocol"]
        poses = poses_from_dataset(dataset, "test", proto["poses_used"], config["seed"])
        targets = ()
        if args.protocol == "multi":
            targets = poses_from_dataset(
                dataset, "test", proto["targets_used"], config["seed"] + 1
            )
        params = ProtocolParams(
            initial_poses=poses,
            target_poses=targets,
            seed=config["seed"],
            duration=args.duration or proto["duration"],
            trials=args.trials or proto["trials"],
            angles=proto["angles"],
            heights=proto["heights"],
            distances=proto["distances"],
            height_range=tuple(proto["height_range"]),
            distance_range=tuple(proto["distance_range"]),
            poses_used=proto["poses_used"],
            control_joint=proto["control_joint"],
            success_radius=config["episode"]["success_radius"],
            segments=proto["segments"],
            directions=proto["directions"],
            segment_distance=proto["segment_distance"],
            wrist_height=proto["wrist_height"],
            targets_used=proto["targets_used"],
        )
        report = evaluate_protocol(
            args.protocol, params, runtime, rgf,
            workers=args.workers, max_cases=args.max_cases,
        )

    written = render_eval_report(report, args.out)
    write_provenance(config, args.out)
    summary = "  ".join(f"{k}={v:.4g}" for k, v in sorted(report.aggregates.items()))
    print(f"{report.protocol}: {summary}")
    print("wrote " + ", ".join(written))
    return 0


def cmd_serve(args) -> int:
    from .service import serve_forever

    config = load_config(args.config, args.set or ())
    svc = config["service"]
    serve_forever(
        checkpoint=args.checkpoint,
        host=args.host or svc["host"],
        tcp_port=args.tcp_port if args.tcp_port is not None else svc["tcp_port"],
        ws_port=args.ws_port if args.ws_port is not None else svc["ws_port"],
        styles_dir=args.styles,
    )
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="motionforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", default=None, help="YAML run config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted path)")

    p = sub.add_parser("synth", help="generate the synthetic clip corpus")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="build a training dataset from raw clips")
    p.add_argument("--clips", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit-gmm", help="fit a pose-feature mixture from the training split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label", default=None, help="style label stored in the file")
    p.add_argument("--alpha", type=float, default=None, help="style blend override")
    p.add_argument("--source-filter", default=None, help="keep clips whose source tag contains this")
    common(p)
    p.set_defaults(func=cmd_fit_gmm)

    p = sub.add_parser("generate", help="run one episode and export it")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--goal", action="append", metavar="JOINT=X,Y,Z[,FRAME]")
    p.add_argument("--heading", default=None, metavar="X,Y")
    p.add_argument("--mask", default=None, help="comma-separated active joints")
    p.add_argument("--duration", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--initial", default=None, metavar="CLIP[:FRAME]")
    p.add_argument("--end", default=None, metavar="CLIP[:FRAME]",
                   help="generate a transition to this pose instead")
    p.add_argument("--gmm", default=None, help="feedback mixture file")
    p.add_argument("--alpha", type=float, default=None)
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="run an evaluation protocol")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--protocol", required=True,
                   choices=["single", "sequential", "multi", "inbetween"])
    p.add_argument("--max-cases", type=int, default=None)
    p.add_argument("--duration", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--workers", type=int, default=0)
    p.add_argument("--gmm", default=None)
    p.add_argument("--alpha", type=float, default=None)
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the control service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default=None)
    p.add_argument("--tcp-port", type=int, default=None)
    p.add_argument("--ws-port", type=int, default=None)
    p.add_argument("--styles", default=None, help="directory of style mixture files")
    common(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 2
    except (MotionForgeError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
