"""Loss terms and the autoregressive training loop.

Each optimization step rolls the model forward for a scheduled number of
autoregressive steps from a ground-truth start frame: the pose input is
the model's own prediction while the encoder target stays the ground
truth delta, so the model learns under the same drift it will see at
generation time.  Goals are pseudo-goals: future frames of the same
window, with a control mask that stays fixed for the whole rollout.

Losses per step: delta reconstruction MSE in standardized space, the
closed-form KL of the diagonal-Gaussian posterior against the unit
Gaussian, and an FK position MSE over the active control joints of the
advanced pose.  Paper-scale training uses much larger batches and epoch
counts; the defaults here are the desk-scale recipe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .data import Dataset, sample_control_mask, sample_pseudo_goal
from .diffkin import apply_delta_t, fk_positions_t, skeleton_tensors
from .errors import NonFiniteLoss, TooFewSamples
from .intention import ControlMask, GoalSpec, JointGoal, assemble_intention, yaw_localize
from .model import (
    ModelConfig,
    MotionModel,
    ModelRuntime,
    attention_mask_from,
    build_model,
)
from .pose import PoseState, compute_delta, forward_kinematics, heading_xy
from .skeleton import CONTROL_JOINT_NAMES, KinematicSkeleton

__all__ = [
    "TrainConfig",
    "scheduled_ar_steps",
    "kl_divergence",
    "total_loss",
    "sample_control_mask",
    "sample_pseudo_goal",
    "train",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    steps_per_epoch: int = None  # None: one pass over all eligible starts
    learning_rate: float = 1e-4
    lambda_kl: float = 1e-3
    lambda_joint: float = 1.0
    ss_start_epoch: int = 10
    ss_full_epoch: int = 50
    ss_max_steps: int = 10
    detach_between_steps: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.ss_max_steps < 1:
            raise ValueError("epochs, batch_size and ss_max_steps must be >= 1")
        if self.ss_full_epoch < self.ss_start_epoch:
            raise ValueError("ss_full_epoch must be >= ss_start_epoch")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "steps_per_epoch": self.steps_per_epoch,
            "learning_rate": self.learning_rate,
            "lambda_kl": self.lambda_kl,
            "lambda_joint": self.lambda_joint,
            "ss_start_epoch": self.ss_start_epoch,
            "ss_full_epoch": self.ss_full_epoch,
            "ss_max_steps": self.ss_max_steps,
            "detach_between_steps": self.detach_between_steps,
            "seed": self.seed,
        }


def scheduled_ar_steps(epoch: int, cfg: TrainConfig) -> int:
    """Rollout length for a 1-based epoch: 1 before the ramp, linear ramp
    up to the maximum at ss_full_epoch, constant after."""
    if epoch < cfg.ss_start_epoch:
        return 1
    if epoch >= cfg.ss_full_epoch:
        return cfg.ss_max_steps
    span = cfg.ss_full_epoch - cfg.ss_start_epoch
    frac = (epoch - cfg.ss_start_epoch) / span
    return 1 + int(np.floor(frac * (cfg.ss_max_steps - 1)))


def kl_divergence(mean: torch.Tensor, log_variance: torch.Tensor) -> torch.Tensor:
    """Closed-form KL(q || N(0, I)), summed over latent dims, batch mean."""
    per_sample = 0.5 * (mean**2 + torch.exp(log_variance) - 1.0 - log_variance).sum(dim=-1)
    return per_sample.mean()


def total_loss(
    reconstruction: torch.Tensor,
    kl: torch.Tensor,
    joint: torch.Tensor,
    cfg: TrainConfig,
):
    """Weighted sum plus a float breakdown of the individual terms."""
    total = reconstruction + cfg.lambda_kl * kl + cfg.lambda_joint * joint
    breakdown = {
        "reconstruction": float(reconstruction.detach()),
        "kl": float(kl.detach()),
        "joint": float(joint.detach()),
        "total": float(total.detach()),
    }
    return total, breakdown


class _WindowCache:
    """Precomputed per-window arrays the rollout assembly needs."""

    def __init__(self, clip, skeleton, stats):
        t_total = len(clip)
        self.data = clip.data
        self.frames = t_total
        self.deltas_std = np.empty((t_total - 1, clip.data.shape[1] - 1), dtype=np.float64)
        for i in range(t_total - 1):
            raw = compute_delta(clip.frame(i), clip.frame(i + 1)).flatten()
            self.deltas_std[i] = stats.delta.standardize(raw)
        self.positions = np.empty((t_total, skeleton.joint_count, 3))
        self.headings = np.empty((t_total, 2))
        for i in range(t_total):
            pose = clip.frame(i)
            self.positions[i] = forward_kinematics(pose, skeleton)
            self.headings[i] = heading_xy(pose)


def _draw_sample(cache: _WindowCache, n_ar: int, rng, skeleton):
    """Start frame, pseudo-goal and mask for one rollout."""
    start = int(rng.integers(0, cache.frames - n_ar))
    mask = sample_control_mask(rng)
    g = int(rng.integers(start + 1, cache.frames))
    joints = {
        name: JointGoal(cache.positions[g][skeleton.index(name)], g)
        for name, on in zip(CONTROL_JOINT_NAMES, mask.active)
        if on
    }
    goals = GoalSpec(joints, cache.headings[g])
    return start, mask, goals


def train(
    dataset: Dataset,
    skeleton: KinematicSkeleton,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    progress=None,
):
    """Optimize a fresh model on the dataset's training split.

    Returns (model, loss_curve) where loss_curve holds one breakdown dict
    per epoch.  Deterministic for a fixed seed.
    """
    windows = [w for w in dataset.windows("train") if len(w) > cfg.ss_max_steps]
    if not windows:
        raise TooFewSamples("no training window is longer than the rollout horizon")
    stats = dataset.stats
    caches = [_WindowCache(w, skeleton, stats) for w in windows]

    model = build_model(model_cfg, cfg.seed)
    model.train()
    opt = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8
    )
    parents, offsets = skeleton_tensors(skeleton, dtype=torch.float32)
    control_idx = skeleton.control_indices()

    def t32(x):
        return torch.from_numpy(np.ascontiguousarray(x)).float()

    pose_mean, pose_std = t32(stats.pose.mean), t32(stats.pose.std)
    delta_mean, delta_std = t32(stats.delta.mean), t32(stats.delta.std)
    intent_mean, intent_std = t32(stats.intention.mean), t32(stats.intention.std)

    curve = []
    for epoch in range(1, cfg.epochs + 1):
        n_ar = scheduled_ar_steps(epoch, cfg)
        rng = np.random.default_rng(cfg.seed * 100_003 + epoch)
        torch.manual_seed(cfg.seed * 100_003 + epoch)
        eligible = sum(c.frames - n_ar for c in caches)
        steps = cfg.steps_per_epoch or max(1, int(np.ceil(eligible / cfg.batch_size)))

        sums = {"reconstruction": 0.0, "kl": 0.0, "joint": 0.0, "total": 0.0}
        for _ in range(steps):
            batch = []
            for _ in range(cfg.batch_size):
                cache = caches[int(rng.integers(0, len(caches)))]
                batch.append((cache, *_draw_sample(cache, n_ar, rng, skeleton)))

            b = len(batch)
            pose_raw = np.stack([c.data[i] for c, i, _, _ in batch])
            key_mask = torch.from_numpy(
                np.stack([attention_mask_from(m) for _, _, m, _ in batch])
            )
            joint_weights = torch.zeros((b, skeleton.joint_count))
            for row, (_, _, m, _) in enumerate(batch):
                for k, on in enumerate(m.active):
                    if on:
                        joint_weights[row, control_idx[k]] = 1.0

            pose_t = None  # differentiable pose when detaching is off
            recon_acc = kl_acc = joint_acc = 0.0
            for s in range(n_ar):
                intents = np.empty((b, intent_mean.shape[0]))
                for row, (_, start, mask, goals) in enumerate(batch):
                    pose_row = PoseState.from_flat(pose_raw[row])
                    vec = yaw_localize(
                        assemble_intention(pose_row, skeleton, goals, mask, start + s),
                        pose_row,
                    )
                    intents[row] = stats.intention.standardize(vec.flatten())
                intent_t = t32(intents)
                delta_gt = t32(np.stack([c.deltas_std[i + s] for c, i, _, _ in batch]))
                target_pos = t32(np.stack([c.positions[i + s + 1] for c, i, _, _ in batch]))

                if pose_t is None:
                    pose_t = t32(pose_raw)
                pose_std_t = (pose_t - pose_mean) / pose_std

                mean, logvar = model.encode_tensors(pose_std_t, delta_gt, intent_t, key_mask)
                eps = torch.randn_like(mean)
                z = mean + torch.exp(0.5 * logvar) * eps
                delta_hat = model.decode_tensors(pose_std_t, z, intent_t, key_mask)

                recon_acc = recon_acc + torch.mean((delta_hat - delta_gt) ** 2)
                kl_acc = kl_acc + kl_divergence(mean, logvar)

                next_pose = apply_delta_t(pose_t, delta_hat * delta_std + delta_mean)
                pred_pos = fk_positions_t(next_pose, parents, offsets)
                sq = ((pred_pos - target_pos) ** 2).mean(dim=-1)
                denom = joint_weights.sum(dim=-1).clamp_min(1.0)
                joint_acc = joint_acc + ((sq * joint_weights).sum(dim=-1) / denom).mean()

                if cfg.detach_between_steps:
                    pose_raw = next_pose.detach().double().numpy()
                    pose_t = None
                else:
                    pose_t = next_pose
                    pose_raw = next_pose.detach().double().numpy()

            loss, breakdown = total_loss(
                recon_acc / n_ar, kl_acc / n_ar, joint_acc / n_ar, cfg
            )
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"loss diverged at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            for k in sums:
                sums[k] += breakdown[k]

        entry = {k: v / steps for k, v in sums.items()}
        entry["epoch"] = epoch
        entry["ar_steps"] = n_ar
        curve.append(entry)
        if progress is not None:
            progress(entry)

    model.eval()
    return model, curve


def make_runtime(model: MotionModel, dataset: Dataset, skeleton: KinematicSkeleton) -> ModelRuntime:
    return ModelRuntime(model, dataset.stats, skeleton)
