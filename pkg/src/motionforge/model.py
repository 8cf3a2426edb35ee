"""Conditional VAE over per-frame motion deltas.

Encoder and decoder are small transformer-encoder stacks over a 9-token
sequence: one state token (pose + delta for the encoder, pose + latent for
the decoder), a pelvis-intention token, an orientation-intention token and
six control-joint intention tokens.  Inactive joint tokens are hidden with
a key-padding mask at every attention layer, so their values can never
reach the first output token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import container
from .errors import NoRecordedGraph, ShapeMismatch
from .intention import INTENTION_DIM, ControlMask, IntentionVector, yaw_localize
from .pose import DELTA_DIM, POSE_DIM, DeltaFeature, PoseState
from .skeleton import CONTROL_SET_SIZE, KinematicSkeleton, parse_skeleton
from .stats import NormStats

TOKEN_COUNT = 3 + CONTROL_SET_SIZE  # state, pelvis, orientation, joints
CHECKPOINT_FORMAT = "model-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 64
    model_dim: int = 64
    layers: int = 4
    heads: int = 8
    ffn_dim: int = 64
    input_mlp_layers: int = 16
    dropout: float = 0.1
    control_set_size: int = CONTROL_SET_SIZE

    def __post_init__(self):
        counts = (self.latent_dim, self.model_dim, self.layers, self.heads,
                  self.ffn_dim, self.input_mlp_layers)
        if any(c < 1 for c in counts):
            raise ValueError("all counts must be >= 1")
        if self.model_dim % self.heads != 0:
            raise ValueError("model_dim must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.control_set_size != CONTROL_SET_SIZE:
            raise ValueError(f"control set size is fixed at {CONTROL_SET_SIZE}")

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim, "model_dim": self.model_dim,
            "layers": self.layers, "heads": self.heads, "ffn_dim": self.ffn_dim,
            "input_mlp_layers": self.input_mlp_layers, "dropout": self.dropout,
            "control_set_size": self.control_set_size,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


@dataclass(frozen=True)
class LatentSample:
    mean: np.ndarray
    log_variance: np.ndarray
    epsilon: np.ndarray
    sample: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.sample is None:
            s = self.mean + np.exp(0.5 * self.log_variance) * self.epsilon
            object.__setattr__(self, "sample", s)


def attention_mask_from(mask: ControlMask) -> np.ndarray:
    """(9,) bool key-padding mask, True = hidden.

    The state, pelvis and orientation tokens are always attendable.
    """
    return np.array([False, False, False, *(not on for on in mask.active)], dtype=bool)


def sinusoidal_encoding(length: int, dim: int) -> torch.Tensor:
    position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(position * div)
    pe[:, 1::2] = torch.cos(position * div[: dim // 2])
    return pe


class InputMLP(nn.Module):
    """Deep feature stack: depth linear layers, LayerNorm + Dropout, residual
    connections every second hidden layer."""

    def __init__(self, in_dim: int, width: int, depth: int, dropout: float):
        super().__init__()
        self.entry = nn.Linear(in_dim, width)
        self.hidden = nn.ModuleList(nn.Linear(width, width) for _ in range(depth - 1))
        self.norms = nn.ModuleList(nn.LayerNorm(width) for _ in range(depth - 1))
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        h = self.entry(x)
        res = h
        for i, (lin, norm) in enumerate(zip(self.hidden, self.norms)):
            h = self.drop(torch.relu(lin(norm(h))))
            if i % 2 == 1:
                h = h + res
                res = h
        return h


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, key_mask=None):
        b, t, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        shape = (b, t, self.heads, self.head_dim)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if key_mask is not None:
            scores = scores.masked_fill(key_mask[:, None, None, :], float("-inf"))
        attn = self.drop(torch.softmax(scores, dim=-1))
        y = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return self.out(y)


class TransformerBlock(nn.Module):
    """Pre-norm encoder block with key-padding masked attention."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.attn_norm = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads, dropout)
        self.ffn_norm = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.ReLU(), nn.Dropout(dropout), nn.Linear(ffn_dim, dim))
        self.drop = nn.Dropout(dropout)

    def forward(self, x, key_mask=None):
        x = x + self.drop(self.attn(self.attn_norm(x), key_mask))
        x = x + self.drop(self.ffn(self.ffn_norm(x)))
        return x


class TokenStack(nn.Module):
    """Shared token assembly + transformer trunk for encoder and decoder.

    state_dim is the second input fused with the pose into the state token
    (delta channels for the encoder, latent channels for the decoder).
    """

    def __init__(self, cfg: ModelConfig, state_dim: int):
        super().__init__()
        self.pose_mlp = InputMLP(POSE_DIM, cfg.model_dim, cfg.input_mlp_layers, cfg.dropout)
        self.state_mlp = InputMLP(state_dim, cfg.model_dim, cfg.input_mlp_layers, cfg.dropout)
        self.state_token = nn.Linear(2 * cfg.model_dim, cfg.model_dim)
        self.pelvis_proj = nn.Linear(2, cfg.model_dim)
        self.orient_proj = nn.Linear(2, cfg.model_dim)
        self.joint_proj = nn.Linear(3, cfg.model_dim)
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.model_dim, cfg.heads, cfg.ffn_dim, cfg.dropout) for _ in range(cfg.layers)
        )
        self.final_norm = nn.LayerNorm(cfg.model_dim)
        self.register_buffer("positional", sinusoidal_encoding(TOKEN_COUNT, cfg.model_dim), persistent=False)

    def forward(self, pose, state, intention, key_mask=None):
        if intention.shape[-1] != INTENTION_DIM:
            raise ShapeMismatch(f"intention must have {INTENTION_DIM} channels")
        b = pose.shape[0]
        tok0 = self.state_token(torch.cat([self.pose_mlp(pose), self.state_mlp(state)], dim=-1))
        pelvis = self.pelvis_proj(intention[:, 0:2])
        orient = self.orient_proj(intention[:, 2:4])
        joints = self.joint_proj(intention[:, 4:].reshape(b, CONTROL_SET_SIZE, 3))
        tokens = torch.cat([tok0.unsqueeze(1), pelvis.unsqueeze(1), orient.unsqueeze(1), joints], dim=1)
        x = tokens + self.positional.to(tokens.dtype)
        for block in self.blocks:
            x = block(x, key_mask)
        return self.final_norm(x[:, 0])


class MotionModel(nn.Module):
    """Encoder to a diagonal-Gaussian latent; decoder back to delta channels.

    All tensor interfaces work in standardized feature space.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = TokenStack(cfg, DELTA_DIM)
        self.enc_mean = nn.Linear(cfg.model_dim, cfg.latent_dim)
        self.enc_logvar = nn.Linear(cfg.model_dim, cfg.latent_dim)
        self.decoder = TokenStack(cfg, cfg.latent_dim)
        self.dec_out = nn.Linear(cfg.model_dim, DELTA_DIM)

    def encode_tensors(self, pose, delta, intention, key_mask=None):
        h = self.encoder(pose, delta, intention, key_mask)
        return self.enc_mean(h), self.enc_logvar(h)

    def decode_tensors(self, pose, z, intention, key_mask=None):
        h = self.decoder(pose, z, intention, key_mask)
        return self.dec_out(h)


def build_model(cfg: ModelConfig, seed: int = 0) -> MotionModel:
    """Construct with deterministic initialization under the seed."""
    torch.manual_seed(seed)
    return MotionModel(cfg)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def backward_gradients(loss: torch.Tensor, model: nn.Module) -> dict:
    """Reverse-mode gradients for every named parameter, as numpy arrays."""
    if loss.grad_fn is None:
        raise NoRecordedGraph("loss tensor carries no recorded computation")
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return {n: (None if g is None else g.detach().cpu().numpy()) for n, g in zip(names, grads)}


def mask_tensor(mask: ControlMask, batch: int, device=None) -> torch.Tensor:
    flags = torch.from_numpy(attention_mask_from(mask))
    return flags.unsqueeze(0).expand(batch, TOKEN_COUNT).to(device)


class ModelRuntime:
    """Numpy-facing wrapper: standardization, masking and reparameterization
    around a frozen MotionModel."""

    def __init__(self, model: MotionModel, stats: NormStats, skeleton: KinematicSkeleton):
        self.model = model.eval()
        self.stats = stats
        self.skeleton = skeleton
        self.dtype = next(model.parameters()).dtype

    def _tensor(self, x) -> torch.Tensor:
        return torch.from_numpy(np.asarray(x, dtype=np.float64)).to(self.dtype).unsqueeze(0)

    def encode(self, pose: PoseState, delta: DeltaFeature, intention: IntentionVector,
               epsilon: np.ndarray = None, rng: np.random.Generator = None) -> LatentSample:
        intention = yaw_localize(intention, pose)
        pose_t = self._tensor(self.stats.pose.standardize(pose.flatten()))
        delta_t = self._tensor(self.stats.delta.standardize(delta.flatten()))
        intent_t = self._tensor(self.stats.intention.standardize(intention.flatten()))
        key_mask = mask_tensor(intention.mask, 1)
        with torch.no_grad():
            mean, logvar = self.model.encode_tensors(pose_t, delta_t, intent_t, key_mask)
        mean = mean[0].double().numpy()
        logvar = logvar[0].double().numpy()
        if epsilon is None:
            epsilon = rng.standard_normal(self.model.cfg.latent_dim) if rng is not None else np.zeros(self.model.cfg.latent_dim)
        return LatentSample(mean, logvar, np.asarray(epsilon, dtype=np.float64))

    def decode(self, pose: PoseState, z: np.ndarray, intention: IntentionVector) -> DeltaFeature:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.model.cfg.latent_dim,):
            raise ShapeMismatch(f"z must have shape ({self.model.cfg.latent_dim},)")
        intention = yaw_localize(intention, pose)
        pose_t = self._tensor(self.stats.pose.standardize(pose.flatten()))
        intent_t = self._tensor(self.stats.intention.standardize(intention.flatten()))
        key_mask = mask_tensor(intention.mask, 1)
        with torch.no_grad():
            out = self.model.decode_tensors(pose_t, self._tensor(z), intent_t, key_mask)
        raw = out[0].double().numpy()
        return DeltaFeature.from_flat(self.stats.delta.destandardize(raw))


def save_checkpoint(path, model: MotionModel, stats: NormStats, skeleton: KinematicSkeleton, extra_meta: dict = None):
    meta = {
        "model_config": model.cfg.to_dict(),
        "skeleton_text": skeleton.serialize(),
        "skeleton_hash": skeleton.content_hash(),
        "dtype": str(next(model.parameters()).dtype).replace("torch.", ""),
    }
    if extra_meta:
        meta["extra"] = extra_meta
    arrays = {f"param/{name}": tensor.detach().cpu().numpy() for name, tensor in model.state_dict().items()}
    for name, arr in stats.to_arrays().items():
        arrays[f"stats/{name}"] = arr
    container.save(path, CHECKPOINT_FORMAT, CHECKPOINT_VERSION, meta, arrays)


def load_checkpoint(path) -> ModelRuntime:
    _, _, meta, arrays = container.load(path, expect_format=CHECKPOINT_FORMAT)
    cfg = ModelConfig.from_dict(meta["model_config"])
    skeleton = parse_skeleton(meta["skeleton_text"])
    stats = NormStats.from_arrays({k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("stats/")})
    model = MotionModel(cfg)
    dtype = getattr(torch, meta.get("dtype", "float32"))
    state = {k.split("/", 1)[1]: torch.from_numpy(v.copy()).to(dtype) for k, v in arrays.items() if k.startswith("param/")}
    model = model.to(dtype)
    model.load_state_dict(state)
    return ModelRuntime(model, stats, skeleton)
