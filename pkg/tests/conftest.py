"""Shared fixtures.

Heavy artifacts (synthetic corpus, dataset, a quickly trained model) are
built once per session.  Setting MOTIONFORGE_TEST_CACHE to a directory
reuses them across pytest runs during development; without it every run
starts fresh.
"""

import os

import numpy as np
import pytest

from motionforge.config import DEFAULTS
from motionforge.data import Dataset, preprocess
from motionforge.model import ModelConfig, load_checkpoint, save_checkpoint
from motionforge.skeleton import default_skeleton
from motionforge.synth import synth_dataset
from motionforge.training import TrainConfig, train


def _cache_dir(name: str):
    root = os.environ.get("MOTIONFORGE_TEST_CACHE")
    if not root:
        return None
    path = os.path.join(root, name)
    os.makedirs(path, exist_ok=True)
    return path


@pytest.fixture(scope="session")
def skeleton():
    return default_skeleton()


@pytest.fixture(scope="session")
def tiny_clips(skeleton):
    rng = np.random.default_rng(11)
    return synth_dataset(10, rng, skeleton)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_clips, skeleton):
    return preprocess(tiny_clips, skeleton, seed=3)


@pytest.fixture(scope="session")
def tiny_model_cfg():
    cfg = dict(DEFAULTS["model"])
    cfg.update(model_dim=32, layers=2, heads=4, ffn_dim=32, input_mlp_layers=4,
               latent_dim=16)
    return ModelConfig(**cfg)


@pytest.fixture(scope="session")
def tiny_runtime(tiny_dataset, skeleton, tiny_model_cfg, tmp_path_factory):
    """A small model trained just enough to produce sane, finite motion."""
    cache = _cache_dir("tiny_runtime")
    path = os.path.join(cache, "checkpoint.mfc") if cache else None
    if path and os.path.exists(path):
        return load_checkpoint(path)
    cfg = TrainConfig(epochs=4, batch_size=16, steps_per_epoch=8, seed=5,
                      ss_start_epoch=3, ss_full_epoch=6, ss_max_steps=3)
    model, _ = train(tiny_dataset, skeleton, tiny_model_cfg, cfg)
    if path:
        save_checkpoint(path, model, tiny_dataset.stats, skeleton)
        return load_checkpoint(path)
    out = tmp_path_factory.mktemp("ckpt") / "checkpoint.mfc"
    save_checkpoint(out, model, tiny_dataset.stats, skeleton)
    return load_checkpoint(out)


@pytest.fixture(scope="session")
def tiny_checkpoint_path(tiny_runtime, tiny_dataset, skeleton, tmp_path_factory):
    """The tiny model saved to disk, for CLI and service tests."""
    cache = _cache_dir("tiny_runtime")
    if cache and os.path.exists(os.path.join(cache, "checkpoint.mfc")):
        return os.path.join(cache, "checkpoint.mfc")
    path = tmp_path_factory.mktemp("ckpt2") / "checkpoint.mfc"
    save_checkpoint(path, tiny_runtime.model, tiny_dataset.stats, skeleton)
    return str(path)


def random_rotation_matrices(n: int, seed: int) -> np.ndarray:
    """Independent Haar-ish sampler: QR of Gaussian matrices, det fixed."""
    rng = np.random.default_rng(seed)
    out = np.empty((n, 3, 3))
    for i in range(n):
        q, r = np.linalg.qr(rng.standard_normal((3, 3)))
        q = q * np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 2] = -q[:, 2]
        out[i] = q
    return out
