"""Run configuration: defaults, YAML layering, dotted overrides.

A run config is a plain nested dict.  load_config() starts from the
defaults, deep-merges an optional YAML file over them, then applies
key=value overrides (dotted paths, YAML-typed values).  Unknown section
or key names raise ConfigError so typos fail loudly.  The resolved
config is written next to produced artifacts for provenance.
"""

from __future__ import annotations

import copy
import json
import os
import platform
import sys
import time

import yaml

from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

DEFAULTS = {
    "seed": 0,
    "skeleton": None,  # path to a skeleton file; None uses the built-in
    "model": {
        "latent_dim": 64,
        "model_dim": 64,
        "layers": 4,
        "heads": 8,
        "ffn_dim": 64,
        "input_mlp_layers": 16,
        "dropout": 0.1,
    },
    # The quick desk recipe: 30 epochs with the sampling ramp compressed so
    # full 10-step rollouts are reached by epoch 25.  Long rollouts are what
    # teach sustained goal pursuit; with the ramp at its paper-scale pace
    # (start 10, full 50) a 30-epoch run never trains past 5 steps.
    "train": {
        "epochs": 30,
        "batch_size": 32,
        "steps_per_epoch": 50,
        "learning_rate": 1e-4,
        "lambda_kl": 1e-3,
        "lambda_joint": 1.0,
        "ss_start_epoch": 5,
        "ss_full_epoch": 25,
        "ss_max_steps": 10,
        "detach_between_steps": True,
    },
    "synth": {"clips": 60, "fps": 30.0},
    "preprocess": {"target_fps": 30.0, "max_window": 240, "ratios": [0.8, 0.1, 0.1]},
    "gmm": {
        "components": 50,
        "max_iterations": 1000,
        "covariance": "full",
        "subsample": 20000,
        "source_filter": None,
    },
    "episode": {"duration": 240, "success_radius": 0.10, "fixed_z": False},
    "rgf": {"alpha": 0.01, "stop_distance": 1.0},
    "protocol": {
        "duration": 240,
        "trials": 5,
        "angles": 5,
        "heights": 5,
        "distances": 5,
        "height_range": [0.5, 1.8],
        "distance_range": [0.5, 5.0],
        "poses_used": 6,
        "control_joint": "right_wrist",
        "segments": 3,
        "directions": 5,
        "segment_distance": 5.0,
        "wrist_height": 1.0,
        "targets_used": 6,
    },
    "service": {"host": "127.0.0.1", "tcp_port": 8970, "ws_port": 8971},
}


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in extra.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def apply_override(config: dict, spec: str) -> dict:
    """Apply one dotted key=value override, YAML-parsing the value."""
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} must look like section.key=value")
    dotted, raw = spec.split("=", 1)
    keys = dotted.strip().split(".")
    value = yaml.safe_load(raw)
    if isinstance(value, str):
        # YAML 1.1 reads bare scientific notation like 5e-4 as a string
        try:
            value = float(value)
        except ValueError:
            pass
    node = config
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            raise ConfigError(f"unknown config section {dotted!r}")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[keys[-1]] = value
    return config


def load_config(path=None, overrides=()) -> dict:
    config = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(path) as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping")
        config = _merge(config, loaded)
    for spec in overrides:
        config = apply_override(config, spec)
    return config


def model_config_from(config: dict) -> ModelConfig:
    return ModelConfig(**config["model"])


def train_config_from(config: dict) -> TrainConfig:
    return TrainConfig(seed=config["seed"], **config["train"])


def write_provenance(config: dict, out_dir, command: str = None) -> list:
    """Drop the resolved config and a run sidecar next to the artifacts."""
    os.makedirs(out_dir, exist_ok=True)
    resolved = os.path.join(out_dir, "config.resolved.yaml")
    with open(resolved, "w") as f:
        yaml.safe_dump(config, f, sort_keys=True)
    run_info = {
        "command": command or " ".join(sys.argv),
        "time_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "python": platform.python_version(),
    }
    run_path = os.path.join(out_dir, "run.json")
    with open(run_path, "w") as f:
        json.dump(run_info, f, indent=2, sort_keys=True)
        f.write("\n")
    return [resolved, run_path]
