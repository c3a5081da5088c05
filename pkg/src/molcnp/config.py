"""Run configuration: YAML files, ``--set key=value`` overrides and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Sequence

import yaml

from molcnp.errors import ConfigError

DEFAULTS: dict[str, Any] = {
    "seed": None,
    "output_dir": "out",
    "data": {
        "path": None,
        "fingerprint_cache": None,
        "radius": 3,
        "nbits": 1024,
    },
    "split": {
        "dir": None,
        "dtrain": None,
        "dtest": None,
        "ftrain": None,
        "ftest": None,
        "n_dtrain": 2500,
        "n_dtest": 2500,
        "dtrain_pool": None,
        "dtest_pool": None,
    },
    "model": {
        "repr_dim": 128,
        "encoder_hidden": [256, 256],
        "decoder_hidden": [256, 256],
        "variance_floor": 1.0e-6,
    },
    "train": {
        "epochs": 1000,
        "checkpoints": [1000],
        "context_range": [5, 256],
        "target_range": [256, 256],
        "lr": 1.0e-3,
        "log_every": 100,
    },
    "calibrate": {
        "checkpoints": [0, 100, 200, 500, 1000, 2000, 5000, 10000, 20000],
        "eval_context": 100,
        "svg": True,
    },
    "fewshot": {
        "checkpoint": None,
        "checkpoint_epoch": 1000,
        "context_sizes": [5, 10, 25, 50, 100, 250, 500, 1000, 2500],
        "models": ["cnp", "knn", "fss", "rf", "nn", "finetuned_nn"],
        "functions": None,
        "n_repeats": 10,
        "svg": True,
    },
    "generalize": {
        "functions": ["PARP1", "KIT", "F2"],
        "epochs": 1000,
        "eval_context": 100,
        "n_resamples": 5,
    },
    "bo": {
        "checkpoint": None,
        "checkpoint_epoch": 1000,
        "function": "F2",
        "pool": None,
        "strategies": ["random", "greedy", "lcb"],
        "beta": 1.0,
        "n_init": 5,
        "n_iterations": 4995,
        "seeds": [0, 1, 2, 3, 4],
        "svg": True,
    },
    "baselines": {
        "knn_k": 5,
        "knn_metric": "hamming",
        "rf": {"n_estimators": 200, "max_features": 1.0 / 3.0, "min_samples_leaf": 2},
        "nn": {
            "hidden": [256, 256, 256, 256, 256],
            "epochs": 300,
            "lr": 1.0e-3,
            "pretrain_epochs": 300,
            "finetune_epochs": 200,
            "finetune_lr_factor": 0.1,
        },
    },
    "synth": {
        "output": None,
        "n_functions": 58,
        "n_molecules": 5000,
        "nbits": 1024,
        "noise_sd": 0.3,
        "latent_dim": 8,
        "weight_correlation": 0.8,
        "qed_score_correlation": 0.5,
    },
}

# Sections that determine a command's results, used for the output hash.
HASH_SECTIONS = {
    "fingerprint": ("data",),
    "synth": ("seed", "synth"),
    "train": ("seed", "data", "split", "model", "train"),
    "calibrate": ("seed", "data", "split", "model", "train", "calibrate"),
    "fewshot": ("seed", "data", "split", "model", "train", "fewshot", "baselines"),
    "generalize": ("seed", "data", "split", "model", "train", "generalize"),
    "bo": ("seed", "data", "split", "model", "train", "bo"),
}


def _merge(base: dict, update: dict, where: str = "") -> dict:
    for key, value in update.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown configuration key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path!r} must be a mapping")
            _merge(base[key], value, path + ".")
        else:
            base[key] = value
    return base


def parse_override(text: str) -> tuple[list[str], Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    if not key.strip():
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value in override {text!r}: {exc}") from None
    return key.strip().split("."), value


def apply_override(config: dict, keys: Sequence[str], value: Any) -> None:
    node = config
    for i, key in enumerate(keys):
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(f"unknown configuration key {'.'.join(keys[: i + 1])!r}")
        if i == len(keys) - 1:
            if isinstance(node[key], dict):
                raise ConfigError(f"cannot override section {'.'.join(keys)!r} with a scalar")
            node[key] = value
        else:
            node = node[key]


def load_config(path=None, overrides: Sequence[str] = ()) -> dict:
    """Defaults, then the YAML file, then ``key.sub=value`` overrides in order."""
    config = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(config, loaded)
    for text in overrides:
        keys, value = parse_override(text)
        apply_override(config, keys, value)
    return config


def require_seed(config: dict) -> int:
    seed = config.get("seed")
    if seed is None:
        raise ConfigError("a seed is required (set 'seed' in the config or pass --set seed=N)")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    return seed


def config_hash(config: dict, command: str) -> str:
    """Short content hash of the sections that affect ``command``'s output."""
    subset = {k: config[k] for k in HASH_SECTIONS[command]}
    blob = json.dumps(subset, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]
