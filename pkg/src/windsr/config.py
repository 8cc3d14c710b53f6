"""Experiment configuration: JSON schema with strict key checking and snapshots.

Unknown keys are errors, not warnings; every run writes the fully resolved
configuration next to its outputs so reruns from the snapshot are
bit-reproducible.
"""

from __future__ import annotations

import json
import os
from typing import Any

from .errors import ConfigError

# Schema: section -> key -> default. None means "no default, optional".
SCHEMA: dict[str, dict[str, Any]] = {
    "seed": 0,
    "out": "runs/out",
    "dataset": {
        "path": None,
        "timestamps": 16,
        "hr_size": 32,
        "scale_factor": 8,
        "bias_amplitude": 1.2,
        "noise_scale": 0.05,
        "terrain_relief": 200.0,
        "terrain_coupling": 0.45,
        "start_seed": 0,
    },
    "eval_dataset": {
        "path": None,
    },
    "model": {
        "checkpoint": None,
        "widths": [20, 32, 48],
    },
    "train": {
        "train_steps": 3000,
        "batch_size": 8,
        "learning_rate": 2e-3,
        "warmup_steps": 500,
        "p_drop": 0.1,
        "lam_dwt": 1e-3,
        "lam_div": 1e-3,
        "lam_sobel": 1e-3,
        "crop_size": None,
        "variables": [],
    },
    "sampler": {
        "method": "dpmpp-multistep",
        "steps": 10,
        "order": 3,
        "ensemble_count": 1,
        "eta": 1.0,
    },
    "selection": {
        "p": 1,
        "m": 2,
        "iterations": 30,
        "total_weight": 1.5,
        "alpha": 1e-3,
        "beta": 1e-3,
        "eta": 0.5,
        "batch": 2,
        "inner_steps": 5,
        "gradient_mode": "finite-difference",
        "fd_step": 1e-3,
        "variables": [],
        "weights_out": "weights.txt",
    },
    "guidance": {
        "scheme": "cfg",
        "w": 1.5,
        "weights_path": None,
    },
    "schedule": {
        "T": 1000,
        "beta_start": 1e-4,
        "beta_end": 0.02,
    },
}


def _merge(section_name: str, defaults: Any, value: Any) -> Any:
    if isinstance(defaults, dict):
        if value is None:
            value = {}
        if not isinstance(value, dict):
            raise ConfigError(f"section {section_name!r} must be an object")
        unknown = set(value) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys in {section_name!r}: {sorted(unknown)}")
        return {k: _merge(f"{section_name}.{k}", dv, value.get(k, dv))
                for k, dv in defaults.items()}
    return value


def resolve_config(raw: dict) -> dict:
    """Validate against the schema and fill defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    return {k: _merge(k, dv, raw.get(k, dv)) for k, dv in SCHEMA.items()}


def load_config(path: str, overrides: dict | None = None) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
    resolved = resolve_config(raw)
    for key, value in (overrides or {}).items():
        parts = key.split(".")
        node = resolved
        for p in parts[:-1]:
            node = node[p]
        node[parts[-1]] = value
    return resolved


def write_snapshot(config: dict, out_dir: str, name: str = "config.resolved.json") -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
