"""Global configuration: defaults, YAML overrides, and config hashing.

Every CLI output embeds the hash of the effective config together with the
run seed so that artifacts are traceable to the exact settings that
produced them.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any

import yaml

# The 16-set default budget: singletons, within-direction pairs, the two
# within-direction triples, and the full frame.
_DEFAULT_BUDGET_7 = [
    ["Left-Hard"],
    ["Left-Medium"],
    ["Left-Easy"],
    ["Straight"],
    ["Right-Easy"],
    ["Right-Medium"],
    ["Right-Hard"],
    ["Left-Easy", "Left-Medium"],
    ["Left-Medium", "Left-Hard"],
    ["Left-Easy", "Left-Hard"],
    ["Right-Easy", "Right-Medium"],
    ["Right-Medium", "Right-Hard"],
    ["Right-Easy", "Right-Hard"],
    ["Left-Easy", "Left-Medium", "Left-Hard"],
    ["Right-Easy", "Right-Medium", "Right-Hard"],
    ["Left-Hard", "Left-Medium", "Left-Easy", "Straight",
     "Right-Easy", "Right-Medium", "Right-Hard"],
]

# 3-class mode: the full non-empty powerset is small enough to score whole.
_DEFAULT_BUDGET_3 = [
    ["Left"],
    ["Straight"],
    ["Right"],
    ["Left", "Straight"],
    ["Straight", "Right"],
    ["Left", "Right"],
    ["Left", "Straight", "Right"],
]

DEFAULTS: dict[str, Any] = {
    "frame": {
        "classes": 7,  # 7 or 3
    },
    "budget": {
        "sets_7": _DEFAULT_BUDGET_7,
        "sets_3": _DEFAULT_BUDGET_3,
    },
    "raster": {
        "grid": 32,            # cells per side
        "window_m": 20.0,      # square window, x in [0, w], y in [-w/2, w/2]
    },
    "trackgen": {
        "lane_width_m": 3.5,
        "lookahead_m": 15.0,
        "jitter_sigma_m": 0.25,
        "cone_spacing_m": 1.6,
        "min_pairs": 5,
        "max_pairs": 15,
        "hard_max_angle_deg": 100.0,
        # Occlusion and near-boundary sampling keep the task from being
        # trivially separable at this raster resolution.
        "cone_dropout_p": 0.25,
        "boundary_bias": 0.4,
        "boundary_width_deg": 4.0,
        # Straight-heavy imbalance: weights per class in frame order.
        "class_weights": {
            "Straight": 2.0,
            "Left-Easy": 1.0, "Left-Medium": 1.0, "Left-Hard": 1.0,
            "Right-Easy": 1.0, "Right-Medium": 1.0, "Right-Hard": 1.0,
        },
        "counts": {"train": 588, "val": 147, "test": 184, "uncertain": 268},
        "uncertain_mix": {"random": 90, "fallen": 89, "confusing": 89},
    },
    "net": {
        "hidden": [64, 32],
    },
    "train": {
        "learning_rate": 0.2,
        "batch_size": 32,
        "epochs": 60,
        "val_fraction": 0.2,
    },
    # Five-tier speed scaling: (upper bound in bits, scale); the last tier
    # is open-ended. Bounds are lower-inclusive on entry to the next tier.
    "policy": {
        "bounds": [2.2, 2.3, 2.4, 2.6],
        "scales": [1.0, 0.9, 0.8, 0.6, 0.0],
        "entropy_smoothing_alpha": 0.0,  # 0 disables smoothing
    },
    "planner": {
        "speeds_rpm": {"Straight": 1000.0, "Easy": 800.0,
                       "Medium": 600.0, "Hard": 400.0},
    },
    "sim": {
        "tick_s": 0.2,                 # 5 Hz capture rate
        "wheel_circumference_m": 1.6,
        "max_ticks": 3000,
    },
    "al": {
        "exp1_batch_fraction": 0.05,
        "exp1_rounds": 6,
        "exp2_per_class": 5,
        "exp2_rounds": 6,
        "exp3_per_class_step": 5,
        "exp3_rounds": 3,
        "seed_per_class": 5,
        "seed_fraction": 0.10,
        # From-scratch retraining on small pools converges best with more
        # epochs and a hotter step than the full-data defaults.
        "train": {"epochs": 150, "learning_rate": 0.7, "batch_size": 16},
    },
}


def default_config() -> dict[str, Any]:
    """A deep copy of the built-in defaults."""
    return copy.deepcopy(DEFAULTS)


def _merge(base: dict, override: dict) -> dict:
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def load_config(path: str | Path | None = None) -> dict[str, Any]:
    """Defaults merged with the YAML file at `path` (if given).

    Unknown keys are kept: the config is an open key-value store and extra
    keys simply ride along into the hash.
    """
    cfg = default_config()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"config file {path} must contain a mapping")
        _merge(cfg, loaded)
    return cfg


def config_hash(cfg: dict[str, Any]) -> str:
    """Short stable hash of the effective config (first 12 hex chars)."""
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def dump_config(cfg: dict[str, Any], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)
