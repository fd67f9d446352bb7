"""Structured JSON pipeline configuration.

One JSON file drives every subcommand. Defaults carry the pipeline's
documented constants; a user file overrides only the keys it names.
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, ValidationError

DEFAULTS: dict = {
    "paths": {
        "annotations": "annotations.json",
        "images": "images",
        "output": "out",
    },
    "annotations": {
        "iou_threshold": 0.5,
        # tile concordant regions only when true; single-annotator
        # regions pass through when false
        "require_concordant": False,
    },
    "tiler": {
        "big_region_threshold": 10_000,
        "big_chunk_side": 4_096,
        "patch_side_20x": 256,
        "patch_side_40x": 512,
        "min_area_fraction": 0.8,
        "white_threshold": 0.10,
    },
    "dataset": {
        "train_per_class": 5_000,
        "val_fraction": 0.10,
        "test_per_class": 500,
        "seed": 0,
        "set2_wsi_ids": [],
    },
    "arch": {
        "preset": "densenet21",
        "growth_rate": 32,
        "compression": 0.5,
        "input_size": 224,
        "stem": "full",
    },
    "train": {
        "epochs": 100,
        "batch_size": 64,
        "lr": 0.001,
        "hflip": True,
        "vflip": True,
        "rot90": True,
        "brightness": True,
    },
}


@dataclass
class PipelineConfig:
    paths: dict = field(default_factory=dict)
    annotations: dict = field(default_factory=dict)
    tiler: dict = field(default_factory=dict)
    dataset: dict = field(default_factory=dict)
    arch: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "paths": self.paths,
            "annotations": self.annotations,
            "tiler": self.tiler,
            "dataset": self.dataset,
            "arch": self.arch,
            "train": self.train,
        }

    def path(self, key: str) -> Path:
        return Path(self.paths[key])


def _merge(base: dict, override: dict, trail: str) -> dict:
    out = dict(base)
    for key, value in override.items():
        if key not in base:
            raise ValidationError(f"unknown config key {trail}{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ValidationError(f"config key {trail}{key} must be an object")
            out[key] = _merge(base[key], value, f"{trail}{key}.")
        else:
            out[key] = value
    return out


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValidationError(f"config: {message}")


def validate_config(cfg: PipelineConfig) -> None:
    t = cfg.tiler
    _require(t["big_region_threshold"] > 0, "big_region_threshold must be positive")
    _require(t["big_chunk_side"] > 0, "big_chunk_side must be positive")
    # the magnification-to-patch-side mapping is structural (the 40x side
    # must box-average 2:1 onto the stored 256px patch), so these two are
    # fixed; they live in the config as documented constants
    _require(t["patch_side_20x"] == 256, "patch_side_20x is fixed at 256")
    _require(t["patch_side_40x"] == 512, "patch_side_40x is fixed at 512")
    _require(0 < t["min_area_fraction"] <= 1,
             f"min_area_fraction {t['min_area_fraction']} outside (0, 1]")
    _require(0 <= t["white_threshold"] <= 1,
             f"white_threshold {t['white_threshold']} outside [0, 1]")
    a = cfg.annotations
    _require(0 < a["iou_threshold"] <= 1,
             f"iou_threshold {a['iou_threshold']} outside (0, 1]")
    d = cfg.dataset
    _require(d["train_per_class"] >= 1, "train_per_class must be >= 1")
    _require(0 < d["val_fraction"] < 1,
             f"val_fraction {d['val_fraction']} outside (0, 1)")
    _require(d["test_per_class"] >= 1, "test_per_class must be >= 1")
    ar = cfg.arch
    _require(ar["preset"] == "densenet21", f"unknown arch preset {ar['preset']!r}")
    _require(ar["growth_rate"] >= 1, "growth_rate must be >= 1")
    _require(0 < ar["compression"] <= 1,
             f"compression {ar['compression']} outside (0, 1]")
    _require(ar["stem"] in ("full", "small"), f"unknown stem {ar['stem']!r}")
    tr = cfg.train
    _require(tr["epochs"] >= 1, "epochs must be >= 1")
    _require(tr["batch_size"] >= 1, "batch_size must be >= 1")
    _require(tr["lr"] > 0, "lr must be positive")


def load_config(path: str | Path | None = None,
                overrides: dict | None = None) -> PipelineConfig:
    """Defaults, overlaid by the JSON file (if any), then overrides."""
    merged = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        try:
            user = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ParseError(f"{path}: top level must be a JSON object")
        merged = _merge(merged, user, "")
    if overrides:
        merged = _merge(merged, overrides, "")
    cfg = PipelineConfig(**merged)
    validate_config(cfg)
    return cfg
