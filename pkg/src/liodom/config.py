"""Run configuration: YAML file plus flag overrides, unknown keys rejected.

Defaults follow the published hyperparameters: lr 1e-4 with step-20
gamma-0.5 schedule, Adam betas (0.9, 0.99), weight decay 1e-5, batch 20,
IMU window 15, loss weights alpha=1.0 lambda=0.1, voxel side 0.3 m with
0.01 m steps toward K=10240 +/- 100, projection f_w=180 eta=0.5 H=52 W=720.
"""

from __future__ import annotations

from pathlib import Path

import yaml

from .matching import LossWeights
from .pipeline import PipelineConfig, TrainParams
from .preprocess import VoxelParams
from .range_image import ProjectionConfig


class ConfigError(ValueError):
    pass


_SECTIONS = {
    "pipeline": {"imu_mode", "head_mode", "head_type", "matching", "feature_dim",
                 "encoder_widths", "lstm_hidden", "imu_window", "q_scale",
                 "max_match_dist", "alpha", "lam"},
    "projection": {"f_w", "f_h", "eta_w", "eta_h", "H", "W"},
    "voxel": {"side_length", "step", "target", "tolerance", "max_iterations"},
    "train": {"learning_rate", "beta1", "beta2", "weight_decay", "lr_step_size",
              "lr_gamma", "batch_size", "epochs", "seed"},
}

# Preset config fragments matching the published ablation families.
ABLATION_PRESETS = {
    "imu-initial-pose": {"pipeline": {"imu_mode": "initial-pose"}},
    "imu-feature-concat": {"pipeline": {"imu_mode": "feature-concat"}},
    "no-imu": {"pipeline": {"imu_mode": "none"}},
    "two-branch": {"pipeline": {"head_mode": "two-branch"}},
    "merged-heads": {"pipeline": {"head_mode": "merged"}},
    "vertex-only": {"pipeline": {"head_mode": "vertex-only"}},
    "attention-head": {"pipeline": {"head_type": "attention"}},
    "fc-head": {"pipeline": {"head_type": "fc-activation"}},
    "nearest-matching": {"pipeline": {"matching": "nearest"}},
    "pixel-matching": {"pipeline": {"matching": "pixel"}},
    "no-point-to-plane": {"pipeline": {"alpha": 0.0}},
    "no-plane-to-plane": {"pipeline": {"lam": 0.0}},
}


def _check_keys(section: str, given: dict):
    unknown = set(given) - _SECTIONS[section]
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")


def _merge(base: dict, override: dict) -> dict:
    out = {k: dict(v) for k, v in base.items()}
    for sec, vals in override.items():
        out.setdefault(sec, {}).update(vals)
    return out


def config_from_dict(data: dict) -> PipelineConfig:
    data = data or {}
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for sec in _SECTIONS:
        if sec in data:
            if not isinstance(data[sec], dict):
                raise ConfigError(f"section {sec} must be a mapping")
            _check_keys(sec, data[sec])
    pl = dict(data.get("pipeline", {}))
    weights = LossWeights(alpha=pl.pop("alpha", 1.0), lam=pl.pop("lam", 0.1))
    if "encoder_widths" in pl:
        pl["encoder_widths"] = tuple(pl["encoder_widths"])
    projection = ProjectionConfig(**data.get("projection", {}))
    voxel = VoxelParams(**data.get("voxel", {}))
    train = TrainParams(**data.get("train", {}))
    return PipelineConfig(weights=weights, projection=projection, voxel=voxel,
                          train=train, **pl)


def load_config(path=None, overrides: dict | None = None,
                preset: str | None = None) -> PipelineConfig:
    """Config file -> preset -> flag overrides, later wins."""
    data: dict = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = loaded
    if preset is not None:
        if preset not in ABLATION_PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; know {sorted(ABLATION_PRESETS)}")
        data = _merge(data, ABLATION_PRESETS[preset])
    if overrides:
        data = _merge(data, overrides)
    return config_from_dict(data)


def dump_config(cfg: PipelineConfig, path):
    """Write the fully resolved configuration next to a run's outputs."""
    d = cfg.describe()
    out = {
        "pipeline": {
            "imu_mode": d["imu_mode"], "head_mode": d["head_mode"],
            "head_type": d["head_type"], "matching": d["matching"],
            "feature_dim": d["feature_dim"],
            "encoder_widths": list(d["encoder_widths"]),
            "lstm_hidden": d["lstm_hidden"], "imu_window": d["imu_window"],
            "q_scale": d["q_scale"], "max_match_dist": d["max_match_dist"],
            "alpha": d["weights"]["alpha"], "lam": d["weights"]["lam"],
        },
        "projection": d["projection"],
        "voxel": d["voxel"],
        "train": d["train"],
    }
    Path(path).write_text(yaml.safe_dump(out, sort_keys=False))
