"""Flat key-value config files (YAML) for the CLI.

Every key is optional; unknown keys are an error. The full schema is
documented in the README.
"""
from __future__ import annotations

from pathlib import Path

import yaml

from .errors import ConfigError
from .matching import LossWeights
from .model import ModelConfig
from .simulation import SimulationConfig
from .training import AugmentConfig, TrainConfig

_MODEL_KEYS = {
    "num_queries", "dim", "backbone", "backbone_dim", "backbone_depth",
    "backbone_heads", "decoder_layers", "decoder_heads", "ffn_dim",
    "disk_radius", "image_size",
}
_TRAIN_KEYS = {
    "epochs", "lr", "lr_decay_epoch", "lr_decay_factor", "batch_size",
    "beta1", "beta2", "weight_decay", "grad_clip", "seed",
}
_AUGMENT_KEYS = {
    "augment_resize": "resize",
    "augment_hflip": "hflip",
    "augment_rotate": "rotate",
    "augment_jitter": "jitter",
    "augment_crop": "crop",
    "augment_rotate_degrees": "rotate_degrees",
}
_SIM_KEYS = {"prev_mask_policy", "positive_prob", "negative_pool"}
_LOSS_KEYS = {
    "loss_dice": "dice",
    "loss_focal": "focal",
    "loss_iou_l1": "iou_l1",
    "loss_conf_bce": "conf_bce",
}


def configs_from_flat(flat: dict) -> tuple[ModelConfig, TrainConfig]:
    flat = dict(flat or {})
    model_kwargs = {k: flat.pop(k) for k in list(flat) if k in _MODEL_KEYS}
    train_kwargs = {k: flat.pop(k) for k in list(flat) if k in _TRAIN_KEYS}
    augment_kwargs = {
        _AUGMENT_KEYS[k]: flat.pop(k) for k in list(flat) if k in _AUGMENT_KEYS
    }
    if "augment_scale_min" in flat or "augment_scale_max" in flat:
        augment_kwargs["scale_range"] = (
            float(flat.pop("augment_scale_min", 0.75)),
            float(flat.pop("augment_scale_max", 1.25)),
        )
    sim_kwargs = {k: flat.pop(k) for k in list(flat) if k in _SIM_KEYS}
    if "n_init_min" in flat or "n_init_max" in flat:
        sim_kwargs["n_init_range"] = (
            int(flat.pop("n_init_min", 1)),
            int(flat.pop("n_init_max", 10)),
        )
    if "n_inter_min" in flat or "n_inter_max" in flat:
        sim_kwargs["n_inter_range"] = (
            int(flat.pop("n_inter_min", 0)),
            int(flat.pop("n_inter_max", 4)),
        )
    loss_kwargs = {_LOSS_KEYS[k]: flat.pop(k) for k in list(flat) if k in _LOSS_KEYS}
    if flat:
        raise ConfigError(f"unknown config keys: {sorted(flat)}")
    train_config = TrainConfig(
        augment=AugmentConfig(**augment_kwargs),
        sim=SimulationConfig(**sim_kwargs),
        loss=LossWeights(**loss_kwargs),
        **train_kwargs,
    )
    return ModelConfig(**model_kwargs), train_config


def load_configs(path) -> tuple[ModelConfig, TrainConfig]:
    with open(Path(path)) as fh:
        flat = yaml.safe_load(fh)
    if flat is None:
        flat = {}
    if not isinstance(flat, dict):
        raise ConfigError(f"{path} must contain a flat key-value mapping")
    return configs_from_flat(flat)
