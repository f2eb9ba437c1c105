"""Training orchestration: augmentation, the per-sample step, and the epoch loop."""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from .data import TrainingSample
from .errors import ConfigError, EmptyFeasibleSet, SampleSkipped
from .matching import (
    LossBreakdown,
    LossWeights,
    cost_matrix,
    feasible_targets,
    hungarian_match,
    pseudo_iou_labels,
    total_loss,
)
from .model import ModelConfig, SegmentationModel, load_checkpoint, save_checkpoint
from .simulation import SimulationConfig, simulate_iteration

log = logging.getLogger(__name__)


@dataclass
class AugmentConfig:
    resize: bool = True
    hflip: bool = True
    rotate: bool = True
    jitter: bool = True
    crop: bool = True
    scale_range: tuple = (0.75, 1.25)
    rotate_degrees: float = 20.0
    crop_retries: int = 10


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 1e-3
    lr_decay_epoch: int = 8
    lr_decay_factor: float = 0.1
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    grad_clip: float = 1.0  # 0 disables
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    sim: SimulationConfig = field(default_factory=SimulationConfig)
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise ConfigError("lr_decay_factor must be in (0, 1)")


# --- augmentation -----------------------------------------------------------


def hflip_sample(sample: TrainingSample) -> TrainingSample:
    return TrainingSample(
        image=sample.image[:, :, ::-1].copy(),
        masks=[m[:, ::-1].copy() for m in sample.masks],
        ids=list(sample.ids),
    )


def _crop(sample: TrainingSample, top: int, left: int, height: int, width: int) -> TrainingSample:
    def cut(arr, pad_value=0.0):
        window = arr[..., top : top + height, left : left + width]
        ph = height - window.shape[-2]
        pw = width - window.shape[-1]
        if ph or pw:
            pads = [(0, 0)] * (arr.ndim - 2) + [(0, ph), (0, pw)]
            window = np.pad(window, pads, constant_values=pad_value)
        return window

    return TrainingSample(
        image=cut(sample.image).astype(np.float32),
        masks=[cut(m).astype(np.uint8) for m in sample.masks],
        ids=list(sample.ids),
    )


def augment(sample: TrainingSample, rng: np.random.Generator,
            config: AugmentConfig | None = None) -> TrainingSample:
    """Joint augmentation of the image and all ground-truth masks.

    Image resampling is bilinear, masks nearest-neighbor. The final crop
    restores the original spatial size; if it empties any mask the crop is
    resampled, and after `crop_retries` failures the sample is skipped.
    """
    cfg = config or AugmentConfig()
    height, width = sample.image.shape[1:]
    image = sample.image
    masks = list(sample.masks)

    if cfg.resize:
        scale = rng.uniform(*cfg.scale_range)
        image = ndimage.zoom(image, (1, scale, scale), order=1)
        masks = [
            ndimage.zoom(m, (scale, scale), order=0, mode="grid-constant") for m in masks
        ]
    if cfg.hflip and rng.random() < 0.5:
        image = image[:, :, ::-1]
        masks = [m[:, ::-1] for m in masks]
    if cfg.rotate:
        angle = rng.uniform(-cfg.rotate_degrees, cfg.rotate_degrees)
        image = ndimage.rotate(image, angle, axes=(2, 1), reshape=False, order=1, mode="constant")
        masks = [
            ndimage.rotate(m, angle, axes=(1, 0), reshape=False, order=0, mode="constant")
            for m in masks
        ]
    if cfg.jitter:
        brightness = rng.uniform(-0.1, 0.1)
        contrast = rng.uniform(0.85, 1.15)
        image = (image - 0.5) * contrast + 0.5 + brightness

    image = np.ascontiguousarray(np.clip(image, 0.0, 1.0), dtype=np.float32)
    masks = [np.ascontiguousarray(m, dtype=np.uint8) for m in masks]
    if any(not m.any() for m in masks):
        raise SampleSkipped("a mask was emptied by geometric augmentation")

    candidate = TrainingSample(image=image, masks=masks, ids=list(sample.ids))
    if not cfg.crop:
        return candidate
    cur_h, cur_w = image.shape[1:]
    for _ in range(cfg.crop_retries):
        top = int(rng.integers(0, max(cur_h - height, 0) + 1))
        left = int(rng.integers(0, max(cur_w - width, 0) + 1))
        cropped = _crop(candidate, top, left, height, width)
        if all(m.any() for m in cropped.masks):
            return cropped
    raise SampleSkipped("crop emptied a mask in every retry")


# --- per-sample loss and update ---------------------------------------------


def sample_loss(
    model: SegmentationModel,
    sample: TrainingSample,
    config: TrainConfig,
    rng: np.random.Generator,
    apply_augment: bool = True,
) -> LossBreakdown | None:
    """Full per-sample pipeline; returns None when the sample is skipped."""
    if apply_augment:
        try:
            sample = augment(sample, rng, config.augment)
        except SampleSkipped as exc:
            log.debug("augmentation skip: %s", exc)
            return None
    primary_index = int(rng.integers(len(sample.masks)))
    primary = sample.masks[primary_index]
    try:
        clicks, prev_mask = simulate_iteration(
            model, sample.image, sample.masks, primary, config.sim, rng
        )
    except SampleSkipped as exc:
        log.debug("simulation skip: %s", exc)
        return None
    proposals = model(sample.image, clicks, prev_mask)
    try:
        feasible = feasible_targets(sample.masks, clicks, primary_index)
    except EmptyFeasibleSet as exc:
        log.debug("feasibility skip: %s", exc)
        return None
    pseudo = pseudo_iou_labels(proposals, primary)
    cost = cost_matrix(proposals, feasible.masks, config.loss)
    assignment = hungarian_match(cost)
    return total_loss(proposals, feasible, assignment, pseudo, config.loss)


def train_step(
    model: SegmentationModel,
    optimizer: torch.optim.Optimizer,
    sample: TrainingSample,
    config: TrainConfig,
    rng: np.random.Generator,
    apply_augment: bool = True,
) -> LossBreakdown | None:
    """Single-sample update: simulate, forward, match, loss, optimizer step."""
    model.train()
    breakdown = sample_loss(model, sample, config, rng, apply_augment=apply_augment)
    if breakdown is None:
        return None
    optimizer.zero_grad()
    breakdown.total.backward()
    if config.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    optimizer.step()
    return breakdown


# --- epoch loop ----------------------------------------------------------------


def _sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, epoch, index)))


def make_optimizer(model: SegmentationModel, config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(
        model.parameters(),
        lr=config.lr,
        betas=(config.beta1, config.beta2),
        weight_decay=config.weight_decay,
    )


@dataclass
class TrainOutcome:
    checkpoint_path: Path
    metrics_path: Path
    model: SegmentationModel
    skipped: int


def train(
    dataset: list,
    config: TrainConfig,
    out_dir,
    model_config: ModelConfig | None = None,
    resume=None,
) -> TrainOutcome:
    """Epoch loop with per-epoch checkpoints, resumable, with a JSONL metrics log.

    Gradients accumulate over `batch_size` samples per optimizer step.
    Per-sample randomness derives from (seed, epoch, index), so a resumed
    run replays exactly the stream an uninterrupted run would see.
    """
    if not dataset:
        raise ConfigError("training dataset is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.jsonl"

    start_epoch = 0
    if resume is not None:
        model, payload = load_checkpoint(resume)
        extra = payload.get("extra", {})
        optimizer = make_optimizer(model, config)
        optimizer.load_state_dict(extra["optimizer"])
        scheduler = torch.optim.lr_scheduler.MultiStepLR(
            optimizer, milestones=[config.lr_decay_epoch], gamma=config.lr_decay_factor
        )
        scheduler.load_state_dict(extra["scheduler"])
        start_epoch = extra["epoch"] + 1
        global_step = extra.get("global_step", 0)
        skipped_total = extra.get("skipped", 0)
    else:
        torch.manual_seed(config.seed)
        model = SegmentationModel(model_config or ModelConfig())
        optimizer = make_optimizer(model, config)
        scheduler = torch.optim.lr_scheduler.MultiStepLR(
            optimizer, milestones=[config.lr_decay_epoch], gamma=config.lr_decay_factor
        )
        global_step = 0
        skipped_total = 0
        metrics_path.write_text("")

    checkpoint_path = out_dir / "checkpoint_last.pt"
    with open(metrics_path, "a") as metrics:
        for epoch in range(start_epoch, config.epochs):
            order = np.random.default_rng(
                np.random.SeedSequence(entropy=(config.seed, epoch))
            ).permutation(len(dataset))
            for batch_start in range(0, len(order), config.batch_size):
                batch = order[batch_start : batch_start + config.batch_size]
                optimizer.zero_grad()
                sums = {"dice": 0.0, "focal": 0.0, "iou_l1": 0.0, "conf_bce": 0.0, "total": 0.0}
                used = 0
                for index in batch:
                    rng = _sample_rng(config.seed, epoch, int(index))
                    breakdown = sample_loss(model, dataset[int(index)], config, rng)
                    if breakdown is None:
                        skipped_total += 1
                        continue
                    (breakdown.total / len(batch)).backward()
                    for key, value in breakdown.to_floats().items():
                        sums[key] += value
                    used += 1
                if used:
                    if config.grad_clip > 0:
                        torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                    optimizer.step()
                global_step += 1
                record = {
                    "step": global_step,
                    "epoch": epoch,
                    "lr": scheduler.get_last_lr()[0],
                    "skipped": skipped_total,
                    "batch_samples": used,
                }
                record.update(
                    {key: (sums[key] / used if used else None) for key in sums}
                )
                metrics.write(json.dumps(record) + "\n")
            metrics.flush()
            scheduler.step()
            extra = {
                "optimizer": optimizer.state_dict(),
                "scheduler": scheduler.state_dict(),
                "epoch": epoch,
                "global_step": global_step,
                "skipped": skipped_total,
                "train_config": dataclasses.asdict(config),
            }
            save_checkpoint(model, out_dir / f"checkpoint_epoch_{epoch:03d}.pt", extra)
            save_checkpoint(model, checkpoint_path, extra)
            log.info("epoch %d done (step %d, skipped %d)", epoch, global_step, skipped_total)
    return TrainOutcome(
        checkpoint_path=checkpoint_path,
        metrics_path=metrics_path,
        model=model,
        skipped=skipped_total,
    )
