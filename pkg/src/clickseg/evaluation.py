"""Interactive evaluation protocol: NoC@tau and mIoU@k with automatic corrective clicks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clicks import Click
from .errors import ConfigError
from .model import Proposals, select_mask
from .simulation import mask_center_point, next_click


@dataclass
class EvalConfig:
    iou_thresholds: tuple = (0.85, 0.90)
    max_clicks: int = 20
    k_list: tuple = (1, 2, 3, 5)
    selection_mode: str = "product"  # "product", "iou_only", or "conf_only"
    count_repicks: bool = False  # simulate a human replacing a wrong auto-selection

    def __post_init__(self):
        if self.max_clicks < 1:
            raise ConfigError("max_clicks must be >= 1")
        for t in self.iou_thresholds:
            if not 0.0 < t <= 1.0:
                raise ConfigError(f"threshold {t} outside (0, 1]")
        if self.selection_mode not in ("product", "iou_only", "conf_only"):
            raise ConfigError(f"unknown selection_mode {self.selection_mode!r}")


@dataclass
class InstanceResult:
    instance_id: str
    ious: list  # IoU of the selected mask after click k (index k-1)
    noc: dict  # threshold -> clicks needed (max_clicks if never reached)
    repicks: int = 0

    def iou_at(self, k: int) -> float:
        if k < 1:
            raise ValueError("k must be >= 1")
        if k <= len(self.ious):
            return self.ious[k - 1]
        return self.ious[-1]


@dataclass
class EvalResult:
    instances: list
    mean_noc: dict = field(default_factory=dict)
    miou_at_k: dict = field(default_factory=dict)
    mean_repicks: float = 0.0


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary grids; empty/empty counts as 1."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def selection_ablation(proposals: Proposals, mode: str) -> int:
    """Proposal choice under one selection rule; ties go to the lowest index."""
    if mode == "product":
        return select_mask(proposals)[0]
    if mode == "iou_only":
        return int(np.argmax(proposals.iou_pred.detach().cpu().numpy()))
    if mode == "conf_only":
        return int(np.argmax(proposals.conf.detach().cpu().numpy()))
    raise ConfigError(f"unknown selection mode {mode!r}")


def evaluate_instance(model, image: np.ndarray, gt: np.ndarray, config: EvalConfig,
                      instance_id: str = "") -> InstanceResult:
    """Run the interactive protocol on one instance.

    The first click is positive at the ground truth's max-boundary-distance
    point; every later click corrects the largest error region of the
    currently selected mask. The loop runs until the largest threshold is
    met (and enough clicks for every requested k are recorded) or the click
    budget is exhausted.
    """
    gt = np.asarray(gt).astype(bool)
    if not gt.any():
        raise ValueError("ground-truth mask is empty")
    y, x = mask_center_point(gt)
    clicks = [Click(x=x, y=y, polarity=1, order=0)]
    prev_mask = np.zeros((1,) + gt.shape, dtype=np.float32)
    ious: list = []
    repicks = 0
    max_threshold = max(config.iou_thresholds)
    min_k = max(config.k_list) if config.k_list else 1
    while True:
        proposals = model.predict(image, clicks, prev_mask)
        selected = selection_ablation(proposals, config.selection_mode)
        if config.count_repicks:
            binary = proposals.binary_masks().astype(bool)
            true_ious = [iou(binary[i], gt) for i in range(proposals.num_proposals)]
            best = int(np.argmax(true_ious))
            if true_ious[best] > true_ious[selected]:
                repicks += 1
                selected = best
        probs = proposals.probabilities()[selected].cpu().numpy()
        selected_binary = probs >= 0.5
        ious.append(iou(selected_binary, gt))
        k = len(ious)
        if k >= config.max_clicks:
            break
        if ious[-1] >= max_threshold and k >= min_k:
            break
        if np.array_equal(selected_binary, gt):
            break  # nothing left to correct; later ks repeat this IoU
        clicks.append(next_click(selected_binary, gt, order=k))
        prev_mask = probs[None].astype(np.float32)
    noc = {
        t: next((k + 1 for k, v in enumerate(ious) if v >= t), config.max_clicks)
        for t in config.iou_thresholds
    }
    return InstanceResult(instance_id=instance_id, ious=ious, noc=noc, repicks=repicks)


@dataclass
class EvalInstance:
    image: np.ndarray
    gt: np.ndarray
    instance_id: str


def flatten_to_instances(samples: list) -> list:
    """One evaluation instance per (image, ground-truth mask) pair."""
    instances = []
    for i, sample in enumerate(samples):
        for mask, mask_id in zip(sample.masks, sample.ids):
            instances.append(
                EvalInstance(image=sample.image, gt=mask, instance_id=f"{i}/{mask_id}")
            )
    return instances


def evaluate_dataset(model, instances: list, config: EvalConfig) -> EvalResult:
    """Aggregate NoC and mIoU@k over evaluation instances."""
    if instances and hasattr(instances[0], "masks"):
        instances = flatten_to_instances(instances)
    if not instances:
        raise ConfigError("evaluation dataset is empty")
    results = [
        evaluate_instance(model, inst.image, inst.gt, config, instance_id=inst.instance_id)
        for inst in instances
    ]
    mean_noc = {
        t: float(np.mean([r.noc[t] for r in results])) for t in config.iou_thresholds
    }
    miou_at_k = {
        k: float(np.mean([r.iou_at(k) for r in results])) for k in config.k_list
    }
    mean_repicks = float(np.mean([r.repicks for r in results]))
    return EvalResult(
        instances=results, mean_noc=mean_noc, miou_at_k=miou_at_k, mean_repicks=mean_repicks
    )
