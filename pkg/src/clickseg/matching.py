"""Feasible-target construction, Hungarian set matching, and the composite loss."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment

from .clicks import Click
from .errors import EmptyFeasibleSet
from .model import Proposals


@dataclass
class FeasibleTargets:
    """Ground-truth masks consistent with every click.

    `indices` maps each retained mask back to its position in the original
    annotation list; `primary_index` refers to the original list as well.
    """

    masks: list  # binary (H, W) arrays
    indices: list
    primary_index: int | None = None


@dataclass
class Assignment:
    pairs: list  # (proposal_index, target_index), injective on both sides
    unmatched_proposals: list

    def matched_proposal_indices(self) -> list:
        return [p for p, _ in self.pairs]


@dataclass
class LossWeights:
    dice: float = 1.0
    focal: float = 1.0
    iou_l1: float = 1.0
    conf_bce: float = 1.0


@dataclass
class LossBreakdown:
    dice: torch.Tensor
    focal: torch.Tensor
    iou_l1: torch.Tensor
    conf_bce: torch.Tensor
    total: torch.Tensor
    weights: LossWeights = field(default_factory=LossWeights)

    def to_floats(self) -> dict:
        return {
            "dice": float(self.dice),
            "focal": float(self.focal),
            "iou_l1": float(self.iou_l1),
            "conf_bce": float(self.conf_bce),
            "total": float(self.total),
        }


def feasible_targets(
    all_masks: Sequence[np.ndarray],
    clicks: Sequence[Click],
    primary_index: int | None = None,
) -> FeasibleTargets:
    """Retain exactly the masks containing all positive clicks and no negative ones."""
    if len(all_masks) == 0:
        raise ValueError("need at least one candidate mask")
    if len(clicks) == 0:
        raise ValueError("need at least one click")
    masks, indices = [], []
    for i, mask in enumerate(all_masks):
        if all(bool(mask[c.y, c.x]) == bool(c.polarity) for c in clicks):
            masks.append(mask)
            indices.append(i)
    if not masks:
        raise EmptyFeasibleSet("no mask is consistent with the click set")
    if primary_index is not None and primary_index not in indices:
        raise EmptyFeasibleSet("the primary target was filtered out by the click set")
    return FeasibleTargets(masks=masks, indices=indices, primary_index=primary_index)


def dice_loss(pred_prob: torch.Tensor, target: torch.Tensor, eps: float = 1.0) -> torch.Tensor:
    """Soft dice loss with smoothing on both numerator and denominator.

    Zero for an exact binary match; approaches 1 for disjoint nonempty masks.
    """
    pred = pred_prob.reshape(-1)
    tgt = target.reshape(-1).to(pred.dtype)
    numerator = 2.0 * (pred * tgt).sum()
    denominator = pred.sum() + tgt.sum()
    return 1.0 - (numerator + eps) / (denominator + eps)


def focal_loss(
    pred_logits: torch.Tensor,
    target: torch.Tensor,
    gamma: float = 2.0,
    alpha: float = 0.25,
) -> torch.Tensor:
    """Mean binary focal loss over pixels (logit inputs)."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    tgt = target.to(pred_logits.dtype)
    ce = F.binary_cross_entropy_with_logits(pred_logits, tgt, reduction="none")
    prob = pred_logits.sigmoid()
    p_t = prob * tgt + (1 - prob) * (1 - tgt)
    loss = ce * (1 - p_t) ** gamma
    alpha_t = alpha * tgt + (1 - alpha) * (1 - tgt)
    return (alpha_t * loss).mean()


def match_cost(
    proposal_logits: torch.Tensor,
    target: np.ndarray | torch.Tensor,
    weights: LossWeights | None = None,
) -> torch.Tensor:
    """Matching cost between one proposal and one target: weighted dice + focal."""
    w = weights or LossWeights()
    tgt = torch.as_tensor(np.asarray(target), dtype=proposal_logits.dtype)
    return w.dice * dice_loss(proposal_logits.sigmoid(), tgt) + w.focal * focal_loss(
        proposal_logits, tgt
    )


def cost_matrix(
    proposals: Proposals,
    targets: Sequence[np.ndarray],
    weights: LossWeights | None = None,
) -> np.ndarray:
    """(N, K) matching-cost matrix, computed without gradients."""
    n, k = proposals.num_proposals, len(targets)
    cost = np.empty((n, k), dtype=np.float64)
    with torch.no_grad():
        for j, target in enumerate(targets):
            for i in range(n):
                cost[i, j] = float(match_cost(proposals.mask_logits[i], target, weights))
    return cost


def hungarian_match(cost: np.ndarray) -> Assignment:
    """Minimum-total-cost injective assignment of min(N, K) pairs."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be a 2D matrix, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    matched = {p for p, _ in pairs}
    unmatched = [i for i in range(cost.shape[0]) if i not in matched]
    return Assignment(pairs=pairs, unmatched_proposals=unmatched)


def pseudo_iou_labels(
    proposals: Proposals, primary_target: np.ndarray, threshold: float = 0.5
) -> torch.Tensor:
    """IoU of each binarized proposal against the primary target (empty/empty -> 1)."""
    target = np.asarray(primary_target).astype(bool)
    binary = proposals.binary_masks(threshold).astype(bool)
    labels = np.empty(proposals.num_proposals, dtype=np.float64)
    for i in range(proposals.num_proposals):
        union = np.logical_or(binary[i], target).sum()
        if union == 0:
            labels[i] = 1.0
        else:
            labels[i] = np.logical_and(binary[i], target).sum() / union
    return torch.from_numpy(labels)


def total_loss(
    proposals: Proposals,
    feasible: FeasibleTargets,
    assignment: Assignment,
    pseudo_iou: torch.Tensor,
    weights: LossWeights | None = None,
) -> LossBreakdown:
    """Composite set-prediction loss.

    Mask terms (dice + focal) average over matched pairs; the L1 IoU term and
    the confidence BCE run over all N proposals, with confidence targets 1
    exactly on matched proposals.
    """
    w = weights or LossWeights()
    dtype = proposals.mask_logits.dtype
    dice_terms, focal_terms = [], []
    for proposal_index, target_index in assignment.pairs:
        logits = proposals.mask_logits[proposal_index]
        target = torch.as_tensor(np.asarray(feasible.masks[target_index]), dtype=dtype)
        dice_terms.append(dice_loss(logits.sigmoid(), target))
        focal_terms.append(focal_loss(logits, target))
    dice_total = torch.stack(dice_terms).mean()
    focal_total = torch.stack(focal_terms).mean()

    pseudo = pseudo_iou.to(dtype)
    iou_l1 = (proposals.iou_pred - pseudo).abs().mean()

    conf_target = torch.zeros(proposals.num_proposals, dtype=dtype)
    for proposal_index, _ in assignment.pairs:
        conf_target[proposal_index] = 1.0
    conf_bce = F.binary_cross_entropy(proposals.conf, conf_target)

    total = (
        w.dice * dice_total + w.focal * focal_total + w.iou_l1 * iou_l1 + w.conf_bce * conf_bce
    )
    return LossBreakdown(
        dice=dice_total, focal=focal_total, iou_l1=iou_l1, conf_bce=conf_bce,
        total=total, weights=w,
    )
