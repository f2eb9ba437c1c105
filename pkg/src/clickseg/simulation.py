"""Click-and-mask simulation: random initial clicks, corrective clicks, previous-mask sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .clicks import Click
from .errors import NoErroneousPixels, SampleSkipped
from .model import SegmentationModel


@dataclass
class SimulationConfig:
    n_init_range: tuple = (1, 10)  # inclusive
    n_inter_range: tuple = (0, 4)  # inclusive
    prev_mask_policy: str = "random"  # "random" or "largest_iou"
    positive_prob: float = 0.5
    negative_pool: str = "complement"  # "complement" or "other_masks"

    def __post_init__(self):
        if self.prev_mask_policy not in ("random", "largest_iou"):
            raise ValueError(f"unknown prev_mask_policy {self.prev_mask_policy!r}")
        if self.negative_pool not in ("complement", "other_masks"):
            raise ValueError(f"unknown negative_pool {self.negative_pool!r}")


def mask_center_point(mask: np.ndarray) -> tuple[int, int]:
    """Interior point of maximal distance to the mask boundary.

    The image border counts as boundary. Ties resolve to the lowest (y, x)
    in row-major order. Returns (y, x).
    """
    mask = np.asarray(mask).astype(bool)
    if not mask.any():
        raise ValueError("mask is empty")
    padded = np.pad(mask, 1)
    dist = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
    flat = int(np.argmax(dist))
    return flat // mask.shape[1], flat % mask.shape[1]


def largest_error_component(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Largest 4-connected component of the pred-vs-gt error map.

    Among equally large components the one whose first raster-order pixel
    comes earliest wins.
    """
    error = np.asarray(pred).astype(bool) ^ np.asarray(gt).astype(bool)
    if not error.any():
        raise NoErroneousPixels("prediction equals ground truth")
    labels, count = ndimage.label(error)  # default structure = 4-connectivity
    sizes = np.bincount(labels.ravel())[1:]
    best = int(np.flatnonzero(sizes == sizes.max())[0]) + 1
    return labels == best


def next_click(pred: np.ndarray, gt: np.ndarray, order: int = 0) -> Click:
    """Corrective click at the center of the largest erroneous region.

    Positive when the clicked pixel is a false negative (gt=1, pred=0),
    negative when it is a false positive.
    """
    component = largest_error_component(pred, gt)
    y, x = mask_center_point(component)
    polarity = 1 if gt[y, x] else 0
    return Click(x=x, y=y, polarity=polarity, order=order)


def random_clicks(
    primary: np.ndarray,
    all_masks: list,
    n: int,
    rng: np.random.Generator,
    positive_prob: float = 0.5,
    negative_pool: str = "complement",
) -> list:
    """Random clicks consistent with the primary target.

    The first click is always positive, uniform over the primary mask.
    Each later click is positive with probability `positive_prob` (uniform
    over primary) or negative (uniform over the negative pool). Positions
    never repeat; a click whose pool is exhausted is dropped.
    """
    primary = np.asarray(primary).astype(bool)
    if not primary.any():
        raise SampleSkipped("primary mask is empty")
    if not 1 <= n <= 10:
        raise ValueError(f"click count must be in [1, 10], got {n}")
    height, width = primary.shape
    if negative_pool == "other_masks":
        pool = np.zeros_like(primary)
        for mask in all_masks:
            pool |= np.asarray(mask).astype(bool)
        negative = pool & ~primary
    else:
        negative = ~primary

    positive_flat = np.flatnonzero(primary.ravel())
    negative_flat = np.flatnonzero(negative.ravel())
    used: set = set()
    clicks = []
    for i in range(n):
        want_positive = i == 0 or negative_flat.size == 0 or rng.random() < positive_prob
        pool_flat = positive_flat if want_positive else negative_flat
        available = pool_flat[~np.isin(pool_flat, list(used))] if used else pool_flat
        if available.size == 0:
            continue
        choice = int(rng.choice(available))
        used.add(choice)
        clicks.append(
            Click(x=choice % width, y=choice // width, polarity=int(want_positive), order=len(clicks))
        )
    return clicks


def simulate_iteration(
    model: SegmentationModel,
    image: np.ndarray,
    all_masks: list,
    primary: np.ndarray,
    config: SimulationConfig,
    rng: np.random.Generator,
) -> tuple[list, np.ndarray]:
    """One round of click-and-mask simulation (no gradients flow here).

    Draws the initial random clicks, then runs up to n_inter interactive
    rounds: predict, pick a previous mask per policy, place a corrective
    click against the primary target. Returns the click list and the
    previous-mask probability grid (all-zero if no interaction ran).
    """
    primary = np.asarray(primary).astype(bool)
    lo, hi = config.n_init_range
    n_init = int(rng.integers(lo, hi + 1))
    clicks = random_clicks(
        primary, all_masks, n_init, rng,
        positive_prob=config.positive_prob, negative_pool=config.negative_pool,
    )
    lo, hi = config.n_inter_range
    n_inter = int(rng.integers(lo, hi + 1))
    height, width = primary.shape
    prev_mask = np.zeros((1, height, width), dtype=np.float32)
    for _ in range(n_inter):
        proposals = model.predict(image, clicks, prev_mask)
        if config.prev_mask_policy == "random":
            chosen = int(rng.integers(proposals.num_proposals))
        else:
            binary = proposals.binary_masks().astype(bool)
            ious = [
                _iou(binary[i], primary) for i in range(proposals.num_proposals)
            ]
            chosen = int(np.argmax(ious))
        probs = proposals.probabilities()[chosen].cpu().numpy()
        chosen_binary = probs >= 0.5
        prev_mask = probs[None].astype(np.float32)
        if np.array_equal(chosen_binary, primary):
            break
        clicks.append(next_click(chosen_binary, primary, order=len(clicks)))
    return clicks, prev_mask


def _iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)
