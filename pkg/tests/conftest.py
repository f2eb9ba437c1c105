"""Shared fixtures and brute-force oracles used across the suite."""
import itertools

import numpy as np
import pytest
import torch

from clickseg import Click, ModelConfig, Proposals, SegmentationModel


def tiny_model_config(**overrides) -> ModelConfig:
    """A fast configuration for tests that need a real network."""
    base = dict(
        num_queries=7,
        dim=16,
        backbone_dim=16,
        backbone_depth=1,
        backbone_heads=2,
        decoder_layers=3,
        decoder_heads=2,
        ffn_dim=32,
        disk_radius=3,
        image_size=64,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_model():
    torch.manual_seed(7)
    return SegmentationModel(tiny_model_config())


# --- brute-force oracles ------------------------------------------------------


def brute_force_disk_map(clicks, height, width, radius):
    grid = np.zeros((2, height, width), dtype=np.uint8)
    for i in range(height):
        for j in range(width):
            for c in clicks:
                if (j - c.x) ** 2 + (i - c.y) ** 2 <= radius * radius:
                    grid[0 if c.polarity == 1 else 1, i, j] = 1
    return grid


def brute_force_iou(a, b):
    a_set = {(i, j) for i, j in zip(*np.nonzero(np.asarray(a)))}
    b_set = {(i, j) for i, j in zip(*np.nonzero(np.asarray(b)))}
    union = a_set | b_set
    if not union:
        return 1.0
    return len(a_set & b_set) / len(union)


def brute_force_assignment_cost(cost):
    """Minimum total cost over all injective assignments of min(N, K) pairs."""
    cost = np.asarray(cost)
    n, k = cost.shape
    if k <= n:
        best = min(
            sum(cost[row, j] for j, row in enumerate(rows))
            for rows in itertools.permutations(range(n), k)
        )
    else:
        best = min(
            sum(cost[i, col] for i, col in enumerate(cols))
            for cols in itertools.permutations(range(k), n)
        )
    return best


def brute_force_components(error):
    """4-connected components by BFS in raster order: list of pixel-index sets."""
    error = np.asarray(error).astype(bool)
    height, width = error.shape
    seen = np.zeros_like(error)
    components = []
    for i in range(height):
        for j in range(width):
            if not error[i, j] or seen[i, j]:
                continue
            stack, pixels = [(i, j)], set()
            seen[i, j] = True
            while stack:
                y, x = stack.pop()
                pixels.add((y, x))
                for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < height and 0 <= nx < width and error[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        stack.append((ny, nx))
            components.append(pixels)
    return components


def brute_force_center(pixels, height, width):
    """Max distance-to-boundary point of a pixel set; border counts as boundary.

    Ties resolve to the lowest (y, x). Returns (y, x).
    """
    best, best_dist = None, -1.0
    for y, x in sorted(pixels):
        dist = min(
            np.hypot(y - by, x - bx)
            for by in range(-1, height + 1)
            for bx in range(-1, width + 1)
            if (by, bx) not in pixels
        )
        if dist > best_dist:
            best, best_dist = (y, x), dist
    return best


class StubModel:
    """Scripted model for protocol tests: proposals depend only on the click count."""

    def __init__(self, proposals_by_click_count, num_queries=None):
        self.script = proposals_by_click_count
        self.calls = []  # click counts observed, in order
        n = num_queries or self.script[0].num_proposals

        class _Cfg:
            num_queries = n

        self.config = _Cfg()

    def predict(self, image, clicks, prev_mask=None):
        self.calls.append(len(clicks))
        index = min(len(clicks), len(self.script)) - 1
        return self.script[index]


def make_proposals(masks, conf, iou_pred, logit_scale=20.0):
    """Proposals with near-saturated logits matching the given binary masks."""
    masks = np.stack([np.asarray(m, dtype=np.float32) for m in masks])
    logits = torch.from_numpy((masks * 2.0 - 1.0) * logit_scale)
    return Proposals(
        mask_logits=logits,
        conf=torch.as_tensor(conf, dtype=torch.float32),
        iou_pred=torch.as_tensor(iou_pred, dtype=torch.float32),
    )
