"""Row-major run-length encoding for binary masks (service wire format).

Counts alternate between runs of 0s and 1s over the row-major flattened
mask, always starting with the length of the leading zero run (which may
be 0). Not the COCO format: COCO runs are column-major.
"""
from __future__ import annotations

import numpy as np


def encode(mask: np.ndarray) -> list[int]:
    flat = np.asarray(mask).astype(bool).ravel()
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    boundaries = np.concatenate(([0], changes, [flat.size]))
    counts = np.diff(boundaries).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return [int(c) for c in counts]


def decode(counts: list[int], height: int, width: int) -> np.ndarray:
    total = sum(counts)
    if total != height * width:
        raise ValueError(f"run lengths sum to {total}, expected {height * width}")
    flat = np.zeros(height * width, dtype=np.uint8)
    pos = 0
    value = 0
    for run in counts:
        if value:
            flat[pos : pos + run] = 1
        pos += run
        value ^= 1
    return flat.reshape(height, width)
