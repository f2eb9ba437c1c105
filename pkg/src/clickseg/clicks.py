"""Click primitives: validation, disk-map rasterization, position-aware embeddings."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ClickOutOfBounds, ConfigError


@dataclass(frozen=True)
class Click:
    """A single user interaction point.

    Coordinates are 0-based pixel indices (x = column, y = row).
    polarity is 1 for a positive (foreground) click, 0 for negative.
    order is the insertion index within a session or simulation.
    """

    x: int
    y: int
    polarity: int
    order: int = 0

    def __post_init__(self):
        if self.polarity not in (0, 1):
            raise ValueError(f"polarity must be 0 or 1, got {self.polarity}")


@dataclass(frozen=True)
class DiskMap:
    """Two-channel binary map: channel 0 marks positive disks, channel 1 negative."""

    grid: np.ndarray  # (2, H, W) uint8 in {0, 1}
    radius: int


def validate_clicks(clicks: Sequence[Click], height: int, width: int) -> None:
    for click in clicks:
        if not (0 <= click.x < width and 0 <= click.y < height):
            raise ClickOutOfBounds(
                f"click at (x={click.x}, y={click.y}) is outside a {height}x{width} image"
            )


def disk_map(clicks: Sequence[Click], height: int, width: int, radius: int) -> DiskMap:
    """Rasterize clicks into a two-channel binary disk map.

    A pixel (i, j) is set in channel 0 iff its Euclidean distance to some
    positive click is <= radius (channel 1 for negative clicks). Disks are
    clipped at the borders; overlapping disks union.
    """
    if radius < 1:
        raise ConfigError(f"disk radius must be >= 1, got {radius}")
    validate_clicks(clicks, height, width)
    grid = np.zeros((2, height, width), dtype=np.uint8)
    if not clicks:
        return DiskMap(grid=grid, radius=radius)
    yy, xx = np.mgrid[0:height, 0:width]
    r2 = radius * radius
    for click in clicks:
        channel = 0 if click.polarity == 1 else 1
        inside = (xx - click.x) ** 2 + (yy - click.y) ** 2 <= r2
        grid[channel][inside] = 1
    return DiskMap(grid=grid, radius=radius)


def sine_position_encoding(
    x: float,
    y: float,
    height: int,
    width: int,
    dim: int,
    temperature: float = 10000.0,
) -> np.ndarray:
    """Fixed sinusoidal encoding of a 2D position.

    The first dim/2 entries encode x, the last dim/2 encode y. Within each
    half, sine and cosine alternate over dim/4 geometric frequencies.
    Coordinates are normalized to [0, 2*pi) by the image size.
    """
    if dim % 2 != 0:
        raise ConfigError(f"positional encoding dim must be even, got {dim}")
    half = dim // 2
    pos_x = x / width * 2.0 * np.pi
    pos_y = y / height * 2.0 * np.pi
    i = np.arange(half, dtype=np.float64)
    scale = temperature ** (2.0 * (i // 2) / half)
    out = np.empty(dim, dtype=np.float64)
    for offset, pos in ((0, pos_x), (half, pos_y)):
        phase = pos / scale
        block = out[offset : offset + half]
        block[0::2] = np.sin(phase[0::2])
        block[1::2] = np.cos(phase[1::2])
    return out


def grid_position_encoding(
    height_tokens: int,
    width_tokens: int,
    stride: int,
    height: int,
    width: int,
    dim: int,
) -> np.ndarray:
    """Sinusoidal encodings for every cell of a strided token grid.

    Each token is encoded at the pixel coordinates of its cell center.
    Returns an array of shape (height_tokens * width_tokens, dim) in
    row-major token order.
    """
    out = np.empty((height_tokens * width_tokens, dim), dtype=np.float64)
    for r in range(height_tokens):
        cy = (r + 0.5) * stride - 0.5
        for c in range(width_tokens):
            cx = (c + 0.5) * stride - 0.5
            out[r * width_tokens + c] = sine_position_encoding(cx, cy, height, width, dim)
    return out


def click_embeddings(
    clicks: Sequence[Click],
    height: int,
    width: int,
    positive_embed: np.ndarray,
    negative_embed: np.ndarray,
) -> np.ndarray:
    """Position-aware click embeddings: PE(x, y) plus the polarity embedding.

    Returns a (C, D) matrix with one row per click, in click order as given.
    """
    validate_clicks(clicks, height, width)
    dim = positive_embed.shape[-1]
    if negative_embed.shape[-1] != dim:
        raise ConfigError("positive and negative embeddings must share the same dim")
    rows = np.empty((len(clicks), dim), dtype=np.float64)
    for c, click in enumerate(clicks):
        pe = sine_position_encoding(click.x, click.y, height, width, dim)
        type_embed = positive_embed if click.polarity == 1 else negative_embed
        rows[c] = pe + type_embed
    return rows
