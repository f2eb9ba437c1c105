"""Dataset loading and the synthetic ambiguity corpus.

Folder format: `name.png` paired with `name.mask_<k>.png` (any nonzero pixel
is foreground). COCO format: a directory holding `instances.json` plus an
`images/` subdirectory; polygon and uncompressed-RLE segmentations are
rasterized to binary grids.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)


@dataclass
class TrainingSample:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    masks: list  # binary (H, W) uint8 arrays, all nonempty
    ids: list  # stable per-mask identifiers

    def validate(self) -> "TrainingSample":
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"image must be (3, H, W), got {self.image.shape}")
        if len(self.masks) < 1:
            raise ValueError("sample needs at least one mask")
        if len(self.ids) != len(self.masks):
            raise ValueError("ids and masks must align")
        for mask in self.masks:
            if mask.shape != self.image.shape[1:]:
                raise ValueError("mask shape does not match the image")
            if not mask.any():
                raise ValueError("empty mask in sample")
        return self


# --- rasterization ----------------------------------------------------------


def rasterize_polygon(coords: list, height: int, width: int) -> np.ndarray:
    """Even-odd rasterization of a flat [x0, y0, x1, y1, ...] polygon.

    A pixel belongs to the mask iff its center (col + 0.5, row + 0.5) is
    inside the polygon by the crossing-number rule.
    """
    xs = np.asarray(coords[0::2], dtype=np.float64)
    ys = np.asarray(coords[1::2], dtype=np.float64)
    if xs.size < 3:
        raise ValueError("polygon needs at least 3 vertices")
    px = np.arange(width, dtype=np.float64) + 0.5
    py = np.arange(height, dtype=np.float64) + 0.5
    inside = np.zeros((height, width), dtype=bool)
    n = xs.size
    for i in range(n):
        x1, y1 = xs[i], ys[i]
        x2, y2 = xs[(i + 1) % n], ys[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 <= py) != (y2 <= py)  # (H,)
        x_at = x1 + (py - y1) * (x2 - x1) / (y2 - y1)  # (H,)
        inside ^= crosses[:, None] & (px[None, :] < x_at[:, None])
    return inside.astype(np.uint8)


def decode_coco_rle(counts: list, height: int, width: int) -> np.ndarray:
    """Uncompressed COCO RLE: column-major runs, starting with background."""
    total = sum(counts)
    if total != height * width:
        raise ValueError(f"RLE runs sum to {total}, expected {height * width}")
    flat = np.zeros(height * width, dtype=np.uint8)
    pos, value = 0, 0
    for run in counts:
        if value:
            flat[pos : pos + run] = 1
        pos += run
        value ^= 1
    return flat.reshape((height, width), order="F")


def _rasterize_segmentation(segmentation, height: int, width: int) -> np.ndarray:
    if isinstance(segmentation, dict):
        h, w = segmentation["size"]
        if (h, w) != (height, width):
            raise ValueError("RLE size does not match the image")
        return decode_coco_rle(segmentation["counts"], height, width)
    mask = np.zeros((height, width), dtype=np.uint8)
    for polygon in segmentation:
        if len(polygon) < 6:
            raise ValueError("degenerate polygon")
        mask |= rasterize_polygon(polygon, height, width)
    return mask


# --- loaders ----------------------------------------------------------------


def _load_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def _load_mask(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return (np.asarray(img.convert("L")) != 0).astype(np.uint8)


def load_folder_dataset(root: Path) -> list:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    samples, skipped = [], 0
    images = sorted(p for p in root.glob("*.png") if ".mask_" not in p.name)
    for image_path in images:
        stem = image_path.name[: -len(".png")]
        mask_paths = sorted(
            root.glob(f"{stem}.mask_*.png"),
            key=lambda p: int(p.name[len(stem) + 6 : -4]),
        )
        if not mask_paths:
            log.warning("no masks for %s; skipping", image_path.name)
            skipped += 1
            continue
        image = _load_image(image_path)
        masks, ids = [], []
        for mask_path in mask_paths:
            mask = _load_mask(mask_path)
            if mask.shape != image.shape[1:] or not mask.any():
                log.warning("bad mask %s; skipping mask", mask_path.name)
                continue
            masks.append(mask)
            ids.append(mask_path.name[len(stem) + 1 : -4])
        if not masks:
            log.warning("all masks invalid for %s; skipping", image_path.name)
            skipped += 1
            continue
        samples.append(TrainingSample(image=image, masks=masks, ids=ids).validate())
    if skipped:
        log.warning("skipped %d of %d images in %s", skipped, len(images), root)
    return samples


def load_coco_dataset(root: Path) -> list:
    root = Path(root)
    ann_path = root / "instances.json"
    if not ann_path.is_file():
        raise FileNotFoundError(f"{ann_path} does not exist")
    with open(ann_path) as fh:
        doc = json.load(fh)
    by_image: dict = {}
    for ann in doc.get("annotations", []):
        by_image.setdefault(ann["image_id"], []).append(ann)
    samples, skipped = [], 0
    for record in doc.get("images", []):
        image_path = root / "images" / record["file_name"]
        height, width = record["height"], record["width"]
        annotations = by_image.get(record["id"], [])
        masks, ids = [], []
        for ann in annotations:
            try:
                mask = _rasterize_segmentation(ann["segmentation"], height, width)
            except (ValueError, KeyError, TypeError) as exc:
                log.warning("annotation %s malformed (%s); skipping", ann.get("id"), exc)
                continue
            if not mask.any():
                log.warning("annotation %s rasterized empty; skipping", ann.get("id"))
                continue
            masks.append(mask)
            ids.append(str(ann.get("id", len(ids))))
        if not masks:
            log.warning("no usable annotations for image %s; skipping", record["id"])
            skipped += 1
            continue
        samples.append(TrainingSample(image=_load_image(image_path), masks=masks, ids=ids).validate())
    if skipped:
        log.warning("skipped %d images in %s", skipped, root)
    return samples


def load_dataset(root, format: str = "folder_pngs") -> list:
    if format == "folder_pngs":
        return load_folder_dataset(Path(root))
    if format == "coco_json":
        return load_coco_dataset(Path(root))
    raise ValueError(f"unknown dataset format {format!r}")


def save_folder_dataset(samples: list, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for i, sample in enumerate(samples):
        stem = f"img_{i:05d}"
        rgb = (np.clip(sample.image, 0.0, 1.0) * 255.0).round().astype(np.uint8)
        Image.fromarray(rgb.transpose(1, 2, 0)).save(root / f"{stem}.png")
        for k, mask in enumerate(sample.masks):
            Image.fromarray((mask * 255).astype(np.uint8)).save(root / f"{stem}.mask_{k}.png")


# --- synthetic ambiguity corpus ----------------------------------------------

NESTED_OUTER_ID = "outer"
NESTED_INNER_ID = "inner"


def _ellipse_mask(size: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return (((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0).astype(np.uint8)


def _rect_mask(size: int, y0: int, x0: int, y1: int, x1: int) -> np.ndarray:
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[y0:y1, x0:x1] = 1
    return mask


def _textured_fill(rng: np.random.Generator, size: int, base: np.ndarray) -> np.ndarray:
    noise = rng.normal(0.0, 0.03, size=(3, size, size))
    ramp = np.linspace(-0.04, 0.04, size)
    return np.clip(base[:, None, None] + noise + ramp[None, None, :], 0.0, 1.0)


def synth_ambiguity_sample(size: int, rng: np.random.Generator) -> TrainingSample:
    """One scene with a guaranteed nested pair (rectangle strictly inside an ellipse)."""
    # outer ellipse, off-center inner rectangle
    half_lo = max(2, size // 21)
    half_hi = max(half_lo + 1, size // 13 + 1)
    for _ in range(200):
        cy = rng.uniform(size * 0.40, size * 0.60)
        cx = rng.uniform(size * 0.40, size * 0.60)
        ry = rng.uniform(size * 0.26, size * 0.34)
        rx = rng.uniform(size * 0.26, size * 0.34)
        outer = _ellipse_mask(size, cy, cx, ry, rx)
        half = int(rng.integers(half_lo, half_hi))
        angle = rng.uniform(0, 2 * np.pi)
        icy = int(round(cy + np.sin(angle) * ry * 0.4))
        icx = int(round(cx + np.cos(angle) * rx * 0.4))
        inner = _rect_mask(size, icy - half, icx - half, icy + half + 1, icx + half + 1)
        # inner must sit strictly inside the outer ellipse, away from its boundary
        shrunk = _ellipse_mask(size, cy, cx, ry - 2.0, rx - 2.0)
        if inner.any() and not np.any(inner & ~shrunk):
            break
    else:
        raise RuntimeError("failed to place a nested pair")

    masks = [outer, inner]
    ids = [NESTED_OUTER_ID, NESTED_INNER_ID]
    occupied = outer.copy()
    n_extra = int(rng.integers(0, 3))
    for k in range(n_extra):
        for _ in range(40):
            r = rng.uniform(size * 0.06, size * 0.12)
            by = rng.uniform(r + 1, size - r - 1)
            bx = rng.uniform(r + 1, size - r - 1)
            if rng.random() < 0.5:
                blob = _ellipse_mask(size, by, bx, r, r)
            else:
                half = int(round(r))
                blob = _rect_mask(
                    size, int(by) - half, int(bx) - half, int(by) + half + 1, int(bx) + half + 1
                )
            if blob.any() and not np.any(blob & occupied):
                masks.append(blob)
                ids.append(f"blob{k}")
                occupied |= blob
                break

    palette = rng.permutation(
        np.array(
            [
                [0.85, 0.25, 0.25],
                [0.25, 0.65, 0.85],
                [0.30, 0.80, 0.35],
                [0.90, 0.75, 0.20],
                [0.70, 0.35, 0.85],
                [0.95, 0.55, 0.30],
            ]
        )
    )
    image = _textured_fill(rng, size, np.array([0.12, 0.12, 0.16]))
    # paint outer, then inner over it, then blobs
    order = [0, 1] + list(range(2, len(masks)))
    for slot, mask_index in enumerate(order):
        fill = _textured_fill(rng, size, palette[slot % len(palette)])
        region = masks[mask_index].astype(bool)
        image[:, region] = fill[:, region]
    return TrainingSample(image=image.astype(np.float32), masks=masks, ids=ids).validate()


def synth_ambiguity_dataset(n: int, size: int = 64, seed: int = 0) -> list:
    """Deterministic corpus of nested/adjacent-shape scenes with instance masks."""
    if size < 32:
        raise ValueError("size must be >= 32")
    samples = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, i)))
        samples.append(synth_ambiguity_sample(size, rng))
    return samples
