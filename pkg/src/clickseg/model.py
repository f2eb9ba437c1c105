"""The interactive segmentation network.

Encodes image + click disk map + previous mask, runs N mask queries through
a masked-attention decoder guided by click embeddings, and emits mask
proposals with per-proposal confidence and IoU predictions.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .clicks import Click, click_embeddings, disk_map, grid_position_encoding, validate_clicks
from .errors import ConfigError
from .layers import ConvBackbone, DecoderLayer, Mlp, Neck, PixelDecoder, ViTBackbone

PATCH_SIZE = 4
PYRAMID_STRIDES = (32, 16, 8)  # coarse to fine; mask feature is stride PATCH_SIZE
CHECKPOINT_FORMAT = "clickseg-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    num_queries: int = 7
    dim: int = 64
    backbone: str = "vit"  # "vit" or "conv"
    backbone_dim: int = 64
    backbone_depth: int = 4
    backbone_heads: int = 4
    decoder_layers: int = 9
    decoder_heads: int = 4
    ffn_dim: int = 256
    disk_radius: int = 5
    image_size: int = 64  # nominal working resolution (positional grids sized for it)

    def __post_init__(self):
        if self.num_queries < 1:
            raise ConfigError("num_queries must be >= 1")
        if self.dim % 4 != 0:
            raise ConfigError("dim must be a multiple of 4")
        if self.backbone not in ("vit", "conv"):
            raise ConfigError(f"unknown backbone {self.backbone!r}")


@dataclass
class FeatureBundle:
    pyramid: list  # 3 tensors (D, H_l, W_l) at strides 32, 16, 8
    mask_feature: torch.Tensor  # (D, H/4, W/4)


@dataclass
class Proposals:
    mask_logits: torch.Tensor  # (N, H, W)
    conf: torch.Tensor  # (N,) in [0, 1]
    iou_pred: torch.Tensor  # (N,) in [0, 1]

    def __post_init__(self):
        n = self.mask_logits.shape[0]
        if self.conf.shape[0] != n or self.iou_pred.shape[0] != n:
            raise ValueError("mask_logits, conf and iou_pred must share the leading dim")

    @property
    def num_proposals(self) -> int:
        return self.mask_logits.shape[0]

    def probabilities(self) -> torch.Tensor:
        return self.mask_logits.sigmoid()

    def binary_masks(self, threshold: float = 0.5) -> np.ndarray:
        with torch.no_grad():
            return (self.mask_logits.sigmoid() >= threshold).cpu().numpy().astype(np.uint8)

    def detached(self) -> "Proposals":
        return Proposals(
            mask_logits=self.mask_logits.detach(),
            conf=self.conf.detach(),
            iou_pred=self.iou_pred.detach(),
        )


def select_mask(proposals: Proposals) -> tuple[int, float]:
    """Pick the proposal maximizing iou_pred * conf; ties go to the lowest index."""
    if proposals.num_proposals < 1:
        raise ValueError("cannot select from an empty proposal set")
    with torch.no_grad():
        product = (proposals.iou_pred * proposals.conf).cpu().numpy()
    index = int(np.argmax(product))
    return index, float(product[index])


def _pad_to_multiple(t: torch.Tensor, multiple: int) -> torch.Tensor:
    h, w = t.shape[-2:]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph == 0 and pw == 0:
        return t
    return F.pad(t, (0, pw, 0, ph))


class SegmentationModel(nn.Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        self.patch_embed_image = nn.Conv2d(3, cfg.backbone_dim, PATCH_SIZE, stride=PATCH_SIZE)
        # disk map (2 channels) concatenated with the previous mask (1 channel)
        self.patch_embed_guidance = nn.Conv2d(3, cfg.backbone_dim, PATCH_SIZE, stride=PATCH_SIZE)
        if cfg.backbone == "vit":
            self.backbone = ViTBackbone(
                cfg.backbone_dim, cfg.backbone_depth, cfg.backbone_heads,
                grid_size=cfg.image_size // PATCH_SIZE,
            )
        else:
            self.backbone = ConvBackbone(cfg.backbone_dim, cfg.backbone_depth)
        self.neck = Neck(cfg.backbone_dim, cfg.dim)
        self.pixel_decoder = PixelDecoder(cfg.dim)
        self.query_features = nn.Parameter(torch.empty(cfg.num_queries, cfg.dim))
        nn.init.trunc_normal_(self.query_features, std=0.02)
        self.level_embed = nn.Parameter(torch.zeros(len(PYRAMID_STRIDES), cfg.dim))
        nn.init.trunc_normal_(self.level_embed, std=0.02)
        self.click_embed_positive = nn.Parameter(torch.zeros(cfg.dim))
        self.click_embed_negative = nn.Parameter(torch.zeros(cfg.dim))
        nn.init.trunc_normal_(self.click_embed_positive, std=0.02)
        nn.init.trunc_normal_(self.click_embed_negative, std=0.02)
        self.decoder = nn.ModuleList(
            DecoderLayer(cfg.dim, cfg.decoder_heads, cfg.ffn_dim) for _ in range(cfg.decoder_layers)
        )
        self.mask_mlp = Mlp(cfg.dim, cfg.dim, cfg.dim, 3)
        self.conf_head = Mlp(cfg.dim, cfg.dim, 1, 3)
        self.iou_head = Mlp(cfg.dim, cfg.dim, 1, 3)
        self._pe_cache: dict = {}

    @property
    def dtype(self) -> torch.dtype:
        return self.query_features.dtype

    # --- components -------------------------------------------------------

    def encode_image(
        self,
        image: torch.Tensor,
        disk: torch.Tensor,
        prev_mask: torch.Tensor,
    ) -> FeatureBundle:
        """Fuse image and guidance embeddings, then run backbone, neck, pixel decoder.

        Inputs are (3, H, W), (2, H, W), (1, H, W) with H, W multiples of 32.
        """
        if image.shape[-2:] != disk.shape[-2:] or image.shape[-2:] != prev_mask.shape[-2:]:
            raise ValueError(
                f"spatial sizes disagree: image {tuple(image.shape[-2:])}, "
                f"disk {tuple(disk.shape[-2:])}, prev_mask {tuple(prev_mask.shape[-2:])}"
            )
        if image.shape[0] != 3 or disk.shape[0] != 2 or prev_mask.shape[0] != 1:
            raise ValueError("expected channel counts 3 (image), 2 (disk), 1 (prev mask)")
        guidance = torch.cat([disk, prev_mask], dim=0)
        img_tokens = self.patch_embed_image(image.unsqueeze(0)).squeeze(0)
        guide_tokens = self.patch_embed_guidance(guidance.unsqueeze(0)).squeeze(0)
        fb = self.backbone(img_tokens + guide_tokens)
        branches = self.neck(fb)
        pyramid, mask_feature = self.pixel_decoder(branches)
        return FeatureBundle(pyramid=pyramid, mask_feature=mask_feature)

    def mask_head(self, queries: torch.Tensor, mask_feature: torch.Tensor) -> torch.Tensor:
        """Per-query mask logits via dot product of an MLP'd query with the mask feature."""
        weights = self.mask_mlp(queries)
        return torch.einsum("nd,dhw->nhw", weights, mask_feature)

    def trm_heads(self, queries: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        conf = torch.sigmoid(self.conf_head(queries)).squeeze(-1)
        iou_pred = torch.sigmoid(self.iou_head(queries)).squeeze(-1)
        return conf, iou_pred

    def attention_bias(
        self, mask_logits: torch.Tensor, level_shape: tuple[int, int], num_clicks: int
    ) -> torch.Tensor:
        """Additive attention bias from the previous mask prediction.

        Spatial columns where the resized prediction binarizes to 0 get -inf;
        click columns are never masked.
        """
        n = mask_logits.shape[0]
        resized = F.interpolate(
            mask_logits.unsqueeze(0), size=level_shape, mode="bilinear", align_corners=False
        ).squeeze(0)
        allowed = (resized.sigmoid() >= 0.5).reshape(n, -1)
        spatial = torch.where(
            allowed,
            torch.zeros((), dtype=self.dtype),
            torch.full((), float("-inf"), dtype=self.dtype),
        )
        clicks_block = torch.zeros(n, num_clicks, dtype=self.dtype)
        return torch.cat([spatial, clicks_block], dim=1)

    def _spatial_tokens(self, level: torch.Tensor, level_index: int, padded_hw: tuple[int, int]):
        d, h, w = level.shape
        stride = PYRAMID_STRIDES[level_index]
        key = (h, w, stride, padded_hw, self.dtype)
        pe = self._pe_cache.get(key)
        if pe is None:
            pe = torch.as_tensor(
                grid_position_encoding(h, w, stride, padded_hw[0], padded_hw[1], d),
                dtype=self.dtype,
            )
            self._pe_cache[key] = pe
        tokens = level.reshape(d, h * w).transpose(0, 1)
        return tokens + pe + self.level_embed[level_index]

    def click_tokens(self, clicks: Sequence[Click], height: int, width: int) -> torch.Tensor:
        """Position-aware click embeddings as a (C, D) tensor (differentiable in E_p/E_n)."""
        zeros = np.zeros(self.config.dim)
        pe = torch.as_tensor(
            click_embeddings(clicks, height, width, zeros, zeros), dtype=self.dtype
        )
        polarity = torch.as_tensor([c.polarity for c in clicks], dtype=self.dtype).unsqueeze(1)
        return pe + polarity * self.click_embed_positive + (1 - polarity) * self.click_embed_negative

    # --- full forward -----------------------------------------------------

    def forward(
        self,
        image: np.ndarray | torch.Tensor,
        clicks: Sequence[Click],
        prev_mask: np.ndarray | torch.Tensor | None = None,
    ) -> Proposals:
        image_t = torch.as_tensor(np.asarray(image), dtype=self.dtype)
        if image_t.ndim != 3 or image_t.shape[0] != 3:
            raise ValueError(f"expected image of shape (3, H, W), got {tuple(image_t.shape)}")
        h, w = image_t.shape[-2:]
        if len(clicks) < 1:
            raise ValueError("at least one click is required")
        validate_clicks(clicks, h, w)
        if prev_mask is None:
            prev_t = torch.zeros(1, h, w, dtype=self.dtype)
        else:
            prev_t = torch.as_tensor(np.asarray(prev_mask), dtype=self.dtype)
            if prev_t.ndim == 2:
                prev_t = prev_t.unsqueeze(0)
            if prev_t.shape[-2:] != (h, w):
                raise ValueError("prev_mask size does not match the image")
        disk = torch.as_tensor(
            disk_map(clicks, h, w, self.config.disk_radius).grid, dtype=self.dtype
        )

        image_t = _pad_to_multiple(image_t, PYRAMID_STRIDES[0])
        disk = _pad_to_multiple(disk, PYRAMID_STRIDES[0])
        prev_t = _pad_to_multiple(prev_t, PYRAMID_STRIDES[0])
        hp, wp = image_t.shape[-2:]

        bundle = self.encode_image(image_t, disk, prev_t)
        clicks_t = self.click_tokens(clicks, hp, wp)
        levels = [
            self._spatial_tokens(level, i, (hp, wp)) for i, level in enumerate(bundle.pyramid)
        ]
        level_shapes = [tuple(level.shape[-2:]) for level in bundle.pyramid]

        queries = self.query_features
        lowres_logits = self.mask_head(queries, bundle.mask_feature)
        for layer_index, layer in enumerate(self.decoder):
            level = layer_index % len(PYRAMID_STRIDES)
            bias = self.attention_bias(lowres_logits.detach(), level_shapes[level], len(clicks))
            queries = layer(queries, levels[level], clicks_t, bias)
            lowres_logits = self.mask_head(queries, bundle.mask_feature)

        conf, iou_pred = self.trm_heads(queries)
        full = F.interpolate(
            lowres_logits.unsqueeze(0), size=(hp, wp), mode="bilinear", align_corners=False
        ).squeeze(0)[:, :h, :w]
        return Proposals(mask_logits=full, conf=conf, iou_pred=iou_pred)

    def predict(
        self,
        image: np.ndarray | torch.Tensor,
        clicks: Sequence[Click],
        prev_mask: np.ndarray | torch.Tensor | None = None,
    ) -> Proposals:
        """Inference forward: eval mode, no gradients, detached outputs."""
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                return self(image, clicks, prev_mask).detached()
        finally:
            self.train(was_training)


def save_checkpoint(model: SegmentationModel, path, extra: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(model.config),
        "state_dict": model.state_dict(),
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[SegmentationModel, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a recognized checkpoint")
    model = SegmentationModel(ModelConfig(**payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
