"""Building blocks for the segmentation network."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


class Mlp(nn.Module):
    """Stack of linear layers with ReLU between them (no activation on the output)."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, num_layers: int = 3):
        super().__init__()
        dims = [in_dim] + [hidden_dim] * (num_layers - 1) + [out_dim]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x


class Attention(nn.Module):
    """Multi-head attention over unbatched (L, D) token sequences.

    An optional additive bias of shape (Lq, Lk) is applied to the logits of
    every head before the softmax; -inf entries remove a column entirely.
    """

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, query, key, value, attn_bias=None):
        lq, lk = query.shape[0], key.shape[0]
        q = self.q_proj(query).view(lq, self.num_heads, self.head_dim).transpose(0, 1)
        k = self.k_proj(key).view(lk, self.num_heads, self.head_dim).transpose(0, 1)
        v = self.v_proj(value).view(lk, self.num_heads, self.head_dim).transpose(0, 1)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if attn_bias is not None:
            scores = scores + attn_bias.unsqueeze(0)
        weights = scores.softmax(dim=-1)
        out = (weights @ v).transpose(0, 1).reshape(lq, -1)
        return self.out_proj(out)

    def attention_weights(self, query, key, attn_bias=None):
        """Per-head softmax weights, for inspection in tests."""
        lq, lk = query.shape[0], key.shape[0]
        q = self.q_proj(query).view(lq, self.num_heads, self.head_dim).transpose(0, 1)
        k = self.k_proj(key).view(lk, self.num_heads, self.head_dim).transpose(0, 1)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if attn_bias is not None:
            scores = scores + attn_bias.unsqueeze(0)
        return scores.softmax(dim=-1)


class TransformerBlock(nn.Module):
    """Pre-norm ViT encoder block."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h)
        x = x + self.mlp(self.norm2(x))
        return x


class ViTBackbone(nn.Module):
    """Tiny transformer encoder over an already-embedded token grid.

    Learned positional embeddings are sized for `grid_size` tokens per side
    and bilinearly interpolated when the input grid differs.
    """

    def __init__(self, dim: int, depth: int, num_heads: int, grid_size: int):
        super().__init__()
        self.grid_size = grid_size
        self.pos_embed = nn.Parameter(torch.zeros(grid_size * grid_size, dim))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(TransformerBlock(dim, num_heads) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)

    def _pos_embed_for(self, h: int, w: int):
        if h == self.grid_size and w == self.grid_size:
            return self.pos_embed
        pe = self.pos_embed.view(1, self.grid_size, self.grid_size, -1).permute(0, 3, 1, 2)
        pe = F.interpolate(pe, size=(h, w), mode="bilinear", align_corners=False)
        return pe.permute(0, 2, 3, 1).reshape(h * w, -1)

    def forward(self, tokens):
        # tokens: (D, h, w) embedded grid
        d, h, w = tokens.shape
        x = tokens.permute(1, 2, 0).reshape(h * w, d)
        x = x + self._pos_embed_for(h, w)
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return x.reshape(h, w, d).permute(2, 0, 1)


class ConvBackbone(nn.Module):
    """Small residual-conv alternative backbone over the embedded token grid."""

    def __init__(self, dim: int, depth: int):
        super().__init__()
        self.blocks = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(dim, dim, 3, padding=1),
                nn.GroupNorm(8, dim),
                nn.GELU(),
                nn.Conv2d(dim, dim, 3, padding=1),
            )
            for _ in range(depth)
        )
        self.norm = nn.GroupNorm(8, dim)

    def forward(self, tokens):
        x = tokens.unsqueeze(0)
        for block in self.blocks:
            x = x + block(x)
        return self.norm(x).squeeze(0)


class Downsample(nn.Module):
    """Strided 3x3 conv with normalization, halving the spatial size."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.conv = nn.Conv2d(in_dim, out_dim, 3, stride=2, padding=1)
        self.norm = nn.GroupNorm(8, out_dim)

    def forward(self, x):
        return F.gelu(self.norm(self.conv(x)))


class Neck(nn.Module):
    """Four parallel branches mapping backbone features (stride 4) to strides 4/8/16/32."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.branch4 = nn.Conv2d(in_dim, out_dim, 1)
        self.branch8 = Downsample(in_dim, out_dim)
        self.branch16 = nn.Sequential(Downsample(in_dim, out_dim), Downsample(out_dim, out_dim))
        self.branch32 = nn.Sequential(
            Downsample(in_dim, out_dim),
            Downsample(out_dim, out_dim),
            Downsample(out_dim, out_dim),
        )

    def forward(self, fb):
        x = fb.unsqueeze(0)
        return [
            self.branch4(x).squeeze(0),
            self.branch8(x).squeeze(0),
            self.branch16(x).squeeze(0),
            self.branch32(x).squeeze(0),
        ]


class PixelDecoder(nn.Module):
    """FPN-style top-down refinement of the neck pyramid.

    Consumes branches at strides [4, 8, 16, 32]; emits decoder features at
    strides [32, 16, 8] (coarse to fine) plus the stride-4 mask feature.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.laterals = nn.ModuleList(nn.Conv2d(dim, dim, 1) for _ in range(4))
        self.outputs = nn.ModuleList(nn.Conv2d(dim, dim, 3, padding=1) for _ in range(3))
        self.mask_conv = nn.Conv2d(dim, dim, 3, padding=1)

    def forward(self, branches):
        f4, f8, f16, f32 = [b.unsqueeze(0) for b in branches]
        p32 = self.laterals[3](f32)
        p16 = self.laterals[2](f16) + F.interpolate(p32, size=f16.shape[-2:], mode="bilinear", align_corners=False)
        p8 = self.laterals[1](f8) + F.interpolate(p16, size=f8.shape[-2:], mode="bilinear", align_corners=False)
        p4 = self.laterals[0](f4) + F.interpolate(p8, size=f4.shape[-2:], mode="bilinear", align_corners=False)
        pyramid = [
            self.outputs[0](p32).squeeze(0),
            self.outputs[1](p16).squeeze(0),
            self.outputs[2](p8).squeeze(0),
        ]
        mask_feature = self.mask_conv(p4).squeeze(0)
        return pyramid, mask_feature


class DecoderLayer(nn.Module):
    """One decoder stage: masked cross-attention, query self-attention, FFN.

    Queries attend to the concatenation of spatial tokens and click tokens;
    the additive attention bias carries the -inf entries for spatial
    positions masked out by the previous layer's prediction. Click columns
    are never masked.
    """

    def __init__(self, dim: int, num_heads: int, ffn_dim: int):
        super().__init__()
        self.cross_attn = Attention(dim, num_heads)
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.ReLU(), nn.Linear(ffn_dim, dim))
        self.norm3 = nn.LayerNorm(dim)

    def forward(self, queries, spatial_tokens, click_tokens, attn_bias):
        memory = torch.cat([spatial_tokens, click_tokens], dim=0)
        x = self.norm1(queries + self.cross_attn(queries, memory, memory, attn_bias))
        x = self.norm2(x + self.self_attn(x, x, x))
        x = self.norm3(x + self.ffn(x))
        return x

    def cross_attention_weights(self, queries, spatial_tokens, click_tokens, attn_bias):
        memory = torch.cat([spatial_tokens, click_tokens], dim=0)
        return self.cross_attn.attention_weights(queries, memory, attn_bias)
