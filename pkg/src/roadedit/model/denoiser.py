"""Miniature latent video denoiser.

Hierarchical encoder-decoder over video latents with, per block, a spatial
residual unit (per-frame 2D), a temporal residual unit (across frames per
pixel column), and cross-attention against semantic tokens.  Wrapped in
EDM preconditioning so the network always predicts a well-scaled target.

Conditioning enters through three paths: channel-concatenated paste+mask
latents at the input, position features added inside the residual units
via adapters, and aligned multi-view features added to block outputs
through zero convolutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import torch
import torch.nn.functional as F
from torch import nn


class ShapeMismatch(ValueError):
    pass


@dataclass
class DenoiserConfig:
    frames: int = 6
    height: int = 64
    width: int = 128
    patch: int = 4
    channels: tuple = (32, 64, 96)
    token_dim: int = 64
    heads: int = 2
    sigma_data: float = 0.5
    sigma_min: float = 0.02
    sigma_max: float = 80.0
    ref_size: int = 32
    token_patch: int = 8
    norm_groups: int = 8
    emb_dim: int = 128
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if len(self.channels) < 2:
            raise ValueError("need at least 2 block levels")
        if list(self.channels) != sorted(self.channels) or len(set(self.channels)) != len(self.channels):
            raise ValueError("channels must be strictly increasing")

    @property
    def levels(self) -> int:
        return len(self.channels)

    @property
    def latent_channels(self) -> int:
        return 3 * self.patch * self.patch

    @property
    def latent_size(self) -> tuple:
        return (self.height // self.patch, self.width // self.patch)

    def level_size(self, level: int) -> tuple:
        h, w = self.latent_size
        return (h // (1 << level), w // (1 << level))

    def block_sizes(self) -> list:
        """Spatial size of each of the 2L blocks (encoder then decoder)."""
        L = self.levels
        return [self.level_size(k if k < L else 2 * L - 1 - k) for k in range(2 * L)]

    def block_channels(self) -> list:
        L = self.levels
        return [self.channels[k if k < L else 2 * L - 1 - k] for k in range(2 * L)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class ConditioningBundle:
    """Everything the denoiser consumes besides the noisy latent."""

    c_concat: torch.Tensor  # (B, N, C_lat + 1, h, w)
    tokens: torch.Tensor  # (B, T, token_dim)
    ref_view: torch.Tensor  # (B, 2) reference (elevation, azimuth) radians
    pose_feats: list | None = None  # per level (B, N, C_j, H_j, W_j)
    theta: list | None = None  # per block (B, V, C_k, H_k, W_k)
    view_idx: torch.Tensor | None = None  # (B, N) long
    rects: torch.Tensor | None = None  # (B, N, 4) full-res (u0, v0, u1, v1)
    rect_valid: torch.Tensor | None = None  # (B, N) bool
    masks: torch.Tensor | None = None  # (B, N, 1, H, W) float
    has_ref: torch.Tensor | None = None  # (B,) bool; False suppresses fusion


def fourier_features(x: torch.Tensor, dim: int) -> torch.Tensor:
    """(B,) -> (B, dim) sin/cos features at log-spaced frequencies."""
    half = dim // 2
    freqs = torch.exp(
        torch.linspace(0.0, math.log(1000.0), half, dtype=x.dtype, device=x.device)
    )
    ang = x[:, None] * freqs[None]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


class SpatialResBlock(nn.Module):
    """Per-frame 2D residual unit with the y-embedding added mid-branch."""

    def __init__(self, ch: int, emb_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, ch)
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, ch)
        self.norm2 = nn.GroupNorm(groups, ch)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class TemporalResBlock(nn.Module):
    """Residual unit convolving across frames; operates on (B, C, N, H, W)."""

    def __init__(self, ch: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, ch)
        self.conv1 = nn.Conv3d(ch, ch, (3, 1, 1), padding=(1, 0, 0))
        self.norm2 = nn.GroupNorm(groups, ch)
        self.conv2 = nn.Conv3d(ch, ch, (3, 1, 1), padding=(1, 0, 0))

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(v)))
        h = self.conv2(F.silu(self.norm2(h)))
        return v + h


class CrossAttention(nn.Module):
    """Multi-head attention from spatial positions to the token sequence."""

    def __init__(self, ch: int, token_dim: int, heads: int):
        super().__init__()
        if ch % heads:
            raise ValueError("channels must divide evenly into heads")
        self.heads = heads
        self.norm = nn.LayerNorm(ch)
        self.to_q = nn.Linear(ch, ch)
        self.to_k = nn.Linear(token_dim, ch)
        self.to_v = nn.Linear(token_dim, ch)
        self.proj = nn.Linear(ch, ch)

    def forward(self, x: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        """x (BN, C, H, W), tokens (BN, T, D)."""
        bn, c, h, w = x.shape
        q = self.norm(x.reshape(bn, c, h * w).transpose(1, 2))
        q = self.to_q(q)
        k = self.to_k(tokens)
        v = self.to_v(tokens)

        def split(t):
            return t.reshape(bn, -1, self.heads, c // self.heads).transpose(1, 2)

        attn = F.scaled_dot_product_attention(split(q), split(k), split(v))
        attn = attn.transpose(1, 2).reshape(bn, h * w, c)
        out = self.proj(attn)
        return x + out.transpose(1, 2).reshape(bn, c, h, w)


class UnitBlock(nn.Module):
    """One denoiser block: spatial res, temporal res, cross-attention."""

    def __init__(self, ch: int, emb_dim: int, token_dim: int, heads: int, groups: int):
        super().__init__()
        self.spatial = SpatialResBlock(ch, emb_dim, groups)
        self.temporal = TemporalResBlock(ch, groups)
        self.attn = CrossAttention(ch, token_dim, heads)

    def forward(self, h, emb, tokens, pos2d=None, pos3d=None):
        """h (B, N, C, H, W); pos2d/pos3d are adapter outputs, already shaped
        like the spatial ((B*N, C, H, W)) and temporal ((B, C, N, H, W))
        pre-activations they are added to."""
        B, N = h.shape[:2]
        x = h.reshape(B * N, *h.shape[2:])
        if pos2d is not None:
            x = x + pos2d
        x = self.spatial(x, emb.repeat_interleave(N, dim=0))
        v = x.reshape(B, N, *x.shape[1:]).permute(0, 2, 1, 3, 4)
        if pos3d is not None:
            v = v + pos3d
        v = self.temporal(v)
        x = v.permute(0, 2, 1, 3, 4).reshape(B * N, *h.shape[2:])
        x = self.attn(x, tokens.repeat_interleave(N, dim=0))
        return x.reshape(B, N, *h.shape[2:])


class DenoiserNet(nn.Module):
    """The hierarchical network F inside the EDM preconditioner."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        ch = config.channels
        L = config.levels
        c_in = 2 * config.latent_channels + 1
        self.conv_in = nn.Conv2d(c_in, ch[0], 3, padding=1)
        mk = lambda c: UnitBlock(c, config.emb_dim, config.token_dim, config.heads,
                                 config.norm_groups)
        self.enc_blocks = nn.ModuleList(mk(ch[j]) for j in range(L))
        self.downs = nn.ModuleList(
            nn.Conv2d(ch[j], ch[j + 1], 3, stride=2, padding=1) for j in range(L - 1)
        )
        self.ups = nn.ModuleList(
            nn.Conv2d(ch[j + 1], ch[j], 3, padding=1) for j in range(L - 1)
        )
        self.merges = nn.ModuleList(nn.Conv2d(2 * ch[j], ch[j], 1) for j in range(L))
        self.dec_blocks = nn.ModuleList(mk(ch[j]) for j in range(L))
        self.emb_mlp = nn.Sequential(
            nn.Linear(48, config.emb_dim), nn.SiLU(),
            nn.Linear(config.emb_dim, config.emb_dim),
        )
        self.out_norm = nn.GroupNorm(config.norm_groups, ch[0])
        self.out_conv = nn.Conv2d(ch[0], config.latent_channels, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def forward(self, x, emb_in, tokens, adapters=None, pose_feats=None,
                fusion=None, fusion_ctx=None):
        """x (B, N, C_in, h, w) -> (B, N, C_lat, h, w)."""
        cfg = self.config
        L = cfg.levels
        B, N = x.shape[:2]
        emb = self.emb_mlp(emb_in)

        def per_frame(conv, t):
            out = conv(t.reshape(B * N, *t.shape[2:]))
            return out.reshape(B, N, *out.shape[1:])

        def block_inputs(k):
            if pose_feats is None or adapters is None:
                return None, None
            level = k if k < L else 2 * L - 1 - k
            f = pose_feats[level]
            return adapters.adapt2d(k, f), adapters.adapt3d(k, f)

        h = per_frame(self.conv_in, x)
        skips = []
        for j in range(L):
            pos2d, pos3d = block_inputs(j)
            h = self.enc_blocks[j](h, emb, tokens, pos2d, pos3d)
            if fusion is not None and fusion_ctx is not None:
                h = fusion.fuse_block(j, h, fusion_ctx)
            skips.append(h)
            if j < L - 1:
                h = per_frame(self.downs[j], h)
        for j in reversed(range(L)):
            k = 2 * L - 1 - j
            if j < L - 1:
                up = F.interpolate(
                    h.reshape(B * N, *h.shape[2:]), scale_factor=2, mode="nearest"
                )
                h = per_frame(self.ups[j], up.reshape(B, N, *up.shape[1:]))
            h = per_frame(self.merges[j], torch.cat([h, skips[j]], dim=2))
            pos2d, pos3d = block_inputs(k)
            h = self.dec_blocks[j](h, emb, tokens, pos2d, pos3d)
            if fusion is not None and fusion_ctx is not None:
                h = fusion.fuse_block(k, h, fusion_ctx)
        flat = h.reshape(B * N, *h.shape[2:])
        out = self.out_conv(F.silu(self.out_norm(flat)))
        return out.reshape(B, N, *out.shape[1:])
