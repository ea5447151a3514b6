"""Position controller: pose-image encoder and per-block injection adapters.

The encoder turns six-channel pose images into one feature map per level,
mirroring the denoiser encoder resolutions.  Each of the 2L denoiser blocks
owns a 2D and a 3D adapter (activation -> channel layer norm -> zero-init
convolution) whose outputs are added to the spatial and temporal residual
pre-activations; decoder block k reuses the encoder-level feature 2L-k-1.

All biases in the encoder start at zero so an all-zero pose image produces
exactly zero features; the adapters' output convolutions start at zero so
injection is an exact no-op at initialization.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .denoiser import DenoiserConfig, ShapeMismatch


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel axis of (B, C, *spatial) maps."""

    def __init__(self, ch: int, eps: float = 1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(ch))
        self.bias = nn.Parameter(torch.zeros(ch))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        x = (x - mean) / torch.sqrt(var + self.eps)
        shape = (1, -1) + (1,) * (x.ndim - 2)
        return x * self.weight.reshape(shape) + self.bias.reshape(shape)


class _EncoderStage(nn.Module):
    def __init__(self, ch: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, ch)
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, ch)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class PoseEncoder(nn.Module):
    """Six-channel pose video -> per-level features matching the denoiser."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        ch = config.channels
        self.stem = nn.Conv2d(6, ch[0], config.patch, stride=config.patch)
        self.stages = nn.ModuleList(
            _EncoderStage(c, config.norm_groups) for c in ch
        )
        self.downs = nn.ModuleList(
            nn.Conv2d(ch[j], ch[j + 1], 3, stride=2, padding=1)
            for j in range(len(ch) - 1)
        )
        for m in self.modules():
            if isinstance(m, nn.Conv2d) and m.bias is not None:
                nn.init.zeros_(m.bias)

    def forward(self, pose: torch.Tensor) -> list:
        """pose (B, N, 6, H, W) -> [ (B, N, C_j, H_j, W_j) per level ]."""
        if pose.shape[2] != 6:
            raise ShapeMismatch("pose images must have 6 channels")
        if pose.shape[-2:] != (self.config.height, self.config.width):
            raise ShapeMismatch(
                f"pose image size {tuple(pose.shape[-2:])} does not match "
                f"({self.config.height}, {self.config.width})"
            )
        B, N = pose.shape[:2]
        h = self.stem(pose.reshape(B * N, *pose.shape[2:]))
        feats = []
        for j, stage in enumerate(self.stages):
            h = stage(h)
            feats.append(h.reshape(B, N, *h.shape[1:]))
            if j < len(self.downs):
                h = self.downs[j](h)
        return feats


class _Adapter2d(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.norm = ChannelLayerNorm(ch)
        self.conv = nn.Conv2d(ch, ch, 3, padding=1)
        nn.init.zeros_(self.conv.weight)
        nn.init.zeros_(self.conv.bias)

    def forward(self, x):
        return self.conv(self.norm(F.silu(x)))


class _Adapter3d(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.norm = ChannelLayerNorm(ch)
        self.conv = nn.Conv3d(ch, ch, (3, 1, 1), padding=(1, 0, 0))
        nn.init.zeros_(self.conv.weight)
        nn.init.zeros_(self.conv.bias)

    def forward(self, x):
        return self.conv(self.norm(F.silu(x)))


def mirror_level(k: int, levels: int) -> int:
    """Feature level consumed by block k: encoder k uses k, decoder mirrors."""
    return k if k < levels else 2 * levels - k - 1


class PositionAdapters(nn.Module):
    """2L pairs of injection adapters, one pair per denoiser block."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        chans = config.block_channels()
        self.adapters2d = nn.ModuleList(_Adapter2d(c) for c in chans)
        self.adapters3d = nn.ModuleList(_Adapter3d(c) for c in chans)

    def adapt2d(self, k: int, f: torch.Tensor) -> torch.Tensor:
        """f (B, N, C, H, W) -> addition for the spatial pre-activation."""
        B, N = f.shape[:2]
        return self.adapters2d[k](f.reshape(B * N, *f.shape[2:]))

    def adapt3d(self, k: int, f: torch.Tensor) -> torch.Tensor:
        """Swap the frame and channel axes, then adapt for the temporal path."""
        v = f.permute(0, 2, 1, 3, 4)
        return self.adapters3d[k](v)
