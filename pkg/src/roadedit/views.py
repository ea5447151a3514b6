"""Frozen multi-view feature provider over a fixed azimuth fan.

Stands in for a pretrained orbital novel-view model: a seeded, never-trained
convolutional pyramid over the reference crop, modulated per view by a
sinusoidal embedding of (azimuth, elevation).  Features are emitted at the
denoiser's block resolutions so the fusion module can align and add them.

The azimuth fan is dense near 0 because viewpoint changes within a clip are
small; each video frame is matched to the fan entry nearest its azimuth
offset from the reference view.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

AZIMUTH_SET_DEG = (
    0, 3, 6, 9, 12, 16, 23, 30, 45, 90, 135, 225, 270,
    315, 330, 337, 344, 348, 351, 354, 357,
)


def wrapped_deg(a: float) -> float:
    """Wrap degrees to [0, 360)."""
    return float(a % 360.0)


def deg_distance(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def match_frame(azimuth_deg: float, angles=AZIMUTH_SET_DEG) -> int:
    """Index of the fan entry at minimum wrapped distance; ties -> lower index."""
    best, best_d = 0, float("inf")
    for j, ang in enumerate(angles):
        d = deg_distance(azimuth_deg, ang)
        if d < best_d:
            best, best_d = j, d
    return best


def mean_elevation(elevations) -> float:
    e = np.asarray(elevations, dtype=np.float64)
    if e.size == 0:
        raise ValueError("need at least one elevation")
    return float(e.mean())


def view_embedding(azimuth_deg: torch.Tensor, elevation: torch.Tensor) -> torch.Tensor:
    """(V,), (V,) -> (V, 8) sinusoidal features of the view angles."""
    az = azimuth_deg * (math.pi / 180.0)
    feats = [torch.sin(az), torch.cos(az), torch.sin(2 * az), torch.cos(2 * az),
             torch.sin(elevation), torch.cos(elevation),
             torch.sin(2 * elevation), torch.cos(2 * elevation)]
    return torch.stack(feats, dim=-1)


class ViewFeatureProvider(nn.Module):
    """Frozen per-view feature pyramid matched to the denoiser block shapes."""

    def __init__(self, channels, block_sizes, ref_size: int = 32, seed: int = 77):
        """channels: per-level widths; block_sizes: (H_k, W_k) for all 2L blocks."""
        super().__init__()
        self.levels = len(channels)
        self.block_sizes = [tuple(s) for s in block_sizes]
        self.ref_size = ref_size
        self.azimuths = torch.tensor(AZIMUTH_SET_DEG, dtype=torch.float32)
        convs = []
        films = []
        prev = 3
        for j, ch in enumerate(channels):
            convs.append(nn.Conv2d(prev, ch, 3, stride=1 if j == 0 else 2, padding=1))
            films.append(nn.Linear(8, 2 * ch))
            prev = ch
        self.convs = nn.ModuleList(convs)
        self.films = nn.ModuleList(films)
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in self.parameters():
                fan_in = p.shape[-1] if p.ndim <= 2 else int(np.prod(p.shape[1:]))
                p.normal_(0.0, 1.0 / math.sqrt(max(fan_in, 1)), generator=g)
        for p in self.parameters():
            p.requires_grad_(False)

    @property
    def view_count(self) -> int:
        return len(AZIMUTH_SET_DEG)

    def forward(self, ref: torch.Tensor, elevation_mean: torch.Tensor):
        """ref (B, 3, h, w), elevation_mean (B,) -> per-block list of
        (B, V, C_k, H_k, W_k) feature maps for the V fan views."""
        B = ref.shape[0]
        x = F.interpolate(ref, size=(self.ref_size, self.ref_size), mode="bilinear",
                          align_corners=False)
        levels = []
        h = x
        for conv in self.convs:
            h = F.silu(conv(h))
            levels.append(h)
        az = self.azimuths.to(ref.dtype)
        V = self.view_count
        per_level_views = []
        for j, feat in enumerate(levels):
            # rows ordered sample-major: (b0,v0), (b0,v1), ..., (b1,v0), ...
            emb = view_embedding(
                az.repeat(B), elevation_mean.repeat_interleave(V).to(ref.dtype)
            )
            gamma, beta = self.films[j](emb).chunk(2, dim=-1)
            f = feat.repeat_interleave(V, dim=0)
            f = f * (1.0 + gamma[..., None, None]) + beta[..., None, None]
            per_level_views.append(f.reshape(B, V, *feat.shape[1:]))
        L = self.levels
        out = []
        for k, size in enumerate(self.block_sizes):
            level = k if k < L else 2 * L - 1 - k
            f = per_level_views[level]
            f = f.reshape(B * V, *f.shape[2:])
            f = F.interpolate(f, size=size, mode="bilinear", align_corners=False)
            out.append(f.reshape(B, V, f.shape[1], *size))
        return out
