"""Multi-view feature fusion into denoiser block outputs.

For frame i of block k, the matched view feature is resized into the box's
projected rect at block resolution, pasted onto a zero canvas, passed
through a per-block zero-initialized 1x1 convolution, windowed by the
downsampled mask, and added to the block output.  Zero initialization makes
the whole path an exact no-op until training moves the convolutions.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .denoiser import DenoiserConfig, ShapeMismatch


def rect_to_span(rect, scale_u: float, scale_v: float, height: int, width: int):
    """Map a full-res rect to an inclusive pixel span at block resolution.

    Returns (r0, c0, r1, c1) clamped to the canvas, or None when the rect
    degenerates to nothing after clamping.
    """
    u0, v0, u1, v1 = (float(x) for x in rect)
    c0 = max(0, math.floor(u0 * scale_u))
    c1 = min(width - 1, math.floor(u1 * scale_u))
    r0 = max(0, math.floor(v0 * scale_v))
    r1 = min(height - 1, math.floor(v1 * scale_v))
    if c1 < c0 or r1 < r0:
        return None
    return r0, c0, r1, c1


def transform_feature(theta: torch.Tensor, rect, block_size, image_size) -> torch.Tensor:
    """Resize theta (C, h, w) into the rect region of a zero (C, Hk, Wk) canvas.

    ``rect`` is (u0, v0, u1, v1) in full-image pixels or None; None or an
    empty clamped span yields the zero canvas (fusion becomes a no-op).
    """
    Hk, Wk = block_size
    H, W = image_size
    canvas = theta.new_zeros(theta.shape[0], Hk, Wk)
    if rect is None:
        return canvas
    span = rect_to_span(rect, Wk / W, Hk / H, Hk, Wk)
    if span is None:
        return canvas
    r0, c0, r1, c1 = span
    resized = F.interpolate(
        theta[None], size=(r1 - r0 + 1, c1 - c0 + 1), mode="bilinear",
        align_corners=False,
    )[0]
    canvas[:, r0 : r1 + 1, c0 : c1 + 1] = resized
    return canvas


class Fusion3D(nn.Module):
    """Zero-convolution gated addition of aligned view features, all 2L blocks."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        self.zero_convs = nn.ModuleList(
            nn.Conv2d(c, c, 1) for c in config.block_channels()
        )
        for conv in self.zero_convs:
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)

    def fuse_block(self, k: int, h: torch.Tensor, ctx) -> torch.Tensor:
        """h (B, N, C, Hk, Wk); ctx is the ConditioningBundle."""
        theta = ctx.theta[k]  # (B, V, C, Hk, Wk)
        B, N = h.shape[:2]
        Hk, Wk = h.shape[-2:]
        if theta.shape[2] != h.shape[2]:
            raise ShapeMismatch("view feature channels do not match block")
        image_size = (self.config.height, self.config.width)
        aligned = []
        for b in range(B):
            rows = []
            for i in range(N):
                rect = None
                if ctx.rect_valid is None or bool(ctx.rect_valid[b, i]):
                    rect = ctx.rects[b, i].tolist()
                rows.append(
                    transform_feature(
                        theta[b, int(ctx.view_idx[b, i])], rect, (Hk, Wk), image_size
                    )
                )
            aligned.append(torch.stack(rows))
        al = torch.stack(aligned)  # (B, N, C, Hk, Wk)
        z = self.zero_convs[k](al.reshape(B * N, *al.shape[2:]))
        z = z.reshape(B, N, *z.shape[1:])
        if ctx.has_ref is not None:
            # No reference (deletion/inpainting): the whole path contributes
            # nothing, including the convolution bias.
            gate = ctx.has_ref.to(h.dtype).reshape(B, 1, 1, 1, 1)
            z = z * gate
        mask = ctx.masks.reshape(B * N, 1, *ctx.masks.shape[-2:])
        mask_block = (F.adaptive_avg_pool2d(mask, (Hk, Wk)) >= 0.5).to(h.dtype)
        mask_block = mask_block.reshape(B, N, 1, Hk, Wk)
        return h + mask_block * z
