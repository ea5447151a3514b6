"""Semantic conditioning tokens.

A frozen patch-embedding encoder (seeded, never trained) stands in for a
pretrained image encoder.  Token sequences are the concatenation of scene
tokens from the pasted reference frame followed by reference-image tokens;
for edits without a reference the reference slots are filled by a single
trainable null embedding vector.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


class SemanticTokens(nn.Module):
    def __init__(self, token_dim: int, token_patch: int, ref_size: int,
                 frame_size, seed: int = 55):
        super().__init__()
        self.token_dim = token_dim
        self.token_patch = token_patch
        self.ref_size = ref_size
        self.frame_size = tuple(frame_size)
        self.embed = nn.Conv2d(3, token_dim, token_patch, stride=token_patch)
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            fan_in = 3 * token_patch * token_patch
            self.embed.weight.normal_(0.0, 1.0 / math.sqrt(fan_in), generator=g)
            self.embed.bias.zero_()
        self.embed.weight.requires_grad_(False)
        self.embed.bias.requires_grad_(False)
        self.null_embedding = nn.Parameter(torch.zeros(token_dim))
        ht, wt = (s // token_patch for s in self.frame_size)
        rt = ref_size // token_patch
        self.register_buffer("pos_scene", _grid_pos(ht, wt, token_dim, g))
        self.register_buffer("pos_ref", _grid_pos(rt, rt, token_dim, g))

    @property
    def scene_token_count(self) -> int:
        return self.pos_scene.shape[0]

    @property
    def ref_token_count(self) -> int:
        return self.pos_ref.shape[0]

    def _encode(self, image: torch.Tensor, pos: torch.Tensor) -> torch.Tensor:
        t = self.embed(image)
        t = t.flatten(2).transpose(1, 2)  # (B, T, D)
        return t + pos.to(t.dtype)

    def forward(self, scene_frame: torch.Tensor, refs: torch.Tensor,
                deletion: torch.Tensor) -> torch.Tensor:
        """scene_frame (B, 3, H, W): the pasted reference frame of the masked
        video; refs (B, 3, r, r): reference crops composited on gray;
        deletion (B,) bool: replace reference tokens with the null embedding.

        Returns (B, T_scene + T_ref, token_dim), scene tokens first.
        """
        scene_tokens = self._encode(scene_frame, self.pos_scene)
        ref_tokens = self._encode(
            F.interpolate(refs, size=(self.ref_size, self.ref_size),
                          mode="bilinear", align_corners=False),
            self.pos_ref,
        )
        null = self.null_embedding.to(ref_tokens.dtype).expand_as(ref_tokens)
        gate = deletion.reshape(-1, 1, 1).to(ref_tokens.dtype)
        ref_tokens = ref_tokens * (1.0 - gate) + null * gate
        return torch.cat([scene_tokens, ref_tokens], dim=1)


def _grid_pos(h: int, w: int, dim: int, g: torch.Generator) -> torch.Tensor:
    """Fixed random positional codes for an h x w token grid."""
    return torch.randn(h * w, dim, generator=g) * 0.02
