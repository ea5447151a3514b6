"""Fixed invertible latent codec.

Space-to-depth on s x s patches followed by a frozen orthonormal channel
mix.  Exactly invertible and norm-preserving, so reconstruction error is
attributable to the diffusion model alone rather than a lossy autoencoder.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


class BadShape(ValueError):
    pass


class LatentCodec(nn.Module):
    def __init__(self, patch: int = 4, seed: int = 1234):
        super().__init__()
        self.patch = patch
        dim = 3 * patch * patch
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        self.register_buffer("mix", torch.from_numpy(q))  # float64 (dim, dim)

    @property
    def latent_channels(self) -> int:
        return 3 * self.patch * self.patch

    def encode(self, video: torch.Tensor) -> torch.Tensor:
        """(..., 3, H, W) -> (..., 3*s*s, H/s, W/s)."""
        if video.shape[-1] % self.patch or video.shape[-2] % self.patch:
            raise BadShape(f"H, W must be divisible by {self.patch}")
        lead = video.shape[:-3]
        x = video.reshape(-1, *video.shape[-3:])
        z = F.pixel_unshuffle(x, self.patch)
        z = torch.einsum("oc,nchw->nohw", self.mix.to(z.dtype), z)
        return z.reshape(*lead, *z.shape[1:])

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        if latent.shape[-3] != self.latent_channels:
            raise BadShape(f"expected {self.latent_channels} latent channels")
        lead = latent.shape[:-3]
        z = latent.reshape(-1, *latent.shape[-3:])
        x = torch.einsum("oc,nohw->nchw", self.mix.to(z.dtype), z)
        x = F.pixel_shuffle(x, self.patch)
        return x.reshape(*lead, *x.shape[1:])
