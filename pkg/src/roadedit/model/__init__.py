"""Model assembly: codec + tokens + denoiser + controller + fusion.

``EditModel`` owns every learned or frozen component and exposes the two
entry points the rest of the package uses: ``denoise`` (EDM-preconditioned
x0 prediction) and ``sample`` (deterministic ODE sampler plus compositing).
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from ..codec import LatentCodec
from ..views import ViewFeatureProvider, match_frame
from .denoiser import ConditioningBundle, DenoiserConfig, DenoiserNet, ShapeMismatch, fourier_features
from .fusion import Fusion3D
from .position import PoseEncoder, PositionAdapters, mirror_level
from .tokens import SemanticTokens

CHECKPOINT_VERSION = 1


class EditModel(nn.Module):
    def __init__(self, config: DenoiserConfig, position_mode: str = "depth",
                 with_fusion: bool = False):
        super().__init__()
        if position_mode not in ("depth", "edges", "none"):
            raise ValueError(f"unknown position mode {position_mode!r}")
        self.config = config
        self.position_mode = position_mode
        self.codec = LatentCodec(config.patch, seed=config.seed + 1)
        self.tokens = SemanticTokens(
            config.token_dim, config.token_patch, config.ref_size,
            (config.height, config.width), seed=config.seed + 2,
        )
        self.net = DenoiserNet(config)
        if position_mode != "none":
            self.pose_encoder = PoseEncoder(config)
            self.adapters = PositionAdapters(config)
        else:
            self.pose_encoder = None
            self.adapters = None
        self.fusion = None
        self.view_provider = None
        if with_fusion:
            self.enable_fusion()

    def enable_fusion(self) -> None:
        """Attach the fusion stage: fresh zero convolutions + frozen provider."""
        if self.fusion is None:
            self.fusion = Fusion3D(self.config)
            self.view_provider = ViewFeatureProvider(
                self.config.channels, self.config.block_sizes(),
                self.config.ref_size, seed=self.config.seed + 3,
            )

    @property
    def fusion_enabled(self) -> bool:
        return self.fusion is not None

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    # -- conditioning ------------------------------------------------------

    def build_bundle(
        self,
        pasted: torch.Tensor,  # (B, N, 3, H, W) masked video with paste applied
        masks: torch.Tensor,  # (B, N, 1, H, W) float or uint8
        paste_frames: torch.Tensor,  # (B,) long, index of the pasted frame
        refs: torch.Tensor,  # (B, 3, r, r) reference crops on gray, zeros if none
        ref_views: torch.Tensor,  # (B, 2) reference (elevation, azimuth) radians
        deletion: torch.Tensor,  # (B,) bool, True -> null reference tokens
        pose_images: torch.Tensor | None = None,  # (B, N, 6, H, W)
        azimuths: torch.Tensor | None = None,  # (B, N) radians, for view matching
        mean_elevations: torch.Tensor | None = None,  # (B,)
        rects: torch.Tensor | None = None,  # (B, N, 4) full-res projected rects
        rect_valid: torch.Tensor | None = None,  # (B, N) bool
        use_fusion: bool = True,
    ) -> ConditioningBundle:
        B, N = pasted.shape[:2]
        masks = masks.to(pasted.dtype)
        z_paste = self.codec.encode(pasted)
        h, w = self.config.latent_size
        m_lat = F.adaptive_avg_pool2d(masks.reshape(B * N, 1, *masks.shape[-2:]), (h, w))
        m_lat = (m_lat >= 0.5).to(pasted.dtype).reshape(B, N, 1, h, w)
        c_concat = torch.cat([z_paste, m_lat], dim=2)
        scene_frames = pasted[torch.arange(B), paste_frames]
        tokens = self.tokens(scene_frames, refs, deletion)
        bundle = ConditioningBundle(
            c_concat=c_concat, tokens=tokens, ref_view=ref_views, masks=masks,
        )
        if self.position_mode != "none" and pose_images is not None:
            bundle.pose_feats = self.pose_encoder(pose_images.to(pasted.dtype))
        if self.fusion_enabled and use_fusion and azimuths is not None:
            has_ref = ~deletion
            bundle.has_ref = has_ref
            rel = azimuths - ref_views[:, 1:2]
            rel_deg = torch.rad2deg(rel)
            idx = torch.tensor(
                [[match_frame(float(rel_deg[b, i])) for i in range(N)] for b in range(B)],
                dtype=torch.long,
            )
            bundle.view_idx = idx
            bundle.rects = rects
            bundle.rect_valid = rect_valid
            if mean_elevations is None:
                mean_elevations = torch.zeros(B, dtype=pasted.dtype)
            bundle.theta = self.view_provider(refs, mean_elevations)
        return bundle

    # -- denoising ---------------------------------------------------------

    def denoise(self, z_noisy: torch.Tensor, sigma: torch.Tensor,
                bundle: ConditioningBundle) -> torch.Tensor:
        """EDM-preconditioned x0 estimate; z (B, N, C_lat, h, w), sigma (B,)."""
        if z_noisy.shape[2] != self.config.latent_channels:
            raise ShapeMismatch("latent channel mismatch")
        if z_noisy.shape[:2] != bundle.c_concat.shape[:2]:
            raise ShapeMismatch("bundle batch/frames mismatch")
        sd = self.config.sigma_data
        sigma = sigma.to(z_noisy.dtype).reshape(-1)
        s2 = sigma**2 + sd**2
        c_skip = (sd**2 / s2).reshape(-1, 1, 1, 1, 1)
        c_out = (sigma * sd / s2.sqrt()).reshape(-1, 1, 1, 1, 1)
        c_in = (1.0 / s2.sqrt()).reshape(-1, 1, 1, 1, 1)
        c_noise = sigma.log() / 4.0
        x = torch.cat([z_noisy, bundle.c_concat], dim=2) * c_in
        emb_in = torch.cat(
            [
                fourier_features(c_noise, 32),
                fourier_features(bundle.ref_view[:, 0].to(z_noisy.dtype), 8),
                fourier_features(bundle.ref_view[:, 1].to(z_noisy.dtype), 8),
            ],
            dim=-1,
        )
        fusion = self.fusion if (self.fusion_enabled and bundle.theta is not None) else None
        raw = self.net(
            x, emb_in, bundle.tokens,
            adapters=self.adapters if bundle.pose_feats is not None else None,
            pose_feats=bundle.pose_feats,
            fusion=fusion,
            fusion_ctx=bundle if fusion is not None else None,
        )
        return c_skip * z_noisy + c_out * raw

    # -- sampling ----------------------------------------------------------

    def sigma_schedule(self, steps: int) -> torch.Tensor:
        cfg = self.config
        sig = torch.exp(
            torch.linspace(math.log(cfg.sigma_max), math.log(cfg.sigma_min), steps)
        )
        return torch.cat([sig, sig.new_zeros(1)])

    @torch.no_grad()
    def sample(
        self,
        bundle: ConditioningBundle,
        video: torch.Tensor,  # (B, N, 3, H, W) original frames for compositing
        masks: torch.Tensor,  # (B, N, 1, H, W)
        steps: int = 25,
        seed: int = 0,
        progress=None,
    ) -> torch.Tensor:
        """Deterministic ODE sampling; only masked pixels are replaced."""
        if steps < 1:
            raise ValueError("steps must be >= 1")
        g = torch.Generator().manual_seed(seed)
        z_shape = self.codec.encode(video).shape
        sigmas = self.sigma_schedule(steps).to(video.dtype)
        z = torch.randn(z_shape, generator=g, dtype=video.dtype) * sigmas[0]
        B = video.shape[0]
        for i in range(steps):
            s, s_next = sigmas[i], sigmas[i + 1]
            den = self.denoise(z, s.expand(B), bundle)
            z = z + (s_next - s) * (z - den) / s
            if progress is not None:
                progress(i + 1, steps)
        out = self.codec.decode(z).clamp(0.0, 1.0)
        m = masks.to(video.dtype)
        return video * (1.0 - m) + out * m


def save_checkpoint(path, model: EditModel, extra: dict | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "position_mode": model.position_mode,
        "with_fusion": model.fusion_enabled,
        "state": model.state_dict(),
    }
    if extra:
        payload["extra"] = extra
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    sidecar = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "position_mode": model.position_mode,
        "with_fusion": model.fusion_enabled,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_checkpoint(path, with_fusion: bool | None = None):
    """Rebuild the model; ``with_fusion=True`` grafts fresh zero convolutions
    onto a checkpoint trained without fusion (stage-1 -> stage-2 handoff)."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError("unsupported checkpoint version")
    config = DenoiserConfig.from_dict(payload["config"])
    saved_fusion = payload["with_fusion"]
    model = EditModel(config, payload["position_mode"], with_fusion=saved_fusion)
    model.load_state_dict(payload["state"])
    if with_fusion and not saved_fusion:
        model.enable_fusion()
    return model, payload.get("extra", {})
