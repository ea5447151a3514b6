"""Dataset generation and loading.

On-disk layout under a dataset root:

    scenes/<id>/frames/<i>.png   rendered frames (8-bit RGB)
    scenes/<id>/meta.json        scene spec + derived per-frame camera boxes
    clips.jsonl                  one clip record per line with split labels
    bank/index.json              object-bank index
    bank/<entry_id>.png          RGBA crops

Frames on disk are for inspection and the service; training and
evaluation re-render windows from meta.json so ground truth stays exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import geometry as geo
from . import scenes as sc


@dataclass
class DataConfig:
    out_dir: str = "data"
    seed: int = 0
    clip_length: int = 6
    height: int = 64
    width: int = 128
    train_clips: int = 64
    inpaint_clips: int = 12
    val_clips: int = 16
    radius: float = 20.0
    scene_frames: int = 24
    max_scenes: int = 2000

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def save_frame_png(path: Path, frame: np.ndarray) -> None:
    """frame: (3, H, W) float in [0, 1] -> 8-bit RGB PNG."""
    arr = np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr, "RGB").save(path)


def load_frame_png(path: Path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def save_crop_png(path: Path, crop: np.ndarray) -> None:
    """crop: (4, h, w) float RGBA in [0, 1]."""
    arr = np.clip(np.round(crop * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr, "RGBA").save(path)


def load_crop_png(path: Path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGBA"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def write_scene(root: Path, scene_id: str, scene: sc.RenderedScene) -> None:
    sdir = root / "scenes" / scene_id
    (sdir / "frames").mkdir(parents=True, exist_ok=True)
    for i in range(scene.frames.shape[0]):
        save_frame_png(sdir / "frames" / f"{i}.png", scene.frames[i])
    meta = scene.spec.to_dict()
    meta["boxes_camera"] = [
        [box.to_dict() for box in frame_boxes] for frame_boxes in scene.boxes
    ]
    (sdir / "meta.json").write_text(json.dumps(meta, sort_keys=True))


def load_scene_spec(root: Path, scene_id: str) -> sc.SceneSpec:
    meta = json.loads((root / "scenes" / scene_id / "meta.json").read_text())
    return sc.SceneSpec.from_dict(meta)


def list_scene_ids(root: Path) -> list:
    scene_dir = root / "scenes"
    if not scene_dir.is_dir():
        return []
    return sorted(p.name for p in scene_dir.iterdir() if p.is_dir())


def generate_dataset(config: DataConfig) -> dict:
    """Sample scenes until the configured split counts are filled exactly."""
    root = Path(config.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    targets = {"train": config.train_clips, "val": config.val_clips}
    counts = {"train": 0, "val": 0, "inpaint": 0}
    entries: list[sc.ClipIndexEntry] = []
    bank_entries = []
    scene_idx = 0
    while (
        counts["train"] < targets["train"]
        or counts["val"] < targets["val"]
        or counts["inpaint"] < config.inpaint_clips
    ):
        if scene_idx >= config.max_scenes:
            raise RuntimeError("exhausted scene budget before filling splits")
        scene_seed = int(rng.integers(0, 2**31 - 1))
        spec = sc.sample_scene_spec(
            scene_seed,
            num_frames=config.scene_frames,
            height=config.height,
            width=config.width,
        )
        scene = sc.render_scene(spec)
        scene_id = f"scene{scene_idx:05d}"
        scene_used = False
        for obj in range(len(spec.objects)):
            windows = sc.qualifying_windows(scene, obj, config.clip_length, config.radius)
            for start in windows:
                if counts["train"] < targets["train"]:
                    split = "train"
                elif counts["val"] < targets["val"]:
                    split = "val"
                else:
                    continue
                ref = int(rng.integers(config.clip_length))
                clip = sc.build_clip(scene, obj, start, config.clip_length, ref, scene_id)
                clip_id = f"{split}{counts[split]:05d}"
                entries.append(
                    sc.ClipIndexEntry(
                        clip_id=clip_id,
                        scene_id=scene_id,
                        object_index=obj,
                        frame_start=start,
                        length=config.clip_length,
                        ref_frame=ref,
                        split=split,
                        is_inpainting=False,
                        category=spec.objects[obj].category,
                        elevations=[float(e) for e in clip.elevations],
                        azimuths=[float(a) for a in clip.azimuths],
                    )
                )
                counts[split] += 1
                scene_used = True
                if split == "train":
                    bank_entries.extend(
                        sc.build_object_bank([clip], clip_ids=[clip_id])
                    )
        if counts["inpaint"] < config.inpaint_clips:
            start = int(rng.integers(0, config.scene_frames - config.clip_length + 1))
            try:
                inp = sc.make_inpainting_clip(scene, start, config.clip_length, rng, scene_id)
            except sc.NoFreeRegion:
                pass
            else:
                rows = np.nonzero(inp.masks[0, 0].any(axis=1))[0]
                cols = np.nonzero(inp.masks[0, 0].any(axis=0))[0]
                entries.append(
                    sc.ClipIndexEntry(
                        clip_id=f"inpaint{counts['inpaint']:05d}",
                        scene_id=scene_id,
                        object_index=-1,
                        frame_start=start,
                        length=config.clip_length,
                        ref_frame=0,
                        split="inpaint",
                        is_inpainting=True,
                        mask_rect=[int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1])],
                    )
                )
                counts["inpaint"] += 1
                scene_used = True
        if scene_used:
            write_scene(root, scene_id, scene)
            scene_idx += 1
    with open(root / "clips.jsonl", "w") as f:
        for e in entries:
            f.write(e.to_json() + "\n")
    bank_dir = root / "bank"
    bank_dir.mkdir(exist_ok=True)
    index = []
    for e in bank_entries:
        save_crop_png(bank_dir / f"{e.entry_id}.png", e.crop)
        index.append(
            {
                "entry_id": e.entry_id,
                "category": e.category,
                "elevation": e.view.elevation,
                "azimuth": e.view.azimuth,
                "distance": e.distance,
                "clip_id": e.clip_id,
                "frame": e.frame,
            }
        )
    (bank_dir / "index.json").write_text(json.dumps(index, sort_keys=True))
    return counts


class Dataset:
    """Random access to clips; windows are re-rendered from scene meta."""

    def __init__(self, root):
        self.root = Path(root)
        self.entries = []
        with open(self.root / "clips.jsonl") as f:
            for line in f:
                if line.strip():
                    self.entries.append(sc.ClipIndexEntry.from_json(line))
        self._spec_cache: dict[str, sc.SceneSpec] = {}

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]

    def by_id(self, clip_id: str) -> sc.ClipIndexEntry:
        for e in self.entries:
            if e.clip_id == clip_id:
                return e
        raise KeyError(clip_id)

    def scene_spec(self, scene_id: str) -> sc.SceneSpec:
        if scene_id not in self._spec_cache:
            self._spec_cache[scene_id] = load_scene_spec(self.root, scene_id)
        return self._spec_cache[scene_id]

    def render_window(self, entry: sc.ClipIndexEntry) -> sc.RenderedScene:
        spec = self.scene_spec(entry.scene_id)
        frames = range(entry.frame_start, entry.frame_start + entry.length)
        return sc.render_scene(spec, frames=frames)

    def load_clip(
        self,
        entry: sc.ClipIndexEntry,
        mask_rng: np.random.Generator | None = None,
        ref_frame: int | None = None,
    ) -> sc.VideoClip:
        """Materialize a clip; ``mask_rng`` enables training-time mask jitter,
        ``ref_frame`` overrides the stored reference index."""
        window = self.render_window(entry)
        if entry.is_inpainting:
            if mask_rng is None and entry.mask_rect:
                r0, c0, r1, c1 = entry.mask_rect
                rect = geo.Rect2D(float(c0), float(r0), float(c1), float(r1))
                masked, masks = sc.make_masked_video(
                    window.frames, [rect] * entry.length, dilation=0
                )
                clip = sc.VideoClip(
                    video=window.frames.copy(),
                    masked_video=masked,
                    masks=masks,
                    boxes=None,
                    reference=None,
                    ref_frame=0,
                    elevations=np.zeros(entry.length),
                    azimuths=np.zeros(entry.length),
                    is_inpainting=True,
                    scene_id=entry.scene_id,
                    frame_start=entry.frame_start,
                )
            else:
                rng = mask_rng if mask_rng is not None else np.random.default_rng(0)
                clip = sc.make_inpainting_clip(window, 0, entry.length, rng, entry.scene_id)
                clip.frame_start = entry.frame_start
            return clip
        ref = entry.ref_frame if ref_frame is None else ref_frame
        clip = sc.build_clip(
            window, entry.object_index, 0, entry.length, ref, entry.scene_id,
            mask_rng=mask_rng,
        )
        clip.frame_start = entry.frame_start
        return clip

    def load_bank(self) -> list:
        index = json.loads((self.root / "bank" / "index.json").read_text())
        bank = []
        for row in index:
            crop = load_crop_png(self.root / "bank" / f"{row['entry_id']}.png")
            bank.append(
                sc.ObjectBankEntry(
                    entry_id=row["entry_id"],
                    crop=crop,
                    category=row["category"],
                    view=geo.ViewAngles(row["elevation"], row["azimuth"]),
                    distance=row["distance"],
                    clip_id=row["clip_id"],
                    frame=row["frame"],
                )
            )
        return bank
