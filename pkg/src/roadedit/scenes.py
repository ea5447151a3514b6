"""Synthetic driving scenes: cuboid traffic on a checkered ground plane.

The renderer is deliberately plain (flat shading, z-buffer, no lighting)
so that ground truth is exact: per-pixel instance masks, per-frame boxes
in camera coordinates, and a color palette the oracle detector can key on.

World frame matches the camera frame orientation (x right, y down,
z forward) with the ground plane at y = 0 and the camera mounted at
y = -camera_height.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from ._kernels import raster_triangles

# Base colors are saturated and, multiplied by any face shade, stay far
# from the ground tones, sky, and the 0.5 mask fill; the oracle detector
# classifies pixels by nearest (color x shade) product.
PALETTE = (
    (0.85, 0.12, 0.12),
    (0.15, 0.25, 0.85),
    (0.85, 0.75, 0.10),
    (0.80, 0.15, 0.80),
    (0.10, 0.75, 0.80),
    (0.90, 0.45, 0.10),
    (0.10, 0.70, 0.20),
    (0.45, 0.15, 0.75),
)

# front, back, left, right, top, bottom; distinct so the detector can tell
# which face a pixel belongs to (bottom is never visible from above).
FACE_SHADE = (1.0, 0.52, 0.76, 0.64, 0.88, 0.40)

GROUND_TONES = ((0.32, 0.32, 0.32), (0.42, 0.42, 0.42))
GROUND_TILE = 2.0
SKY_COLOR = (0.56, 0.70, 0.85)
MASK_FILL = 0.5

CATEGORY_SIZES = {
    "car": (4.5, 1.9, 1.6),
    "bus": (10.0, 2.9, 3.2),
    "truck": (7.0, 2.5, 2.8),
    "trailer": (9.0, 2.6, 3.0),
    "cone": (0.35, 0.35, 0.85),
}
VEHICLE_CATEGORIES = ("car", "bus", "truck", "trailer")

MIN_VISIBLE_PIXELS = 20


class NoFreeRegion(RuntimeError):
    """Could not place a mask in an object-free region."""


@dataclass
class ObjectSpec:
    category: str
    size: tuple  # (length, width, height) meters
    color: tuple  # RGB in [0, 1]
    centers: np.ndarray  # (num_frames, 3) world coordinates
    yaws: np.ndarray  # (num_frames,) world heading

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "size": list(self.size),
            "color": list(self.color),
            "centers": np.asarray(self.centers).tolist(),
            "yaws": np.asarray(self.yaws).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectSpec":
        return cls(
            d["category"],
            tuple(d["size"]),
            tuple(d["color"]),
            np.array(d["centers"], dtype=np.float64),
            np.array(d["yaws"], dtype=np.float64),
        )


@dataclass
class SceneSpec:
    seed: int
    num_frames: int
    height: int
    width: int
    camera_height: float
    intrinsics: geo.CameraIntrinsics
    camera_poses: list  # per-frame CameraPose
    objects: list  # ObjectSpec

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "num_frames": self.num_frames,
            "height": self.height,
            "width": self.width,
            "camera_height": self.camera_height,
            "intrinsics": self.intrinsics.to_dict(),
            "camera_poses": [p.to_dict() for p in self.camera_poses],
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            seed=int(d["seed"]),
            num_frames=int(d["num_frames"]),
            height=int(d["height"]),
            width=int(d["width"]),
            camera_height=float(d["camera_height"]),
            intrinsics=geo.CameraIntrinsics.from_dict(d["intrinsics"]),
            camera_poses=[geo.CameraPose.from_dict(p) for p in d["camera_poses"]],
            objects=[ObjectSpec.from_dict(o) for o in d["objects"]],
        )


@dataclass
class RenderedScene:
    spec: SceneSpec
    frames: np.ndarray  # (F, 3, H, W) float32 in [0, 1]
    boxes: list  # [frame][object] -> Box3D in camera coordinates
    instance_masks: np.ndarray  # (F, num_objects, H, W) bool, visibility
    solo_masks: np.ndarray  # (F, num_objects, H, W) bool, no other objects

    def object_distance(self, frame: int, obj: int) -> float:
        return float(np.linalg.norm(self.boxes[frame][obj].center))


def _box_triangles(box: geo.Box3D, color, skip_faces=()):
    """Split box faces into triangles with flat per-face shading."""
    tris_uvz = []
    colors = []
    verts = box.vertices
    if (verts[:, 2] <= geo.MIN_DEPTH).any():
        return [], []
    for f in range(6):
        if f in skip_faces:
            continue
        quad = verts[geo.FACE_VERTICES[f]]
        shade = FACE_SHADE[f]
        c = (color[0] * shade, color[1] * shade, color[2] * shade)
        tris_uvz.append((quad[0], quad[1], quad[2]))
        colors.append(c)
        tris_uvz.append((quad[0], quad[2], quad[3]))
        colors.append(c)
    return tris_uvz, colors


def _render_background(spec: SceneSpec, pose: geo.CameraPose):
    K = spec.intrinsics
    cols = np.arange(K.width, dtype=np.float64)
    rows = np.arange(K.height, dtype=np.float64)
    uu, vv = np.meshgrid(cols, rows)
    d_cam = np.stack(
        [(uu - K.cx) / K.fx, (vv - K.cy) / K.fy, np.ones_like(uu)], axis=-1
    )
    d_world = d_cam @ pose.rotation  # R^T applied to each direction
    center = pose.camera_center
    dy = d_world[..., 1]
    hits = dy > 1e-9
    t_hit = -center[1] / dy[hits]
    px = center[0] + t_hit * d_world[..., 0][hits]
    pz = center[2] + t_hit * d_world[..., 2][hits]
    checker = ((np.floor(px / GROUND_TILE) + np.floor(pz / GROUND_TILE)) % 2).astype(int)
    rgb = np.empty((K.height, K.width, 3), dtype=np.float64)
    rgb[...] = SKY_COLOR
    rgb[hits] = np.array(GROUND_TONES)[checker]
    zbuf = np.full(uu.shape, np.inf)
    zbuf[hits] = t_hit
    return rgb, zbuf


def render_scene(spec: SceneSpec, frames=None, objects=None) -> RenderedScene:
    """Rasterize the scene; deterministic for a given spec.

    ``frames``/``objects`` restrict rendering to a subset (frame indices keep
    their original numbering in the output arrays' first axis order).
    """
    frame_ids = list(range(spec.num_frames)) if frames is None else list(frames)
    obj_ids = list(range(len(spec.objects))) if objects is None else list(objects)
    K = spec.intrinsics
    F = len(frame_ids)
    n_obj = len(obj_ids)
    out_frames = np.zeros((F, 3, K.height, K.width), dtype=np.float32)
    inst_masks = np.zeros((F, n_obj, K.height, K.width), dtype=bool)
    solo_masks = np.zeros((F, n_obj, K.height, K.width), dtype=bool)
    all_boxes = []
    for fi, frame in enumerate(frame_ids):
        pose = spec.camera_poses[frame]
        rgb, zbuf = _render_background(spec, pose)
        inst = np.zeros((K.height, K.width), dtype=np.int32)
        frame_boxes = []
        tri_uv, tri_z, tri_color, tri_inst = [], [], [], []
        for oi, obj_idx in enumerate(obj_ids):
            obj = spec.objects[obj_idx]
            world_box = geo.make_box(obj.centers[frame], obj.size, obj.yaws[frame])
            cam_box = world_box.transformed(pose)
            frame_boxes.append(cam_box)
            tris, colors = _box_triangles(cam_box, obj.color)
            for tri, color in zip(tris, colors):
                pts = np.asarray(tri)
                uvz = geo.project_points(K, pts)
                tri_uv.append(uvz[:, :2])
                tri_z.append(uvz[:, 2])
                tri_color.append(color)
                tri_inst.append(oi + 1)
        if tri_uv:
            raster_triangles(
                np.ascontiguousarray(np.stack(tri_uv)),
                np.ascontiguousarray(np.stack(tri_z)),
                np.ascontiguousarray(np.array(tri_color, dtype=np.float64)),
                np.ascontiguousarray(np.array(tri_inst, dtype=np.int32)),
                zbuf,
                rgb,
                inst,
            )
        out_frames[fi] = rgb.transpose(2, 0, 1).astype(np.float32)
        for oi in range(n_obj):
            inst_masks[fi, oi] = inst == oi + 1
        # Solo pass: each object rasterized alone gives its full silhouette.
        for oi, obj_idx in enumerate(obj_ids):
            box = frame_boxes[oi]
            tris, colors = _box_triangles(box, spec.objects[obj_idx].color)
            if not tris:
                continue
            solo_z = np.full((K.height, K.width), np.inf)
            solo_rgb = np.zeros((K.height, K.width, 3))
            solo_inst = np.zeros((K.height, K.width), dtype=np.int32)
            uv = []
            zz = []
            for tri in tris:
                uvz = geo.project_points(K, np.asarray(tri))
                uv.append(uvz[:, :2])
                zz.append(uvz[:, 2])
            raster_triangles(
                np.ascontiguousarray(np.stack(uv)),
                np.ascontiguousarray(np.stack(zz)),
                np.ascontiguousarray(np.array(colors, dtype=np.float64)),
                np.ascontiguousarray(np.ones(len(tris), dtype=np.int32)),
                solo_z,
                solo_rgb,
                solo_inst,
            )
            solo_masks[fi, oi] = solo_inst == 1
        all_boxes.append(frame_boxes)
    return RenderedScene(spec, out_frames, all_boxes, inst_masks, solo_masks)


def sample_scene_spec(
    seed: int,
    num_frames: int = 24,
    height: int = 64,
    width: int = 128,
    camera_height: float = 2.2,
    max_objects: int = 3,
) -> SceneSpec:
    """Draw a random scene: 1-3 objects with simple linear trajectories."""
    rng = np.random.default_rng(seed)
    fx = fy = width / 2.0
    K = geo.CameraIntrinsics(fx, fy, width / 2.0, height / 2.0, width, height)
    ego_speed = float(rng.choice([0.0, 0.15, 0.3]))
    poses = []
    for i in range(num_frames):
        center = np.array([0.0, -camera_height, ego_speed * i])
        poses.append(geo.CameraPose(np.eye(3), -center))
    n_obj = int(rng.integers(1, max_objects + 1))
    color_ids = rng.choice(len(PALETTE), size=n_obj, replace=False)
    objects = []
    lanes = rng.permutation([-4.5, -2.2, 0.0, 2.2, 4.5])[:n_obj]
    for i in range(n_obj):
        category = str(
            rng.choice(["car", "car", "car", "truck", "bus", "trailer", "cone"])
        )
        base = CATEGORY_SIZES[category]
        size = tuple(float(s * rng.uniform(0.92, 1.08)) for s in base)
        x0 = float(lanes[i] + rng.uniform(-0.3, 0.3))
        z0 = float(rng.uniform(6.0, 13.0))
        y0 = -size[2] / 2.0
        if category == "cone":
            vel = np.zeros(3)
            yaw = float(rng.uniform(-math.pi, math.pi))
        else:
            speed = float(rng.uniform(-0.5, 0.8))
            yaw = 0.0 if speed >= 0 else math.pi
            yaw += float(rng.uniform(-0.12, 0.12))
            vel = np.array([math.sin(yaw), 0.0, math.cos(yaw)]) * abs(speed)
        centers = np.array([[x0, y0, z0]]) + np.outer(np.arange(num_frames), vel)
        yaws = np.full(num_frames, yaw)
        objects.append(ObjectSpec(category, size, PALETTE[color_ids[i]], centers, yaws))
    return SceneSpec(
        seed=seed,
        num_frames=num_frames,
        height=height,
        width=width,
        camera_height=camera_height,
        intrinsics=K,
        camera_poses=poses,
        objects=objects,
    )


@dataclass
class VideoClip:
    """One training/editing record: video window plus its control signals."""

    video: np.ndarray  # (N, 3, H, W) float32
    masked_video: np.ndarray  # (N, 3, H, W) float32
    masks: np.ndarray  # (N, 1, H, W) uint8
    boxes: geo.BoxTrajectory | None
    reference: np.ndarray | None  # (4, h, w) RGBA crop, None for inpainting
    ref_frame: int
    elevations: np.ndarray  # (N,)
    azimuths: np.ndarray  # (N,)
    is_inpainting: bool = False
    scene_id: str = ""
    object_index: int = -1
    frame_start: int = 0
    category: str = ""
    instance_masks: np.ndarray | None = None  # (N, H, W) bool when available


@dataclass
class ClipIndexEntry:
    clip_id: str
    scene_id: str
    object_index: int  # -1 for inpainting clips
    frame_start: int
    length: int
    ref_frame: int
    split: str
    is_inpainting: bool
    category: str = ""
    mask_rect: list | None = None  # inpainting only: [r0, c0, r1, c1]
    elevations: list = field(default_factory=list)
    azimuths: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ClipIndexEntry":
        return cls(**json.loads(line))


def qualifying_windows(scene: RenderedScene, obj: int, length: int, radius: float):
    """Disjoint length-N windows where the object stays close and unoccluded."""
    F = scene.frames.shape[0]
    ok = np.zeros(F, dtype=bool)
    for i in range(F):
        solo = scene.solo_masks[i, obj]
        if solo.sum() < MIN_VISIBLE_PIXELS:
            continue
        if not np.array_equal(solo, scene.instance_masks[i, obj]):
            continue
        if scene.object_distance(i, obj) > radius:
            continue
        try:
            geo.project_box_rect(scene.boxes[i][obj], scene.spec.intrinsics)
        except geo.EmptyProjection:
            continue
        ok[i] = True
    windows = []
    i = 0
    while i < F:
        if not ok[i]:
            i += 1
            continue
        j = i
        while j < F and ok[j]:
            j += 1
        run = j - i
        for s in range(i, i + (run // length) * length, length):
            windows.append(s)
        i = j
    return windows


def object_rect(scene: RenderedScene, frame: int, obj: int) -> geo.Rect2D | None:
    try:
        return geo.project_box_rect(scene.boxes[frame][obj], scene.spec.intrinsics)
    except geo.EmptyProjection:
        return None


def jittered_rect(
    rect: geo.Rect2D, rng: np.random.Generator, amount: float = 0.15
) -> geo.Rect2D:
    """Grow each side by up to ``amount`` of the rect size; always covers it."""
    w, h = rect.width, rect.height
    return geo.Rect2D(
        rect.u_min - rng.uniform(0, amount) * w,
        rect.v_min - rng.uniform(0, amount) * h,
        rect.u_max + rng.uniform(0, amount) * w,
        rect.v_max + rng.uniform(0, amount) * h,
    )


def make_masked_video(
    video: np.ndarray,
    rects_per_frame: list,
    dilation: int = 4,
    fill: float = MASK_FILL,
    rng: np.random.Generator | None = None,
    jitter: float = 0.15,
):
    """Mask the union of per-frame rects; rects may be lists for unions.

    With ``rng`` given, each rect is independently grown by up to ``jitter``
    per side so the model cannot rely on tight mask geometry.
    """
    n, _, height, width = video.shape
    masks = np.zeros((n, 1, height, width), dtype=np.uint8)
    for i in range(n):
        rects = rects_per_frame[i]
        if isinstance(rects, geo.Rect2D) or rects is None:
            rects = [rects]
        rects = [r for r in rects if r is not None]
        if rng is not None:
            rects = [jittered_rect(r, rng, jitter) for r in rects]
        masks[i, 0] = geo.mask_from_rects(rects, height, width, dilation)
    m = masks.astype(np.float32)
    masked = video * (1.0 - m) + fill * m
    return masked.astype(np.float32), masks


def crop_reference(
    frame: np.ndarray, instance_mask: np.ndarray
) -> np.ndarray | None:
    """RGBA crop of the instance-mask bounding rect; alpha is the mask."""
    rows = np.nonzero(instance_mask.any(axis=1))[0]
    cols = np.nonzero(instance_mask.any(axis=0))[0]
    if rows.size == 0 or cols.size == 0:
        return None
    r0, r1 = rows[0], rows[-1]
    c0, c1 = cols[0], cols[-1]
    rgb = frame[:, r0 : r1 + 1, c0 : c1 + 1]
    alpha = instance_mask[r0 : r1 + 1, c0 : c1 + 1].astype(np.float32)[None]
    return np.concatenate([rgb, alpha], axis=0)


def extract_clips(
    scene: RenderedScene,
    length: int,
    radius: float = 20.0,
    rng: np.random.Generator | None = None,
    scene_id: str = "",
) -> list:
    """Build one VideoClip per qualifying (object, window) pair."""
    if length < 2:
        raise ValueError("clip length must be >= 2")
    rng = rng or np.random.default_rng(0)
    clips = []
    for obj in range(len(scene.spec.objects)):
        for start in qualifying_windows(scene, obj, length, radius):
            clips.append(build_clip(scene, obj, start, length, int(rng.integers(length)), scene_id))
    return clips


def build_clip(
    scene: RenderedScene,
    obj: int,
    start: int,
    length: int,
    ref_frame: int,
    scene_id: str = "",
    mask_rng: np.random.Generator | None = None,
) -> VideoClip:
    """Assemble a reconstruction clip for one object window."""
    sl = slice(start, start + length)
    video = scene.frames[sl]
    boxes = geo.BoxTrajectory([scene.boxes[i][obj] for i in range(start, start + length)])
    K = scene.spec.intrinsics
    rects = []
    angles = []
    for box in boxes:
        try:
            rects.append(geo.project_box_rect(box, K))
        except geo.EmptyProjection:
            rects.append(None)
        angles.append(geo.compute_view_angles(box))
    masked, masks = make_masked_video(video, rects, rng=mask_rng)
    inst = scene.instance_masks[sl, obj]
    ref = crop_reference(video[ref_frame], inst[ref_frame])
    return VideoClip(
        video=video.copy(),
        masked_video=masked,
        masks=masks,
        boxes=boxes,
        reference=ref,
        ref_frame=ref_frame,
        elevations=np.array([a.elevation for a in angles]),
        azimuths=np.array([a.azimuth for a in angles]),
        is_inpainting=False,
        scene_id=scene_id,
        object_index=obj,
        frame_start=start,
        category=scene.spec.objects[obj].category,
        instance_masks=inst.copy(),
    )


def make_inpainting_clip(
    scene: RenderedScene,
    start: int,
    length: int,
    rng: np.random.Generator,
    scene_id: str = "",
    max_attempts: int = 100,
) -> VideoClip:
    """Static random rect mask over an object-free region of the window."""
    sl = slice(start, start + length)
    video = scene.frames[sl]
    height, width = video.shape[2], video.shape[3]
    occupied = scene.instance_masks[sl].any(axis=(0, 1))
    rect = None
    for _ in range(max_attempts):
        w = int(rng.uniform(0.15, 0.4) * width)
        h = int(rng.uniform(0.15, 0.4) * height)
        c0 = int(rng.integers(0, max(1, width - w)))
        r0 = int(rng.integers(0, max(1, height - h)))
        if not occupied[r0 : r0 + h, c0 : c0 + w].any():
            rect = geo.Rect2D(float(c0), float(r0), float(c0 + w - 1), float(r0 + h - 1))
            break
    if rect is None:
        raise NoFreeRegion(f"no object-free placement after {max_attempts} attempts")
    masked, masks = make_masked_video(video, [rect] * length, dilation=0)
    n = length
    return VideoClip(
        video=video.copy(),
        masked_video=masked,
        masks=masks,
        boxes=None,
        reference=None,
        ref_frame=0,
        elevations=np.zeros(n),
        azimuths=np.zeros(n),
        is_inpainting=True,
        scene_id=scene_id,
        object_index=-1,
        frame_start=start,
    )


@dataclass
class ObjectBankEntry:
    entry_id: str
    crop: np.ndarray  # (4, h, w) RGBA
    category: str
    view: geo.ViewAngles
    distance: float
    clip_id: str = ""
    frame: int = -1


def build_object_bank(clips: list, clip_ids: list | None = None) -> list:
    """One entry per clip frame: segmented crop with viewpoint and range."""
    bank = []
    for ci, clip in enumerate(clips):
        if clip.is_inpainting or clip.instance_masks is None:
            continue
        cid = clip_ids[ci] if clip_ids else f"clip{ci:05d}"
        for i in range(clip.video.shape[0]):
            crop = crop_reference(clip.video[i], clip.instance_masks[i])
            if crop is None:
                continue
            box = clip.boxes[i]
            bank.append(
                ObjectBankEntry(
                    entry_id=f"{cid}_f{i}",
                    crop=crop,
                    category=clip.category,
                    view=geo.ViewAngles(
                        float(clip.elevations[i]), float(clip.azimuths[i])
                    ),
                    distance=float(np.linalg.norm(box.center)),
                    clip_id=cid,
                    frame=i,
                )
            )
    return bank
