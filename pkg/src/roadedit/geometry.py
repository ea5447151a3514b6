"""Camera math for box-driven scene editing.

Coordinate conventions (OpenCV-style):
  - camera frame: x right, y down, z forward; the camera looks along +z
  - image plane: u right, v down, pixel centers at integer coordinates
  - ground plane: y = camera_height in the camera frame for a level camera
  - object heading yaw: forward = (sin yaw, 0, cos yaw), so yaw 0 points
    along +z and positive yaw turns toward -x (the object's left appears
    to the image left for a camera behind it)

Boxes store 8 vertices: bottom face 0-3 (front-left, front-right,
rear-right, rear-left), top face 4-7 directly above.  The six box faces
are addressed in the fixed order front, back, left, right, top, bottom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import splat_min_depth

FACE_ORDER = ("front", "back", "left", "right", "top", "bottom")
FACE_VERTICES = np.array(
    [
        [0, 1, 5, 4],  # front
        [2, 3, 7, 6],  # back
        [3, 0, 4, 7],  # left
        [1, 2, 6, 5],  # right
        [4, 5, 6, 7],  # top
        [0, 1, 2, 3],  # bottom
    ],
    dtype=np.int64,
)

# Face-grid side count and the per-edge densification used when rendering
# pose images; at <=128 px these leave no holes in any projected face.
DEFAULT_FACE_GRID = 48
DEFAULT_DEPTH_CAP = 60.0

MIN_DEPTH = 1e-6


class NonPositiveDepth(ValueError):
    """Point sits on or behind the camera plane."""


class EmptyProjection(ValueError):
    """No part of the geometry lands inside the image."""


class DegenerateGeometry(ValueError):
    """Inputs too close to a singular configuration."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera transform: x_cam = rotation @ x_world + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        tr = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-6):
            raise ValueError("rotation must be orthonormal")
        if not math.isclose(float(np.linalg.det(rot)), 1.0, abs_tol=1e-6):
            raise ValueError("rotation must be proper (det +1)")

    @property
    def camera_center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(np.array(d["rotation"]), np.array(d["translation"]))


@dataclass
class Box3D:
    """Oriented 3D box as 8 vertices plus its heading yaw."""

    vertices: np.ndarray
    yaw: float

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(8, 3)

    @property
    def center(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def face(self, face_index: int) -> np.ndarray:
        return self.vertices[FACE_VERTICES[face_index]]

    def translated(self, offset) -> "Box3D":
        return Box3D(self.vertices + np.asarray(offset, dtype=np.float64), self.yaw)

    def rotated(self, delta_yaw: float) -> "Box3D":
        """Rotate about the box center around the vertical (-y) axis."""
        c, s = math.cos(delta_yaw), math.sin(delta_yaw)
        # Rotation by +delta about the up axis (-y) expressed in x/z.
        rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        center = self.center
        return Box3D((self.vertices - center) @ rot.T + center, wrap_angle(self.yaw + delta_yaw))

    def transformed(self, pose: CameraPose) -> "Box3D":
        """World-frame box -> camera-frame box (yaw re-derived from geometry)."""
        verts = pose.world_to_camera(self.vertices)
        box = Box3D(verts, 0.0)
        box.yaw = _heading_yaw(verts)
        return box

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist(), "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict) -> "Box3D":
        return cls(np.array(d["vertices"], dtype=np.float64), float(d["yaw"]))


def make_box(center, size, yaw: float) -> Box3D:
    """Build a box from center (3,), size (length, width, height) and yaw."""
    cx, cy, cz = (float(v) for v in center)
    length, width, height = (float(v) for v in size)
    if min(length, width, height) <= 0:
        raise ValueError("box dimensions must be positive")
    forward = np.array([math.sin(yaw), 0.0, math.cos(yaw)])
    left = np.array([-math.cos(yaw), 0.0, math.sin(yaw)])
    up = np.array([0.0, -1.0, 0.0])
    c = np.array([cx, cy, cz])
    half = np.array(
        [
            forward * (length / 2) + left * (width / 2),
            forward * (length / 2) - left * (width / 2),
            -forward * (length / 2) - left * (width / 2),
            -forward * (length / 2) + left * (width / 2),
        ]
    )
    bottom = c - up * (height / 2) + half
    top = bottom + up * height
    return Box3D(np.concatenate([bottom, top], axis=0), wrap_angle(yaw))


def _heading_yaw(vertices: np.ndarray) -> float:
    front = vertices[FACE_VERTICES[0]].mean(axis=0)
    back = vertices[FACE_VERTICES[1]].mean(axis=0)
    d = front - back
    return math.atan2(d[0], d[2])


@dataclass
class BoxTrajectory:
    """Per-frame boxes with implicit contiguous frame indices 0..N-1."""

    boxes: list

    def __len__(self) -> int:
        return len(self.boxes)

    def __getitem__(self, i: int) -> Box3D:
        return self.boxes[i]

    def __iter__(self):
        return iter(self.boxes)

    @classmethod
    def from_pairs(cls, pairs) -> "BoxTrajectory":
        pairs = sorted(pairs, key=lambda p: p[0])
        frames = [f for f, _ in pairs]
        if frames != list(range(len(frames))):
            raise ValueError("frame indices must be contiguous 0..N-1")
        return cls([b for _, b in pairs])

    def to_dict(self) -> dict:
        return {"boxes": [b.to_dict() for b in self.boxes]}

    @classmethod
    def from_dict(cls, d: dict) -> "BoxTrajectory":
        return cls([Box3D.from_dict(b) for b in d["boxes"]])


@dataclass
class PoseImage:
    """Six-channel normalized-depth image, one channel per box face."""

    channels: np.ndarray  # (6, H, W) in [0, 1], 0 = background

    @property
    def height(self) -> int:
        return self.channels.shape[1]

    @property
    def width(self) -> int:
        return self.channels.shape[2]


@dataclass(frozen=True)
class ViewAngles:
    elevation: float
    azimuth: float


@dataclass(frozen=True)
class Rect2D:
    u_min: float
    v_min: float
    u_max: float
    v_max: float

    def pixel_span(self):
        """Inclusive (row0, col0, row1, col1) of pixel centers inside the rect."""
        c0 = int(math.ceil(self.u_min))
        c1 = int(math.floor(self.u_max))
        r0 = int(math.ceil(self.v_min))
        r1 = int(math.floor(self.v_max))
        return r0, c0, r1, c1

    @property
    def width(self) -> float:
        return self.u_max - self.u_min

    @property
    def height(self) -> float:
        return self.v_max - self.v_min


def wrap_angle(a: float) -> float:
    """Wrap to [-pi, pi)."""
    return float((a + math.pi) % (2 * math.pi) - math.pi)


def angular_distance(a: float, b: float) -> float:
    """Absolute wrapped angular distance in radians, in [0, pi]."""
    return abs(wrap_angle(a - b))


def project_point(K: CameraIntrinsics, p) -> tuple:
    """Pinhole projection keeping depth: (u, v, z)."""
    x, y, z = (float(v) for v in p)
    if z <= MIN_DEPTH:
        raise NonPositiveDepth(f"depth {z} is not positive")
    return (K.fx * (x / z) + K.cx, K.fy * (y / z) + K.cy, z)


def project_points(K: CameraIntrinsics, pts: np.ndarray) -> np.ndarray:
    """Vectorized projection of (n, 3) points; caller filters non-positive z."""
    pts = np.asarray(pts, dtype=np.float64)
    z = pts[:, 2]
    u = K.fx * (pts[:, 0] / z) + K.cx
    v = K.fy * (pts[:, 1] / z) + K.cy
    return np.stack([u, v, z], axis=1)


def interpolate_face(face: np.ndarray, grid: int) -> np.ndarray:
    """Bilinear grid of grid**2 points over a quad given as 4 cyclic corners."""
    if grid < 2:
        raise ValueError("grid side count must be >= 2")
    face = np.asarray(face, dtype=np.float64).reshape(4, 3)
    s = np.linspace(0.0, 1.0, grid)
    t = np.linspace(0.0, 1.0, grid)
    ss, tt = np.meshgrid(s, t)
    ss = ss.reshape(-1, 1)
    tt = tt.reshape(-1, 1)
    bottom = (1.0 - ss) * face[0] + ss * face[1]
    top = (1.0 - ss) * face[3] + ss * face[2]
    return (1.0 - tt) * bottom + tt * top


def face_edge_points(face: np.ndarray, points_per_edge: int) -> np.ndarray:
    """Evenly spaced points along the 4 edges of a quad (corners included)."""
    face = np.asarray(face, dtype=np.float64).reshape(4, 3)
    t = np.linspace(0.0, 1.0, points_per_edge).reshape(-1, 1)
    segments = []
    for i in range(4):
        a, b = face[i], face[(i + 1) % 4]
        segments.append((1.0 - t) * a + t * b)
    return np.concatenate(segments, axis=0)


def render_pose_image(
    box: Box3D,
    K: CameraIntrinsics,
    grid: int = DEFAULT_FACE_GRID,
    depth_cap: float = DEFAULT_DEPTH_CAP,
) -> PoseImage:
    """Render the six box faces into per-face normalized depth channels.

    Each face is sampled on a grid**2 bilinear grid plus 4*grid points per
    edge; samples behind the camera are skipped, collisions keep the
    minimum depth, and stored values are min(z, depth_cap) / depth_cap.
    Faces never occlude each other: every channel only sees its own face.
    """
    if depth_cap <= 0:
        raise ValueError("depth_cap must be positive")
    raw = np.full((6, K.height, K.width), np.inf, dtype=np.float64)
    for f in range(6):
        face = box.face(f)
        pts = np.concatenate(
            [interpolate_face(face, grid), face_edge_points(face, 4 * grid)], axis=0
        )
        splat_min_depth(
            np.ascontiguousarray(pts[:, 0]),
            np.ascontiguousarray(pts[:, 1]),
            np.ascontiguousarray(pts[:, 2]),
            K.fx,
            K.fy,
            K.cx,
            K.cy,
            raw[f],
        )
    hit = np.isfinite(raw)
    if not hit.any():
        raise EmptyProjection("no face point lands inside the image")
    channels = np.zeros_like(raw)
    channels[hit] = np.minimum(raw[hit], depth_cap) / depth_cap
    return PoseImage(channels)


def render_edge_image(
    box: Box3D, K: CameraIntrinsics, grid: int = DEFAULT_FACE_GRID
) -> PoseImage:
    """Depth-free variant: splat only box edges at constant intensity 1.

    Keeps the six-channel per-face layout so downstream encoders are
    unchanged; used as the ablation arm without depth information.
    """
    channels = np.zeros((6, K.height, K.width), dtype=np.float64)
    any_hit = False
    for f in range(6):
        pts = face_edge_points(box.face(f), 4 * grid)
        raw = np.full((K.height, K.width), np.inf, dtype=np.float64)
        splat_min_depth(
            np.ascontiguousarray(pts[:, 0]),
            np.ascontiguousarray(pts[:, 1]),
            np.ascontiguousarray(pts[:, 2]),
            K.fx,
            K.fy,
            K.cx,
            K.cy,
            raw,
        )
        hit = np.isfinite(raw)
        channels[f][hit] = 1.0
        any_hit = any_hit or bool(hit.any())
    if not any_hit:
        raise EmptyProjection("no edge point lands inside the image")
    return PoseImage(channels)


def compute_view_angles(box: Box3D, cam: CameraPose = None) -> ViewAngles:
    """Camera elevation/azimuth relative to the object's heading frame.

    The object frame is derived from the box geometry (front/back and
    top/bottom face centers), so the result is invariant under any rigid
    motion applied to camera and box together.  With ``cam`` omitted the
    box is taken in camera coordinates and the camera sits at the origin;
    with ``cam`` given the box is in world coordinates.
    """
    verts = box.vertices
    cam_pos = np.zeros(3) if cam is None else cam.camera_center
    center = verts.mean(axis=0)
    d = cam_pos - center
    if float(np.linalg.norm(d)) < 1e-6:
        raise DegenerateGeometry("camera position coincides with box center")
    front = verts[FACE_VERTICES[0]].mean(axis=0)
    back = verts[FACE_VERTICES[1]].mean(axis=0)
    top = verts[FACE_VERTICES[4]].mean(axis=0)
    bottom = verts[FACE_VERTICES[5]].mean(axis=0)
    forward = front - back
    forward = forward / np.linalg.norm(forward)
    up = top - bottom
    up = up / np.linalg.norm(up)
    left = np.cross(up, forward)
    d_fwd = float(d @ forward)
    d_lat = float(d @ left)
    d_up = float(d @ up)
    azimuth = wrap_angle(math.atan2(d_lat, d_fwd))
    elevation = math.atan2(d_up, math.hypot(d_fwd, d_lat))
    return ViewAngles(elevation=elevation, azimuth=azimuth)


def project_box_rect(box: Box3D, K: CameraIntrinsics) -> Rect2D:
    """Axis-aligned hull of the projected box vertices, clamped to the image."""
    z = box.vertices[:, 2]
    valid = z > MIN_DEPTH
    if not valid.any():
        raise EmptyProjection("all vertices behind the camera")
    uvz = project_points(K, box.vertices[valid])
    inside = (
        (uvz[:, 0] >= 0)
        & (uvz[:, 0] < K.width)
        & (uvz[:, 1] >= 0)
        & (uvz[:, 1] < K.height)
    )
    if not inside.any():
        raise EmptyProjection("no vertex projects inside the image")
    u_min = float(np.clip(uvz[:, 0].min(), 0, K.width - 1))
    u_max = float(np.clip(uvz[:, 0].max(), 0, K.width - 1))
    v_min = float(np.clip(uvz[:, 1].min(), 0, K.height - 1))
    v_max = float(np.clip(uvz[:, 1].max(), 0, K.height - 1))
    return Rect2D(u_min, v_min, u_max, v_max)


def mask_from_rects(rects, height: int, width: int, dilation: int = 0) -> np.ndarray:
    """Binary union mask of rects, each dilated by ``dilation`` pixels."""
    if dilation < 0:
        raise ValueError("dilation must be >= 0")
    mask = np.zeros((height, width), dtype=np.uint8)
    for rect in rects:
        if rect is None:
            continue
        r0 = max(0, int(math.ceil(rect.v_min - dilation)))
        c0 = max(0, int(math.ceil(rect.u_min - dilation)))
        r1 = min(height - 1, int(math.floor(rect.v_max + dilation)))
        c1 = min(width - 1, int(math.floor(rect.u_max + dilation)))
        if r1 >= r0 and c1 >= c0:
            mask[r0 : r1 + 1, c0 : c1 + 1] = 1
    return mask


def project_box_polygon(box: Box3D, K: CameraIntrinsics) -> np.ndarray:
    """All 8 vertices projected to (u, v); raises if any lies at or behind z=0.

    Used for wireframe previews where a partially-behind box has no
    well-defined outline.
    """
    z = box.vertices[:, 2]
    if (z <= MIN_DEPTH).any():
        raise EmptyProjection("box extends behind the camera plane")
    return project_points(K, box.vertices)[:, :2]
