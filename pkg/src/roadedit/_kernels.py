"""Hot numeric kernels: point splatting and triangle rasterization.

Each kernel has a numba ``@njit`` build and a pure-numpy fallback that
computes bit-identical float64 results.  The fallback is selected by setting
``ROADEDIT_NO_NUMBA=1`` in the environment (or automatically when numba is
not importable).  ``benchmarks/bench_kernels.py`` compares the two paths.

Pixel convention used throughout the package: pixel centers sit at integer
coordinates, so a continuous point (u, v) lands in pixel
(floor(v + 0.5), floor(u + 0.5)).
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("ROADEDIT_NO_NUMBA", "") not in ("1", "true", "yes")
if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False


def _splat_min_depth_loop(xs, ys, zs, fx, fy, cx, cy, out):
    """Project points and keep the minimum depth per hit pixel."""
    height, width = out.shape
    for i in range(xs.shape[0]):
        z = zs[i]
        if z <= 1e-6:
            continue
        u = fx * (xs[i] / z) + cx
        v = fy * (ys[i] / z) + cy
        col = int(np.floor(u + 0.5))
        row = int(np.floor(v + 0.5))
        if 0 <= col < width and 0 <= row < height:
            if z < out[row, col]:
                out[row, col] = z


def _splat_min_depth_numpy(xs, ys, zs, fx, fy, cx, cy, out):
    height, width = out.shape
    keep = zs > 1e-6
    xs, ys, zs = xs[keep], ys[keep], zs[keep]
    u = fx * (xs / zs) + cx
    v = fy * (ys / zs) + cy
    cols = np.floor(u + 0.5).astype(np.int64)
    rows = np.floor(v + 0.5).astype(np.int64)
    inside = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
    np.minimum.at(out, (rows[inside], cols[inside]), zs[inside])


def _raster_triangles_loop(tri_uv, tri_z, tri_color, tri_inst, zbuf, rgb, inst):
    """Z-buffered flat-shaded triangle rasterizer with 1/z-correct depth.

    tri_uv: (m, 3, 2) screen coordinates, tri_z: (m, 3) vertex depths,
    tri_color: (m, 3) flat colors, tri_inst: (m,) instance ids (>= 1).
    Samples pixel centers at integer coordinates; strict z-test so
    coplanar later geometry never replaces earlier.
    """
    height, width = zbuf.shape
    for t in range(tri_uv.shape[0]):
        ax, ay = tri_uv[t, 0, 0], tri_uv[t, 0, 1]
        bx, by = tri_uv[t, 1, 0], tri_uv[t, 1, 1]
        cx_, cy_ = tri_uv[t, 2, 0], tri_uv[t, 2, 1]
        area = (bx - ax) * (cy_ - ay) - (by - ay) * (cx_ - ax)
        if area == 0.0:
            continue
        iz0 = 1.0 / tri_z[t, 0]
        iz1 = 1.0 / tri_z[t, 1]
        iz2 = 1.0 / tri_z[t, 2]
        c0 = max(0, int(np.floor(min(ax, bx, cx_) + 0.5)))
        c1 = min(width - 1, int(np.floor(max(ax, bx, cx_) + 0.5)))
        r0 = max(0, int(np.floor(min(ay, by, cy_) + 0.5)))
        r1 = min(height - 1, int(np.floor(max(ay, by, cy_) + 0.5)))
        for row in range(r0, r1 + 1):
            py = float(row)
            for col in range(c0, c1 + 1):
                px = float(col)
                w0 = (cx_ - bx) * (py - by) - (cy_ - by) * (px - bx)
                w1 = (ax - cx_) * (py - cy_) - (ay - cy_) * (px - cx_)
                w2 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                if area > 0.0:
                    if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                        continue
                else:
                    if w0 > 0.0 or w1 > 0.0 or w2 > 0.0:
                        continue
                l0 = w0 / area
                l1 = w1 / area
                l2 = w2 / area
                inv_z = l0 * iz0 + l1 * iz1 + l2 * iz2
                if inv_z <= 0.0:
                    continue
                z = 1.0 / inv_z
                if z < zbuf[row, col]:
                    zbuf[row, col] = z
                    rgb[row, col, 0] = tri_color[t, 0]
                    rgb[row, col, 1] = tri_color[t, 1]
                    rgb[row, col, 2] = tri_color[t, 2]
                    inst[row, col] = tri_inst[t]


def _raster_triangles_numpy(tri_uv, tri_z, tri_color, tri_inst, zbuf, rgb, inst):
    height, width = zbuf.shape
    for t in range(tri_uv.shape[0]):
        ax, ay = tri_uv[t, 0, 0], tri_uv[t, 0, 1]
        bx, by = tri_uv[t, 1, 0], tri_uv[t, 1, 1]
        cx_, cy_ = tri_uv[t, 2, 0], tri_uv[t, 2, 1]
        area = (bx - ax) * (cy_ - ay) - (by - ay) * (cx_ - ax)
        if area == 0.0:
            continue
        c0 = max(0, int(np.floor(min(ax, bx, cx_) + 0.5)))
        c1 = min(width - 1, int(np.floor(max(ax, bx, cx_) + 0.5)))
        r0 = max(0, int(np.floor(min(ay, by, cy_) + 0.5)))
        r1 = min(height - 1, int(np.floor(max(ay, by, cy_) + 0.5)))
        if c1 < c0 or r1 < r0:
            continue
        px, py = np.meshgrid(
            np.arange(c0, c1 + 1, dtype=np.float64),
            np.arange(r0, r1 + 1, dtype=np.float64),
        )
        w0 = (cx_ - bx) * (py - by) - (cy_ - by) * (px - bx)
        w1 = (ax - cx_) * (py - cy_) - (ay - cy_) * (px - cx_)
        w2 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        if area > 0.0:
            keep = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        else:
            keep = (w0 <= 0.0) & (w1 <= 0.0) & (w2 <= 0.0)
        if not keep.any():
            continue
        iz0 = 1.0 / tri_z[t, 0]
        iz1 = 1.0 / tri_z[t, 1]
        iz2 = 1.0 / tri_z[t, 2]
        inv_z = (w0 / area) * iz0 + (w1 / area) * iz1 + (w2 / area) * iz2
        keep &= inv_z > 0.0
        rr, cc = np.nonzero(keep)
        z = 1.0 / inv_z[rr, cc]
        rows = rr + r0
        cols = cc + c0
        # Within one triangle pixels are unique, so a vectorized z-test is
        # equivalent to the sequential loop.
        win = z < zbuf[rows, cols]
        rows, cols, z = rows[win], cols[win], z[win]
        zbuf[rows, cols] = z
        rgb[rows, cols] = tri_color[t]
        inst[rows, cols] = tri_inst[t]


if USE_NUMBA:
    splat_min_depth = njit(cache=True)(_splat_min_depth_loop)
    raster_triangles = njit(cache=True)(_raster_triangles_loop)
else:
    splat_min_depth = _splat_min_depth_numpy
    raster_triangles = _raster_triangles_numpy
