"""Numba kernels for the tiled rasterizer and the ray-cast oracle.

Pixel centers sit at integer coordinates (the projection convention of
scene.project_points). Edge functions are evaluated in float64; the
top-left fill rule resolves exact-zero edge values so that triangles
sharing an edge cover each boundary pixel exactly once.

Triangles arrive pre-oriented: the caller swaps vertices so the screen
area determinant is positive, so interiors satisfy E_i > 0 for all
three edges.
"""

import os

# the TBB layer is version-gated and noisy on some installs; omp is fine
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numpy as np
from numba import get_num_threads, njit, prange, set_num_threads


@njit(cache=True)
def bin_triangles(bounds, n_tx, n_ty):
    """CSR tile lists from per-triangle tile spans (T, 4) [tx0,ty0,tx1,ty1].

    Spans are inclusive and already clamped; a negative tx0 marks a
    culled triangle. Returns (offsets, items) with items ascending per
    tile (triangle submission order).
    """
    n_tiles = n_tx * n_ty
    counts = np.zeros(n_tiles + 1, dtype=np.int64)
    T = bounds.shape[0]
    for t in range(T):
        tx0, ty0, tx1, ty1 = bounds[t, 0], bounds[t, 1], bounds[t, 2], bounds[t, 3]
        if tx0 < 0:
            continue
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                counts[ty * n_tx + tx + 1] += 1
    offsets = np.cumsum(counts)
    items = np.empty(offsets[-1], dtype=np.int64)
    cursor = offsets[:-1].copy()
    for t in range(T):
        tx0, ty0, tx1, ty1 = bounds[t, 0], bounds[t, 1], bounds[t, 2], bounds[t, 3]
        if tx0 < 0:
            continue
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                k = ty * n_tx + tx
                items[cursor[k]] = t
                cursor[k] += 1
    return offsets, items


@njit(cache=True, parallel=True)
def raster_tiles(sxy, inv_w, world, src_id, swapped, offsets, items,
                 width, height, tile,
                 out_id, out_bary, out_point, out_depth):
    """Scan binned triangles tile by tile.

    sxy: (T, 3, 2) screen coords, inv_w: (T, 3), world: (T, 3, 3).
    Nearest inv_w wins; exact ties go to the lower source triangle id.
    Each tile owns a disjoint pixel block, so the parallel loop is
    race-free and the output is schedule-independent.
    """
    n_tx = (width + tile - 1) // tile
    n_ty = (height + tile - 1) // tile
    for tidx in prange(n_tx * n_ty):
        ty = tidx // n_tx
        tx = tidx - ty * n_tx
        x_lo, x_hi = tx * tile, min((tx + 1) * tile, width)
        y_lo, y_hi = ty * tile, min((ty + 1) * tile, height)
        for py in range(y_lo, y_hi):
            for px in range(x_lo, x_hi):
                best_iw = -1.0
                best_src = -1
                b0 = b1 = b2 = 0.0
                wx = wy = wz = 0.0
                for k in range(offsets[tidx], offsets[tidx + 1]):
                    t = items[k]
                    ax, ay = sxy[t, 0, 0], sxy[t, 0, 1]
                    bx, by = sxy[t, 1, 0], sxy[t, 1, 1]
                    cx, cy = sxy[t, 2, 0], sxy[t, 2, 1]
                    e0 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                    e1 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                    e2 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                    # top-left rule on exact zeros (y-down, area > 0):
                    # top edge: horizontal with dx > 0; left edge: dy < 0
                    if e0 < 0.0 or (e0 == 0.0 and not (
                            (cy == by and cx > bx) or cy < by)):
                        continue
                    if e1 < 0.0 or (e1 == 0.0 and not (
                            (ay == cy and ax > cx) or ay < cy)):
                        continue
                    if e2 < 0.0 or (e2 == 0.0 and not (
                            (by == ay and bx > ax) or by < ay)):
                        continue
                    area = e0 + e1 + e2
                    if area <= 0.0:
                        continue
                    l0 = e0 / area
                    l1 = e1 / area
                    l2 = e2 / area
                    iw = l0 * inv_w[t, 0] + l1 * inv_w[t, 1] + l2 * inv_w[t, 2]
                    s = src_id[t]
                    if iw > best_iw or (iw == best_iw and s < best_src):
                        # perspective-correct barycentrics
                        p0 = l0 * inv_w[t, 0] / iw
                        p1 = l1 * inv_w[t, 1] / iw
                        p2 = 1.0 - p0 - p1
                        best_iw = iw
                        best_src = s
                        wx = (p0 * world[t, 0, 0] + p1 * world[t, 1, 0]
                              + p2 * world[t, 2, 0])
                        wy = (p0 * world[t, 0, 1] + p1 * world[t, 1, 1]
                              + p2 * world[t, 2, 1])
                        wz = (p0 * world[t, 0, 2] + p1 * world[t, 1, 2]
                              + p2 * world[t, 2, 2])
                        if swapped[t]:
                            b0, b1, b2 = p0, p2, p1
                        else:
                            b0, b1, b2 = p0, p1, p2
                if best_src >= 0:
                    out_id[py, px] = best_src
                    out_bary[py, px, 0] = b0
                    out_bary[py, px, 1] = b1
                    out_bary[py, px, 2] = b2
                    out_point[py, px, 0] = wx
                    out_point[py, px, 1] = wy
                    out_point[py, px, 2] = wz
                    out_depth[py, px] = 1.0 / best_iw


@njit(cache=True, parallel=True)
def raycast_pixels(origin, dirs, verts, faces, near, far, out_id, out_t):
    """Brute-force nearest-hit oracle: every ray against every triangle.

    Standard Moller-Trumbore with inclusive barycentric bounds; nearest
    t in (near, far) wins, exact ties to the lower face id.
    """
    H, W = out_id.shape
    F = faces.shape[0]
    for p in prange(H * W):
        py = p // W
        px = p - py * W
        dx, dy, dz = dirs[py, px, 0], dirs[py, px, 1], dirs[py, px, 2]
        best_t = far
        best_f = -1
        for f in range(F):
            i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
            e1x = verts[i1, 0] - verts[i0, 0]
            e1y = verts[i1, 1] - verts[i0, 1]
            e1z = verts[i1, 2] - verts[i0, 2]
            e2x = verts[i2, 0] - verts[i0, 0]
            e2y = verts[i2, 1] - verts[i0, 1]
            e2z = verts[i2, 2] - verts[i0, 2]
            hx = dy * e2z - dz * e2y
            hy = dz * e2x - dx * e2z
            hz = dx * e2y - dy * e2x
            det = e1x * hx + e1y * hy + e1z * hz
            if -1e-14 < det < 1e-14:
                continue
            inv = 1.0 / det
            sx = origin[0] - verts[i0, 0]
            sy = origin[1] - verts[i0, 1]
            sz = origin[2] - verts[i0, 2]
            u = (sx * hx + sy * hy + sz * hz) * inv
            if u < 0.0 or u > 1.0:
                continue
            qx = sy * e1z - sz * e1y
            qy = sz * e1x - sx * e1z
            qz = sx * e1y - sy * e1x
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2x * qx + e2y * qy + e2z * qz) * inv
            if t <= near or t >= far:
                continue
            if t < best_t or (t == best_t and f < best_f):
                best_t = t
                best_f = f
        if best_f >= 0:
            out_id[py, px] = best_f
            out_t[py, px] = best_t


@njit(cache=True, parallel=True)
def edge_distance(sxy, count, width, height, out_d):
    """Min distance from each pixel center to any projected edge segment."""
    for p in prange(height * width):
        py = p // width
        px = p - py * width
        best = 1e30
        for t in range(count):
            for e in range(3):
                ax, ay = sxy[t, e, 0], sxy[t, e, 1]
                j = e + 1 if e < 2 else 0
                bx, by = sxy[t, j, 0], sxy[t, j, 1]
                ex, ey = bx - ax, by - ay
                rx, ry = px - ax, py - ay
                ll = ex * ex + ey * ey
                if ll > 0.0:
                    s = (rx * ex + ry * ey) / ll
                    if s < 0.0:
                        s = 0.0
                    elif s > 1.0:
                        s = 1.0
                else:
                    s = 0.0
                ddx = rx - s * ex
                ddy = ry - s * ey
                d2 = ddx * ddx + ddy * ddy
                if d2 < best:
                    best = d2
        out_d[py, px] = np.sqrt(best)
