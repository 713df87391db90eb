"""Tiled software rasterizer with the blend MLP as deferred shader.

Geometry: clip-space transform (to_clip_matrix), near-plane clipping,
screen-space edge functions over 32x32 pixel tiles, perspective-correct
interpolation. Shading: batch the covered pixels, project into source
views, gather features/colors, blend with predicted weights. The MLP is
evaluated as a few large matmuls per frame, which is where the time goes.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import scene as sc
from ._kernels import (bin_triangles, edge_distance, get_num_threads,
                       raster_tiles, raycast_pixels, set_num_threads)
from .appearance import blend
from .autodiff import Tensor, mul, no_grad
from .diffops import bilinear_gather
from .mesh import TriMesh, compact_vertices
from .renderer import _unit


@dataclass
class GBuffer:
    tri_id: np.ndarray    # (H, W) int32, -1 where background
    bary: np.ndarray      # (H, W, 3) perspective-correct, sums to 1 on cover
    point: np.ndarray     # (H, W, 3) world-space intersection
    depth: np.ndarray     # (H, W) camera depth, +inf on background
    camera: object = None

    @property
    def covered(self):
        return self.tri_id >= 0


@dataclass
class FrameTiming:
    geometry_ms: float
    raster_ms: float
    shade_ms: float
    total_ms: float
    fps: float


def _clip_near(clip, world, near):
    """Sutherland-Hodgman against w = near for one triangle.

    Returns (clip_verts, world_verts) polygon lists (0, 3 or 4 entries).
    World positions lerp with the same parameter; clip coords are linear
    in the world point so the pair stays consistent.
    """
    out_c, out_w = [], []
    for i in range(3):
        a_c, a_w = clip[i], world[i]
        b_c, b_w = clip[(i + 1) % 3], world[(i + 1) % 3]
        a_in = a_c[3] >= near
        b_in = b_c[3] >= near
        if a_in:
            out_c.append(a_c)
            out_w.append(a_w)
        if a_in != b_in:
            s = (near - a_c[3]) / (b_c[3] - a_c[3])
            out_c.append(a_c + s * (b_c - a_c))
            out_w.append(a_w + s * (b_w - a_w))
    return out_c, out_w


def _prepare(mesh, camera, near, far):
    """Project, clip, orient. Returns screen-space triangle arrays.

    (sxy (T,3,2), inv_w (T,3), world (T,3,3), src (T,), swapped (T,)
    bool) with positive screen area; fully culled meshes give T = 0.
    Only triangles straddling the near plane take the slow clip path.
    """
    M = sc.to_clip_matrix(camera, near, far)
    V = mesh.vertices
    clip = np.hstack([V, np.ones((len(V), 1))]) @ M.T
    c3 = clip[mesh.faces]                      # (F, 3, 4)
    w3 = c3[:, :, 3]
    culled = np.all(w3 < near, axis=1) | np.all(w3 > far, axis=1)
    straddle = ~culled & np.any(w3 < near, axis=1)
    plain = ~culled & ~straddle

    tris_c = [c3[plain]]
    tris_w = [V[mesh.faces[plain]]]
    src = [np.nonzero(plain)[0]]
    for fid in np.nonzero(straddle)[0]:
        pc, pw = _clip_near(list(c3[fid]), list(V[mesh.faces[fid]]), near)
        for k in range(1, len(pc) - 1):  # fan
            tris_c.append(np.asarray([pc[0], pc[k], pc[k + 1]])[None])
            tris_w.append(np.asarray([pw[0], pw[k], pw[k + 1]])[None])
            src.append(np.asarray([fid]))
    c = np.concatenate(tris_c, axis=0)         # (T, 3, 4)
    world = np.concatenate(tris_w, axis=0).astype(np.float64)
    src = np.concatenate(src).astype(np.int32)
    if not len(src):
        z = np.zeros
        return (z((0, 3, 2)), z((0, 3)), z((0, 3, 3)),
                z(0, dtype=np.int32), z(0, dtype=np.bool_))
    W, H = camera.width, camera.height
    inv_w = 1.0 / c[:, :, 3]
    sx = (c[:, :, 0] * inv_w + 1.0) * 0.5 * W - 0.5
    sy = (c[:, :, 1] * inv_w + 1.0) * 0.5 * H - 0.5
    sxy = np.stack([sx, sy], axis=-1)          # (T, 3, 2)
    area = ((sxy[:, 1, 0] - sxy[:, 0, 0]) * (sxy[:, 2, 1] - sxy[:, 0, 1])
            - (sxy[:, 1, 1] - sxy[:, 0, 1]) * (sxy[:, 2, 0] - sxy[:, 0, 0]))
    swapped = area < 0.0
    keep = area != 0.0
    for arr in (sxy, inv_w, world):
        arr[swapped] = arr[swapped][:, [0, 2, 1]]
    return (np.ascontiguousarray(sxy[keep]), np.ascontiguousarray(inv_w[keep]),
            np.ascontiguousarray(world[keep]), src[keep], swapped[keep])


def _raster_prepared(prep, camera, tile):
    W, H = camera.width, camera.height
    out_id = np.full((H, W), -1, dtype=np.int32)
    out_bary = np.zeros((H, W, 3))
    out_point = np.zeros((H, W, 3))
    out_depth = np.full((H, W), np.inf)
    sxy, inv_w, world, src, swapped = prep
    if len(src):
        n_tx = (W + tile - 1) // tile
        n_ty = (H + tile - 1) // tile
        lo = np.floor(sxy.min(axis=1)).astype(np.int64)
        hi = np.ceil(sxy.max(axis=1)).astype(np.int64)
        bounds = np.empty((len(src), 4), dtype=np.int64)
        bounds[:, 0] = np.maximum(lo[:, 0], 0) // tile
        bounds[:, 1] = np.maximum(lo[:, 1], 0) // tile
        bounds[:, 2] = np.minimum(hi[:, 0], W - 1) // tile
        bounds[:, 3] = np.minimum(hi[:, 1], H - 1) // tile
        off = (lo[:, 0] > W - 1) | (lo[:, 1] > H - 1) | (hi[:, 0] < 0) | (hi[:, 1] < 0)
        bounds[off, 0] = -1
        offsets, items = bin_triangles(bounds, n_tx, n_ty)
        raster_tiles(sxy, inv_w, world, src, swapped, offsets, items,
                     W, H, tile, out_id, out_bary, out_point, out_depth)
    return GBuffer(out_id, out_bary, out_point, out_depth, camera)


def rasterize(mesh, camera, near, far, tile=32):
    """Rasterize to a GBuffer. Deterministic for any thread count."""
    return _raster_prepared(_prepare(mesh, camera, near, far), camera, tile)


def raycast_ids(mesh, camera, near, far):
    """Brute-force nearest-triangle ids per pixel (the rasterizer oracle).

    t runs along unit ray directions, so the near/far window differs from
    the rasterizer's camera-depth clip by the pixel cosine; comparisons
    should stick to ids away from edges and clip planes.
    """
    W, H = camera.width, camera.height
    uu, vv = np.meshgrid(np.arange(W), np.arange(H))
    px = np.stack([uu.reshape(-1), vv.reshape(-1)], 1).astype(np.float64)
    _, dirs = sc.generate_rays(camera, px)
    out_id = np.full((H, W), -1, dtype=np.int32)
    out_t = np.full((H, W), np.inf)
    raycast_pixels(camera.center, dirs.reshape(H, W, 3),
                   np.ascontiguousarray(mesh.vertices),
                   np.ascontiguousarray(mesh.faces),
                   near, far, out_id, out_t)
    return out_id


def edge_clearance(mesh, camera, near, far):
    """Per-pixel distance to the nearest projected triangle edge (px)."""
    sxy, _, _, _, _ = _prepare(mesh, camera, near, far)
    W, H = camera.width, camera.height
    out = np.full((H, W), np.inf)
    if len(sxy):
        edge_distance(sxy, len(sxy), W, H, out)
    return out


def shade(gbuffer, cond, value_maps=None, background=0.0):
    """Blend-weighted source colors at the gbuffer intersection points."""
    model = cond.model
    if value_maps is None:
        value_maps = [v.pixels for v in cond.views]
    cam = gbuffer.camera
    cover = gbuffer.covered
    H, W = cover.shape
    c_val = np.asarray(value_maps[0]).shape[-1]
    image = np.full((H, W, c_val), float(background))
    pts = gbuffer.point[cover]
    P = len(pts)
    if P == 0:
        return image
    with no_grad():
        f_parts, c_parts, masks, dds = [], [], [], []
        for i, view in enumerate(cond.views):
            uv, _, valid = sc.project_points(view.camera, pts)
            m = valid.astype(np.float64)[:, None]
            f_i = mul(bilinear_gather(cond.feature_maps[i].features, uv),
                      Tensor(m))
            c_i = mul(bilinear_gather(
                Tensor(np.asarray(value_maps[i], dtype=np.float64)), uv),
                Tensor(m))
            f_parts.append(f_i)
            c_parts.append(c_i)
            masks.append(valid)
            dds.append(_unit(view.camera.center[None, :] - pts) * m)
        N = len(cond.views)
        f = Tensor(np.stack([t.numpy() for t in f_parts], axis=1))
        c = Tensor(np.stack([t.numpy() for t in c_parts], axis=1))
        mask = np.stack(masks, axis=1).reshape(P, N)
        dd = np.stack(dds, axis=1).reshape(P, N, 3)
        d = _unit(pts - cam.center[None, :])
        omega, _ = model.blend(f, Tensor(d), Tensor(dd), mask)
        out = blend(omega, c).numpy()
    image[cover] = out
    return image


def render_realtime(mesh, cond, camera, near, far, tile=32, threads=None,
                    value_maps=None, background=0.0):
    """rasterize + shade with stage timings. Source features come from the
    condition, which is built once per scene, not per frame."""
    prev = get_num_threads()
    if threads is not None:
        set_num_threads(threads)
    try:
        t0 = time.perf_counter()
        prep = _prepare(mesh, camera, near, far)
        t1 = time.perf_counter()
        gb = _raster_prepared(prep, camera, tile)
        t2 = time.perf_counter()
        image = shade(gb, cond, value_maps=value_maps, background=background)
        t3 = time.perf_counter()
    finally:
        set_num_threads(prev)
    geometry_ms = (t1 - t0) * 1e3
    raster_ms = (t2 - t1) * 1e3
    shade_ms = (t3 - t2) * 1e3
    total_ms = (t3 - t0) * 1e3
    timing = FrameTiming(geometry_ms, raster_ms, shade_ms, total_ms,
                         fps=1000.0 / total_ms if total_ms > 0 else np.inf)
    return image, timing


def visible_faces(mesh, cameras, near, far, tile=32):
    """Set of face ids that win at least one pixel in at least one view."""
    won = np.zeros(len(mesh.faces), dtype=bool)
    for cam in cameras:
        ids = rasterize(mesh, cam, near, far, tile=tile).tri_id
        hit = ids[ids >= 0]
        won[np.unique(hit)] = True
    return won


def prune_faces(mesh, cameras, near=1.0e-3, far=1.0e3, tile=32):
    """Drop faces that no training camera ever sees (never win a pixel).

    Id remapping is monotone, so depth-test tie-breaks are preserved and
    re-rendered images match the pre-prune renders exactly.
    """
    if mesh.is_empty:
        return mesh
    won = visible_faces(mesh, cameras, near, far, tile=tile)
    return compact_vertices(TriMesh(mesh.vertices, mesh.faces[won],
                                    mesh.normals))
