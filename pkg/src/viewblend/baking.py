"""Bake the geometry branch to a triangle mesh.

Depth maps rendered per source view, TSDF fusion over a voxel grid,
marching cubes, then raster-based face pruning and an optional joint
mesh+shader finetune against the source images.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import scene as sc
from .appearance import blend
from .autodiff import (Tape, Tensor, add, backward, concat, exp, log,
                       mean_reduce, mul, reshape, sub, sum_reduce)
from .autodiff import gather as gather_rows
from .autodiff.nn import Adam
from .diffops import bilinear_gather, project_points_t
from .mesh import TriMesh, marching_cubes
from .renderer import render_view

TAU_VOXELS = 3.0   # truncation distance in voxel units
GRID_M = 64


def render_source_depths(cond, cameras, K=64, chunk=1024, opacity_min=0.5):
    """Depth map per camera; pixels with opacity below the cut are +inf."""
    out = []
    for cam in cameras:
        r = render_view(cond, cam, channels=("depth", "opacity"), K=K,
                        chunk=chunk)
        d = r["depth"].copy()
        d[r["opacity"] < opacity_min] = np.inf
        out.append(d)
    return out


@dataclass
class TsdfGrid:
    values: np.ndarray    # (M, M, M) truncated signed distance / tau, in [-1, 1]
    weights: np.ndarray   # (M, M, M) update counts, 0 = never observed
    bbox: tuple           # (lo, hi) world bounds
    tau: float            # truncation distance, world units

    @property
    def voxel_size(self):
        lo, hi = np.asarray(self.bbox[0], float), np.asarray(self.bbox[1], float)
        return float(((hi - lo) / self.values.shape[0]).max())


def make_tsdf_grid(bbox, m=GRID_M, tau_voxels=TAU_VOXELS):
    lo, hi = np.asarray(bbox[0], float), np.asarray(bbox[1], float)
    h = float(((hi - lo) / m).max())
    return TsdfGrid(values=np.zeros((m, m, m)), weights=np.zeros((m, m, m)),
                    bbox=(lo, hi), tau=tau_voxels * h)


def _voxel_centers(grid):
    m = grid.values.shape[0]
    lo, hi = np.asarray(grid.bbox[0], float), np.asarray(grid.bbox[1], float)
    h = (hi - lo) / m
    ax = [lo[a] + (np.arange(m) + 0.5) * h[a] for a in range(3)]
    X, Y, Z = np.meshgrid(*ax, indexing="ij")
    return np.stack([X, Y, Z], axis=-1).reshape(-1, 3)


def tsdf_integrate(grid, depth, camera):
    """Fuse one depth map into the grid (running truncated average).

    Voxels project into the view; sdf estimate is measured depth minus
    voxel camera depth (positive in front of the surface). Updates apply
    where the estimate exceeds -tau, so space far behind a surface stays
    unobserved rather than hallucinated solid.
    """
    pts = _voxel_centers(grid)
    uv, z, valid = sc.project_points(camera, pts)
    d = np.asarray(depth, dtype=np.float64)
    # nearest-pixel lookup; bilinear across depth edges would invent geometry
    px = np.clip(np.rint(uv[:, 0]).astype(np.int64), 0, camera.width - 1)
    py = np.clip(np.rint(uv[:, 1]).astype(np.int64), 0, camera.height - 1)
    d_pix = d[py, px]
    ok = valid & np.isfinite(d_pix)
    sdf_est = np.where(ok, d_pix - z, -np.inf)
    upd = sdf_est > -grid.tau
    tsdf = np.clip(sdf_est[upd] / grid.tau, -1.0, 1.0)

    shape = grid.values.shape
    v = grid.values.reshape(-1)
    w = grid.weights.reshape(-1)
    idx = np.nonzero(upd)[0]
    v[idx] = (w[idx] * v[idx] + tsdf) / (w[idx] + 1.0)
    w[idx] += 1.0
    grid.values = v.reshape(shape)
    grid.weights = w.reshape(shape)
    return grid


def fuse_depths(depths, cameras, bbox, m=GRID_M, tau_voxels=TAU_VOXELS):
    if len(depths) != len(cameras):
        raise ValueError("depth/camera count mismatch")
    grid = make_tsdf_grid(bbox, m=m, tau_voxels=tau_voxels)
    for d, cam in zip(depths, cameras):
        tsdf_integrate(grid, d, cam)
    return grid


def extract_mesh(grid):
    """Marching cubes over observed voxels of a fused grid."""
    return marching_cubes(grid.values, grid.bbox, iso=0.0,
                          mask=grid.weights > 0)


def bake_mesh(cond, cameras, m=GRID_M, tau_voxels=TAU_VOXELS, K=64,
              chunk=1024, prune_cameras=None):
    """Depths -> TSDF -> marching cubes -> prune. The end-to-end baker."""
    depths = render_source_depths(cond, cameras, K=K, chunk=chunk)
    grid = fuse_depths(depths, cameras, cond.bbox, m=m, tau_voxels=tau_voxels)
    mesh = extract_mesh(grid)
    if not mesh.is_empty and prune_cameras is not None:
        from .raster import prune_faces
        mesh = prune_faces(mesh, prune_cameras)
    return mesh, grid


# ------------------------------------------------------------- finetuning

def _unit_t(v, eps=1e-12):
    """Differentiable row normalization. sqrt(x) spelled exp(0.5 log x)."""
    sq = sum_reduce(mul(v, v), axis=-1, keepdims=True)
    return mul(v, exp(mul(Tensor(-0.5), log(add(sq, Tensor(eps))))))


def _shade_batch(model, cond, verts, faces, tri_id, bary, camera):
    """Blend-shaded colors for a pixel batch, differentiable in ``verts``.

    Coverage is fixed: which triangle a pixel hits and its barycentric
    coords are detached, gradients reach vertices only through the
    interpolated point (and from there the projections into each view).
    """
    idx = faces[tri_id]
    pt = None
    for k in range(3):
        term = mul(gather_rows(verts, idx[:, k]), Tensor(bary[:, k:k + 1]))
        pt = term if pt is None else add(pt, term)
    d = _unit_t(sub(pt, Tensor(camera.center[None, :])))

    f_parts, c_parts, dd_parts, masks = [], [], [], []
    B = idx.shape[0]
    for i, view in enumerate(cond.views):
        uv, _, valid = project_points_t(view.camera, pt)
        m = Tensor(valid.astype(np.float64)[:, None])
        f_i = mul(bilinear_gather(cond.feature_maps[i].features, uv), m)
        c_i = mul(bilinear_gather(Tensor(view.pixels), uv), m)
        dd_i = mul(_unit_t(sub(Tensor(view.camera.center[None, :]), pt)), m)
        f_parts.append(reshape(f_i, (B, 1, f_i.shape[-1])))
        c_parts.append(reshape(c_i, (B, 1, c_i.shape[-1])))
        dd_parts.append(reshape(dd_i, (B, 1, 3)))
        masks.append(valid)
    f = concat(f_parts, axis=1)
    c = concat(c_parts, axis=1)
    dd = concat(dd_parts, axis=1)
    mask = np.stack(masks, axis=1)
    omega, _ = model.blend(f, d, dd, mask)
    return blend(omega, c)


def finetune_mesh_shader(mesh, cond, views, steps=None, seconds=None,
                         lr=1e-3, vertex_lr=1e-3, tune_vertices=True,
                         voxel=None, pixels_per_step=512, near=1e-3,
                         far=1e3, seed=0, prune=True):
    """Joint mesh + shader refinement against the source images.

    Each step rasterizes one view with the current mesh, samples covered
    pixels, shades them through the blend MLP and descends a photometric
    loss. Vertex gradients use the fixed-coverage approximation; the per
    step vertex displacement is clamped to half a voxel. Faces no camera
    sees are pruned once per epoch (one pass over the views), which resets
    the vertex optimizer state since indices are remapped.

    Budget is ``steps`` or ``seconds``; if both are given, whichever limit
    hits first stops the loop. A zero budget returns the inputs unchanged.
    Returns (mesh, model, curve) with the blend params updated in place.
    """
    from .raster import prune_faces, rasterize

    model = cond.model
    if steps is None and seconds is None:
        raise ValueError("need a steps or seconds budget")
    if (steps is not None and steps <= 0) or \
            (seconds is not None and seconds <= 0):
        return mesh, model, []
    if mesh.is_empty:
        raise ValueError("cannot finetune an empty mesh")
    if voxel is None:
        lo, hi = np.asarray(cond.bbox[0], float), np.asarray(cond.bbox[1], float)
        voxel = float(((hi - lo) / GRID_M).max())
    cap = 0.5 * voxel
    cams = [v.camera for v in views]
    rng = np.random.default_rng(seed)

    shader_params = model.blend.parameters()
    opt_s = Adam(shader_params, lr=lr)
    verts = Tensor(mesh.vertices.copy(), requires_grad=tune_vertices,
                   name="finetune.verts")
    faces = mesh.faces
    opt_v = Adam([verts], lr=vertex_lr) if tune_vertices else None

    def clamp_step(_p, delta):
        return delta.clamp(-cap, cap)

    curve = []
    gb_cache = {}  # per-view gbuffers, valid only while geometry is static
    t0 = time.perf_counter()
    step = 0
    epoch_len = len(views)
    while True:
        if steps is not None and step >= steps:
            break
        if seconds is not None and time.perf_counter() - t0 >= seconds:
            break
        vi = step % epoch_len
        view = views[vi]
        if tune_vertices:
            gb = rasterize(TriMesh(verts.numpy(), faces), view.camera,
                           near, far)
        else:
            if vi not in gb_cache:
                gb_cache[vi] = rasterize(TriMesh(verts.numpy(), faces),
                                         view.camera, near, far)
            gb = gb_cache[vi]
        ids = gb.tri_id.reshape(-1)
        hit = np.nonzero(ids >= 0)[0]
        if hit.size == 0:
            step += 1
            continue
        take = min(pixels_per_step, hit.size)
        sel = rng.choice(hit, size=take, replace=False)
        gt = view.pixels.reshape(-1, 3)[sel]
        bary = gb.bary.reshape(-1, 3)[sel]

        with Tape() as tape:
            out = _shade_batch(model, cond, verts, faces, ids[sel], bary,
                               view.camera)
            diff = sub(out, Tensor(gt))
            loss = mean_reduce(mul(diff, diff))
            grads = backward(tape, loss)
        opt_s.step(grads)
        if tune_vertices and verts in grads:
            opt_v.step({verts: grads[verts]}, update_clamp=clamp_step)
        curve.append((step, loss.item()))
        step += 1

        if prune and (step % epoch_len == 0 or
                      (steps is not None and step >= steps)):
            pruned = prune_faces(TriMesh(verts.numpy(), faces), cams,
                                 near=near, far=far)
            if len(pruned.faces) != len(faces):
                faces = pruned.faces
                verts = Tensor(pruned.vertices.copy(),
                               requires_grad=tune_vertices,
                               name="finetune.verts")
                if tune_vertices:
                    opt_v = Adam([verts], lr=vertex_lr)
                gb_cache.clear()

    final = TriMesh(verts.numpy(), faces)
    return final, model, curve
