"""Procedural analytic-SDF scenes plus a sphere-traced reference renderer.

Generates the desk-scale datasets (images, ray-length depths, instance
labels, cameras) that every training and acceptance test runs against,
and exposes the exact geometry for metric oracles.
"""

import json
import os

import numpy as np
from scipy.spatial import cKDTree

from . import scene as sc

HIT_EPS = 1e-4
MAX_STEPS = 256


class AnalyticScene:
    """Union of exact SDF primitives inside an axis-aligned bounding box.

    primitives: list of dicts
      {"kind": "sphere", "center", "radius", "albedo", "label"}
      {"kind": "box", "center", "half", "albedo", "label"}
      {"kind": "rounded-union", "centers" (2x3), "radii" (2), "blend",
       "albedo", "label"}   # smooth-min pair of spheres, still 1-Lipschitz
    light: unit vector pointing from surfaces toward the light.
    """

    def __init__(self, primitives, bounds_half=1.0, light=(0.3, -0.5, 0.8)):
        labels = sorted(p["label"] for p in primitives)
        if labels != list(range(len(primitives))):
            raise ValueError(f"labels must be contiguous from 0, got {labels}")
        self.primitives = primitives
        self.bounds_half = float(bounds_half)
        l = np.asarray(light, dtype=np.float64)
        self.light = l / np.linalg.norm(l)

    def to_dict(self):
        prims = []
        for p in self.primitives:
            q = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in p.items()}
            prims.append(q)
        return {
            "bounds_half": self.bounds_half,
            "light": self.light.tolist(),
            "primitives": prims,
        }

    @classmethod
    def from_dict(cls, d):
        prims = []
        for p in d["primitives"]:
            q = dict(p)
            for k in ("center", "half", "centers", "radii", "albedo"):
                if k in q:
                    q[k] = np.asarray(q[k], dtype=np.float64)
            prims.append(q)
        return cls(prims, d["bounds_half"], d["light"])


def _sphere_sdf(pts, center, radius):
    return np.linalg.norm(pts - center, axis=-1) - radius


def _box_sdf(pts, center, half):
    q = np.abs(pts - center) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside


def _smooth_min(a, b, k):
    # Quilez polynomial smooth min; gradient is a convex combination of the
    # operands' gradients, so the 1-Lipschitz bound survives the blend.
    h = np.clip(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
    return b + (a - b) * h - k * h * (1.0 - h)


def _primitive_sdf(prim, pts):
    kind = prim["kind"]
    if kind == "sphere":
        return _sphere_sdf(pts, prim["center"], prim["radius"])
    if kind == "box":
        return _box_sdf(pts, prim["center"], prim["half"])
    if kind == "rounded-union":
        d0 = _sphere_sdf(pts, prim["centers"][0], prim["radii"][0])
        d1 = _sphere_sdf(pts, prim["centers"][1], prim["radii"][1])
        return _smooth_min(d0, d1, prim["blend"])
    raise ValueError(f"unknown primitive kind {kind!r}")


def scene_sdf_many(scene, pts):
    """Vectorized scene SDF. pts (N, 3) -> (sdf (N,), albedo (N,3), label (N,))."""
    pts = np.asarray(pts, dtype=np.float64)
    dists = np.stack([_primitive_sdf(p, pts) for p in scene.primitives], axis=0)
    best = np.argmin(dists, axis=0)
    sdf = dists[best, np.arange(pts.shape[0])]
    albedos = np.stack([np.asarray(p["albedo"]) for p in scene.primitives])
    labels = np.array([p["label"] for p in scene.primitives])
    return sdf, albedos[best], labels[best]


def scene_sdf(scene, point):
    d, a, l = scene_sdf_many(scene, np.asarray(point, dtype=np.float64)[None, :])
    return float(d[0]), a[0], int(l[0])


def sdf_normal_many(scene, pts, eps=1e-5):
    pts = np.asarray(pts, dtype=np.float64)
    n = np.empty_like(pts)
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = eps
        dp, _, _ = scene_sdf_many(scene, pts + step)
        dm, _, _ = scene_sdf_many(scene, pts - step)
        n[:, axis] = dp - dm
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.maximum(norm, 1e-12)


def sphere_trace(scene, origins, dirs, t_max):
    """March each ray by the SDF bound. Returns (t, hit); t = +inf on miss."""
    n = origins.shape[0]
    t = np.zeros(n)
    hit = np.zeros(n, dtype=bool)
    alive = np.ones(n, dtype=bool)
    for _ in range(MAX_STEPS):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        p = origins[idx] + t[idx, None] * dirs[idx]
        d, _, _ = scene_sdf_many(scene, p)
        close = d < HIT_EPS
        hit[idx[close]] = True
        alive[idx[close]] = False
        adv = idx[~close]
        t[adv] += d[~close]
        alive[adv[t[adv] > t_max]] = False
    if hit.any():
        t[hit] = _refine_hits(scene, origins[hit], dirs[hit], t[hit])
    t = np.where(hit, t, np.inf)
    return t, hit


def _refine_hits(scene, origins, dirs, t, iters=3, eps=1e-6):
    # Newton steps on f(t) = sdf(o + t d); pure marching converges slowly
    # at grazing incidence and would miss the 1e-3 depth tolerance there.
    for _ in range(iters):
        p = origins + t[:, None] * dirs
        f, _, _ = scene_sdf_many(scene, p)
        fp, _, _ = scene_sdf_many(scene, p + eps * dirs)
        fm, _, _ = scene_sdf_many(scene, p - eps * dirs)
        g = (fp - fm) / (2.0 * eps)
        g = np.where(np.abs(g) < 0.05, np.copysign(0.05, g), g)
        t = np.maximum(t - f / g, 0.0)
    return t


def render_ground_truth(scene, camera):
    """Sphere-traced image / ray-length depth / per-pixel instance label."""
    H, W = camera.height, camera.width
    vv, uu = np.mgrid[0:H, 0:W]
    px = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1).astype(np.float64)
    origins, dirs = sc.generate_rays(camera, px)
    # Far bound: camera distance to scene center plus the bounding diagonal.
    t_max = np.linalg.norm(camera.center) + 4.0 * scene.bounds_half
    t, hit = sphere_trace(scene, origins, dirs, t_max)

    image = np.zeros((H * W, 3))
    labels = np.full(H * W, -1, dtype=np.int32)
    if hit.any():
        p_hit = origins[hit] + t[hit, None] * dirs[hit]
        _, albedo, label = scene_sdf_many(scene, p_hit)
        normal = sdf_normal_many(scene, p_hit)
        lambert = np.maximum(0.0, normal @ scene.light)[:, None]
        image[hit] = np.clip(albedo * (lambert + 0.1), 0.0, 1.0)
        labels[hit] = label
    gt_img = sc.ViewImage(image.reshape(H, W, 3), camera)
    return gt_img, t.reshape(H, W), labels.reshape(H, W)


def chamfer(points_a, points_b):
    """Symmetric mean nearest-neighbor distance, halved."""
    a = np.asarray(points_a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(points_b, dtype=np.float64).reshape(-1, 3)
    if a.size == 0 or b.size == 0:
        raise ValueError("chamfer: empty point set")
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    return 0.5 * (d_ab.mean() + d_ba.mean())


def sample_surface(scene, n, seed=0):
    """Rejection-project random points onto the zero set (oracle point sets)."""
    rng = np.random.default_rng(seed)
    out = []
    for attempt in range(20):
        if sum(len(o) for o in out) >= n:
            break
        pts = rng.uniform(-scene.bounds_half, scene.bounds_half, size=(4 * n, 3))
        for _ in range(12):  # Newton-style projection along the SDF gradient
            d, _, _ = scene_sdf_many(scene, pts)
            nrm = sdf_normal_many(scene, pts)
            pts = pts - d[:, None] * nrm
        d, _, _ = scene_sdf_many(scene, pts)
        keep = np.abs(d) < 1e-5
        out.append(pts[keep])
    total = np.concatenate(out) if out else np.empty((0, 3))
    if len(total) < n:
        raise RuntimeError(f"surface sampling stalled at {len(total)}/{n} points")
    return total[:n]


# ---------------------------------------------------------------------------
# Seeded scene + capture generation


def make_scene(seed):
    """2 to 5 random primitives clustered around the working-volume center.

    Sizes and placement are chosen so objects overlap occasionally (real
    occlusion) and fill a useful fraction of each frame."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    half = 1.0
    prims = []
    for i in range(n):
        kind = ["sphere", "box", "rounded-union"][int(rng.integers(0, 3))]
        albedo = rng.uniform(0.25, 0.95, size=3)
        if kind == "sphere":
            r = rng.uniform(0.22, 0.42)
            c = rng.uniform(-0.5, 0.5, size=3)
            c = np.clip(c, -(half - r - 0.05), half - r - 0.05)
            prims.append({"kind": kind, "center": c, "radius": r,
                          "albedo": albedo, "label": i})
        elif kind == "box":
            h = rng.uniform(0.15, 0.32, size=3)
            c = rng.uniform(-0.5, 0.5, size=3)
            c = np.clip(c, -(half - h - 0.05), half - h - 0.05)
            prims.append({"kind": kind, "center": c, "half": h,
                          "albedo": albedo, "label": i})
        else:
            r = rng.uniform(0.16, 0.32, size=2)
            c0 = rng.uniform(-0.45, 0.45, size=3)
            c1 = c0 + rng.uniform(-0.35, 0.35, size=3)
            c0 = np.clip(c0, -(half - r[0] - 0.15), half - r[0] - 0.15)
            c1 = np.clip(c1, -(half - r[1] - 0.15), half - r[1] - 0.15)
            prims.append({"kind": kind, "centers": np.stack([c0, c1]),
                          "radii": r, "blend": float(rng.uniform(0.05, 0.2)),
                          "albedo": albedo, "label": i})
    light = rng.normal(size=3)
    light[2] = abs(light[2]) + 0.5
    return AnalyticScene(prims, bounds_half=half, light=light)


def scene_bbox(scene, margin=0.1):
    """Tight axis-aligned content bounds plus a margin, as (lo, hi)."""
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for p in scene.primitives:
        if p["kind"] == "sphere":
            lo = np.minimum(lo, p["center"] - p["radius"])
            hi = np.maximum(hi, p["center"] + p["radius"])
        elif p["kind"] == "box":
            lo = np.minimum(lo, p["center"] - p["half"])
            hi = np.maximum(hi, p["center"] + p["half"])
        else:
            for c, r in zip(p["centers"], p["radii"]):
                lo = np.minimum(lo, c - r)
                hi = np.maximum(hi, c + r)
    return lo - margin, hi + margin


def make_cameras(n_views=16, width=64, height=64, radius=2.4, seed=0):
    """Inward-facing cameras on a sphere (Fibonacci spiral) framing the
    content region; ray samples outside a given frustum are handled by
    projection validity masks downstream."""
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * np.pi)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    cams = []
    f = 1.05 * width
    K = [[f, 0, width / 2], [0, f, height / 2], [0, 0, 1]]
    for i in range(n_views):
        z = 1.0 - 2.0 * (i + 0.5) / n_views
        rho = np.sqrt(max(0.0, 1.0 - z * z))
        ang = golden * i + phase
        eye = radius * np.array([rho * np.cos(ang), rho * np.sin(ang), z])
        cams.append(sc.look_at_camera(eye, np.zeros(3), K, width, height))
    return cams


def write_dataset(out_dir, scene, cameras, renders=None):
    """Dataset layout: images/NNN.png, cams/NNN.json, depths/NNN.f32,
    labels/NNN.i32, scene.json."""
    for sub in ("images", "cams", "depths", "labels"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    for i, cam in enumerate(cameras):
        gt_img, depth, labels = (
            renders[i] if renders is not None else render_ground_truth(scene, cam)
        )
        tag = f"{i:03d}"
        sc.write_png(os.path.join(out_dir, "images", tag + ".png"), gt_img.pixels)
        with open(os.path.join(out_dir, "cams", tag + ".json"), "w") as f:
            f.write(cam.to_json())
        # +inf does not survive float32 files; encode misses as 0.
        d32 = np.where(np.isfinite(depth), depth, 0.0).astype(np.float32)
        sc.write_raw(os.path.join(out_dir, "depths", tag + ".f32"), d32)
        sc.write_raw(os.path.join(out_dir, "labels", tag + ".i32"),
                     labels.astype(np.int32))
    with open(os.path.join(out_dir, "scene.json"), "w") as f:
        json.dump(scene.to_dict(), f, sort_keys=True, indent=1)
        f.write("\n")


def generate_dataset(out_dir, seed, n_views=16, width=64, height=64):
    scene = make_scene(seed)
    cameras = make_cameras(n_views, width, height, seed=seed)
    write_dataset(out_dir, scene, cameras)
    return scene, cameras
