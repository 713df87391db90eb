"""Training: photometric + depth objective, PET adapters, eval helpers."""

import csv
import hashlib
import os
from dataclasses import dataclass

import numpy as np

from . import scene as sc
from .autodiff import (Tape, Tensor, add, backward, log, mul, no_grad,
                       save_blob, sub, sum_reduce)
from .autodiff.nn import Adam, attach_lora, cosine_lr
from .oracle import render_ground_truth, scene_bbox
from .renderer import SceneModel, build_condition, ray_box_range, render_rays, render_view


@dataclass
class TrainConfig:
    rays_per_batch: int = 1024
    scenes_per_batch: int = 2
    n_source_views: int = 4
    k_samples: int = 64
    lr: float = 5e-4
    lr_min: float = 1e-5
    steps: int = 2000
    beta_depth: float = 1.0
    seed: int = 0
    log_every: int = 10
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("rays_per_batch", "scenes_per_batch", "n_source_views",
                     "k_samples", "lr", "steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.beta_depth < 0:
            raise ValueError("beta_depth must be >= 0")


@dataclass
class TrainScene:
    """One scene's supervision: posed views, ray-length depths, labels."""

    views: list                      # ViewImage
    depths: list                     # [H, W] float, +inf on misses
    labels: list = None              # [H, W] int, -1 on misses (optional)
    bbox: tuple = None               # (lo, hi)
    name: str = ""


def scene_from_oracle(scene, cameras, name=""):
    """Render analytic ground truth into a TrainScene."""
    views, depths, labels = [], [], []
    for cam in cameras:
        img, dep, lab = render_ground_truth(scene, cam)
        views.append(img)
        depths.append(dep)
        labels.append(lab)
    return TrainScene(views=views, depths=depths, labels=labels,
                      bbox=scene_bbox(scene), name=name)


def select_sources(views, target_idx, n):
    """Indices of the n views whose camera centers sit nearest the target."""
    centers = np.stack([v.camera.center for v in views])
    d = np.linalg.norm(centers - centers[target_idx], axis=1)
    order = [i for i in np.argsort(d, kind="stable") if i != target_idx]
    if len(order) < n:
        raise ValueError(f"need {n} source views, scene has {len(order)} others")
    return [int(i) for i in order[:n]]


# -------------------------------------------------------------------- loss


def compute_loss(rendered, gt, rendered_depth, gt_depth, beta):
    """Eq.-style objective: mean ||C_hat - C||^2 + beta * masked depth MSE.

    Returns (total, l_rgb, l_depth) Tensors. gt_depth entries of +inf are
    misses and drop out of the depth term.
    """
    gt = np.asarray(gt, dtype=np.float64)
    R = gt.shape[0]
    diff = sub(rendered, Tensor(gt))
    l_rgb = mul(sum_reduce(mul(diff, diff)), Tensor(1.0 / R))

    gt_depth = np.asarray(gt_depth, dtype=np.float64)
    valid = np.isfinite(gt_depth)
    gt_safe = np.where(valid, gt_depth, 0.0)
    m = valid.astype(np.float64)
    ddiff = mul(sub(rendered_depth, Tensor(gt_safe)), Tensor(m))
    l_depth = mul(sum_reduce(mul(ddiff, ddiff)), Tensor(1.0 / max(valid.sum(), 1)))
    return add(l_rgb, mul(l_depth, Tensor(float(beta)))), l_rgb, l_depth


# -------------------------------------------------------------- train loop


def _hit_pixels(scene_rec, view_idx, cache):
    """Pixel indices whose rays cross the scene bbox (cached per view)."""
    key = (id(scene_rec), view_idx)
    if key not in cache:
        cam = scene_rec.views[view_idx].camera
        uu, vv = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
        px = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1).astype(np.float64)
        o, d = sc.generate_rays(cam, px)
        _, _, hit = ray_box_range(o, d, *scene_rec.bbox)
        cache[key] = (px, o, d, np.nonzero(hit)[0])
    return cache[key]


def train(config, scenes, model=None, log_path=None, ckpt_path=None):
    """Optimize a SceneModel on TrainScenes. Returns (model, curve).

    curve rows: (step, l_rgb, l_depth, total, lr). Deterministic for a
    fixed config seed (scene/target/ray draws all come from it).
    """
    for s in scenes:
        if len(s.views) < config.n_source_views + 1:
            raise ValueError(
                f"scene {s.name!r} has {len(s.views)} views; "
                f"need at least N+1 = {config.n_source_views + 1}")
    if model is None:
        model = SceneModel(np.random.default_rng(config.seed))
    params = [p for _, p in model.named_parameters()]
    opt = Adam(params, lr=config.lr)
    master = np.random.default_rng(np.random.SeedSequence((config.seed, 0xA11)))
    pixel_cache = {}
    curve = []

    for step in range(config.steps):
        lr = cosine_lr(step, config.steps, config.lr, config.lr_min)
        acc = {}
        rgb_v = dep_v = tot_v = 0.0
        for b in range(config.scenes_per_batch):
            si = int(master.integers(len(scenes)))
            rec = scenes[si]
            ti = int(master.integers(len(rec.views)))
            src = select_sources(rec.views, ti, config.n_source_views)
            px, origins, dirs, hit_idx = _hit_pixels(rec, ti, pixel_cache)
            take = min(config.rays_per_batch, hit_idx.size)
            sel = master.choice(hit_idx, size=take, replace=False)
            gt_rgb = rec.views[ti].pixels.reshape(-1, 3)[sel]
            gt_dep = rec.depths[ti].reshape(-1)[sel]
            ray_rng = np.random.default_rng(
                np.random.SeedSequence((config.seed, step, b)))

            with Tape() as tape:
                cond = build_condition(model, [rec.views[i] for i in src],
                                       rec.bbox)
                res = render_rays(cond, origins[sel], dirs[sel],
                                  K=config.k_samples, stratified=True,
                                  rng=ray_rng)
                total, l_rgb, l_depth = compute_loss(
                    res.pixel, gt_rgb, res.depth, gt_dep, config.beta_depth)
                scaled = mul(total, Tensor(1.0 / config.scenes_per_batch))
                grads = backward(tape, scaled)
            for p, g in grads.items():
                if p in acc:
                    acc[p].data.add_(g.data)
                else:
                    acc[p] = g
            rgb_v += l_rgb.item() / config.scenes_per_batch
            dep_v += l_depth.item() / config.scenes_per_batch
            tot_v += total.item() / config.scenes_per_batch

        opt.step(acc, lr=lr)
        curve.append((step, rgb_v, dep_v, tot_v, lr))
        if ckpt_path and config.checkpoint_every and \
                (step + 1) % config.checkpoint_every == 0:
            save_blob(ckpt_path, model.state_arrays())
    if ckpt_path:
        save_blob(ckpt_path, model.state_arrays())
    if log_path:
        write_curve(log_path, curve)
    return model, curve


def write_curve(path, curve):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "l_rgb", "l_depth", "total", "lr"])
        for row in curve:
            w.writerow([row[0]] + [f"{v:.10g}" for v in row[1:]])


# -------------------------------------------------------------- evaluation


def psnr(img, ref):
    """Peak signal-to-noise in dB for [0, 1] images (pred clipped first)."""
    a = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    mse = float(np.mean((a - np.asarray(ref, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return -10.0 * np.log10(mse)


def render_target(model, rec, target_idx, n_source=4, K=64, chunk=1024,
                  channels=("rgb", "depth", "opacity")):
    """Condition on the target's nearest sources and render its camera."""
    src = select_sources(rec.views, target_idx, n_source)
    with no_grad():
        cond = build_condition(model, [rec.views[i] for i in src], rec.bbox)
        return render_view(cond, rec.views[target_idx].camera,
                           channels=channels, K=K, chunk=chunk)


def uniform_blend_baseline(rec, target_idx, n_source=4):
    """Reproject oracle-depth surface points into the sources and average.

    The no-learning reference: blend weights fixed at 1/N_valid, geometry
    taken from the oracle depth map. Misses stay black.
    """
    cam = rec.views[target_idx].camera
    src = select_sources(rec.views, target_idx, n_source)
    H, W = cam.height, cam.width
    uu, vv = np.meshgrid(np.arange(W), np.arange(H))
    px = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1).astype(np.float64)
    o, d = sc.generate_rays(cam, px)
    dep = rec.depths[target_idx].reshape(-1)
    hit = np.isfinite(dep)
    pts = o[hit] + dep[hit, None] * d[hit]
    total = np.zeros((pts.shape[0], 3))
    count = np.zeros((pts.shape[0], 1))
    for i in src:
        view = rec.views[i]
        uv, _, valid = sc.project_points(view.camera, pts)
        if not valid.any():
            continue
        samp = sc.bilinear_sample_many(view.pixels, uv[valid])
        total[valid] += samp
        count[valid] += 1.0
    out = np.zeros((H * W, 3))
    out[hit] = total / np.maximum(count, 1.0)
    return out.reshape(H, W, 3)


# --------------------------------------------------------------------- PET

# q/k/v/out projections of the three attention types; the conv trunk,
# heads, and blend MLP stay frozen
PET_PATTERNS = [
    ".geo.q", ".geo.kv", ".geo.out",
    ".app.q", ".app.k", ".app.v", ".app.out",
    ".occ.q", ".occ.k", ".occ.v", ".occ.out",
]


def attach_adapters(model, rank=4, seed=0, scale=1.0, patterns=None):
    """Wrap the transformer projections with zero-init low-rank adapters."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x10A)))
    return attach_lora(model, rank, patterns or PET_PATTERNS, rng, scale=scale)


def adapter_parameters(wrapped):
    out = []
    for _, ad in wrapped:
        out.extend(ad.adapter_parameters())
    return out


def frozen_checksum(model):
    """SHA-256 over every non-adapter array, in sorted name order."""
    h = hashlib.sha256()
    for name, arr in sorted(model.state_arrays().items()):
        if "lora_" in name:
            continue
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def one_hot_labels(labels, n_classes):
    """[H, W] int labels (-1 = miss) -> [H, W, n_classes] simplex rows."""
    lab = np.asarray(labels)
    out = np.zeros(lab.shape + (n_classes,))
    m = lab >= 0
    out[m, lab[m]] = 1.0
    return out


def label_task_loss(lifted, gt_labels):
    """Cross-entropy of blended label simplexes against oracle labels.

    lifted: [R, L] Tensor (rows sum to the pixel opacity); gt_labels [R]
    ints with -1 for misses, which are masked out.
    """
    y = np.asarray(gt_labels)
    valid = y >= 0
    L = lifted.shape[1]
    onehot = np.zeros((y.shape[0], L))
    onehot[valid, y[valid]] = 1.0
    picked = sum_reduce(mul(lifted, Tensor(onehot)), axis=1)
    nll = mul(log(add(picked, Tensor(1.0e-6))), Tensor(-valid.astype(np.float64)))
    return mul(sum_reduce(nll), Tensor(1.0 / max(int(valid.sum()), 1)))


def pet_train(model, wrapped, scenes, steps=500, rays=128, K=32, n_source=4,
              lr=5e-4, seed=0, log_path=None):
    """Tune only the attached adapters on the label-lifting task.

    The conditioning (encoder + volume) is frozen, so it is built once per
    (scene, target) pair outside the tape and reused across steps.
    Returns the loss curve as a list of (step, loss) pairs.
    """
    for s in scenes:
        if s.labels is None:
            raise ValueError("PET label task needs scenes with label maps")
    n_classes = 1 + max(int(np.max(l)) for s in scenes for l in s.labels)
    params = adapter_parameters(wrapped)
    opt = Adam(params, lr=lr)
    master = np.random.default_rng(np.random.SeedSequence((seed, 0x9E7)))
    pixel_cache = {}
    cond_cache = {}
    curve = []
    for step in range(steps):
        si = int(master.integers(len(scenes)))
        rec = scenes[si]
        ti = int(master.integers(len(rec.views)))
        key = (id(rec), ti)
        if key not in cond_cache:
            src = select_sources(rec.views, ti, n_source)
            with no_grad():
                cond = build_condition(model, [rec.views[i] for i in src],
                                       rec.bbox)
            priors = [one_hot_labels(rec.labels[i], n_classes) for i in src]
            cond_cache[key] = (cond, priors)
        cond, priors = cond_cache[key]
        px, origins, dirs, hit_idx = _hit_pixels(rec, ti, pixel_cache)
        take = min(rays, hit_idx.size)
        sel = master.choice(hit_idx, size=take, replace=False)
        gt_lab = rec.labels[ti].reshape(-1)[sel]
        ray_rng = np.random.default_rng(np.random.SeedSequence((seed, step)))
        with Tape() as tape:
            res = render_rays(cond, origins[sel], dirs[sel], K=K,
                              stratified=True, rng=ray_rng,
                              value_maps=priors)
            loss = label_task_loss(res.pixel, gt_lab)
            grads = backward(tape, loss)
        opt.step(grads, lr=lr)
        curve.append((step, loss.item()))
    if log_path:
        os.makedirs(os.path.dirname(os.path.abspath(log_path)), exist_ok=True)
        with open(log_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "task_loss"])
            w.writerows(curve)
    return curve
