"""SDF volumetric rendering: ray sampling, NeuS alpha, compositing, lifting.

One internal ray path (_render_rays) serves both RGB rendering and
property lifting; the lifted channel only swaps which per-view maps get
blended, so SDF, alpha, and blend weights are shared bitwise.
"""

from dataclasses import dataclass

import numpy as np

from . import scene as sc
from .appearance import BlendMLP, blend
from .autodiff import (Parameter, Tensor, add, concat, div, exp, mul, no_grad,
                       relu, reshape, sigmoid, sub, sum_reduce)
from .autodiff.nn import Module
from .diffops import bilinear_gather
from .encoder import (ConvEncoder, FeatureVolume, UNet3D, build_feature_volume,
                      refine_volume, sample_volume)
from .geometry import GeometryBranch

ALPHA_CEIL = 1.0 - 1.0e-6


class DensityParams(Module):
    """Learnable NeuS sharpness; inv_std = exp(rate * raw) keeps it positive.

    rate = 10 so Adam (whose per-step movement in raw is ~lr regardless of
    gradient scale) can sweep inv_std across orders of magnitude within a
    few thousand steps; with rate 1 it crawls.
    """

    RATE = 10.0

    def __init__(self, init_inv_std=10.0):
        self.raw = Parameter(np.log(float(init_inv_std)) / self.RATE,
                             name="density.raw")

    def inv_std(self):
        return exp(mul(self.raw, Tensor(self.RATE)))


class SceneModel(Module):
    """Everything learnable: encoder, volume refiner, two branches, density."""

    def __init__(self, rng, c_feat=16, c_vol=16, d_model=32, blocks=2,
                 heads=2, grid=32):
        self.encoder = ConvEncoder(rng, c_out=c_feat)
        self.unet = UNet3D(2 * c_feat, c_vol, rng)
        self.geometry = GeometryBranch(rng, c_vol=c_vol, c_feat=c_feat,
                                       d=d_model, blocks=blocks, heads=heads)
        self.blend = BlendMLP(rng, c_feat=c_feat)
        self.density = DensityParams()
        self.grid = grid


@dataclass
class SceneCondition:
    """Frozen per-scene conditioning: source views + their features + volume."""

    model: SceneModel
    views: list
    feature_maps: list
    volume: FeatureVolume
    bbox: tuple


def build_condition(model, views, bbox, grid=None):
    maps = model.encoder.encode_views(views)
    raw, valid = build_feature_volume(maps, bbox, grid or model.grid)
    vol = refine_volume(model.unet, raw, bbox, valid)
    return SceneCondition(model=model, views=list(views), feature_maps=maps,
                          volume=vol, bbox=bbox)


# ---------------------------------------------------------------- sampling

def sample_ray_batch(near, far, K, stratified=False, rng=None):
    """t values [R, K], ascending, one per bin. near/far are [R] arrays."""
    if K < 2:
        raise ValueError("need K >= 2 samples per ray")
    near = np.asarray(near, dtype=np.float64)[:, None]
    far = np.asarray(far, dtype=np.float64)[:, None]
    idx = np.arange(K, dtype=np.float64)[None, :]
    if stratified:
        u = rng.random((near.shape[0], K))
    else:
        u = 0.5
    return near + (idx + u) / K * (far - near)


def sample_ray(ray, K, stratified=False, rng=None):
    return sample_ray_batch(np.array([ray.near]), np.array([ray.far]),
                            K, stratified, rng)[0]


# ------------------------------------------------------------------ alpha

def sdf_to_alpha(s, s_next, params):
    """NeuS discrete alpha, elementwise over matching shapes.

    alpha = clamp(max((Phi(k s) - Phi(k s_next)) / Phi(k s), 0), <= 1-1e-6)
    """
    inv = params.inv_std()
    phi_j = sigmoid(mul(s, inv))
    phi_n = sigmoid(mul(s_next, inv))
    a = relu(div(sub(phi_j, phi_n), phi_j))
    return sub(a, relu(sub(a, Tensor(ALPHA_CEIL))))  # min(a, ceil)


def alphas_from_sdf(s, params):
    """Adjacent-pair alphas [R, K] from SDF samples [R, K].

    The last interval pairs (s_K, s_K) so it contributes exactly zero.
    """
    K = s.shape[1]
    s_next = concat([s[:, 1:], s[:, K - 1:K]], axis=1)
    return sdf_to_alpha(s, s_next, params)


def transmittance(alpha):
    """T [R, K] with T_1 = 1 and T_{j+1} = T_j (1 - alpha_j), plus w = T*alpha.

    Sequential products rather than exp(cumsum(log)) so monotonicity is
    exact in floating point, not just to rounding.
    """
    R, K = alpha.shape
    cols = []
    T = Tensor(np.ones((R, 1)))
    for j in range(K):
        cols.append(T)
        a_j = alpha[:, j:j + 1]
        T = mul(T, sub(Tensor(np.ones((R, 1))), a_j))
    T_all = concat(cols, axis=1)
    return T_all, mul(T_all, alpha)


def composite(alpha, values, t):
    """(pixel [R,C], depth [R], opacity [R]) from alphas, per-point values, t."""
    R, K = alpha.shape
    _, w = transmittance(alpha)
    opacity = sum_reduce(w, axis=1)
    w3 = reshape(w, (R, K, 1))
    pixel = sum_reduce(mul(values, w3), axis=1)
    t_t = t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=np.float64))
    wt = sum_reduce(mul(w, t_t), axis=1)
    # max(opacity, 1e-8) as a relu composition; identity above the floor
    den = add(opacity, relu(sub(Tensor(1.0e-8), opacity)))
    return pixel, div(wt, den), opacity


@dataclass
class RaySampleResult:
    t: np.ndarray           # [R, K]
    alpha: Tensor           # [R, K]
    trans: Tensor           # [R, K]
    point_values: Tensor    # [R, K, C_v]
    pixel: Tensor           # [R, C_v]
    depth: Tensor           # [R]
    opacity: Tensor         # [R]
    sdf: Tensor = None      # [R, K]
    omega: Tensor = None    # [R, K, N]


# ------------------------------------------------------------- ray path

def ray_box_range(origins, dirs, lo, hi, near=1.0e-3, far=1.0e3):
    """Slab intersection of rays with the conditioning bbox.

    Returns (enter [R], exit [R], hit [R] bool); misses get enter == exit.
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    d = np.where(np.abs(dirs) < 1.0e-12, 1.0e-12, dirs)
    t0 = (lo[None, :] - origins) / d
    t1 = (hi[None, :] - origins) / d
    tmin = np.minimum(t0, t1).max(axis=1)
    tmax = np.maximum(t0, t1).min(axis=1)
    enter = np.maximum(tmin, near)
    exit_ = np.minimum(tmax, far)
    hit = exit_ > enter + 1.0e-6
    enter = np.where(hit, enter, near)
    exit_ = np.where(hit, exit_, near)
    return enter, exit_, hit


def _unit(v, axis=-1):
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    return v / np.maximum(n, 1.0e-12)


def _render_rays(cond, origins, dirs, t, value_maps):
    """Shared ray march. value_maps: per-view [H, W, C_v] arrays to blend.

    All rays here are assumed to intersect the bbox; t is [R, K] ndarray.
    """
    model = cond.model
    R, K = t.shape
    N = len(cond.views)
    pts = origins[:, None, :] + t[:, :, None] * dirs[:, None, :]
    flat = pts.reshape(-1, 3)
    P = flat.shape[0]

    v_feats, _ = sample_volume(cond.volume, flat)          # [P, C']
    c_vol = v_feats.shape[1]

    f_parts, c_parts, masks, dds = [], [], [], []
    c_f = c_val = 0
    for i, view in enumerate(cond.views):
        cam = view.camera
        uv, _, valid = sc.project_points(cam, flat)
        m = valid.astype(np.float64)[:, None]
        f_i = mul(bilinear_gather(cond.feature_maps[i].features, uv), Tensor(m))
        c_i = mul(bilinear_gather(Tensor(np.asarray(value_maps[i], dtype=np.float64)), uv),
                  Tensor(m))
        c_f = f_i.shape[1]
        c_val = c_i.shape[1]
        f_parts.append(reshape(f_i, (P, 1, c_f)))
        c_parts.append(reshape(c_i, (P, 1, c_val)))
        masks.append(valid)
        dds.append(_unit(cam.center[None, :] - flat) * m)

    f = reshape(concat(f_parts, axis=1), (R, K, N, c_f))
    c = reshape(concat(c_parts, axis=1), (R, K, N, c_val))
    mask = np.stack(masks, axis=1).reshape(R, K, N)
    dd = np.stack(dds, axis=1).reshape(R, K, N, 3)

    v = reshape(v_feats, (R, K, c_vol))
    s, _ = model.geometry.predict_sdf(v, f, mask)           # [R, K]
    alpha = alphas_from_sdf(s, model.density)

    d_b = np.broadcast_to(dirs[:, None, :], (R, K, 3)).reshape(R, K, 3)
    omega, _ = model.blend(f, Tensor(d_b.copy()), Tensor(dd), mask)
    chat = blend(omega, c)                                  # [R, K, C_v]

    pixel, depth, opacity = composite(alpha, chat, t)
    trans, _ = transmittance(alpha)
    return RaySampleResult(t=t, alpha=alpha, trans=trans, point_values=chat,
                           pixel=pixel, depth=depth, opacity=opacity,
                           sdf=s, omega=omega)


def render_rays(cond, origins, dirs, K=64, stratified=False, rng=None,
                t=None, value_maps=None):
    """Render arbitrary rays; used by training. Returns RaySampleResult.

    Rays that miss the bbox still march (clamped to a thin slab at near),
    so callers should pre-filter with ray_box_range when that matters.
    """
    if value_maps is None:
        value_maps = [v.pixels for v in cond.views]
    if t is None:
        lo, hi = cond.bbox
        enter, exit_, hit = ray_box_range(origins, dirs, lo, hi)
        exit_ = np.where(hit, exit_, enter + 1.0e-3)
        t = sample_ray_batch(enter, exit_, K, stratified, rng)
    return _render_rays(cond, origins, dirs, t, value_maps)


def _frame_rays(camera):
    uu, vv = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    px = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1).astype(np.float64)
    origins, dirs = sc.generate_rays(camera, px)
    return px, origins, dirs


def _render_frame(cond, camera, value_maps, K, stratified, base_seed, frame,
                  chunk):
    """Full-frame march shared by render_view and lift_property."""
    if camera.width < 1 or camera.height < 1:
        raise ValueError("camera resolution must be positive")
    H, W = camera.height, camera.width
    C_v = int(np.asarray(value_maps[0]).shape[2])
    px, origins, dirs = _frame_rays(camera)
    lo, hi = cond.bbox
    enter, exit_, hit = ray_box_range(origins, dirs, lo, hi)

    img = np.zeros((H * W, C_v))
    dep = np.zeros(H * W)
    opa = np.zeros(H * W)
    idx = np.nonzero(hit)[0]
    with no_grad():
        for start in range(0, idx.size, chunk):
            sel = idx[start:start + chunk]
            if stratified:
                t = np.empty((sel.size, K))
                for row, pix in enumerate(sel):
                    rng = np.random.default_rng(
                        np.random.SeedSequence((base_seed, frame, int(pix))))
                    t[row] = sample_ray_batch(enter[sel[row:row + 1]],
                                              exit_[sel[row:row + 1]],
                                              K, True, rng)[0]
            else:
                t = sample_ray_batch(enter[sel], exit_[sel], K, False, None)
            res = _render_rays(cond, origins[sel], dirs[sel], t,
                               value_maps)
            img[sel] = res.pixel.numpy()
            dep[sel] = res.depth.numpy()
            opa[sel] = res.opacity.numpy()
    return img.reshape(H, W, C_v), dep.reshape(H, W), opa.reshape(H, W)


def render_view(cond, camera, channels=("rgb", "depth"), K=64,
                stratified=False, base_seed=0, frame=0, chunk=1024):
    """Render a full frame. Returns a dict of the requested channels.

    rgb is [H, W, 3] in [0, 1]-ish (unclamped blend), depth [H, W],
    opacity [H, W]. Deterministic for fixed (base_seed, frame).
    """
    value_maps = [v.pixels for v in cond.views]
    img, dep, opa = _render_frame(cond, camera, value_maps, K, stratified,
                                  base_seed, frame, chunk)
    out = {}
    for ch in channels:
        if ch == "rgb":
            out[ch] = img
        elif ch == "depth":
            out[ch] = dep
        elif ch == "opacity":
            out[ch] = opa
        else:
            raise ValueError("unknown channel %r" % (ch,))
    return out


def lift_property(cond, priors, camera, K=64, stratified=False, base_seed=0,
                  frame=0, chunk=1024):
    """Blend per-view property maps with the RGB pipeline's exact weights.

    priors: per source view [H_i, W_i, C_p], all sharing C_p. With
    priors = source images this reproduces render_view's rgb bitwise.
    """
    if len(priors) != len(cond.views):
        raise ValueError("need one prior map per source view")
    chans = {int(np.asarray(p).shape[2]) for p in priors}
    if len(chans) != 1:
        raise ValueError("prior maps disagree on channel count: %s" % sorted(chans))
    for p, v in zip(priors, cond.views):
        if np.asarray(p).shape[:2] != v.pixels.shape[:2]:
            raise ValueError("prior map resolution mismatch with its view")
    img, _, _ = _render_frame(cond, camera, priors, K, stratified, base_seed,
                              frame, chunk)
    return img
