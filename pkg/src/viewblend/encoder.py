"""Per-view CNN features and the fused, U-Net-refined 3D feature volume."""

import math

import numpy as np

from . import diffops, scene as sc
from .autodiff import Parameter, Tensor, add, concat, mul, relu, reshape, sub
from .autodiff.nn import Module


class FeatureMap:
    """H x W x C features spatially aligned with their source view."""

    def __init__(self, features, camera):
        if features.shape[0] != camera.height or features.shape[1] != camera.width:
            raise ValueError("feature map does not match camera resolution")
        self.features = features
        self.camera = camera

    @property
    def channels(self):
        return self.features.shape[2]


class FeatureVolume:
    """M^3 x C' voxel features over an axis-aligned bbox.

    Voxel (a, b, c) center = lo + (a+0.5, b+0.5, c+0.5) * (extent / M).
    """

    def __init__(self, values, bbox, valid_mask=None):
        self.values = values
        self.lo = np.asarray(bbox[0], dtype=np.float64)
        self.hi = np.asarray(bbox[1], dtype=np.float64)
        self.M = values.shape[0]
        self.valid_mask = valid_mask

    def world_to_voxel(self, pts):
        size = (self.hi - self.lo) / self.M
        return (np.asarray(pts) - self.lo) / size - 0.5


class Conv2d(Module):
    def __init__(self, c_in, c_out, rng, k=3):
        self.k = k
        fan = k * k * c_in
        self.W = Parameter(rng.normal(0.0, math.sqrt(2.0 / fan), size=(fan, c_out)))
        self.b = Parameter(np.zeros(c_out))

    def __call__(self, x):
        return diffops.conv2d(x, self.W, self.b, k=self.k, pad=self.k // 2)


class Conv3d(Module):
    def __init__(self, c_in, c_out, rng, k=3):
        self.k = k
        fan = k * k * k * c_in
        self.W = Parameter(rng.normal(0.0, math.sqrt(2.0 / fan), size=(fan, c_out)))
        self.b = Parameter(np.zeros(c_out))

    def __call__(self, x):
        return diffops.conv3d(x, self.W, self.b, k=self.k, pad=self.k // 2)


class ConvEncoder(Module):
    """4-layer 3x3 CNN, 3 -> 16 -> 16 -> 16 -> C, relu between layers."""

    def __init__(self, rng, c_out=16):
        self.convs = [
            Conv2d(3, 16, rng),
            Conv2d(16, 16, rng),
            Conv2d(16, 16, rng),
            Conv2d(16, c_out, rng),
        ]

    def __call__(self, x):
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i + 1 < len(self.convs):
                x = relu(x)
        return x

    def encode_views(self, views):
        if not views:
            raise ValueError("need at least one view")
        out = []
        for v in views:
            px = v.pixels if isinstance(v, sc.ViewImage) else np.asarray(v.pixels)
            if px.shape[2] != 3:
                raise ValueError("encoder expects RGB views")
            cam = v.camera
            out.append(FeatureMap(self(Tensor(px)), cam))
        return out


def voxel_centers(bbox, M):
    lo = np.asarray(bbox[0], dtype=np.float64)
    hi = np.asarray(bbox[1], dtype=np.float64)
    size = (hi - lo) / M
    a, b, c = np.mgrid[0:M, 0:M, 0:M]
    idx = np.stack([a, b, c], axis=-1).reshape(-1, 3)
    return lo + (idx + 0.5) * size


def build_feature_volume(maps, bbox, M):
    """Mean / population-variance fusion of projected view features.

    Returns (raw Tensor (M,M,M,2C), valid ndarray (M,M,M) marking voxels
    seen by at least one view).
    """
    if not maps:
        raise ValueError("need at least one feature map")
    centers = voxel_centers(bbox, M)
    V = centers.shape[0]
    C = maps[0].channels
    cnt = np.zeros((V, 1))
    acc = None
    samples = []
    masks = []
    for fm in maps:
        uv, _, valid = sc.project_points(fm.camera, centers)
        samp = diffops.bilinear_gather(fm.features, uv)
        mask = valid.astype(np.float64)[:, None]
        sm = mul(samp, Tensor(mask))
        acc = sm if acc is None else add(acc, sm)
        cnt += mask
        samples.append(samp)
        masks.append(mask)
    inv = Tensor(1.0 / np.maximum(cnt, 1.0))
    mean = mul(acc, inv)
    # Population variance in pairwise form, sum_{i<j} (x_i - x_j)^2 / n^2:
    # exactly zero when the valid samples agree, unlike E[x^2] - E[x]^2.
    pair = None
    for i in range(len(samples)):
        for j in range(i + 1, len(samples)):
            d = sub(samples[i], samples[j])
            term = mul(mul(d, d), Tensor(masks[i] * masks[j]))
            pair = term if pair is None else add(pair, term)
    if pair is None:
        var = mul(mean, Tensor(np.zeros((V, 1))))  # single view: variance 0
    else:
        var = mul(pair, mul(inv, inv))
    raw = concat([mean, var], axis=1)
    raw = reshape(raw, (M, M, M, 2 * C))
    return raw, (cnt[:, 0] > 0).reshape(M, M, M)


class UNet3D(Module):
    """conv -> avgpool x2 -> conv -> nearest-up x2 + skip concat -> conv."""

    def __init__(self, c_in, c_out, rng, mid=16):
        self.enc = Conv3d(c_in, mid, rng)
        self.down = Conv3d(mid, mid, rng)
        self.out = Conv3d(2 * mid, c_out, rng)

    def __call__(self, x):
        M = x.shape[0]
        if M % 4 != 0:
            raise ValueError(f"volume side {M} must be divisible by 4")
        h0 = relu(self.enc(x))
        h1 = relu(self.down(diffops.avgpool3d(h0)))
        up = diffops.upsample3d(h1)
        return self.out(concat([up, h0], axis=3))


def refine_volume(unet, raw, bbox, valid_mask=None):
    values = unet(raw)
    return FeatureVolume(values, bbox, valid_mask)


def sample_volume(volume, points):
    """Trilinear features at world points; outside-bbox points are zeroed.

    Returns (features Tensor (N, C'), inside ndarray (N,)).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inside = np.all((pts >= volume.lo) & (pts <= volume.hi), axis=1)
    vox = volume.world_to_voxel(pts)
    feats = diffops.trilinear_gather(volume.values, vox)
    feats = mul(feats, Tensor(inside.astype(np.float64)[:, None]))
    return feats, inside
