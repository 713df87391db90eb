"""Geometry branch: per-block cross / subtraction / self attention over ray
samples, then a small MLP head mapping refined sample features to SDF.

Shapes: x (R, K, d), volume features v (R, K, Cv), per-view appearance
features f (R, K, N, Cf), validity mask (R, K, N) as a detached ndarray.
Attention never crosses rays.
"""

import numpy as np

from .autodiff import (
    Tensor,
    add,
    broadcast_to,
    matmul,
    mul,
    reshape,
    softmax,
    sub,
    sum_reduce,
    transpose,
)
from .autodiff.nn import LayerNorm, Linear, MLP, Module

MASK_OFF = 1.0e9  # shifts masked logits far enough that exp underflows to 0


def _heads_split(x, heads):
    R, K, d = x.shape
    x = reshape(x, (R, K, heads, d // heads))
    return transpose(x, (0, 2, 1, 3))  # (R, h, K, dh)


def _heads_merge(x):
    R, h, K, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (R, K, h * dh))


def _dot_attention(q, k, v, heads):
    qh = _heads_split(q, heads)
    kh = _heads_split(k, heads)
    vh = _heads_split(v, heads)
    dh = qh.shape[-1]
    scores = matmul(qh, transpose(kh, (0, 1, 3, 2)))
    scores = mul(scores, Tensor(1.0 / np.sqrt(dh)))
    att = softmax(scores, axis=-1)
    return _heads_merge(matmul(att, vh))


class GeometryAttention(Module):
    """Cross-attention over the K ray samples; query from x, the sample
    geometry features provide one shared key/value projection."""

    def __init__(self, d, c_v, rng, heads=2):
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.kv = Linear(c_v, d, rng)
        self.out = Linear(d, d, rng)
        self.norm = LayerNorm(d)

    def _attend(self, x, v):
        kv = self.kv(v)
        return self.out(_dot_attention(self.q(x), kv, kv, self.heads))

    def __call__(self, x, v):
        return self.norm(add(x, self._attend(x, v)))


class AppearanceAttention(Module):
    """Subtraction attention across source views at each sample.

    score_i = w . phi(q - k_i), masked softmax over valid views, output a
    convex combination of value projections.  Samples with no valid view
    pass through unchanged.
    """

    def __init__(self, d, c_f, rng, phi_width=32):
        self.q = Linear(d, d, rng)
        self.k = Linear(c_f, d, rng)
        self.v = Linear(c_f, d, rng)
        self.phi = MLP([d, phi_width, phi_width], rng)
        self.w = Linear(phi_width, 1, rng, bias=False)
        self.out = Linear(d, d, rng)
        self.norm = LayerNorm(d)

    def __call__(self, x, f, mask):
        R, K, N, _ = f.shape
        q = reshape(self.q(x), (R, K, 1, x.shape[-1]))
        keys = self.k(f)
        diff = sub(broadcast_to(q, keys.shape), keys)
        scores = reshape(self.w(self.phi(diff)), (R, K, N))
        m = np.asarray(mask, dtype=np.float64)
        # Zero invalid scores, then shift them to -1e9: the softmax result
        # is exactly 0 there (underflow), independent of the feature values.
        scores = sub(mul(scores, Tensor(m)), Tensor((1.0 - m) * MASK_OFF))
        att = softmax(scores, axis=-1)
        vals = self.v(f)
        mixed = sum_reduce(mul(vals, reshape(att, (R, K, N, 1))), axis=2)
        y = self.norm(add(x, self.out(mixed)))
        # Fully occluded samples: keep x (the uniform softmax over an
        # all-masked row is meaningless, never let it leak).
        any_valid = (m.sum(axis=-1) > 0).astype(np.float64)[:, :, None]
        return add(mul(y, Tensor(any_valid)), mul(x, Tensor(1.0 - any_valid)))


class OcclusionAttention(Module):
    """Plain self-attention across a ray's samples (no positional encoding)."""

    def __init__(self, d, rng, heads=2):
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng)
        self.norm = LayerNorm(d)

    def _attend(self, x):
        return self.out(_dot_attention(self.q(x), self.k(x), self.v(x), self.heads))

    def __call__(self, x):
        return self.norm(add(x, self._attend(x)))


class GeoBlock(Module):
    def __init__(self, d, c_v, c_f, rng, heads=2):
        self.geo = GeometryAttention(d, c_v, rng, heads)
        self.app = AppearanceAttention(d, c_f, rng)
        self.occ = OcclusionAttention(d, rng, heads)

    def __call__(self, x, v, f, mask):
        return self.occ(self.app(self.geo(x, v), f, mask))


class GeometryBranch(Module):
    """x0 = proj(v); B attention blocks; 2-layer MLP head -> SDF per sample."""

    def __init__(self, rng, c_vol=16, c_feat=16, d=32, blocks=2, heads=2):
        self.d = d
        self.embed = Linear(c_vol, d, rng)
        self.blocks = [GeoBlock(d, c_vol, c_feat, rng, heads) for _ in range(blocks)]
        self.head = MLP([d, d, 1], rng)

    def predict_sdf(self, v, f, mask):
        """v (R,K,Cv), f (R,K,N,Cf), mask (R,K,N) -> sdf (R,K), feats (R,K,d)."""
        x = self.embed(v)
        for blk in self.blocks:
            x = blk(x, v, f, mask)
        R, K, _ = x.shape
        s = reshape(self.head(x), (R, K))
        return s, x
