"""Geometry branch: attention algebra, masking exactness, gradients."""

import numpy as np
import pytest

from viewblend.autodiff import Tensor, grad_check, mean_reduce, mul, sum_reduce
from viewblend.geometry import (
    AppearanceAttention,
    GeoBlock,
    GeometryAttention,
    GeometryBranch,
    OcclusionAttention,
)


def _rng(seed=0):
    return np.random.default_rng(seed)


def _layernorm_np(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return gain * (x - mu) / np.sqrt(var + eps) + bias


def _linear_np(lin, x):
    y = x @ lin.W.numpy()
    if lin.b is not None:
        y = y + lin.b.numpy()
    return y


# ----------------------------------------------------------- geometry attn


def test_geometry_attention_singleton_is_projected_value():
    # K=1: softmax over one key is 1, so the block reduces to
    # layernorm(x + out(kv(v))) with the module's own projections.
    rng = _rng(1)
    d, c_v = 8, 6
    att = GeometryAttention(d, c_v, rng, heads=2)
    x = rng.normal(size=(3, 1, d))
    v = rng.normal(size=(3, 1, c_v))
    got = att(Tensor(x), Tensor(v)).numpy()

    kv = _linear_np(att.kv, v)
    pre = x + _linear_np(att.out, kv)
    want = _layernorm_np(pre, att.norm.gain.numpy(), att.norm.bias.numpy())
    assert np.allclose(got, want, atol=1e-10)


def test_geometry_attention_uniform_values_ignore_query():
    # identical v across the ray: every query mixes the same value row,
    # so the pre-residual attention output is constant along K
    rng = _rng(2)
    d, c_v, K = 8, 5, 7
    att = GeometryAttention(d, c_v, rng, heads=2)
    x = rng.normal(size=(2, K, d))
    v = np.repeat(rng.normal(size=(2, 1, c_v)), K, axis=1)
    pre = att._attend(Tensor(x), Tensor(v)).numpy()
    assert np.allclose(pre, pre[:, :1, :], atol=1e-12)


def test_geometry_attention_grad():
    # random output weighting: a plain sum of a layer-normalized output is
    # constant (the normalized features sum to zero), hiding real gradients
    rng = _rng(3)
    d, c_v, K = 8, 6, 4
    att = GeometryAttention(d, c_v, rng, heads=2)
    x0 = rng.normal(size=(1, K, d))
    v0 = rng.normal(size=(1, K, c_v))
    coef = Tensor(rng.normal(size=(1, K, d)))

    def fn(ts):
        return sum_reduce(mul(att(ts[0], ts[1]), coef))

    assert grad_check(fn, [x0, v0], step=1e-5) < 1e-4


# --------------------------------------------------------- appearance attn


def test_appearance_singleton_weight_is_one():
    rng = _rng(4)
    d, c_f = 8, 6
    att = AppearanceAttention(d, c_f, rng, phi_width=16)
    x = rng.normal(size=(2, 3, d))
    f = rng.normal(size=(2, 3, 1, c_f))
    mask = np.ones((2, 3, 1))
    got = att(Tensor(x), Tensor(f), mask).numpy()

    vals = _linear_np(att.v, f)[:, :, 0, :]
    pre = x + _linear_np(att.out, vals)
    want = _layernorm_np(pre, att.norm.gain.numpy(), att.norm.bias.numpy())
    assert np.allclose(got, want, atol=1e-10)


def test_appearance_identical_views_average_to_single_view():
    rng = _rng(5)
    d, c_f, N = 8, 6, 4
    att = AppearanceAttention(d, c_f, rng, phi_width=16)
    x = rng.normal(size=(2, 3, d))
    f1 = rng.normal(size=(2, 3, 1, c_f))
    f = np.repeat(f1, N, axis=2)
    got = att(Tensor(x), Tensor(f), np.ones((2, 3, N))).numpy()

    vals = _linear_np(att.v, f1)[:, :, 0, :]
    pre = x + _linear_np(att.out, vals)
    want = _layernorm_np(pre, att.norm.gain.numpy(), att.norm.bias.numpy())
    assert np.allclose(got, want, atol=1e-10)


def test_appearance_masked_features_cannot_leak():
    # flipping the features of masked views must not change a single bit
    rng = _rng(6)
    d, c_f, N = 8, 6, 4
    att = AppearanceAttention(d, c_f, rng, phi_width=16)
    x = rng.normal(size=(2, 5, d))
    f = rng.normal(size=(2, 5, N, c_f))
    mask = (rng.random((2, 5, N)) < 0.6).astype(np.float64)
    mask[:, :, 0] = 1.0  # keep every sample at least one view

    out_a = att(Tensor(x), Tensor(f), mask).numpy()
    f2 = f.copy()
    f2[mask == 0] = 1.0e6 * rng.normal(size=f2[mask == 0].shape)
    out_b = att(Tensor(x), Tensor(f2), mask).numpy()
    assert np.array_equal(out_a, out_b)


def test_appearance_fully_occluded_passes_through():
    rng = _rng(7)
    d, c_f, N = 8, 6, 3
    att = AppearanceAttention(d, c_f, rng, phi_width=16)
    x = rng.normal(size=(2, 4, d))
    f = rng.normal(size=(2, 4, N, c_f))
    mask = np.ones((2, 4, N))
    mask[0, 2] = 0.0
    mask[1, 0] = 0.0
    out = att(Tensor(x), Tensor(f), mask).numpy()
    assert np.array_equal(out[0, 2], x[0, 2])
    assert np.array_equal(out[1, 0], x[1, 0])
    # and the unoccluded rows did go through the attention
    assert not np.allclose(out[0, 0], x[0, 0])


def test_appearance_grad():
    rng = _rng(8)
    d, c_f, K, N = 8, 6, 2, 3
    att = AppearanceAttention(d, c_f, rng, phi_width=16)
    mask = np.ones((1, K, N))
    mask[0, 1, 2] = 0.0
    x0 = rng.normal(size=(1, K, d))
    f0 = rng.normal(size=(1, K, N, c_f))
    coef = Tensor(rng.normal(size=(1, K, d)))

    def fn(ts):
        return sum_reduce(mul(att(ts[0], ts[1], mask), coef))

    assert grad_check(fn, [x0, f0], step=1e-5) < 1e-4


# ----------------------------------------------------------- occlusion attn


def test_occlusion_permutation_equivariant():
    rng = _rng(9)
    d, K = 8, 6
    att = OcclusionAttention(d, rng, heads=2)
    x = rng.normal(size=(2, K, d))
    perm = _rng(10).permutation(K)
    out = att(Tensor(x)).numpy()
    out_p = att(Tensor(x[:, perm, :])).numpy()
    assert np.allclose(out_p, out[:, perm, :], atol=1e-12)


def test_occlusion_grad():
    rng = _rng(11)
    att = OcclusionAttention(8, rng, heads=2)
    x0 = rng.normal(size=(1, 4, 8))
    coef = Tensor(rng.normal(size=(1, 4, 8)))

    def fn(ts):
        return sum_reduce(mul(att(ts[0]), coef))

    assert grad_check(fn, [x0], step=1e-5) < 1e-4


# ----------------------------------------------------------------- branch


def test_predict_sdf_shapes_and_determinism():
    rng = _rng(12)
    br = GeometryBranch(rng, c_vol=6, c_feat=5, d=8, blocks=2, heads=2)
    data = _rng(13)
    v = data.normal(size=(3, 4, 6))
    f = data.normal(size=(3, 4, 2, 5))
    mask = np.ones((3, 4, 2))
    s1, x1 = br.predict_sdf(Tensor(v), Tensor(f), mask)
    s2, x2 = br.predict_sdf(Tensor(v), Tensor(f), mask)
    assert s1.shape == (3, 4) and x1.shape == (3, 4, 8)
    assert np.array_equal(s1.numpy(), s2.numpy())
    assert np.array_equal(x1.numpy(), x2.numpy())


def test_predict_sdf_rays_independent():
    rng = _rng(14)
    br = GeometryBranch(rng, c_vol=6, c_feat=5, d=8, blocks=1, heads=2)
    data = _rng(15)
    v = data.normal(size=(2, 4, 6))
    f = data.normal(size=(2, 4, 3, 5))
    mask = (data.random((2, 4, 3)) < 0.8).astype(np.float64)
    mask[:, :, 0] = 1.0
    s_both, _ = br.predict_sdf(Tensor(v), Tensor(f), mask)
    s_one, _ = br.predict_sdf(Tensor(v[:1]), Tensor(f[:1]), mask[:1])
    assert np.allclose(s_both.numpy()[0], s_one.numpy()[0], atol=1e-12)


def test_predict_sdf_grad():
    rng = _rng(16)
    br = GeometryBranch(rng, c_vol=4, c_feat=4, d=8, blocks=1, heads=2)
    data = _rng(17)
    v0 = data.normal(size=(1, 3, 4))
    f0 = data.normal(size=(1, 3, 2, 4))
    mask = np.ones((1, 3, 2))

    def fn(ts):
        s, _ = br.predict_sdf(ts[0], ts[1], mask)
        return mean_reduce(s)

    assert grad_check(fn, [v0, f0], step=1e-5) < 1e-4


def test_block_masked_leak_end_to_end():
    rng = _rng(18)
    blk = GeoBlock(8, 6, 5, rng, heads=2)
    data = _rng(19)
    x = data.normal(size=(2, 3, 8))
    v = data.normal(size=(2, 3, 6))
    f = data.normal(size=(2, 3, 4, 5))
    mask = np.ones((2, 3, 4))
    mask[:, :, 3] = 0.0
    a = blk(Tensor(x), Tensor(v), Tensor(f), mask).numpy()
    f2 = f.copy()
    f2[:, :, 3, :] = -999.0
    b = blk(Tensor(x), Tensor(v), Tensor(f2), mask).numpy()
    assert np.array_equal(a, b)
