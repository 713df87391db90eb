"""Appearance branch: per-view blending weights and the convex blend.

The same three-layer MLP drives volumetric rendering, property lifting,
and the baked-mesh shader (and is re-implemented by the web viewer), so
its input layout [f_i | d | delta_d_i] is part of the exported contract.
"""

import numpy as np

from .autodiff import Tensor, add, broadcast_to, concat, mul, reshape, softmax, sub, sum_reduce
from .autodiff.nn import MLP, Module

MASK_OFF = 1.0e9


class BlendMLP(Module):
    """logit_i = MLP3([f_i | d | delta_d_i]); omega = masked softmax."""

    def __init__(self, rng, c_feat=16, width=32):
        self.c_feat = c_feat
        self.net = MLP([c_feat + 6, width, width, 1], rng)

    def __call__(self, f, d, dd, mask):
        """f (..., N, C), d (..., 3), dd (..., N, 3), mask (..., N) ndarray.

        Returns (omega Tensor (..., N), any_valid ndarray (..., N==0 flag)).
        Fully occluded points get uniform 1/N over all views.
        """
        shape = f.shape
        N = shape[-2]
        d_b = reshape(d, shape[:-2] + (1, 3))
        d_b = broadcast_to(d_b, shape[:-1] + (3,))
        x = concat([f, d_b, dd] if isinstance(dd, Tensor) else [f, d_b, Tensor(dd)],
                   axis=len(shape) - 1)
        logits = reshape(self.net(x), shape[:-1])
        m = np.asarray(mask, dtype=np.float64)
        masked = sub(mul(logits, Tensor(m)), Tensor((1.0 - m) * MASK_OFF))
        omega = softmax(masked, axis=-1)
        any_valid = m.sum(axis=-1) > 0
        if not any_valid.all():
            # uniform over all N views wherever nothing projected
            hole = (~any_valid).astype(np.float64)[..., None]
            keep = any_valid.astype(np.float64)[..., None]
            omega = add(mul(omega, Tensor(keep)), Tensor(hole * (1.0 / N)))
        return omega, any_valid


def blend(omega, values):
    """Convex combination over the view axis: (..., N) x (..., N, C) -> (..., C)."""
    shape = values.shape
    w = reshape(omega, shape[:-1] + (1,))
    return sum_reduce(mul(values, w), axis=len(shape) - 2)
