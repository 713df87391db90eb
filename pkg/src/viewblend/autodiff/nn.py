"""Small neural-net layer kit on top of the autodiff tensor ops."""

import fnmatch
import math

import numpy as np
import torch

from .tensor import Parameter, Tensor, add, layer_norm, matmul, mul, relu


class Module:
    """Base with recursive parameter discovery over attributes and lists."""

    def named_modules(self, prefix=""):
        yield prefix, self
        for attr, value in vars(self).items():
            path = f"{prefix}.{attr}" if prefix else attr
            if isinstance(value, Module):
                yield from value.named_modules(path)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{path}.{i}")

    def named_parameters(self, prefix=""):
        for mod_path, mod in self.named_modules(prefix):
            for attr, value in vars(mod).items():
                if isinstance(value, Parameter):
                    yield (f"{mod_path}.{attr}" if mod_path else attr), value

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_arrays(self):
        """name -> numpy array for every parameter, in discovery order."""
        return {name: p.numpy() for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays):
        for name, p in self.named_parameters():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r} in checkpoint")
            src = np.asarray(arrays[name])
            if tuple(src.shape) != p.shape:
                raise ValueError(
                    f"parameter {name!r}: checkpoint shape {src.shape} != {p.shape}"
                )
            with torch.no_grad():
                p.data.copy_(torch.from_numpy(np.ascontiguousarray(src)))


class Linear(Module):
    """Affine map on the last axis: y = x @ W + b."""

    def __init__(self, in_dim, out_dim, rng, bias=True, dtype=None):
        scale = math.sqrt(2.0 / in_dim)
        w = rng.normal(0.0, scale, size=(in_dim, out_dim))
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.W = Parameter(w, dtype=dtype)
        self.b = Parameter(np.zeros(out_dim), dtype=dtype) if bias else None

    def __call__(self, x):
        y = matmul(x, self.W)
        if self.b is not None:
            y = add(y, self.b)
        return y


class LayerNorm(Module):
    """Last-axis layer norm with learnable gain and bias."""

    def __init__(self, dim, dtype=None, eps=1e-5):
        self.eps = eps
        self.gain = Parameter(np.ones(dim), dtype=dtype)
        self.bias = Parameter(np.zeros(dim), dtype=dtype)

    def __call__(self, x):
        return add(mul(layer_norm(x, eps=self.eps), self.gain), self.bias)


class MLP(Module):
    """Stack of Linear layers with relu between (none after the last)."""

    def __init__(self, dims, rng, dtype=None, bias=True):
        self.layers = [
            Linear(dims[i], dims[i + 1], rng, bias=bias, dtype=dtype)
            for i in range(len(dims) - 1)
        ]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i + 1 < len(self.layers):
                x = relu(x)
        return x


class LoraLinear(Module):
    """Frozen base linear plus a trainable low-rank update.

    Computes x @ W + b + scale * ((x @ A) @ B) with A zero-mean random and
    B zero-initialized, so a freshly attached adapter reproduces the base
    layer bitwise.
    """

    def __init__(self, base, rank, rng, scale=1.0):
        self.base = base
        self.rank = rank
        self.scale = scale
        dtype = base.W.dtype
        a = rng.normal(0.0, 1.0 / math.sqrt(base.in_dim), size=(base.in_dim, rank))
        self.lora_A = Parameter(a, dtype=dtype)
        self.lora_B = Parameter(np.zeros((rank, base.out_dim)), dtype=dtype)
        self._scale_t = Tensor(scale, dtype=dtype)

    def __call__(self, x):
        y = self.base(x)
        # With B == 0 the update is exactly zero, so y is unchanged; the
        # term is still computed so gradients reach B on the first step.
        delta = matmul(matmul(x, self.lora_A), self.lora_B)
        if self.scale != 1.0:
            delta = mul(delta, self._scale_t)
        return add(y, delta)

    def adapter_parameters(self):
        return [self.lora_A, self.lora_B]


def attach_lora(root, rank, patterns, rng, scale=1.0):
    """Wrap every Linear whose dotted path matches a pattern.

    Patterns are fnmatch globs (a bare substring also matches). Returns the
    list of new LoraLinear modules; raises if nothing matched.
    """

    def matches(path):
        return any(
            fnmatch.fnmatch(path, pat) or pat in path for pat in patterns
        )

    wrapped = []
    for mod_path, mod in list(root.named_modules()):
        for attr, value in list(vars(mod).items()):
            items = None
            if isinstance(value, Linear):
                items = [(None, value)]
            elif isinstance(value, (list, tuple)):
                items = [
                    (i, item) for i, item in enumerate(value) if isinstance(item, Linear)
                ]
            if not items:
                continue
            for key, lin in items:
                path = f"{mod_path}.{attr}" if mod_path else attr
                if key is not None:
                    path = f"{path}.{key}"
                if not matches(path):
                    continue
                adapter = LoraLinear(lin, rank, rng, scale=scale)
                if key is None:
                    setattr(mod, attr, adapter)
                else:
                    seq = list(value)
                    seq[key] = adapter
                    setattr(mod, attr, type(value)(seq) if isinstance(value, tuple) else seq)
                wrapped.append((path, adapter))
    if not wrapped:
        raise ValueError(f"attach_lora: no Linear layer matched patterns {patterns}")
    return wrapped


class Adam:
    """Adam over an explicit parameter list; state in parameter order."""

    def __init__(self, params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [torch.zeros_like(p.data) for p in self.params]
        self.v = [torch.zeros_like(p.data) for p in self.params]

    def step(self, grads, lr=None, update_clamp=None):
        """Apply one update. ``grads`` maps Parameter -> gradient Tensor.

        ``update_clamp(param, delta) -> delta`` optionally limits the raw
        update (used to cap per-vertex displacement during mesh tuning).
        """
        self.t += 1
        lr = self.lr if lr is None else lr
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        with torch.no_grad():
            for i, p in enumerate(self.params):
                g = grads.get(p)
                if g is None:
                    continue
                g = g.data
                self.m[i].mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
                self.v[i].mul_(self.beta2).add_(g * g, alpha=1.0 - self.beta2)
                m_hat = self.m[i] / b1c
                v_hat = self.v[i] / b2c
                delta = -lr * m_hat / (torch.sqrt(v_hat) + self.eps)
                if update_clamp is not None:
                    delta = update_clamp(p, delta)
                p.data.add_(delta)


def cosine_lr(step, total_steps, lr_max, lr_min):
    if total_steps <= 1:
        return lr_max
    frac = min(max(step / (total_steps - 1), 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * frac))
