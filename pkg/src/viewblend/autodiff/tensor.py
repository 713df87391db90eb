"""Reverse-mode automatic differentiation over dense multi-dimensional arrays.

A dynamic tape records every primitive op applied to tensors while a
``Tape`` is active; ``backward`` then returns d(scalar)/d(leaf) for every
leaf parameter the tape consumed.  Values are held in torch CPU tensors,
which supply the vectorized kernels and the per-op backward rules; this
module owns the op surface, shape diagnostics, recording, and leaf
bookkeeping.
"""

import itertools
import threading

import numpy as np
import torch

DEFAULT_DTYPE = torch.float64

_id_counter = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    """Raised when an op's inputs do not conform to its shape rule."""


def _current_tape():
    return getattr(_state, "tape", None)


class Tape:
    """Ordered record of primitive ops, one node per op output.

    Nodes are appended in execution order, so every node's inputs precede
    it (topological by construction).  Use as a context manager; entering
    makes this the active tape for the current thread.
    """

    def __init__(self):
        self.nodes = []
        self.leaves = {}  # tensor id -> leaf Tensor, insertion ordered

    def __enter__(self):
        if _current_tape() is not None:
            raise RuntimeError("a Tape is already active on this thread")
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = None
        return False

    def _record(self, op, inputs, out):
        for t in inputs:
            if t.data.requires_grad and t.data.is_leaf:
                self.leaves.setdefault(t.node_id, t)
        self.nodes.append(TapeNode(op, tuple(t.node_id for t in inputs), out))


class TapeNode:
    __slots__ = ("op", "input_ids", "out")

    def __init__(self, op, input_ids, out):
        self.op = op
        self.input_ids = input_ids
        self.out = out

    @property
    def output_id(self):
        return self.out.node_id

    def __repr__(self):
        return f"TapeNode({self.op}, in={self.input_ids}, out={self.output_id})"


class Tensor:
    """Dense array node. Wraps a torch CPU tensor; immutable by convention."""

    __slots__ = ("data", "node_id", "name")

    def __init__(self, value, dtype=None, requires_grad=False, name=None):
        if isinstance(value, Tensor):
            data = value.data
        elif isinstance(value, torch.Tensor):
            data = value
        else:
            arr = np.asarray(value)
            if dtype is None and arr.dtype.kind == "f":
                dtype = DEFAULT_DTYPE
            if dtype is None and arr.dtype.kind in "iub":
                dtype = torch.int64
            data = torch.from_numpy(np.ascontiguousarray(arr)).to(
                dtype if dtype is not None else DEFAULT_DTYPE
            )
        if dtype is not None and data.dtype != dtype:
            data = data.to(dtype)
        if requires_grad:
            data = data.detach().clone().requires_grad_(True)
        self.data = data
        self.node_id = next(_id_counter)
        self.name = name

    @property
    def shape(self):
        return tuple(self.data.shape)

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data.detach().numpy()

    def item(self):
        return self.data.item()

    def detach(self):
        return _wrap("detach", [self], self.data.detach())

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # Operator sugar over the primitive set.
    def __add__(self, other):
        return add(self, _coerce(other, self))

    def __radd__(self, other):
        return add(_coerce(other, self), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self))

    def __rmul__(self, other):
        return mul(_coerce(other, self), self)

    def __truediv__(self, other):
        return div(self, _coerce(other, self))

    def __rtruediv__(self, other):
        return div(_coerce(other, self), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, _coerce(-1.0, self))

    def __getitem__(self, key):
        return _wrap("slice", [self], self.data[key])


class Parameter(Tensor):
    """Leaf tensor updated by an optimizer."""

    def __init__(self, value, dtype=None, name=None):
        super().__init__(value, dtype=dtype, requires_grad=True, name=name)


def _coerce(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64), dtype=like.data.dtype)


def _wrap(op, inputs, out_data):
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.node_id = next(_id_counter)
    out.name = None
    tape = _current_tape()
    if tape is not None and not isinstance(out_data, torch.Tensor):
        raise TypeError(f"{op}: expected tensor output")
    if tape is not None:
        tape._record(op, inputs, out)
    return out


def _broadcastable(a_shape, b_shape):
    for x, y in zip(reversed(a_shape), reversed(b_shape)):
        if x != y and x != 1 and y != 1:
            return False
    return True


def _check_elementwise(op, a, b):
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# ---------------------------------------------------------------------------
# Primitive ops


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: need >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    return _wrap("matmul", [a, b], a.data @ b.data)


def add(a, b):
    _check_elementwise("add", a, b)
    return _wrap("add", [a, b], a.data + b.data)


def sub(a, b):
    _check_elementwise("sub", a, b)
    return _wrap("sub", [a, b], a.data - b.data)


def mul(a, b):
    _check_elementwise("mul", a, b)
    return _wrap("mul", [a, b], a.data * b.data)


def div(a, b):
    _check_elementwise("div", a, b)
    return _wrap("div", [a, b], a.data / b.data)


def exp(a):
    return _wrap("exp", [a], torch.exp(a.data))


def log(a):
    return _wrap("log", [a], torch.log(a.data))


def relu(a):
    # Subgradient at exactly 0 is 0 (torch's convention matches).
    return _wrap("relu", [a], torch.relu(a.data))


def sigmoid(a):
    return _wrap("sigmoid", [a], torch.sigmoid(a.data))


def softmax(a, axis=-1):
    # Max-subtracted internally for stability.
    return _wrap("softmax", [a], torch.softmax(a.data, dim=axis))


def layer_norm(a, eps=1e-5):
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    if a.ndim < 1:
        raise ShapeError("layer_norm: need >=1-d input")
    out = torch.nn.functional.layer_norm(a.data, (a.shape[-1],), eps=eps)
    return _wrap("layer_norm", [a], out)


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty input list")
    base = tensors[0].shape
    for t in tensors[1:]:
        ok = len(t.shape) == len(base) and all(
            d == axis % len(base) or t.shape[d] == base[d] for d in range(len(base))
        )
        if not ok:
            raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} on axis {axis}")
    return _wrap("concat", tensors, torch.cat([t.data for t in tensors], dim=axis))


def gather(a, index, axis=0):
    """Select rows along ``axis`` by a 1-d integer index."""
    idx = index.data if isinstance(index, Tensor) else torch.as_tensor(
        np.asarray(index), dtype=torch.int64
    )
    if idx.ndim != 1:
        raise ShapeError(f"gather: index must be 1-d, got shape {tuple(idx.shape)}")
    return _wrap("gather", [a], torch.index_select(a.data, axis, idx))


def sum_reduce(a, axis=None, keepdims=False):
    if axis is None:
        out = a.data.sum()
        if keepdims:
            out = out.reshape((1,) * a.ndim)
    else:
        out = a.data.sum(dim=axis, keepdim=keepdims)
    return _wrap("sum", [a], out)


def mean_reduce(a, axis=None, keepdims=False):
    if axis is None:
        out = a.data.mean()
        if keepdims:
            out = out.reshape((1,) * a.ndim)
    else:
        out = a.data.mean(dim=axis, keepdim=keepdims)
    return _wrap("mean", [a], out)


def broadcast_to(a, shape):
    if not _broadcastable(a.shape, tuple(shape)):
        raise ShapeError(f"broadcast: {a.shape} to {tuple(shape)}")
    return _wrap("broadcast", [a], a.data.broadcast_to(tuple(shape)))


def reshape(a, shape):
    return _wrap("reshape", [a], a.data.reshape(tuple(shape)))


def transpose(a, axes):
    return _wrap("transpose", [a], a.data.permute(tuple(axes)))


_FORWARD_TABLE = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "elementwise-mul": mul,
    "mul": mul,
    "div": div,
    "exp": exp,
    "log": log,
    "relu": relu,
    "sigmoid": sigmoid,
    "softmax-over-axis": softmax,
    "softmax": softmax,
    "layer-normalize": layer_norm,
    "layer_norm": layer_norm,
    "concat": concat,
    "gather": gather,
    "sum-reduce": sum_reduce,
    "sum": sum_reduce,
    "mean-reduce": mean_reduce,
    "mean": mean_reduce,
    "broadcast": broadcast_to,
    "reshape": reshape,
    "transpose": transpose,
}


def forward(op_kind, inputs, **kwargs):
    """Apply a primitive by name. Shape mismatches raise ShapeError."""
    if op_kind not in _FORWARD_TABLE:
        raise KeyError(f"unknown op kind {op_kind!r}")
    fn = _FORWARD_TABLE[op_kind]
    if op_kind == "concat":
        return fn(inputs, **kwargs)
    return fn(*inputs, **kwargs)


def backward(tape, output):
    """Gradients of a scalar tape output w.r.t. every leaf the tape consumed.

    Returns ``{leaf Tensor: gradient Tensor}`` in leaf registration order.
    Leaves that do not influence the output get zero gradients.  The graph
    is retained, so replaying backward on the same tape is valid and
    bitwise reproducible.
    """
    if output.data.numel() != 1:
        raise ShapeError(f"backward: output must be scalar, got shape {output.shape}")
    leaves = [tape.leaves[k] for k in tape.leaves]
    if not leaves:
        return {}
    grads = torch.autograd.grad(
        output.data.reshape(()),
        [leaf.data for leaf in leaves],
        retain_graph=True,
        allow_unused=True,
    )
    out = {}
    for leaf, g in zip(leaves, grads):
        if g is None:
            g = torch.zeros_like(leaf.data)
        out[leaf] = Tensor(g.detach())
    return out


class no_grad(torch.no_grad):
    """Context: compute without recording gradients (inference paths)."""
