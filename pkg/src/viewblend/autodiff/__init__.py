from .tensor import (
    DEFAULT_DTYPE,
    Parameter,
    ShapeError,
    Tape,
    Tensor,
    add,
    backward,
    broadcast_to,
    concat,
    div,
    exp,
    forward,
    gather,
    layer_norm,
    log,
    matmul,
    mean_reduce,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax,
    sub,
    sum_reduce,
    transpose,
)
from .gradcheck import grad_check
from .checkpoint import load_blob, save_blob
from . import nn

__all__ = [
    "DEFAULT_DTYPE",
    "Parameter",
    "ShapeError",
    "Tape",
    "Tensor",
    "add",
    "backward",
    "broadcast_to",
    "concat",
    "div",
    "exp",
    "forward",
    "gather",
    "grad_check",
    "layer_norm",
    "load_blob",
    "log",
    "matmul",
    "mean_reduce",
    "mul",
    "nn",
    "no_grad",
    "relu",
    "reshape",
    "save_blob",
    "sigmoid",
    "softmax",
    "sub",
    "sum_reduce",
    "transpose",
]
