"""Tensor engine: tape autodiff, NN operations, Adam, gradient checks."""

from .tensor import (
    Tensor,
    as_tensor,
    get_default_dtype,
    no_grad,
    precision,
    set_default_dtype,
)
from .ops import (
    add,
    conv2d,
    div,
    exp,
    global_avg_pool,
    layer_norm,
    log,
    matmul,
    mean,
    mul,
    neg,
    power,
    relu,
    reshape,
    softplus,
    square,
    sub,
    tensor_sum,
    transpose,
    transposed_conv2d,
)
from .optim import AdamState, adam_step, clip_gradients
from .gradcheck import finite_diff_check

__all__ = [
    "AdamState",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "clip_gradients",
    "conv2d",
    "div",
    "exp",
    "finite_diff_check",
    "get_default_dtype",
    "global_avg_pool",
    "layer_norm",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "power",
    "precision",
    "relu",
    "reshape",
    "set_default_dtype",
    "softplus",
    "square",
    "sub",
    "tensor_sum",
    "transpose",
    "transposed_conv2d",
]
