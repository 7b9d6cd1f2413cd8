"""Differentiable operations on :class:`Tensor`.

Every function builds the result array with numpy, then registers a
backward closure that turns the output gradient into input gradients.
Convolutions use sliding-window views contracted through einsum (BLAS
underneath); their backward passes scatter-add per kernel tap, which is
exactly the adjoint of the gather the forward performs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatchError
from .tensor import Tensor, as_tensor, check_same_dtype


def _quiet(fn):
    """Evaluate with numpy warnings silenced; the finite guard raises instead."""
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return fn()


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    check_same_dtype(a, b, "add")
    out_data = _quiet(lambda: a.data + b.data)

    def backward(g):
        a.accumulate_grad(_unbroadcast(g, a.data.shape))
        b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return Tensor._node(out_data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    check_same_dtype(a, b, "sub")
    out_data = _quiet(lambda: a.data - b.data)

    def backward(g):
        a.accumulate_grad(_unbroadcast(g, a.data.shape))
        b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    return Tensor._node(out_data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    check_same_dtype(a, b, "mul")
    out_data = _quiet(lambda: a.data * b.data)

    def backward(g):
        a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return Tensor._node(out_data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    check_same_dtype(a, b, "div")
    out_data = _quiet(lambda: a.data / b.data)

    def backward(g):
        a.accumulate_grad(_unbroadcast(g / b.data, a.data.shape))
        b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor._node(out_data, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    out_data = -a.data

    def backward(g):
        a.accumulate_grad(-g)

    return Tensor._node(out_data, (a,), backward, "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    """Elementwise ``a ** exponent`` for a python-scalar exponent."""
    p = float(exponent)
    out_data = _quiet(lambda: a.data ** p)

    def backward(g):
        a.accumulate_grad(g * p * a.data ** (p - 1.0))

    return Tensor._node(out_data, (a,), backward, "power")


def square(a: Tensor) -> Tensor:
    out_data = _quiet(lambda: a.data * a.data)

    def backward(g):
        a.accumulate_grad(g * (2.0 * a.data))

    return Tensor._node(out_data, (a,), backward, "square")


def exp(a: Tensor) -> Tensor:
    out_data = _quiet(lambda: np.exp(a.data))

    def backward(g):
        a.accumulate_grad(g * out_data)

    return Tensor._node(out_data, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    out_data = _quiet(lambda: np.log(a.data))

    def backward(g):
        a.accumulate_grad(g / a.data)

    return Tensor._node(out_data, (a,), backward, "log")


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        a.accumulate_grad(g * (a.data > 0.0).astype(a.data.dtype))

    return Tensor._node(out_data, (a,), backward, "relu")


def softplus(a: Tensor) -> Tensor:
    """Numerically stable log(1 + exp(a)); derivative is the sigmoid."""
    out_data = np.logaddexp(np.asarray(0.0, dtype=a.data.dtype), a.data)

    def backward(g):
        sig = 1.0 / (1.0 + np.exp(-a.data))
        a.accumulate_grad(g * sig)

    return Tensor._node(out_data, (a,), backward, "softplus")


# ---------------------------------------------------------------------------
# reductions and shape
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.data.ndim)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            shape = list(a.data.shape)
            for ax in axes:
                shape[ax] = 1
            g = g.reshape(shape)
        a.accumulate_grad(np.broadcast_to(g, a.data.shape))

    return Tensor._node(out_data, (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    out_data = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            shape = list(a.data.shape)
            for ax in axes:
                shape[ax] = 1
            g = g.reshape(shape)
        a.accumulate_grad(np.broadcast_to(g / count, a.data.shape))

    return Tensor._node(out_data, (a,), backward, "mean")


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def backward(g):
        a.accumulate_grad(g.reshape(a.data.shape))

    return Tensor._node(out_data, (a,), backward, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(ax % a.data.ndim for ax in axes)
    inverse = tuple(int(i) for i in np.argsort(axes))
    out_data = a.data.transpose(axes)

    def backward(g):
        a.accumulate_grad(g.transpose(inverse))

    return Tensor._node(out_data, (a,), backward, "transpose")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; 2-D or batched with identical leading dims."""
    check_same_dtype(a, b, "matmul")
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatchError(
            f"matmul needs rank >= 2 operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatchError(
            f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}"
        )
    if a.data.ndim != b.data.ndim or a.data.shape[:-2] != b.data.shape[:-2]:
        if not (a.data.ndim == 2 and b.data.ndim == 2):
            raise ShapeMismatchError(
                f"matmul batch dims differ: {a.data.shape} @ {b.data.shape}"
            )
    out_data = a.data @ b.data

    def backward(g):
        a.accumulate_grad(g @ b.data.swapaxes(-1, -2))
        b.accumulate_grad(a.data.swapaxes(-1, -2) @ g)

    return Tensor._node(out_data, (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------

def _conv_windows(padded: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over NCHW input.

    ``w`` is (C_out, C_in, kH, kW); kernels are applied unflipped.  Zero
    padding of ``padding`` pixels is added symmetrically before striding.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatchError(
            f"conv2d expects 4-D input and kernel, got {x.data.shape} and {w.data.shape}"
        )
    check_same_dtype(x, w, "conv2d")
    n, cin, h, wid = x.data.shape
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise ShapeMismatchError(
            f"conv2d channel mismatch: input has {cin}, kernel expects {cin_w}"
        )
    if stride < 1 or padding < 0:
        raise ShapeMismatchError(f"conv2d: bad stride {stride} or padding {padding}")
    if h + 2 * padding < kh or wid + 2 * padding < kw:
        raise ShapeMismatchError(
            f"conv2d kernel ({kh}x{kw}) larger than padded input "
            f"({h + 2 * padding}x{wid + 2 * padding})"
        )
    if b is not None:
        check_same_dtype(x, b, "conv2d")
        if b.data.shape != (cout,):
            raise ShapeMismatchError(
                f"conv2d bias shape {b.data.shape} != ({cout},)"
            )

    if padding > 0:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    win = _conv_windows(xp, kh, kw, stride)
    out_data = np.einsum("nchwij,ocij->nohw", win, w.data, optimize=True)
    if b is not None:
        out_data += b.data.reshape(1, cout, 1, 1)
    ho, wo = out_data.shape[2], out_data.shape[3]

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        if w.requires_grad:
            w.accumulate_grad(np.einsum("nchwij,nohw->ocij", win, g, optimize=True))
        if x.requires_grad:
            gwin = np.einsum("nohw,ocij->nchwij", g, w.data, optimize=True)
            gxp = np.zeros_like(xp)
            rows = stride * np.arange(ho)
            cols = stride * np.arange(wo)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, (rows + i)[:, None], (cols + j)[None, :]] += gwin[..., i, j]
            if padding > 0:
                gxp = gxp[:, :, padding:padding + h, padding:padding + wid]
            x.accumulate_grad(gxp)
        if b is not None:
            b.accumulate_grad(g.sum(axis=(0, 2, 3)))

    return Tensor._node(out_data, parents, backward, "conv2d")


def transposed_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
                      stride: int = 1) -> Tensor:
    """Adjoint of strided convolution (fractional-stride upsampling).

    ``w`` is (C_in, C_out, kH, kW); output spatial size is
    (H - 1) * stride + kH.  With kH == stride each input pixel paints a
    disjoint stride x stride tile, which is how the basis branch expands a
    pooled vector into per-offset atoms.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatchError(
            f"transposed_conv2d expects 4-D input and kernel, got "
            f"{x.data.shape} and {w.data.shape}"
        )
    check_same_dtype(x, w, "transposed_conv2d")
    n, cin, h, wid = x.data.shape
    cin_w, cout, kh, kw = w.data.shape
    if cin != cin_w:
        raise ShapeMismatchError(
            f"transposed_conv2d channel mismatch: input has {cin}, kernel expects {cin_w}"
        )
    if stride < 1:
        raise ShapeMismatchError(f"transposed_conv2d: bad stride {stride}")
    if b is not None:
        check_same_dtype(x, b, "transposed_conv2d")
        if b.data.shape != (cout,):
            raise ShapeMismatchError(
                f"transposed_conv2d bias shape {b.data.shape} != ({cout},)"
            )

    ho = (h - 1) * stride + kh
    wo = (wid - 1) * stride + kw
    contrib = np.einsum("nchw,coij->nohwij", x.data, w.data, optimize=True)
    out_data = np.zeros((n, cout, ho, wo), dtype=x.data.dtype)
    rows = stride * np.arange(h)
    cols = stride * np.arange(wid)
    for i in range(kh):
        for j in range(kw):
            out_data[:, :, (rows + i)[:, None], (cols + j)[None, :]] += contrib[..., i, j]
    if b is not None:
        out_data += b.data.reshape(1, cout, 1, 1)

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gwin = _conv_windows(g, kh, kw, stride)
        if x.requires_grad:
            x.accumulate_grad(np.einsum("nohwij,coij->nchw", gwin, w.data, optimize=True))
        if w.requires_grad:
            w.accumulate_grad(np.einsum("nchw,nohwij->coij", x.data, gwin, optimize=True))
        if b is not None:
            b.accumulate_grad(g.sum(axis=(0, 2, 3)))

    return Tensor._node(out_data, parents, backward, "transposed_conv2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel: (N, C, H, W) -> (N, C, 1, 1)."""
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"global_avg_pool expects 4-D input, got {x.data.shape}")
    return mean(x, axis=(2, 3), keepdims=True)


def layer_norm(x: Tensor, gain: Tensor, offset: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the channel axis of NCHW, then scale and shift.

    Composed from primitive ops so the backward pass needs no bespoke
    derivation; gain and offset broadcast as (1, C, 1, 1).
    """
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"layer_norm expects 4-D input, got {x.data.shape}")
    c = x.data.shape[1]
    if gain.data.shape != (c,) or offset.data.shape != (c,):
        raise ShapeMismatchError(
            f"layer_norm gain/offset must be ({c},), got {gain.data.shape}/{offset.data.shape}"
        )
    mu = mean(x, axis=1, keepdims=True)
    centered = sub(x, mu)
    var = mean(square(centered), axis=1, keepdims=True)
    inv = power(add(var, as_tensor(np.asarray(eps, dtype=x.data.dtype))), -0.5)
    normed = mul(centered, inv)
    g4 = reshape(gain, (1, c, 1, 1))
    o4 = reshape(offset, (1, c, 1, 1))
    return add(mul(normed, g4), o4)


# ---------------------------------------------------------------------------
# operator sugar on Tensor
# ---------------------------------------------------------------------------

def _install_operators():
    Tensor.__add__ = lambda self, other: add(self, other)
    Tensor.__radd__ = lambda self, other: add(as_tensor(other, like=self), self)
    Tensor.__sub__ = lambda self, other: sub(self, other)
    Tensor.__rsub__ = lambda self, other: sub(as_tensor(other, like=self), self)
    Tensor.__mul__ = lambda self, other: mul(self, other)
    Tensor.__rmul__ = lambda self, other: mul(as_tensor(other, like=self), self)
    Tensor.__truediv__ = lambda self, other: div(self, other)
    Tensor.__rtruediv__ = lambda self, other: div(as_tensor(other, like=self), self)
    Tensor.__neg__ = neg
    Tensor.__pow__ = power
    Tensor.__matmul__ = matmul
    Tensor.sum = tensor_sum
    Tensor.mean = mean
    Tensor.reshape = reshape
    Tensor.transpose = transpose
    Tensor.relu = relu
    Tensor.exp = exp
    Tensor.log = log
    Tensor.square = square


_install_operators()
