"""Dense tensors with tape-based reverse-mode automatic differentiation.

Each operation records its inputs and a backward closure on the result
node; calling ``backward()`` on a scalar loss walks the recorded graph in
reverse topological order and accumulates gradients into every node that
requires them.  The tape is rebuilt on every forward pass, which keeps
dynamic control flow (per-step noise, optional branches) trivially correct.
Only first-order gradients are supported.

Training runs in float32.  Gradient verification switches the whole engine
to float64 via :func:`set_default_dtype` or the :func:`precision` context
manager; mixing the two dtypes in one expression is an error rather than a
silent promotion.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from ..errors import NumericsError, ShapeMismatchError

_STATE = {"dtype": np.float32, "tape": True, "finite_checks": True}

_ALLOWED_DTYPES = (np.float32, np.float64)


def set_default_dtype(dtype) -> None:
    dt = np.dtype(dtype).type
    if dt not in _ALLOWED_DTYPES:
        raise NumericsError(f"unsupported default dtype {dtype!r}; use float32 or float64")
    _STATE["dtype"] = dt


def get_default_dtype():
    return _STATE["dtype"]


@contextmanager
def precision(dtype):
    """Temporarily switch the default dtype (float64 for gradient checks)."""
    prev = _STATE["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _STATE["dtype"] = prev


@contextmanager
def no_grad():
    """Disable taping inside the block; results become constant leaves."""
    prev = _STATE["tape"]
    _STATE["tape"] = False
    try:
        yield
    finally:
        _STATE["tape"] = prev


def tape_enabled() -> bool:
    return _STATE["tape"]


def guard_finite(data: np.ndarray, op: str) -> None:
    """Raise if ``data`` contains NaN or Inf.

    A single sum is enough: any non-finite entry poisons it.  Checked on
    every op output so failures surface at the op that produced them.
    """
    if not _STATE["finite_checks"]:
        return
    if not math.isfinite(float(np.sum(data))):
        raise NumericsError(f"{op} produced non-finite values")


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        # Explicit float32/float64 arrays keep their dtype; anything else
        # (lists, ints, integer arrays) lands on the current default.
        if isinstance(data, np.ndarray) and data.dtype.type in _ALLOWED_DTYPES:
            arr = data
        else:
            arr = np.asarray(data, dtype=_STATE["dtype"])
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    @classmethod
    def _node(cls, data: np.ndarray, parents, backward_fn, op: str) -> "Tensor":
        guard_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if _STATE["tape"] and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward_fn = None
        return out

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- graph ----------------------------------------------------------

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
        return out

    def accumulate_grad(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise ShapeMismatchError(
                f"backward() needs a scalar, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operators (implemented in ops.py, attached there) ---------------


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    """Coerce ``value`` to a constant Tensor, matching ``like``'s dtype."""
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value)
    if like is not None:
        arr = arr.astype(like.data.dtype, copy=False)
    elif arr.dtype.type not in _ALLOWED_DTYPES:
        arr = arr.astype(_STATE["dtype"])
    out = Tensor.__new__(Tensor)
    out.data = arr
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._backward_fn = None
    return out


def check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.dtype != b.data.dtype:
        raise ShapeMismatchError(
            f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}"
        )
