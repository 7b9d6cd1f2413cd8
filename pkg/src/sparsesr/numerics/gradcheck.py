"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import NumericsError
from .tensor import Tensor


def finite_diff_check(f: Callable[[], Tensor], params: dict[str, Tensor],
                      h: float = 1e-5) -> float:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` must rebuild its graph from ``params`` on every call and return a
    scalar Tensor.  Every parameter entry is perturbed by +/- h, so the cost
    is two forward passes per scalar parameter.  Returns the worst relative
    error max |analytic - fd| / (|analytic| + |fd| + 1e-12).

    Only valid in float64; float32 round-off would drown the signal.
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise NumericsError(
                f"finite_diff_check requires float64 parameters, {name!r} is {p.data.dtype}"
            )

    for p in params.values():
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = {}
    for name, p in params.items():
        analytic[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for idx in range(flat.size):
            saved = flat[idx]
            flat[idx] = saved + h
            f_plus = f().item()
            flat[idx] = saved - h
            f_minus = f().item()
            flat[idx] = saved
            fd = (f_plus - f_minus) / (2.0 * h)
            a = float(a_flat[idx])
            err = abs(a - fd) / (abs(a) + abs(fd) + 1e-12)
            if err > worst:
                worst = err
    return worst
