"""Independent reference implementations used to cross-check the fast paths.

Everything here is written the slow, obvious way: nested scalar loops,
high-precision arithmetic, adaptive quadrature.  None of it shares code
with the production implementations, which is the point; the self-check
command and the verification suite compare the two routes against stated
tolerances.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np
from scipy import integrate


# ---------------------------------------------------------------------------
# convolution and linear-algebra references (scalar loops)
# ---------------------------------------------------------------------------

def conv2d_reference(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None,
                     stride: int = 1, padding: int = 0) -> np.ndarray:
    """Direct six-loop cross-correlation over NCHW input."""
    n, cin, h, wid = x.shape
    cout, _, kh, kw = w.shape
    if padding > 0:
        xp = np.zeros((n, cin, h + 2 * padding, wid + 2 * padding), dtype=x.dtype)
        xp[:, :, padding:padding + h, padding:padding + wid] = x
    else:
        xp = x
    ho = (xp.shape[2] - kh) // stride + 1
    wo = (xp.shape[3] - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo), dtype=np.float64)
    for ni in range(n):
        for oc in range(cout):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ic in range(cin):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += float(xp[ni, ic, oy * stride + ky, ox * stride + kx]) \
                                    * float(w[oc, ic, ky, kx])
                    out[ni, oc, oy, ox] = acc
    if b is not None:
        out += np.asarray(b, dtype=np.float64).reshape(1, cout, 1, 1)
    return out


def transposed_conv2d_reference(x: np.ndarray, w: np.ndarray,
                                b: np.ndarray | None = None,
                                stride: int = 1) -> np.ndarray:
    """Direct scatter loop for the transposed convolution."""
    n, cin, h, wid = x.shape
    _, cout, kh, kw = w.shape
    ho = (h - 1) * stride + kh
    wo = (wid - 1) * stride + kw
    out = np.zeros((n, cout, ho, wo), dtype=np.float64)
    for ni in range(n):
        for ic in range(cin):
            for iy in range(h):
                for ix in range(wid):
                    v = float(x[ni, ic, iy, ix])
                    for oc in range(cout):
                        for ky in range(kh):
                            for kx in range(kw):
                                out[ni, oc, iy * stride + ky, ix * stride + kx] += \
                                    v * float(w[ic, oc, ky, kx])
    if b is not None:
        out += np.asarray(b, dtype=np.float64).reshape(1, cout, 1, 1)
    return out


def matmul_reference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product for 2-D operands."""
    n, k = a.shape
    _, m = b.shape
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def assemble_residual_reference(z: np.ndarray, coeffs: np.ndarray,
                                lr_h: int, lr_w: int, scale: int) -> np.ndarray:
    """Per-pixel residual assembly: one atom-weighted sum per LR site.

    z is (scale*scale, C); coeffs is (lr_h*lr_w, C); the result is the
    (scale*lr_h, scale*lr_w) residual with row-major tiles.
    """
    out = np.zeros((lr_h * scale, lr_w * scale), dtype=np.float64)
    c = z.shape[1]
    for iy in range(lr_h):
        for ix in range(lr_w):
            row = coeffs[iy * lr_w + ix]
            for py in range(scale):
                for px in range(scale):
                    p = py * scale + px
                    acc = 0.0
                    for k in range(c):
                        acc += float(z[p, k]) * float(row[k])
                    out[iy * scale + py, ix * scale + px] = acc
    return out


# ---------------------------------------------------------------------------
# resampling reference (scalar kernel sums)
# ---------------------------------------------------------------------------

def cubic_kernel_scalar(t: float, a: float = -0.5) -> float:
    t = abs(t)
    if t <= 1.0:
        return (a + 2.0) * t ** 3 - (a + 3.0) * t ** 2 + 1.0
    if t < 2.0:
        return a * t ** 3 - 5.0 * a * t ** 2 + 8.0 * a * t - 4.0 * a
    return 0.0


def resize1d_reference(values: np.ndarray, n_out: int) -> np.ndarray:
    """Center-aligned antialiased Catmull-Rom resampling of a 1-D signal."""
    n_in = len(values)
    scale = n_in / n_out
    support = max(scale, 1.0)
    out = np.zeros(n_out, dtype=np.float64)
    for j in range(n_out):
        center = (j + 0.5) * scale - 0.5
        lo = math.floor(center - 2.0 * support) + 1
        hi = math.floor(center + 2.0 * support)
        wsum = 0.0
        acc = 0.0
        for i in range(lo, hi + 1):
            wgt = cubic_kernel_scalar((i - center) / support)
            if wgt == 0.0:
                continue
            src = min(max(i, 0), n_in - 1)
            acc += wgt * float(values[src])
            wsum += wgt
        out[j] = acc / wsum
    return out


# ---------------------------------------------------------------------------
# loss and prior references (high precision)
# ---------------------------------------------------------------------------

def kl_entry_reference(mu: float, sigma: float, alpha: float, beta: float,
                       dps: int = 50) -> float:
    """One coefficient's KL penalty evaluated with mpmath at ``dps`` digits."""
    with mpmath.workdps(dps):
        mu_ = mpmath.mpf(repr(float(mu)))
        sg = mpmath.mpf(repr(float(sigma)))
        al = mpmath.mpf(repr(float(alpha)))
        be = mpmath.mpf(repr(float(beta)))
        t = mu_ * mu_ + sg * sg
        mu_rho = (al + mpmath.mpf("0.5")) / (be + t / 2)
        val = (mu_rho * t - mpmath.log(sg * sg)) / 2
        return float(val)


def prior_logpdf_quadrature(w: float, alpha: float, beta: float) -> float:
    """Marginal coefficient density via adaptive quadrature over the precision.

    Integrates Normal(w; 0, 1/rho) * Gamma(rho; alpha, rate=beta) d rho on
    (0, inf) and returns the log.  The integrand is evaluated in log space
    to survive extreme rho.
    """
    w = float(w)

    def integrand(rho: float) -> float:
        if rho <= 0.0:
            return 0.0
        log_n = 0.5 * math.log(rho) - 0.5 * math.log(2.0 * math.pi) - 0.5 * rho * w * w
        log_g = alpha * math.log(beta) - math.lgamma(alpha) \
            + (alpha - 1.0) * math.log(rho) - beta * rho
        return math.exp(log_n + log_g)

    val, _ = integrate.quad(integrand, 0.0, np.inf, limit=400, epsabs=1e-14, epsrel=1e-12)
    return math.log(val)


def recon_reference(x: np.ndarray, m: np.ndarray, e: np.ndarray) -> float:
    """Half mean squared reconstruction error, scalar loop."""
    xf = x.reshape(-1)
    mf = m.reshape(-1)
    ef = e.reshape(-1)
    acc = 0.0
    for i in range(xf.size):
        d = float(xf[i]) - (float(mf[i]) + float(ef[i]))
        acc += d * d
    return 0.5 * acc / xf.size


# ---------------------------------------------------------------------------
# diversity reference (explicit loops)
# ---------------------------------------------------------------------------

def diversity_reference(maps: list[np.ndarray]) -> float:
    """Exhaustive per-pixel-minimum diversity score over distance maps."""
    n = len(maps)
    if n < 2:
        return 0.0
    h, w = maps[0].shape
    local = 0.0
    for iy in range(h):
        for ix in range(w):
            best = float(maps[0][iy, ix])
            for k in range(1, n):
                v = float(maps[k][iy, ix])
                if v < best:
                    best = v
            local += best
    local /= h * w
    global_best = min(float(np.mean(mp)) for mp in maps)
    if global_best == 0.0:
        return 0.0
    return 100.0 * (global_best - local) / global_best


# ---------------------------------------------------------------------------
# adjoint identity
# ---------------------------------------------------------------------------

def adjoint_gap(forward, vjp, x: np.ndarray, y: np.ndarray) -> float:
    """Relative gap in <A x, y> = <x, A^T y> for a linear map A.

    ``forward`` maps x-like arrays to y-like arrays; ``vjp`` maps y-like
    arrays back.  Both must be linear for the identity to hold.
    """
    ax = forward(x)
    aty = vjp(y)
    lhs = float(np.sum(ax.astype(np.float64) * y.astype(np.float64)))
    rhs = float(np.sum(x.astype(np.float64) * aty.astype(np.float64)))
    denom = abs(lhs) + abs(rhs) + 1e-30
    return abs(lhs - rhs) / denom
