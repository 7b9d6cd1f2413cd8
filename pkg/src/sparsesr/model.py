"""Two-branch sparse-representation model for explorable super-resolution.

One branch summarizes the whole LR channel into a compact dictionary of
per-offset atoms; the other predicts, per LR pixel, a distribution over
mixing coefficients.  A super-resolved residual is one draw of coefficients
multiplied against the dictionary, painted as non-overlapping scale x scale
tiles on top of a deterministic upsampled base.  Sampling the coefficients
repeatedly yields as many plausible reconstructions as requested, and each
one is pushed back onto the set of LR-consistent images by iterative
back-projection.

The same weights process R, G, and B: channels are stacked along the batch
axis, so the network is identical per channel and batching is free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericsError, ShapeMismatchError
from .imaging import bicubic_resize, degrade
from .numerics import (
    Tensor,
    conv2d,
    get_default_dtype,
    global_avg_pool,
    layer_norm,
    matmul,
    no_grad,
    relu,
    reshape,
    softplus,
    transpose,
    transposed_conv2d,
)
from .rng import derive

_ALLOWED_SCALES = (2, 4, 8)
_ALLOWED_BASES = ("bicubic", "none", "external")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and inference knobs.

    scale: upsampling factor (2, 4, or 8).
    num_atoms: dictionary size C; each atom is one scale x scale tile pattern.
    num_blocks: residual blocks in the dictionary branch.
    width: feature channels in both branches.
    coeff_depth: conv layers in the coefficient branch.
    stochastic_atoms: add a learned-scale noise to the dictionary per draw.
    stochastic_coeffs: sample coefficients (off gives the posterior mean).
    base_mode: deterministic path composed with the residual.
    sigma_floor: additive floor keeping predicted spread strictly positive.
    cem_iters: back-projection rounds applied to every sample.
    """

    scale: int = 4
    num_atoms: int = 256
    num_blocks: int = 4
    width: int = 32
    coeff_depth: int = 3
    stochastic_atoms: bool = False
    stochastic_coeffs: bool = True
    base_mode: str = "bicubic"
    sigma_floor: float = 1e-4
    cem_iters: int = 5

    def __post_init__(self):
        if self.scale not in _ALLOWED_SCALES:
            raise ConfigError(f"scale must be one of {_ALLOWED_SCALES}, got {self.scale}")
        for name in ("num_atoms", "num_blocks", "width", "coeff_depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.base_mode not in _ALLOWED_BASES:
            raise ConfigError(
                f"base_mode must be one of {_ALLOWED_BASES}, got {self.base_mode!r}")
        if not (self.sigma_floor > 0.0):
            raise ConfigError(f"sigma_floor must be positive, got {self.sigma_floor}")
        if self.cem_iters < 0:
            raise ConfigError(f"cem_iters must be >= 0, got {self.cem_iters}")

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "num_atoms": self.num_atoms,
            "num_blocks": self.num_blocks,
            "width": self.width,
            "coeff_depth": self.coeff_depth,
            "stochastic_atoms": self.stochastic_atoms,
            "stochastic_coeffs": self.stochastic_coeffs,
            "base_mode": self.base_mode,
            "sigma_floor": self.sigma_floor,
            "cem_iters": self.cem_iters,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class CoeffDistribution:
    """Per-pixel factorized coefficient posterior: mean and spread."""

    mu: Tensor      # (N, lr_pixels, num_atoms)
    sigma: Tensor   # same shape, strictly positive


@dataclass
class SRSampleSet:
    """Everything one sampling call produced, in draw order."""

    base: np.ndarray
    samples: list[np.ndarray]
    seed: int
    lr: np.ndarray


def softplus_inverse(y: float) -> float:
    """Scalar inverse of log1p(exp(x)); valid for y > 0."""
    if y <= 0:
        raise ConfigError(f"softplus_inverse needs y > 0, got {y}")
    return y + math.log(-math.expm1(-y))


class SparseSRModel:
    """Parameter container plus the forward passes of both branches."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    # -- construction ----------------------------------------------------

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0,
                   init_sigma: float | None = None) -> "SparseSRModel":
        """Kaiming-style init; the spread head starts at ``init_sigma``.

        ``init_sigma`` defaults to the prior scale sqrt(beta/alpha) of the
        default prior so freshly initialized draws already have sensible
        magnitude.
        """
        if init_sigma is None:
            init_sigma = math.sqrt(0.5 / 3.0)
        if init_sigma <= config.sigma_floor:
            raise ConfigError(
                f"init_sigma {init_sigma} must exceed sigma_floor {config.sigma_floor}")
        rng = derive(seed, "model-init")
        w, c, s = config.width, config.num_atoms, config.scale
        dtype = get_default_dtype()
        params: dict[str, Tensor] = {}

        def kaiming(shape, fan_in, gain=1.0):
            std = gain * math.sqrt(2.0 / fan_in)
            return Tensor(rng.normal(0.0, std, size=shape).astype(dtype),
                          requires_grad=True)

        def zeros(shape):
            return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

        params["basis.head.w"] = kaiming((w, 1, 3, 3), 9)
        params["basis.head.b"] = zeros((w,))
        for i in range(config.num_blocks):
            params[f"basis.block{i}.conv1.w"] = kaiming((w, w, 3, 3), 9 * w)
            params[f"basis.block{i}.conv1.b"] = zeros((w,))
            params[f"basis.block{i}.conv2.w"] = kaiming((w, w, 3, 3), 9 * w)
            params[f"basis.block{i}.conv2.b"] = zeros((w,))
        params["basis.up.w"] = kaiming((w, c, s, s), w)
        params["basis.up.b"] = zeros((c,))
        if config.stochastic_atoms:
            params["basis.noise_scale"] = Tensor(
                np.array(softplus_inverse(0.01), dtype=dtype), requires_grad=True)

        for i in range(config.coeff_depth):
            cin = 1 if i == 0 else w
            params[f"coeff.conv{i}.w"] = kaiming((w, cin, 3, 3), 9 * cin)
            params[f"coeff.conv{i}.b"] = zeros((w,))
            params[f"coeff.ln{i}.gain"] = Tensor(np.ones(w, dtype=dtype),
                                                 requires_grad=True)
            params[f"coeff.ln{i}.offset"] = zeros((w,))
        # Small heads: the mean starts near zero, the spread near init_sigma.
        params["coeff.mu.w"] = kaiming((c, w, 1, 1), w, gain=0.1)
        params["coeff.mu.b"] = zeros((c,))
        params["coeff.sigma.w"] = kaiming((c, w, 1, 1), w, gain=0.1)
        params["coeff.sigma.b"] = Tensor(
            np.full(c, softplus_inverse(init_sigma - config.sigma_floor),
                    dtype=dtype),
            requires_grad=True)
        return cls(config, params)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # -- forward ----------------------------------------------------------

    def basis_branch(self, x: Tensor, atom_noise: Tensor | None = None) -> Tensor:
        """Dictionary of per-offset atoms from a batch of LR channels.

        ``x`` is (N, 1, H, W); the result is (N, scale^2, num_atoms), row
        p of which is the atom vector for HR offset (p // scale, p % scale)
        inside each tile.
        """
        self._check_channel_batch(x, "basis_branch")
        p = self.params
        h = conv2d(x, p["basis.head.w"], p["basis.head.b"], padding=1)
        for i in range(self.config.num_blocks):
            r = conv2d(h, p[f"basis.block{i}.conv1.w"],
                       p[f"basis.block{i}.conv1.b"], padding=1)
            r = conv2d(relu(r), p[f"basis.block{i}.conv2.w"],
                       p[f"basis.block{i}.conv2.b"], padding=1)
            h = h + r
        pooled = global_avg_pool(h)
        tiles = transposed_conv2d(pooled, p["basis.up.w"], p["basis.up.b"],
                                  stride=self.config.scale)
        n = x.data.shape[0]
        s2 = self.config.scale * self.config.scale
        z = transpose(reshape(tiles, (n, self.config.num_atoms, s2)), (0, 2, 1))
        if atom_noise is not None:
            if "basis.noise_scale" not in p:
                raise ConfigError("atom noise supplied but stochastic_atoms is off")
            z = z + atom_noise * softplus(p["basis.noise_scale"])
        return z

    def coeff_branch(self, x: Tensor) -> CoeffDistribution:
        """Per-pixel coefficient posterior from a batch of LR channels.

        ``x`` is (N, 1, H, W); mu and sigma come back as
        (N, H * W, num_atoms), one row per LR pixel in row-major order.
        """
        self._check_channel_batch(x, "coeff_branch")
        p = self.params
        h = x
        for i in range(self.config.coeff_depth):
            h = conv2d(h, p[f"coeff.conv{i}.w"], p[f"coeff.conv{i}.b"], padding=1)
            h = relu(layer_norm(h, p[f"coeff.ln{i}.gain"], p[f"coeff.ln{i}.offset"]))
        mu_map = conv2d(h, p["coeff.mu.w"], p["coeff.mu.b"])
        sg_map = conv2d(h, p["coeff.sigma.w"], p["coeff.sigma.b"])
        n, _, hh, ww = x.data.shape
        c = self.config.num_atoms

        def to_rows(t):
            return reshape(transpose(t, (0, 2, 3, 1)), (n, hh * ww, c))

        sigma = softplus(to_rows(sg_map)) + self.config.sigma_floor
        return CoeffDistribution(mu=to_rows(mu_map), sigma=sigma)

    def _check_channel_batch(self, x: Tensor, op: str) -> None:
        if x.data.ndim != 4 or x.data.shape[1] != 1:
            raise ShapeMismatchError(
                f"{op} expects (N, 1, H, W) single-channel batches, got {x.data.shape}")


def sample_coeffs(dist: CoeffDistribution, noise: np.ndarray) -> Tensor:
    """Reparameterized draw mu + sigma * eps for a fixed noise array."""
    if noise.shape != dist.mu.data.shape:
        raise ShapeMismatchError(
            f"sample_coeffs: noise shape {noise.shape} != mu shape {dist.mu.data.shape}")
    eps = Tensor(noise.astype(dist.mu.data.dtype, copy=False))
    return dist.mu + dist.sigma * eps


def assemble_residual(z: Tensor, coeffs: Tensor, lr_shape: tuple[int, int],
                      scale: int) -> Tensor:
    """Paint coefficient-weighted atoms as non-overlapping HR tiles.

    ``z`` is (N, scale^2, C), ``coeffs`` is (N, H*W, C); the result is
    (N, H*scale, W*scale).  Tile (i, j) of the output is the coefficient
    row of LR pixel (i, j) times the atom matrix, reshaped row-major.
    """
    h, w = lr_shape
    n, s2, c = z.data.shape
    if s2 != scale * scale:
        raise ShapeMismatchError(
            f"assemble_residual: atom rows {s2} != scale^2 {scale * scale}")
    if coeffs.data.shape != (n, h * w, c):
        raise ShapeMismatchError(
            f"assemble_residual: coeffs shape {coeffs.data.shape} != "
            f"({n}, {h * w}, {c})")
    flat = matmul(coeffs, transpose(z, (0, 2, 1)))       # (N, H*W, s^2)
    tiles = reshape(flat, (n, h, w, scale, scale))
    rows = transpose(tiles, (0, 1, 3, 2, 4))             # (N, H, s, W, s)
    return reshape(rows, (n, h * scale, w * scale))


def deterministic_base(y: np.ndarray, config: ModelConfig,
                       external: np.ndarray | None = None) -> np.ndarray:
    """The non-stochastic HR estimate the residual is painted onto."""
    h, w = y.shape[:2]
    s = config.scale
    if config.base_mode == "bicubic":
        return bicubic_resize(y, h * s, w * s)
    if config.base_mode == "none":
        return np.zeros((h * s, w * s, 3), dtype=np.float64)
    if external is None:
        raise ConfigError("base_mode='external' requires an external SR image")
    if external.shape != (h * s, w * s, 3):
        raise ShapeMismatchError(
            f"external base shape {external.shape} != {(h * s, w * s, 3)}")
    return np.asarray(external, dtype=np.float64)


def cem_project(sr: np.ndarray, y: np.ndarray, scale: int, iters: int) -> np.ndarray:
    """Iterative back-projection onto the LR-consistent set.

    Each round adds the upsampled LR residual; the squared LR error must
    be non-increasing (up to float plateau) or the iteration has diverged,
    which is reported as a numerical error.  A perfectly consistent input
    is a fixed point.
    """
    if sr.ndim != 3 or y.ndim != 3:
        raise ShapeMismatchError(
            f"cem_project expects (H, W, 3) images, got {sr.shape} and {y.shape}")
    h, w = y.shape[:2]
    if sr.shape[:2] != (h * scale, w * scale):
        raise ShapeMismatchError(
            f"cem_project: SR {sr.shape[:2]} is not {scale}x the LR {(h, w)}")
    sr = np.asarray(sr, dtype=np.float64)
    res = y - degrade(sr, scale)
    prev = float(np.mean(res * res))
    for it in range(iters):
        sr = sr + bicubic_resize(res, h * scale, w * scale)
        res = y - degrade(sr, scale)
        cur = float(np.mean(res * res))
        if cur > prev * (1.0 + 1e-6) + 1e-12:
            raise NumericsError(
                f"back-projection diverged at iteration {it}: "
                f"LR residual {prev:.3e} -> {cur:.3e}")
        prev = cur
    return sr


def super_resolve(model: SparseSRModel, y: np.ndarray, count: int, seed: int,
                  zero_coeffs: bool = False,
                  external_base: np.ndarray | None = None,
                  cem_iters: int | None = None) -> SRSampleSet:
    """Draw ``count`` LR-consistent reconstructions of the LR image ``y``.

    Deterministic in (model, y, count, seed): draw k uses its own derived
    noise stream, so extending ``count`` keeps earlier samples identical.
    ``zero_coeffs`` forces every coefficient to zero (the pure base path,
    used by diagnostics).
    """
    if y.ndim != 3 or y.shape[2] != 3:
        raise ShapeMismatchError(f"super_resolve expects (H, W, 3) LR input, got {y.shape}")
    if count < 1:
        raise ConfigError(f"sample count must be >= 1, got {count}")
    cfg = model.config
    iters = cfg.cem_iters if cem_iters is None else cem_iters
    h, w = y.shape[:2]
    base = deterministic_base(y, cfg, external_base)

    dtype = next(iter(model.params.values())).data.dtype
    channels = np.ascontiguousarray(y.transpose(2, 0, 1)[:, None]).astype(dtype)

    samples: list[np.ndarray] = []
    with no_grad():
        x = Tensor(channels)
        if cfg.stochastic_atoms:
            # One shared dictionary per image; per-draw atom noise would
            # break the "same dictionary, explorable coefficients" contract.
            atom_eps = derive(seed, "atom-noise").standard_normal(
                (3, cfg.scale ** 2, cfg.num_atoms)).astype(dtype)
            z = model.basis_branch(x, atom_noise=Tensor(atom_eps))
        else:
            z = model.basis_branch(x)
        dist = model.coeff_branch(x)

        for k in range(count):
            if zero_coeffs:
                sr0 = base
            else:
                if cfg.stochastic_coeffs:
                    eps = derive(seed, "coeff-noise", k).standard_normal(
                        dist.mu.data.shape).astype(dtype)
                    omega = sample_coeffs(dist, eps)
                else:
                    omega = dist.mu
                e = assemble_residual(z, omega, (h, w), cfg.scale)
                residual = e.data.transpose(1, 2, 0).astype(np.float64)
                sr0 = base + residual
            samples.append(cem_project(sr0, y, cfg.scale, iters))
    return SRSampleSet(base=base, samples=samples, seed=seed, lr=y)
