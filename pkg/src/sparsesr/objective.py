"""Training objective: reconstruction fit plus a coefficient sparsity penalty.

Coefficients get a hierarchical zero-mean normal prior whose precision is
gamma-distributed; marginally that makes each coefficient Student-t, i.e.
genuinely heavier-tailed than a Gaussian, which is what pushes most
coefficients toward zero while letting a few stay large.  The penalty term
is the KL divergence between the factorized posterior N(mu, sigma^2) and
that prior, with the gamma precision collapsed to its conditional mean:

    penalty per entry = 0.5 * (rho_hat * (mu^2 + sigma^2) - log sigma^2),
    rho_hat = (alpha + 0.5) / (beta + 0.5 * (mu^2 + sigma^2)),

dropping mu/sigma-independent constants.  By default gradients flow through
rho_hat as written; ``flow_through_rho=False`` treats it as a constant
per step (the classic EM-flavored variant), which is exposed because the
two choices measurably change training dynamics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammaln

from .errors import ConfigError, NumericsError, ShapeMismatchError
from .numerics import Tensor, as_tensor, log, mean, square
from .numerics.tensor import guard_finite


@dataclass(frozen=True)
class PriorParams:
    """Gamma shape/rate hyperparameters of the coefficient precision."""

    alpha: float = 3.0
    beta: float = 0.5

    def __post_init__(self):
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ConfigError(f"prior alpha must be finite and positive, got {self.alpha}")
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise ConfigError(f"prior beta must be finite and positive, got {self.beta}")

    @property
    def scale(self) -> float:
        """Marginal coefficient scale sqrt(beta / alpha)."""
        return math.sqrt(self.beta / self.alpha)


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for the penalty and the optional plug-in terms."""

    coeff: float = 0.01
    adversarial: float = 0.0
    perceptual: float = 0.0

    def __post_init__(self):
        for name in ("coeff", "adversarial", "perceptual"):
            v = getattr(self, name)
            if v < 0.0 or not math.isfinite(v):
                raise ConfigError(f"loss weight {name} must be finite and >= 0, got {v}")


@dataclass
class LossReport:
    """Scalar values of each term plus the differentiable total."""

    recon: float
    coeff_penalty: float
    adversarial: float
    perceptual: float
    total: float
    node: Tensor


def recon_loss(x, m, e: Tensor) -> Tensor:
    """Half mean squared error between x and the composed output m + e.

    ``x`` and ``m`` are constants (targets and the deterministic base);
    only the residual ``e`` carries gradient.  Computed as the residual
    fit 0.5 * mean(((x - m) - e)^2), which is identical algebraically and
    numerically to subtracting m from the prediction.
    """
    target = np.asarray(x) - np.asarray(m)
    if target.shape != e.data.shape:
        raise ShapeMismatchError(
            f"recon_loss: target shape {target.shape} != residual shape {e.data.shape}"
        )
    diff = as_tensor(target.astype(e.data.dtype, copy=False)) - e
    return mean(square(diff)) * 0.5


def kl_loss(mu: Tensor, sigma: Tensor, prior: PriorParams,
            flow_through_rho: bool = True) -> Tensor:
    """Mean per-entry divergence from the collapsed hierarchical prior."""
    if mu.data.shape != sigma.data.shape:
        raise ShapeMismatchError(
            f"kl_loss: mu shape {mu.data.shape} != sigma shape {sigma.data.shape}"
        )
    if np.any(sigma.data <= 0.0):
        raise NumericsError("kl_loss: sigma must be strictly positive")
    second_moment = square(mu) + square(sigma)
    denom_in = second_moment if flow_through_rho else second_moment.detach()
    rho_hat = (prior.alpha + 0.5) / (denom_in * 0.5 + prior.beta)
    per_entry = rho_hat * second_moment - log(square(sigma))
    return mean(per_entry) * 0.5


def prior_logpdf(w, prior: PriorParams) -> np.ndarray:
    """Log marginal density of a coefficient under the hierarchical prior.

    Integrating the gamma precision out of N(0, 1/rho) gives a Student-t
    with 2*alpha degrees of freedom and scale sqrt(beta/alpha):

        log p(w) = ln G(a + 1/2) - ln G(a) - 0.5 ln(2 pi b)
                   - (a + 1/2) ln(1 + w^2 / (2 b)).
    """
    w = np.asarray(w, dtype=np.float64)
    a, b = prior.alpha, prior.beta
    out = (gammaln(a + 0.5) - gammaln(a) - 0.5 * np.log(2.0 * np.pi * b)
           - (a + 0.5) * np.log1p(w * w / (2.0 * b)))
    guard_finite(out, "prior_logpdf")
    return out


def sample_prior(prior: PriorParams, size, rng: np.random.Generator) -> np.ndarray:
    """Two-stage ancestral draw: precision from the gamma, then the normal."""
    rho = rng.gamma(shape=prior.alpha, scale=1.0 / prior.beta, size=size)
    return rng.standard_normal(np.shape(rho)) / np.sqrt(rho)


def total_loss(recon: Tensor, coeff_penalty: Tensor, weights: LossWeights,
               adversarial_hook: Callable[[], Tensor] | None = None,
               perceptual_hook: Callable[[], Tensor] | None = None) -> LossReport:
    """Combine the terms; zero-weight terms are skipped, not multiplied.

    Skipping keeps ``total == recon`` bit-exact when every weight is zero
    and avoids building dead graph nodes.  The adversarial and perceptual
    slots accept callables so a discriminator or feature network can be
    plugged in later; with no hook attached their contribution is zero.
    """
    node = recon
    adv_val = 0.0
    per_val = 0.0
    pen_val = float(coeff_penalty.data)
    if weights.coeff > 0.0:
        node = node + coeff_penalty * weights.coeff
    if weights.adversarial > 0.0 and adversarial_hook is not None:
        adv = adversarial_hook()
        adv_val = float(adv.data)
        node = node + adv * weights.adversarial
    if weights.perceptual > 0.0 and perceptual_hook is not None:
        per = perceptual_hook()
        per_val = float(per.data)
        node = node + per * weights.perceptual
    return LossReport(
        recon=float(recon.data),
        coeff_penalty=pen_val,
        adversarial=adv_val,
        perceptual=per_val,
        total=float(node.data),
        node=node,
    )
