"""Closed-form entropies and KL divergences for the variational objective.

Every formula is written with the dispatching elementwise functions from
``tensor`` so the same code runs on numpy values (for verification) and on
``Tensor`` parameters (inside the training graph).

Gamma and inverse-Gamma priors use the scale parametrization:
``G(a, b)`` has density ``z**(a-1) exp(-z/b) / (Gamma(a) b**a)`` and
``IG(a, b)`` has density ``b**a z**(-a-1) exp(-b/z) / Gamma(a)``.
"""

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import tensor as T
from .errors import DomainError

# constants of the sigmoid approximation to the normal-Jeffreys scale KL
NJ_K1 = 0.63576
NJ_K2 = 1.87320
NJ_K3 = 1.48695

LOG_2PI = math.log(2.0 * math.pi)

_LANCZOS_G = 7
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


@dataclass
class GaussianParams:
    mu: Any
    log_sigma2: Any

    @property
    def sigma2(self):
        return T.exp(self.log_sigma2)


@dataclass
class LogNormalParams:
    """Log-normal q(z) = LN(mu, exp(log_sigma2)), parameters of log z."""

    mu: Any
    log_sigma2: Any

    @property
    def sigma2(self):
        return T.exp(self.log_sigma2)


def lgamma(x):
    """Log-gamma by the Lanczos approximation (g=7, n=9)."""
    if x <= 0:
        raise DomainError(f"lgamma requires a positive argument, got {x}")
    if x < 0.5:
        # reflection keeps the series in its accurate range
        return math.log(math.pi / abs(math.sin(math.pi * x))) - lgamma(1.0 - x)
    x -= 1.0
    acc = _LANCZOS_COEF[0]
    for i in range(1, _LANCZOS_G + 2):
        acc += _LANCZOS_COEF[i] / (x + i)
    t = x + _LANCZOS_G + 0.5
    return 0.5 * LOG_2PI + (x + 0.5) * math.log(t) - t + math.log(acc)


def _plain(x):
    return not isinstance(x, T.Tensor)


def _require_positive(name, value):
    if _plain(value) and not np.all(np.asarray(value) > 0):
        raise DomainError(f"{name} must be positive")


def _require_finite(name, value):
    if _plain(value) and not np.all(np.isfinite(np.asarray(value, dtype=np.float64))):
        raise DomainError(f"{name} must be finite")


def kl_conditional_gaussian(mu, sigma2):
    """KL(N(mu, sigma2) || N(0, 1)), elementwise."""
    _require_positive("sigma2", sigma2)
    return 0.5 * (-T.log(sigma2) + sigma2 + T.square(mu) - 1.0)


def kl_gaussian_logvar(mu, log_sigma2):
    """Same as ``kl_conditional_gaussian`` but parametrized by log variance."""
    _require_finite("log_sigma2", log_sigma2)
    return 0.5 * (-log_sigma2 + T.exp(log_sigma2) + T.square(mu) - 1.0)


def neg_kl_nj_scale(log_alpha):
    """Approximate -KL(q(z) || p(z)) for the normal-Jeffreys scale prior.

    Depends only on the group dropout rate ``log_alpha = log(sigma2_z / mu_z**2)``.
    Bounded above by zero and nondecreasing in ``log_alpha``.
    """
    _require_finite("log_alpha", log_alpha)
    return NJ_K1 * T.sigmoid(NJ_K2 + NJ_K3 * log_alpha) - 0.5 * T.softplus(-log_alpha) - NJ_K1


def lognormal_entropy(mu, sigma2):
    _require_positive("sigma2", sigma2)
    return 0.5 * T.log(sigma2) + mu + 0.5 + 0.5 * LOG_2PI


def _check_shape_scale(alpha, beta):
    if not alpha > 0:
        raise DomainError(f"shape must be positive, got {alpha}")
    if not beta > 0:
        raise DomainError(f"scale must be positive, got {beta}")


def neg_kl_lognormal_from_invgamma(q, alpha, beta):
    """-KL(LN(mu, sigma2) || IG(alpha, beta)), elementwise over ``q``."""
    _check_shape_scale(alpha, beta)
    _require_finite("log_sigma2", q.log_sigma2)
    return (
        alpha * math.log(beta)
        - lgamma(alpha)
        - alpha * q.mu
        - beta * T.exp(-q.mu + 0.5 * q.sigma2)
        + 0.5 * (q.log_sigma2 + 1.0 + LOG_2PI)
    )


def neg_kl_lognormal_from_gamma(q, alpha, beta):
    """-KL(LN(mu, sigma2) || G(alpha, beta)), elementwise over ``q``."""
    _check_shape_scale(alpha, beta)
    _require_finite("log_sigma2", q.log_sigma2)
    return (
        -alpha * math.log(beta)
        - lgamma(alpha)
        + alpha * q.mu
        - T.exp(q.mu + 0.5 * q.sigma2) / beta
        + 0.5 * (q.log_sigma2 + 1.0 + LOG_2PI)
    )


def horseshoe_scale_neg_kl(s_a, s_b, alphas, betas, tau0):
    """Total -KL of the horseshoe scale hierarchy.

    Priors: ``s_a ~ G(1/2, tau0**2)``, ``s_b ~ IG(1/2, 1)`` for the global
    scale ``s = sqrt(s_a s_b)``; ``alpha_i ~ G(1/2, 1)``, ``beta_i ~ IG(1/2, 1)``
    for the local scales ``z_i = sqrt(alpha_i beta_i)``.
    """
    if not tau0 > 0:
        raise DomainError(f"tau0 must be positive, got {tau0}")
    total = T.tsum(neg_kl_lognormal_from_gamma(s_a, 0.5, tau0 ** 2)) + T.tsum(
        neg_kl_lognormal_from_invgamma(s_b, 0.5, 1.0)
    )
    if np.size(_raw(alphas.mu)) > 0:
        total = total + T.tsum(neg_kl_lognormal_from_gamma(alphas, 0.5, 1.0))
        total = total + T.tsum(neg_kl_lognormal_from_invgamma(betas, 0.5, 1.0))
    return total


def _raw(x):
    return x.data if isinstance(x, T.Tensor) else x
