"""Shrinkage coefficients of scale priors and their Beta laws.

A scale ``z`` maps to ``lambda = 1 / (1 + z**2)``. Under a half-Cauchy(0, 1)
scale, ``lambda`` is Beta(1/2, 1/2) distributed; the normal-Jeffreys limit
behaves like Beta(eps, eps) with eps -> 0, piling all mass on {0, 1}.
"""

import math
from dataclasses import dataclass

import numpy as np

from .distributions import lgamma
from .errors import ContractError, DomainError

_TINY = 1e-300


@dataclass
class ShrinkageSample:
    z: np.ndarray
    lam: np.ndarray
    source: str

    def __post_init__(self):
        if len(self.z) != len(self.lam):
            raise ContractError("z and lambda lengths differ")


def sample_half_cauchy(scale, n, seed):
    if not scale > 0:
        raise DomainError("half-Cauchy scale must be positive")
    if n < 1:
        raise ContractError("need at least one sample")
    u = np.random.default_rng(seed).random(n)
    return np.abs(scale * np.tan(0.5 * np.pi * u))


def shrinkage(z):
    z = np.asarray(z, dtype=np.float64)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + z * z)


def half_cauchy_shrinkage(n, seed, scale=1.0):
    z = sample_half_cauchy(scale, n, seed)
    return ShrinkageSample(z, shrinkage(z), f"half_cauchy({scale})")


def log_beta(a, b):
    return lgamma(a) + lgamma(b) - lgamma(a + b)


def _betacf(a, b, x, max_iter=10000, tol=1e-16):
    """Continued fraction of the incomplete beta function (modified Lentz), vectorized in x."""
    x = np.asarray(x, dtype=np.float64)
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _TINY, _TINY, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        h = np.where(active, h * d * c, h)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(active, h * delta, h)
        active &= np.abs(delta - 1.0) > tol
        if not active.any():
            return h
    raise ContractError("incomplete beta continued fraction did not converge")


def betainc(a, b, x):
    """Regularized incomplete beta ``I_x(a, b)``, elementwise over ``x``."""
    if not (a > 0 and b > 0):
        raise DomainError("beta parameters must be positive")
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < 0) | (x > 1)):
        raise DomainError("incomplete beta argument outside [0, 1]")
    out = np.where(x >= 1.0, 1.0, 0.0)
    inner = (x > 0) & (x < 1)
    xi = x[inner]
    lbeta = log_beta(a, b)
    with np.errstate(divide="ignore"):
        log_front = a * np.log(xi) + b * np.log1p(-xi) - lbeta
    front = np.exp(log_front)
    lower = xi < (a + 1.0) / (a + b + 2.0)
    vals = np.empty_like(xi)
    if lower.any():
        vals[lower] = front[lower] * _betacf(a, b, xi[lower]) / a
    if (~lower).any():
        vals[~lower] = 1.0 - front[~lower] * _betacf(b, a, 1.0 - xi[~lower]) / b
    out[inner] = vals
    return out


def beta_pdf(x, a, b):
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.exp((a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - log_beta(a, b))


def ks_against_beta(lambdas, a, b):
    """Kolmogorov-Smirnov distance between the sample ECDF and Beta(a, b)."""
    lam = np.sort(np.asarray(lambdas, dtype=np.float64).ravel())
    n = lam.size
    if n == 0:
        raise ContractError("KS statistic of an empty sample")
    cdf = betainc(a, b, lam)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))


def _log_betainc_lower(a, b, log_x):
    """log I_x(a, b) for x = exp(log_x) <= (a+1)/(a+b+2); stays finite when x underflows."""
    x = np.exp(log_x)
    return a * log_x + b * np.log1p(-x) - log_beta(a, b) + np.log(_betacf(a, b, x)) - math.log(a)


def sample_symmetric_beta(eps, n, seed, iters=80):
    """Inverse-CDF samples of Beta(eps, eps) via bisection on log x.

    Values closer to an endpoint than double precision resolves come out as
    exactly 0 or 1.
    """
    if not eps > 0:
        raise DomainError("eps must be positive")
    u = np.random.default_rng(seed).random(n)
    upper = u > 0.5
    target = np.log(np.where(upper, 1.0 - u, u))
    lo = np.full(n, -1e5)
    hi = np.full(n, math.log(0.5))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = _log_betainc_lower(eps, eps, mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    x = np.exp(0.5 * (lo + hi))
    return np.where(upper, 1.0 - x, x)


@dataclass
class EndpointMass:
    eps: float
    width: float
    sampled: float  # fraction of samples within `width` of 0 or 1
    exact: float  # 2 * I_width(eps, eps)


def beta_endpoint_mass(eps=1e-2, n=100_000, seed=0, width=0.01):
    lam = sample_symmetric_beta(eps, n, seed)
    frac = float(np.mean((lam <= width) | (lam >= 1.0 - width)))
    exact = float(2.0 * np.exp(_log_betainc_lower(eps, eps, np.array([math.log(width)])))[0])
    return EndpointMass(eps, width, frac, exact)


def density_rows(lambdas, a, b, bins=50):
    """(bin_left, bin_right, empirical_density, beta_density) rows over [0, 1]."""
    counts, edges = np.histogram(np.asarray(lambdas), bins=bins, range=(0.0, 1.0))
    emp = counts / (counts.sum() * np.diff(edges))
    # bin-averaged Beta density, finite even at the singular endpoints
    cdf = betainc(a, b, edges)
    ref = np.diff(cdf) / np.diff(edges)
    return [(float(edges[i]), float(edges[i + 1]), float(emp[i]), float(ref[i])) for i in range(bins)]


def write_density_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("bin_left,bin_right,empirical_density,beta_density\n")
        for row in rows:
            fh.write(",".join(repr(v) for v in row) + "\n")
