"""Posterior weight variances, float-format arithmetic and per-layer bit widths.

The bit width of a layer comes from the spread of its weight posterior: a
unit roundoff ``u`` is derived from the mean marginal variance of the
retained weights, the mantissa gets ``ceil(-log2 u)`` bits, and 3 exponent
bits plus a sign bit are added on top.
"""

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, DomainError

EXPONENT_BITS = 3
SIGN_BITS = 1
MAX_MANTISSA = 23
ROUNDOFF_RULES = ("sqrt_mean_var", "mean_var")


class RoundoffClampWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FloatFormat:
    exponent_bits: int
    mantissa_bits: int
    sign_bits: int = 1

    def __post_init__(self):
        if self.exponent_bits < 2 or self.mantissa_bits < 1 or self.sign_bits != 1:
            raise ContractError(f"invalid float format {self}")

    @property
    def total_bits(self):
        return self.sign_bits + self.exponent_bits + self.mantissa_bits


FLOAT64 = FloatFormat(11, 52)
FLOAT32 = FloatFormat(8, 23)
FLOAT16 = FloatFormat(5, 10)


def format_limits(fmt):
    """(smallest positive normal, largest finite, unit roundoff) under IEEE-style bias."""
    w, p = fmt.exponent_bits, fmt.mantissa_bits
    emax = 2 ** (w - 1) - 1
    underflow = math.ldexp(1.0, 1 - emax)
    overflow = math.ldexp(2.0 - math.ldexp(1.0, -p), emax)
    return underflow, overflow, math.ldexp(1.0, -p)


def mantissa_bits_from_roundoff(u):
    """Mantissa bits ``ceil(-log2 u)`` in [1, 23]; ``u >= 1`` clamps to 1 with a warning."""
    u = float(u)
    if not (u > 0) or math.isinf(u):
        raise DomainError(f"unit roundoff must be positive and finite, got {u}")
    if u >= 1.0:
        warnings.warn(f"unit roundoff {u} >= 1, using 1 mantissa bit", RoundoffClampWarning, stacklevel=2)
        return 1
    return int(min(MAX_MANTISSA, max(1, math.ceil(-math.log2(u)))))


def _group_shape(layer):
    return (-1, 1) if layer.kind == "dense" else (1, 1, 1, -1)


def marginal_variance_gnj(layer):
    """Var(z_i * w_ij) for Gaussian z_i and w_ij."""
    shape = _group_shape(layer)
    mu_z = layer.mu_z.data.reshape(shape)
    s2_z = np.exp(layer.log_sigma2_z.data).reshape(shape)
    mu_w = layer.mu_w.data
    s2_w = np.exp(layer.log_sigma2_w.data)
    return s2_z * (s2_w + mu_w ** 2) + s2_w * mu_z ** 2


def marginal_variance_ghs(layer):
    """Var(z_i * w_ij) for log-normal z_i with the composed local parameters."""
    shape = _group_shape(layer)
    mu_z, s2_z = (a.reshape(shape) for a in layer.local_scale_params())
    mu_w = layer.mu_w.data
    s2_w = np.exp(layer.log_sigma2_w.data)
    second = np.exp(2 * mu_z + s2_z)
    return np.expm1(s2_z) * second * (s2_w + mu_w ** 2) + s2_w * second


def marginal_variance(layer):
    return marginal_variance_gnj(layer) if layer.prior == "gnj" else marginal_variance_ghs(layer)


@dataclass
class QuantRow:
    layer: int
    mean_var: float
    roundoff_rule: str
    unit_roundoff: float
    mantissa_bits: int
    total_bits: int
    clamped: bool = False
    pruned: bool = False

    def to_dict(self):
        return asdict(self)


def layer_bit_precision(variances, rule="sqrt_mean_var", layer=0):
    """Bit width for one layer from the marginal variances of its retained weights."""
    if rule not in ROUNDOFF_RULES:
        raise ContractError(f"unknown roundoff rule {rule!r}")
    v = np.asarray(variances, dtype=np.float64).ravel()
    if v.size == 0:
        return QuantRow(layer, 0.0, rule, 0.0, 0, 0, pruned=True)
    mean_var = float(v.mean())
    u = math.sqrt(mean_var) if rule == "sqrt_mean_var" else mean_var
    clamped = u >= 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RoundoffClampWarning)
        p = mantissa_bits_from_roundoff(u)
    return QuantRow(layer, mean_var, rule, u, p, p + EXPONENT_BITS + SIGN_BITS, clamped=clamped)


def retained_block(array, layer, report, l):
    """Restrict a weight-shaped array to the entries surviving the cascade."""
    rows, cols = report.in_alive[l], report.out_alive[l]
    if layer.kind == "dense":
        return array[rows][:, cols]
    return array[:, :, rows][..., cols]


def quantize_model(model, report, rule="sqrt_mean_var"):
    """One ``QuantRow`` per layer, averaging over retained weights only."""
    rows = []
    for l, layer in enumerate(model.layers):
        v = retained_block(marginal_variance(layer), layer, report, l)
        rows.append(layer_bit_precision(v, rule, layer=l))
    return rows
