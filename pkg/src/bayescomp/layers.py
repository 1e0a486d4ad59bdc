"""Variational layers with group-shared multiplicative scales.

Dense layers share one scale per input neuron, convolutional layers one per
output filter. Each layer supports two forward modes:

* ``Stochastic(rng)`` samples pre-activations with the local
  reparametrization: weights are marginalized per layer and the Gaussian
  pre-activation distribution is sampled instead.
* ``Deterministic(mask)`` uses the masked posterior mean of the weights.

Dense inputs are ``[batch, features]``; convolutional inputs follow the
``[batch, height, width, channels]`` convention with ``[h, w, C_in, C_out]``
kernels.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import distributions as D
from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor


@dataclass
class Stochastic:
    rng: np.random.Generator


@dataclass
class Deterministic:
    mask: object = None


def _param(value):
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


class BayesLayer:
    """Common parameter bookkeeping; subclasses define the scale posterior."""

    kind = None
    prior = None
    param_names = ()

    def params(self):
        return {name: getattr(self, name) for name in self.param_names}

    def set_params(self, values):
        for name, arr in values.items():
            if name not in self.param_names:
                raise KeyError(name)
            cur = getattr(self, name)
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != cur.shape:
                raise DimensionError(f"{name}: expected shape {cur.shape}, got {arr.shape}")
            cur.data = arr.copy()

    @property
    def n_groups(self):
        return self.mu_w.shape[0] if self.kind == "dense" else self.mu_w.shape[3]

    @property
    def n_out(self):
        return self.mu_w.shape[-1]

    def forward(self, h, mode):
        if isinstance(mode, Deterministic):
            mask = mode.mask
            if mask is None:
                raise ContractError("deterministic mode requires a mask")
            mask = np.asarray(mask, dtype=np.float64)
            if mask.shape != (self.n_groups,):
                raise DimensionError(f"mask shape {mask.shape} does not match {self.n_groups} groups")
            return self._deterministic(h, mask)
        if isinstance(mode, Stochastic):
            return self._stochastic(h, mode.rng)
        raise ContractError(f"unknown forward mode {mode!r}")

    # shared pieces --------------------------------------------------

    def _check_input(self, h):
        if self.kind == "dense":
            if h.ndim != 2 or h.shape[1] != self.mu_w.shape[0]:
                raise DimensionError(f"dense layer expects width {self.mu_w.shape[0]}, got input {h.shape}")
        elif h.ndim != 4 or h.shape[3] != self.mu_w.shape[2]:
            raise DimensionError(f"conv layer expects {self.mu_w.shape[2]} channels, got input {h.shape}")

    def _bias_sample(self, rng, shape):
        eps = rng.standard_normal(shape)
        return self.bias_mu + T.exp(0.5 * self.bias_log_sigma2) * eps

    def _dense_preact(self, h, z, rng):
        hh = h * z
        m = hh @ self.mu_w
        v = T.square(hh) @ T.exp(self.log_sigma2_w)
        eps = rng.standard_normal(m.shape)
        return m + T.sqrt(v) * eps

    def _conv_preact(self, h, z, rng):
        m = T.conv2d(h, self.mu_w, self.padding)
        v = T.conv2d(T.square(h), T.exp(self.log_sigma2_w), self.padding)
        eps = rng.standard_normal(m.shape)
        return m * z + T.sqrt(v * T.square(z)) * eps

    def _bias_shape(self, out_shape):
        return out_shape if self.kind == "dense" else (out_shape[0], 1, 1, out_shape[3])

    def kl_weights(self):
        return T.gaussian_kl_sum(self.mu_w, self.log_sigma2_w)

    def kl_bias(self):
        return T.gaussian_kl_sum(self.bias_mu, self.bias_log_sigma2)

    def weight_count(self):
        return int(np.prod(self.mu_w.shape))


def _dense_shapes(n_in, n_out):
    return (n_in, n_out), n_in


def _conv_shapes(kh, kw, c_in, c_out):
    return (kh, kw, c_in, c_out), c_out


class _GNJ(BayesLayer):
    prior = "gnj"
    param_names = ("mu_w", "log_sigma2_w", "mu_z", "log_sigma2_z", "bias_mu", "bias_log_sigma2")

    def __init__(self, w_shape, n_groups, padding="valid"):
        self.padding = padding
        self.mu_w = _param(np.zeros(w_shape))
        self.log_sigma2_w = _param(np.full(w_shape, -18.0))
        self.mu_z = _param(np.ones(n_groups))
        self.log_sigma2_z = _param(np.full(n_groups, math.log(1e-8)))
        self.bias_mu = _param(np.zeros(w_shape[-1]))
        self.bias_log_sigma2 = _param(np.full(w_shape[-1], -18.0))

    def scale_mean(self):
        return self.mu_z.data

    def kl_scales(self, log_alpha_eps=1e-8):
        log_alpha = self.log_sigma2_z - T.log(T.square(self.mu_z) + log_alpha_eps)
        return -T.tsum(D.neg_kl_nj_scale(log_alpha))


class GNJDense(_GNJ):
    """Fully connected layer under the group normal-Jeffreys prior."""

    kind = "dense"

    def __init__(self, n_in, n_out):
        super().__init__(*_dense_shapes(n_in, n_out))

    def _stochastic(self, h, rng):
        self._check_input(h)
        eps_z = rng.standard_normal((h.shape[0], self.n_groups))
        z = self.mu_z + T.exp(0.5 * self.log_sigma2_z) * eps_z
        out = self._dense_preact(h, z, rng)
        return out + self._bias_sample(rng, self._bias_shape(out.shape))

    def _deterministic(self, h, mask):
        self._check_input(h)
        return (h * (mask * self.mu_z)) @ self.mu_w + self.bias_mu


class GNJConv(_GNJ):
    """Convolutional layer under the group normal-Jeffreys prior (one scale per filter)."""

    kind = "conv"

    def __init__(self, kh, kw, c_in, c_out, padding="valid"):
        super().__init__(*_conv_shapes(kh, kw, c_in, c_out), padding=padding)

    def _stochastic(self, h, rng):
        self._check_input(h)
        eps_z = rng.standard_normal((h.shape[0], 1, 1, self.n_groups))
        z = self.mu_z + T.exp(0.5 * self.log_sigma2_z) * eps_z
        out = self._conv_preact(h, z, rng)
        return out + self._bias_sample(rng, self._bias_shape(out.shape))

    def _deterministic(self, h, mask):
        self._check_input(h)
        # a pruned filter loses its bias as well
        return T.conv2d(h, self.mu_w, self.padding) * (mask * self.mu_z) + self.bias_mu * mask


def implied_scales(mu_a, s2_a, mu_b, s2_b):
    """Log-normal parameters of sqrt(a*b) for independent log-normal a, b."""
    return 0.5 * mu_a + 0.5 * mu_b, 0.25 * s2_a + 0.25 * s2_b


class _GHS(BayesLayer):
    prior = "ghs"
    param_names = (
        "mu_w", "log_sigma2_w",
        "mu_alpha", "log_sigma2_alpha", "mu_beta", "log_sigma2_beta",
        "mu_sa", "log_sigma2_sa", "mu_sb", "log_sigma2_sb",
        "bias_mu", "bias_log_sigma2",
    )

    def __init__(self, w_shape, n_groups, padding="valid", tau0=1e-5):
        self.padding = padding
        self.tau0 = tau0
        self.mu_w = _param(np.zeros(w_shape))
        self.log_sigma2_w = _param(np.full(w_shape, -18.0))
        init_var = math.log(1e-8)
        self.mu_alpha = _param(np.zeros(n_groups))
        self.log_sigma2_alpha = _param(np.full(n_groups, init_var))
        self.mu_beta = _param(np.zeros(n_groups))
        self.log_sigma2_beta = _param(np.full(n_groups, init_var))
        self.mu_sa = _param(np.zeros(1))
        self.log_sigma2_sa = _param(np.full(1, init_var))
        self.mu_sb = _param(np.zeros(1))
        self.log_sigma2_sb = _param(np.full(1, init_var))
        self.bias_mu = _param(np.zeros(w_shape[-1]))
        self.bias_log_sigma2 = _param(np.full(w_shape[-1], -18.0))

    def implied(self):
        """(mu_ztilde, sigma2_ztilde, mu_s, sigma2_s) as tensors."""
        mu_zt, s2_zt = implied_scales(
            self.mu_alpha, T.exp(self.log_sigma2_alpha), self.mu_beta, T.exp(self.log_sigma2_beta)
        )
        mu_s, s2_s = implied_scales(self.mu_sa, T.exp(self.log_sigma2_sa), self.mu_sb, T.exp(self.log_sigma2_sb))
        return mu_zt, s2_zt, mu_s, s2_s

    def local_scale_params(self):
        """Composed log-normal parameters (mu_z, sigma2_z) of z_i = s * ztilde_i."""
        mu_zt, s2_zt, mu_s, s2_s = self.implied()
        return (mu_zt + mu_s).data, (s2_zt + s2_s).data

    def scale_mean(self):
        mu_z, s2_z = self.local_scale_params()
        return np.exp(mu_z + 0.5 * s2_z)

    def kl_scales(self):
        return -D.horseshoe_scale_neg_kl(
            D.LogNormalParams(self.mu_sa, self.log_sigma2_sa),
            D.LogNormalParams(self.mu_sb, self.log_sigma2_sb),
            D.LogNormalParams(self.mu_alpha, self.log_sigma2_alpha),
            D.LogNormalParams(self.mu_beta, self.log_sigma2_beta),
            self.tau0,
        )

    def _sample_scales(self, rng, batch, group_shape):
        mu_zt, s2_zt, mu_s, s2_s = self.implied()
        eps_s = rng.standard_normal((batch,) + (1,) * len(group_shape))
        log_s = mu_s + T.sqrt(s2_s) * eps_s
        eps_z = rng.standard_normal((batch,) + group_shape)
        return T.exp(mu_zt + log_s + T.sqrt(s2_zt) * eps_z)

    def _mean_scales(self, mask):
        mu_zt, s2_zt, mu_s, s2_s = self.implied()
        return mask * T.exp((mu_zt + mu_s) + 0.5 * (s2_zt + s2_s))


class GHSDense(_GHS):
    """Fully connected layer under the group horseshoe prior."""

    kind = "dense"

    def __init__(self, n_in, n_out, tau0=1e-5):
        super().__init__(*_dense_shapes(n_in, n_out), tau0=tau0)

    def _stochastic(self, h, rng):
        self._check_input(h)
        z = self._sample_scales(rng, h.shape[0], (self.n_groups,))
        out = self._dense_preact(h, z, rng)
        return out + self._bias_sample(rng, self._bias_shape(out.shape))

    def _deterministic(self, h, mask):
        self._check_input(h)
        return (h * self._mean_scales(mask)) @ self.mu_w + self.bias_mu


class GHSConv(_GHS):
    """Convolutional layer under the group horseshoe prior."""

    kind = "conv"

    def __init__(self, kh, kw, c_in, c_out, padding="valid", tau0=1e-5):
        super().__init__(*_conv_shapes(kh, kw, c_in, c_out), padding=padding, tau0=tau0)

    def _stochastic(self, h, rng):
        self._check_input(h)
        z = self._sample_scales(rng, h.shape[0], (1, 1, self.n_groups))
        out = self._conv_preact(h, z, rng)
        return out + self._bias_sample(rng, self._bias_shape(out.shape))

    def _deterministic(self, h, mask):
        self._check_input(h)
        return T.conv2d(h, self.mu_w, self.padding) * self._mean_scales(mask) + self.bias_mu * mask


LAYER_TYPES = {
    ("gnj", "dense"): GNJDense,
    ("gnj", "conv"): GNJConv,
    ("ghs", "dense"): GHSDense,
    ("ghs", "conv"): GHSConv,
}
