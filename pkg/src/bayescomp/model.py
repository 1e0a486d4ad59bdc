"""Feed-forward networks assembled from variational layers.

An architecture is a JSON-friendly dict::

    {"input_shape": [784],
     "layers": [{"type": "dense", "in": 784, "out": 300}, ...]}

Convolutional entries carry ``kh, kw, in, out, padding`` and an optional
``pool`` size for the 2x2 mean-pooling that follows them. Hidden layers use
ReLU; the last layer emits logits.
"""

import math

import numpy as np

from . import tensor as T
from .errors import ContractError, TrainingError
from .layers import LAYER_TYPES, Deterministic, Stochastic


def dense_arch(widths):
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ContractError("a dense architecture needs at least an input and an output width")
    return {
        "input_shape": [widths[0]],
        "layers": [{"type": "dense", "in": a, "out": b} for a, b in zip(widths[:-1], widths[1:])],
    }


def lenet5_arch(n_classes=10):
    """LeNet-5-Caffe: 20 and 50 5x5 filters, then 800-500-classes."""
    return {
        "input_shape": [28, 28, 1],
        "layers": [
            {"type": "conv", "kh": 5, "kw": 5, "in": 1, "out": 20, "padding": "valid", "pool": 2},
            {"type": "conv", "kh": 5, "kw": 5, "in": 20, "out": 50, "padding": "valid", "pool": 2},
            {"type": "dense", "in": 800, "out": 500},
            {"type": "dense", "in": 500, "out": n_classes},
        ],
    }


def parse_arch(text, n_classes):
    """``"784-300-100"`` -> dense net with ``n_classes`` outputs appended; ``"lenet5"`` -> conv net."""
    text = text.strip().lower()
    if text in ("lenet5", "lenet-5", "lenet5-caffe"):
        return lenet5_arch(n_classes)
    try:
        widths = [int(p) for p in text.split("-")]
    except ValueError:
        raise ContractError(f"cannot parse architecture {text!r}") from None
    return dense_arch(widths + [n_classes])


class BayesNet:
    def __init__(self, arch, prior, tau0=1e-5):
        if prior not in ("gnj", "ghs"):
            raise ContractError(f"unknown prior {prior!r}")
        self.arch = arch
        self.prior = prior
        self.tau0 = tau0
        self.layers = []
        for spec in arch["layers"]:
            cls = LAYER_TYPES[(prior, spec["type"])]
            extra = {"tau0": tau0} if prior == "ghs" else {}
            if spec["type"] == "dense":
                self.layers.append(cls(spec["in"], spec["out"], **extra))
            else:
                self.layers.append(
                    cls(spec["kh"], spec["kw"], spec["in"], spec["out"], padding=spec.get("padding", "valid"), **extra)
                )

    def __len__(self):
        return len(self.layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.params().values()]

    def named_parameters(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params().items():
                yield i, name, p

    def all_ones_masks(self):
        return [np.ones(layer.n_groups) for layer in self.layers]

    def _prepare_input(self, x):
        x = np.asarray(x, dtype=np.float64) if not isinstance(x, T.Tensor) else x
        first = self.arch["layers"][0]["type"]
        if first == "dense" and x.ndim > 2:
            x = x.reshape(x.shape[0], -1)
        elif first == "conv" and x.ndim == 2:
            x = x.reshape((x.shape[0],) + tuple(self.arch["input_shape"]))
        return x

    def forward(self, x, mode, trace=None):
        """Logits for a batch. ``mode`` is ``Stochastic(rng)`` or ``Deterministic(masks)``."""
        h = self._prepare_input(x)
        masks = None
        if isinstance(mode, Deterministic):
            masks = mode.mask if mode.mask is not None else self.all_ones_masks()
            if len(masks) != len(self.layers):
                raise ContractError(f"expected {len(self.layers)} masks, got {len(masks)}")
        last = len(self.layers) - 1
        for i, (layer, spec) in enumerate(zip(self.layers, self.arch["layers"])):
            if layer.kind == "dense" and h.ndim > 2:
                h = T.reshape(h, (h.shape[0], -1))
            layer_mode = Deterministic(masks[i]) if masks is not None else mode
            h = layer.forward(h, layer_mode)
            if i < last:
                h = T.relu(h)
                if spec.get("pool"):
                    h = T.mean_pool2d(h, spec["pool"])
            if trace is not None:
                trace.append(h)
        return h

    def predict(self, x, masks=None, batch_size=2000):
        """Deterministic logits as a numpy array."""
        out = []
        with T.no_grad():
            for start in range(0, len(x), batch_size):
                out.append(self.forward(x[start:start + batch_size], Deterministic(masks)).data)
        return np.concatenate(out, axis=0)

    def error_rate(self, x, y, masks=None):
        return float(np.mean(self.predict(x, masks).argmax(axis=1) != np.asarray(y)))

    def kl_terms(self):
        """(kl_weights, kl_scales, kl_bias) tensors summed over layers."""
        kw = ks = kb = 0.0
        for i, layer in enumerate(self.layers):
            w, s, b = layer.kl_weights(), layer.kl_scales(), layer.kl_bias()
            for term in (w, s, b):
                if not np.all(np.isfinite(T._data(term))):
                    raise TrainingError("non-finite KL term", layer=i)
            kw, ks, kb = kw + w, ks + s, kb + b
        return kw, ks, kb


def init_model(arch, prior, seed, tau0=1e-5):
    """Fresh model: He-initialized means, tiny weight variances, scales near 1.

    ``log sigma_w ~ N(-9, 1e-4)`` (variance 1e-4). Group scales start with
    mean ~1 and variance ~1e-8 so no group is prunable at initialization.
    For the horseshoe the global scale factor ``s_a`` starts at its prior
    scale ``tau0**2`` and ``s_b`` at the reciprocal, keeping ``s`` at 1.
    The local log-means start at 1e-6 rather than 0, so the composed mode
    exp(mu_z - sigma2_z) sits just above 1 and the default t = 0 keeps
    every group.
    """
    net = BayesNet(arch, prior, tau0=tau0)
    rng = np.random.default_rng(seed)
    for layer, spec in zip(net.layers, arch["layers"]):
        shape = layer.mu_w.shape
        fan_in = spec["in"] if spec["type"] == "dense" else spec["kh"] * spec["kw"] * spec["in"]
        layer.mu_w.data = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        layer.log_sigma2_w.data = 2.0 * rng.normal(-9.0, 1e-2, size=shape)
        layer.bias_mu.data = np.zeros(layer.n_out)
        layer.bias_log_sigma2.data = 2.0 * rng.normal(-9.0, 1e-2, size=layer.n_out)
        if prior == "ghs":
            log_tau2 = 2.0 * math.log(tau0)
            layer.mu_sa.data = np.full(1, log_tau2)
            layer.mu_sb.data = np.full(1, -log_tau2)
            layer.mu_alpha.data = np.full(layer.n_groups, 1e-6)
            layer.mu_beta.data = np.full(layer.n_groups, 1e-6)
    return net


def check_finite_trace(trace):
    for i, h in enumerate(trace):
        if not np.all(np.isfinite(T._data(h))):
            raise TrainingError("non-finite activations", layer=i)


__all__ = ["BayesNet", "Deterministic", "Stochastic", "dense_arch", "init_model", "lenet5_arch", "parse_arch"]
