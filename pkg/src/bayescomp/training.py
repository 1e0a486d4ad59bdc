"""Stochastic variational training of ``BayesNet`` models.

The objective per minibatch is the usual SGVB estimate

    total = -(N / B) * CE(batch) - kl_scale * (KL_w + KL_z + KL_bias)

with one local-reparametrization noise sample. Parameters are fitted by Adam
on ``-total / N``.
"""

import json
import math
import sys
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ContractError, TrainingError
from .layers import Stochastic
from .model import BayesNet, check_finite_trace, init_model


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 100
    warmup_epochs: float = 10
    seed: int = 1
    std_ceilings: list = field(default_factory=list)
    tau0: float = 1e-5
    dataset: str = "mnist"

    def __post_init__(self):
        if self.warmup_epochs > self.epochs:
            raise ContractError("warmup_epochs must not exceed epochs")
        if self.batch_size < 1:
            raise ContractError("batch_size must be at least 1")
        if not self.tau0 > 0:
            raise ContractError("tau0 must be positive")


@dataclass
class ElboBreakdown:
    neg_log_likelihood: float  # summed cross-entropy over the batch, nats
    rescale: float  # N_total / batch_size
    kl_weights: float
    kl_scales: float
    kl_bias: float
    kl_scale: float
    total: float

    def recompute_total(self):
        kl = self.kl_weights + self.kl_scales + self.kl_bias
        return -self.neg_log_likelihood * self.rescale - self.kl_scale * kl


def warmup_schedule(epoch, warmup_epochs):
    if epoch < 0:
        raise ContractError("epoch must be nonnegative")
    if warmup_epochs <= 0:
        return 1.0
    return min(1.0, epoch / warmup_epochs)


def elbo_graph(model, x, y, n_total, kl_scale, rng):
    """Return (total ELBO tensor, ElboBreakdown) for one minibatch."""
    if not 0.0 <= kl_scale <= 1.0:
        raise ContractError("kl_scale must lie in [0, 1]")
    if len(y) == 0:
        raise ContractError("empty batch")
    trace = []
    logits = model.forward(x, Stochastic(rng), trace=trace)
    nll = T.cross_entropy(logits, y)
    if not np.isfinite(nll.data):
        check_finite_trace(trace)
        raise TrainingError("non-finite likelihood", layer=len(model) - 1)
    rescale = n_total / len(y)
    total = nll * (-rescale)
    if kl_scale > 0:
        kw, ks, kb = model.kl_terms()
        total = total - kl_scale * (kw + ks + kb)
        kl_vals = [float(T._data(t)) for t in (kw, ks, kb)]
    else:
        with T.no_grad():
            kl_vals = [float(T._data(t)) for t in _kl_unchecked(model)]
    parts = ElboBreakdown(float(nll.data), rescale, *kl_vals, kl_scale=kl_scale, total=float(total.data))
    return total, parts


def _kl_unchecked(model):
    with np.errstate(all="ignore"):
        kw = sum(float(T._data(l.kl_weights())) for l in model.layers)
        ks = sum(float(T._data(l.kl_scales())) for l in model.layers)
        kb = sum(float(T._data(l.kl_bias())) for l in model.layers)
    return kw, ks, kb


def elbo(model, x, y, n_total, kl_scale, rng):
    return elbo_graph(model, x, y, n_total, kl_scale, rng)[1]


def constrain_stds(model, ceilings):
    """Clamp each layer's weight standard deviations to its ceiling (None = free)."""
    for layer, ceiling in zip(model.layers, ceilings or []):
        if ceiling is None:
            continue
        cap = 2.0 * math.log(ceiling)
        np.minimum(layer.log_sigma2_w.data, cap, out=layer.log_sigma2_w.data)


class AdamState:
    def __init__(self, params):
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place Adam descent step with bias correction."""
    if len(state.m) != len(params):
        raise ContractError("optimizer state does not match parameter list")
    for i, g in enumerate(grads):
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {i}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    step = lr / c1
    inv_c2 = 1.0 / math.sqrt(c2)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        tmp = np.square(g)
        tmp *= 1.0 - beta2
        v += tmp
        np.sqrt(v, out=tmp)
        tmp *= inv_c2
        tmp += eps
        np.divide(m, tmp, out=tmp)
        tmp *= step
        p.data -= tmp


def _emit(record, stream, log_file):
    line = json.dumps(record, sort_keys=True)
    if stream is not None:
        print(line, file=stream, flush=True)
    if log_file is not None:
        log_file.write(line + "\n")
        log_file.flush()


def train(config, train_set, test_set, arch, prior, *, model=None, stream=sys.stdout, log_path=None, frozen=()):
    """Fit a model and return ``(model, epoch_log)``.

    ``frozen`` names parameters (e.g. ``"mu_z"``) that are excluded from updates.
    """
    if model is None:
        model = init_model(arch, prior, config.seed, tau0=config.tau0)
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    noise_rng = np.random.default_rng(seeds[1])
    params = [p for _, name, p in model.named_parameters() if name not in frozen]
    state = AdamState(params)
    x, y = train_set.inputs, train_set.labels
    n = len(y)
    steps = math.ceil(n / config.batch_size)
    log = []
    log_file = open(log_path, "w") if log_path else None
    try:
        for epoch in range(config.epochs):
            order = shuffle_rng.permutation(n)
            nll_sum = 0.0
            for step in range(steps):
                idx = order[step * config.batch_size:(step + 1) * config.batch_size]
                kl_scale = warmup_schedule(epoch + step / steps, config.warmup_epochs)
                total, parts = elbo_graph(model, x[idx], y[idx], n, kl_scale, noise_rng)
                nll_sum += parts.neg_log_likelihood
                loss = total * (-1.0 / n)
                for p in params:
                    p.grad = None
                T.backward(loss)
                adam_step(params, [p.grad for p in params], state, config.learning_rate,
                          config.beta1, config.beta2, config.eps)
                constrain_stds(model, config.std_ceilings)
            kw, ks, kb = _kl_unchecked(model)
            record = {
                "epoch": epoch + 1,
                "nll": nll_sum / n,
                "kl_w": kw + kb,
                "kl_z": ks,
                "test_err": model.error_rate(test_set.inputs, test_set.labels) if test_set is not None else None,
            }
            if not all(np.isfinite(record[k]) for k in ("nll", "kl_w", "kl_z")):
                raise TrainingError(f"non-finite ELBO at epoch {epoch + 1}")
            log.append(record)
            _emit(record, stream, log_file)
    finally:
        if log_file is not None:
            log_file.close()
        for p in model.parameters():
            p.grad = None
    return model, log


def config_dict(config):
    return asdict(config)


__all__ = [
    "AdamState", "BayesNet", "ElboBreakdown", "TrainConfig", "adam_step", "constrain_stds",
    "elbo", "elbo_graph", "train", "warmup_schedule",
]
