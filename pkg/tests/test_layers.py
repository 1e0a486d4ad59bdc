import math

import numpy as np
import pytest
from scipy import stats

from bayescomp import layers as L
from bayescomp import tensor as T
from bayescomp.errors import ContractError, DimensionError
from bayescomp.layers import Deterministic, Stochastic
from bayescomp.model import init_model
from bayescomp.training import elbo_graph

from conftest import finite_diff, rel_err

N_MOMENT = 10**5

TINY_CONV = {
    "input_shape": [4, 4, 2],
    "layers": [
        {"type": "conv", "kh": 3, "kw": 3, "in": 2, "out": 3, "padding": "valid"},
        {"type": "dense", "in": 12, "out": 3},
    ],
}
TINY_DENSE = {"input_shape": [4], "layers": [{"type": "dense", "in": 4, "out": 5}, {"type": "dense", "in": 5, "out": 3}]}


def make_layer(prior, kind):
    cls = L.LAYER_TYPES[(prior, kind)]
    return cls(3, 2) if kind == "dense" else cls(2, 2, 2, 3)


def randomize(layer, rng, log_var=-2.0):
    for name in layer.param_names:
        p = getattr(layer, name)
        if "log_sigma2" in name:
            p.data = log_var + 0.3 * rng.normal(size=p.shape)
        elif name in ("mu_sa", "mu_sb", "mu_alpha", "mu_beta"):
            p.data = 0.2 * rng.normal(size=p.shape)
        else:
            p.data = rng.normal(size=p.shape)
    return layer


def input_for(layer, rng, batch=4):
    return rng.normal(size=(batch, 3)) if layer.kind == "dense" else rng.normal(size=(batch, 4, 4, 2))


ALL = [(p, k) for p in ("gnj", "ghs") for k in ("dense", "conv")]


# shapes and modes -------------------------------------------------------


def test_group_counts():
    assert make_layer("gnj", "dense").n_groups == 3
    assert make_layer("ghs", "conv").n_groups == 3
    assert make_layer("gnj", "conv").mu_w.shape == (2, 2, 2, 3)


@pytest.mark.parametrize("prior,kind", ALL)
def test_deterministic_requires_mask(prior, kind, rng):
    layer = make_layer(prior, kind)
    with pytest.raises(ContractError):
        layer.forward(input_for(layer, rng), Deterministic(None))
    with pytest.raises(DimensionError):
        layer.forward(input_for(layer, rng), Deterministic(np.ones(7)))


@pytest.mark.parametrize("prior,kind", ALL)
def test_input_shape_checked(prior, kind):
    layer = make_layer(prior, kind)
    bad = np.ones((2, 5)) if kind == "dense" else np.ones((2, 4, 4, 5))
    with pytest.raises(DimensionError):
        layer.forward(bad, Stochastic(np.random.default_rng(0)))


@pytest.mark.parametrize("prior,kind", ALL)
def test_zero_noise_stochastic_equals_deterministic(prior, kind, rng):
    layer = randomize(make_layer(prior, kind), rng)
    for name in layer.param_names:
        if "log_sigma2" in name:
            getattr(layer, name).data[...] = -np.inf
    x = input_for(layer, rng)
    det = layer.forward(x, Deterministic(np.ones(layer.n_groups))).data
    with np.errstate(invalid="ignore", divide="ignore"):
        sto = layer.forward(x, Stochastic(np.random.default_rng(3))).data
    assert np.array_equal(det, sto)


def test_gnj_dense_deterministic_is_plain_affine(rng):
    layer = randomize(make_layer("gnj", "dense"), rng)
    layer.mu_z.data = np.ones(3)
    x = rng.normal(size=(5, 3))
    out = layer.forward(x, Deterministic(np.ones(3))).data
    assert np.allclose(out, x @ layer.mu_w.data + layer.bias_mu.data)


def test_gnj_conv_deterministic_is_convolution(rng):
    layer = randomize(make_layer("gnj", "conv"), rng)
    layer.mu_z.data = np.ones(3)
    layer.bias_mu.data = np.zeros(3)
    x = input_for(layer, rng)
    assert np.allclose(layer.forward(x, Deterministic(np.ones(3))).data, T.conv2d(x, layer.mu_w.data))


def test_ghs_deterministic_scale_two(rng):
    layer = randomize(make_layer("ghs", "dense"), rng)
    # composed mu_z = 0 and sigma2_z = 2 ln 2 -> mean scale exp(ln 2) = 2
    layer.mu_alpha.data[:] = 0
    layer.mu_beta.data[:] = 0
    layer.mu_sa.data[:] = 0
    layer.mu_sb.data[:] = 0
    v = 2 * math.log(2.0)
    for name in ("log_sigma2_alpha", "log_sigma2_beta"):
        getattr(layer, name).data[:] = math.log(2 * v)  # 1/4 (a + b) = v
    for name in ("log_sigma2_sa", "log_sigma2_sb"):
        getattr(layer, name).data[:] = -np.inf
    layer.bias_mu.data[:] = 0
    x = rng.normal(size=(4, 3))
    out = layer.forward(x, Deterministic(np.ones(3))).data
    assert np.allclose(out, x @ (2 * layer.mu_w.data))


@pytest.mark.parametrize("prior,kind", ALL)
def test_zero_mask_zeroes_output(prior, kind, rng):
    layer = randomize(make_layer(prior, kind), rng)
    layer.bias_mu.data[:] = 0
    out = layer.forward(input_for(layer, rng), Deterministic(np.zeros(layer.n_groups))).data
    assert np.all(out == 0)


@pytest.mark.parametrize("prior,kind", ALL)
def test_masked_group_parameters_are_irrelevant(prior, kind, rng):
    layer = randomize(make_layer(prior, kind), rng)
    x = input_for(layer, rng)
    mask = np.array([1.0, 0.0, 1.0])
    before = layer.forward(x, Deterministic(mask)).data
    if kind == "dense":
        layer.mu_w.data[1] = 1e3 * rng.normal(size=2)
    else:
        layer.mu_w.data[..., 1] = 1e3
    for name in layer.param_names:
        p = getattr(layer, name)
        if p.shape == (3,) and not name.startswith("bias"):
            p.data[1] = 7.0
    after = layer.forward(x, Deterministic(mask)).data
    if kind == "conv":
        before, after = np.delete(before, 1, axis=-1), np.delete(after, 1, axis=-1)
    assert np.array_equal(before, after)


def test_implied_scale_values():
    assert L.implied_scales(0.0, 1.0, 0.0, 1.0) == (0.0, 0.5)
    assert L.implied_scales(2.0, 0.0, 0.0, 0.0) == (1.0, 0.0)


def test_implied_scales_match_product_sampling():
    r = np.random.default_rng(7)
    mu_a, s2_a, mu_b, s2_b = 0.4, 0.8, -1.1, 0.3
    n = 10**6
    a = np.exp(mu_a + math.sqrt(s2_a) * r.standard_normal(n))
    b = np.exp(mu_b + math.sqrt(s2_b) * r.standard_normal(n))
    mu, s2 = L.implied_scales(mu_a, s2_a, mu_b, s2_b)
    ks = stats.kstest(np.sqrt(a * b), stats.lognorm(s=math.sqrt(s2), scale=math.exp(mu)).cdf).statistic
    assert ks < 0.01


# local reparametrization moments ---------------------------------------


def _moments(x):
    return x.mean(), x.var()


def gnj_instance(kind):
    layer = L.GNJDense(1, 1) if kind == "dense" else L.GNJConv(1, 1, 1, 1)
    layer.mu_w.data[...] = 3.0
    layer.log_sigma2_w.data[...] = math.log(0.01)
    layer.mu_z.data[...] = 1.0
    layer.log_sigma2_z.data[...] = math.log(0.04)
    layer.bias_mu.data[...] = 0.5
    layer.bias_log_sigma2.data[...] = math.log(0.02)
    return layer


def ghs_instance(kind):
    layer = L.GHSDense(1, 1) if kind == "dense" else L.GHSConv(1, 1, 1, 1)
    layer.mu_w.data[...] = 3.0
    layer.log_sigma2_w.data[...] = math.log(0.01)
    vals = {"alpha": (0.1, 0.05), "beta": (-0.2, 0.04), "sa": (0.3, 0.03), "sb": (-0.1, 0.02)}
    for k, (mu, s2) in vals.items():
        getattr(layer, f"mu_{k}").data[...] = mu
        getattr(layer, f"log_sigma2_{k}").data[...] = math.log(s2)
    layer.bias_mu.data[...] = 0.5
    layer.bias_log_sigma2.data[...] = math.log(0.02)
    return layer, vals


def direct_samples(prior, layer, vals, h, r, n):
    """Sample the generative hierarchy weight by weight."""
    w_tilde = 3.0 + 0.1 * r.standard_normal(n)
    if prior == "gnj":
        z = 1.0 + 0.2 * r.standard_normal(n)
    else:
        z = np.ones(n)
        for mu, s2 in vals.values():
            z *= np.sqrt(np.exp(mu + math.sqrt(s2) * r.standard_normal(n)))
    b = 0.5 + math.sqrt(0.02) * r.standard_normal(n)
    return h * z * w_tilde + b


@pytest.mark.parametrize("prior,kind", ALL)
def test_local_reparametrization_moments(prior, kind):
    h = 2.0
    if prior == "gnj":
        layer, vals = gnj_instance(kind), None
    else:
        layer, vals = ghs_instance(kind)
    x = np.full((N_MOMENT, 1), h) if kind == "dense" else np.full((N_MOMENT, 1, 1, 1), h)
    with T.no_grad():
        lr = layer.forward(x, Stochastic(np.random.default_rng(11))).data.ravel()
    direct = direct_samples(prior, layer, vals, h, np.random.default_rng(12), N_MOMENT)
    (m1, v1), (m2, v2) = _moments(lr), _moments(direct)
    assert abs(m1 - m2) / abs(m2) < 0.01
    assert abs(v1 - v2) / v2 < 0.01


# gradients ------------------------------------------------------------------


def _elbo_value(model, x, y, seed):
    with T.no_grad():
        total, _ = elbo_graph(model, x, y, 50, 1.0, np.random.default_rng(seed))
    return float(total.data)


@pytest.mark.parametrize("prior", ["gnj", "ghs"])
@pytest.mark.parametrize("arch", [TINY_DENSE, TINY_CONV], ids=["dense", "conv"])
def test_elbo_gradient_finite_difference(prior, arch):
    rng = np.random.default_rng(5)
    model = init_model(arch, prior, seed=2, tau0=0.5)
    for layer in model.layers:
        randomize(layer, rng, log_var=-3.0)
    x = rng.normal(size=(6,) + tuple(arch["input_shape"]))
    y = rng.integers(0, 3, size=6)
    total, _ = elbo_graph(model, x, y, 50, 1.0, np.random.default_rng(9))
    T.backward(total)
    for i, name, p in model.named_parameters():
        fd = finite_diff(lambda: _elbo_value(model, x, y, 9), p.data)
        assert rel_err(p.grad, fd) < 1e-4, (i, name)
