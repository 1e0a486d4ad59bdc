import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayescomp import pruning as P
from bayescomp.errors import DimensionError
from bayescomp.layers import GHSDense, GNJDense
from bayescomp.model import dense_arch, init_model, lenet5_arch


def gnj_layer(mu_z, s2_z):
    layer = GNJDense(len(mu_z), 2)
    layer.mu_z.data = np.asarray(mu_z, float)
    layer.log_sigma2_z.data = np.log(np.asarray(s2_z, float))
    return layer


# scores ---------------------------------------------------------------------


def test_nj_score_examples():
    s = P.nj_scores(gnj_layer([1.0, 0.5, 0.1], [1e-8, 0.25, 1.0]))
    assert np.allclose(s, [-18.420681, 0.0, math.log(100)], atol=1e-6)


def test_nj_score_zero_mean_is_infinite():
    assert P.nj_scores(gnj_layer([0.0], [1.0]))[0] == np.inf


def _ghs_layer(mu_zt, s2_zt, mu_s, s2_s):
    """GHS layer whose composed local parameters equal the given values."""
    n = len(mu_zt)
    layer = GHSDense(n, 2)
    # ztilde = sqrt(alpha beta): mean (mu_a + mu_b)/2, var (s2_a + s2_b)/4
    layer.mu_alpha.data = np.asarray(mu_zt, float)
    layer.mu_beta.data = np.asarray(mu_zt, float)
    layer.log_sigma2_alpha.data = np.log(2 * np.asarray(s2_zt, float))
    layer.log_sigma2_beta.data = np.log(2 * np.asarray(s2_zt, float))
    layer.mu_sa.data = np.full(1, mu_s)
    layer.mu_sb.data = np.full(1, mu_s)
    layer.log_sigma2_sa.data = np.full(1, math.log(2 * s2_s))
    layer.log_sigma2_sb.data = np.full(1, math.log(2 * s2_s))
    return layer


def test_hs_score_example():
    assert np.allclose(P.hs_scores(_ghs_layer([2.0], [0.5], 1.0, 0.5)), [-2.0])


def test_hs_score_zero():
    layer = _ghs_layer([0.0, 0.0], [1e-300, 1e-300], 0.0, 1e-300)
    assert np.allclose(P.hs_scores(layer), 0.0)


def test_hs_score_is_negative_log_mode():
    layer = _ghs_layer([0.3, -1.2], [0.4, 0.1], -0.5, 0.2)
    mu, s2 = layer.local_scale_params()
    assert np.allclose(P.hs_scores(layer), -np.log(np.exp(mu - s2)))


@pytest.mark.parametrize("prior", ["gnj", "ghs"])
def test_scores_ignore_weight_means(prior, rng):
    model = init_model(dense_arch([5, 4, 3]), prior, seed=0)
    before = P.model_scores(model).values
    for layer in model.layers:
        layer.mu_w.data = rng.normal(size=layer.mu_w.shape) * 10
    after = P.model_scores(model).values
    assert all(np.array_equal(a, b) for a, b in zip(before, after))


# masks ----------------------------------------------------------------------


def test_build_masks_examples():
    s = [np.array([-18.0, 0.0, 5.0])]
    assert P.build_masks(s, 3.0)[0].tolist() == [True, True, False]
    assert P.build_masks(s, np.inf)[0].all()
    assert not P.build_masks(s, -np.inf)[0].any()


def test_build_masks_ties_prune():
    assert P.build_masks([np.array([3.0])], 3.0)[0].tolist() == [False]


def test_build_masks_length_mismatch():
    with pytest.raises(DimensionError):
        P.build_masks([np.zeros(2), np.zeros(2)], [1.0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30), st.floats(-60, 60), st.floats(0, 30))
def test_build_masks_monotone(values, t, dt):
    s = [np.array(values)]
    low, high = P.build_masks(s, t)[0], P.build_masks(s, t + dt)[0]
    assert np.all(high[low])


# cascade --------------------------------------------------------------------


def test_cascade_no_pruning_is_identity():
    model = init_model(dense_arch([784, 300, 100, 10]), "gnj", seed=0)
    report = P.prune(model)
    assert report.architecture == "784-300-100" == report.original_architecture
    assert report.retained_weights == report.original_weights


def test_cascade_lenet300_table_row():
    model = init_model(dense_arch([784, 300, 100, 10]), "gnj", seed=0)
    masks = [np.arange(784) < 278, np.arange(300) < 98, np.arange(100) < 13]
    report = P.cascade(model, masks)
    assert report.architecture == "278-98-13"
    assert report.retained_weights == [278 * 98, 98 * 13, 13 * 10]
    assert report.retained_biases == [98, 13, 10]


def test_cascade_conv_filters_reduce_next_input_channels():
    model = init_model(lenet5_arch(), "gnj", seed=0)
    masks = [np.ones(l.n_groups, bool) for l in model.layers]
    masks[0] = np.arange(20) < 8
    report = P.cascade(model, masks)
    assert report.out_alive[0].sum() == 8
    assert report.in_alive[1].sum() == 8
    assert report.retained_weights[1] == 5 * 5 * 8 * 50


def test_cascade_conv_to_dense_drops_dead_filters():
    model = init_model(lenet5_arch(), "gnj", seed=0)
    masks = [np.ones(l.n_groups, bool) for l in model.layers]
    # kill every flattened position of channel 3 in the dense layer
    flat = model.arch["layers"][2]["in"]
    masks[2] = np.arange(flat) % 50 != 3
    report = P.cascade(model, masks)
    assert not report.out_alive[1][3] and report.out_alive[1].sum() == 49
    assert report.retained_groups[1] == 49


def test_cascade_shape_errors():
    model = init_model(dense_arch([4, 3, 2]), "gnj", seed=0)
    with pytest.raises(DimensionError):
        P.cascade(model, [np.ones(4, bool)])
    with pytest.raises(DimensionError):
        P.cascade(model, [np.ones(5, bool), np.ones(3, bool)])


def test_fresh_init_prunes_nothing():
    for prior in ("gnj", "ghs"):
        model = init_model(dense_arch([20, 10, 5, 3]), prior, seed=0)
        report = P.prune(model)
        assert report.retained_weights == report.original_weights, prior


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cascade_counts_bounded(seed):
    r = np.random.default_rng(seed)
    model = init_model(dense_arch([6, 5, 4, 3]), "gnj", seed=0)
    masks = [r.random(l.n_groups) < 0.6 for l in model.layers]
    report = P.cascade(model, masks)
    for kept, orig in zip(report.retained_weights, report.original_weights):
        assert 0 <= kept <= orig
    assert all(a <= b for a, b in zip(report.retained_groups, report.original_groups))


# compaction -----------------------------------------------------------------


def _randomize_scales(model, rng):
    for layer in model.layers:
        if model.prior == "gnj":
            layer.mu_z.data = rng.normal(size=layer.n_groups)
        else:
            layer.mu_alpha.data = rng.normal(size=layer.n_groups)
        layer.bias_mu.data = rng.normal(size=layer.bias_mu.shape)


@pytest.mark.parametrize("prior", ["gnj", "ghs"])
@pytest.mark.parametrize("arch", [dense_arch([12, 9, 7, 3]), lenet5_arch()], ids=["dense", "lenet5"])
def test_compact_matches_masked_model(prior, arch, rng):
    model = init_model(arch, prior, seed=1)
    _randomize_scales(model, rng)
    masks = [rng.random(l.n_groups) < 0.5 for l in model.layers]
    masks[-1][:] = True  # leave something flowing to the output
    report = P.cascade(model, masks)
    net = P.compact(model, report)
    x = rng.normal(size=(100,) + tuple(model.arch["input_shape"]))
    full = model.predict(x, [m.astype(float) for m in masks])
    assert np.max(np.abs(net.predict(x) - full)) < 1e-10
    assert net.weight_count() == sum(report.retained_weights)


# histograms -----------------------------------------------------------------


def test_histogram_bimodal_suggestion(rng):
    s = np.concatenate([-18 + 0.1 * rng.standard_normal(50), 3 + 0.1 * rng.standard_normal(50)])
    rows, suggestion = P.score_histogram_export([s])
    assert len(rows) == 100 and sum(r[3] for r in rows) == 100
    assert -17 < suggestion[0] < 2


def test_histogram_single_score():
    rows = P.score_histogram_rows([np.array([1.5])])
    assert sum(1 for r in rows if r[3] > 0) == 1
    assert P.suggest_threshold([1.5]) is None


def test_histogram_empty_layer():
    assert P.score_histogram_rows([np.array([])]) == []


def test_histogram_skips_infinite_scores():
    rows = P.score_histogram_rows([np.array([0.0, 1.0, np.inf])])
    assert sum(r[3] for r in rows) == 2


def test_histogram_csv(tmp_path):
    path = tmp_path / "h.csv"
    P.write_histogram_csv(path, P.score_histogram_rows([np.array([0.0, 1.0])], bins=4))
    lines = path.read_text().splitlines()
    assert lines[0] == "layer,bin_left,bin_right,count" and len(lines) == 5
