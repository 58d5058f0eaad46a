"""Encoder/decoder/meta forward passes against hand computations."""

from __future__ import annotations

import math

import numpy as np
import pytest

from distrec.autodiff import Tensor, data_of
from distrec.data import MetaKnowledgeTable
from distrec.errors import ConfigError
from distrec.model import (
    ModelDims,
    decode,
    encode,
    init_params,
    meta_forward,
    multinomial_log_likelihood,
    normalize_rows,
    prepare_input,
    semantic_signal,
)
from distrec.numerics import make_rng


def dims_for(n_items=4, hidden=3, latent=2, semantic=0):
    return ModelDims(n_items=n_items, hidden=hidden, latent=latent, semantic=semantic)


def zero_values(dims):
    values = {
        "enc_w1": np.zeros((dims.n_items, dims.hidden)),
        "enc_b1": np.zeros(dims.hidden),
        "enc_w2": np.zeros((dims.hidden, 2 * dims.latent)),
        "enc_b2": np.zeros(2 * dims.latent),
        "dec_w1": np.zeros((dims.latent, dims.hidden)),
        "dec_b1": np.zeros(dims.hidden),
        "dec_w2": np.zeros((dims.hidden, dims.n_items)),
        "dec_b2": np.zeros(dims.n_items),
    }
    if dims.semantic > 0:
        values["meta_w1"] = np.zeros((dims.semantic, dims.meta_hidden))
        values["meta_b1"] = np.zeros(dims.meta_hidden)
        values["meta_w2"] = np.zeros((dims.meta_hidden, 2 * dims.latent))
        values["meta_b2"] = np.zeros(2 * dims.latent)
    return values


# -- dims and init -----------------------------------------------------------------

def test_meta_hidden_defaults_to_twice_latent():
    assert ModelDims(n_items=5, latent=8).meta_hidden == 16
    assert ModelDims(n_items=5, latent=8, meta_hidden=3).meta_hidden == 3


def test_dims_validation():
    with pytest.raises(ConfigError):
        ModelDims(n_items=0)
    with pytest.raises(ConfigError):
        ModelDims(n_items=2, dropout=1.0)


def test_init_params_shapes_and_zero_biases():
    dims = ModelDims(n_items=6, hidden=4, latent=3, semantic=5)
    block = init_params(dims, make_rng(0))
    assert block.values["enc_w1"].shape == (6, 4)
    assert block.values["enc_w2"].shape == (4, 6)
    assert block.values["dec_w1"].shape == (3, 4)
    assert block.values["dec_w2"].shape == (4, 6)
    assert block.values["meta_w1"].shape == (5, 6)
    assert block.values["meta_w2"].shape == (6, 6)
    for name in ("enc_b1", "enc_b2", "dec_b1", "dec_b2", "meta_b1", "meta_b2"):
        np.testing.assert_array_equal(block.values[name], 0.0)


def test_init_params_deterministic_and_meta_free_without_semantic():
    dims = dims_for()
    a = init_params(dims, make_rng(5))
    b = init_params(dims, make_rng(5))
    assert set(a.values) == {"enc_w1", "enc_b1", "enc_w2", "enc_b2",
                             "dec_w1", "dec_b1", "dec_w2", "dec_b2"}
    for name in a.values:
        np.testing.assert_array_equal(a.values[name], b.values[name])


# -- input preparation --------------------------------------------------------------

def test_normalize_rows_unit_norm_and_zero_row_passthrough():
    x = np.array([[3.0, 4.0], [0.0, 0.0]])
    out = normalize_rows(x)
    np.testing.assert_allclose(out[0], [0.6, 0.8])
    np.testing.assert_array_equal(out[1], [0.0, 0.0])


def test_prepare_input_eval_mode_only_normalizes():
    x = np.array([[1.0, 1.0, 0.0]])
    out = prepare_input(x)
    np.testing.assert_allclose(out, [[1 / math.sqrt(2), 1 / math.sqrt(2), 0.0]])


def test_prepare_input_train_mode_matches_hand_replication():
    x = np.array([[1.0, 1.0, 1.0, 1.0]])
    got = prepare_input(x, dropout=0.5, rng=make_rng(3))
    keep = make_rng(3).random((1, 4)) >= 0.5
    want = (x / 2.0) * keep / 0.5
    np.testing.assert_allclose(got, want)


def test_prepare_input_zero_dropout_ignores_rng():
    x = np.array([[2.0, 0.0]])
    np.testing.assert_array_equal(prepare_input(x, 0.0, make_rng(0)), prepare_input(x))


# -- encoder / decoder ----------------------------------------------------------------

def test_encode_zero_params_gives_standard_gaussian():
    dims = dims_for()
    q = encode(zero_values(dims), np.ones((3, 4)), dims)
    np.testing.assert_array_equal(q.mean, np.zeros((3, 2)))
    np.testing.assert_array_equal(q.log_variance, np.zeros((3, 2)))


def test_encode_single_hidden_unit_hand_oracle():
    dims = ModelDims(n_items=2, hidden=1, latent=1)
    values = {
        "enc_w1": np.array([[0.3], [0.4]]),
        "enc_b1": np.array([0.1]),
        "enc_w2": np.array([[0.7, -0.2]]),
        "enc_b2": np.array([0.05, 0.02]),
    }
    q = encode(values, np.array([[1.0, 1.0]]), dims)
    h = math.tanh(1.0 * 0.3 + 1.0 * 0.4 + 0.1)
    assert float(q.mean[0, 0]) == pytest.approx(0.7 * h + 0.05, abs=1e-15)
    assert float(q.log_variance[0, 0]) == pytest.approx(-0.2 * h + 0.02, abs=1e-15)


def test_decode_zero_weights_gives_zero_logits():
    dims = dims_for()
    logits = decode(zero_values(dims), np.ones((2, 2)))
    np.testing.assert_array_equal(logits, np.zeros((2, 4)))


def test_decode_bias_only_logits_at_zero_latent():
    dims = dims_for()
    values = zero_values(dims)
    values["dec_b2"] = np.array([0.5, -1.0, 2.0, 0.0])
    logits = decode(values, np.zeros((2, 2)))
    np.testing.assert_array_equal(logits, np.tile(values["dec_b2"], (2, 1)))


def test_decode_hand_2x2_oracle():
    dims = ModelDims(n_items=2, hidden=2, latent=2)
    values = zero_values(dims)
    values["dec_w1"] = np.array([[1.0, 0.0], [0.0, 1.0]])
    values["dec_b1"] = np.array([0.2, -0.3])
    values["dec_w2"] = np.array([[0.5, 1.5], [-1.0, 0.25]])
    values["dec_b2"] = np.array([0.1, 0.2])
    z = np.array([[0.4, -0.6]])
    hidden = np.tanh(z + values["dec_b1"])
    want = hidden @ values["dec_w2"] + values["dec_b2"]
    np.testing.assert_allclose(decode(values, z), want, rtol=1e-15)


# -- multinomial likelihood -------------------------------------------------------------

def test_ll_uniform_two_items():
    got = multinomial_log_likelihood(np.zeros((1, 2)), np.array([[1.0, 0.0]]))
    assert float(got[0]) == pytest.approx(math.log(0.5), abs=1e-12)


def test_ll_uniform_three_items_two_hits():
    got = multinomial_log_likelihood(np.zeros((1, 3)), np.array([[1.0, 0.0, 1.0]]))
    assert float(got[0]) == pytest.approx(2.0 * math.log(1.0 / 3.0), abs=1e-12)


def test_ll_shift_invariance():
    rng = np.random.default_rng(4)
    logits = rng.standard_normal((3, 5))
    x = (rng.random((3, 5)) < 0.4).astype(float)
    a = multinomial_log_likelihood(logits, x)
    b = multinomial_log_likelihood(logits + 1000.0, x)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-9)


def test_ll_differentiates_toward_observed_items():
    logits = Tensor(np.zeros((1, 3)), requires_grad=True)
    multinomial_log_likelihood(logits, np.array([[1.0, 0.0, 0.0]])).sum().backward()
    # d/dlogit of x*log_softmax: 1{hit} - softmax * (number of hits)
    np.testing.assert_allclose(logits.grad, [[1 - 1 / 3, -1 / 3, -1 / 3]], rtol=1e-12)


# -- semantic signal and meta network -----------------------------------------------------

def table_2d():
    return MetaKnowledgeTable(user_matrix=np.array([[1.0, 1.0], [0.5, -0.5]]),
                              item_matrix=np.array([[1.0, 0.0], [0.0, 1.0]]))


def test_semantic_signal_hand_value():
    g = semantic_signal(np.array([[1.0, 1.0]]), table_2d(), np.array([0]))
    np.testing.assert_array_equal(g, [[2.0, 2.0]])


def test_semantic_signal_zero_row_reduces_to_user_bias():
    g = semantic_signal(np.zeros((1, 2)), table_2d(), np.array([1]))
    np.testing.assert_array_equal(g, [[0.5, -0.5]])


def test_semantic_signal_can_drop_item_term():
    g = semantic_signal(np.array([[1.0, 1.0]]), table_2d(), np.array([0]),
                        use_items=False)
    np.testing.assert_array_equal(g, [[1.0, 1.0]])


def test_meta_forward_zero_final_layer_gives_standard_gaussian():
    dims = ModelDims(n_items=4, hidden=3, latent=2, semantic=2)
    values = zero_values(dims)
    values["meta_w1"] = make_rng(0).standard_normal((2, dims.meta_hidden))
    p = meta_forward(values, np.array([[5.0, -3.0]]), dims)
    np.testing.assert_array_equal(p.mean, np.zeros((1, 2)))
    np.testing.assert_array_equal(p.log_variance, np.zeros((1, 2)))


def test_meta_forward_hand_oracle():
    dims = ModelDims(n_items=2, hidden=1, latent=1, semantic=2, meta_hidden=1)
    values = zero_values(dims)
    values["meta_w1"] = np.array([[0.25], [-0.5]])
    values["meta_b1"] = np.array([0.1])
    values["meta_w2"] = np.array([[1.0, 0.5]])
    values["meta_b2"] = np.array([-0.2, 0.3])
    p = meta_forward(values, np.array([[2.0, 2.0]]), dims)
    h = math.tanh(2.0 * 0.25 + 2.0 * -0.5 + 0.1)
    assert float(p.mean[0, 0]) == pytest.approx(h - 0.2, abs=1e-15)
    assert float(p.log_variance[0, 0]) == pytest.approx(0.5 * h + 0.3, abs=1e-15)


def test_eval_mode_forward_is_deterministic():
    dims = dims_for()
    block = init_params(dims, make_rng(1))
    x_in = prepare_input(np.array([[1.0, 0.0, 1.0, 1.0]]))
    q1 = encode(block.values, x_in, dims)
    q2 = encode(block.values, x_in, dims)
    np.testing.assert_array_equal(q1.mean, q2.mean)
    np.testing.assert_array_equal(q1.log_variance, q2.log_variance)


def test_forwards_run_on_tensor_leaves():
    dims = dims_for()
    block = init_params(dims, make_rng(2))
    leaves = block.leaves()
    q = encode(leaves, prepare_input(np.ones((2, 4))), dims)
    ll = multinomial_log_likelihood(decode(leaves, q.mean), np.ones((2, 4)))
    ll.sum().backward()
    assert leaves["enc_w1"].grad is not None
    assert leaves["dec_w2"].grad is not None
    assert data_of(ll).shape == (2,)
