import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sketchgen import tensor as T
from sketchgen.layers import (AdaIN, BatchNorm2d, ClassEmbeddingTable, Conv2d, Linear, adain, adain_op,
                              batchnorm_inference, bilinear_upsample2, conv2d, conv_output_size, cross_entropy,
                              dropout, embedding_lookup, instance_stats, maxpool2)
from sketchgen.tensor import ShapeError, Tensor, backward, finite_diff_check


def f64(a):
    return Tensor(np.asarray(a, dtype=np.float64))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_conv2d_matches_loops(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.choice([1, 3, 5]))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, k // 2 + 1))
    size = int(rng.integers(k, k + 5))
    x = rng.standard_normal((2, int(rng.integers(1, 4)), size, size))
    w = rng.standard_normal((int(rng.integers(1, 4)), x.shape[1], k, k))
    b = rng.standard_normal(w.shape[0])
    got = conv2d(f64(x), f64(w), f64(b), stride, pad).data
    np.testing.assert_allclose(got, oracles.conv2d_loops(x, w, b, stride, pad), atol=1e-10)


def test_conv2d_output_size_and_shape_errors():
    assert conv_output_size(32, 3, 1, 1) == 32
    assert conv_output_size(7, 3, 2, 0) == 3
    with pytest.raises(ShapeError):
        conv2d(f64(np.ones((1, 2, 5, 5))), f64(np.ones((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        conv2d(f64(np.ones((2, 5, 5))), f64(np.ones((1, 2, 3, 3))))


def test_conv2d_float32_close_to_float64():
    rng = np.random.default_rng(0)
    x, w = rng.standard_normal((2, 4, 9, 9)), rng.standard_normal((5, 4, 3, 3))
    got = conv2d(Tensor(x.astype(np.float32)), Tensor(w.astype(np.float32)), padding=1).data
    np.testing.assert_allclose(got, oracles.conv2d_loops(x, w, None, 1, 1), atol=1e-4)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_maxpool_matches_loops(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 2 * int(rng.integers(1, 5)), 2 * int(rng.integers(1, 5))))
    np.testing.assert_allclose(maxpool2(f64(x)).data, oracles.maxpool2_loops(x))


def test_maxpool_rejects_odd_sizes():
    with pytest.raises(ShapeError):
        maxpool2(f64(np.ones((1, 1, 3, 4))))


def test_maxpool_tie_gradient_goes_to_one_element():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True, dtype=np.float64)
    backward(maxpool2(x).sum())
    assert x.grad.sum() == 1.0 and x.grad[0, 0, 0, 0] == 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_upsample_matches_loops(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 2, int(rng.integers(1, 6)), int(rng.integers(1, 6))))
    np.testing.assert_allclose(bilinear_upsample2(f64(x)).data, oracles.upsample2_loops(x), atol=1e-12)


def test_upsample_half_pixel_values():
    out = bilinear_upsample2(f64(np.array([1.0, 3.0]).reshape(1, 1, 1, 2))).data
    np.testing.assert_allclose(out[0, 0, 0], [1.0, 1.5, 2.5, 3.0])
    const = bilinear_upsample2(f64(np.full((1, 1, 3, 3), 7.0))).data
    np.testing.assert_allclose(const, 7.0)


def test_batchnorm_inference_formula():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 4, 4))
    s, b, m, v = rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(3), rng.uniform(0.5, 2, 3)
    got = batchnorm_inference(f64(x), f64(s), f64(b), m, v).data
    r = lambda a: a[None, :, None, None]  # noqa: E731
    np.testing.assert_allclose(got, r(s) * (x - r(m)) / np.sqrt(r(v) + 1e-5) + r(b), atol=1e-12)


def test_batchnorm_module_updates_running_stats_only_in_training():
    bn = BatchNorm2d(2)
    x = Tensor(np.random.default_rng(0).normal(3.0, 2.0, (8, 2, 4, 4)).astype(np.float32))
    bn(x)
    assert np.all(bn.buffers["running_mean"] > 0.2)
    before = {k: v.copy() for k, v in bn.buffers.items()}
    bn.eval()(x)
    for k in before:
        np.testing.assert_array_equal(before[k], bn.buffers[k])


# -- AdaIN -----------------------------------------------------------------


def _adain_inputs(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(rng.uniform(-2, 2), rng.uniform(0.5, 3), (3, 4, 6, 6))
    return x, rng.standard_normal((3, 4)), rng.uniform(0.2, 3.0, (3, 4))


@pytest.mark.parametrize("seed", range(5))
def test_adain_matches_loops_and_hits_target_stats(seed):
    x, mu, sig = _adain_inputs(seed)
    out = adain_op(f64(x), f64(mu), f64(sig)).data
    np.testing.assert_allclose(out, oracles.adain_loops(x, mu, sig), atol=1e-10)
    m, s = instance_stats(out)
    np.testing.assert_allclose(m, mu, atol=1e-4)
    np.testing.assert_allclose(s, sig, atol=1e-3)


def test_adain_identity_and_affine_invariance():
    x, mu, sig = _adain_inputs(9)
    m, s = instance_stats(x)
    out = adain_op(f64(x), f64(m), f64(s)).data
    # the only deviation from the input is the epsilon in the denominator
    mb, sb = m[:, :, None, None], s[:, :, None, None]
    np.testing.assert_allclose(x - out, (x - mb) * 1e-5 / (sb + 1e-5), atol=1e-12)
    # with sigma_t = sigma(x) + eps the identity is exact
    np.testing.assert_allclose(adain_op(f64(x), f64(m), f64(s + 1e-5)).data, x, atol=1e-12)
    base = adain_op(f64(x), f64(mu), f64(sig)).data
    shifted = adain_op(f64(2.5 * x - 1.7), f64(mu), f64(sig)).data
    np.testing.assert_allclose(shifted, base, atol=1e-4)


def test_adain_constant_channel_is_finite():
    x = np.ones((1, 2, 3, 3))
    xt = Tensor(x, requires_grad=True, dtype=np.float64)
    out = adain_op(xt, f64(np.zeros((1, 2))), f64(np.ones((1, 2))))
    backward(out.sum())
    assert np.all(np.isfinite(out.data)) and np.all(np.isfinite(xt.grad))


def test_adain_class_table_shapes_and_errors():
    table = ClassEmbeddingTable(5, 4, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).standard_normal((2, 4, 3, 3)).astype(np.float32))
    assert adain(x, [0, 4], table).shape == x.shape
    with pytest.raises(IndexError):
        adain(x, [0, 5], table)
    with pytest.raises(ShapeError):
        adain(x, [0], table)
    mu, sig = table.lookup(np.arange(5))
    assert np.all(sig.data > 0)
    np.testing.assert_allclose(sig.data, 1.0, atol=0.1)
    assert not np.allclose(mu.data[0], mu.data[1])  # classes start distinguishable


def test_adain_module_gradients_reach_only_selected_rows():
    mod = AdaIN(4, 3, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).standard_normal((2, 3, 4, 4)).astype(np.float32))
    backward((mod(x, [1, 1]) * Tensor(np.random.default_rng(2).standard_normal((2, 3, 4, 4)))).sum())
    g = mod.table.mu.grad
    assert np.all(g[[0, 2, 3]] == 0) and np.any(g[1] != 0)


def test_embedding_lookup_gradient_and_errors():
    table = np.random.default_rng(0).standard_normal((4, 3))
    idx = np.array([2, 2, 0])
    assert finite_diff_check(lambda t: (embedding_lookup(t, idx) * 1.5).sum(), table) < 1e-9
    with pytest.raises(IndexError):
        embedding_lookup(f64(table), [4])
    with pytest.raises(TypeError):
        embedding_lookup(f64(table), [0.5])


# -- misc ------------------------------------------------------------------


def test_dropout_scaling_and_inference_identity():
    x = Tensor(np.ones((1000,), dtype=np.float64))
    out = dropout(x, 0.5, True, np.random.default_rng(0)).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert abs(out.mean() - 1.0) < 0.1
    np.testing.assert_array_equal(dropout(x, 0.5, False).data, x.data)


def test_cross_entropy_value_and_gradient():
    logits = np.array([[2.0, 0.0, -1.0], [0.0, 0.0, 0.0]])
    labels = np.array([0, 2])
    expected = np.mean([-np.log(np.exp(2) / (np.exp(2) + 1 + np.exp(-1))), np.log(3.0)])
    assert abs(cross_entropy(f64(logits), labels).item() - expected) < 1e-12
    assert finite_diff_check(lambda t: cross_entropy(t, labels), logits) < 1e-8


def test_module_state_dict_round_trip_and_freeze():
    conv = Conv2d(2, 3, 3, rng=np.random.default_rng(0))
    other = Conv2d(2, 3, 3, rng=np.random.default_rng(1))
    other.load_state_dict(conv.state_dict())
    np.testing.assert_array_equal(other.weight.data, conv.weight.data)
    other.freeze()
    assert not any(p.requires_grad for p in other.parameters()) and not other.training
    lin = Linear(4, 2, np.random.default_rng(0))
    assert lin.num_parameters() == 10


def test_kaiming_uniform_bound():
    conv = Conv2d(8, 4, 3, rng=np.random.default_rng(0))
    bound = np.sqrt(6.0 / (8 * 9))
    assert np.abs(conv.weight.data).max() <= bound
    assert np.abs(conv.weight.data).max() > 0.9 * bound
    assert np.all(conv.bias.data == 0)


def test_frozen_weight_still_passes_input_gradient():
    conv = Conv2d(2, 2, 3, rng=np.random.default_rng(0)).freeze()
    x = Tensor(np.random.default_rng(1).standard_normal((1, 2, 5, 5)).astype(np.float32), requires_grad=True)
    backward(conv(x).sum())
    assert x.grad is not None and conv.weight.grad is None


def test_float64_gradient_of_conv_module():
    with T.default_dtype(np.float64):
        conv = Conv2d(2, 3, 3, stride=2, rng=np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((2, 2, 7, 7))
    assert finite_diff_check(lambda t: (conv(t) ** 2).sum(), x) < 1e-7
