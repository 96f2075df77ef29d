import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sketchgen import tensor as T
from sketchgen.tensor import ShapeError, TapeError, Tensor, backward, finite_diff_check


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def test_default_dtype_is_float32_and_context_switches():
    assert Tensor([1.0, 2.0]).dtype == np.float32
    with T.default_dtype(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_add_mul_backward():
    a, b = leaf([1.0, 2.0]), leaf([3.0, 4.0])
    backward(((a * b) + a).sum())
    np.testing.assert_allclose(a.grad, [4.0, 5.0])
    np.testing.assert_allclose(b.grad, [1.0, 2.0])


def test_broadcast_gradient_is_reduced_to_input_shape():
    a = leaf(np.ones((3, 4)))
    b = leaf(np.ones(4))
    backward((a * b).sum())
    assert b.grad.shape == (4,)
    np.testing.assert_allclose(b.grad, 3.0)


def test_incompatible_shapes_raise():
    with pytest.raises(ShapeError):
        leaf(np.ones((3, 4))) + leaf(np.ones(3))


def test_reused_input_accumulates():
    a = leaf([2.0])
    backward((a * a * a).sum())
    np.testing.assert_allclose(a.grad, [12.0])


def test_backward_needs_scalar():
    with pytest.raises(ShapeError):
        backward(leaf([1.0, 2.0]) * 2)


def test_second_backward_on_consumed_tape_raises():
    a = leaf([1.0])
    y = (a * 3).sum()
    backward(y)
    with pytest.raises(TapeError):
        backward(y)


def test_no_grad_records_nothing():
    a = leaf([1.0])
    with T.no_grad():
        y = a * 2
    assert y.tape_id is None and not y.requires_grad


def test_item_rejects_non_scalar():
    assert Tensor([[3.0]]).item() == 3.0
    with pytest.raises(ShapeError):
        Tensor([1.0, 2.0]).item()


def test_matmul_and_getitem_gradients():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((3, 2))
    assert finite_diff_check(lambda t: (t @ Tensor(w)).sum(), rng.standard_normal((4, 3))) < 1e-8
    assert finite_diff_check(lambda t: (t[1:, ::2] * 3.0).sum(), rng.standard_normal((4, 5))) < 1e-8


@pytest.mark.parametrize("fn", [
    lambda t: T.exp(t).sum(),
    lambda t: T.log(t * t + 1.0).sum(),
    lambda t: T.sqrt(t * t + 1.0).sum(),
    lambda t: T.softplus(t).sum(),
    lambda t: (t / (t * t + 2.0)).sum(),
    lambda t: t.var(axis=1).sum(),
    lambda t: (t.mean(axis=0) ** 3).sum(),
    lambda t: T.concat([t, t * 2.0], axis=1).transpose(1, 0).reshape(-1).sum(),
])
def test_primitive_gradients(fn):
    x = np.random.default_rng(3).standard_normal((3, 4))
    assert finite_diff_check(fn, x) < 1e-6


def test_sigmoid_is_stable_for_large_inputs():
    out = T.sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0])))
    np.testing.assert_allclose(out.data, [0.0, 0.5, 1.0])
    assert np.all(np.isfinite(out.data))


def test_forward_primitive_dispatch():
    out = T.forward_primitive("add", Tensor([1.0]), Tensor([2.0]))
    assert out.data[0] == 3.0
    with pytest.raises(ValueError, match="unknown primitive"):
        T.forward_primitive("nope", Tensor([1.0]))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(-3, 3, allow_nan=False)))
def test_polynomial_gradient_matches_closed_form(x):
    t = leaf(x)
    backward((t * t * 3.0 + t * 2.0).sum())
    np.testing.assert_allclose(t.grad, 6.0 * x + 2.0, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 5)),
              elements=st.floats(-2, 2, allow_nan=False)))
def test_relu_gradient_is_indicator(x):
    t = leaf(x)
    backward(T.relu(t).sum())
    np.testing.assert_array_equal(t.grad, (x > 0).astype(np.float64))
