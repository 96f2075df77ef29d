import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sketchgen.loss import checkerboard, mse_loss, psim, psim_from_features, shift, unit_normalize
from sketchgen.models import FeatureStack, FeatureStackConfig
from sketchgen.tensor import ShapeError, Tensor, backward


@pytest.fixture(scope="module")
def trunk():
    return FeatureStack(FeatureStackConfig(), seed=3).freeze()


def _sketches(seed, n=2):
    return Tensor(np.random.default_rng(seed).uniform(0, 1, (n, 1, 32, 32)).astype(np.float32))


def test_unit_normalize_norms_and_zero_guard():
    x = np.random.default_rng(0).standard_normal((2, 5, 3, 3))
    x[0, :, 1, 1] = 0.0
    out = unit_normalize(Tensor(x)).data
    norms = np.sqrt((out**2).sum(axis=1))
    assert norms[0, 1, 1] == 0.0
    mask = np.ones_like(norms, dtype=bool)
    mask[0, 1, 1] = False
    np.testing.assert_allclose(norms[mask], 1.0, atol=1e-9)


def test_psim_matches_loop_oracle(trunk):
    x, y = _sketches(1), _sketches(2)
    fx = [f.data.astype(np.float64) for f in trunk.features(x)]
    fy = [f.data.astype(np.float64) for f in trunk.features(y)]
    np.testing.assert_allclose(psim(x, y, trunk, reduction="none").data, oracles.psim_loops(fx, fy), rtol=1e-5)


def test_psim_identity_symmetry_and_bound(trunk):
    x, y = _sketches(3), _sketches(4)
    assert psim(x, x, trunk).item() == 0.0
    assert abs(psim(x, y, trunk).item() - psim(y, x, trunk).item()) < 1e-6
    assert psim(x, y, trunk).item() <= 4 * len(trunk.convs)


def test_psim_reductions(trunk):
    x, y = _sketches(5, 3), _sketches(6, 3)
    per = psim(x, y, trunk, reduction="none").data
    assert per.shape == (3,)
    assert abs(psim(x, y, trunk, reduction="sum").item() - per.sum()) < 1e-5
    assert abs(psim(x, y, trunk).item() - per.mean()) < 1e-6
    with pytest.raises(ValueError):
        psim(x, y, trunk, reduction="max")


def test_psim_shape_errors(trunk):
    with pytest.raises(ShapeError):
        psim(_sketches(0, 2), _sketches(0, 3), trunk)
    with pytest.raises(ShapeError):
        psim_from_features([Tensor(np.ones((1, 2, 2, 2)))], [])


def test_psim_gradient_flows_to_prediction_only(trunk):
    x = Tensor(_sketches(7).data, requires_grad=True)
    y = Tensor(_sketches(8).data, requires_grad=True)
    backward(psim(x, _sketches(8), trunk))
    assert x.grad is not None and np.any(x.grad != 0)
    assert all(p.grad is None for p in trunk.parameters())
    backward(psim(x, y, trunk))
    assert y.grad is not None


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_psim_nonnegative_symmetric_bounded(seed):
    trunk = FeatureStack(FeatureStackConfig(), seed=seed % 7).freeze()
    x, y = _sketches(seed), _sketches(seed + 1)
    d = psim(x, y, trunk, reduction="none").data
    d2 = psim(y, x, trunk, reduction="none").data
    assert np.all(d >= 0) and np.all(d <= 4 * 5)
    np.testing.assert_allclose(d, d2, atol=1e-6)


def test_mse():
    a, b = Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.ones((1, 1, 2, 2)))
    assert mse_loss(a, b).item() == 1.0
    with pytest.raises(ShapeError):
        mse_loss(a, Tensor(np.ones((1, 1, 2, 3))))


def test_shift_fills_with_zero():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    s = shift(x, 0, 1)
    np.testing.assert_array_equal(s[..., 0], 0.0)
    np.testing.assert_array_equal(s[..., 1:], x[..., :-1])
    np.testing.assert_array_equal(shift(shift(x, 2, -1), -2, 1)[..., :2, 1:], x[..., :2, 1:])


@pytest.mark.parametrize("box", [2, 4, 8])
def test_one_box_shift_of_periodic_checkerboard_is_its_inverse(box, trunk):
    """On a periodic board the one-box shift and the inverse are the same image,
    so no image distance (pixelwise or perceptual) can separate them."""
    c = checkerboard(32, box, (1, 3))
    wrapped = np.roll(c, box, axis=1)
    np.testing.assert_array_equal(wrapped, 1.0 - c)
    ct = Tensor(c[None, None])
    assert psim(ct, Tensor(wrapped[None, None]), trunk).item() == psim(ct, Tensor((1.0 - c)[None, None]), trunk).item()


def test_zero_fill_shift_mse_closed_form():
    for box in (2, 4, 8):
        c = checkerboard(32, box)[None, None]
        assert abs(mse_loss(Tensor(c), Tensor(shift(c, 0, box))).item() - (1 - box / 64)) < 1e-12
        assert mse_loss(Tensor(c), Tensor(1.0 - c)).item() == 1.0
