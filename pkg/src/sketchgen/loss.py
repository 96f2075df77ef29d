"""Deep perceptual similarity between sketches, and the pixelwise MSE baseline."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .models import FeatureStack
from .tensor import ShapeError, Tensor, make

NORM_EPS = 1e-10


def _unit_normalize_op(a: Tensor, eps: float = NORM_EPS) -> Tensor:
    norm = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    den = norm + eps
    out = a.data / den

    def fn(g):
        safe = np.where(norm > 0, norm, 1.0)
        dot = (g * a.data).sum(axis=1, keepdims=True)
        return (g / den - a.data * dot / (den * den * safe),)

    return make(out, (a,), fn, "unit_normalize")


def unit_normalize(acts):
    """Scale each channel vector (axis 1) to unit length; zero vectors stay zero.

    Accepts a single [N, C, H, W] tensor or a list of them.
    """
    if isinstance(acts, Tensor):
        return _unit_normalize_op(acts)
    return [_unit_normalize_op(a) for a in acts]


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def psim_from_features(fx: list[Tensor], ft: list[Tensor], reduction: str = "mean") -> Tensor:
    """Layer-summed, position-averaged squared distance of unit-normalized features."""
    if len(fx) != len(ft):
        raise ShapeError(f"psim: {len(fx)} vs {len(ft)} feature layers")
    total = None
    for a, b in zip(fx, ft):
        if a.shape != b.shape:
            raise ShapeError(f"psim: feature shapes differ, {a.shape} vs {b.shape}")
        diff = _unit_normalize_op(a) - _unit_normalize_op(b)
        # sum over channels, mean over positions -> one value per sample
        per_sample = (diff * diff).sum(axis=1).mean(axis=(1, 2))
        total = per_sample if total is None else total + per_sample
    if reduction == "none":
        return total
    if reduction == "mean":
        return total.mean()
    if reduction == "sum":
        return total.sum()
    raise ValueError(f"unknown reduction {reduction!r}")


def psim(x, x_t, trunk: FeatureStack, reduction: str = "mean") -> Tensor:
    """Perceptual distance between generated sketches ``x`` and targets ``x_t``.

    Differentiable with respect to ``x``; the target branch is evaluated
    without recording a graph unless ``x_t`` itself requires grad.
    """
    x, x_t = _as_tensor(x), _as_tensor(x_t)
    if x.shape != x_t.shape:
        raise ShapeError(f"psim: input shapes differ, {x.shape} vs {x_t.shape}")
    fx = trunk.features(x)
    if x_t.requires_grad:
        ft = trunk.features(x_t)
    else:
        with T.no_grad():
            ft = trunk.features(x_t)
    return psim_from_features(fx, ft, reduction)


def mse_loss(x, x_t) -> Tensor:
    x, x_t = _as_tensor(x), _as_tensor(x_t)
    if x.shape != x_t.shape:
        raise ShapeError(f"mse_loss: input shapes differ, {x.shape} vs {x_t.shape}")
    d = x - x_t
    return (d * d).mean()


def shift(x: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate the last two axes by whole pixels, filling vacated pixels with 0."""
    out = np.zeros_like(x)
    h, w = x.shape[-2:]
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[..., yd, xd] = x[..., ys, xs]
    return out


def checkerboard(size: int, box: int, phase: tuple[int, int] = (0, 0)) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return ((((yy + phase[0]) // box) + ((xx + phase[1]) // box)) % 2).astype(np.float64)
