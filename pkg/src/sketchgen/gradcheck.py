"""Finite-difference verification of every differentiable layer (float64)."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .layers import (batchnorm_inference, batchnorm_train, bilinear_upsample2, conv2d, embedding_lookup, adain_op,
                     maxpool2)
from .loss import psim
from .models import FeatureStack, FeatureStackConfig
from .tensor import Tensor, finite_diff_check

TOLERANCE = 1e-5

Case = tuple[Callable[[Tensor], Tensor], np.ndarray]


def _project(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Random linear functional, so every output element contributes to the gradient."""
    r = Tensor(rng.standard_normal(out.shape))
    return (out * r).sum()


def _away_from_zero(shape, rng, margin=0.05) -> np.ndarray:
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _distinct(shape, rng) -> np.ndarray:
    """Values with pairwise gaps well above the finite-difference step (no max-pool near-ties)."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.01 + rng.uniform(0, 0.001, n)).reshape(shape) - n * 0.005


def _conv_cases(rng) -> list[Case]:
    n, c, o = 2, int(rng.integers(1, 4)), int(rng.integers(1, 4))
    k = int(rng.choice([1, 3, 5]))
    stride = int(rng.choice([1, 2]))
    pad = int(rng.integers(0, k // 2 + 1))
    size = int(rng.integers(k, k + 4))
    x = rng.standard_normal((n, c, size, size))
    w = rng.standard_normal((o, c, k, k))
    b = rng.standard_normal(o)
    probe = lambda out: _project(out, np.random.default_rng(7))  # noqa: E731
    return [
        (lambda t: probe(conv2d(t, Tensor(w), Tensor(b), stride, pad)), x),
        (lambda t: probe(conv2d(Tensor(x), t, Tensor(b), stride, pad)), w),
        (lambda t: probe(conv2d(Tensor(x), Tensor(w), t, stride, pad)), b),
    ]


def _maxpool_cases(rng) -> list[Case]:
    x = _distinct((2, 2, 4, 6), rng)
    return [(lambda t: _project(maxpool2(t), np.random.default_rng(3)), x)]


def _upsample_cases(rng) -> list[Case]:
    x = rng.standard_normal((2, 2, int(rng.integers(1, 5)), int(rng.integers(1, 5))))
    return [(lambda t: _project(bilinear_upsample2(t), np.random.default_rng(5)), x)]


def _batchnorm_cases(rng) -> list[Case]:
    c = 3
    x = rng.standard_normal((2, c, 3, 3))
    s, b = rng.standard_normal(c), rng.standard_normal(c)
    rm, rv = rng.standard_normal(c), rng.uniform(0.5, 2.0, c)
    probe = lambda out: _project(out, np.random.default_rng(11))  # noqa: E731
    return [
        (lambda t: probe(batchnorm_inference(t, Tensor(s), Tensor(b), rm, rv)), x),
        (lambda t: probe(batchnorm_inference(Tensor(x), t, Tensor(b), rm, rv)), s),
        (lambda t: probe(batchnorm_inference(Tensor(x), Tensor(s), t, rm, rv)), b),
        (lambda t: probe(batchnorm_train(t, Tensor(s), Tensor(b))[0]), x),
    ]


def _adain_cases(rng) -> list[Case]:
    n, c = 2, 3
    x = rng.standard_normal((n, c, 4, 4))
    mu, sig = rng.standard_normal((n, c)), rng.uniform(0.5, 2.0, (n, c))
    probe = lambda out: _project(out, np.random.default_rng(13))  # noqa: E731
    return [
        (lambda t: probe(adain_op(t, Tensor(mu), Tensor(sig))), x),
        (lambda t: probe(adain_op(Tensor(x), t, Tensor(sig))), mu),
        (lambda t: probe(adain_op(Tensor(x), Tensor(mu), t)), sig),
    ]


def _embedding_cases(rng) -> list[Case]:
    table = rng.standard_normal((5, 4))
    idx = rng.integers(0, 5, 7)  # repeats exercise gradient accumulation
    return [(lambda t: _project(embedding_lookup(t, idx), np.random.default_rng(17)), table)]


def _activation_cases(rng) -> list[Case]:
    x = _away_from_zero((3, 4), rng)
    return [
        (lambda t: _project(T.relu(t), np.random.default_rng(19)), x),
        (lambda t: _project(T.sigmoid(t), np.random.default_rng(23)), rng.standard_normal((3, 4)) * 4),
    ]


def _kink_margin(trunk: FeatureStack, x: np.ndarray) -> float:
    """Smallest |pre-activation| in the trunk; small values mean a ReLU kink is within reach."""
    h, margin = Tensor(x), np.inf
    with T.no_grad():
        for i, conv in enumerate(trunk.convs):
            pre = conv(h)
            margin = min(margin, float(np.abs(pre.data).min()))
            h = T.relu(pre)
            if i in trunk.config.pool_after:
                h = maxpool2(h)
    return margin


def _psim_cases(rng) -> list[Case]:
    with T.default_dtype(np.float64):
        trunk = FeatureStack(FeatureStackConfig(channels=[3, 4, 4, 4, 3], kernels=[3, 3, 3, 3, 3],
                                                pool_after=[0, 1, 4], input_size=8), seed=int(rng.integers(1 << 16)))
        trunk.freeze()
        # finite differences are only meaningful where the loss is smooth
        while True:
            x = rng.uniform(0.1, 0.9, (2, 1, 8, 8))
            y = rng.uniform(0.1, 0.9, (2, 1, 8, 8))
            if min(_kink_margin(trunk, x), _kink_margin(trunk, y)) > 1e-3:
                break
    return [(lambda t: psim(t, Tensor(y), trunk), x), (lambda t: psim(Tensor(x), t, trunk), y)]


SUITE: dict[str, Callable[[np.random.Generator], list[Case]]] = {
    "conv2d": _conv_cases,
    "maxpool2": _maxpool_cases,
    "bilinear_upsample2": _upsample_cases,
    "batchnorm": _batchnorm_cases,
    "adain": _adain_cases,
    "embedding_lookup": _embedding_cases,
    "relu/sigmoid": _activation_cases,
    "psim": _psim_cases,
}


@dataclass
class GradcheckResult:
    max_error: dict[str, float]
    seconds: float
    tolerance: float = TOLERANCE

    @property
    def worst(self) -> float:
        return max(self.max_error.values())

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance


def run_suite(seeds: int = 20, names: list[str] | None = None, base_seed: int = 0) -> GradcheckResult:
    t0 = time.perf_counter()
    errors = {}
    with T.default_dtype(np.float64):
        for name in names or list(SUITE):
            worst = 0.0
            for s in range(seeds):
                rng = np.random.default_rng([base_seed, s, len(name)])
                for fn, point in SUITE[name](rng):
                    worst = max(worst, finite_diff_check(fn, point))
            errors[name] = worst
    return GradcheckResult(errors, time.perf_counter() - t0)
