"""Network layers: fused differentiable ops and the parameter containers using them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import ShapeError, Tensor, get_default_dtype, make, softplus

ADAIN_EPS = 1e-5
BN_EPS = 1e-5


def _check_nchw(op: str, x: Tensor) -> tuple[int, int, int, int]:
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected a 4-D [N,C,H,W] input, got shape {x.shape}")
    return x.shape


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation via im2col and one GEMM."""
    n, c, h, w = _check_nchw("conv2d", x)
    if weight.ndim != 4:
        raise ShapeError(f"conv2d: weight must be 4-D, got {weight.shape}")
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels but weight {weight.shape} expects {ci}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {o} output channels")
    s, p = stride, padding
    ho, wo = conv_output_size(h, kh, s, p), conv_output_size(w, kw, s, p)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} too large for input {h}x{w} with padding {p}")

    xd = x.data
    # rows = output positions (n, i, j), columns = (ki, kj, c); one GEMM against the
    # matching weight layout is far faster than the transposed arrangement
    xh = xd.transpose(0, 2, 3, 1)
    hp, wp = h + 2 * p, w + 2 * p
    if p:
        xp = np.zeros((n, hp, wp, c), dtype=xd.dtype)
        xp[:, p : p + h, p : p + w, :] = xh
    else:
        xp = xh
    pointwise = kh == 1 and kw == 1 and s == 1
    if pointwise:
        cols = np.ascontiguousarray(xp).reshape(n * ho * wo, c)
    else:
        cols6 = np.empty((n, ho, wo, kh, kw, c), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                cols6[:, :, :, i, j, :] = xp[:, i : i + s * ho : s, j : j + s * wo : s, :]
        cols = cols6.reshape(n * ho * wo, kh * kw * c)
    w2 = np.ascontiguousarray(weight.data.transpose(0, 2, 3, 1)).reshape(o, -1)
    out = cols @ w2.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def fn(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        gw = None
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(o, kh, kw, c).transpose(0, 3, 1, 2)
        gx = None
        if x.requires_grad:
            dcols = g2 @ w2
            if pointwise:
                gxp = dcols.reshape(n, hp, wp, c)
            else:
                dcols = dcols.reshape(n, ho, wo, kh, kw, c)
                gxp = np.zeros((n, hp, wp, c), dtype=xd.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i : i + s * ho : s, j : j + s * wo : s, :] += dcols[:, :, :, i, j, :]
            gx = np.ascontiguousarray(gxp[:, p : p + h, p : p + w, :].transpose(0, 3, 1, 2))
        if bias is None:
            return gx, gw
        gb = g2.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return make(out, inputs, fn, "conv2d")


# ---------------------------------------------------------------------------
# Pooling / resampling
# ---------------------------------------------------------------------------


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; ties go to the first element in row-major order."""
    n, c, h, w = _check_nchw("maxpool2", x)
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: spatial dims must be even, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    win = x.data.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = win.argmax(axis=-1)[..., None]
    out = np.take_along_axis(win, idx, axis=-1)[..., 0]

    def fn(g):
        gw = np.zeros((n, c, h2, w2, 4), dtype=g.dtype)
        np.put_along_axis(gw, idx, g[..., None], axis=-1)
        return (gw.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return make(np.ascontiguousarray(out), (x,), fn, "maxpool2")


def upsample_matrix(size: int, dtype=np.float64) -> np.ndarray:
    """Interpolation matrix [2*size, size] for scale-2 half-pixel bilinear resampling."""
    out = np.zeros((2 * size, size), dtype=dtype)
    for o in range(2 * size):
        src = min(max((o + 0.5) / 2.0 - 0.5, 0.0), size - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, size - 1)
        frac = src - lo
        out[o, lo] += 1.0 - frac
        out[o, hi] += frac
    return out


def bilinear_upsample2(x: Tensor) -> Tensor:
    n, c, h, w = _check_nchw("bilinear_upsample2", x)
    if h < 1 or w < 1:
        raise ShapeError(f"bilinear_upsample2: empty spatial dims {h}x{w}")
    uh = upsample_matrix(h, x.dtype)
    uw = upsample_matrix(w, x.dtype)
    out = np.matmul(np.matmul(uh, x.data), uw.T)

    def fn(g):
        return (np.matmul(np.matmul(uh.T, g), uw),)

    return make(out, (x,), fn, "bilinear_upsample2")


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def batchnorm_inference(
    x: Tensor, scale: Tensor, shift: Tensor, running_mean: np.ndarray, running_var: np.ndarray, eps: float = BN_EPS
) -> Tensor:
    _, c, _, _ = _check_nchw("batchnorm_inference", x)
    if scale.shape != (c,) or shift.shape != (c,) or running_mean.shape != (c,) or running_var.shape != (c,):
        raise ShapeError(f"batchnorm_inference: parameters must have shape ({c},)")
    inv = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
    xhat = (x.data - running_mean[None, :, None, None]) * inv[None, :, None, None]
    a = scale.data * inv
    out = x.data * a[None, :, None, None] + (shift.data - running_mean * a)[None, :, None, None]

    def fn(g):
        gx = g * a[None, :, None, None] if x.requires_grad else None
        gs = (g * xhat).sum(axis=(0, 2, 3)) if scale.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if shift.requires_grad else None
        return gx, gs, gb

    return make(out.astype(x.dtype), (x, scale, shift), fn, "batchnorm_inference")


def batchnorm_train(x: Tensor, scale: Tensor, shift: Tensor, eps: float = BN_EPS):
    """Batch-statistics normalization. Returns (output, batch mean, batch variance)."""
    n, c, h, w = _check_nchw("batchnorm_train", x)
    m = n * h * w
    mu = x.data.mean(axis=(0, 2, 3))
    xc = x.data - mu[None, :, None, None]
    var = (xc * xc).mean(axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv[None, :, None, None]
    out = xhat * scale.data[None, :, None, None] + shift.data[None, :, None, None]

    def fn(g):
        gs = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        gx = None
        if x.requires_grad:
            k = (scale.data * inv)[None, :, None, None] / m
            gx = k * (m * g - gb[None, :, None, None] - xhat * gs[None, :, None, None])
        return gx, gs if scale.requires_grad else None, gb if shift.requires_grad else None

    return make(out, (x, scale, shift), fn, "batchnorm_train"), mu, var


def adain_op(x: Tensor, mu_t: Tensor, sigma_t: Tensor, eps: float = ADAIN_EPS) -> Tensor:
    """AdaIN with per-sample target statistics ``mu_t``, ``sigma_t`` of shape [N, C].

    Instance statistics use the population standard deviation over H*W and
    ``eps`` is added to that standard deviation, not to the variance.
    """
    n, c, h, w = _check_nchw("adain", x)
    if mu_t.shape != (n, c) or sigma_t.shape != (n, c):
        raise ShapeError(f"adain: target stats must be ({n}, {c}), got {mu_t.shape} and {sigma_t.shape}")
    hw = h * w
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    sd = np.sqrt((xc * xc).mean(axis=(2, 3), keepdims=True))
    den = sd + eps
    xhat = xc / den
    st = sigma_t.data[:, :, None, None]
    out = st * xhat + mu_t.data[:, :, None, None]

    def fn(g):
        g_mu = g.sum(axis=(2, 3)) if mu_t.requires_grad else None
        g_sig = (g * xhat).sum(axis=(2, 3)) if sigma_t.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * st
            safe = np.where(sd > 0, sd, 1.0)
            coef = (gh * xc).sum(axis=(2, 3), keepdims=True) / (den * den * hw * safe)
            gx = (gh - gh.mean(axis=(2, 3), keepdims=True)) / den - xc * coef
        return gx, g_mu, g_sig

    return make(out, (x, mu_t, sigma_t), fn, "adain")


def instance_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample, per-channel mean and population std over spatial dims."""
    return x.mean(axis=(2, 3)), x.std(axis=(2, 3))


# ---------------------------------------------------------------------------
# Lookup, dropout, dense, classification loss
# ---------------------------------------------------------------------------


def embedding_lookup(table: Tensor, index) -> Tensor:
    """Row gather. An int index returns a 1-D row; an int array returns [len(index), D]."""
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("embedding_lookup: index must be integer")
    rows = table.shape[0]
    if np.any(idx < 0) or np.any(idx >= rows):
        raise IndexError(f"embedding_lookup: index {index} out of range for {rows} rows")

    def fn(g):
        full = np.zeros(table.shape, dtype=table.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return make(table.data[idx].copy(), (table,), fn, "embedding_lookup")


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: an rng is required in training mode")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: cannot apply weight {weight.shape} to input {x.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def fn(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return make(out, inputs, fn, "linear")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n = logits.shape[0]
    lsm = log_softmax(logits.data)
    loss = -lsm[np.arange(n), labels].mean()

    def fn(g):
        p = np.exp(lsm)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return make(np.asarray(loss, dtype=logits.dtype), (logits,), fn, "cross_entropy")


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


class Module:
    """Minimal parameter container.

    Parameters are Tensor attributes, submodules are Module attributes (or
    lists of them), and non-trainable state lives in ``self.buffers``.
    Traversal order is attribute assignment order, which makes checkpoint
    manifests stable.
    """

    training: bool = True

    def __init__(self) -> None:
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if name == "buffers":
                continue
            if isinstance(value, (Tensor, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Tensor, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, arr in self.buffers.items():
            yield f"{prefix}{name}", arr
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self) -> "Module":
        """Exclude all parameters from optimization and switch to inference mode."""
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self.eval()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {f"param:{k}": v.data for k, v in self.named_parameters()}
        state.update({f"buffer:{k}": v for k, v in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.named_parameters():
            arr = state[f"param:{k}"]
            if arr.shape != p.shape:
                raise ShapeError(f"load_state_dict: {k} has shape {arr.shape}, expected {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
        for m_prefix, m in self._named_modules():
            for name in list(m.buffers):
                m.buffers[name] = state[f"buffer:{m_prefix}{name}"].astype(m.buffers[name].dtype, copy=True)

    def _named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value._named_modules(f"{prefix}{name}.")

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


def kaiming_uniform(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


@dataclass
class Conv2dParams:
    weight: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1, padding: int | None = None,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if kernel < 1:
            raise ValueError("kernel size must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_ch, self.out_ch, self.kernel = in_ch, out_ch, kernel
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        fan_in = in_ch * kernel * kernel
        self.weight = Tensor(kaiming_uniform((out_ch, in_ch, kernel, kernel), fan_in, rng), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=get_default_dtype()), requires_grad=True)

    @property
    def params(self) -> Conv2dParams:
        return Conv2dParams(self.weight, self.bias, self.stride, self.padding)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    """Batch normalization; batch statistics in training mode, running ones otherwise."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = BN_EPS):
        super().__init__()
        dt = get_default_dtype()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.scale = Tensor(np.ones(channels, dtype=dt), requires_grad=True)
        self.shift = Tensor(np.zeros(channels, dtype=dt), requires_grad=True)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dt)
        self.buffers["running_var"] = np.ones(channels, dtype=dt)

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training:
            return batchnorm_inference(
                x, self.scale, self.shift, self.buffers["running_mean"], self.buffers["running_var"], self.eps
            )
        out, mu, var = batchnorm_train(x, self.scale, self.shift, self.eps)
        n = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * n / max(n - 1, 1)
        m = self.momentum
        self.buffers["running_mean"] = ((1 - m) * self.buffers["running_mean"] + m * mu).astype(mu.dtype)
        self.buffers["running_var"] = ((1 - m) * self.buffers["running_var"] + m * unbiased).astype(mu.dtype)
        return out


SOFTPLUS_ONE = float(np.log(np.expm1(1.0)))


class ClassEmbeddingTable(Module):
    """Per-class, per-feature-map AdaIN targets.

    ``sigma_raw`` is unconstrained; the applied scale is ``softplus(sigma_raw)``.
    Rows start near (mu=0, sigma=1) with a small per-class jitter so that
    classes are distinguishable from the first step.
    """

    def __init__(self, num_classes: int, channels: int, rng: np.random.Generator | None = None,
                 init_jitter: float = 0.02):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        dt = get_default_dtype()
        self.num_classes, self.channels = num_classes, channels
        self.mu = Tensor(rng.normal(0.0, init_jitter, (num_classes, channels)).astype(dt), requires_grad=True)
        raw = SOFTPLUS_ONE + rng.normal(0.0, init_jitter, (num_classes, channels))
        self.sigma_raw = Tensor(raw.astype(dt), requires_grad=True)

    def lookup(self, class_ids) -> tuple[Tensor, Tensor]:
        ids = np.asarray(class_ids)
        return embedding_lookup(self.mu, ids), softplus(embedding_lookup(self.sigma_raw, ids))


def adain(x: Tensor, class_ids, table: ClassEmbeddingTable) -> Tensor:
    ids = np.asarray(class_ids)
    if ids.shape != (x.shape[0],):
        raise ShapeError(f"adain: need one class id per sample, got {ids.shape} for batch {x.shape[0]}")
    if np.any(ids < 0) or np.any(ids >= table.num_classes):
        raise IndexError(f"adain: class id out of range for {table.num_classes} classes: {ids}")
    mu_t, sigma_t = table.lookup(ids)
    return adain_op(x, mu_t, sigma_t)


class AdaIN(Module):
    def __init__(self, num_classes: int, channels: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.table = ClassEmbeddingTable(num_classes, channels, rng)

    def __call__(self, x: Tensor, class_ids) -> Tensor:
        return adain(x, class_ids, self.table)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Tensor(kaiming_uniform((out_features, in_features), in_features, rng), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=get_default_dtype()), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)
