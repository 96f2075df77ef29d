"""Slow reference implementations written straight from the definitions.

Nothing here imports the package; these are the independent side of the
equivalence tests.
"""

import math

import numpy as np


def conv2d_loops(x, w, b, stride, padding):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else b[oi]
                    for ci in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                yy = i * stride + di - padding
                                xx = j * stride + dj - padding
                                if 0 <= yy < h and 0 <= xx < wd:
                                    acc += x[ni, ci, yy, xx] * w[oi, ci, di, dj]
                    out[ni, oi, i, j] = acc
    return out


def maxpool2_loops(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for ni in range(n):
        for ci in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[ni, ci, i, j] = max(x[ni, ci, 2 * i + a, 2 * j + bb] for a in (0, 1) for bb in (0, 1))
    return out


def _source(o, size):
    """Half-pixel source coordinate for output index o of a 2x upsample, clamped to the input."""
    s = (o + 0.5) / 2.0 - 0.5
    return min(max(s, 0.0), size - 1.0)


def upsample2_loops(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, 2 * h, 2 * w))
    for ni in range(n):
        for ci in range(c):
            for i in range(2 * h):
                sy = _source(i, h)
                y0 = int(math.floor(sy))
                y1 = min(y0 + 1, h - 1)
                fy = sy - y0
                for j in range(2 * w):
                    sx = _source(j, w)
                    x0 = int(math.floor(sx))
                    x1 = min(x0 + 1, w - 1)
                    fx = sx - x0
                    v = x[ni, ci]
                    out[ni, ci, i, j] = ((1 - fy) * ((1 - fx) * v[y0, x0] + fx * v[y0, x1])
                                         + fy * ((1 - fx) * v[y1, x0] + fx * v[y1, x1]))
    return out


def adain_loops(x, mu_t, sigma_t, eps=1e-5):
    n, c, h, w = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for ni in range(n):
        for ci in range(c):
            vals = x[ni, ci].ravel().astype(np.float64)
            m = sum(vals) / len(vals)
            sd = math.sqrt(sum((v - m) ** 2 for v in vals) / len(vals))
            out[ni, ci] = sigma_t[ni, ci] * (x[ni, ci] - m) / (sd + eps) + mu_t[ni, ci]
    return out


def psim_loops(fx, ft, eps=1e-10):
    """Per-sample distance from lists of [N, C, H, W] feature arrays."""
    n = fx[0].shape[0]
    out = np.zeros(n)
    for a, b in zip(fx, ft):
        _, c, h, w = a.shape
        for ni in range(n):
            total = 0.0
            for i in range(h):
                for j in range(w):
                    va, vb = a[ni, :, i, j], b[ni, :, i, j]
                    na = math.sqrt(float((va * va).sum())) + eps
                    nb = math.sqrt(float((vb * vb).sum())) + eps
                    total += float(((va / na - vb / nb) ** 2).sum())
            out[ni] += total / (h * w)
    return out


def adam_loops(p, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam trajectory."""
    m = v = 0.0
    traj = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        traj.append(p)
    return traj
