"""Reference numpy implementations of the hot kernels."""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_SQRT1_2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def layer_norm(x, scale, shift, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * scale + shift, xhat, rstd


def layer_norm_backward(dy, xhat, rstd, scale):
    d = xhat.shape[-1]
    dscale = (dy * xhat).reshape(-1, d).sum(axis=0)
    dshift = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * scale
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx.astype(dy.dtype, copy=False), dscale, dshift


def gelu(x):
    return (0.5 * x * (1.0 + erf(x * _SQRT1_2))).astype(x.dtype, copy=False)


def gelu_backward(dy, x):
    cdf = 0.5 * (1.0 + erf(x * _SQRT1_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return (dy * (cdf + x * pdf)).astype(dy.dtype, copy=False)


def masked_softmax(scores, key_mask):
    """Softmax over the last axis; ``key_mask`` is 0 where a key is excluded.

    ``key_mask`` has shape (B, T) and scores (B, ..., T); excluded keys get
    probability exactly 0.
    """
    b, t = key_mask.shape
    bias = np.where(np.asarray(key_mask, dtype=bool), 0.0, -np.inf).astype(scores.dtype)
    s = scores + bias.reshape(b, *([1] * (scores.ndim - 2)), t)
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s *= 1.0 / s.sum(axis=-1, keepdims=True)
    return s


def softmax_backward(dp, p):
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


def best_span(logp_start, logp_end, valid, max_len):
    """Highest ``logp_start[i] + logp_end[j]`` over valid i <= j < i + max_len.

    Ties go to the smaller i, then the smaller j.  Returns (-1, -1, -inf)
    when no admissible pair has a finite score.
    """
    valid = np.asarray(valid, dtype=bool)
    n = len(valid)
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    ok = valid[:, None] & valid[None, :] & (j >= i) & (j - i < max_len)
    scores = np.where(ok, logp_start[:, None].astype(np.float64) + logp_end[None, :], -np.inf)
    flat = int(np.argmax(scores))
    score = float(scores.flat[flat])
    if score == -np.inf:
        return -1, -1, -np.inf
    return flat // n, flat % n, score


def best_alignment(scores):
    """Maximum total score of a one-to-one matching between rows and columns.

    Bitmask dynamic programme over the smaller side; exact.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return 0.0
    if scores.shape[0] < scores.shape[1]:
        scores = scores.T
    n_big, n_small = scores.shape
    size = 1 << n_small
    dp = np.full(size, -np.inf)
    dp[0] = 0.0
    for r in range(n_big):
        nxt = dp.copy()
        for mask in range(size):
            base = dp[mask]
            if base == -np.inf:
                continue
            for c in range(n_small):
                bit = 1 << c
                if not mask & bit:
                    v = base + scores[r, c]
                    if v > nxt[mask | bit]:
                        nxt[mask | bit] = v
        dp = nxt
    return float(dp.max())
