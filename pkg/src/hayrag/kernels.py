"""Hot numeric kernels, in two builds.

Every kernel has a vectorized numpy build (suffix ``_np``) and a
loop-style build compiled with numba (suffix ``_nb``) when the numba
backend is active. The unsuffixed public names are bound to the active
build; both suffixed builds stay importable so the backend benchmark
and the cross-build parity tests can compare them directly.

All arrays are float64. GELU is the exact Gaussian-CDF form
x * Phi(x), not the tanh approximation.
"""

import math

import numpy as np
from scipy.special import erf as _erf

from .backend import BACKEND, njit_or_plain

INV_SQRT2 = 1.0 / math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# numpy builds


def gelu_fwd_np(x):
    return x * 0.5 * (1.0 + _erf(x * INV_SQRT2))


def gelu_bwd_np(x, dy):
    phi = 0.5 * (1.0 + _erf(x * INV_SQRT2))
    pdf = INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return dy * (phi + x * pdf)


def sigmoid_fwd_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_rows_np(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_bwd_np(y, dy):
    dot = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - dot)


def layernorm_fwd_np(x, gamma, beta, eps):
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    return xhat * gamma[None, :] + beta[None, :], mean, rstd


def layernorm_bwd_np(x, gamma, mean, rstd, dy):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma[None, :]
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


def filter_select_np(scores, theta, cap):
    """Indices with score >= theta, by descending score then ascending
    index, truncated to cap (cap < 0 means uncapped). Empty selection
    falls back to the first argmax."""
    keep = np.nonzero(scores >= theta)[0]
    if keep.size == 0:
        return np.array([int(np.argmax(scores))], dtype=np.int64)
    order = np.lexsort((keep, -scores[keep]))
    sel = keep[order]
    if cap >= 0:
        sel = sel[:cap]
    return sel.astype(np.int64)


# ---------------------------------------------------------------------------
# loop builds (numba-compiled under the numba backend)


def _gelu_fwd_loop(x):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        out[i] = v * 0.5 * (1.0 + math.erf(v * INV_SQRT2))
    return out


def _gelu_bwd_loop(x, dy):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        phi = 0.5 * (1.0 + math.erf(v * INV_SQRT2))
        pdf = INV_SQRT_2PI * math.exp(-0.5 * v * v)
        out[i] = dy[i] * (phi + v * pdf)
    return out


def _sigmoid_fwd_loop(x):
    out = np.empty_like(x)
    for i in range(x.size):
        v = x[i]
        if v >= 0.0:
            out[i] = 1.0 / (1.0 + math.exp(-v))
        else:
            e = math.exp(v)
            out[i] = e / (1.0 + e)
    return out


def _softmax_rows_loop(x):
    n, d = x.shape
    out = np.empty_like(x)
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            e = math.exp(x[i, j] - m)
            out[i, j] = e
            s += e
        for j in range(d):
            out[i, j] /= s
    return out


def _softmax_rows_bwd_loop(y, dy):
    n, d = y.shape
    dx = np.empty_like(y)
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += dy[i, j] * y[i, j]
        for j in range(d):
            dx[i, j] = y[i, j] * (dy[i, j] - dot)
    return dx


def _layernorm_fwd_loop(x, gamma, beta, eps):
    n, d = x.shape
    out = np.empty_like(x)
    mean = np.empty(n)
    rstd = np.empty(n)
    for i in range(n):
        m = 0.0
        for j in range(d):
            m += x[i, j]
        m /= d
        v = 0.0
        for j in range(d):
            diff = x[i, j] - m
            v += diff * diff
        v /= d
        r = 1.0 / math.sqrt(v + eps)
        mean[i] = m
        rstd[i] = r
        for j in range(d):
            out[i, j] = (x[i, j] - m) * r * gamma[j] + beta[j]
    return out, mean, rstd


def _layernorm_bwd_loop(x, gamma, mean, rstd, dy):
    n, d = x.shape
    dx = np.empty_like(x)
    dgamma = np.zeros(d)
    dbeta = np.zeros(d)
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rstd[i]
            dxh = dy[i, j] * gamma[j]
            dgamma[j] += dy[i, j] * xhat
            dbeta[j] += dy[i, j]
            m1 += dxh
            m2 += dxh * xhat
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rstd[i]
            dxh = dy[i, j] * gamma[j]
            dx[i, j] = rstd[i] * (dxh - m1 - xhat * m2)
    return dx, dgamma, dbeta


def _filter_select_loop(scores, theta, cap):
    n = scores.shape[0]
    kept = np.empty(n, dtype=np.int64)
    k = 0
    for i in range(n):
        if scores[i] >= theta:
            kept[k] = i
            k += 1
    if k == 0:
        best = 0
        for i in range(1, n):
            if scores[i] > scores[best]:
                best = i
        out = np.empty(1, dtype=np.int64)
        out[0] = best
        return out
    keys = np.empty(k)
    for a in range(k):
        keys[a] = -scores[kept[a]]
    order = np.argsort(keys, kind="mergesort")  # stable: ties stay index-ascending
    if cap >= 0 and cap < k:
        k = cap
    out = np.empty(k, dtype=np.int64)
    for a in range(k):
        out[a] = kept[order[a]]
    return out


gelu_fwd_nb = njit_or_plain(_gelu_fwd_loop)
gelu_bwd_nb = njit_or_plain(_gelu_bwd_loop)
sigmoid_fwd_nb = njit_or_plain(_sigmoid_fwd_loop)
softmax_rows_nb = njit_or_plain(_softmax_rows_loop)
softmax_rows_bwd_nb = njit_or_plain(_softmax_rows_bwd_loop)
layernorm_fwd_nb = njit_or_plain(_layernorm_fwd_loop)
layernorm_bwd_nb = njit_or_plain(_layernorm_bwd_loop)
filter_select_nb = njit_or_plain(_filter_select_loop)


# ---------------------------------------------------------------------------
# public bindings

def _flat_wrap(fn_flat):
    def wrapped(x):
        arr = np.ascontiguousarray(x, dtype=np.float64)
        return fn_flat(arr.ravel()).reshape(arr.shape)

    return wrapped


def _flat_wrap2(fn_flat):
    def wrapped(x, dy):
        arr = np.ascontiguousarray(x, dtype=np.float64)
        d = np.ascontiguousarray(dy, dtype=np.float64)
        return fn_flat(arr.ravel(), d.ravel()).reshape(arr.shape)

    return wrapped


if BACKEND == "numba":
    gelu_fwd = _flat_wrap(gelu_fwd_nb)
    gelu_bwd = _flat_wrap2(gelu_bwd_nb)
    sigmoid_fwd = _flat_wrap(sigmoid_fwd_nb)
    softmax_rows = softmax_rows_nb
    softmax_rows_bwd = softmax_rows_bwd_nb
    layernorm_fwd = layernorm_fwd_nb
    layernorm_bwd = layernorm_bwd_nb
    filter_select = filter_select_nb
else:
    gelu_fwd = _flat_wrap(gelu_fwd_np)
    gelu_bwd = _flat_wrap2(gelu_bwd_np)
    sigmoid_fwd = _flat_wrap(sigmoid_fwd_np)
    softmax_rows = softmax_rows_np
    softmax_rows_bwd = softmax_rows_bwd_np
    layernorm_fwd = layernorm_fwd_np
    layernorm_bwd = layernorm_bwd_np
    filter_select = filter_select_np
