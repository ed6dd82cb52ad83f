"""``@njit`` kernels; same contract as :mod:`._numpy`."""

import math

import numpy as np
from numba import njit

from ._numpy import NEG_SENTINEL

_MASKED = NEG_SENTINEL / 2
_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


@njit(cache=True)
def softmax_fwd(x, addmask, group):
    rows, cols = x.shape
    out = np.zeros_like(x)
    for r in range(rows):
        mrow = r // group
        zmax = -np.inf
        for j in range(cols):
            if addmask[mrow, j] > _MASKED:
                z = x[r, j] + addmask[mrow, j]
                if z > zmax:
                    zmax = z
        if zmax == -np.inf:
            continue
        s = 0.0
        for j in range(cols):
            if addmask[mrow, j] > _MASKED:
                e = math.exp(x[r, j] + addmask[mrow, j] - zmax)
                out[r, j] = e
                s += out[r, j]
        inv = 1.0 / s
        for j in range(cols):
            out[r, j] *= inv
    return out


@njit(cache=True)
def softmax_bwd(y, dy):
    rows, cols = y.shape
    dx = np.empty_like(y)
    for r in range(rows):
        inner = 0.0
        for j in range(cols):
            inner += dy[r, j] * y[r, j]
        for j in range(cols):
            dx[r, j] = y[r, j] * (dy[r, j] - inner)
    return dx


@njit(cache=True)
def layernorm_fwd(x, gamma, beta, eps):
    rows, cols = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(rows, dtype=x.dtype)
    for r in range(rows):
        mean = 0.0
        for j in range(cols):
            mean += x[r, j]
        mean /= cols
        var = 0.0
        for j in range(cols):
            d = x[r, j] - mean
            var += d * d
        var /= cols
        rs = 1.0 / math.sqrt(var + eps)
        rstd[r] = rs
        for j in range(cols):
            h = (x[r, j] - mean) * rs
            xhat[r, j] = h
            y[r, j] = h * gamma[j] + beta[j]
    return y, xhat, rstd


@njit(cache=True)
def layernorm_bwd(dy, xhat, rstd, gamma):
    rows, cols = dy.shape
    dx = np.empty_like(dy)
    dgamma = np.zeros(cols, dtype=dy.dtype)
    dbeta = np.zeros(cols, dtype=dy.dtype)
    for r in range(rows):
        m1 = 0.0
        m2 = 0.0
        for j in range(cols):
            g = dy[r, j] * gamma[j]
            m1 += g
            m2 += g * xhat[r, j]
            dgamma[j] += dy[r, j] * xhat[r, j]
            dbeta[j] += dy[r, j]
        m1 /= cols
        m2 /= cols
        for j in range(cols):
            dx[r, j] = (dy[r, j] * gamma[j] - m1 - xhat[r, j] * m2) * rstd[r]
    return dx, dgamma, dbeta


@njit(cache=True)
def _gelu_fwd_flat(x, out):
    for i in range(x.size):
        v = x[i]
        out[i] = 0.5 * v * (1.0 + math.erf(v * _INV_SQRT2))


@njit(cache=True)
def _gelu_bwd_flat(x, dy, out):
    for i in range(x.size):
        v = x[i]
        cdf = 0.5 * (1.0 + math.erf(v * _INV_SQRT2))
        pdf = _INV_SQRT2PI * math.exp(-0.5 * v * v)
        out[i] = dy[i] * (cdf + v * pdf)


def gelu_fwd(x):
    out = np.empty_like(x)
    _gelu_fwd_flat(x.reshape(-1), out.reshape(-1))
    return out


def gelu_bwd(x, dy):
    out = np.empty_like(x)
    _gelu_bwd_flat(x.reshape(-1), np.ascontiguousarray(dy).reshape(-1), out.reshape(-1))
    return out
