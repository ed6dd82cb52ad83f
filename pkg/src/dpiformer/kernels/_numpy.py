"""Pure-numpy reference kernels."""

import numpy as np
from scipy.special import erf

NEG_SENTINEL = -1e9
# additive-mask entries at or below this count as masked
_MASKED = NEG_SENTINEL / 2

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


def softmax_fwd(x, addmask, group):
    """Masked softmax over the last axis of ``x`` (rows, cols).

    Row ``r`` uses mask row ``r // group``. Masked entries are exactly zero and
    fully masked rows come back as all zeros.
    """
    rows, cols = x.shape
    m = np.repeat(addmask, group, axis=0) if group != 1 else addmask
    keep = m > _MASKED
    z = x + m
    zmax = np.where(keep, z, -np.inf).max(axis=1, keepdims=True)
    any_keep = keep.any(axis=1, keepdims=True)
    zmax = np.where(any_keep, zmax, 0.0).astype(x.dtype)
    e = np.where(keep, np.exp(z - zmax), 0.0).astype(x.dtype)
    s = e.sum(axis=1, keepdims=True)
    s = np.where(s > 0, s, 1.0).astype(x.dtype)
    return e / s


def softmax_bwd(y, dy):
    inner = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - inner)


def layernorm_fwd(x, gamma, beta, eps):
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def layernorm_bwd(dy, xhat, rstd, gamma):
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd[:, None]
    return dx, dgamma, dbeta


def gelu_fwd(x):
    return (0.5 * x * (1.0 + erf(x * _INV_SQRT2))).astype(x.dtype)


def gelu_bwd(x, dy):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return (dy * (cdf + x * pdf)).astype(x.dtype)
