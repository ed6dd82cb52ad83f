"""Dense kernels with analytic gradients, plus a finite-difference checker.

Every forward function here has a matching ``*_backward``. Arrays are plain
numpy ``ndarray`` objects; the row-wise kernels dispatch to
:mod:`dpiformer.kernels` (numba or numpy, chosen at import time).
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from . import kernels
from .errors import LabelOutOfRange, NumericHealthError, ShapeMismatch

NEG_SENTINEL = kernels.NEG_SENTINEL


def check_finite(x: np.ndarray, name: str = "value") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericHealthError(f"non-finite entries in {name}")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def matmul_backward(dc: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Return ``(dA, dB)`` for ``C = A @ B``."""
    if dc.shape != (a.shape[0], b.shape[1]):
        raise ShapeMismatch(f"matmul_backward: dC {dc.shape} vs C {(a.shape[0], b.shape[1])}")
    return dc @ b.T, a.T @ dc


def _as_rows(x):
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def softmax_rows(x: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Softmax along the last axis with an optional additive mask.

    ``mask`` has the same shape as ``x`` and holds 0 for visible entries and
    ``NEG_SENTINEL`` for hidden ones. Fully masked rows return zeros.
    """
    if mask is None:
        mask = np.zeros_like(x)
    elif mask.shape != x.shape:
        raise ShapeMismatch(f"softmax mask {mask.shape} does not match input {x.shape}")
    rows = _as_rows(x)
    y = kernels.softmax_fwd(rows, _as_rows(mask.astype(x.dtype, copy=False)), 1)
    return y.reshape(x.shape)


def softmax_grouped(x: np.ndarray, addmask: np.ndarray, group: int) -> np.ndarray:
    """Softmax over rows of ``x`` where each block of ``group`` rows shares one mask row."""
    rows = _as_rows(x)
    if addmask.shape[0] * group != rows.shape[0] or addmask.shape[1] != rows.shape[1]:
        raise ShapeMismatch(f"grouped mask {addmask.shape} x{group} vs rows {rows.shape}")
    y = kernels.softmax_fwd(rows, np.ascontiguousarray(addmask, dtype=x.dtype), group)
    return y.reshape(x.shape)


def softmax_rows_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    if y.shape != dy.shape:
        raise ShapeMismatch(f"softmax backward: {dy.shape} vs {y.shape}")
    return kernels.softmax_bwd(_as_rows(y), _as_rows(dy)).reshape(y.shape)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-12):
    """Row-wise layer norm. Returns ``(y, cache)``; pass the cache to the backward."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeMismatch(
            f"layer_norm: gamma {gamma.shape}/beta {beta.shape} vs width {x.shape[-1]}"
        )
    y, xhat, rstd = kernels.layernorm_fwd(_as_rows(x), gamma, beta, x.dtype.type(eps))
    return y.reshape(x.shape), (xhat, rstd, gamma)


def layer_norm_backward(dy: np.ndarray, cache):
    """Return ``(dX, dgamma, dbeta)``."""
    xhat, rstd, gamma = cache
    rows = _as_rows(dy)
    if rows.shape != xhat.shape:
        raise ShapeMismatch(f"layer_norm backward: {dy.shape} vs cached {xhat.shape}")
    dx, dgamma, dbeta = kernels.layernorm_bwd(rows, xhat, rstd, gamma)
    return dx.reshape(dy.shape), dgamma, dbeta


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU, ``x * Phi(x)``."""
    return kernels.gelu_fwd(np.ascontiguousarray(x))


def gelu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    if x.shape != dy.shape:
        raise ShapeMismatch(f"gelu backward: {dy.shape} vs {x.shape}")
    return kernels.gelu_bwd(np.ascontiguousarray(x), dy)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood and its gradient w.r.t. ``logits``."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeMismatch(f"cross_entropy: labels {labels.shape} vs batch {n}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = float(-logp[np.arange(n), labels].mean())
    probs = np.exp(logp)
    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits.astype(logits.dtype, copy=False)


def dropout(x: np.ndarray, rate: float, rng: np.random.Generator | None):
    """Inverted dropout. Returns ``(y, mask)``; ``mask`` is None when inactive."""
    if rate <= 0.0 or rng is None:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return x * mask, mask


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def finite_difference_check(
    f: Callable[[], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    h: float = 1e-5,
    max_coords: int | None = 64,
    seed: int = 0,
) -> float:
    """Compare analytic gradients with central differences.

    ``f`` is evaluated with no arguments and must read the arrays in ``params``
    (they are perturbed in place and restored). At most ``max_coords``
    coordinates per tensor are sampled; ``None`` checks every coordinate.
    Returns the maximum of ``|a - b| / max(1, |a|, |b|)``.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, theta in params.items():
        grad = analytic[name]
        if grad.shape != theta.shape:
            raise ShapeMismatch(f"gradient for {name}: {grad.shape} vs {theta.shape}")
        flat = theta.reshape(-1)
        if max_coords is None or flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        gflat = grad.reshape(-1)
        for i in coords:
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            numeric = (fp - fm) / (2.0 * h)
            worst = max(worst, relative_error(gflat[i], numeric))
    return worst
