"""Row-wise hot kernels with two interchangeable implementations.

``DPIFORMER_BACKEND=numba`` (the default when numba imports) selects the
``@njit`` versions in :mod:`._numba`; ``DPIFORMER_BACKEND=numpy`` selects the
vectorised fallback in :mod:`._numpy`. Both operate on 2-D C-contiguous
arrays and share one contract, so callers never branch on the backend.
"""

import os

from . import _numpy

NEG_SENTINEL = _numpy.NEG_SENTINEL

_requested = os.environ.get("DPIFORMER_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"DPIFORMER_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        from . import _numba as _impl
    except ImportError:  # pragma: no cover - numba is a hard dependency
        _impl = _numpy
else:
    _impl = _numpy

BACKEND = "numba" if _impl is not _numpy else "numpy"

softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd
gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd

__all__ = [
    "BACKEND",
    "NEG_SENTINEL",
    "softmax_fwd",
    "softmax_bwd",
    "layernorm_fwd",
    "layernorm_bwd",
    "gelu_fwd",
    "gelu_bwd",
]
