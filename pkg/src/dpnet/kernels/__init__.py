"""Mixing-update kernels with a compiled backend and a pure-Python fallback.

The backend is chosen at import: the Cython extension when it is built,
otherwise the scipy version. Set ``DPNET_KERNELS=python`` to force the
fallback. Both accumulate in CSR order and agree bit for bit.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

try:
    if os.environ.get("DPNET_KERNELS", "").lower() == "python":
        raise ImportError("fallback forced")
    from . import _mix as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _fallback.mix_update}
if _compiled is not None:
    BACKENDS["cython"] = _compiled.mix_update
BACKEND = "cython" if _compiled is not None else "python"


def get_backend(name: str | None = None):
    name = name or BACKEND
    if name not in BACKENDS:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}")
    return BACKENDS[name]


def mix(matrix, prev: np.ndarray, a: float = 1.0, b: float = 0.0, c: float = 0.0, x: np.ndarray | None = None,
        out: np.ndarray | None = None, backend: str | None = None, blas: bool = False) -> np.ndarray:
    """Return a * (A @ prev) + b * prev + c * x for a state shaped (n,) or (n, R).

    The CSR kernels give every column the same accumulation order whatever
    R is, so a replicate's trace does not depend on how many run with it.
    ``blas=True`` sends dense matrices through matmul instead, which is
    faster but rounds differently for different R.
    """
    vec = prev.ndim == 1
    p = np.ascontiguousarray(prev, dtype=np.float64)
    if vec:
        p = p[:, None]
    if x is None:
        xx = p
        c = 0.0
    else:
        xx = np.ascontiguousarray(x, dtype=np.float64)
        if xx.ndim == 1:
            xx = xx[:, None]
        if xx.shape != p.shape:
            xx = np.ascontiguousarray(np.broadcast_to(xx, p.shape))
    res = np.empty_like(p) if out is None else out.reshape(p.shape)
    if blas and getattr(matrix, "prefers_dense", False):
        np.matmul(matrix.dense, p, out=res)
        res *= a
        res += b * p
        res += c * xx
    else:
        W = matrix.weights
        get_backend(backend)(W.indptr, W.indices, W.data, p, xx, float(a), float(b), float(c), res)
    return res[:, 0] if vec else res
