"""Backend selection for the GRU recurrence kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``PEDMOTION_BACKEND=python`` forces the fallback.
"""
import logging
import os

import numpy as np

from . import _gru_py

_python = _gru_py
_compiled = None
try:
    from ._ext import gru_kernels as _compiled
except ImportError:  # extension not built
    _compiled = None
    logging.getLogger(__name__).warning("compiled GRU kernels unavailable; using numpy fallback")

if _compiled is not None and os.environ.get("PEDMOTION_BACKEND", "").lower() != "python":
    _impl = _compiled
    BACKEND = "cython"
else:
    _impl = _python
    BACKEND = "python"


def available_backends():
    return ["cython", "python"] if _compiled is not None else ["python"]


def get_backend(name=None):
    """Kernel module for ``name`` ("cython" / "python"); default is the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _python
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled GRU kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def gru_forward(xr, xz, xn, W_rh, W_zh, W_hh, h0, backend=None):
    k = get_backend(backend)
    return k.gru_forward(_c(xr), _c(xz), _c(xn), _c(W_rh), _c(W_zh), _c(W_hh), _c(h0))


def gru_backward(dh_out, hs, r, z, n, W_rh, W_zh, W_hh, backend=None):
    k = get_backend(backend)
    return k.gru_backward(_c(dh_out), _c(hs), _c(r), _c(z), _c(n), _c(W_rh), _c(W_zh), _c(W_hh))
