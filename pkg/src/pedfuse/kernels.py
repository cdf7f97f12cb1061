"""Backend selection for the GRU sequence kernels.

The compiled extension is used when it imports; otherwise the numpy version.
Set ``PEDFUSE_PURE_PYTHON=1`` to force the numpy path.
"""

import os

import numpy as np

from pedfuse import _gru_py

try:
    if os.environ.get("PEDFUSE_PURE_PYTHON"):
        raise ImportError("pure-python backend requested")
    from pedfuse import _gru_ext
except ImportError:
    _gru_ext = None

BACKENDS = {"python": _gru_py}
if _gru_ext is not None:
    BACKENDS["cython"] = _gru_ext

BACKEND = "cython" if _gru_ext is not None else "python"
_impl = BACKENDS[BACKEND]


def use_backend(name: str) -> None:
    """Switch the active backend at runtime (``"python"`` or ``"cython"``)."""
    global BACKEND, _impl
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}")
    BACKEND, _impl = name, BACKENDS[name]


def _for(arr):
    # the compiled kernels are double-only; long double goes through numpy
    return _impl if arr.dtype == np.float64 else _gru_py


def gru_forward(xs, h0, W, U, b):
    return _for(xs).gru_forward(xs, h0, W, U, b)


def gru_backward(xs, h0, hs, z, r, n, W, U, ghs):
    return _for(xs).gru_backward(xs, h0, hs, z, r, n, W, U, ghs)
