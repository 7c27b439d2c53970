"""Kernel backend selection.

The hot conv/pool kernels exist twice: a numba-jitted implementation and a
pure-numpy fallback. MVOLT_BACKEND=numpy forces the fallback,
MVOLT_BACKEND=numba requires the jitted path; unset picks numba when the
import succeeds. Float64 calls always route to the numpy kernels (the
finite-difference oracle runs in float64 and should not trigger extra JIT
specializations).
"""

import os

import numpy as np

from . import _kernels_numpy as _knp
from .errors import ConfigError

_env = os.environ.get("MVOLT_BACKEND", "").strip().lower()
if _env not in ("", "numpy", "numba"):
    raise ConfigError(f"MVOLT_BACKEND must be 'numpy' or 'numba', got {_env!r}")

if _env == "numpy":
    _knb = None
else:
    try:
        from . import _kernels_numba as _knb
    except ImportError:
        if _env == "numba":
            raise
        _knb = None

_ACTIVE = _knb if _knb is not None else _knp


def active_backend() -> str:
    """Name of the kernel implementation in use ('numba' or 'numpy')."""
    return "numba" if _ACTIVE is _knb and _knb is not None else "numpy"


def _impl(x):
    return _knp if x.dtype == np.float64 else _ACTIVE


def conv2d_forward(x, w, b, stride, padding):
    return _impl(x).conv2d_forward(x, w, b, stride, padding)


def conv2d_backward(x, w, gy, stride, padding):
    return _impl(x).conv2d_backward(x, w, gy, stride, padding)


def maxpool_forward(x, size, stride):
    return _impl(x).maxpool_forward(x, size, stride)


def maxpool_backward(idx, gy, h, w, overlapping=False):
    return _impl(gy).maxpool_backward(idx, gy, h, w, overlapping)


def avgpool_forward(x, size, stride):
    return _impl(x).avgpool_forward(x, size, stride)


def avgpool_backward(gy, size, stride, h, w):
    return _impl(gy).avgpool_backward(gy, size, stride, h, w)
