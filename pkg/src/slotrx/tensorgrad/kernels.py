"""Backend selection for the hot convolution kernels.

The compiled Cython extension is used when it was built; otherwise the numpy
fallback is selected. ``SLOTRX_BACKEND=numpy`` (or ``cython``) forces a choice
at import time. Both backends implement the same contracts and are
individually deterministic.
"""

import os

import numpy as np

from ..errors import ConfigError
from . import _conv_np

try:
    from . import _conv_cy
except ImportError:
    _conv_cy = None

_requested = os.environ.get("SLOTRX_BACKEND", "auto").lower()
if _requested in ("auto", ""):
    _impl = _conv_cy if _conv_cy is not None else _conv_np
elif _requested == "cython":
    if _conv_cy is None:
        raise ConfigError("SLOTRX_BACKEND=cython but the compiled extension is not available")
    _impl = _conv_cy
elif _requested == "numpy":
    _impl = _conv_np
else:
    raise ConfigError(f"unknown SLOTRX_BACKEND value {_requested!r}")

BACKEND = _impl.BACKEND_NAME


def _prep(x):
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    return np.ascontiguousarray(x)


def depthwise3x3(x, kernel):
    """3x3 per-channel correlation, zero padded; x[n,h,w,c], kernel[3,3,c]."""
    x = _prep(x)
    return _impl.depthwise3x3(x, np.ascontiguousarray(kernel, dtype=x.dtype))


def depthwise3x3_grad_kernel(x, grad_out):
    x = _prep(x)
    return _impl.depthwise3x3_grad_kernel(x, np.ascontiguousarray(grad_out, dtype=x.dtype))


def flip_kernel(kernel):
    """Spatially flipped copy, used to backpropagate through the depthwise stage."""
    return np.ascontiguousarray(kernel[::-1, ::-1, :])
