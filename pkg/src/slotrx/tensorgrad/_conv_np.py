"""Numpy reference kernels for the 3x3 depthwise convolution stage.

Zero padding of one on each spatial border, output spatially same-sized.
Layout is channels-last: x[n, h, w, c], kernel[3, 3, c].

The accumulation order (kernel offsets scanned row-major) is fixed so that
results are deterministic and match the compiled backend element-wise up to
floating-point contraction differences.
"""

import numpy as np

BACKEND_NAME = "numpy"


def depthwise3x3(x, kernel):
    """Per-channel 3x3 correlation of x[n,h,w,c] with kernel[3,3,c]."""
    n, h, w, c = x.shape
    xp = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x
    out = np.zeros((n, h, w, c), dtype=x.dtype)
    for a in range(3):
        for b in range(3):
            out += xp[:, a:a + h, b:b + w, :] * kernel[a, b]
    return out


def depthwise3x3_grad_kernel(x, grad_out):
    """Gradient of depthwise3x3 w.r.t. the kernel; grad_out has x's shape."""
    n, h, w, c = x.shape
    xp = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x
    dk = np.empty((3, 3, c), dtype=x.dtype)
    for a in range(3):
        for b in range(3):
            dk[a, b] = np.einsum("nhwc,nhwc->c", xp[:, a:a + h, b:b + w, :], grad_out)
    return dk
