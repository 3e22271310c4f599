# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled 3x3 depthwise convolution kernels (channels-last, zero padding).

Accumulation scans kernel offsets row-major, matching the numpy fallback.
"""

import numpy as np

ctypedef fused real:
    float
    double

BACKEND_NAME = "cython"


def depthwise3x3(real[:, :, :, ::1] x, real[:, :, ::1] kernel):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    if real is double:
        out_arr = np.zeros((n, h, w, c), dtype=np.float64)
    else:
        out_arr = np.zeros((n, h, w, c), dtype=np.float32)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t i, y, xx, a, b, cc, yy, xs
    cdef real kv
    for i in range(n):
        for y in range(h):
            for a in range(3):
                yy = y + a - 1
                if yy < 0 or yy >= h:
                    continue
                for xx in range(w):
                    for b in range(3):
                        xs = xx + b - 1
                        if xs < 0 or xs >= w:
                            continue
                        for cc in range(c):
                            out[i, y, xx, cc] = out[i, y, xx, cc] + x[i, yy, xs, cc] * kernel[a, b, cc]
    return out_arr


def depthwise3x3_grad_kernel(real[:, :, :, ::1] x, real[:, :, :, ::1] grad_out):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    if real is double:
        dk_arr = np.zeros((3, 3, c), dtype=np.float64)
    else:
        dk_arr = np.zeros((3, 3, c), dtype=np.float32)
    cdef real[:, :, ::1] dk = dk_arr
    cdef Py_ssize_t i, y, xx, a, b, cc, yy, xs
    for i in range(n):
        for y in range(h):
            for a in range(3):
                yy = y + a - 1
                if yy < 0 or yy >= h:
                    continue
                for xx in range(w):
                    for b in range(3):
                        xs = xx + b - 1
                        if xs < 0 or xs >= w:
                            continue
                        for cc in range(c):
                            dk[a, b, cc] = dk[a, b, cc] + x[i, yy, xs, cc] * grad_out[i, y, xx, cc]
    return dk_arr
