"""Finite-difference gradient verification.

The numeric side only ever calls the forward pass, so it is independent of
the reverse-mode code it is used to check.
"""

import numpy as np


def finite_difference_gradients(loss_fn, params, step=1e-4):
    """Central finite differences of ``loss_fn()`` w.r.t. every parameter entry.

    ``loss_fn`` must re-run the forward pass from the parameters' current
    values and return a python float. Parameters are perturbed in place and
    restored exactly.
    """
    grads = {}
    for name, p in params.items():
        flat = p.value.reshape(-1)
        g = np.empty(flat.size, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = loss_fn()
            flat[i] = orig - step
            lm = loss_fn()
            flat[i] = orig
            g[i] = (lp - lm) / (2.0 * step)
        grads[name] = g.reshape(p.value.shape)
    return grads


def max_relative_error(analytic, numeric, floor=1e-3):
    """Worst-case elementwise |a - n| / max(|a| + |n|, floor)."""
    worst = 0.0
    for name, num in numeric.items():
        ana = analytic[name]
        denom = np.maximum(np.abs(ana) + np.abs(num), floor)
        err = float(np.max(np.abs(ana - num) / denom))
        worst = max(worst, err)
    return worst


def relative_error_report(analytic, numeric, floor=1e-3):
    """Per-parameter worst relative error, for printable summaries."""
    report = {}
    for name, num in numeric.items():
        ana = analytic[name]
        denom = np.maximum(np.abs(ana) + np.abs(num), floor)
        report[name] = float(np.max(np.abs(ana - num) / denom))
    return report
