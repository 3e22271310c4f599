"""Define-by-run reverse-mode automatic differentiation on dense numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and
a closure mapping the upstream gradient to per-parent gradients. Calling
:func:`backward` on a scalar loss walks the recorded graph once in reverse
topological order and accumulates gradients into the ``grad`` buffers of the
parameter leaves. Graphs are single-use: a second backward through the same
loss raises, and a fresh forward pass is required per optimisation step.

Only the layer types the receiver needs are provided (dense, separable 2-D
convolution, ReLU, sigmoid, BCE-with-logits) plus the structural glue
(concat, add, scale, reshape, mean over the other entries of an axis).
There is no general broadcasting engine.
"""

import numpy as np

from ..errors import ContractError, DimensionError, NumericalError, StateError
from . import kernels

# Set to True to validate every op output; off by default for speed.
DEBUG_CHECK_FINITE = False


class Tensor:
    """A node of the computation graph wrapping a real-valued numpy array.

    ``grad`` is only populated on leaves created with ``requires_grad=True``;
    intermediate gradients live in transient storage during backward.
    """

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_grad_fn", "_spent")

    def __init__(self, value, requires_grad=False, name=None, _parents=(), _grad_fn=None):
        value = np.asarray(value)
        if value.dtype not in (np.float32, np.float64):
            value = value.astype(np.float64)
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._grad_fn = _grad_fn
        self._spent = False

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        tag = self.name or ("param" if self.requires_grad else "node")
        return f"Tensor({tag}, shape={self.value.shape}, dtype={self.value.dtype})"


def constant(value, dtype=None, name=None):
    arr = np.asarray(value)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return Tensor(arr, name=name)


def _node(value, parents, grad_fn):
    if DEBUG_CHECK_FINITE and not np.all(np.isfinite(value)):
        raise NumericalError("non-finite values produced during forward pass")
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(value)
    out = Tensor(value, _parents=tuple(parents), _grad_fn=grad_fn)
    out.requires_grad = True
    return out


def dense(x, weights, bias):
    """Affine map along the last axis; all leading axes are preserved."""
    w = weights.value
    if w.ndim != 2:
        raise DimensionError(f"dense weights must be 2-D, got shape {w.shape}")
    in_dim, out_dim = w.shape
    if x.value.shape[-1] != in_dim:
        raise DimensionError(
            f"dense input last axis is {x.value.shape[-1]}, weights expect {in_dim}")
    if bias.value.shape != (out_dim,):
        raise DimensionError(f"dense bias shape {bias.value.shape} != ({out_dim},)")
    lead = x.value.shape[:-1]
    x2 = x.value.reshape(-1, in_dim)
    y2 = x2 @ w
    y2 += bias.value
    value = y2.reshape(lead + (out_dim,))

    def grad_fn(g):
        g2 = g.reshape(-1, out_dim)
        out = []
        if x.requires_grad:
            out.append((x, (g2 @ w.T).reshape(x.value.shape)))
        if weights.requires_grad:
            out.append((weights, x2.T @ g2))
        if bias.requires_grad:
            out.append((bias, g2.sum(axis=0)))
        return out

    return _node(value, (x, weights, bias), grad_fn)


def separable_conv2d(x, depthwise, pointwise, bias):
    """3x3 depthwise convolution then 1x1 pointwise mixing, zero padded.

    Accepts x of shape [h, w, c_in] or [n, h, w, c_in]; spatial extents are
    preserved.
    """
    v = x.value
    squeeze = v.ndim == 3
    if squeeze:
        v = v[None]
    if v.ndim != 4:
        raise DimensionError(f"conv input must be rank 3 or 4, got shape {x.value.shape}")
    k, pw, b = depthwise.value, pointwise.value, bias.value
    if k.shape[:2] != (3, 3) or k.ndim != 3:
        raise DimensionError(f"depthwise kernel must be [3, 3, c_in], got {k.shape}")
    c_in = v.shape[3]
    if k.shape[2] != c_in:
        raise DimensionError(
            f"input has {c_in} channels but depthwise kernel has {k.shape[2]}")
    if pw.ndim != 2 or pw.shape[0] != c_in:
        raise DimensionError(
            f"pointwise weights {pw.shape} incompatible with {c_in} input channels")
    c_out = pw.shape[1]
    if b.shape != (c_out,):
        raise DimensionError(f"conv bias shape {b.shape} != ({c_out},)")

    n, h, w, _ = v.shape
    mid = kernels.depthwise3x3(v, k)
    y2 = mid.reshape(-1, c_in) @ pw
    y2 += b
    value = y2.reshape(n, h, w, c_out)
    if squeeze:
        value = value[0]

    def grad_fn(g):
        g4 = g[None] if squeeze else g
        g2 = g4.reshape(-1, c_out)
        out = []
        if pointwise.requires_grad:
            out.append((pointwise, mid.reshape(-1, c_in).T @ g2))
        if bias.requires_grad:
            out.append((bias, g2.sum(axis=0)))
        if x.requires_grad or depthwise.requires_grad:
            gmid = (g2 @ pw.T).reshape(n, h, w, c_in)
            if depthwise.requires_grad:
                out.append((depthwise, kernels.depthwise3x3_grad_kernel(v, gmid)))
            if x.requires_grad:
                gx = kernels.depthwise3x3(gmid, kernels.flip_kernel(k))
                out.append((x, gx[0] if squeeze else gx))
        return out

    return _node(value, (x, depthwise, pointwise, bias), grad_fn)


def relu(x):
    value = np.maximum(x.value, 0)

    def grad_fn(g):
        return [(x, g * (x.value > 0))]

    return _node(value, (x,), grad_fn)


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x):
    s = _sigmoid(x.value)

    def grad_fn(g):
        return [(x, g * s * (1.0 - s))]

    return _node(s, (x,), grad_fn)


def bce_with_logits(logits, labels, mask=None):
    """Mean binary cross entropy between logits and {0,1} labels.

    ``sigmoid(logit)`` is the probability of bit 1. ``mask`` (0/1, broadcastable
    to the logits' shape) selects the entries that enter the mean; masked-out
    entries contribute nothing, and the mean is over the selected count.
    """
    v = logits.value
    y = np.asarray(labels, dtype=v.dtype)
    if y.shape != v.shape:
        raise DimensionError(f"labels shape {y.shape} != logits shape {v.shape}")
    # softplus(v) - y*v, computed stably
    per = np.maximum(v, 0) - y * v + np.log1p(np.exp(-np.abs(v)))
    if mask is None:
        count = float(v.size)
        total = per.sum()
    else:
        m = np.asarray(mask, dtype=v.dtype)
        count = float(np.broadcast_to(m, v.shape).sum())
        if count == 0:
            raise ContractError("bce_with_logits mask selects no entries")
        total = (per * m).sum()
    value = np.asarray(total / count, dtype=v.dtype)

    def grad_fn(g):
        gl = (_sigmoid(v) - y) * (g / count)
        if mask is not None:
            gl = gl * np.asarray(mask, dtype=v.dtype)
        return [(logits, gl)]

    return _node(value, (logits,), grad_fn)


def add(x, y):
    if x.value.shape != y.value.shape:
        raise DimensionError(f"add shapes differ: {x.value.shape} vs {y.value.shape}")

    def grad_fn(g):
        out = []
        if x.requires_grad:
            out.append((x, g))
        if y.requires_grad:
            out.append((y, g.copy() if x.requires_grad else g))
        return out

    return _node(x.value + y.value, (x, y), grad_fn)


def scale(x, factor):
    factor = float(factor)

    def grad_fn(g):
        return [(x, g * factor)]

    return _node(x.value * factor, (x,), grad_fn)


def concat(tensors, axis=-1):
    tensors = list(tensors)
    value = np.concatenate([t.value for t in tensors], axis=axis)
    ax = axis if axis >= 0 else value.ndim + axis
    sizes = [t.value.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        out = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = (slice(None),) * ax + (slice(lo, hi),)
                out.append((t, np.ascontiguousarray(g[idx])))
        return out

    return _node(value, tuple(tensors), grad_fn)


def reshape(x, shape):
    shape = tuple(shape)
    value = x.value.reshape(shape)

    def grad_fn(g):
        return [(x, g.reshape(x.value.shape))]

    return _node(value, (x,), grad_fn)


def mean_over_others(x, axis):
    """Per index i along ``axis``: the mean of all other entries on that axis.

    With a single entry on the axis the result is all zeros (no neighbours).
    """
    n = x.value.shape[axis]
    if n == 1:
        value = np.zeros_like(x.value)

        def grad_fn_single(g):
            # Output is constant in x; keep the graph connected with an
            # explicit zero so downstream parameters count as populated.
            return [(x, np.zeros_like(g))]

        return _node(value, (x,), grad_fn_single)

    total = x.value.sum(axis=axis, keepdims=True)
    value = (total - x.value) / (n - 1)

    def grad_fn(g):
        gt = g.sum(axis=axis, keepdims=True)
        return [(x, (gt - g) / (n - 1))]

    return _node(value, (x,), grad_fn)


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, check_finite=True):
    """Accumulate d(loss)/d(param) into every reachable parameter's ``grad``.

    ``loss`` must be a scalar. The graph is consumed: a second call raises
    :class:`StateError` until a new forward pass builds a fresh graph.
    """
    if loss.value.shape != ():
        raise ContractError(f"backward requires a scalar loss, got shape {loss.value.shape}")
    if loss._spent:
        raise StateError("backward was already run on this graph; run a new forward pass")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any parameter")

    order = _toposort(loss)
    grads = {id(loss): np.ones((), dtype=loss.value.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._grad_fn is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
                if check_finite and not np.all(np.isfinite(node.grad)):
                    raise NumericalError(
                        f"non-finite gradient for parameter {node.name or '<unnamed>'}")
            continue
        for parent, pg in node._grad_fn(g):
            key = id(parent)
            if key in grads:
                grads[key] += pg
            else:
                grads[key] = pg
    loss._spent = True
