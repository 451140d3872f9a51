"""Minimal reverse-mode tape over float64 numpy arrays.

Just enough primitives for the graph layers: elementwise arithmetic with
broadcasting, matmul, the activations, reductions, row gather/scatter
(for attention over edge lists) and concat. Composite helpers (softmax,
layer norm, cosine) are built from the primitives so their gradients
come for free.
"""

from __future__ import annotations

import numpy as np


class Var:
    """A node in the computation tape."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_var(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_var(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    a, b = as_var(a), as_var(b)
    return Var(a.value + b.value, (a, b),
               lambda g: (_unbroadcast(g, a.value.shape),
                          _unbroadcast(g, b.value.shape)))


def sub(a, b):
    a, b = as_var(a), as_var(b)
    return Var(a.value - b.value, (a, b),
               lambda g: (_unbroadcast(g, a.value.shape),
                          _unbroadcast(-g, b.value.shape)))


def mul(a, b):
    a, b = as_var(a), as_var(b)
    return Var(a.value * b.value, (a, b),
               lambda g: (_unbroadcast(g * b.value, a.value.shape),
                          _unbroadcast(g * a.value, b.value.shape)))


def div(a, b):
    a, b = as_var(a), as_var(b)
    out = a.value / b.value
    return Var(out, (a, b),
               lambda g: (_unbroadcast(g / b.value, a.value.shape),
                          _unbroadcast(-g * out / b.value, b.value.shape)))


def matmul(a, b):
    a, b = as_var(a), as_var(b)
    return Var(a.value @ b.value, (a, b),
               lambda g: (g @ b.value.T, a.value.T @ g))


def relu(a):
    a = as_var(a)
    mask = a.value > 0
    return Var(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, alpha=0.2):
    a = as_var(a)
    mask = a.value > 0
    slope = np.where(mask, 1.0, alpha)
    return Var(a.value * slope, (a,), lambda g: (g * slope,))


def elu(a, alpha=1.0):
    a = as_var(a)
    mask = a.value > 0
    ex = alpha * np.exp(np.minimum(a.value, 0.0))
    out = np.where(mask, a.value, ex - alpha)
    return Var(out, (a,), lambda g: (g * np.where(mask, 1.0, ex),))


def exp(a):
    a = as_var(a)
    out = np.exp(a.value)
    return Var(out, (a,), lambda g: (g * out,))


def sqrt(a):
    a = as_var(a)
    out = np.sqrt(a.value)
    return Var(out, (a,), lambda g: (g * 0.5 / out,))


def vsum(a, axis=None, keepdims=False):
    a = as_var(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return Var(out, (a,), vjp)


def gather_rows(a, idx):
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.intp)

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return Var(a.value[idx], (a,), vjp)


def segment_sum(a, idx, n_segments):
    """Sum rows of `a` into `n_segments` buckets given per-row bucket ids."""
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.intp)
    out = np.zeros((n_segments,) + a.value.shape[1:], dtype=np.float64)
    np.add.at(out, idx, a.value)
    return Var(out, (a,), lambda g: (g[idx],))


def concat(parts, axis=1):
    parts = [as_var(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(piece)
                     for piece in np.split(g, splits, axis=axis))

    return Var(np.concatenate([p.value for p in parts], axis=axis),
               parts, vjp)


# --------------------------------------------------------------------------
# Composites
# --------------------------------------------------------------------------

def softmax_vec(a):
    """Softmax over a flat vector; the max shift is constant w.r.t. the
    gradient because softmax is shift invariant."""
    a = as_var(a)
    shifted = sub(a, float(a.value.max()))
    ex = exp(shifted)
    return div(ex, vsum(ex))


def segment_softmax(scores, idx, n_segments):
    """Softmax of per-edge scores grouped by target node id."""
    scores = as_var(scores)
    idx = np.asarray(idx, dtype=np.intp)
    seg_max = np.full((n_segments,) + scores.value.shape[1:], -np.inf)
    np.maximum.at(seg_max, idx, scores.value)
    seg_max[~np.isfinite(seg_max)] = 0.0
    ex = exp(sub(scores, seg_max[idx]))
    totals = segment_sum(ex, idx, n_segments)
    return div(ex, gather_rows(totals, idx))


def layer_norm_rows(a, eps=1e-12):
    """Zero-mean unit-variance per row, no learned scale or shift."""
    a = as_var(a)
    n = a.value.shape[-1]
    mean = div(vsum(a, axis=-1, keepdims=True), float(n))
    centered = sub(a, mean)
    var = div(vsum(mul(centered, centered), axis=-1, keepdims=True), float(n))
    return div(centered, sqrt(add(var, eps)))


def cosine_similarity(a, b, eps=1e-12):
    """cos(a, b) for flat vectors; either side may be a constant."""
    a, b = as_var(a), as_var(b)
    dot = vsum(mul(a, b))
    na = sqrt(add(vsum(mul(a, a)), eps))
    nb = sqrt(add(vsum(mul(b, b)), eps))
    return div(dot, mul(na, nb))


# --------------------------------------------------------------------------
# Backward pass
# --------------------------------------------------------------------------

def backward(root: Var, seed_grad=None):
    """Accumulate gradients of a scalar `root` into every tape leaf."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    for node in order:
        node.grad = None
    root.grad = (np.ones_like(root.value) if seed_grad is None
                 else np.asarray(seed_grad, dtype=np.float64))

    for node in reversed(order):
        if node.grad is None or node._vjp is None:
            continue
        for parent, grad in zip(node._parents, node._vjp(node.grad)):
            if grad is None:
                continue
            if parent.grad is None:
                parent.grad = np.array(grad, dtype=np.float64, copy=True)
            else:
                parent.grad = parent.grad + grad
