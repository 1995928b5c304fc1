"""Dense reverse-mode differentiation over numpy arrays.

Every primitive returns a new :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them. ``backward`` walks the
recorded graph in reverse topological order, visiting each node once.
"""

from __future__ import annotations

import contextlib

import numpy as np
from scipy import sparse

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array that may take part in a recorded computation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "_owned")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self._owned = False
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.item())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; all of these route through the primitives below.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def backward(self, grad=None):
        backward(self, grad)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled:
        live = tuple(p for p in parents if p.requires_grad)
        if live:
            out.requires_grad = True
            out._parents = live
            out._backward = backward_fn
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = _unbroadcast(g, t.data.shape)
    # the first contribution is stored by reference; it is only written to
    # in place once this tensor owns a private copy
    if t.grad is None:
        t.grad = g
        t._owned = False
    elif t._owned:
        t.grad += g
    else:
        t.grad = t.grad + g
        t._owned = True


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(out_data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g * b.data)
        if b.requires_grad:
            _accumulate(b, g * a.data)

    return _make(a.data * b.data, (a, b), bw)


def scale(a, c):
    """Multiply by a python scalar."""
    a = as_tensor(a)
    c = float(c)

    def bw(g):
        _accumulate(a, g * c)

    return _make(a.data * c, (a,), bw)


def matmul(a, b):
    """``np.matmul`` semantics, including batch broadcasting.

    1-D operands are not supported; reshape to a row or column first.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            _accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    return _make(a.data @ b.data, (a, b), bw)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g):
        _accumulate(a, g * mask)

    return _make(a.data * mask, (a,), bw)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def bw(g):
        _accumulate(a, g * out)

    return _make(out, (a,), bw)


def log(a):
    a = as_tensor(a)

    def bw(g):
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), bw)


def softmax(a, axis=-1):
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accumulate(a, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), bw)


def log_softmax(a, axis=-1):
    """Max-shifted log-softmax; never produces -inf for finite input."""
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise ValueError("log_softmax over an empty axis")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        p = np.exp(out)
        _accumulate(a, g - p * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), bw)


def layer_norm(a, axis=-1, eps=1e-10):
    """Standardize along ``axis`` (zero mean, unit variance). No affine."""
    a = as_tensor(a)
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        _accumulate(a, inv * (g - gm - xhat * gx))

    return _make(xhat, (a,), bw)


def dropout(a, rate, rng, training=True):
    """Inverted dropout. Identity when not training or ``rate == 0``."""
    a = as_tensor(a)
    if not training or rate <= 0.0:
        return a
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    keep = 1.0 - rate
    mask = (rng.random(a.shape) < keep) / keep

    def bw(g):
        _accumulate(a, g * mask)

    return _make(a.data * mask, (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                _accumulate(t, np.take(g, i, axis=axis))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, bw)


def index_select(a, index, axis=0):
    """Gather along ``axis``. ``index`` may be any integer array; repeats are
    allowed and their gradients are summed."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    out = np.take(a.data, index, axis=axis)

    def bw(g):
        if not a.requires_grad:
            return
        gm = np.moveaxis(g, tuple(range(axis, axis + index.ndim)), tuple(range(index.ndim)))
        flat = index.ravel()
        rows = a.shape[axis]
        # scatter-add as a sparse product; much faster than np.add.at
        scatter = sparse.csr_matrix(
            (np.ones(flat.size), (flat, np.arange(flat.size))), shape=(rows, flat.size)
        )
        summed = scatter @ gm.reshape(flat.size, -1)
        moved_shape = (rows,) + tuple(np.delete(a.shape, axis))
        full = np.moveaxis(np.asarray(summed).reshape(moved_shape), 0, axis)
        _accumulate(a, full)

    return _make(out, (a,), bw)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, shape))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    orig = a.shape

    def bw(g):
        _accumulate(a, g.reshape(orig))

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)

    def bw(g):
        _accumulate(a, np.transpose(g, inv))

    return _make(np.transpose(a.data, axes), (a,), bw)


# --------------------------------------------------------------------------
# reverse pass
# --------------------------------------------------------------------------

def _topo_order(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss, grad=None):
    """Populate ``.grad`` on every tensor reachable from ``loss``.

    Intermediate gradients are released as soon as they have been propagated;
    only leaves (tensors without a recorded producer) keep them.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if grad is None:
        if loss.data.size != 1:
            raise ValueError("backward on a non-scalar tensor needs an explicit grad")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring grad")
    loss.grad = np.asarray(grad, dtype=DTYPE).reshape(loss.shape).copy()
    for node in reversed(_topo_order(loss)):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)
        node.grad = None
        node._parents = ()
        node._backward = None
