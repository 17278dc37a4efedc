"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tensor wraps a float64 ndarray and records the ops applied to it on a
dynamically built graph. Calling ``backward()`` on a scalar loss accumulates
gradients into every reachable Tensor created with ``requires_grad=True``.
Training runs in float64 so finite-difference checks stay sharp.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ShapeMismatchError, UsageError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ----------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise UsageError("backward() requires a scalar loss")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(np.asarray(other)))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, e):
        return power(self, e)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def abs(self):
        return tabs(self)


def astensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = False
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Reduce gradient g back to the given (broadcast-source) shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ops -------------------------------------------------------


def add(a, b):
    a, b = astensor(a), astensor(b)

    def bw(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return _result(a.data + b.data, (a, b), bw)


def mul(a, b):
    a, b = astensor(a), astensor(b)

    def bw(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _result(a.data * b.data, (a, b), bw)


def power(a, e):
    a = astensor(a)
    e = float(e)

    def bw(g):
        a._accumulate(g * e * np.power(a.data, e - 1.0))

    return _result(np.power(a.data, e), (a,), bw)


def texp(a):
    a = astensor(a)
    out = np.exp(a.data)

    def bw(g):
        a._accumulate(g * out)

    return _result(out, (a,), bw)


def tabs(a):
    """|a| with subgradient 0 at 0 (the L1 convention used by the fitters)."""
    a = astensor(a)

    def bw(g):
        a._accumulate(g * np.sign(a.data))

    return _result(np.abs(a.data), (a,), bw)


def leaky_relu(a, slope=0.01):
    a = astensor(a)
    mask = a.data > 0

    def bw(g):
        a._accumulate(g * np.where(mask, 1.0, slope))

    return _result(np.where(mask, a.data, slope * a.data), (a,), bw)


# -- reductions ------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = astensor(a)

    def bw(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = astensor(a)
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.data.shape[ax] for ax in axis]))
    else:
        n = a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- shape ops -------------------------------------------------------------


def reshape(a, shape):
    a = astensor(a)

    def bw(g):
        a._accumulate(g.reshape(a.data.shape))

    return _result(a.data.reshape(shape), (a,), bw)


def transpose(a, axes):
    a = astensor(a)
    inv = np.argsort(axes)

    def bw(g):
        a._accumulate(g.transpose(inv))

    return _result(a.data.transpose(axes), (a,), bw)


def concat(tensors, axis=0):
    tensors = [astensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(g[tuple(idx)])

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def getitem(a, key):
    a = astensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        a._accumulate(full)

    return _result(a.data[key], (a,), bw)


def take_flat(a, indices):
    """Gather from the flattened tensor; backward scatter-adds."""
    a = astensor(a)
    indices = np.asarray(indices)

    def bw(g):
        full = np.zeros(a.data.size, dtype=np.float64)
        np.add.at(full, indices.ravel(), g.ravel())
        a._accumulate(full.reshape(a.data.shape))

    return _result(a.data.reshape(-1)[indices], (a,), bw)


# -- linear algebra --------------------------------------------------------


def matmul(a, b):
    a, b = astensor(a), astensor(b)
    if a.data.ndim < 1 or b.data.ndim < 1:
        raise ShapeMismatchError("matmul requires at least 1-d operands")

    def bw(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            a._accumulate(g * bd)
            b._accumulate(g * ad)
        elif ad.ndim == 2 and bd.ndim == 1:
            a._accumulate(np.outer(g, bd))
            b._accumulate(ad.T @ g)
        elif ad.ndim == 1 and bd.ndim == 2:
            a._accumulate(bd @ g)
            b._accumulate(np.outer(ad, g))
        else:
            a._accumulate(_unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape))
            b._accumulate(_unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape))

    return _result(a.data @ b.data, (a, b), bw)


# -- convolution stack -----------------------------------------------------


def conv2d(x, w, stride=1, padding=0):
    """2-d cross-correlation; x is (N, C, H, W), w is (F, C, kh, kw)."""
    x, w = astensor(x), astensor(w)
    n, c, h, wd = x.data.shape
    f, cw, kh, kw = w.data.shape
    if cw != c:
        raise ShapeMismatchError(f"conv2d channels mismatch: {c} vs {cw}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N, C, OH, OW, kh, kw)
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3]))  # (N, OH, OW, F)
    out = np.moveaxis(out, 3, 1)

    def bw(g):
        # g: (N, F, OH, OW)
        gm = np.moveaxis(g, 1, 3)  # (N, OH, OW, F)
        dw = np.tensordot(gm, win, axes=([0, 1, 2], [0, 2, 3]))  # (F, C, kh, kw)
        w._accumulate(dw)
        dxp = np.zeros_like(xp)
        gw = np.tensordot(gm, w.data, axes=([3], [0]))  # (N, OH, OW, C, kh, kw)
        gw = np.moveaxis(gw, 3, 1)  # (N, C, OH, OW, kh, kw)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += gw[
                    :, :, :, :, i, j
                ]
        if padding:
            dxp = dxp[:, :, padding:-padding, padding:-padding]
        x._accumulate(dxp)

    return _result(np.ascontiguousarray(out), (x, w), bw)


def upsample_nearest2x(x):
    """Nearest-neighbor 2x upsampling of (N, C, H, W)."""
    x = astensor(x)
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bw(g):
        n, c, h2, w2 = g.shape
        x._accumulate(g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))

    return _result(out, (x,), bw)
