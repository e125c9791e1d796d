"""Reverse-mode automatic differentiation over numpy arrays.

Every operation on :class:`Tensor` records its parents and a closure that maps
the output gradient to parent gradients.  :meth:`Tensor.backward` orders the
recorded graph topologically and runs the closures once each, in reverse.

Graphs are rebuilt on every forward pass.  Inside :func:`no_grad` nothing is
recorded, which is how planning rollouts run.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from ..errors import ShapeMismatch


class _GradMode(threading.local):
    # per thread, so planner workers entering no_grad cannot clobber the trainer's mode
    enabled = True


_MODE = _GradMode()


@contextlib.contextmanager
def no_grad():
    prev = _MODE.enabled
    _MODE.enabled = False
    try:
        yield
    finally:
        _MODE.enabled = prev


def grad_enabled():
    return _MODE.enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, name=None):
        data = np.asarray(data)
        if data.dtype.kind != "f":
            data = data.astype(np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def all_finite(a):
    """True when every entry is finite; one reduction instead of a mask (NaN/Inf propagate through sums)."""
    a = np.asarray(a)
    return bool(np.isfinite(a.sum())) or bool(np.isfinite(a).all())


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _node(data, parents, backward):
    if _MODE.enabled and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = parents
        out._backward = backward
        return out
    return Tensor(data)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b):
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=_dtype_of(b)))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.data.dtype))
    return a, b


def _dtype_of(x):
    return x.data.dtype if isinstance(x, Tensor) else np.float64


# ---------------------------------------------------------------- arithmetic

def add(a, b):
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = _pair(a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), bw)


def neg(a):
    return _node(-a.data, (a,), lambda g: (-g,))


def power(a, p):
    p = float(p)

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return _node(a.data**p, (a,), bw)


def square(a):
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), bw)


def dense(x, W, b=None):
    """Fused affine map ``x @ W + b`` for 2-D ``x``."""
    x = as_tensor(x, W.data.dtype)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeMismatch(f"dense {x.shape} @ {W.shape}")
    if b is not None and b.shape != (W.shape[1],):
        raise ShapeMismatch(f"dense bias {b.shape} for output width {W.shape[1]}")
    y = x.data @ W.data
    if b is not None:
        y += b.data

    def bw(g):
        gx = g @ W.data.T if x.requires_grad else None
        gW = x.data.T @ g if W.requires_grad else None
        if b is None:
            return gx, gW
        return gx, gW, (g.sum(axis=0) if b.requires_grad else None)

    parents = (x, W) if b is None else (x, W, b)
    return _node(y, parents, bw)


# ------------------------------------------------------------- elementwise

def exp(a):
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a):
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid_np(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    out = _sigmoid_np(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a):
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def elu(a):
    x = a.data
    e = np.exp(np.minimum(x, 0.0))
    # e - 1 is exactly 0 where x > 0, so the sum is exact on both sides
    out = np.maximum(x, 0.0)
    out += e - 1.0
    # slope is exp(min(x, 0)), which is exactly 1 on the positive side
    return _node(out, (a,), lambda g: (g * e,))


def _sigmoid_from_abs(x, e):
    """sigmoid(x) given ``e = exp(-|x|)``: ``r = 1/(1+e)`` for x >= 0, ``1 - r`` otherwise."""
    r = 1.0 / (1.0 + e)
    return 0.5 + np.copysign(r - 0.5, x)


def softplus(a):
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.log1p(e)
    out += np.maximum(x, 0.0)

    def bw(g):
        return (g * _sigmoid_from_abs(x, e),)

    return _node(out, (a,), bw)


def bce_logits(logits, targets):
    """Elementwise ``softplus(l) - t*l`` with the fused gradient ``sigmoid(l) - t``."""
    x = logits.data
    t = np.asarray(targets, dtype=x.dtype)
    e = np.exp(-np.abs(x))
    out = np.log1p(e)
    out += np.maximum(x, 0.0)
    out -= x * t

    def bw(g):
        sig = _sigmoid_from_abs(x, e)
        sig -= t
        return (g * sig,)

    return _node(out, (logits,), bw)


def clip(a, lo, hi):
    """Hard clamp; gradient flows only where the input was inside ``[lo, hi]``."""
    mask = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def maximum(a, floor):
    """``max(a, floor)`` against a constant floor."""
    mask = a.data > floor
    return _node(np.where(mask, a.data, floor).astype(a.data.dtype, copy=False), (a,),
                 lambda g: (g * mask,))


# --------------------------------------------------------------- reductions

def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), bw)


def tmean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / float(n))


# ------------------------------------------------------------------- shapes

def reshape(a, shape):
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, idx):
    def bw(g):
        full = np.zeros_like(a.data)
        if _fancy(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return _node(a.data[idx], (a,), bw)


def _fancy(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g):
        res = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if not t.requires_grad:
                res.append(None)
                continue
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(lo, hi)
            res.append(g[tuple(sl)])
        return tuple(res)

    return _node(out, tuple(tensors), bw)


# --------------------------------------------------------------- recurrent

def gru_cell(h, x, Wx, Wh, bx, bh):
    """One GRU step with gates ordered (reset, update, candidate).

    ``Wx`` is (in, 3H), ``Wh`` is (H, 3H).  The output is a convex blend of
    ``tanh`` candidates and the previous state, so it stays in (-1, 1)
    whenever ``h`` does.
    """
    h = as_tensor(h, Wh.data.dtype)
    x = as_tensor(x, Wx.data.dtype)
    H = Wh.shape[0]
    if h.ndim != 2 or h.shape[1] != H or Wh.shape != (H, 3 * H):
        raise ShapeMismatch(f"gru_cell state {h.shape} vs recurrent weights {Wh.shape}")
    if x.ndim != 2 or x.shape[1] != Wx.shape[0] or Wx.shape[1] != 3 * H:
        raise ShapeMismatch(f"gru_cell input {x.shape} vs input weights {Wx.shape}")
    if x.shape[0] != h.shape[0]:
        raise ShapeMismatch(f"gru_cell batch {x.shape[0]} vs {h.shape[0]}")

    hd = h.data
    gx = x.data @ Wx.data + bx.data
    gh = hd @ Wh.data + bh.data
    r = _sigmoid_np(gx[:, :H] + gh[:, :H])
    u = _sigmoid_np(gx[:, H:2 * H] + gh[:, H:2 * H])
    ghn = gh[:, 2 * H:]
    n = np.tanh(gx[:, 2 * H:] + r * ghn)
    out = (1.0 - u) * n + u * hd

    def bw(g):
        dn = g * (1.0 - u)
        du = g * (hd - n)
        dpre_n = dn * (1.0 - n * n)
        dr = dpre_n * ghn
        dpre_r = dr * r * (1.0 - r)
        dpre_u = du * u * (1.0 - u)
        dgx = np.concatenate([dpre_r, dpre_u, dpre_n], axis=1)
        dgh = np.concatenate([dpre_r, dpre_u, dpre_n * r], axis=1)
        dh = dgh @ Wh.data.T + g * u if h.requires_grad else None
        dx = dgx @ Wx.data.T if x.requires_grad else None
        dWx = x.data.T @ dgx if Wx.requires_grad else None
        dWh = hd.T @ dgh if Wh.requires_grad else None
        dbx = dgx.sum(axis=0) if bx.requires_grad else None
        dbh = dgh.sum(axis=0) if bh.requires_grad else None
        return dh, dx, dWx, dWh, dbx, dbh

    return _node(out, (h, x, Wx, Wh, bx, bh), bw)
