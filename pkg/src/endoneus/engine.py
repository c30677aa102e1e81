"""Minimal tape-based reverse-mode differentiation over numpy arrays.

Every op records its parents and a vector-Jacobian closure ``vjp(g, needs)``
returning one gradient per parent (``None`` where ``needs`` is false). Only
first-order derivatives are supported; ops whose inputs are all constants
produce constants and record nothing. Python scalars stay Python scalars so
float32 graphs are not silently promoted.
"""

from __future__ import annotations

import numpy as np


class NumericalError(ArithmeticError):
    """A forward or backward quantity became non-finite."""


class Tensor:
    __slots__ = ("value", "grad", "parents", "vjp", "requires_grad", "name")

    __array_priority__ = 100  # ndarray <op> Tensor dispatches to Tensor

    def __init__(self, value, parents=(), vjp=None, requires_grad=False, name=None):
        self.value = value if isinstance(value, np.ndarray) else np.asarray(value)
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.name = name

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def __len__(self):
        return len(self.value)

    def item(self):
        return self.value.item()

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return getitem(self, idx)

    def __pow__(self, p):
        return square(self) if p == 2 else power(self, p)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)

    @property
    def T(self): return transpose(self)


def parameter(value, name=None) -> Tensor:
    """Leaf that accumulates a gradient in ``.grad``."""
    return Tensor(value, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _value(x):
    if isinstance(x, Tensor):
        return x.value
    if isinstance(x, (int, float)):
        return x
    return np.asarray(x)


def _shape(v):
    return np.shape(v)


def _make(value, parents, vjp, name=None) -> Tensor:
    if any(isinstance(p, Tensor) and p.requires_grad for p in parents):
        parents = tuple(as_tensor(p) for p in parents)
        return Tensor(value, parents, vjp, requires_grad=True, name=name)
    return Tensor(value, name=name)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def stop_gradient(x) -> Tensor:
    """Same value; no gradient flows back to the inputs."""
    return Tensor(np.asarray(_value(x)))


# -- elementwise -----------------------------------------------------------

def add(a, b):
    av, bv = _value(a), _value(b)

    def vjp(g, needs):
        return (_unbroadcast(g, _shape(av)) if needs[0] else None,
                _unbroadcast(g, _shape(bv)) if needs[1] else None)
    return _make(np.asarray(av + bv), (a, b), vjp)


def sub(a, b):
    av, bv = _value(a), _value(b)

    def vjp(g, needs):
        return (_unbroadcast(g, _shape(av)) if needs[0] else None,
                _unbroadcast(-g, _shape(bv)) if needs[1] else None)
    return _make(np.asarray(av - bv), (a, b), vjp)


def mul(a, b):
    av, bv = _value(a), _value(b)

    def vjp(g, needs):
        return (_unbroadcast(g * bv, _shape(av)) if needs[0] else None,
                _unbroadcast(g * av, _shape(bv)) if needs[1] else None)
    return _make(np.asarray(av * bv), (a, b), vjp)


def div(a, b):
    av, bv = _value(a), _value(b)
    out = np.asarray(av / bv)

    def vjp(g, needs):
        return (_unbroadcast(g / bv, _shape(av)) if needs[0] else None,
                _unbroadcast(-g * out / bv, _shape(bv)) if needs[1] else None)
    return _make(out, (a, b), vjp)


def square(a):
    av = _value(a)
    return _make(av * av, (a,), lambda g, needs: (2.0 * g * av,))


def power(a, p):
    av = _value(a)
    return _make(av ** p, (a,), lambda g, needs: (g * p * av ** (p - 1),))


def exp(a):
    out = np.exp(_value(a))
    return _make(out, (a,), lambda g, needs: (g * out,))


def log(a):
    av = _value(a)
    return _make(np.log(av), (a,), lambda g, needs: (g / av,))


def sqrt(a):
    out = np.sqrt(_value(a))

    def vjp(g, needs):
        pos = out > 0
        return (np.where(pos, 0.5 * g / np.where(pos, out, 1), 0).astype(out.dtype, copy=False),)
    return _make(out, (a,), vjp)


def absolute(a):
    av = _value(a)
    return _make(np.abs(av), (a,), lambda g, needs: (g * np.sign(av),))


def relu(a):
    av = _value(a)
    mask = av > 0
    return _make(av * mask, (a,), lambda g, needs: (g * mask,))


# exp() of large negative arguments takes a slow denormal path on x86;
# e^-30 is far below float32 resolution around 1.
_EXP_FLOOR = -30.0


def _sigmoid(z):
    z = np.asarray(z)
    e = np.exp(np.maximum(-np.abs(z), _EXP_FLOOR))
    r = 1.0 / (1.0 + e)
    return np.where(z >= 0, r, e * r).astype(np.result_type(z), copy=False)


def sigmoid(a):
    out = _sigmoid(_value(a))
    return _make(out, (a,), lambda g, needs: (g * out * (1.0 - out),))


def softplus(a, beta: float = 1.0, with_slope: bool = False):
    """log(1 + exp(beta x)) / beta, optionally with its slope sigmoid(beta x).

    The slope is returned as a differentiable tensor so that spatial gradients
    built from it can themselves be back-propagated.
    """
    av = _value(a)
    # sigmoid(z) = (1 + tanh(z/2)) / 2 and
    # softplus(z) = max(z, 0) - log(sigmoid(|z|)), so one tanh serves both
    z = av * (0.5 * beta)
    th = np.tanh(z)
    slope = th * 0.5
    slope += 0.5
    np.abs(th, out=th)
    th *= 0.5
    th += 0.5
    out = np.log(th)
    out *= -1.0 / beta
    out += np.maximum(av, 0)
    y = _make(out, (a,), lambda g, needs: (g * slope,))
    if not with_slope:
        return y
    s = _make(slope, (a,), lambda g, needs: (g * (beta * slope * (1.0 - slope)),))
    return y, s


def where(cond, a, b):
    av, bv = _value(a), _value(b)

    def vjp(g, needs):
        return (_unbroadcast(np.where(cond, g, 0), _shape(av)) if needs[0] else None,
                _unbroadcast(np.where(cond, 0, g), _shape(bv)) if needs[1] else None)
    return _make(np.where(cond, av, bv), (a, b), vjp)


# -- reductions and shape ----------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    av = _value(a)

    def vjp(g, needs):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, av.shape),)
    return _make(np.asarray(av.sum(axis=axis, keepdims=keepdims)), (a,), vjp)


def mean(a, axis=None, keepdims=False):
    av = _value(a)
    n = av.size if axis is None else int(np.prod([av.shape[ax] for ax in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def norm(a, axis=-1):
    """Euclidean norm along `axis`; the gradient at the origin is taken as zero."""
    av = _value(a)
    out = np.sqrt((av * av).sum(axis=axis))

    def vjp(g, needs):
        pos = out > 0
        scale = np.where(pos, g / np.where(pos, out, 1), 0).astype(av.dtype, copy=False)
        return (np.expand_dims(scale, axis) * av,)
    return _make(out, (a,), vjp)


def reshape(a, shape):
    av = _value(a)
    return _make(av.reshape(shape), (a,), lambda g, needs: (g.reshape(av.shape),))


def transpose(a, axes=None):
    av = _value(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(av, axes), (a,), lambda g, needs: (np.transpose(g, inv),))


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(a, idx):
    av = _value(a)
    basic = _is_basic_index(idx)

    def vjp(g, needs):
        full = np.zeros_like(av)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)
    return _make(av[idx], (a,), vjp)


def concat(items, axis=-1):
    vals = [np.asarray(_value(x)) for x in items]
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g, needs):
        return tuple(np.split(g, splits, axis=axis))
    return _make(np.concatenate(vals, axis=axis), tuple(items), vjp)


def matmul(a, w):
    """(..., k) @ (k, j) with a 2-D right operand."""
    av, wv = _value(a), _value(w)

    def vjp(g, needs):
        ga = g @ wv.T if needs[0] else None
        gw = None
        if needs[1]:
            gw = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gw
    return _make(av @ wv, (a, w), vjp)


# -- backward ----------------------------------------------------------------

def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, seed=None) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every parameter leaf."""
    if not np.all(np.isfinite(root.value)):
        raise NumericalError(f"non-finite value in {root.name or 'loss'}: {root.value}")
    if not root.requires_grad:
        return
    grads = {id(root): np.ones_like(root.value) if seed is None else np.asarray(seed)}
    for node in reversed(_toposort(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        needs = tuple(p.requires_grad for p in node.parents)
        for p, gp in zip(node.parents, node.vjp(g, needs)):
            if gp is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = gp if key not in grads else grads[key] + gp
