"""Minimal tape-based reverse-mode differentiation over numpy arrays.

Operations executed while a :class:`Tape` is active and that touch a tensor
with ``requires_grad`` are appended to the tape. ``Tape.backward`` walks the
recorded nodes in reverse insertion order (a valid reverse topological
order) and accumulates gradients into every leaf, so a parameter used at
several places receives the sum of its contributions.
"""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

_active: list["Tape"] = []


class DetachedTapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "name", "__weakref__")
    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, value, requires_grad: bool = False, name: Optional[str] = None):
        self.value = np.asarray(value, dtype=float)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Optional[Callable[[np.ndarray], tuple]] = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.value.shape}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self):
        return mul(tsum(self), 1.0 / self.value.size)


class Tape:
    """Records differentiable operations; use as a context manager."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.leaves: dict[int, Tensor] = {}

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def record(self, node: Tensor):
        self.nodes.append(node)
        for p in node.parents:
            if p.requires_grad and p.backward_fn is None:
                self.leaves.setdefault(id(p), p)

    def backward(self, loss: Tensor):
        if loss.value.size != 1:
            raise ValueError("backward needs a scalar loss")
        for leaf in self.leaves.values():
            leaf.grad = np.zeros_like(leaf.value)
        for node in self.nodes:
            node.grad = None
        if not loss.requires_grad:
            return
        if loss.backward_fn is None:
            loss.grad = np.ones_like(loss.value)
            return
        if not any(n is loss for n in self.nodes):
            raise DetachedTapeError("loss was not recorded on this tape")
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None:
                continue
            for parent, g in zip(node.parents, node.backward_fn(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(g, dtype=float)
                else:
                    parent.grad = parent.grad + g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward_fn) -> Tensor:
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
        if _active:
            _active[-1].record(out)
    return out


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    va, vb = a.value, b.value
    return _make(va * vb, (a, b),
                 lambda g: (unbroadcast(g * vb, va.shape), unbroadcast(g * va, vb.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    va, vb = a.value, b.value
    if va.ndim < 2 or vb.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def back(g):
        ga = unbroadcast(g @ np.swapaxes(vb, -1, -2), va.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(va, -1, -2) @ g, vb.shape) if b.requires_grad else None
        return ga, gb

    return _make(va @ vb, (a, b), back)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(a.value.sum(axis=axis, keepdims=keepdims), (a,), back)


# relu, sigmoid and reshape also accept plain arrays and then skip the tape,
# which keeps inference free of graph bookkeeping

def relu(a) -> Tensor:
    if not isinstance(a, Tensor):
        return np.maximum(a, 0.0)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    if not isinstance(a, Tensor):
        return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(a, dtype=float)))
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def square(a) -> Tensor:
    a = as_tensor(a)
    va = a.value
    return _make(va * va, (a,), lambda g: (2.0 * g * va,))


def reshape(a, shape) -> Tensor:
    if not isinstance(a, Tensor):
        return np.reshape(a, shape)
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))
