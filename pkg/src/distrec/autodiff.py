"""Reverse-mode gradient accumulation over a fixed numpy operator set.

Every differentiable quantity in this package (affine layers, tanh, the
multinomial log-likelihood, the divergence closed forms) is composed from
the primitives below, so one backward pass covers all losses. The module
also exposes functional helpers (tanh, exp, ...) that accept either a
Tensor or a plain ndarray, letting forward code serve both the training
graph and graph-free evaluation.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError


def _unbroadcast(grad, shape):
    # collapse gradient back onto the operand shape numpy broadcast from
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """numpy array plus the plumbing for reverse-mode accumulation."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")
    __array_ufunc__ = None  # keep numpy from consuming Tensor operands

    def __init__(self, data, requires_grad=False, op="leaf", parents=(), backward=None):
        self.data = np.asarray(data)
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite values in '{op}' output")
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _result(data, op, parents, backward):
        tracked = tuple(p for p in parents if p.requires_grad)
        if not tracked:
            return Tensor(data, op=op)
        return Tensor(data, requires_grad=True, op=op, parents=tracked, backward=backward)

    def backward(self, seed=None):
        """Accumulate gradients of self (any shape; seeded with ones) into leaves."""
        topo, seen = [], set()

        def build(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                build(p)
            topo.append(t)

        build(self)
        self.grad = np.ones_like(self.data) if seed is None else np.asarray(seed)
        for t in reversed(topo):
            if t._backward is not None:
                t._backward(t.grad)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            def back(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g, self.data.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g, other.data.shape))
            return Tensor._result(self.data + other.data, "add", (self, other), back)
        shape = self.data.shape

        def back(g):
            self._accumulate(_unbroadcast(g, shape))
        return Tensor._result(self.data + other, "add", (self,), back)

    __radd__ = __add__

    def __neg__(self):
        def back(g):
            self._accumulate(-g)
        return Tensor._result(-self.data, "neg", (self,), back)

    def __sub__(self, other):
        # python-scalar negation keeps weak promotion so float32 survives
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Tensor):
            def back(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g * other.data, self.data.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g * self.data, other.data.shape))
            return Tensor._result(self.data * other.data, "mul", (self, other), back)

        def back(g):
            self._accumulate(_unbroadcast(g * other, self.data.shape))
        return Tensor._result(self.data * other, "mul", (self,), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("divide by a Tensor is outside the operator set")
        return self * (1.0 / other)

    def __pow__(self, p):
        if isinstance(p, Tensor):
            raise TypeError("Tensor exponents are outside the operator set")
        x = self.data

        def back(g):
            self._accumulate(g * p * x ** (p - 1))
        return Tensor._result(x ** p, "pow", (self,), back)

    def __matmul__(self, other):
        a = self
        b = other if isinstance(other, Tensor) else Tensor(other)

        def back(g):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)
        return Tensor._result(a.data @ b.data, "matmul", (a, b), back)

    def __rmatmul__(self, other):
        return Tensor(other) @ self

    # -- pointwise -----------------------------------------------------------

    def tanh(self):
        y = np.tanh(self.data)

        def back(g):
            self._accumulate(g * (1.0 - y * y))
        return Tensor._result(y, "tanh", (self,), back)

    def exp(self):
        y = np.exp(self.data)

        def back(g):
            self._accumulate(g * y)
        return Tensor._result(y, "exp", (self,), back)

    def log(self):
        x = self.data

        def back(g):
            self._accumulate(g / x)
        return Tensor._result(np.log(x), "log", (self,), back)

    def clamp(self, lo, hi):
        x = self.data

        def back(g):
            self._accumulate(g * ((x >= lo) & (x <= hi)))
        return Tensor._result(np.clip(x, lo, hi), "clamp", (self,), back)

    def log_softmax(self, axis=-1):
        y = _log_softmax_nd(self.data, axis)

        def back(g):
            self._accumulate(g - np.exp(y) * g.sum(axis=axis, keepdims=True))
        return Tensor._result(y, "log_softmax", (self,), back)

    # -- reductions and shape ------------------------------------------------

    def sum(self, axis=None):
        shape = self.data.shape

        def back(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, shape))
            else:
                self._accumulate(np.broadcast_to(np.expand_dims(g, axis), shape))
        return Tensor._result(self.data.sum(axis=axis), "sum", (self,), back)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def reshape(self, *shape):
        old = self.data.shape

        def back(g):
            self._accumulate(g.reshape(old))
        return Tensor._result(self.data.reshape(*shape), "reshape", (self,), back)

    def __getitem__(self, idx):
        # basic slicing only: index regions must not overlap
        shape = self.data.shape

        def back(g):
            full = np.zeros(shape, dtype=g.dtype)
            full[idx] += g
            self._accumulate(full)
        return Tensor._result(self.data[idx], "slice", (self,), back)


def _log_softmax_nd(x, axis):
    m = x.max(axis=axis, keepdims=True)
    shifted = x - m
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


# -- dual-mode helpers: accept a Tensor or a plain ndarray --------------------

def data_of(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def tanh(x):
    return x.tanh() if isinstance(x, Tensor) else np.tanh(x)


def exp(x):
    return x.exp() if isinstance(x, Tensor) else np.exp(x)


def log(x):
    return x.log() if isinstance(x, Tensor) else np.log(x)


def clamp(x, lo, hi):
    return x.clamp(lo, hi) if isinstance(x, Tensor) else np.clip(x, lo, hi)


def log_softmax(x, axis=-1):
    return x.log_softmax(axis) if isinstance(x, Tensor) else _log_softmax_nd(np.asarray(x), axis)


def sum_last(x):
    return x.sum(axis=-1) if isinstance(x, Tensor) else np.asarray(x).sum(axis=-1)


def mean_last(x):
    return x.mean(axis=-1) if isinstance(x, Tensor) else np.asarray(x).mean(axis=-1)
