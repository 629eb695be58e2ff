"""Reverse-mode automatic differentiation over numpy arrays.

A deliberately small operator set: dense linear algebra, the activations and
normalizers the models need, reductions, and a gather for embedding lookups.
Everything is float64 and single-threaded, so two runs from the same seed give
bitwise-identical results.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _accumulate(current, update):
    return update if current is None else current + update


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A numpy array plus the closure that routes gradients to its parents."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None, requires_grad=True):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents if requires_grad else ()
        self._backward = backward if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Backpropagate from a scalar output; fills .grad on reachable leaves."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar; non-Tensor operands become constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x, requires_grad=False) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)


def constant(x) -> Tensor:
    return as_tensor(x, requires_grad=False)


def lift(params: dict[str, np.ndarray], requires_grad=True) -> dict[str, Tensor]:
    """Wrap a parameter dict in leaf Tensors, one graph per training step."""
    return {k: Tensor(v, requires_grad=requires_grad) for k, v in params.items()}


def grads_of(leaves: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Collect leaf gradients after backward(); missing grads are zeros."""
    return {
        k: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for k, t in leaves.items()
    }


def _result(data, parents, backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, parents, backward, requires_grad=True)
    return Tensor(data, requires_grad=False)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.grad = _accumulate(a.grad, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.grad = _accumulate(b.grad, _unbroadcast(g, b.data.shape))

    return _result(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.grad = _accumulate(a.grad, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.grad = _accumulate(b.grad, _unbroadcast(g * a.data, b.data.shape))

    return _result(out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a.grad = _accumulate(a.grad, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.grad = _accumulate(
                b.grad, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
            )

    return _result(out, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    out = a.data**p

    def backward(g):
        if a.requires_grad:
            a.grad = _accumulate(a.grad, g * p * a.data ** (p - 1.0))

    return _result(out, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}"
        )
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a.grad = _accumulate(a.grad, g @ b.data.T)
        if b.requires_grad:
            b.grad = _accumulate(b.grad, a.data.T @ g)

    return _result(out, (a, b), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a.grad = _accumulate(a.grad, g * out)

    return _result(out, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a.grad = _accumulate(a.grad, g / a.data)

    return _result(out, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            a.grad = _accumulate(a.grad, g * (a.data > 0.0))

    return _result(out, (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a.grad = _accumulate(a.grad, g * (1.0 - out * out))

    return _result(out, (a,), backward)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)

    def backward(g):
        if a.requires_grad:
            a.grad = _accumulate(a.grad, g * _sigmoid(a.data))

    return _result(out, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = (g * out).sum(axis=axis, keepdims=True)
            a.grad = _accumulate(a.grad, out * (g - inner))

    return _result(out, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True)) + m
    out = a.data - lse

    def backward(g):
        if a.requires_grad:
            a.grad = _accumulate(
                a.grad, g - np.exp(out) * g.sum(axis=axis, keepdims=True)
            )

    return _result(out, (a,), backward)


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.grad = _accumulate(a.grad, np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a.grad = _accumulate(a.grad, np.broadcast_to(gg, a.data.shape).copy())

    return _result(out, (a,), backward)


def tensor_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a.grad = _accumulate(a.grad, g.reshape(a.data.shape))

    return _result(out, (a,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.grad = _accumulate(t.grad, g[tuple(idx)])

    return _result(out, tuple(ts), backward)


def take_rows(a, ids: Iterable[int]) -> Tensor:
    """Gather rows of a 2-D tensor; backward scatter-adds (embedding lookup)."""
    a = as_tensor(a)
    idx = np.asarray(list(ids), dtype=np.int64)
    if a.data.ndim != 2:
        raise ValueError("take_rows expects a 2-D tensor")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise IndexError(f"row id out of range [0, {a.data.shape[0]})")
    out = a.data[idx]

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            a.grad = _accumulate(a.grad, buf)

    return _result(out, (a,), backward)
