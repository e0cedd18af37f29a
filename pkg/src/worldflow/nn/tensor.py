"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` wraps an ndarray plus an optional gradient tape node. Forward
ops record a closure that scatters the output gradient back to the parents;
``backward()`` runs the tape in reverse topological order. Training runs in
float32; gradient checks build the same graphs in float64.

Only what the models here need is implemented: broadcasting arithmetic,
batched matmul, reshapes/slicing/concatenation, reductions, and the handful
of pointwise nonlinearities used by the attention stacks.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

from ..errors import InvalidArgumentError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # -- tape ----------------------------------------------------------

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.astype(self.data.dtype, copy=True)
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor (defaults to d(self)/d(self) = 1)."""
        if not self.requires_grad:
            raise InvalidArgumentError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise InvalidArgumentError("backward() without gradient requires a scalar")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        out = _node(self.data + other.data, (self, other))
        if out.requires_grad:
            def bw(g, a=self, b=other):
                if a.requires_grad:
                    a._accumulate(_unbroadcast(g, a.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(g, b.shape))
            out._backward = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _node(-self.data, (self,))
        if out.requires_grad:
            def bw(g, a=self):
                a._accumulate(-g)
            out._backward = bw
        return out

    def __sub__(self, other):
        other = self._coerce(other)
        out = _node(self.data - other.data, (self, other))
        if out.requires_grad:
            def bw(g, a=self, b=other):
                if a.requires_grad:
                    a._accumulate(_unbroadcast(g, a.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(-g, b.shape))
            out._backward = bw
        return out

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        out = _node(self.data * other.data, (self, other))
        if out.requires_grad:
            def bw(g, a=self, b=other):
                if a.requires_grad:
                    a._accumulate(_unbroadcast(g * b.data, a.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(g * a.data, b.shape))
            out._backward = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        out = _node(self.data / other.data, (self, other))
        if out.requires_grad:
            def bw(g, a=self, b=other):
                if a.requires_grad:
                    a._accumulate(_unbroadcast(g / b.data, a.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))
            out._backward = bw
        return out

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise InvalidArgumentError("tensor exponents are not supported")
        e = float(exponent)
        out = _node(self.data ** e, (self,))
        if out.requires_grad:
            def bw(g, a=self):
                a._accumulate(g * e * a.data ** (e - 1.0))
            out._backward = bw
        return out

    def __matmul__(self, other):
        other = self._coerce(other)
        out = _node(np.matmul(self.data, other.data), (self, other))
        if out.requires_grad:
            def bw(g, a=self, b=other):
                if a.requires_grad:
                    ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                    a._accumulate(_unbroadcast(ga, a.shape))
                if b.requires_grad:
                    gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                    b._accumulate(_unbroadcast(gb, b.shape))
            out._backward = bw
        return out

    # -- shape ops -------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _node(self.data.reshape(shape), (self,))
        if out.requires_grad:
            def bw(g, a=self):
                a._accumulate(g.reshape(a.shape))
            out._backward = bw
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        out = _node(self.data.transpose(axes), (self,))
        if out.requires_grad:
            inv = np.argsort(axes)
            def bw(g, a=self, inv=tuple(inv)):
                a._accumulate(g.transpose(inv))
            out._backward = bw
        return out

    def swapaxes(self, a: int, b: int):
        out = _node(np.swapaxes(self.data, a, b), (self,))
        if out.requires_grad:
            def bw(g, t=self, a=a, b=b):
                t._accumulate(np.swapaxes(g, a, b))
            out._backward = bw
        return out

    def __getitem__(self, idx):
        out = _node(self.data[idx], (self,))
        if out.requires_grad:
            def bw(g, a=self, idx=idx):
                full = np.zeros_like(a.data)
                np.add.at(full, idx, g)
                a._accumulate(full)
            out._backward = bw
        return out

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            def bw(g, a=self, axis=axis, keepdims=keepdims):
                if axis is None:
                    a._accumulate(np.broadcast_to(g, a.shape).copy())
                    return
                if not keepdims:
                    ax = axis if isinstance(axis, tuple) else (axis,)
                    ax = tuple(x % a.data.ndim for x in ax)
                    g = np.expand_dims(g, ax)
                a._accumulate(np.broadcast_to(g, a.shape).copy())
            out._backward = bw
        return out

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            ax = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.data.shape[x] for x in ax]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- pointwise ---------------------------------------------------------

    def exp(self):
        out = _node(np.exp(self.data), (self,))
        if out.requires_grad:
            def bw(g, a=self, y=out.data):
                a._accumulate(g * y)
            out._backward = bw
        return out

    def log(self):
        out = _node(np.log(self.data), (self,))
        if out.requires_grad:
            def bw(g, a=self):
                a._accumulate(g / a.data)
            out._backward = bw
        return out

    def sqrt(self):
        out = _node(np.sqrt(self.data), (self,))
        if out.requires_grad:
            def bw(g, a=self, y=out.data):
                a._accumulate(g * 0.5 / y)
            out._backward = bw
        return out

    def tanh(self):
        out = _node(np.tanh(self.data), (self,))
        if out.requires_grad:
            def bw(g, a=self, y=out.data):
                a._accumulate(g * (1.0 - y * y))
            out._backward = bw
        return out

    def sigmoid(self):
        y = _sigmoid_stable(self.data)
        out = _node(y, (self,))
        if out.requires_grad:
            def bw(g, a=self, y=y):
                a._accumulate(g * y * (1.0 - y))
            out._backward = bw
        return out

    def softplus(self):
        y = np.logaddexp(np.zeros((), dtype=self.data.dtype), self.data)
        out = _node(y, (self,))
        if out.requires_grad:
            def bw(g, a=self):
                a._accumulate(g * _sigmoid_stable(a.data))
            out._backward = bw
        return out

    def gelu(self):
        # tanh approximation; gradient follows the same formula.
        x = self.data
        c = np.asarray(np.sqrt(2.0 / np.pi), dtype=x.dtype)
        k = np.asarray(0.044715, dtype=x.dtype)
        inner = c * (x + k * x ** 3)
        th = np.tanh(inner)
        out = _node(0.5 * x * (1.0 + th), (self,))
        if out.requires_grad:
            def bw(g, a=self, th=th, inner_d=c * (1.0 + 3.0 * k * x ** 2), x=x):
                local = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * inner_d
                a._accumulate(g * local)
            out._backward = bw
        return out

    def silu(self):
        s = _sigmoid_stable(self.data)
        out = _node(self.data * s, (self,))
        if out.requires_grad:
            def bw(g, a=self, s=s):
                a._accumulate(g * (s + a.data * s * (1.0 - s)))
            out._backward = bw
        return out

    def clip(self, lo: float, hi: float):
        """Clamp values; gradient passes through the interior only."""
        out = _node(np.clip(self.data, lo, hi), (self,))
        if out.requires_grad:
            mask = ((self.data >= lo) & (self.data <= hi)).astype(self.data.dtype)
            def bw(g, a=self, mask=mask):
                a._accumulate(g * mask)
            out._backward = bw
        return out


def _node(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    requires = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = requires
    out._backward = None
    out._parents = tuple(p for p in parents if p.requires_grad) if requires else ()
    return out


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- free functions -----------------------------------------------------


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def concatenate(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        def bw(g, ts=tensors, splits=splits, axis=axis):
            parts = np.split(g, splits, axis=axis)
            for t, p in zip(ts, parts):
                if t.requires_grad:
                    t._accumulate(p)
        out._backward = bw
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors))
    if out.requires_grad:
        def bw(g, ts=tensors, axis=axis):
            parts = np.split(g, len(ts), axis=axis)
            for t, p in zip(ts, parts):
                if t.requires_grad:
                    t._accumulate(np.squeeze(p, axis=axis))
        out._backward = bw
    return out


def take(t: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather rows along an axis; backward scatter-adds."""
    indices = np.asarray(indices, dtype=np.int64)
    out = _node(np.take(t.data, indices, axis=axis), (t,))
    if out.requires_grad:
        def bw(g, a=t, indices=indices, axis=axis):
            full = np.zeros_like(a.data)
            sl = [slice(None)] * a.data.ndim
            # np.add.at needs the index in the right axis slot
            idx = tuple(sl[:axis]) + (indices,)
            np.add.at(full, idx, g)
            a._accumulate(full)
        out._backward = bw
    return out


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Shift-stabilized softmax (the shift is a constant, so grads are exact)."""
    shift = np.max(t.data, axis=axis, keepdims=True)
    e = (t - Tensor(shift)).exp()
    return e / e.sum(axis=axis, keepdims=True)


def bce_with_logits(logits: Tensor, targets: np.ndarray | Tensor) -> Tensor:
    """Elementwise binary cross-entropy on logits: softplus(x) - x*y."""
    y = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=logits.dtype)
    return logits.softplus() - logits * Tensor(y)
