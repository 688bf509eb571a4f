"""Dense float64 tensor with reverse-mode differentiation.

Graphs are single-use: :meth:`Tensor.backward` frees every intermediate node it
visits, and calling it a second time on the same loss raises
:class:`GraphFreedError`. Leaf tensors (parameters) keep their ``grad``.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import GraphFreedError, NotScalarError, ShapeError


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __array_priority__ = 100.0
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_freed")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = ""
        self._freed = False

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def make(data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        """Create an op output; ``backward(grad)`` must call ``accumulate`` on parents."""
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        return out

    def accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if grad.shape != self.data.shape:
            grad = _unbroadcast(grad, self.data.shape)
        self.grad = grad if self.grad is None else self.grad + grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- backward ------------------------------------------------------------

    def backward(self) -> None:
        if self._freed:
            raise GraphFreedError("graph already consumed by a previous backward()")
        if self.data.size != 1:
            raise NotScalarError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in topo:
            if node._parents:
                node._parents = ()
                node._backward = None
                node.grad = None
                node._freed = True
        self._freed = True

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            a.accumulate(g)
            b.accumulate(g)

        return Tensor.make(a.data + b.data, (a, b), backward, "add")

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor.make(-a.data, (a,), lambda g: a.accumulate(-g), "neg")

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            a.accumulate(g * b.data)
            b.accumulate(g * a.data)

        return Tensor.make(a.data * b.data, (a, b), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            a.accumulate(g / b.data)
            b.accumulate(-g * a.data / (b.data * b.data))

        return Tensor.make(a.data / b.data, (a, b), backward, "div")

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        a = self
        e = float(exponent)
        return Tensor.make(a.data ** e, (a,), lambda g: a.accumulate(g * e * a.data ** (e - 1)), "pow")

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not conform")

        def backward(g):
            a.accumulate(g @ np.swapaxes(b.data, -1, -2))
            b.accumulate(np.swapaxes(a.data, -1, -2) @ g)

        return Tensor.make(a.data @ b.data, (a, b), backward, "matmul")

    def __getitem__(self, index):
        a = self

        def backward(g):
            full = np.zeros_like(a.data)
            np.add.at(full, index, g)
            a.accumulate(full)

        return Tensor.make(a.data[index], (a,), backward, "getitem")

    # -- shape ---------------------------------------------------------------

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Tensor.make(a.data.reshape(shape), (a,), lambda g: a.accumulate(g.reshape(a.shape)), "reshape")

    def transpose(self, *axes):
        a = self
        axes = axes or tuple(reversed(range(a.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor.make(a.data.transpose(axes), (a,), lambda g: a.accumulate(g.transpose(inverse)), "transpose")

    @property
    def T(self):
        return self.transpose()

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.accumulate(np.broadcast_to(g, a.shape))

        return Tensor.make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def std(self, axis=None, keepdims: bool = False):
        return std(self, axis=axis, keepdims=keepdims)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


# -- elementwise functions ---------------------------------------------------


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor.make(out, (x,), lambda g: x.accumulate(g * out), "exp")


def log(x: Tensor) -> Tensor:
    return Tensor.make(np.log(x.data), (x,), lambda g: x.accumulate(g / x.data), "log")


def sqrt(x: Tensor) -> Tensor:
    """Square root whose derivative at 0 is taken as 0 instead of infinity."""
    out = np.sqrt(x.data)

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        x.accumulate(np.where(out > 0, g * 0.5 / safe, 0.0))

    return Tensor.make(out, (x,), backward, "sqrt")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor.make(out, (x,), lambda g: x.accumulate(g * (1 - out * out)), "tanh")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return Tensor.make(out, (x,), lambda g: x.accumulate(g * out * (1 - out)), "sigmoid")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return Tensor.make(np.where(pos, x.data, 0.0), (x,), lambda g: x.accumulate(g * pos), "relu")


def affine(x: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """``scale * x + shift`` with scalar constants."""
    s = float(scale)
    return Tensor.make(x.data * s + shift, (x,), lambda g: x.accumulate(g * s), "affine")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, bounds, axis=axis)):
            t.accumulate(part)

    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return Tensor.make(data, tensors, backward, "concat")


def std(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Population standard deviation; the gradient at zero spread is 0."""
    mu = x.data.mean(axis=axis, keepdims=True)
    centered = x.data - mu
    sigma_k = np.sqrt((centered * centered).mean(axis=axis, keepdims=True))
    count = x.data.size if axis is None else np.prod([x.shape[i] for i in np.atleast_1d(axis)])
    out = sigma_k if keepdims else np.squeeze(sigma_k, axis=axis) if axis is not None else sigma_k.reshape(())

    def backward(g):
        g = np.reshape(g, sigma_k.shape) if not keepdims else g
        safe = np.where(sigma_k > 0, sigma_k, 1.0)
        x.accumulate(np.where(sigma_k > 0, g * centered / (count * safe), 0.0))

    return Tensor.make(out, (x,), backward, "std")


def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along ``axis``; positions where ``mask`` is 0 get probability 0."""
    z = x.data
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        z = np.where(keep, z, -np.inf)
    top = z.max(axis=axis, keepdims=True)
    e = np.exp(z - np.where(np.isfinite(top), top, 0.0))
    total = e.sum(axis=axis, keepdims=True)
    out = e / np.where(total > 0, total, 1.0)  # fully masked slices stay all-zero

    def backward(g):
        x.accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return Tensor.make(out, (x,), backward, "softmax")
