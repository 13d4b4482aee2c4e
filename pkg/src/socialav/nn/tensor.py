"""
Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array. Operations on tensors that require gradients
record their parents and a backward rule; ``Tape`` orders the recorded graph and
runs the rules in reverse, accumulating gradients additively.
"""
from __future__ import annotations

from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..error_handler import ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

DEFAULT_DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Optional[np.dtype] = None,
        _parents: Tuple["Tensor", ...] = (),
        _backward: Optional[BackwardFn] = None,
        op: str = "leaf",
    ):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if np.issubdtype(arr.dtype, np.floating) else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    # -- basics --------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self, grad: Optional[np.ndarray] = None) -> "Tape":
        tape = Tape.from_output(self)
        tape.backward(self, grad)
        return tape

    # -- operators -----------------------------------------------------------

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """Trainable leaf tensor with a name and a zero-initialised gradient buffer."""
    __slots__ = ("name",)

    def __init__(self, data: ArrayLike, name: str = "", dtype: Optional[np.dtype] = None):
        super().__init__(data, requires_grad=True, dtype=dtype or DEFAULT_DTYPE)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


class Tape:
    """Recorded operations in topological order (parents before children)."""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        order: List[Tensor] = []
        seen = set()
        stack: List[Tuple[Tensor, bool]] = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    @property
    def ops(self) -> List[str]:
        return [n.op for n in self.nodes]

    def backward(self, out: Tensor, grad: Optional[np.ndarray] = None) -> None:
        for node in self.nodes:
            if node._backward is not None:
                node.grad = None
        out.grad = np.ones_like(out.data) if grad is None else np.asarray(grad, dtype=out.dtype)
        for node in reversed(self.nodes):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                g = np.asarray(g, dtype=parent.dtype)
                parent.grad = g if parent.grad is None else parent.grad + g


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def as_tensor(x: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, dtype=data.dtype, _parents=parents, _backward=backward, op=op)
    return Tensor(data, dtype=data.dtype, op=op)


def _pair(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}", component="nn", operation=op)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "div")
    return _result(
        a.data / b.data,
        (a, b),
        lambda g: (unbroadcast(g / b.data, a.shape), unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
        "div",
    )


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def square(a: Tensor) -> Tensor:
    return _result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def minimum(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise min; on ties the gradient goes to ``a``."""
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "minimum")
    pick_a = a.data <= b.data
    return _result(
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (unbroadcast(np.where(pick_a, g, 0.0), a.shape), unbroadcast(np.where(pick_a, 0.0, g), b.shape)),
        "minimum",
    )


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (np.where(inside, g, 0.0),), "clip")


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    ex = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex)).astype(x.dtype)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    return _result(np.maximum(a.data, 0.0), (a,), lambda g: (np.where(a.data > 0, g, 0.0),), "relu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return _result(out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),), "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)
    return _result(out, (a,), lambda g: (g - probs * g.sum(axis=axis, keepdims=True),), "log_softmax")


# ---------------------------------------------------------------------------
# linear algebra and shape
# ---------------------------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}", component="nn", operation="matmul")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}", component="nn", operation="matmul")

    def backward(g: np.ndarray):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _result(out, (a, b), backward, "matmul")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[t.shape for t in tensors]}", component="nn", operation="concat"
        )
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _result(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(out, dtype=a.dtype), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _result(np.asarray(out, dtype=a.dtype), (a,), backward, "mean")


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}", component="nn", operation="reshape")
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def swapaxes(a: Tensor, axis1: int = -1, axis2: int = -2) -> Tensor:
    return _result(np.swapaxes(a.data, axis1, axis2), (a,), lambda g: (np.swapaxes(g, axis1, axis2),), "swapaxes")


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]
    basic = _is_basic_index(index)

    def backward(g: np.ndarray):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out, dtype=a.dtype), (a,), backward, "slice")


def mse(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Mean squared error over all entries; shapes must match exactly."""
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ", component="nn", operation="mse")
    diff = a.data - b.data
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=a.dtype)
    return _result(out, (a, b), lambda g: (2.0 * g * diff / n, -2.0 * g * diff / n), "mse")
