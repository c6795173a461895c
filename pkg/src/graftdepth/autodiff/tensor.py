"""Dense tensors with reverse-mode differentiation.

Every operation on a tensor that requires gradients records a node holding
its inputs and a closure mapping the output gradient to input gradients.
Nodes carry monotonically increasing ids, so sorting the nodes reachable
from a loss by id yields a valid topological order (the tape).
"""
from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_ids = itertools.count(1)
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _as_array(value, dtype=None) -> np.ndarray:
    if isinstance(value, Tensor):
        return value.data
    if dtype is None:
        dtype = DEFAULT_DTYPE
    return np.asarray(value, dtype=dtype)


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)), dtype=np.float64)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True, dtype=np.float64)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "tape_id", "op", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = DEFAULT_DTYPE
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape_id = next(_ids)
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward: Callable | None = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.tape_id = next(_ids)
        out.op = op
        needs = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @staticmethod
    def zeros(shape, requires_grad=False, dtype=None) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype or DEFAULT_DTYPE), requires_grad=requires_grad, dtype=dtype)

    # -- introspection --------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}, op={self.op})"

    def __len__(self) -> int:
        return self.shape[0]

    def detach(self) -> "Tensor":
        """Stop-gradient: same values, no history, never receives a gradient."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.tape_id = next(_ids)
        out.op = "detach"
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        return out

    # -- elementwise arithmetic ----------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other, dtype=self.dtype)
        a, b = self, other

        def backward(g):
            return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

        return Tensor._result(a.data + b.data, (a, b), backward, "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other, dtype=self.dtype)
        a, b = self, other

        def backward(g):
            return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

        return Tensor._result(a.data - b.data, (a, b), backward, "sub")

    def __rsub__(self, other):
        return Tensor(other, dtype=self.dtype) - self

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other, dtype=self.dtype)
        a, b = self, other

        def backward(g):
            ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
            gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
            return ga, gb

        return Tensor._result(a.data * b.data, (a, b), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other, dtype=self.dtype)
        a, b = self, other
        out = a.data / b.data

        def backward(g):
            ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
            gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
            return ga, gb

        return Tensor._result(out, (a, b), backward, "div")

    def __rtruediv__(self, other):
        return Tensor(other, dtype=self.dtype) / self

    def __neg__(self):
        return Tensor._result(-self.data, (self,), lambda g: (-g,), "neg")

    def __abs__(self):
        return self.abs()

    def abs(self) -> "Tensor":
        x = self.data
        sign = np.sign(x)

        return Tensor._result(np.abs(x), (self,), lambda g: (g * sign,), "abs")

    def log(self) -> "Tensor":
        x = self.data
        return Tensor._result(np.log(x), (self,), lambda g: (g / x,), "log")

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._result(out, (self,), lambda g: (g * out,), "exp")

    def sigmoid(self) -> "Tensor":
        x = self.data
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return Tensor._result(out, (self,), lambda g: (g * out * (1.0 - out),), "sigmoid")

    def elu(self, alpha: float = 1.0) -> "Tensor":
        x = self.data
        neg = x < 0
        em1 = np.expm1(np.minimum(x, 0))
        out = np.where(neg, alpha * em1, x).astype(x.dtype, copy=False)

        def backward(g):
            return (g * np.where(neg, alpha * (em1 + 1.0), 1.0).astype(x.dtype, copy=False),)

        return Tensor._result(out, (self,), backward, "elu")

    def square(self) -> "Tensor":
        return self * self

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        x = self.data
        out = np.asarray(x.sum(axis=axis, keepdims=keepdims, dtype=np.float64), dtype=x.dtype)
        shape = x.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).astype(x.dtype),)

        return Tensor._result(out, (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        x = self.data
        if axis is None:
            count = x.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            count = int(np.prod([x.shape[a] for a in axes]))
        out = np.asarray(x.mean(axis=axis, keepdims=keepdims, dtype=np.float64), dtype=x.dtype)
        shape = x.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g / count, shape).astype(x.dtype),)

        return Tensor._result(out, (self,), backward, "mean")

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.shape
        return Tensor._result(self.data.reshape(shape), (self,), lambda g: (g.reshape(orig),), "reshape")

    def flip(self, axis: int = -1) -> "Tensor":
        return Tensor._result(np.flip(self.data, axis=axis).copy(), (self,),
                              lambda g: (np.flip(g, axis=axis),), "flip")


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


class Tape:
    """Operations reachable from a root tensor, in topological (recording) order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [root]
        while stack:
            t = stack.pop()
            if t.tape_id in seen:
                continue
            seen.add(t.tape_id)
            nodes.append(t)
            stack.extend(p for p in t._parents if p.requires_grad)
        nodes.sort(key=lambda t: t.tape_id)
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        for t in self.nodes:
            if t._backward is not None:
                t._parents = ()
                t._backward = None
        self.nodes = []


class Gradients(dict):
    """Mapping tape_id -> gradient array; unreachable tensors read as zeros."""

    def of(self, t: Tensor) -> np.ndarray:
        g = self.get(t.tape_id)
        if g is None:
            return np.zeros_like(t.data)
        return g


def backward(loss: Tensor, accumulate: bool = True, free_graph: bool = True) -> Gradients:
    """Propagate d(loss)/d(x) to every tensor requiring grad reachable from ``loss``.

    Leaf tensors get their ``.grad`` set (summed into any existing gradient when
    ``accumulate``). Returns every computed gradient keyed by tape id.
    """
    if not all(n == 1 for n in loss.shape):
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = Gradients()
    if not loss.requires_grad:
        return grads
    tape = Tape.from_root(loss)
    grads[loss.tape_id] = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g = grads.get(node.tape_id)
        if g is None:
            continue
        if node._backward is None:
            if accumulate and node.grad is not None:
                node.grad = node.grad + g
            else:
                node.grad = np.array(g, dtype=node.data.dtype)
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.tape_id)
            grads[parent.tape_id] = pg if prev is None else prev + pg
    if free_graph:
        tape.clear()
    return grads


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
