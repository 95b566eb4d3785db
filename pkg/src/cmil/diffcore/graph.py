"""Tape-based reverse-mode differentiation over numpy arrays.

A :class:`Graph` is an append-only tape.  Every operation on a :class:`Tensor`
appends one node holding the forward value, the parent nodes and a
vector-Jacobian product closure.  ``Graph.backward`` walks the tape once in
reverse insertion order.

Gradient contract: node-level accumulators are fresh for every ``backward``
call, but gradients flowing into a :class:`Param` are *added* to ``param.grad``.
Calling ``backward`` twice without ``zero_grad`` therefore accumulates.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Param",
    "Tensor",
    "Graph",
    "zero_grad",
    "as_tensor",
    "concat",
    "stack",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "softplus",
    "elu",
    "relu",
    "sqrt",
    "square",
    "minimum",
    "clip_min",
    "where",
    "linear",
]


class Param:
    """A named trainable array with a gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.value.shape})"


def zero_grad(params: Iterable[Param]) -> None:
    for p in params:
        p.grad.fill(0.0)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("value", "graph", "index", "parents", "vjp", "param", "requires_grad")

    # make numpy defer to our reflected operators
    __array_priority__ = 1000

    def __init__(self, value, graph: "Graph", parents=(), vjp=None, param=None, requires_grad=False):
        self.value = value
        self.graph = graph
        self.parents = parents
        self.vjp = vjp
        self.param = param
        self.requires_grad = requires_grad
        self.index = -1

    # -- convenience -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, node={self.index})"

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        return self.graph.constant(self.value)

    # -- arithmetic --------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other, self.graph)
        a, b = self.value, other.value
        sa, sb = a.shape, b.shape
        return self.graph.op(
            a + b, (self, other), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other, self.graph)
        a, b = self.value, other.value
        sa, sb = a.shape, b.shape
        return self.graph.op(
            a - b, (self, other), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb))
        )

    def __rsub__(self, other):
        return as_tensor(other, self.graph) - self

    def __mul__(self, other):
        other = as_tensor(other, self.graph)
        a, b = self.value, other.value
        return self.graph.op(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other, self.graph)
        a, b = self.value, other.value
        out = a / b
        return self.graph.op(
            out,
            (self, other),
            lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape)),
        )

    def __rtruediv__(self, other):
        return as_tensor(other, self.graph) / self

    def __neg__(self):
        return self.graph.op(-self.value, (self,), lambda g: (-g,))

    def __pow__(self, k: float):
        if isinstance(k, Tensor):
            raise TypeError("only constant exponents are supported")
        a = self.value
        return self.graph.op(a**k, (self,), lambda g: (g * k * a ** (k - 1),))

    def __matmul__(self, other):
        other = as_tensor(other, self.graph)
        a, b = self.value, other.value
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

        def vjp(g):
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return self.graph.op(a @ b, (self, other), vjp)

    def __getitem__(self, idx):
        a = self.value

        basic = not any(isinstance(i, (np.ndarray, list)) for i in
                        (idx if isinstance(idx, tuple) else (idx,)))

        def vjp(g):
            out = np.zeros_like(a)
            if basic:
                out[idx] = g
            else:
                np.add.at(out, idx, g)
            return (out,)

        return self.graph.op(a[idx], (self,), vjp)

    # -- reductions / shape ------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self.value

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return self.graph.op(np.sum(a, axis=axis, keepdims=keepdims), (self,), vjp)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.value.size if axis is None else np.prod(
            [self.value.shape[i] for i in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self.value
        return self.graph.op(a.reshape(*shape), (self,), lambda g: (g.reshape(a.shape),))

    def swapaxes(self, i: int, j: int):
        return self.graph.op(
            np.swapaxes(self.value, i, j), (self,), lambda g: (np.swapaxes(g, i, j),)
        )


class Graph:
    """Append-only operation tape.

    ``Graph(record=False)`` evaluates values without storing nodes, which is
    what acting in the environment uses.
    """

    def __init__(self, record: bool = True, trainable=None):
        """``trainable`` (an iterable of :class:`Param`) limits which parameters
        receive gradients; the others enter the graph as constants."""
        self.record = record
        self.nodes: list[Tensor] = []
        self._leaves: dict[int, Tensor] = {}
        self._trainable = None if trainable is None else {id(p) for p in trainable}

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, t: Tensor) -> Tensor:
        if self.record:
            t.index = len(self.nodes)
            self.nodes.append(t)
        return t

    def constant(self, value) -> Tensor:
        return Tensor(np.asarray(value, dtype=np.float64), self)

    def param(self, p: Param) -> Tensor:
        t = self._leaves.get(id(p))
        if t is None:
            if self._trainable is not None and id(p) not in self._trainable:
                t = Tensor(p.value, self)
            else:
                t = self._append(Tensor(p.value, self, param=p, requires_grad=self.record))
            self._leaves[id(p)] = t
        return t

    def op(self, value, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
        if not self.record:
            return Tensor(value, self)
        requires = any(p.requires_grad for p in parents)
        if not requires:
            return Tensor(value, self)
        return self._append(Tensor(value, self, tuple(parents), vjp, requires_grad=True))

    def backward(self, loss: Tensor) -> None:
        if loss.graph is not self:
            raise ValueError("loss belongs to a different graph")
        if loss.value.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        if not loss.requires_grad:
            return
        grads: list = [None] * len(self.nodes)
        grads[loss.index] = np.ones_like(loss.value)
        for i in range(loss.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self.nodes[i]
            if node.param is not None:
                node.param.grad += g
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if parent.requires_grad and pg is not None:
                    j = parent.index
                    if grads[j] is None:
                        grads[j] = pg
                    else:
                        grads[j] = grads[j] + pg


def as_tensor(x, graph: Graph) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return graph.constant(x)


def _unary(x: Tensor, value: np.ndarray, dfn: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    return x.graph.op(value, (x,), lambda g: (g * dfn(value),))


def exp(x: Tensor) -> Tensor:
    return _unary(x, np.exp(x.value), lambda out: out)


def log(x: Tensor) -> Tensor:
    a = x.value
    return x.graph.op(np.log(a), (x,), lambda g: (g / a,))


def tanh(x: Tensor) -> Tensor:
    return _unary(x, np.tanh(x.value), lambda out: 1.0 - out * out)


def sigmoid(x: Tensor) -> Tensor:
    a = x.value
    out = np.exp(-np.logaddexp(0.0, -a))
    return x.graph.op(out, (x,), lambda g: (g * out * (1.0 - out),))


def softplus(x: Tensor) -> Tensor:
    a = x.value
    return x.graph.op(
        np.logaddexp(0.0, a), (x,), lambda g: (g * np.exp(-np.logaddexp(0.0, -a)),)
    )


def elu(x: Tensor) -> Tensor:
    a = x.value
    # branch-free: expm1(min(a, 0)) is 0 on the positive side, so neg + 1 is the slope
    neg = np.expm1(np.minimum(a, 0.0))
    out = np.maximum(a, 0.0) + neg
    return x.graph.op(out, (x,), lambda g: (g * (neg + 1.0),))


def relu(x: Tensor) -> Tensor:
    a = x.value
    return x.graph.op(np.maximum(a, 0.0), (x,), lambda g: (g * (a > 0),))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.value)
    return x.graph.op(out, (x,), lambda g: (g * 0.5 / out,))


def square(x: Tensor) -> Tensor:
    a = x.value
    return x.graph.op(a * a, (x,), lambda g: (2.0 * g * a,))


def minimum(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise minimum; ties route the gradient to ``x``."""
    y = as_tensor(y, x.graph)
    a, b = x.value, y.value
    pick = a <= b
    return x.graph.op(
        np.where(pick, a, b),
        (x, y),
        lambda g: (_unbroadcast(g * pick, a.shape), _unbroadcast(g * ~pick, b.shape)),
    )


def clip_min(x: Tensor, floor: float) -> Tensor:
    a = x.value
    keep = a >= floor
    return x.graph.op(np.maximum(a, floor), (x,), lambda g: (g * keep,))


def where(cond: np.ndarray, x: Tensor, y: Tensor) -> Tensor:
    y = as_tensor(y, x.graph)
    a, b = x.value, y.value
    return x.graph.op(
        np.where(cond, a, b),
        (x, y),
        lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                   _unbroadcast(np.where(cond, 0.0, g), b.shape)),
    )


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    graph = next(x.graph for x in xs if isinstance(x, Tensor))
    xs = [as_tensor(x, graph) for x in xs]
    values = [x.value for x in xs]
    out = np.concatenate(values, axis=axis)
    splits = np.cumsum([v.shape[axis] for v in values])[:-1]
    return graph.op(out, xs, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    graph = next(x.graph for x in xs if isinstance(x, Tensor))
    xs = [as_tensor(x, graph) for x in xs]
    out = np.stack([x.value for x in xs], axis=axis)
    n = len(xs)
    return graph.op(
        out, xs, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n))
    )


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused ``x @ w + b`` (one tape node), batched over leading axes."""
    a, wv, bv = x.value, w.value, b.value
    if a.shape[-1] != wv.shape[-2]:
        raise ValueError(f"input width {a.shape[-1]} does not match layer input {wv.shape[-2]}")

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(wv, -1, -2), a.shape) if x.requires_grad else None
        gw = _unbroadcast(np.swapaxes(a, -1, -2) @ g, wv.shape) if w.requires_grad else None
        gb = _unbroadcast(g, bv.shape) if b.requires_grad else None
        return ga, gw, gb

    return x.graph.op(a @ wv + bv, (x, w, b), vjp)
