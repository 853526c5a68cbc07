"""Reverse-mode automatic differentiation on a dynamically recorded graph.

Every differentiable primitive goes through :func:`record`, which stores the
forward value together with a vector-Jacobian product closure.  Calling
:func:`backward` on a scalar node walks the graph in reverse topological
order and accumulates gradients into every ``requires_grad`` node.
"""
from __future__ import annotations

import contextlib
import struct
from typing import Callable, Iterable, Sequence

import numpy as np

from .tensor import DTYPE, ShapeMismatch, _check_axis

_GRAD_ENABLED = True


class NotScalarLoss(ValueError):
    pass


class MissingGrad(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Node:
    __slots__ = ("value", "grad", "parents", "backward_rule", "requires_grad", "op")
    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, parents=(), backward_rule=None, op: str = "leaf"):
        self.value = np.asarray(value, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Node, ...] = tuple(parents)
        self.backward_rule = backward_rule
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


class Parameter(Node):
    """A learnable leaf; ``name`` is the dotted path used in checkpoints."""

    __slots__ = ("name",)

    def __init__(self, value, name: str = ""):
        super().__init__(np.array(value, dtype=DTYPE), requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def record(op: str, value: np.ndarray, parents: Sequence[Node], vjp: Callable) -> Node:
    """Wrap a forward result.

    ``vjp(g)`` receives the upstream gradient and returns one gradient (or
    ``None``) per parent.  When no parent requires a gradient the node is a
    constant and nothing is retained.
    """
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not needs:
        return Node(value, op=op)
    return Node(value, requires_grad=True, parents=parents, backward_rule=vjp, op=op)


def _topo_order(root: Node) -> list[Node]:
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


def backward(loss: Node) -> None:
    if loss.value.size != 1:
        raise NotScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    pending = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topo_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node.backward_rule is None:
            continue
        for parent, pg in zip(node.parents, node.backward_rule(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


def zero_grad(params: Iterable[Node]) -> None:
    for p in params:
        p.grad = None


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return record("add", a.value + b.value, (a, b),
                  lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return record("sub", a.value - b.value, (a, b),
                  lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    return record("mul", av * bv, (a, b),
                  lambda g: (unbroadcast(g * bv, a.shape), unbroadcast(g * av, b.shape)))


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    out = av / bv

    def vjp(g):
        return unbroadcast(g / bv, a.shape), unbroadcast(-g * out / bv, b.shape)

    return record("div", out, (a, b), vjp)


def relu(x) -> Node:
    """max(0, x); the subgradient at exactly 0 is taken as 0."""
    x = as_node(x)
    mask = x.value > 0
    return record("relu", np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def abs_(x) -> Node:
    x = as_node(x)
    s = np.sign(x.value)
    return record("abs", np.abs(x.value), (x,), lambda g: (g * s,))


def square(x) -> Node:
    x = as_node(x)
    v = x.value
    return record("square", v * v, (x,), lambda g: (2.0 * g * v,))


def maximum_const(x, floor: float) -> Node:
    x = as_node(x)
    mask = x.value > floor
    return record("maximum", np.where(mask, x.value, floor), (x,), lambda g: (g * mask,))


# -- linear algebra and reductions -----------------------------------------

def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ShapeMismatch(f"matmul {av.shape} x {bv.shape}")

    def vjp(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return unbroadcast(ga, av.shape), unbroadcast(gb, bv.shape)

    return record("matmul", av @ bv, (a, b), vjp)


def _norm_axes(x: Node, axis):
    if axis is None:
        return tuple(range(x.ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(_check_axis(x.value, ax) for ax in axis))


def sum_(x, axis=None, keepdims: bool = False) -> Node:
    x = as_node(x)
    axes = _norm_axes(x, axis)
    shape = x.shape

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return record("sum", x.value.sum(axis=axes, keepdims=keepdims), (x,), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Node:
    x = as_node(x)
    axes = _norm_axes(x, axis)
    count = int(np.prod([x.shape[a] for a in axes]))
    return sum_(x, axes, keepdims) * (1.0 / count)


# -- layout ----------------------------------------------------------------

def getitem(x, index) -> Node:
    """Basic (slice/int) indexing; the gradient is scattered back into place."""
    x = as_node(x)
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape, dtype=DTYPE)
        out[index] = g
        return (out,)

    return record("slice", np.array(x.value[index]), (x,), vjp)


def slice_time(x, start: int, stop: int) -> Node:
    from .tensor import IndexOutOfRange

    x = as_node(x)
    if not 0 <= start < stop <= x.shape[-2]:
        raise IndexOutOfRange(f"slice [{start}:{stop}) of length {x.shape[-2]}")
    return getitem(x, (Ellipsis, slice(start, stop), slice(None)))


def concat(parts: Sequence, axis: int = -2) -> Node:
    parts = [as_node(p) for p in parts]
    values = [p.value for p in parts]
    out = np.concatenate(values, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record("concat", out, parts, vjp)


def swapaxes(x, a: int, b: int) -> Node:
    x = as_node(x)
    return record("swapaxes", np.swapaxes(x.value, a, b).copy(), (x,),
                  lambda g: (np.swapaxes(g, a, b),))


def reshape(x, shape) -> Node:
    x = as_node(x)
    old = x.shape
    return record("reshape", x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def gather(x, index: np.ndarray, axis: int = -2) -> Node:
    """``x`` indexed along ``axis`` by an integer array of any shape."""
    x = as_node(x)
    axis = _check_axis(x.value, axis)
    index = np.asarray(index, dtype=np.intp)
    out = np.take(x.value, index, axis=axis)
    shape = x.shape

    def vjp(g):
        # move the indexed block to the front, accumulate, move back
        gx = np.zeros((shape[axis],) + shape[:axis] + shape[axis + 1:], dtype=DTYPE)
        gi = np.moveaxis(g, tuple(range(axis, axis + index.ndim)), tuple(range(index.ndim)))
        np.add.at(gx, index.reshape(-1), gi.reshape((-1,) + gx.shape[1:]))
        return (np.moveaxis(gx, 0, axis),)

    return record("gather", out, (x,), vjp)


# -- checkpoints -----------------------------------------------------------

_MAGIC = b"MPRCKPT1"


def save_params(path, params: Sequence[Parameter]) -> None:
    """Write ``name -> (shape, float64 data)`` in a fixed little-endian layout."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            name = p.name.encode()
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<I", p.value.ndim))
            fh.write(struct.pack(f"<{p.value.ndim}Q", *p.value.shape))
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_params(path) -> dict[str, np.ndarray]:
    out = {}
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (n,) = struct.unpack("<I", fh.read(4))
            name = fh.read(n).decode()
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            size = int(np.prod(shape))
            data = np.frombuffer(fh.read(8 * size), dtype="<f8").astype(DTYPE)
            out[name] = data.reshape(shape)
    return out


def exp(x) -> Node:
    x = as_node(x)
    out = np.exp(x.value)
    return record("exp", out, (x,), lambda g: (g * out,))


def softmax(x, axis: int = -1) -> Node:
    x = as_node(x)
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", out, (x,), vjp)
