"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation that touches a tensor with ``requires_grad=True`` records a
node carrying its parents and a closure mapping the output gradient to the
input gradients. Nodes get a monotonically increasing id at creation, so a
node's inputs always have smaller ids than the node itself. ``backward`` walks
the ancestors of the loss in decreasing id order, visiting each node once.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_node_ids = itertools.count()
_grad_enabled = True

GELU_C = 0.7978845608  # sqrt(2/pi), tanh approximation


class ShapeError(ValueError):
    pass


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


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._id = next(_node_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    # operator sugar; implementations live in this module below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(as_tensor(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    parents = tuple(parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._id = next(_node_ids)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


class Graph:
    """Operation records reachable from a root, in insertion order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> Graph:
        seen: dict[int, Tensor] = {}
        stack = [root]
        while stack:
            t = stack.pop()
            if t._id in seen or not t.requires_grad:
                continue
            seen[t._id] = t
            stack.extend(t._parents)
        return cls(sorted(seen.values(), key=lambda t: t._id))

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every requires_grad leaf reachable from ``loss``.

    Leaf gradients accumulate across calls until zeroed.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    graph = Graph.from_root(loss)
    grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg


# ---------------------------------------------------------------- broadcasting


def broadcast_shape(a: tuple, b: tuple) -> tuple:
    """Shape of a binary op under suffix alignment with leading unit dims."""
    if a == b:
        return a
    long, short = (a, b) if len(a) >= len(b) else (b, a)
    trimmed = short
    while trimmed and trimmed[0] == 1:
        trimmed = trimmed[1:]
    if len(trimmed) == 0 or long[len(long) - len(trimmed):] == trimmed:
        return long
    raise ShapeError(f"cannot broadcast shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),))


def gelu(a: Tensor) -> Tensor:
    x = a.data
    inner = GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out, (a,), bw)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _make(x * x, (a,), lambda g: (2.0 * g * x,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"minimum needs equal shapes, got {a.shape} and {b.shape}")
    take_a = a.data <= b.data
    return _make(np.where(take_a, a.data, b.data), (a, b), lambda g: (g * take_a, g * ~take_a))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "relu": relu,
    "gelu": gelu,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def elementwise(op: str, a, b=None):
    """Dispatch by name; ``scale`` takes a float as ``b``."""
    if op == "scale":
        return scale(as_tensor(a), float(b))
    fn = _ELEMENTWISE.get(op)
    if fn is None:
        raise ValueError(f"unknown elementwise op {op!r}")
    if op in ("add", "sub", "mul"):
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return fn(as_tensor(a), as_tensor(b))
    return fn(as_tensor(a))


# ---------------------------------------------------------------- reductions & shape


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(a.data[idx], dtype=np.float64), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors)))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim
    return _make(out, tensors, lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(tensors))))


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; batch dims follow the suffix broadcast rule."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    broadcast_shape(a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` with ``w`` shaped (in, out)."""
    y = matmul(x, w) if x.ndim >= 2 else reshape(matmul(reshape(x, (1, -1)), w), (w.shape[1],))
    return add(y, b) if b is not None else y
