"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` is one node of a computation graph: a value, an optional
gradient slot of the same shape, and a record of the operation that produced
it.  Graphs are built eagerly by calling the ops below; recurrent models are
differentiated by simply unrolling them over time and calling
:func:`backward` once on the final scalar (backpropagation through time
falls out of ordinary graph traversal).

Values are never mutated while a graph that references them is still alive;
optimizers may rewrite leaf values *between* graph builds.  Graph
construction and backward passes run on a single control thread.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "matmul",
    "dense",
    "relu",
    "tanh",
    "sign_ste",
    "hardtanh",
    "square",
    "tsum",
    "mean",
    "concat",
    "reshape",
    "transpose",
    "backward",
    "ancestors",
]


class Tensor:
    """Graph node holding a float64 array, its gradient slot, and parent links."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        name: str | None = None,
        _parents: tuple["Tensor", ...] = (),
        _vjp: Callable[[np.ndarray], tuple] | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.name = name
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.value.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and arrays are lifted to constant leaves
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __neg__(self):
        return mul(self, as_tensor(-1.0))

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __getitem__(self, key):
        return getitem(self, key)

    def relu(self):
        return relu(self)

    def tanh(self):
        return tanh(self)

    def square(self):
        return square(self)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return mean(self, axis=axis)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    """Lift scalars/arrays to constant leaf tensors; pass tensors through."""
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, inverting numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return Tensor(a.value + b.value, _parents=(a, b), _vjp=vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.value.shape), -_unbroadcast(g, b.value.shape)

    return Tensor(a.value - b.value, _parents=(a, b), _vjp=vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return Tensor(a.value * b.value, _parents=(a, b), _vjp=vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of stacks of matrices (operands must be >= 2-D)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires operands with at least 2 dimensions")

    def vjp(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(ga, a.value.shape), _unbroadcast(gb, b.value.shape)

    return Tensor(a.value @ b.value, _parents=(a, b), _vjp=vjp)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None, transpose_w: bool = False) -> Tensor:
    """Affine layer ``x @ w (+ b)``; with ``transpose_w`` the weight is stored
    (out, in) and applied as ``x @ w.T``."""
    wv = w.value.T if transpose_w else w.value
    out = x.value @ wv
    if b is not None:
        out = out + b.value

    def vjp(g):
        gx = g @ wv.T
        gw = g.T @ x.value if transpose_w else x.value.T @ g
        if b is None:
            return gx, gw
        return gx, gw, _unbroadcast(g, b.value.shape)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, _parents=parents, _vjp=vjp)


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0  # slope at exactly 0 is defined as 0

    def vjp(g):
        return (g * mask,)

    return Tensor(np.where(mask, a.value, 0.0), _parents=(a,), _vjp=vjp)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.value)

    def vjp(g):
        return (g * (1.0 - t * t),)

    return Tensor(t, _parents=(a,), _vjp=vjp)


def sign_ste(a: Tensor) -> Tensor:
    """Hard sign forward (+1 for v >= 0, -1 otherwise) with the
    straight-through backward rule: gradient passes where ``|v| <= 1``."""
    mask = np.abs(a.value) <= 1.0

    def vjp(g):
        return (g * mask,)

    return Tensor(np.where(a.value >= 0, 1.0, -1.0), _parents=(a,), _vjp=vjp)


def hardtanh(a: Tensor) -> Tensor:
    """clip(v, -1, 1); shares the straight-through backward mask of
    :func:`sign_ste`, which makes it the differentiable surrogate used by
    gradient checks of sign-quantized graphs."""
    mask = np.abs(a.value) <= 1.0

    def vjp(g):
        return (g * mask,)

    return Tensor(np.clip(a.value, -1.0, 1.0), _parents=(a,), _vjp=vjp)


def square(a: Tensor) -> Tensor:
    def vjp(g):
        return (g * (2.0 * a.value),)

    return Tensor(a.value * a.value, _parents=(a,), _vjp=vjp)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.value.shape).copy(),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.value.shape).copy(),)

    return Tensor(a.value.sum(axis=axis, keepdims=keepdims), _parents=(a,), _vjp=vjp)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.value.size if axis is None else a.value.shape[axis]
    return tsum(a, axis=axis) * (1.0 / n)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(parts)
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        sl = [slice(None)] * g.ndim
        grads = []
        for i in range(len(parts)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return Tensor(np.concatenate([p.value for p in parts], axis=axis), _parents=parts, _vjp=vjp)


def reshape(a: Tensor, shape) -> Tensor:
    def vjp(g):
        return (g.reshape(a.value.shape),)

    return Tensor(a.value.reshape(shape), _parents=(a,), _vjp=vjp)


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inv),)

    return Tensor(np.transpose(a.value, axes), _parents=(a,), _vjp=vjp)


def getitem(a: Tensor, key) -> Tensor:
    def vjp(g):
        full = np.zeros_like(a.value)
        full[key] = g
        return (full,)

    return Tensor(a.value[key], _parents=(a,), _vjp=vjp)


def _toposort(root: Tensor) -> list[Tensor]:
    """Post-order over the subgraph that requires gradients (iterative)."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad`` slot.

    ``loss`` must be scalar.  Gradient buffers are accumulated out of place,
    so incoming gradients may safely alias downstream buffers.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def ancestors(node: Tensor, stop: Iterable[Tensor] = ()) -> set[Tensor]:
    """Transitive parents of ``node``, not expanding past nodes in ``stop``.

    The stop nodes themselves are included when reached; their own inputs are
    not.  Used for structural audits of what information feeds an output.
    """
    stop_ids = {id(s) for s in stop}
    seen: set[int] = set()
    found: set[Tensor] = set()
    stack = [node]
    while stack:
        n = stack.pop()
        for p in n._parents:
            if id(p) in seen:
                continue
            seen.add(id(p))
            found.add(p)
            if id(p) not in stop_ids:
                stack.append(p)
    return found
