"""Dense float64 tensors with tape-style reverse-mode differentiation.

Every op returns a new :class:`Tensor`. When at least one input requires a
gradient, the result records its parents and a closure that pushes the
upstream gradient back to them. Tensors that do not require gradients are
never recorded, so a frozen model's forward pass builds no graph at all.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class BackwardError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.values = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._consumed = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def backward(self) -> None:
        backward(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording any graph, whatever the inputs' flags."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _make(values: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(values)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.shape)
    else:
        t.grad += g


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.values.size != 1 and b.values.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    # only scalar broadcast is supported
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum()).reshape(t.shape)


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def back(g):
        _accumulate(a, _unbroadcast(g, a))
        _accumulate(b, _unbroadcast(g, b))

    return _make(a.values + b.values, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def back(g):
        _accumulate(a, _unbroadcast(g, a))
        _accumulate(b, _unbroadcast(-g, b))

    return _make(a.values - b.values, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def back(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.values, a))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.values, b))

    return _make(a.values * b.values, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def back(g):
        _accumulate(a, g * c)

    return _make(a.values * c, (a,), back)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.values)

    def back(g):
        _accumulate(a, g * (1.0 - y * y))

    return _make(y, (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    x = a.values
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def back(g):
        _accumulate(a, g * y * (1.0 - y))

    return _make(y, (a,), back)


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    y = np.where(mask, a.values, 0.0)

    def back(g):
        _accumulate(a, g * mask)

    return _make(y, (a,), back)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.values)

    def back(g):
        _accumulate(a, g * y)

    return _make(y, (a,), back)


def log(a: Tensor) -> Tensor:
    x = a.values

    def back(g):
        _accumulate(a, g / x)

    with np.errstate(divide="ignore"):
        y = np.log(x)
    return _make(y, (a,), back)


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "exp": exp,
    "log": log,
}


def elementwise(kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch by name: binary kinds take a tensor ``b``, ``scale`` takes a float."""
    try:
        fn = ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    if kind in ("add", "sub", "mul", "scale"):
        if b is None:
            raise ValueError(f"{kind} needs a second operand")
        return fn(a, b)
    return fn(a)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")

    def back(g):
        if a.requires_grad:
            _accumulate(a, g @ b.values.T)
        if b.requires_grad:
            _accumulate(b, a.values.T @ g)

    return _make(a.values @ b.values, (a, b), back)


def affine(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """``x @ w + bias`` with the bias row added to every row of the product."""
    if x.values.ndim != 2 or w.values.ndim != 2 or bias.values.ndim != 1:
        raise ShapeError(f"affine: bad ranks {x.shape}, {w.shape}, {bias.shape}")
    if x.shape[1] != w.shape[0] or w.shape[1] != bias.shape[0]:
        raise ShapeError(f"affine: shapes {x.shape}, {w.shape}, {bias.shape} do not chain")

    def back(g):
        if x.requires_grad:
            _accumulate(x, g @ w.values.T)
        if w.requires_grad:
            _accumulate(w, x.values.T @ g)
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=0))

    return _make(x.values @ w.values + bias.values, (x, w, bias), back)


def log_softmax(x: Tensor) -> Tensor:
    v = x.values
    if v.ndim == 0 or v.shape[-1] < 1:
        raise ShapeError(f"log_softmax needs a non-empty last axis, got {x.shape}")
    m = v.max(axis=-1, keepdims=True)
    shifted = v - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse

    def back(g):
        p = np.exp(y)
        _accumulate(x, g - p * g.sum(axis=-1, keepdims=True))

    return _make(y, (x,), back)


# ---------------------------------------------------------------- reductions and shape

def sum(a: Tensor) -> Tensor:  # noqa: A001
    def back(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(np.asarray(a.values.sum()), (a,), back)


def mean(a: Tensor) -> Tensor:
    n = a.values.size
    return scale(sum(a), 1.0 / n)


def getitem(a: Tensor, index) -> Tensor:
    y = a.values[index]

    def back(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.values)
        if _is_basic_index(index):
            full[index] += g
        else:
            np.add.at(full, index, g)
        _accumulate(a, full)

    return _make(np.array(y, dtype=np.float64), (a,), back)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    y = a.values.reshape(shape)

    def back(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(y, (a,), back)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = list(parts)
    ax = axis % parts[0].values.ndim
    sizes = [p.shape[ax] for p in parts]
    y = np.concatenate([p.values for p in parts], axis=ax)
    bounds = np.cumsum([0] + sizes)

    def back(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                _accumulate(p, g[tuple(sl)])

    return _make(y, parts, back)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    shape = parts[0].shape
    for p in parts:
        if p.shape != shape:
            raise ShapeError(f"stack: shapes {shape} and {p.shape} differ")
    y = np.stack([p.values for p in parts], axis=axis)

    def back(g):
        for i, p in enumerate(parts):
            if p.requires_grad:
                _accumulate(p, np.take(g, i, axis=axis))

    return _make(y, parts, back)


def custom(values: np.ndarray, parents: Sequence[Tensor], grads_fn) -> Tensor:
    """Wrap a value whose gradients are supplied externally.

    ``grads_fn(g)`` returns one array (or None) per parent.
    """

    def back(g):
        for p, pg in zip(parents, grads_fn(g)):
            if pg is not None:
                _accumulate(p, pg)

    return _make(np.asarray(values, dtype=np.float64), parents, back)


# ---------------------------------------------------------------- graph traversal

def topological_order(root: Tensor) -> list[Tensor]:
    """Graph nodes reachable from ``root`` with every input before its consumers."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in seen and parent.requires_grad:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    if loss.values.size != 1:
        raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise BackwardError("backward already ran on this graph; run a new forward pass first")
    if not loss.requires_grad:
        raise BackwardError("loss does not depend on any tensor that requires a gradient")
    order = topological_order(loss)
    if loss._backward is None:
        _accumulate(loss, np.ones_like(loss.values))
    else:
        loss.grad = np.ones_like(loss.values)
    for node in reversed(order):
        if node._backward is None:
            continue
        g = node.grad
        node.grad = None
        if g is not None:
            node._backward(g)
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
    loss._consumed = True


def finite_difference_check(
    f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float = 1e-5
) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|)."""
    x = np.array(x, dtype=np.float64)
    leaf = Tensor(x.copy(), requires_grad=True)
    out = f(leaf)
    backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x)
    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(Tensor(x.copy())).item()
        flat[i] = orig - eps
        fm = f(Tensor(x.copy())).item()
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2.0 * eps)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0


def parameters_requiring_grad(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
