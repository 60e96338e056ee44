"""Dense tensors with define-by-run reverse-mode differentiation.

Each differentiable operation computes its value eagerly with numpy and, when
any input requires a gradient, stores a closure mapping the output gradient to
input gradients. ``backward`` orders the recorded nodes topologically (the
tape), walks it once in reverse and then drops the closures so the graph can be
collected.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError, DimensionError, NumericalError

_DEFAULT_DTYPE = np.float32
_local = threading.local()


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ContractError(f"unsupported precision {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording anything (per thread)."""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else _DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- introspection -------------------------------------------------
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
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar ------------------------------------------------
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def backward(self):
        return backward(self)


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else _DEFAULT_DTYPE
    return Tensor(np.asarray(value, dtype=dtype))


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values produced by operation '{op}'")
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise binary ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("div", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def bw(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), bw, "div")


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


# -- elementwise unary ----------------------------------------------------

def neg(x: Tensor) -> Tensor:
    return _node(-x.data, (x,), lambda g: (-g,), "neg")


def scale(x: Tensor, factor: float) -> Tensor:
    factor = x.dtype.type(factor)
    return _node(x.data * factor, (x,), lambda g: (g * factor,), "scale")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype, copy=False)
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * mask,), "relu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _node(out, (x,), lambda g: (g / x.data,), "log")


def tabs(x: Tensor) -> Tensor:
    return _node(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def sqrt(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        out = np.sqrt(x.data)
    with np.errstate(divide="ignore", invalid="ignore"):
        return _node(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def square(x: Tensor) -> Tensor:
    return _node(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def power(x: Tensor, exponent: float) -> Tensor:
    if exponent == 2:
        return square(x)
    p = x.dtype.type(exponent)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = x.data ** p
    return _node(out, (x,), lambda g: (g * p * x.data ** (p - 1),), "pow")


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    """Scale vectors along ``axis`` to unit length; zero vectors stay zero."""
    norm = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    safe = np.where(norm > 0, norm, 1).astype(x.dtype, copy=False)
    out = x.data / safe

    def bw(g):
        return ((g - out * np.sum(g * out, axis=axis, keepdims=True)) / safe,)

    return _node(out, (x,), bw, "l2_normalize")


# -- linear algebra -------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None

    def bw(g):
        ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), bw, "matmul")


# -- reductions -----------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = np.sum(x.data, axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(np.asarray(out, dtype=x.dtype), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(tsum(x, axes, keepdims), 1.0 / count)


# -- shape manipulation ---------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return _node(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = np.argsort(axes)
    return _node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _node(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),), "swapaxes")


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise DimensionError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None
    return _node(out, (x,), lambda g: (unbroadcast(g, x.shape),), "broadcast_to")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat: need at least one tensor")
    if len(tensors) == 1:
        return tensors[0]
    ndim = tensors[0].ndim
    ax = axis % ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != ref[i] for i in range(ndim) if i != ax):
            shapes = ", ".join(str(u.shape) for u in tensors)
            raise DimensionError(f"concat along axis {axis}: mismatched shapes {shapes}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _node(out, tensors, bw, "concat")


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _node(np.array(out, dtype=x.dtype), (x,), bw, "getitem")


# -- reverse sweep --------------------------------------------------------

def _tape(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` in topological order (inputs first)."""
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
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Returns the gradients produced by this call keyed by leaf tensor. The
    recorded graph is released afterwards; call the forward pass again before
    another backward.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not depend on any tensor requiring grad")
    tape = _tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced: dict[Tensor, np.ndarray] = {}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            produced[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in tape:
        if not node.is_leaf:
            node._parents = ()
            node._backward = None
    return produced
