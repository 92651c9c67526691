"""Dense float64 tensors with reverse-mode automatic differentiation.

Forward values live in numpy arrays; every differentiable operation appends
a node to the active :class:`Graph` (a tape), and ``backward`` replays the
tape in strict reverse append order, accumulating gradients additively.
Tensors are immutable after creation except for their ``grad`` buffers and
optimizer updates to parameter data.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class GraphError(RuntimeError):
    """Raised when graph recording or backward is misused."""


# --------------------------------------------------------------------------
# Graph (tape) machinery
# --------------------------------------------------------------------------


class Node:
    """One recorded operation: op id, inputs, and its backward rule."""

    __slots__ = ("op", "inputs", "out", "backward_fn", "graph")

    def __init__(self, op: str, inputs: tuple, out: "Tensor",
                 backward_fn: Callable[[np.ndarray], tuple], graph: "Graph"):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn
        self.graph = graph


class Graph:
    """Append-only tape; append order is the topological order."""

    def __init__(self):
        self.nodes: list[Node] = []

    # -- recording context ------------------------------------------------
    def __enter__(self) -> "Graph":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    # -- reverse-mode sweep ------------------------------------------------
    def backward(self, loss: "Tensor") -> None:
        """Populate grads of every requires_grad tensor reachable from loss.

        Only tensors touched downstream of ``loss`` in this sweep propagate,
        so stale nodes from earlier forwards on the same tape are inert.
        """
        if loss.size != 1:
            raise GraphError(
                f"backward requires a scalar loss, got shape {loss.shape}")
        if not np.all(np.isfinite(loss.data)):
            raise GraphError("backward called on a non-finite loss")
        loss._accumulate(np.ones_like(loss.data))
        touched = {id(loss)}
        for node in reversed(self.nodes):
            if id(node.out) not in touched:
                continue
            out_grad = node.out.grad
            if out_grad is None:
                continue
            grads = node.backward_fn(out_grad)
            for tensor, grad in zip(node.inputs, grads):
                if grad is None or not tensor.requires_grad:
                    continue
                tensor._accumulate(grad)
                touched.add(id(tensor))

    def op_census(self) -> dict[str, int]:
        """Count of recorded nodes per op id (structural inspection)."""
        census: dict[str, int] = {}
        for node in self.nodes:
            census[node.op] = census.get(node.op, 0) + 1
        return census


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = [Graph()]
    return _local.stack


def active_graph() -> Graph:
    return _stack()[-1]


class no_grad:
    """Context that suppresses graph recording (inference / data prep)."""

    def __enter__(self):
        if not hasattr(_local, "off"):
            _local.off = 0
        _local.off += 1
        return self

    def __exit__(self, *exc):
        _local.off -= 1


def _recording() -> bool:
    return getattr(_local, "off", 0) == 0


# --------------------------------------------------------------------------
# Tensor
# --------------------------------------------------------------------------


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "_grad_borrowed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None
        self._grad_borrowed = False

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """The underlying buffer; treat as read-only."""
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        tag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    # -- autograd plumbing ---------------------------------------------------
    def _accumulate(self, grad: np.ndarray) -> None:
        # The first contribution is borrowed (it may alias an upstream
        # buffer or view); a second contribution allocates a fresh owned sum.
        if self.grad is None:
            self.grad = grad
            self._grad_borrowed = True
        elif self._grad_borrowed:
            self.grad = self.grad + grad
            self._grad_borrowed = False
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None
        self._grad_borrowed = False

    def backward(self) -> None:
        if self.node is None:
            # A leaf scalar: seeding its own grad is the whole sweep.
            if self.size != 1:
                raise GraphError("backward requires a scalar loss")
            self._accumulate(np.ones_like(self.data))
            return
        self.node.graph.backward(self)

    # -- operator sugar --------------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- method sugar -----------------------------------------------------------
    def relu(self):
        return relu(self)

    def leaky_relu(self, slope: float = 0.01):
        return leaky_relu(self, slope)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def sum(self, axis: Optional[int] = None):
        return reduce(self, "sum", axis)

    def mean(self, axis: Optional[int] = None):
        return reduce(self, "mean", axis)

    def softmax(self, axis: int):
        return softmax_axis(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Optional[Sequence[int]] = None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self, None)


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=np.float64), requires_grad=requires_grad)


# --------------------------------------------------------------------------
# Op registration helper
# --------------------------------------------------------------------------


def _make(op: str, out_data: np.ndarray, inputs: tuple,
          backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    out = Tensor(out_data)
    if _recording() and any(t.requires_grad for t in inputs):
        graph = active_graph()
        out.requires_grad = True
        node = Node(op, inputs, out, backward_fn, graph)
        out.node = node
        graph.record(node)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    for da, db in zip(reversed(sa), reversed(sb)):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: shapes {sa} and {sb} do not broadcast")


# --------------------------------------------------------------------------
# Binary arithmetic
# --------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "sub")
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "mul")
    out = a.data * b.data
    a_data, b_data = a.data, b.data

    def bwd(g):
        return (_unbroadcast(g * b_data, a.shape),
                _unbroadcast(g * a_data, b.shape))

    return _make("mul", out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    a_data, b_data = a.data, b.data

    def bwd(g):
        return (_unbroadcast(g / b_data, a.shape),
                _unbroadcast(-g * a_data / (b_data * b_data), b.shape))

    return _make("div", out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        return (-g,)

    return _make("neg", -a.data, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(
            f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    out = a.data @ b.data
    a_data, b_data = a.data, b.data

    def bwd(g):
        return g @ b_data.T, a_data.T @ g

    return _make("matmul", out, (a, b), bwd)


# --------------------------------------------------------------------------
# Elementwise nonlinearities
# --------------------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, 0.0)

    def bwd(g):
        return (g * mask,)

    return _make("relu", out, (a,), bwd)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    factor = np.where(a.data > 0, 1.0, slope)

    def bwd(g):
        return (g * factor,)

    return _make("leaky_relu", a.data * factor, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign so exp never overflows.
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _make("sigmoid", out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return _make("tanh", out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return _make("exp", out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log: input has non-positive entries")
    out = np.log(a.data)
    a_data = a.data

    def bwd(g):
        return (g / a_data,)

    return _make("log", out, (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise ValueError("sqrt: input has negative entries")
    out = np.sqrt(a.data)

    def bwd(g):
        return (g * 0.5 / out,)

    return _make("sqrt", out, (a,), bwd)


def huber(a: Tensor, delta: float = 1.0) -> Tensor:
    x = a.data
    absx = np.abs(x)
    out = np.where(absx <= delta, 0.5 * x * x, delta * (absx - 0.5 * delta))
    deriv = np.clip(x, -delta, delta)

    def bwd(g):
        return (g * deriv,)

    return _make("huber", out, (a,), bwd)


_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul}
_ELEMENTWISE_UNARY = {
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "exp": exp,
    "log": log,
}


def elementwise(a: Tensor, kind: str, b: Optional[Tensor] = None,
                delta: float = 1.0, slope: float = 0.01) -> Tensor:
    """Uniform position-wise dispatch over the supported kinds."""
    if kind in _ELEMENTWISE_BINARY:
        if b is None:
            raise ValueError(f"elementwise '{kind}' needs a second operand")
        return _ELEMENTWISE_BINARY[kind](a, b)
    if b is not None:
        raise ValueError(f"elementwise '{kind}' is unary")
    if kind in _ELEMENTWISE_UNARY:
        return _ELEMENTWISE_UNARY[kind](a)
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    if kind == "huber":
        return huber(a, delta)
    raise ValueError(f"unknown elementwise kind '{kind}'")


# --------------------------------------------------------------------------
# Softmax / reductions / shape ops
# --------------------------------------------------------------------------


def softmax_axis(a: Tensor, axis: int) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make("softmax", out, (a,), bwd)


def reduce(a: Tensor, kind: str, axis: Optional[int] = None) -> Tensor:
    if kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduce kind '{kind}'")
    if axis is None:
        n = a.size
        out = a.data.sum() if kind == "sum" else a.data.mean()
        shape = a.shape

        def bwd_all(g):
            scale = 1.0 if kind == "sum" else 1.0 / n
            return (np.broadcast_to(g * scale, shape).astype(np.float64),)

        return _make(kind, np.asarray(out), (a,), bwd_all)

    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"reduce axis {axis} out of range for {a.shape}")
    axis = axis % a.ndim
    n = a.shape[axis]
    out = a.data.sum(axis=axis) if kind == "sum" else a.data.mean(axis=axis)
    shape = a.shape

    def bwd(g):
        scale = 1.0 if kind == "sum" else 1.0 / n
        g_exp = np.expand_dims(g * scale, axis)
        return (np.broadcast_to(g_exp, shape).astype(np.float64),)

    return _make(kind, out, (a,), bwd)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat of an empty sequence")
    parts = [_wrap(p) for p in parts]
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != len(ref):
            raise ShapeError(f"concat rank mismatch: {ref} vs {p.shape}")
        for ax, (da, db) in enumerate(zip(ref, p.shape)):
            if ax != axis % len(ref) and da != db:
                raise ShapeError(
                    f"concat side dimensions differ on axis {ax}: {ref} vs {p.shape}")
    out = np.concatenate([p.data for p in parts], axis=axis)
    extents = [p.shape[axis % p.ndim] for p in parts]

    def bwd(g):
        grads, start = [], 0
        for ext in extents:
            sl = [slice(None)] * g.ndim
            sl[axis % g.ndim] = slice(start, start + ext)
            grads.append(g[tuple(sl)])
            start += ext
        return tuple(grads)

    return _make("concat", out, tuple(parts), bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis (backward zero-pads)."""
    axis = axis % a.ndim
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    out = a.data[tuple(sl)]
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape, dtype=np.float64)
        full[tuple(sl)] = g
        return (full,)

    return _make("narrow", out, (a,), bwd)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Row lookup along axis 0; backward scatter-adds into source rows."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        idx = idx.reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(
            f"gather index out of range for axis 0 of {a.shape}")
    out = a.data[idx]
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape, dtype=np.float64)
        np.add.at(full, idx, g)
        return (full,)

    return _make("gather", out, (a,), bwd)


def bin_mix(weights: Tensor, table: Tensor, bins: np.ndarray) -> Tensor:
    """Weighted table mixture with a per-cell bin index.

    ``out[i, :] = sum_j weights[i, j] * table[bins[i, j], :]`` computed by
    grouping the weight mass per (row, bin) first, which avoids ever
    materializing an (n, m, d) intermediate.  ``bins`` is a constant integer
    matrix shaped like ``weights`` with values in [0, table rows).
    """
    n, m = weights.shape
    n_bins = table.shape[0]
    bins = np.asarray(bins, dtype=np.int64)
    if bins.shape != (n, m):
        raise ShapeError(f"bins shape {bins.shape} != weights shape {(n, m)}")
    if bins.min() < 0 or bins.max() >= n_bins:
        raise ShapeError(f"bin index out of range for table with {n_bins} rows")
    flat_keys = (np.arange(n)[:, None] * n_bins + bins).reshape(-1)
    grouped = np.bincount(flat_keys, weights=weights.data.reshape(-1),
                          minlength=n * n_bins).reshape(n, n_bins)
    out = grouped @ table.data
    w_data, t_data = weights.data, table.data

    def bwd(g):
        d_grouped = g @ t_data.T
        d_weights = np.take_along_axis(d_grouped, bins, axis=1)
        d_table = grouped.T @ g
        return d_weights, d_table

    return _make("bin_mix", out, (weights, table), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    orig = a.shape

    def bwd(g):
        return (g.reshape(orig),)

    return _make("reshape", out, (a,), bwd)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)

    def bwd(g):
        return (np.transpose(g, inverse),)

    return _make("transpose", out, (a,), bwd)


def backward(loss: Tensor) -> None:
    """Run the reverse sweep on the graph that recorded ``loss``."""
    loss.backward()
