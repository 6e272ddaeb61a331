"""Dense tensors with reverse-mode automatic differentiation.

Design notes:
  * numpy arrays are the storage; every gradient rule here is hand-derived.
  * Shapes are static per graph. Broadcasting is limited to row vectors
    (1, D)/(D,) and column vectors (N, 1) in add/sub/hadamard; that covers
    biases and per-channel modulation without a general broadcast engine.
  * Every op checks its output for NaN/Inf and raises NonFiniteError rather
    than letting poison propagate.
  * backward() may run once per recorded graph; a second call on any
    overlapping graph raises ContractError. Leaves accumulate .grad across
    graphs until the optimizer clears them.
  * float64 is the default dtype; float32 is opt-in via the dtype argument
    on leaf constructors (training precision flag threads through models).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, NonFiniteError, ShapeError

DEFAULT_DTYPE = np.float64

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def _as_array(values, dtype=None) -> np.ndarray:
    arr = np.asarray(values)
    if dtype is not None:
        return np.ascontiguousarray(arr, dtype=dtype)
    if arr.dtype in _FLOAT_DTYPES:
        return np.ascontiguousarray(arr)
    return np.ascontiguousarray(arr, dtype=DEFAULT_DTYPE)


def _check_finite(values: np.ndarray, op: str) -> None:
    if not np.isfinite(values).all():
        raise NonFiniteError(f"non-finite value produced by op '{op}'")


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode backward."""

    __slots__ = ("values", "requires_grad", "grad", "op", "_parents", "_backward_fn", "_consumed")

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        self.values = _as_array(values, dtype)
        _check_finite(self.values, "leaf")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        return float(self.values)

    def detach(self) -> "Tensor":
        return stop_gradient(self)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar. Scalars go through scale/shift; tensors through the ops.
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, float(other))

    def __radd__(self, other):
        return shift(self, float(other))

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -float(other))

    def __mul__(self, other):
        return hadamard(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _record(op: str, values: np.ndarray, parents: tuple[Tensor, ...],
            backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    _check_finite(values, op)
    out = Tensor.__new__(Tensor)
    out.values = values
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out.op = op
    out._parents = parents
    out._backward_fn = backward_fn if out.requires_grad else None
    out._consumed = False
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce grad back to the (possibly row/column vector) operand shape."""
    if grad.shape == shape:
        return grad
    if len(shape) == 1:  # (D,) bias against (N, D)
        return grad.sum(axis=0)
    if shape[0] == 1 and grad.shape[0] != 1:
        return grad.sum(axis=0, keepdims=True)
    if len(shape) == 2 and shape[1] == 1 and grad.shape[1] != 1:
        return grad.sum(axis=1, keepdims=True)
    raise ShapeError(f"cannot reduce gradient {grad.shape} to operand shape {shape}")


def _binary_shapes_ok(a: np.ndarray, b: np.ndarray) -> bool:
    if a.shape == b.shape:
        return True
    if a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]:
        return True
    if a.ndim == 2 and b.ndim == 2 and b.shape == (1, a.shape[1]):
        return True
    if a.ndim == 2 and b.ndim == 2 and b.shape == (a.shape[0], 1):
        return True
    return False


def _binary(op: str, a: Tensor, b: Tensor, fwd, da, db) -> Tensor:
    if not (_binary_shapes_ok(a.values, b.values) or _binary_shapes_ok(b.values, a.values)):
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
    values = fwd(a.values, b.values)

    def backward(g: np.ndarray):
        ga = _unbroadcast(da(g, a.values, b.values), a.values.shape) if a.requires_grad else None
        gb = _unbroadcast(db(g, a.values, b.values), b.values.shape) if b.requires_grad else None
        return ga, gb

    return _record(op, values, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    return _binary("hadamard", a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _record("scale", a.values * s, (a,), lambda g: (g * s,))


def shift(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _record("shift", a.values + s, (a,), lambda g: (g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    values = a.values @ b.values

    def backward(g: np.ndarray):
        ga = g @ b.values.T if a.requires_grad else None
        gb = a.values.T @ g if b.requires_grad else None
        return ga, gb

    return _record("matmul", values, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d tensor, got shape {a.shape}")
    return _record("transpose", np.ascontiguousarray(a.values.T), (a,),
                   lambda g: (np.ascontiguousarray(g.T),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        values = a.values.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from exc
    old = a.values.shape
    return _record("reshape", np.ascontiguousarray(values), (a,),
                   lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat: empty tensor list")
    values = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.values.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray):
        pieces = np.split(g, splits, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(pieces, tensors))

    return _record("concat", values, tuple(tensors), backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    n = a.values.shape[axis]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice: [{start}:{stop}] out of range for axis {axis} of {a.shape}")
    index = tuple(slice(None) if ax != axis else slice(start, stop)
                  for ax in range(a.values.ndim))

    def backward(g: np.ndarray):
        full = np.zeros_like(a.values)
        full[index] = g
        return (full,)

    return _record("slice", np.ascontiguousarray(a.values[index]), (a,), backward)


def _reduce(op: str, a: Tensor, axis, np_fn, grad_fn) -> Tensor:
    values = np_fn(a.values, axis=axis)
    return _record(op, np.asarray(values), (a,), lambda g: (grad_fn(np.asarray(g)),))


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        return _reduce("sum", a, None, np.sum,
                       lambda g: np.broadcast_to(g, a.values.shape).copy())
    return _reduce("sum", a, axis, np.sum,
                   lambda g: np.broadcast_to(np.expand_dims(g, axis), a.values.shape).copy())


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.values.size if axis is None else a.values.shape[axis]
    if axis is None:
        return _reduce("mean", a, None, np.mean,
                       lambda g: np.broadcast_to(g / count, a.values.shape).copy())
    return _reduce("mean", a, axis, np.mean,
                   lambda g: np.broadcast_to(np.expand_dims(g / count, axis), a.values.shape).copy())


def square(a: Tensor) -> Tensor:
    return _record("square", a.values * a.values, (a,), lambda g: (g * 2.0 * a.values,))


def abs_(a: Tensor) -> Tensor:
    # Subgradient at 0 is 0; fine for an L1 loss on continuous data.
    return _record("abs", np.abs(a.values), (a,), lambda g: (g * np.sign(a.values),))


def stop_gradient(a: Tensor) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = a.values
    out.requires_grad = False
    out.grad = None
    out.op = "stop_gradient"
    out._parents = ()
    out._backward_fn = None
    out._consumed = False
    return out


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup (embedding). Gradient scatter-adds into the table."""
    idx = np.asarray(indices)
    if idx.ndim != 1 or table.values.ndim != 2:
        raise ShapeError(f"gather_rows: need 2-d table and 1-d indices, got {table.shape}, {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for table with {table.shape[0]} rows")
    values = np.ascontiguousarray(table.values[idx])

    def backward(g: np.ndarray):
        full = np.zeros_like(table.values)
        np.add.at(full, idx, g)
        return (full,)

    return _record("gather_rows", values, (table,), backward)


def straight_through(z: Tensor, quantized_values: np.ndarray) -> Tensor:
    """Forward: the quantized values exactly. Backward: gradient copies to z."""
    q = np.ascontiguousarray(quantized_values)
    if q.shape != z.values.shape:
        raise ShapeError(f"straight_through: shapes {q.shape} vs {z.shape}")
    return _record("straight_through", q, (z,), lambda g: (g,))


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def _topo(loss: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order  # parents before children


def backward(loss: Tensor) -> None:
    """Accumulate dloss/dx into .grad for every requires_grad ancestor of loss.

    loss must be a scalar (shape ()). Each recorded graph may be
    backpropagated once; absent .grad means zero.
    """
    if loss.values.shape != ():
        raise ContractError(f"backward requires a scalar loss, got shape {loss.values.shape}")
    if not loss.requires_grad:
        return  # loss is constant w.r.t. every leaf: all gradients are zero
    order = _topo(loss)
    for node in order:
        if node._parents and node._consumed:
            raise ContractError("backward already ran on this graph")
    for node in order:
        if node._parents:
            node._consumed = True
    if loss.grad is None:
        loss.grad = np.ones_like(loss.values)
    else:
        loss.grad = loss.grad + np.ones_like(loss.values)
    for node in reversed(order):
        if node._backward_fn is None or node.grad is None:
            continue
        grads = node._backward_fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, copy=True)
            else:
                parent.grad = parent.grad + g


def graph_trace(t: Tensor) -> str:
    """Debug dump: one line per recorded op, parents before children."""
    lines = []
    for node in _topo(t):
        parents = ", ".join(f"{p.op}{list(p.shape)}" for p in node._parents)
        lines.append(f"{node.op}{list(node.shape)} <- [{parents}]")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Bias-corrected Adam moments, keyed by parameter name."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: Mapping[str, Tensor]) -> None:
    """One Adam update over every parameter that received a gradient.

    Clears .grad on all given parameters afterwards.
    """
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.values)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.values)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.values = p.values - state.lr * update
        _check_finite(p.values, "adam_step")
    for p in params.values():
        p.grad = None


def parameters_vector(params: Mapping[str, Tensor]) -> np.ndarray:
    """Flatten parameters in name-insertion order (used for hashing/snapshots)."""
    return np.concatenate([params[k].values.ravel() for k in params]) if params else np.empty(0)
