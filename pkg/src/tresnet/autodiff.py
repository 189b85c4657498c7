"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records primitive applications while it is active (see
:func:`recording`).  Tensors created with :meth:`Tape.leaf` are the
differentiable inputs; everything else that flows into a primitive is a
constant.  :func:`backward` walks the tape in reverse and returns the gradient
of a scalar root with respect to every leaf.

The primitive set is closed::

    matmul add sub mul div neg exp log sigmoid softplus relu square
    sum mean row-gather column-concat broadcast-row

Elementwise binary primitives follow numpy broadcasting; their vector-Jacobian
products sum the incoming gradient back down to each operand's shape.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.special import expit

__all__ = [
    "PRIMITIVES",
    "DomainError",
    "ShapeError",
    "Tape",
    "Tensor",
    "apply_primitive",
    "backward",
    "grad_check",
    "no_record",
    "recording",
    "value_and_grad",
]


class ShapeError(ValueError):
    """Operand shapes are not conformable for the requested primitive."""


class DomainError(ValueError):
    """A primitive was applied outside its mathematical domain."""


# --------------------------------------------------------------------------- #
# tensors and tapes
# --------------------------------------------------------------------------- #


class Tensor:
    """Dense float64 array with an optional handle into the active tape."""

    __slots__ = ("values", "node", "tape")
    __array_ufunc__ = None  # ndarray <op> Tensor defers to the reflected Tensor method

    def __init__(self, values, node: int | None = None, tape: "Tape | None" = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.node = node
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar; every operator is a recorded primitive
    def __add__(self, other):
        return apply_primitive("add", [self, other])

    def __radd__(self, other):
        return apply_primitive("add", [other, self])

    def __sub__(self, other):
        return apply_primitive("sub", [self, other])

    def __rsub__(self, other):
        return apply_primitive("sub", [other, self])

    def __mul__(self, other):
        return apply_primitive("mul", [self, other])

    def __rmul__(self, other):
        return apply_primitive("mul", [other, self])

    def __truediv__(self, other):
        return apply_primitive("div", [self, other])

    def __rtruediv__(self, other):
        return apply_primitive("div", [other, self])

    def __neg__(self):
        return apply_primitive("neg", [self])

    def __matmul__(self, other):
        return apply_primitive("matmul", [self, other])

    def __rmatmul__(self, other):
        return apply_primitive("matmul", [other, self])


@dataclass
class Record:
    kind: str
    inputs: tuple  # node ids (int) or constant arrays
    attrs: dict
    value: np.ndarray


@dataclass
class Tape:
    """Ordered log of primitive applications; single owner while recording."""

    records: list[Record] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def leaf(self, values) -> Tensor:
        arr = np.array(values, dtype=np.float64)  # copy: leaves own their data
        self.records.append(Record("leaf", (), {}, arr))
        return Tensor(arr, len(self.records) - 1, self)

    def leaves(self) -> list[int]:
        return [i for i, r in enumerate(self.records) if r.kind == "leaf"]

    def _push(self, kind, inputs, attrs, value) -> int:
        self.records.append(Record(kind, tuple(inputs), attrs, value))
        return len(self.records) - 1

    def is_topological(self) -> bool:
        for i, rec in enumerate(self.records):
            for inp in rec.inputs:
                if isinstance(inp, int) and not inp < i:
                    return False
        return True

    def replay(self) -> bool:
        """Recompute every recorded output from its inputs; True iff bit-identical."""
        for rec in self.records:
            if rec.kind == "leaf":
                continue
            args = [self.records[i].value if isinstance(i, int) else i for i in rec.inputs]
            again = _FORWARD[rec.kind](args, rec.attrs)
            if again.shape != rec.value.shape or not np.array_equal(again, rec.value):
                return False
        return True


_state = threading.local()


def _active() -> Tape | None:
    if getattr(_state, "paused", 0):
        return None
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


@contextmanager
def recording(tape: Tape):
    """Make ``tape`` the active tape for the current thread."""
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    stack.append(tape)
    try:
        yield tape
    finally:
        stack.pop()


@contextmanager
def no_record():
    """Disable recording; primitives then return untracked tensors."""
    _state.paused = getattr(_state, "paused", 0) + 1
    try:
        yield
    finally:
        _state.paused -= 1


# --------------------------------------------------------------------------- #
# primitive table
# --------------------------------------------------------------------------- #


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(kind, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _fwd_matmul(args, attrs):
    a, b = args
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _fwd_binary(op, kind):
    def fwd(args, attrs):
        a, b = args
        _check_broadcast(kind, a, b)
        return op(a, b)

    return fwd


def _fwd_div(args, attrs):
    a, b = args
    _check_broadcast("div", a, b)
    if np.any(b == 0):
        raise DomainError("div: division by zero")
    return a / b


def _fwd_log(args, attrs):
    (x,) = args
    if np.any(x <= 0):
        raise DomainError("log: non-positive argument")
    return np.log(x)


def _sigmoid(x):
    return expit(x)


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _fwd_reduce(fn):
    def fwd(args, attrs):
        (x,) = args
        axis = attrs.get("axis")
        if axis is not None and not -x.ndim <= axis < x.ndim:
            raise ShapeError(f"reduction axis {axis} out of range for shape {x.shape}")
        return np.asarray(fn(x, axis=axis, keepdims=attrs.get("keepdims", False)))

    return fwd


def _fwd_gather(args, attrs):
    (x,) = args
    idx = attrs["index"]
    if x.ndim == 0:
        raise ShapeError("row-gather: needs at least one dimension")
    if idx.size and (idx.min() < -x.shape[0] or idx.max() >= x.shape[0]):
        raise ShapeError("row-gather: index out of range")
    return x[idx]


def _fwd_concat(args, attrs):
    if any(a.ndim != 2 for a in args):
        raise ShapeError("column-concat: operands must be 2-D")
    if len({a.shape[0] for a in args}) != 1:
        raise ShapeError("column-concat: row counts differ")
    return np.concatenate(args, axis=1)


def _fwd_broadcast_row(args, attrs):
    (x,) = args
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] != 1:
        raise ShapeError(f"broadcast-row: expected a row, got {args[0].shape}")
    return np.repeat(x, attrs["rows"], axis=0)


_FORWARD: dict[str, Callable] = {
    "matmul": _fwd_matmul,
    "add": _fwd_binary(np.add, "add"),
    "sub": _fwd_binary(np.subtract, "sub"),
    "mul": _fwd_binary(np.multiply, "mul"),
    "div": _fwd_div,
    "neg": lambda args, attrs: -args[0],
    "exp": lambda args, attrs: np.exp(args[0]),
    "log": _fwd_log,
    "sigmoid": lambda args, attrs: _sigmoid(args[0]),
    "softplus": lambda args, attrs: _softplus(args[0]),
    "relu": lambda args, attrs: np.maximum(args[0], 0.0),
    "square": lambda args, attrs: args[0] * args[0],
    "sum": _fwd_reduce(np.sum),
    "mean": _fwd_reduce(np.mean),
    "row-gather": _fwd_gather,
    "column-concat": _fwd_concat,
    "broadcast-row": _fwd_broadcast_row,
}

PRIMITIVES = frozenset(_FORWARD)


def _scatter_rows(g, idx, shape):
    gx = np.zeros(shape)
    if idx.size == 0:
        return gx
    idx = np.where(idx < 0, idx + shape[0], idx)
    if np.unique(idx).size == idx.size:
        gx[idx] = g
        return gx
    scatter = sparse.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(shape[0], idx.size))
    return np.asarray(scatter @ g.reshape(idx.size, -1)).reshape(shape)


def _expand_reduced(g, x, attrs):
    axis = attrs.get("axis")
    if axis is not None and not attrs.get("keepdims", False):
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, x.shape)


def _vjp(kind, g, args, out, attrs, need):
    """Vector-Jacobian product for each input flagged in ``need`` (others get None)."""
    if kind == "matmul":
        a, b = args
        return (g @ b.T if need[0] else None), (a.T @ g if need[1] else None)
    if kind == "add":
        a, b = args
        return (_unbroadcast(g, a.shape) if need[0] else None), (_unbroadcast(g, b.shape) if need[1] else None)
    if kind == "sub":
        a, b = args
        return (_unbroadcast(g, a.shape) if need[0] else None), (_unbroadcast(-g, b.shape) if need[1] else None)
    if kind == "mul":
        a, b = args
        return (_unbroadcast(g * b, a.shape) if need[0] else None), (_unbroadcast(g * a, b.shape) if need[1] else None)
    if kind == "div":
        a, b = args
        ga = _unbroadcast(g / b, a.shape) if need[0] else None
        gb = _unbroadcast(-g * out / b, b.shape) if need[1] else None
        return ga, gb
    if kind == "neg":
        return (-g,)
    if kind == "exp":
        return (g * out,)
    if kind == "log":
        return (g / args[0],)
    if kind == "sigmoid":
        return (g * out * (1.0 - out),)
    if kind == "softplus":
        return (g * _sigmoid(args[0]),)
    if kind == "relu":
        return (g * (out > 0),)
    if kind == "square":
        return (2.0 * g * args[0],)
    if kind == "sum":
        return (_expand_reduced(g, args[0], attrs).copy(),)
    if kind == "mean":
        x = args[0]
        axis = attrs.get("axis")
        count = x.size if axis is None else x.shape[axis]
        return (_expand_reduced(g, x, attrs) / count,)
    if kind == "row-gather":
        return (_scatter_rows(g, attrs["index"], args[0].shape),)
    if kind == "column-concat":
        edges = np.cumsum([a.shape[1] for a in args])[:-1]
        return tuple(np.split(g, edges, axis=1))
    if kind == "broadcast-row":
        return (g.sum(axis=0).reshape(args[0].shape),)
    raise KeyError(kind)  # pragma: no cover


def apply_primitive(kind: str, inputs: Sequence, **attrs) -> Tensor:
    """Apply a primitive to tensors (or array-likes treated as constants).

    The result is recorded on the active tape when at least one input lives on
    that tape; otherwise it is an untracked constant.
    """
    try:
        fwd = _FORWARD[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    if kind == "row-gather":
        attrs["index"] = np.asarray(attrs["index"], dtype=np.intp)
    tensors = [x if isinstance(x, Tensor) else Tensor(x) for x in inputs]
    out = fwd([t.values for t in tensors], attrs)
    tape = _active()
    if tape is not None and any(t.tape is tape and t.node is not None for t in tensors):
        refs = [t.node if t.tape is tape and t.node is not None else t.values for t in tensors]
        return Tensor(out, tape._push(kind, refs, attrs, out), tape)
    return Tensor(out)


# functional spellings ------------------------------------------------------ #


def _unary(kind):
    def op(x):
        return apply_primitive(kind, [x])

    op.__name__ = kind
    return op


exp = _unary("exp")
log = _unary("log")
sigmoid = _unary("sigmoid")
softplus = _unary("softplus")
relu = _unary("relu")
square = _unary("square")
neg = _unary("neg")


def matmul(a, b):
    return apply_primitive("matmul", [a, b])


def sum(x, axis: int | None = None, keepdims: bool = False):  # noqa: A001
    return apply_primitive("sum", [x], axis=axis, keepdims=keepdims)


def mean(x, axis: int | None = None, keepdims: bool = False):
    return apply_primitive("mean", [x], axis=axis, keepdims=keepdims)


def row_gather(x, index):
    return apply_primitive("row-gather", [x], index=index)


def column_concat(parts):
    return apply_primitive("column-concat", list(parts))


def broadcast_row(x, rows: int):
    return apply_primitive("broadcast-row", [x], rows=int(rows))


def clamp(x, bound: float):
    """Clamp to [-bound, bound] composed from relu; saturated outputs are exactly +-bound."""
    upper = bound - relu(bound - x)
    return relu(upper + bound) - bound


# --------------------------------------------------------------------------- #
# reverse pass
# --------------------------------------------------------------------------- #


def backward(tape: Tape, root: Tensor) -> dict[int, np.ndarray]:
    """Gradient of the scalar ``root`` with respect to every leaf on ``tape``.

    Returns a mapping from leaf node id to gradient array.  Leaves that do not
    influence the root map to zeros.
    """
    if root.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    if root.tape is not tape or root.node is None:
        raise ValueError("backward: root is not on this tape")
    records = tape.records
    grads: dict[int, np.ndarray] = {root.node: np.ones_like(root.values)}
    for i in range(root.node, -1, -1):
        g = grads.get(i)
        rec = records[i]
        if g is None or rec.kind == "leaf":
            continue
        del grads[i]
        args = [records[j].value if isinstance(j, int) else j for j in rec.inputs]
        need = [isinstance(ref, int) for ref in rec.inputs]
        for ref, gi in zip(rec.inputs, _vjp(rec.kind, g, args, rec.value, rec.attrs, need)):
            if gi is not None and isinstance(ref, int):
                prev = grads.get(ref)
                grads[ref] = gi if prev is None else prev + gi
    out = {}
    for i, rec in enumerate(records):
        if rec.kind == "leaf":
            g = grads.get(i)
            out[i] = np.zeros_like(rec.value) if g is None else np.asarray(g, dtype=np.float64).reshape(rec.value.shape)
    return out


def value_and_grad(fn: Callable[..., Tensor], *arrays) -> tuple[float, list[np.ndarray]]:
    """Evaluate ``fn`` on fresh leaves built from ``arrays`` and differentiate it."""
    tape = Tape()
    with recording(tape):
        leaves = [tape.leaf(a) for a in arrays]
        out = fn(*leaves)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ShapeError("value_and_grad: function must return a scalar tensor")
    if out.node is None:  # constant function
        return float(out.values), [np.zeros_like(leaf.values) for leaf in leaves]
    g = backward(tape, out)
    return float(out.values), [g[leaf.node] for leaf in leaves]


def grad_check(fn: Callable[[Tensor], Tensor], point, step: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|)."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(point, dtype=np.float64)
    _, (analytic,) = value_and_grad(fn, x)
    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_record():
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            hi = fn(Tensor(x)).values
            flat[k] = orig - step
            lo = fn(Tensor(x)).values
            flat[k] = orig
            if np.size(hi) != 1:
                raise ShapeError("grad_check: function must return a scalar tensor")
            num_flat[k] = (float(hi) - float(lo)) / (2.0 * step)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
