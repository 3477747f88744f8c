"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records primitive operations as they execute; calling
:meth:`Tape.backward` on a scalar root replays the tape in reverse and
accumulates adjoints for every node it visits.  The op set is deliberately
small: exactly what closed-loop rollouts, penalty losses and MLP policies
need.  All arithmetic is plain numpy on float64, so a forward/backward pair
is bit-deterministic for fixed inputs.

Operations also run *eagerly*: applying an op to plain arrays (or tensors
that live on no tape) computes the value without recording anything.  The
same loss code therefore serves both training (taped) and evaluation
(untaped), which removes a whole class of train/eval drift bugs.

Conventions:
  * relu has subgradient 0 at exactly 0.
  * l2norm has gradient 0 at the origin.
  * a tape is single-writer; tensors from different tapes must not mix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class NonFiniteError(ValueError):
    """An operand contained NaN or infinity."""


class Tensor:
    """A dense float64 array, optionally bound to a node on a tape."""

    __slots__ = ("values", "tape", "node")

    def __init__(self, values, tape=None, node=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def __repr__(self):
        where = f" node={self.node}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{where})"

    # Small amount of operator sugar; the named functions below are the API.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    kind: str
    input_ids: tuple
    input_values: tuple
    values: np.ndarray
    attrs: dict = field(default_factory=dict)
    is_param: bool = False


class Tape:
    """Append-only record of one forward pass.

    Rebuild a fresh tape for every forward pass; adjoint state is created
    per :meth:`backward` call, so repeated backward passes from the same
    root return identical gradient maps.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def _append(self, node: Node) -> Tensor:
        self.nodes.append(node)
        return Tensor(node.values, tape=self, node=len(self.nodes) - 1)

    def leaf(self, values) -> Tensor:
        """Place a constant input on the tape."""
        v = _checked_values("leaf", np.asarray(values, dtype=np.float64))
        return self._append(Node("leaf", (), (), v))

    def param(self, values) -> Tensor:
        """Place a trainable input on the tape (copied defensively)."""
        v = _checked_values("param", np.array(values, dtype=np.float64))
        return self._append(Node("param", (), (), v, is_param=True))

    @property
    def param_ids(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.is_param]

    def record(self, kind: str, *inputs, **attrs) -> Tensor:
        """Execute one primitive op and append it to this tape.

        Inputs may be tensors on this tape, untaped tensors, or plain
        arrays; the latter two enter the node as constants.  Mixing in a
        tensor from another tape is an error.
        """
        tensors = [as_tensor(x) for x in inputs]
        for t in tensors:
            if t.tape is not None and t.tape is not self:
                raise ValueError("input tensor belongs to a different tape")
        values = _forward(kind, [t.values for t in tensors], attrs)
        node = Node(
            kind,
            tuple(t.node if t.tape is self else None for t in tensors),
            tuple(t.values for t in tensors),
            values,
            attrs,
        )
        return self._append(node)

    def backward(self, root: Tensor) -> dict[int, np.ndarray]:
        """Reverse sweep from a scalar root.

        Returns a map from node id to adjoint array for every node the
        sweep reached; parameters the root does not depend on are included
        with zero adjoints so callers always see one entry per parameter.
        """
        if root.tape is not self or root.node is None:
            raise ValueError("backward root is not on this tape")
        if root.values.size != 1:
            raise ShapeError(
                f"backward root must be scalar-sized, got shape {root.values.shape}"
            )
        adjoints: dict[int, np.ndarray] = {
            root.node: np.ones_like(self.nodes[root.node].values)
        }
        for nid in range(root.node, -1, -1):
            g = adjoints.get(nid)
            if g is None:
                continue
            node = self.nodes[nid]
            if node.kind in ("leaf", "param"):
                continue
            for input_pos, contribution in _vjp(node, g):
                input_id = node.input_ids[input_pos]
                if input_id is None:
                    continue  # constant operand: no adjoint to route
                prev = adjoints.get(input_id)
                adjoints[input_id] = contribution if prev is None else prev + contribution
        for pid in self.param_ids:
            if pid not in adjoints:
                adjoints[pid] = np.zeros_like(self.nodes[pid].values)
        return adjoints


# ---------------------------------------------------------------------------
# forward rules

def _checked_values(kind, v):
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{kind}: input contains non-finite values")
    return v


def _forward(kind, vals, attrs):
    vals = [_checked_values(kind, v) for v in vals]
    if kind in ("add", "subtract", "multiply"):
        a, b = vals
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(
                f"{kind}: shapes {a.shape} and {b.shape} do not broadcast"
            ) from None
        if kind == "add":
            return a + b
        if kind == "subtract":
            return a - b
        return a * b
    if kind == "matmul":
        a, b = vals
        if a.ndim not in (1, 2) or b.ndim not in (1, 2):
            raise ShapeError(f"matmul: operands must be 1-D or 2-D, got {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
        return a @ b
    if kind == "relu":
        (a,) = vals
        return np.maximum(a, 0.0)
    if kind == "square":
        (a,) = vals
        return a * a
    if kind == "sum":
        (a,) = vals
        return np.asarray(a.sum())
    if kind == "mean":
        (a,) = vals
        return np.asarray(a.mean())
    if kind == "scale":
        (a,) = vals
        c = attrs["factor"]
        if not np.isfinite(c):
            raise NonFiniteError("scale: factor is non-finite")
        return a * c
    if kind == "concat":
        axis = attrs["axis"]
        ndims = {v.ndim for v in vals}
        if len(ndims) != 1:
            raise ShapeError(f"concat: mixed ranks {[v.shape for v in vals]}")
        try:
            return np.concatenate(vals, axis=axis)
        except ValueError:
            raise ShapeError(
                f"concat: shapes {[v.shape for v in vals]} on axis {axis}"
            ) from None
    if kind == "narrow":
        (a,) = vals
        axis, start, stop = attrs["axis"], attrs["start"], attrs["stop"]
        if not (0 <= start < stop <= a.shape[axis]):
            raise ShapeError(
                f"narrow: [{start}:{stop}] out of range for axis {axis} of {a.shape}"
            )
        index = [slice(None)] * a.ndim
        index[axis] = slice(start, stop)
        return a[tuple(index)]
    if kind == "transpose":
        (a,) = vals
        if a.ndim != 2:
            raise ShapeError(f"transpose: expected 2-D, got {a.shape}")
        return a.T
    if kind == "l2norm":
        (a,) = vals
        if a.ndim not in (1, 2):
            raise ShapeError(f"l2norm: expected 1-D or 2-D, got {a.shape}")
        return np.asarray(np.sqrt(np.sum(a * a, axis=-1)))
    raise ValueError(f"unknown operation kind {kind!r}")


# ---------------------------------------------------------------------------
# backward rules

def _unbroadcast(g, shape):
    """Reduce an adjoint back to the shape of a broadcast operand."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _vjp(node, g):
    kind = kind_ = node.kind
    vals = node.input_values
    if kind == "add":
        return [(0, _unbroadcast(g, vals[0].shape)), (1, _unbroadcast(g, vals[1].shape))]
    if kind == "subtract":
        return [(0, _unbroadcast(g, vals[0].shape)), (1, _unbroadcast(-g, vals[1].shape))]
    if kind == "multiply":
        a, b = vals
        return [(0, _unbroadcast(g * b, a.shape)), (1, _unbroadcast(g * a, b.shape))]
    if kind == "matmul":
        a, b = vals
        if a.ndim == 2 and b.ndim == 2:
            return [(0, g @ b.T), (1, a.T @ g)]
        if a.ndim == 2 and b.ndim == 1:
            return [(0, np.outer(g, b)), (1, a.T @ g)]
        if a.ndim == 1 and b.ndim == 2:
            return [(0, b @ g), (1, np.outer(a, g))]
        # 1-D @ 1-D produces a scalar
        return [(0, g * b), (1, g * a)]
    if kind == "relu":
        (a,) = vals
        return [(0, g * (a > 0.0))]
    if kind == "square":
        (a,) = vals
        return [(0, 2.0 * a * g)]
    if kind == "sum":
        (a,) = vals
        return [(0, np.broadcast_to(g, a.shape).copy())]
    if kind == "mean":
        (a,) = vals
        return [(0, np.broadcast_to(g / a.size, a.shape).copy())]
    if kind == "scale":
        return [(0, g * node.attrs["factor"])]
    if kind == "concat":
        axis = node.attrs["axis"]
        out, offset = [], 0
        for pos, v in enumerate(vals):
            width = v.shape[axis]
            index = [slice(None)] * v.ndim
            index[axis] = slice(offset, offset + width)
            out.append((pos, g[tuple(index)]))
            offset += width
        return out
    if kind == "narrow":
        (a,) = vals
        axis, start, stop = node.attrs["axis"], node.attrs["start"], node.attrs["stop"]
        full = np.zeros_like(a)
        index = [slice(None)] * a.ndim
        index[axis] = slice(start, stop)
        full[tuple(index)] = g
        return [(0, full)]
    if kind == "transpose":
        return [(0, g.T)]
    if kind == "l2norm":
        (a,) = vals
        norms = node.values
        safe = np.where(norms > 0.0, norms, 1.0)
        if a.ndim == 1:
            grad = (g / safe) * a if norms > 0.0 else np.zeros_like(a)
        else:
            grad = (g / safe)[:, None] * a
            grad[norms == 0.0] = 0.0
        return [(0, grad)]
    raise ValueError(f"unknown operation kind {kind_!r}")


# ---------------------------------------------------------------------------
# functional front end: taped when any input is taped, eager otherwise

def _apply(kind, *inputs, **attrs):
    tensors = [as_tensor(x) for x in inputs]
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError("cannot combine tensors from different tapes")
    if tape is not None:
        return tape.record(kind, *tensors, **attrs)
    return Tensor(_forward(kind, [t.values for t in tensors], attrs))


def add(a, b):
    return _apply("add", a, b)


def subtract(a, b):
    return _apply("subtract", a, b)


def multiply(a, b):
    return _apply("multiply", a, b)


def matmul(a, b):
    return _apply("matmul", a, b)


def relu(a):
    return _apply("relu", a)


def square(a):
    return _apply("square", a)


def reduce_sum(a):
    return _apply("sum", a)


def reduce_mean(a):
    return _apply("mean", a)


def scale(a, factor: float):
    return _apply("scale", a, factor=float(factor))


def concat(parts, axis: int = 0):
    return _apply("concat", *parts, axis=int(axis))


def narrow(a, axis: int, start: int, stop: int):
    """Contiguous slice [start:stop) along one axis."""
    return _apply("narrow", a, axis=int(axis), start=int(start), stop=int(stop))


def transpose(a):
    return _apply("transpose", a)


def l2norm(a):
    """Euclidean norm: 1-D input -> scalar, 2-D input -> per-row norms."""
    return _apply("l2norm", a)
