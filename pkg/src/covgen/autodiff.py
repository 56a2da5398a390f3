"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Every model computation is composed from a closed set of primitives, each
with one forward rule and one backward rule registered in ``BACKWARD``:

    matmul, add, mul, tanh, sigmoid, concat, gather_rows, scatter_add,
    reduce_sum, minimum, masked_softmax, log, reshape

A :class:`Tape` records primitive applications in execution order; calling
:func:`backprop` replays them in reverse.  A tape built with
``record=False`` only evaluates values, which is what decoding uses.
"""

from __future__ import annotations

from collections import namedtuple
from typing import Callable, Sequence

import numpy as np

from covgen import kernels

Entry = namedtuple("Entry", ["prim", "inputs", "output", "saved"])

LOG_FLOOR = 1e-12


class Node:
    """Handle to one value on a tape."""

    __slots__ = ("tape", "id")
    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, tape: "Tape", id: int):
        self.tape = tape
        self.id = id

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.id]

    @property
    def shape(self) -> tuple:
        return self.tape.values[self.id].shape

    def __repr__(self):
        return f"Node(id={self.id}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_lift(self.tape, other))

    def __rsub__(self, other):
        return add(_lift(self.tape, other), -self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(_lift(self.tape, other), self)


class Tape:
    """Ordered record of primitive applications.

    ``params`` maps parameter names to leaf node ids; only those leaves
    receive gradients from :func:`backprop`.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self.values: list[np.ndarray] = []
        self.needs_grad: list[bool] = []
        self.entries: list[Entry] = []
        self.params: dict[str, int] = {}

    def _push(self, value: np.ndarray, needs_grad: bool) -> Node:
        self.values.append(value)
        self.needs_grad.append(needs_grad and self.record)
        return Node(self, len(self.values) - 1)

    def param(self, name: str, value) -> Node:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        node = self._push(np.asarray(value, dtype=np.float64), True)
        self.params[name] = node.id
        return node

    def const(self, value) -> Node:
        return self._push(np.asarray(value, dtype=np.float64), False)

    def __len__(self):
        return len(self.entries)


def _lift(tape: Tape, x) -> Node:
    if isinstance(x, Node):
        if x.tape is not tape:
            raise ValueError("nodes belong to different tapes")
        return x
    return tape.const(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise TypeError("at least one operand must be a Node")


def _apply(prim: str, inputs: Sequence[Node], value: np.ndarray, saved=None) -> Node:
    tape = inputs[0].tape
    needs = any(tape.needs_grad[x.id] for x in inputs)
    out = tape._push(value, needs)
    if needs:
        tape.entries.append(Entry(prim, tuple(x.id for x in inputs), out.id, saved))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a, b) -> Node:
    """``a @ b`` with numpy semantics; ``b`` is 1-D or 2-D, or batched like ``a``."""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.value.ndim < 2:
        raise ValueError("matmul: left operand must be at least 2-D")
    return _apply("matmul", (a, b), a.value @ b.value)


def add(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    return _apply("add", (a, b), a.value + b.value)


def mul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    return _apply("mul", (a, b), a.value * b.value)


def tanh(x: Node) -> Node:
    return _apply("tanh", (x,), np.tanh(x.value))


def sigmoid(x: Node) -> Node:
    return _apply("sigmoid", (x,), 0.5 * (np.tanh(0.5 * x.value) + 1.0))


def concat(xs: Sequence[Node], axis: int = -1) -> Node:
    tape = _tape_of(*xs)
    xs = [_lift(tape, x) for x in xs]
    value = np.concatenate([x.value for x in xs], axis=axis)
    ndim = value.ndim
    axis = axis % ndim
    sizes = [x.value.shape[axis] for x in xs]
    return _apply("concat", xs, value, (axis, sizes))


def gather_rows(table: Node, ids) -> Node:
    """``table[ids]`` for an integer index array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    return _apply("gather_rows", (table,), table.value[ids], ids)


def scatter_add(src: Node, idx, width: int) -> Node:
    """``out[r, idx[r, i]] += src[r, i]`` into a zero (rows, width) array."""
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if src.value.shape != idx.shape or src.value.ndim != 2:
        raise ValueError("scatter_add: src and idx must be matching 2-D arrays")
    value = kernels.scatter_add_rows(src.value, idx, width)
    return _apply("scatter_add", (src,), value, idx)


def reduce_sum(x: Node, axis=None, keepdims: bool = False) -> Node:
    value = np.sum(x.value, axis=axis, keepdims=keepdims)
    return _apply("reduce_sum", (x,), np.asarray(value), (axis, keepdims))


def minimum(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    return _apply("minimum", (a, b), np.minimum(a.value, b.value))


def masked_softmax(logits: Node, mask=None) -> Node:
    """Softmax over the last axis; entries where ``mask`` is false get exactly 0."""
    x = logits.value
    if x.ndim == 0:
        raise ValueError("masked_softmax needs at least one axis")
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    n = x.shape[-1]
    y = kernels.masked_softmax_rows(x.reshape(-1, n), mask.reshape(-1, n))
    return _apply("masked_softmax", (logits,), y.reshape(x.shape))


def log(x: Node, floor: float = LOG_FLOOR) -> Node:
    """Natural log of ``max(x, floor)``; no gradient below the floor."""
    return _apply("log", (x,), np.log(np.maximum(x.value, floor)), floor)


def reshape(x: Node, shape) -> Node:
    return _apply("reshape", (x,), x.value.reshape(shape))


def relu(x: Node) -> Node:
    # composed: relu(x) = x - min(x, 0)
    return x - minimum(x, 0.0)


# ---------------------------------------------------------------------------
# backward rules: (g, input values, output value, saved) -> input grads
# ---------------------------------------------------------------------------


def _matmul_bw(g, ins, out, saved):
    a, b = ins
    if b.ndim == 1:
        ga = g[..., None] * b
        gb = np.tensordot(a, g, axes=(tuple(range(a.ndim - 1)), tuple(range(g.ndim))))
        return ga, gb
    ga = g @ np.swapaxes(b, -1, -2)
    if b.ndim == 2:
        k = a.shape[-1]
        gb = a.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
    else:
        gb = _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)
    return _unbroadcast(ga, a.shape), gb


def _add_bw(g, ins, out, saved):
    return _unbroadcast(g, ins[0].shape), _unbroadcast(g, ins[1].shape)


def _mul_bw(g, ins, out, saved):
    a, b = ins
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _tanh_bw(g, ins, out, saved):
    return (g * (1.0 - out * out),)


def _sigmoid_bw(g, ins, out, saved):
    return (g * out * (1.0 - out),)


def _concat_bw(g, ins, out, saved):
    axis, sizes = saved
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


def _gather_rows_bw(g, ins, out, saved):
    table = ins[0]
    ids = saved
    flat = g.reshape(-1, *table.shape[1:])
    if table.ndim == 2:
        return (kernels.index_add_rows(table.shape[0], ids.ravel(), flat),)
    gt = np.zeros_like(table)
    np.add.at(gt, ids.ravel(), flat)
    return (gt,)


def _scatter_add_bw(g, ins, out, saved):
    return (kernels.gather_cols(g, saved),)


def _reduce_sum_bw(g, ins, out, saved):
    axis, keepdims = saved
    x = ins[0]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def _minimum_bw(g, ins, out, saved):
    a, b = ins
    wa = np.where(a < b, 1.0, np.where(a == b, 0.5, 0.0))
    return _unbroadcast(g * wa, a.shape), _unbroadcast(g * (1.0 - wa), b.shape)


def _masked_softmax_bw(g, ins, out, saved):
    n = out.shape[-1]
    gx = kernels.softmax_rows_backward(out.reshape(-1, n), g.reshape(-1, n))
    return (gx.reshape(out.shape),)


def _log_bw(g, ins, out, saved):
    x = ins[0]
    floor = saved
    return (np.where(x > floor, g / np.maximum(x, floor), 0.0),)


def _reshape_bw(g, ins, out, saved):
    return (g.reshape(ins[0].shape),)


BACKWARD: dict[str, Callable] = {
    "matmul": _matmul_bw,
    "add": _add_bw,
    "mul": _mul_bw,
    "tanh": _tanh_bw,
    "sigmoid": _sigmoid_bw,
    "concat": _concat_bw,
    "gather_rows": _gather_rows_bw,
    "scatter_add": _scatter_add_bw,
    "reduce_sum": _reduce_sum_bw,
    "minimum": _minimum_bw,
    "masked_softmax": _masked_softmax_bw,
    "log": _log_bw,
    "reshape": _reshape_bw,
}

PRIMITIVES = tuple(BACKWARD)


def backprop(tape: Tape, loss: Node) -> dict[str, np.ndarray]:
    """Gradient of the scalar ``loss`` with respect to every tape parameter.

    Parameters the loss does not depend on get zero gradients.
    """
    if not tape.record:
        raise ValueError("tape was built with record=False")
    if loss.tape is not tape:
        raise ValueError("loss node is not on this tape")
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
    values = tape.values
    for entry in reversed(tape.entries):
        g = grads.pop(entry.output, None)
        if g is None:
            continue
        ins = [values[i] for i in entry.inputs]
        in_grads = BACKWARD[entry.prim](g, ins, values[entry.output], entry.saved)
        for i, gi in zip(entry.inputs, in_grads):
            if not tape.needs_grad[i]:
                continue
            if i in grads:
                grads[i] = grads[i] + gi
            else:
                grads[i] = gi
    out = {}
    for name, i in tape.params.items():
        gi = grads.get(i)
        out[name] = np.zeros_like(values[i]) if gi is None else np.asarray(gi, dtype=np.float64).reshape(values[i].shape)
    return out
