"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tape` records primitive operations as an append-only list, so the
list order is already a topological order of the computation graph.  Each
node carries one float64 array; complex quantities are handled one level up
(:mod:`risnet_lab.linalg`) as pairs of real nodes, which keeps every
derivative an ordinary real derivative and makes finite-difference checking
direct.

The free functions in this module (``relu``, ``log2``, ``matmul``, ...)
accept either :class:`Node` operands or plain arrays/scalars.  With no node
among the arguments they reduce to the corresponding numpy call, so the same
expression can be evaluated numerically or recorded for differentiation.
The backward pass walks the tape once in reverse with a fixed accumulation
order; repeated runs on identical inputs are bit-identical.

ReLU has derivative 0 at exactly 0.  atan2 has gradient 0 at the (0, 0)
singularity instead of NaN; both choices are relied on by callers.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .exceptions import ContractError, EvaluationError, ShapeError

__all__ = [
    "Tape",
    "Node",
    "Gradients",
    "backward",
    "finite_difference_check",
    "matmul",
    "relu",
    "log2",
    "sin",
    "cos",
    "atan2",
    "reciprocal",
    "concatenate",
    "take",
    "broadcast_to",
]

_LN2 = math.log(2.0)


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape`` by summing the
    broadcast axes."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class _Record:
    __slots__ = ("parents", "vjps")

    def __init__(self, parents, vjps):
        self.parents = parents
        self.vjps = vjps


class Tape:
    """Append-only record of primitive operations.

    A tape is single-writer: one forward/backward pass owns it exclusively.
    Independent computations use independent tapes.
    """

    __slots__ = ("_records",)

    def __init__(self):
        self._records: list[_Record] = []

    def __len__(self) -> int:
        return len(self._records)

    def _append(self, value: np.ndarray, parents, vjps) -> "Node":
        self._records.append(_Record(parents, vjps))
        return Node(self, len(self._records) - 1, value)

    def leaf(self, value) -> "Node":
        """Record an input node (typically a trainable parameter)."""
        return self._append(_as_array(value).copy(), (), ())


class Node:
    """One array-valued entry on a tape.  Values are read-only by convention."""

    __slots__ = ("tape", "index", "value")

    # Make numpy defer mixed ndarray-Node arithmetic to the reflected
    # operators instead of coercing the node into an object array.
    __array_ufunc__ = None

    def __init__(self, tape: Tape, index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        return _add(self, other)

    def __radd__(self, other):
        return _add(other, self)

    def __sub__(self, other):
        return _sub(self, other)

    def __rsub__(self, other):
        return _sub(other, self)

    def __mul__(self, other):
        return _mul(self, other)

    def __rmul__(self, other):
        return _mul(other, self)

    def __neg__(self):
        return _mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Node):
            return _mul(self, reciprocal(other))
        return _mul(self, 1.0 / _as_array(other))

    def __rtruediv__(self, other):
        return _mul(other, reciprocal(self))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    # -- shape manipulation ----------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.value.shape
        out = self.value.reshape(shape)
        return self.tape._append(
            out, (self.index,), (lambda g: g.reshape(old),)
        )

    @property
    def T(self):
        out = self.value.T.copy()
        return self.tape._append(out, (self.index,), (lambda g: g.T,))

    # -- reductions --------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        val = self.value
        out = val.sum(axis=axis, keepdims=keepdims)

        def vjp(g, shape=val.shape, axis=axis, keepdims=keepdims):
            if axis is None:
                return np.broadcast_to(g, shape)
            if not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape)

        return self.tape._append(np.asarray(out), (self.index,), (vjp,))

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.value.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for a in axes:
                n *= self.value.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def __repr__(self):
        return f"Node(shape={self.value.shape}, index={self.index})"


def _tape_of(*operands) -> Tape:
    tape = None
    for x in operands:
        if isinstance(x, Node):
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise ContractError("operands live on different tapes")
    assert tape is not None
    return tape


def _value(x):
    return x.value if isinstance(x, Node) else _as_array(x)


def _binary(a, b, fwd, vjp_a: Callable, vjp_b: Callable):
    if not isinstance(a, Node) and not isinstance(b, Node):
        return fwd(_as_array(a), _as_array(b))
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    out = fwd(av, bv)
    parents, vjps = [], []
    if isinstance(a, Node):
        parents.append(a.index)
        vjps.append(lambda g: _unbroadcast(vjp_a(g, av, bv), av.shape))
    if isinstance(b, Node):
        parents.append(b.index)
        vjps.append(lambda g: _unbroadcast(vjp_b(g, av, bv), bv.shape))
    return tape._append(out, tuple(parents), tuple(vjps))


def _unary(x, fwd, vjp: Callable):
    if not isinstance(x, Node):
        return fwd(_as_array(x))
    xv = x.value
    out = fwd(xv)
    return x.tape._append(
        out, (x.index,), (lambda g: vjp(g, xv),)
    )


def _add(a, b):
    return _binary(a, b, np.add, lambda g, av, bv: g, lambda g, av, bv: g)


def _sub(a, b):
    return _binary(a, b, np.subtract, lambda g, av, bv: g, lambda g, av, bv: -g)


def _mul(a, b):
    return _binary(a, b, np.multiply, lambda g, av, bv: g * bv, lambda g, av, bv: g * av)


def reciprocal(x):
    """Elementwise 1/x."""
    return _unary(x, lambda v: 1.0 / v, lambda g, v: -g / (v * v))


def relu(x):
    """Elementwise max(x, 0); derivative at exactly 0 is 0."""
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda g, v: g * (v > 0.0))


def log2(x):
    """Elementwise base-2 logarithm (positive inputs)."""
    return _unary(x, np.log2, lambda g, v: g / (v * _LN2))


def sin(x):
    return _unary(x, np.sin, lambda g, v: g * np.cos(v))


def cos(x):
    return _unary(x, np.cos, lambda g, v: -g * np.sin(v))


def atan2(y, x):
    """Elementwise arctan2(y, x) with gradient 0 at the (0, 0) singularity."""
    if not isinstance(y, Node) and not isinstance(x, Node):
        return np.arctan2(_as_array(y), _as_array(x))

    def gy(g, yv, xv):
        r2 = yv * yv + xv * xv
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(r2 == 0.0, 0.0, xv / np.where(r2 == 0.0, 1.0, r2))
        return g * d

    def gx(g, yv, xv):
        r2 = yv * yv + xv * xv
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(r2 == 0.0, 0.0, -yv / np.where(r2 == 0.0, 1.0, r2))
        return g * d

    return _binary(y, x, np.arctan2, gy, gx)


def matmul(a, b):
    """2-D matrix product, differentiable in either operand."""
    av, bv = _value(a), _value(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {av.shape} by {bv.shape}")
    return _binary(
        a,
        b,
        np.matmul,
        lambda g, av, bv: g @ bv.T,
        lambda g, av, bv: av.T @ g,
    )


def broadcast_to(x, shape):
    """Broadcast to ``shape``; the backward pass sums the broadcast axes."""
    if not isinstance(x, Node):
        return np.broadcast_to(_as_array(x), shape).copy()
    out = np.broadcast_to(x.value, shape).copy()
    orig = x.value.shape
    return x.tape._append(out, (x.index,), (lambda g: _unbroadcast(g, orig),))


def concatenate(parts: Sequence, axis: int = 0):
    """Concatenate nodes/arrays along ``axis``."""
    if not any(isinstance(p, Node) for p in parts):
        return np.concatenate([_as_array(p) for p in parts], axis=axis)
    tape = _tape_of(*parts)
    values = [_value(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    parents, vjps = [], []
    offset = 0
    for p, v in zip(parts, values):
        n = v.shape[axis]
        if isinstance(p, Node):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(offset, offset + n)
            parents.append(p.index)
            vjps.append(lambda g, sl=tuple(sl): np.ascontiguousarray(g[sl]))
        offset += n
    return tape._append(out, tuple(parents), tuple(vjps))


def take(x, indices, axis: int = 0):
    """Select ``indices`` along ``axis``; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    if not isinstance(x, Node):
        return np.take(_as_array(x), idx, axis=axis)
    xv = x.value
    out = np.take(xv, idx, axis=axis)

    def vjp(g):
        full = np.zeros_like(xv)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return full

    return x.tape._append(out, (x.index,), (vjp,))


class Gradients:
    """Adjoints produced by one backward pass, addressed by node."""

    __slots__ = ("_tape", "_adjoints")

    def __init__(self, tape: Tape, adjoints: list):
        self._tape = tape
        self._adjoints = adjoints

    def wrt(self, node: Node) -> np.ndarray:
        """Gradient of the root with respect to ``node`` (zeros if the root
        does not depend on it)."""
        if node.tape is not self._tape:
            raise ContractError("node does not belong to the differentiated tape")
        if node.index < len(self._adjoints):
            adj = self._adjoints[node.index]
            if adj is not None:
                return np.broadcast_to(adj, node.value.shape).astype(np.float64, copy=False)
        return np.zeros_like(node.value)

    __getitem__ = wrt


def backward(tape: Tape, root: Node) -> Gradients:
    """Reverse accumulation from a scalar ``root`` over the recorded graph."""
    if not isinstance(root, Node) or root.tape is not tape:
        raise ContractError("root is not a node of this tape")
    if root.value.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.value.shape}")
    adjoints: list = [None] * (root.index + 1)
    adjoints[root.index] = np.ones_like(root.value)
    records = tape._records
    for i in range(root.index, -1, -1):
        g = adjoints[i]
        if g is None:
            continue
        rec = records[i]
        for parent, vjp in zip(rec.parents, rec.vjps):
            contrib = vjp(g)
            if adjoints[parent] is None:
                adjoints[parent] = contrib
            else:
                adjoints[parent] = adjoints[parent] + contrib
    return Gradients(tape, adjoints)


def finite_difference_check(f, x, step: float = 1e-6) -> float:
    """Compare the recorded gradient of ``f`` at ``x`` against central
    differences.

    ``f`` must map a 1-D vector (node or plain array) to a scalar.  Returns
    the maximum over coordinates of ``|analytic - numeric| / max(1,
    |analytic|)``.  The numeric path never touches a tape.
    """
    if step <= 0:
        raise ContractError("finite-difference step must be positive")
    x = _as_array(x).ravel()

    tape = Tape()
    xn = tape.leaf(x)
    y = f(xn)
    if isinstance(y, Node):
        if not np.all(np.isfinite(y.value)):
            raise EvaluationError("function value is not finite at x")
        analytic = backward(tape, y).wrt(xn)
    else:
        # f ignored its argument; the gradient is identically zero.
        if not np.all(np.isfinite(_as_array(y))):
            raise EvaluationError("function value is not finite at x")
        analytic = np.zeros_like(x)

    numeric = np.empty_like(x)
    for k in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[k] += step
        xm[k] -= step
        fp = float(np.asarray(f(xp)))
        fm = float(np.asarray(f(xm)))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise EvaluationError(f"function value is not finite near coordinate {k}")
        numeric[k] = (fp - fm) / (2.0 * step)

    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
