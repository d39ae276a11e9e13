"""Reverse-mode autodiff on f64 scalars and rank-1/2 dense arrays.

Every differentiable quantity is a DiffValue node recorded on a Tape in
execution order; backward() walks the tape once in reverse and accumulates
adjoints. The op set is deliberately small: elementwise arithmetic with
scalar-with-array broadcasting only, 2-D matmul, a handful of nonlinearities,
axis reductions with deterministic arg-extremum subgradients, and gather-style
indexing (indices are plain integer arrays, never differentiated).
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DoubleBackward, NonScalarRoot, ShapeMismatch

ARCCOS_GUARD = 1e-12  # forward clamp for arccos; bias at |x|=1 is ~1.4e-6 rad


def _f64(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim > 2:
        raise ShapeMismatch(f"rank {a.ndim} > 2 not supported (shape {a.shape})")
    return a


class Parameter:
    """A named, trainable array with persistent identity for optimizer state."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, value):
        self.name = name
        self.value = _f64(value).copy()

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class DiffValue:
    """One node of the computation graph: value, adjoint, tape position."""

    __slots__ = ("tape", "idx", "value", "adjoint", "parents", "pull")

    def __init__(self, tape: "Tape", value, parents=(), pull=None):
        self.tape = tape
        self.value = _f64(value)
        self.adjoint = np.zeros_like(self.value)
        self.parents = parents
        self.pull = pull
        self.idx = tape._register(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"DiffValue(idx={self.idx}, shape={self.value.shape})"

    # arithmetic sugar; plain numbers/arrays become constant leaves
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self, tape=self.tape)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self, tape=self.tape)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Recording of one forward pass; single-threaded per instance."""

    def __init__(self):
        self._nodes: list[DiffValue] = []
        self._param_leaves: dict[Parameter, DiffValue] = {}
        self._ran_backward = False

    def _register(self, node: DiffValue) -> int:
        self._nodes.append(node)
        return len(self._nodes) - 1

    def const(self, value) -> DiffValue:
        return DiffValue(self, value)

    def param(self, p: Parameter) -> DiffValue:
        """Leaf for a Parameter; memoized so each parameter has one leaf per tape."""
        leaf = self._param_leaves.get(p)
        if leaf is None:
            leaf = DiffValue(self, p.value.copy())
            self._param_leaves[p] = leaf
        return leaf

    def watched(self) -> Iterable[Parameter]:
        return self._param_leaves.keys()

    def backward(self, root: DiffValue) -> dict[Parameter, np.ndarray]:
        """Propagate adjoints from a scalar root; returns grads per watched Parameter."""
        if root.tape is not self:
            raise ValueError("root belongs to a different tape")
        if root.ndim != 0:
            raise NonScalarRoot(f"root must be scalar, got shape {root.shape}")
        if self._ran_backward:
            raise DoubleBackward("tape already ran backward; call reset_adjoints() first")
        self._ran_backward = True
        root.adjoint = np.ones_like(root.value)
        for node in reversed(self._nodes):
            if node.pull is not None:
                node.pull(node.adjoint)
        return {p: leaf.adjoint.copy() for p, leaf in self._param_leaves.items()}

    def reset_adjoints(self):
        for node in self._nodes:
            node.adjoint = np.zeros_like(node.value)
        self._ran_backward = False

    def __len__(self):
        return len(self._nodes)


# ---------------------------------------------------------------------------
# op helpers
# ---------------------------------------------------------------------------

def _wrap(x, tape: Tape) -> DiffValue:
    if isinstance(x, DiffValue):
        return x
    return tape.const(x)


def _pair(a, b, tape=None):
    if isinstance(a, DiffValue):
        tape = a.tape
    elif isinstance(b, DiffValue):
        tape = b.tape
    elif tape is None:
        raise TypeError("at least one operand must be a DiffValue")
    return _wrap(a, tape), _wrap(b, tape)


def _check_elementwise(a: DiffValue, b: DiffValue, opname: str):
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeMismatch(f"{opname}: shapes {a.shape} and {b.shape} "
                            "(only scalar-with-array broadcasting is supported)")


def _acc(node: DiffValue, grad: np.ndarray):
    # reduce broadcasting back onto a scalar operand
    if node.value.ndim == 0 and np.ndim(grad) > 0:
        node.adjoint = node.adjoint + grad.sum()
    else:
        node.adjoint = node.adjoint + grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b, tape=None) -> DiffValue:
    a, b = _pair(a, b, tape)
    _check_elementwise(a, b, "add")
    out = DiffValue(a.tape, a.value + b.value, (a, b))

    def pull(g):
        _acc(a, g)
        _acc(b, g)

    out.pull = pull
    return out


def sub(a, b, tape=None) -> DiffValue:
    a, b = _pair(a, b, tape)
    _check_elementwise(a, b, "sub")
    out = DiffValue(a.tape, a.value - b.value, (a, b))

    def pull(g):
        _acc(a, g)
        _acc(b, -g)

    out.pull = pull
    return out


def mul(a, b, tape=None) -> DiffValue:
    a, b = _pair(a, b, tape)
    _check_elementwise(a, b, "mul")
    out = DiffValue(a.tape, a.value * b.value, (a, b))

    def pull(g):
        _acc(a, g * b.value)
        _acc(b, g * a.value)

    out.pull = pull
    return out


def div(a, b, tape=None) -> DiffValue:
    a, b = _pair(a, b, tape)
    _check_elementwise(a, b, "div")
    out = DiffValue(a.tape, a.value / b.value, (a, b))

    def pull(g):
        _acc(a, g / b.value)
        _acc(b, -g * a.value / (b.value * b.value))

    out.pull = pull
    return out


def neg(a: DiffValue) -> DiffValue:
    out = DiffValue(a.tape, -a.value, (a,))

    def pull(g):
        _acc(a, -g)

    out.pull = pull
    return out


def matmul(a: DiffValue, b: DiffValue) -> DiffValue:
    if not (isinstance(a, DiffValue) and isinstance(b, DiffValue)):
        a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape}")
    out = DiffValue(a.tape, a.value @ b.value, (a, b))

    def pull(g):
        a.adjoint = a.adjoint + g @ b.value.T
        b.adjoint = b.adjoint + a.value.T @ g

    out.pull = pull
    return out


# ---------------------------------------------------------------------------
# unary nonlinearities
# ---------------------------------------------------------------------------

def _unary(a: DiffValue, value: np.ndarray, dlocal: np.ndarray) -> DiffValue:
    out = DiffValue(a.tape, value, (a,))

    def pull(g):
        a.adjoint = a.adjoint + g * dlocal

    out.pull = pull
    return out


def relu(a: DiffValue) -> DiffValue:
    return _unary(a, np.maximum(a.value, 0.0), (a.value > 0.0).astype(np.float64))


def sigmoid(a: DiffValue) -> DiffValue:
    s = 1.0 / (1.0 + np.exp(-a.value))
    return _unary(a, s, s * (1.0 - s))


def exp(a: DiffValue) -> DiffValue:
    e = np.exp(a.value)
    return _unary(a, e, e)


def log(a: DiffValue) -> DiffValue:
    return _unary(a, np.log(a.value), 1.0 / a.value)


def sqrt(a: DiffValue) -> DiffValue:
    r = np.sqrt(a.value)
    return _unary(a, r, 0.5 / r)


def sin(a: DiffValue) -> DiffValue:
    return _unary(a, np.sin(a.value), np.cos(a.value))


def cos(a: DiffValue) -> DiffValue:
    return _unary(a, np.cos(a.value), -np.sin(a.value))


def arccos(a: DiffValue) -> DiffValue:
    # forward value is clamped away from +-1 and the gradient uses the clamped
    # value, so the derivative stays bounded when rounding pushes |x| past 1
    x = np.clip(a.value, -1.0 + ARCCOS_GUARD, 1.0 - ARCCOS_GUARD)
    return _unary(a, np.arccos(x), -1.0 / np.sqrt(1.0 - x * x))


def clamp(a: DiffValue, lo: float = -math.inf, hi: float = math.inf) -> DiffValue:
    inside = ((a.value >= lo) & (a.value <= hi)).astype(np.float64)
    return _unary(a, np.clip(a.value, lo, hi), inside)


# ---------------------------------------------------------------------------
# reductions (axis=None collapses to a scalar; axis results keep dims)
# ---------------------------------------------------------------------------

def vsum(a: DiffValue, axis: int | None = None) -> DiffValue:
    if axis is None:
        out = DiffValue(a.tape, a.value.sum(), (a,))

        def pull(g):
            a.adjoint = a.adjoint + np.broadcast_to(g, a.shape)

    else:
        out = DiffValue(a.tape, a.value.sum(axis=axis, keepdims=True), (a,))

        def pull(g):
            a.adjoint = a.adjoint + np.broadcast_to(g, a.shape)

    out.pull = pull
    return out


def vmean(a: DiffValue, axis: int | None = None) -> DiffValue:
    n = a.value.size if axis is None else a.shape[axis]
    if axis is None:
        out = DiffValue(a.tape, a.value.mean(), (a,))
    else:
        out = DiffValue(a.tape, a.value.mean(axis=axis, keepdims=True), (a,))

    def pull(g):
        a.adjoint = a.adjoint + np.broadcast_to(g, a.shape) / n

    out.pull = pull
    return out


def _extremum(a: DiffValue, axis, kind: str) -> DiffValue:
    # gradient routes to the first attained arg-extremum (deterministic)
    reduce_fn = np.max if kind == "max" else np.min
    arg_fn = np.argmax if kind == "max" else np.argmin
    if axis is None:
        flat_idx = int(arg_fn(a.value))
        out = DiffValue(a.tape, reduce_fn(a.value), (a,))

        def pull(g):
            upd = np.zeros_like(a.value)
            upd.flat[flat_idx] = float(g)
            a.adjoint = a.adjoint + upd

    else:
        if a.ndim != 2:
            raise ShapeMismatch(f"{kind} with axis needs a rank-2 input, got {a.shape}")
        idx = arg_fn(a.value, axis=axis)
        out = DiffValue(a.tape, reduce_fn(a.value, axis=axis, keepdims=True), (a,))

        def pull(g):
            upd = np.zeros_like(a.value)
            if axis == 0:
                upd[idx, np.arange(a.shape[1])] = g[0, :]
            else:
                upd[np.arange(a.shape[0]), idx] = g[:, 0]
            a.adjoint = a.adjoint + upd

    out.pull = pull
    return out


def vmax(a: DiffValue, axis: int | None = None) -> DiffValue:
    return _extremum(a, axis, "max")


def vmin(a: DiffValue, axis: int | None = None) -> DiffValue:
    return _extremum(a, axis, "min")


# ---------------------------------------------------------------------------
# shape and indexing ops
# ---------------------------------------------------------------------------

def transpose(a: DiffValue) -> DiffValue:
    out = DiffValue(a.tape, a.value.T.copy(), (a,))

    def pull(g):
        a.adjoint = a.adjoint + g.T

    out.pull = pull
    return out


def reshape(a: DiffValue, shape) -> DiffValue:
    new = _f64(a.value.reshape(shape))
    out = DiffValue(a.tape, new, (a,))

    def pull(g):
        a.adjoint = a.adjoint + g.reshape(a.shape)

    out.pull = pull
    return out


def concat(parts: Sequence[DiffValue], axis: int = 0) -> DiffValue:
    parts = list(parts)
    if not parts:
        raise ShapeMismatch("concat of zero parts")
    tape = parts[0].tape
    out = DiffValue(tape, np.concatenate([p.value for p in parts], axis=axis), tuple(parts))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def pull(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = (slice(None),) * axis + (slice(lo, hi),)
            p.adjoint = p.adjoint + g[sl]

    out.pull = pull
    return out


def gather(a: DiffValue, idx, axis: int = 0) -> DiffValue:
    """Select rows (axis=0) or columns (axis=1) by an integer index vector."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeMismatch(f"gather index must be rank 1, got {idx.shape}")
    if axis == 0:
        out = DiffValue(a.tape, a.value[idx].copy(), (a,))

        def pull(g):
            upd = np.zeros_like(a.value)
            np.add.at(upd, idx, g)
            a.adjoint = a.adjoint + upd

    elif axis == 1:
        if a.ndim != 2:
            raise ShapeMismatch(f"gather axis=1 needs rank-2 input, got {a.shape}")
        out = DiffValue(a.tape, a.value[:, idx].copy(), (a,))

        def pull(g):
            upd = np.zeros_like(a.value)
            np.add.at(upd.T, idx, g.T)
            a.adjoint = a.adjoint + upd

    else:
        raise ShapeMismatch(f"gather axis must be 0 or 1, got {axis}")
    out.pull = pull
    return out


def take_per_row(a: DiffValue, idx) -> DiffValue:
    """Per-row column selection: out[i, j] = a[i, idx[i, j]]."""
    idx = np.asarray(idx, dtype=np.intp)
    if a.ndim != 2 or idx.ndim != 2 or idx.shape[0] != a.shape[0]:
        raise ShapeMismatch(f"take_per_row: value {a.shape}, index {idx.shape}")
    rows = np.arange(a.shape[0])[:, None]
    out = DiffValue(a.tape, a.value[rows, idx].copy(), (a,))

    def pull(g):
        upd = np.zeros_like(a.value)
        np.add.at(upd, (rows, idx), g)
        a.adjoint = a.adjoint + upd

    out.pull = pull
    return out


def group_max(a: DiffValue, idx) -> DiffValue:
    """Row-group max pooling: out[m, f] = max_j a[idx[m, j], f].

    Gradient routes to the first row attaining the max within each group.
    """
    idx = np.asarray(idx, dtype=np.intp)
    if a.ndim != 2 or idx.ndim != 2:
        raise ShapeMismatch(f"group_max: value {a.shape}, index {idx.shape}")
    grouped = a.value[idx]                    # (M, nn, F) scratch, not a tape value
    arg = grouped.argmax(axis=1)              # (M, F), first max per group
    out = DiffValue(a.tape, grouped.max(axis=1), (a,))
    m, f = arg.shape
    src_rows = idx[np.arange(m)[:, None], arg]  # (M, F) row index into a

    def pull(g):
        upd = np.zeros_like(a.value)
        np.add.at(upd, (src_rows, np.broadcast_to(np.arange(f), (m, f))), g)
        a.adjoint = a.adjoint + upd

    out.pull = pull
    return out


def scale_rows(a: DiffValue, s: DiffValue) -> DiffValue:
    """Multiply each row of a (M,K) by the matching entry of s (M,1)."""
    if a.ndim != 2 or s.shape != (a.shape[0], 1):
        raise ShapeMismatch(f"scale_rows: value {a.shape}, scale {s.shape}")
    out = DiffValue(a.tape, a.value * s.value, (a, s))

    def pull(g):
        a.adjoint = a.adjoint + g * s.value
        s.adjoint = s.adjoint + (g * a.value).sum(axis=1, keepdims=True)

    out.pull = pull
    return out


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def sgd_step(params: Iterable[Parameter], grads: Mapping[Parameter, np.ndarray],
             lr: float, momentum: float = 0.0,
             velocities: dict[Parameter, np.ndarray] | None = None):
    """In-place SGD update p <- p - lr * v with v <- momentum*v + grad.

    Returns the velocity map so callers can keep momentum state across steps.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if velocities is None:
        velocities = {}
    for p in params:
        g = grads.get(p)
        if g is None:
            continue
        v = velocities.get(p)
        v = g if v is None else momentum * v + g
        velocities[p] = v
        p.value -= lr * v
    return velocities


class SGD:
    """Stateful wrapper around sgd_step with a fixed parameter order."""

    def __init__(self, params: Sequence[Parameter], lr: float, momentum: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocities: dict[Parameter, np.ndarray] = {
            p: np.zeros_like(p.value) for p in self.params
        }

    def step(self, grads: Mapping[Parameter, np.ndarray]):
        sgd_step(self.params, grads, self.lr, self.momentum, self.velocities)


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def finite_difference_check(f: Callable[[Tape], DiffValue],
                            params: Sequence[Parameter],
                            step: float = 1e-6,
                            max_coords_per_param: int | None = None,
                            rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    f rebuilds the scalar loss on a fresh tape each call (reading parameters
    through tape.param). When max_coords_per_param is set, a random subset of
    coordinates is probed per parameter instead of every coordinate.
    """
    tape = Tape()
    grads = tape.backward(f(tape))
    worst = 0.0
    for p in params:
        g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.value)
        n = p.value.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        for i in coords:
            orig = p.value.flat[i]
            p.value.flat[i] = orig + step
            fp = float(f(Tape()).value)
            p.value.flat[i] = orig - step
            fm = float(f(Tape()).value)
            p.value.flat[i] = orig
            cd = (fp - fm) / (2.0 * step)
            err = abs(float(g.flat[i]) - cd) / (abs(cd) + 1e-12)
            worst = max(worst, err)
    return worst
