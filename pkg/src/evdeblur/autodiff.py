"""Reverse-mode automatic differentiation over a dynamic numpy tape.

The tape is rebuilt every optimization step: nodes are appended in creation
order, which is already a topological order, so the backward pass is a single
reverse sweep over the node list. Payloads are numpy arrays (0-d arrays stand
in for scalars). Constants (plain floats / ndarrays) participate in any
operation without being recorded; only ``Var`` operands receive gradients.

Every public math function below degrades to plain numpy when none of its
arguments is a ``Var``, so geometry and rendering code can be written once and
run both under differentiation and as ordinary array code.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

# additive guard inside the log primitive, differentiated consistently
LOG_EPS = 1e-5


class NonScalarOutput(ValueError):
    """backward() was asked to seed from a non-scalar node."""


class Tape:
    """Append-only record of one forward evaluation."""

    __slots__ = ("dtype", "nodes", "leaves")

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Var] = []
        self.leaves: list[Var] = []

    def leaf(self, value) -> "Var":
        v = Var(self, np.array(value, dtype=self.dtype))
        v._leaf = True
        self.nodes.append(v)
        self.leaves.append(v)
        return v

    def backward(self, output: "Var") -> None:
        """Reverse sweep from ``output``; fills ``.grad`` on every leaf.

        Leaves that do not influence the output get an exact zero gradient.
        Interior gradients are released as soon as they have been consumed,
        which keeps the peak footprint near the forward pass's.
        """
        if not isinstance(output, Var) or output.tape is not self:
            raise ValueError("output is not a node of this tape")
        if output.value.size != 1:
            raise NonScalarOutput(f"output has shape {output.value.shape}")
        for node in self.nodes:
            node.grad = None
        output.grad = np.ones_like(output.value)
        for node in reversed(self.nodes):
            if node.grad is not None and node._bwd is not None:
                node._bwd(node.grad)
            if not node._leaf:
                node.grad = None
        for leaf in self.leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.value)

    def dispose(self) -> None:
        """Drop the recorded graph and its closures.

        The training loop builds one tape per iteration; disposing the old
        tape explicitly breaks any closure reference chains so the large
        intermediate arrays are freed immediately rather than a garbage
        collection later.
        """
        for node in self.nodes:
            node._bwd = None
            node.grad = None
        self.nodes.clear()
        self.leaves.clear()


class Var:
    """Handle to one tape node."""

    __slots__ = ("tape", "value", "grad", "_bwd", "_leaf")

    # keep numpy from absorbing us into object arrays; binary ops defer here
    __array_ufunc__ = None

    def __init__(self, tape: Tape, value: np.ndarray):
        self.tape = tape
        self.value = np.asarray(value)
        self.grad = None
        self._bwd = None
        self._leaf = False

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return transpose(self)

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, dtype={self.value.dtype})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def value_of(x):
    """Underlying ndarray of a Var, or the input coerced to ndarray."""
    return x.value if isinstance(x, Var) else np.asarray(x)


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _cv(x, tape: Tape) -> np.ndarray:
    """Coerce an operand to its value, casting constants to the tape dtype."""
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=tape.dtype)


def _record(tape: Tape, value, bwd) -> Var:
    v = Var(tape, value)
    v._bwd = bwd
    tape.nodes.append(v)
    return v


def _accum(var: Var, g) -> None:
    # never mutate an existing grad array in place: it may be shared with
    # another node's grad (pass-through backwards reuse the same object)
    var.grad = g if var.grad is None else var.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` to undo numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] > 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic primitives


def add(a, b):
    t = _tape_of(a, b)
    if t is None:
        return np.add(a, b)
    av, bv = _cv(a, t), _cv(b, t)
    out = av + bv

    def bwd(g):
        if isinstance(a, Var):
            _accum(a, _unbroadcast(g, av.shape))
        if isinstance(b, Var):
            _accum(b, _unbroadcast(g, bv.shape))

    return _record(t, out, bwd)


def sub(a, b):
    t = _tape_of(a, b)
    if t is None:
        return np.subtract(a, b)
    av, bv = _cv(a, t), _cv(b, t)
    out = av - bv

    def bwd(g):
        if isinstance(a, Var):
            _accum(a, _unbroadcast(g, av.shape))
        if isinstance(b, Var):
            _accum(b, _unbroadcast(-g, bv.shape))

    return _record(t, out, bwd)


def mul(a, b):
    t = _tape_of(a, b)
    if t is None:
        return np.multiply(a, b)
    av, bv = _cv(a, t), _cv(b, t)
    out = av * bv

    def bwd(g):
        if isinstance(a, Var):
            _accum(a, _unbroadcast(g * bv, av.shape))
        if isinstance(b, Var):
            _accum(b, _unbroadcast(g * av, bv.shape))

    return _record(t, out, bwd)


def div(a, b):
    t = _tape_of(a, b)
    if t is None:
        return np.divide(a, b)
    av, bv = _cv(a, t), _cv(b, t)
    out = av / bv

    def bwd(g):
        if isinstance(a, Var):
            _accum(a, _unbroadcast(g / bv, av.shape))
        if isinstance(b, Var):
            _accum(b, _unbroadcast(-g * av / (bv * bv), bv.shape))

    return _record(t, out, bwd)


def pow_const(x, p):
    if not isinstance(x, Var):
        return np.power(x, p)
    t = x.tape
    xv = x.value
    out = xv**p

    def bwd(g):
        _accum(x, g * p * xv ** (p - 1))

    return _record(t, out, bwd)


def matmul(a, b):
    t = _tape_of(a, b)
    if t is None:
        return np.matmul(a, b)
    av, bv = _cv(a, t), _cv(b, t)
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ValueError("matmul supports 1-D and 2-D operands only")
    out = av @ bv

    def bwd(g):
        if av.ndim == 2 and bv.ndim == 2:
            ga, gb = g @ bv.T, av.T @ g
        elif av.ndim == 2 and bv.ndim == 1:
            ga, gb = np.outer(g, bv), av.T @ g
        elif av.ndim == 1 and bv.ndim == 2:
            ga, gb = bv @ g, np.outer(av, g)
        else:
            ga, gb = g * bv, g * av
        if isinstance(a, Var):
            _accum(a, ga)
        if isinstance(b, Var):
            _accum(b, gb)

    return _record(t, out, bwd)


def affine(x, w, b):
    """Fused x @ w + b for (N,K) x, (K,M) w, (M,) b.

    One tape node instead of two; on wide batches this halves the number of
    batch-sized arrays the graph keeps alive.
    """
    t = _tape_of(x, w, b)
    if t is None:
        return x @ w + b
    xv, wv, bv = _cv(x, t), _cv(w, t), _cv(b, t)
    if xv.ndim != 2 or wv.ndim != 2 or bv.ndim != 1:
        raise ValueError("affine expects (N,K) @ (K,M) + (M,)")
    out = xv @ wv + bv

    def bwd(g):
        if isinstance(x, Var):
            _accum(x, g @ wv.T)
        if isinstance(w, Var):
            _accum(w, xv.T @ g)
        if isinstance(b, Var):
            _accum(b, g.sum(axis=0))

    return _record(t, out, bwd)


# ---------------------------------------------------------------------------
# elementwise primitives


def sin(x):
    if not isinstance(x, Var):
        return np.sin(x)
    xv = x.value

    def bwd(g):
        _accum(x, g * np.cos(xv))

    return _record(x.tape, np.sin(xv), bwd)


def cos(x):
    if not isinstance(x, Var):
        return np.cos(x)
    xv = x.value

    def bwd(g):
        _accum(x, -g * np.sin(xv))

    return _record(x.tape, np.cos(xv), bwd)


def exp(x):
    if not isinstance(x, Var):
        return np.exp(x)
    out = np.exp(x.value)

    def bwd(g):
        _accum(x, g * out)

    return _record(x.tape, out, bwd)


def log(x, eps=LOG_EPS):
    """Guarded logarithm log(x + eps); the guard is part of the primitive."""
    if not isinstance(x, Var):
        return np.log(np.asarray(x) + eps)
    shifted = x.value + eps

    def bwd(g):
        _accum(x, g / shifted)

    return _record(x.tape, np.log(shifted), bwd)


def sqrt(x):
    if not isinstance(x, Var):
        return np.sqrt(x)
    out = np.sqrt(x.value)

    def bwd(g):
        _accum(x, g * (0.5 / out))

    return _record(x.tape, out, bwd)


def softplus(x):
    if not isinstance(x, Var):
        return np.logaddexp(0.0, x)
    # derivative expit(x) recovered from the output: 1 - exp(-softplus(x));
    # capturing the output (shared with downstream ops) instead of the input
    # keeps one fewer large live array per layer
    out = np.logaddexp(np.zeros((), dtype=x.value.dtype), x.value)

    def bwd(g):
        _accum(x, g * -np.expm1(-out))

    return _record(x.tape, out, bwd)


def sigmoid(x):
    if not isinstance(x, Var):
        return expit(x)
    out = expit(x.value)

    def bwd(g):
        _accum(x, g * out * (1.0 - out))

    return _record(x.tape, out, bwd)


def atan2(y, x):
    t = _tape_of(y, x)
    if t is None:
        return np.arctan2(y, x)
    yv, xv = _cv(y, t), _cv(x, t)
    denom = xv * xv + yv * yv

    def bwd(g):
        if isinstance(y, Var):
            _accum(y, _unbroadcast(g * xv / denom, yv.shape))
        if isinstance(x, Var):
            _accum(x, _unbroadcast(-g * yv / denom, xv.shape))

    return _record(t, np.arctan2(yv, xv), bwd)


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    if not isinstance(x, Var):
        return np.sum(x, axis=axis, keepdims=keepdims)
    xv = x.value
    out = np.sum(xv, axis=axis, keepdims=keepdims)

    def bwd(g):
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(x, np.broadcast_to(gg, xv.shape))

    return _record(x.tape, out, bwd)


def mean(x, axis=None, keepdims=False):
    n = value_of(x).size if axis is None else value_of(x).shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def cumsum(x, axis=-1):
    if not isinstance(x, Var):
        return np.cumsum(x, axis=axis)

    def bwd(g):
        _accum(x, np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis))

    return _record(x.tape, np.cumsum(x.value, axis=axis), bwd)


def norm(x):
    """Euclidean norm of the whole array, as a scalar."""
    if not isinstance(x, Var):
        xa = np.asarray(x)
        return np.sqrt(np.sum(xa * xa))
    xv = x.value
    out = np.sqrt(np.sum(xv * xv))

    def bwd(g):
        if out == 0.0:
            _accum(x, np.zeros_like(xv))
        else:
            _accum(x, g * (xv / out))

    return _record(x.tape, out, bwd)


def concat(xs, axis=0):
    t = _tape_of(*xs)
    if t is None:
        return np.concatenate([np.asarray(x) for x in xs], axis=axis)
    vals = [_cv(x, t) for x in xs]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def bwd(g):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if isinstance(x, Var):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(x, g[tuple(idx)])

    return _record(t, out, bwd)


def reshape(x, shape):
    if not isinstance(x, Var):
        return np.reshape(x, shape)
    old = x.value.shape

    def bwd(g):
        _accum(x, g.reshape(old))

    return _record(x.tape, x.value.reshape(shape), bwd)


def transpose(x, axes=None):
    if not isinstance(x, Var):
        return np.transpose(x, axes)
    inv = None if axes is None else np.argsort(axes)

    def bwd(g):
        _accum(x, np.transpose(g, inv))

    return _record(x.tape, np.transpose(x.value, axes), bwd)


def repeat_rows(x, k):
    """Repeat each row of a 2-D array ``k`` times along axis 0."""
    if not isinstance(x, Var):
        return np.repeat(x, k, axis=0)
    xv = x.value

    def bwd(g):
        _accum(x, g.reshape(xv.shape[0], k, *xv.shape[1:]).sum(axis=1))

    return _record(x.tape, np.repeat(xv, k, axis=0), bwd)


def take(x, key):
    if not isinstance(x, Var):
        return np.asarray(x)[key]
    xv = x.value
    basic = isinstance(key, (int, slice)) or (
        isinstance(key, tuple) and all(isinstance(k, (int, slice)) for k in key)
    )

    def bwd(g):
        z = np.zeros_like(xv)
        if basic:
            z[key] += g
        else:
            np.add.at(z, key, g)
        _accum(x, z)

    return _record(x.tape, xv[key], bwd)
