"""Array-valued reverse-mode differentiation on an explicit tape.

Every op accepts :class:`Var` operands or plain array-likes.  When no operand
is a ``Var`` the op simply returns a numpy array, so the same kernels serve
both training (on a tape) and fast evaluation (off tape).

    >>> tape = Tape()
    >>> a, b = tape.leaf(2.0), tape.leaf(3.0)
    >>> f = a * b + sin(a)
    >>> g = backward(tape, f)
    >>> round(float(g[a]), 4), float(g[b])
    (2.5839, 2.0)
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import DomainError, UsageError
from . import special

LEAKY_SLOPE = 0.01


class Var:
    """A value recorded on a :class:`Tape`.

    ``index`` is the node handle; the adjoint lives in the
    :class:`Gradients` object produced by :func:`backward`.
    """

    __slots__ = ("value", "tape", "index")
    __array_priority__ = 1000.0

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(index={self.index}, value={self.value!r})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, other):
        return pow(self, other)

    def __rpow__(self, other):
        return pow(other, self)

    def __matmul__(self, other):
        return dot(self, other)

    def __rmatmul__(self, other):
        return dot(other, self)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None):
        return sum(self, axis=axis)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Ordered record of elementary operations.

    Nodes are appended in evaluation order, so every operand precedes its
    consumer and a single reversed pass is a valid topological sweep.
    """

    def __init__(self):
        self._values: list[np.ndarray] = []
        self._parents: list[tuple[int, ...]] = []
        self._vjps: list[tuple[Callable, ...]] = []
        self.last_visit_count = 0

    def __len__(self):
        return len(self._values)

    def leaf(self, value) -> Var:
        arr = np.array(value, dtype=float)
        return self._push(arr, (), ())

    def leaves(self, mapping) -> dict:
        return {k: self.leaf(v) for k, v in mapping.items()}

    def value(self, var: Var) -> np.ndarray:
        self._check(var)
        return self._values[var.index]

    def is_leaf(self, var: Var) -> bool:
        self._check(var)
        return not self._parents[var.index]

    def _push(self, value, parents, vjps) -> Var:
        idx = len(self._values)
        self._values.append(value)
        self._parents.append(parents)
        self._vjps.append(vjps)
        return Var(value, self, idx)

    def _check(self, var):
        if not isinstance(var, Var) or var.tape is not self:
            raise UsageError("value was not produced on this tape")


class Gradients:
    """Map from leaf :class:`Var` to the adjoint accumulated by a sweep."""

    def __init__(self, tape: Tape, adjoints: list):
        self._tape = tape
        self._adjoints = adjoints

    def __getitem__(self, var: Var) -> np.ndarray:
        self._tape._check(var)
        if var.index >= len(self._adjoints):
            return np.zeros_like(var.value)
        g = self._adjoints[var.index]
        if g is None:
            return np.zeros_like(var.value)
        return np.broadcast_to(g, var.value.shape).astype(float, copy=True)

    def get(self, var, default=None):
        try:
            return self[var]
        except UsageError:
            return default


def backward(tape: Tape, output: Var) -> Gradients:
    """Reverse sweep seeded with d(output)/d(output) = 1.

    ``output`` must be a scalar (size-1) node on ``tape``.  The tape itself is
    left untouched and may be swept again.
    """
    tape._check(output)
    if output.value.size != 1:
        raise UsageError(f"backward needs a scalar output, got shape {output.value.shape}")
    n = output.index + 1
    adj: list = [None] * n
    adj[output.index] = np.ones_like(output.value)
    parents, vjps = tape._parents, tape._vjps
    visits = 0
    for i in range(output.index, -1, -1):
        visits += 1
        g = adj[i]
        if g is None or not parents[i]:
            continue
        for p, vjp in zip(parents[i], vjps[i]):
            contrib = vjp(g)
            if adj[p] is None:
                adj[p] = contrib
            else:
                adj[p] = adj[p] + contrib
    tape.last_visit_count = visits
    return Gradients(tape, adj)


# ---------------------------------------------------------------------------
# plumbing


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise UsageError("operands live on different tapes")
    return tape


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _record(value, operands: Sequence, vjps: Sequence[Callable]):
    """Attach ``value`` to the operands' tape, or return it bare off-tape."""
    tape = _tape_of(*operands)
    if tape is None:
        return value
    parents, fns = [], []
    for x, fn in zip(operands, vjps):
        if isinstance(x, Var) and fn is not None:
            parents.append(x.index)
            fns.append(fn)
    return tape._push(value, tuple(parents), tuple(fns))


def _domain(cond, op, x):
    if not np.all(cond):
        bad = np.ravel(np.asarray(x))[np.flatnonzero(~np.broadcast_to(cond, np.shape(x)))]
        raise DomainError(f"{op}: operand value {float(bad[0])!r} outside domain")


def constant(x):
    """Strip the tape: the result carries no gradient."""
    return np.array(_val(x), copy=True)


def value(x):
    return _val(x)


# ---------------------------------------------------------------------------
# elementary ops


def add(a, b):
    av, bv = _val(a), _val(b)
    out = av + bv
    return _record(out, (a, b), (lambda g: _unbroadcast(g, av.shape),
                                 lambda g: _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = _val(a), _val(b)
    out = av - bv
    return _record(out, (a, b), (lambda g: _unbroadcast(g, av.shape),
                                 lambda g: _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = _val(a), _val(b)
    out = av * bv
    return _record(out, (a, b), (lambda g: _unbroadcast(g * bv, av.shape),
                                 lambda g: _unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = _val(a), _val(b)
    _domain(bv != 0, "div", bv)
    out = av / bv
    return _record(out, (a, b), (lambda g: _unbroadcast(g / bv, av.shape),
                                 lambda g: _unbroadcast(-g * out / bv, bv.shape)))


def neg(a):
    return _record(-_val(a), (a,), (lambda g: -g,))


def exp(a):
    out = np.exp(_val(a))
    return _record(out, (a,), (lambda g: g * out,))


def expm1(a):
    out = np.expm1(_val(a))
    return _record(out, (a,), (lambda g: g * (out + 1.0),))


def log(a):
    av = _val(a)
    _domain(av > 0, "log", av)
    return _record(np.log(av), (a,), (lambda g: g / av,))


def log1p(a):
    av = _val(a)
    _domain(av > -1, "log1p", av)
    return _record(np.log1p(av), (a,), (lambda g: g / (1.0 + av),))


def sin(a):
    av = _val(a)
    return _record(np.sin(av), (a,), (lambda g: g * np.cos(av),))


def cos(a):
    av = _val(a)
    return _record(np.cos(av), (a,), (lambda g: -g * np.sin(av),))


def tanh(a):
    out = np.tanh(_val(a))
    return _record(out, (a,), (lambda g: g * (1.0 - out * out),))


def sqrt(a):
    av = _val(a)
    _domain(av > 0, "sqrt", av)
    out = np.sqrt(av)
    return _record(out, (a,), (lambda g: g * 0.5 / out,))


def square(a):
    av = _val(a)
    return _record(av * av, (a,), (lambda g: 2.0 * g * av,))


def pow(a, b):
    """``a ** b``; a differentiable exponent requires a positive base."""
    av, bv = _val(a), _val(b)
    exponent_is_var = isinstance(b, Var)
    if exponent_is_var or np.any(bv != np.round(bv)):
        _domain(av > 0, "pow", av)
    out = np.power(av, bv)

    def da(g):
        return _unbroadcast(g * bv * np.power(av, bv - 1.0), av.shape)

    def db(g):
        return _unbroadcast(g * out * np.log(av), bv.shape)

    return _record(out, (a, b), (da, db if exponent_is_var else None))


def sigmoid(a):
    av = _val(a)
    e = np.exp(-np.abs(av))
    out = np.where(av >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record(out, (a,), (lambda g: g * out * (1.0 - out),))


def log_sigmoid(a):
    """log(sigmoid(a)) without overflow."""
    av = _val(a)
    out = -np.logaddexp(0.0, -av)
    s = np.exp(out)
    return _record(out, (a,), (lambda g: g * (1.0 - s),))


def relu(a):
    av = _val(a)
    mask = av > 0
    return _record(np.where(mask, av, 0.0), (a,), (lambda g: g * mask,))


def leaky_relu(a, slope=LEAKY_SLOPE):
    av = _val(a)
    scale = np.where(av > 0, 1.0, slope)
    return _record(av * scale, (a,), (lambda g: g * scale,))


def dot(a, b):
    """Matrix/vector product with numpy ``@`` semantics (1-D or 2-D operands)."""
    av, bv = _val(a), _val(b)
    out = av @ bv

    def da(g):
        if bv.ndim == 1:
            return np.multiply.outer(g, bv) if av.ndim == 2 else g * bv
        return g @ bv.T

    def db(g):
        if av.ndim == 1:
            return np.multiply.outer(av, g) if bv.ndim == 2 else g * av
        if bv.ndim == 1:
            return av.T @ g
        return av.T @ g

    return _record(out, (a, b), (da, db))


def affine(x, w, b):
    """``x @ w + b`` recorded as a single node."""
    xv, wv, bv = _val(x), _val(w), _val(b)
    out = xv @ wv + bv
    return _record(out, (x, w, b), (
        lambda g: g @ wv.T,
        lambda g: xv.T @ g if xv.ndim == 2 else np.multiply.outer(xv, g),
        lambda g: _unbroadcast(g, bv.shape),
    ))


def sum(a, axis=None):
    av = _val(a)
    out = np.sum(av, axis=axis)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, av.shape)
        return np.broadcast_to(np.expand_dims(g, axis), av.shape)

    return _record(out, (a,), (vjp,))


def mean(a, axis=None):
    av = _val(a)
    n = av.size if axis is None else av.shape[axis]
    return sum(a, axis=axis) * (1.0 / n)


def take(a, key):
    av = _val(a)
    out = av[key]

    def vjp(g):
        full = np.zeros_like(av)
        np.add.at(full, key, g)
        return full

    return _record(np.array(out, dtype=float), (a,), (vjp,))


def transpose(a):
    return _record(_val(a).T, (a,), (lambda g: g.T,))


def reshape(a, shape):
    av = _val(a)
    return _record(av.reshape(shape), (a,), (lambda g: np.reshape(g, av.shape),))


def concat(xs, axis=-1):
    vals = [_val(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def make(i):
        return lambda g: np.split(g, sizes, axis=axis)[i]

    return _record(out, tuple(xs), tuple(make(i) for i in range(len(xs))))


def stack(xs, axis=-1):
    vals = [_val(x) for x in xs]
    out = np.stack(vals, axis=axis)

    def make(i):
        return lambda g: np.take(g, i, axis=axis)

    return _record(out, tuple(xs), tuple(make(i) for i in range(len(xs))))


def lgamma(a):
    av = _val(a)
    _domain(av > 0, "lgamma", av)
    return _record(special.lgamma(av), (a,), (lambda g: g * special.digamma(av),))


def logaddexp(a, b):
    """log(e^a + e^b) with the larger exponent factored out."""
    av, bv = _val(a), _val(b)
    out = np.logaddexp(av, bv)
    wa = np.exp(av - out)
    wb = np.exp(bv - out)
    return _record(out, (a, b), (lambda g: _unbroadcast(g * wa, av.shape),
                                 lambda g: _unbroadcast(g * wb, bv.shape)))


_ELEMENTARY = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg, "exp": exp,
    "log": log, "sin": sin, "cos": cos, "pow": pow, "sigmoid": sigmoid,
    "relu": relu, "leaky-relu": leaky_relu, "dot": dot, "affine": affine,
}


def apply_elementary(op_kind: str, *operands):
    """Dispatch an elementary op by name."""
    try:
        fn = _ELEMENTARY[op_kind]
    except KeyError:
        raise UsageError(f"unknown op kind {op_kind!r}") from None
    return fn(*operands)
