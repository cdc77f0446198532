"""Reverse-mode automatic differentiation over a recorded operation tape.

The engine traces scalar-valued programs built from a small set of
primitives (add, mul, matvec, tanh, leaky-relu, log, exp, reductions) and
computes exact first derivatives by a reverse sweep.  Every backward rule
is itself written in terms of the same primitives, so the reverse sweep
can be traced again: second derivatives fall out of differentiating the
tape of the first backward pass, not from a separate forward-over-reverse
mode.

Nesting works through trace levels.  Each call to :func:`value_and_grad`
opens a fresh level; boxed values carry the level they belong to, and an
operation always peels only its innermost boxes.  Values stored inside a
box may themselves be boxes of an outer trace, which is exactly what makes
the taped backward sweep differentiable.

All numerics are float64 and every sweep visits nodes in the reverse of
their recording order, so two evaluations with identical inputs produce
bit-identical values and gradients.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Box",
    "value_and_grad",
    "grad",
    "deep_value",
    "add", "sub", "neg", "mul", "div", "pow_const",
    "exp", "log", "tanh", "leaky_relu",
    "asum", "dot", "matvec", "vecmat", "outer",
    "softmax_cross_entropy", "logsumexp",
]

_level_counter = 0


def _next_level() -> int:
    global _level_counter
    _level_counter += 1
    return _level_counter


class _Node:
    """One recorded operation: its parents and the rule for their adjoints."""

    __slots__ = ("seq", "parents", "vjp")

    def __init__(self, seq, parents, vjp):
        self.seq = seq
        self.parents = parents  # tuple of Box, innermost-level only
        self.vjp = vjp          # adjoint -> tuple of parent adjoints


class Box:
    """A traced value: raw payload plus the trace level that owns it."""

    __slots__ = ("value", "level", "node")

    def __init__(self, value, level, node):
        self.value = value
        self.level = level
        self.node = node

    def __repr__(self):
        return f"Box(level={self.level}, value={self.value!r})"


def deep_value(a):
    """Strip every layer of boxing and return the raw float64 payload."""
    while isinstance(a, Box):
        a = a.value
    return a


def _f64(a):
    return np.asarray(a, dtype=np.float64)


class _Trace:
    __slots__ = ("level", "seq")

    def __init__(self, level):
        self.level = level
        self.seq = 0

    def next_seq(self):
        self.seq += 1
        return self.seq


_traces: dict[int, _Trace] = {}


def _record(raw_fn, vjp_maker, args, statics=()):
    """Apply a primitive, recording a node on the innermost active trace.

    ``raw_fn(*values, *statics)`` computes the payload.  ``vjp_maker``
    receives ``(out_value, values, statics)`` and returns the adjoint rule;
    the rule must be written with traced primitives so it stays
    differentiable.
    """
    top = 0
    for a in args:
        if isinstance(a, Box) and a.level > top:
            top = a.level
    if top == 0:
        return raw_fn(*args, *statics)

    values = tuple(a.value if isinstance(a, Box) and a.level == top else a
                   for a in args)
    out_value = _record(raw_fn, vjp_maker, values, statics)

    parents = tuple(a for a in args if isinstance(a, Box) and a.level == top)
    mask = tuple(isinstance(a, Box) and a.level == top for a in args)
    full_vjp = vjp_maker(out_value, values, statics)

    def vjp(adj):
        all_grads = full_vjp(adj)
        return tuple(g for g, m in zip(all_grads, mask) if m)

    trace = _traces[top]
    return Box(out_value, top, _Node(trace.next_seq(), parents, vjp))


def _shape(a):
    return np.shape(deep_value(a))


def _unbroadcast(g, shape):
    """Reduce an adjoint back to the shape of the parent it belongs to."""
    if shape == () and _shape(g) != ():
        return asum(g)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b):
    return _record(
        lambda x, y: np.add(x, y),
        lambda out, vals, st: lambda g: (
            _unbroadcast(g, _shape(vals[0])),
            _unbroadcast(g, _shape(vals[1])),
        ),
        (a, b),
    )


def sub(a, b):
    return _record(
        lambda x, y: np.subtract(x, y),
        lambda out, vals, st: lambda g: (
            _unbroadcast(g, _shape(vals[0])),
            _unbroadcast(neg(g), _shape(vals[1])),
        ),
        (a, b),
    )


def neg(a):
    return _record(
        lambda x: np.negative(x),
        lambda out, vals, st: lambda g: (neg(g),),
        (a,),
    )


def mul(a, b):
    return _record(
        lambda x, y: np.multiply(x, y),
        lambda out, vals, st: lambda g: (
            _unbroadcast(mul(g, vals[1]), _shape(vals[0])),
            _unbroadcast(mul(g, vals[0]), _shape(vals[1])),
        ),
        (a, b),
    )


def div(a, b):
    return _record(
        lambda x, y: np.divide(x, y),
        lambda out, vals, st: lambda g: (
            _unbroadcast(div(g, vals[1]), _shape(vals[0])),
            _unbroadcast(
                neg(div(mul(g, vals[0]), mul(vals[1], vals[1]))),
                _shape(vals[1]),
            ),
        ),
        (a, b),
    )


def pow_const(a, c):
    """``a ** c`` for a constant real exponent."""
    return _record(
        lambda x, e: np.power(x, e),
        lambda out, vals, st: lambda g: (
            mul(mul(g, st[0]), pow_const(vals[0], st[0] - 1.0)),
        ),
        (a,),
        (float(c),),
    )


def exp(a):
    return _record(
        lambda x: np.exp(x),
        lambda out, vals, st: lambda g: (mul(g, out),),
        (a,),
    )


def log(a):
    return _record(
        lambda x: np.log(x),
        lambda out, vals, st: lambda g: (div(g, vals[0]),),
        (a,),
    )


def tanh(a):
    return _record(
        lambda x: np.tanh(x),
        lambda out, vals, st: lambda g: (mul(g, sub(1.0, mul(out, out))),),
        (a,),
    )


def leaky_relu(a, slope=0.01):
    """Piecewise-linear activation; the kink at 0 takes the right branch."""
    mask = np.where(deep_value(a) >= 0.0, 1.0, float(slope))
    return _record(
        lambda x, m: x * m,
        lambda out, vals, st: lambda g: (mul(g, st[0]),),
        (a,),
        (mask,),
    )


def asum(a):
    """Sum of all entries, as a scalar."""
    return _record(
        lambda x: np.sum(x),
        lambda out, vals, st: lambda g: (
            mul(g, np.ones(_shape(vals[0]))) if _shape(vals[0]) != () else g,
        ),
        (a,),
    )


def dot(a, b):
    return _record(
        lambda x, y: np.dot(x, y),
        lambda out, vals, st: lambda g: (mul(g, vals[1]), mul(g, vals[0])),
        (a, b),
    )


def matvec(m, v):
    """Matrix (n, k) times vector (k,)."""
    return _record(
        lambda a, x: a @ x,
        lambda out, vals, st: lambda g: (outer(g, vals[1]),
                                         vecmat(g, vals[0])),
        (m, v),
    )


def vecmat(v, m):
    """Vector (n,) times matrix (n, k)."""
    return _record(
        lambda x, a: x @ a,
        lambda out, vals, st: lambda g: (matvec(vals[1], g),
                                         outer(vals[0], g)),
        (v, m),
    )


def outer(a, b):
    return _record(
        lambda x, y: np.outer(x, y),
        lambda out, vals, st: lambda g: (matvec(g, vals[1]),
                                         vecmat(vals[0], g)),
        (a, b),
    )


# ---------------------------------------------------------------------------
# composites
# ---------------------------------------------------------------------------

def logsumexp(logits):
    """log(sum(exp(logits))), stabilized by a constant max shift.

    The shift is an exact algebraic identity for any constant, so taking it
    from the raw payload leaves every derivative order unchanged.
    """
    m = float(np.max(deep_value(logits)))
    return add(m, log(asum(exp(sub(logits, m)))))


def softmax_cross_entropy(logits, target):
    """Cross-entropy between a probability vector ``target`` and softmax
    of ``logits``: logsumexp(logits) - <target, logits>.

    ``target`` may be any point of the simplex (one-hot or mixed), the
    expression is linear in it.
    """
    return sub(logsumexp(logits), dot(target, logits))


# ---------------------------------------------------------------------------
# the reverse sweep
# ---------------------------------------------------------------------------

def _backward(out_box, level, leaves):
    """Propagate an adjoint of 1.0 from ``out_box`` to ``leaves``.

    Nodes are visited in strictly decreasing recording order, adjoints are
    accumulated with the traced ``add`` so an enclosing trace can
    differentiate the sweep itself.
    """
    boxes = []
    seen = set()
    stack = [out_box]
    while stack:
        b = stack.pop()
        if id(b) in seen or b.level != level:
            continue
        seen.add(id(b))
        boxes.append(b)
        if b.node is not None:
            stack.extend(b.node.parents)

    boxes.sort(key=lambda b: -1 if b.node is None else b.node.seq,
               reverse=True)

    adjoints = {id(out_box): np.float64(1.0)}
    for b in boxes:
        if b.node is None:
            continue
        acc = adjoints.pop(id(b), None)
        if acc is None:
            continue
        for parent, g in zip(b.node.parents, b.node.vjp(acc)):
            key = id(parent)
            if key in adjoints:
                adjoints[key] = add(adjoints[key], g)
            else:
                adjoints[key] = g

    grads = []
    for leaf in leaves:
        g = adjoints.get(id(leaf))
        if g is None:
            g = np.zeros(_shape(leaf))
        grads.append(g)
    return grads


def value_and_grad(f, argnums=(0,)):
    """Wrap ``f`` so it returns ``(value, grads)`` for the chosen arguments.

    ``f`` receives its arguments with the selected ones boxed and must
    return a scalar.  Inside an enclosing trace both the value and the
    gradients remain traced, which is how second-order quantities are
    obtained.
    """
    if isinstance(argnums, int):
        argnums = (argnums,)

    def wrapped(*args):
        level = _next_level()
        _traces[level] = _Trace(level)
        try:
            boxed = list(args)
            leaves = []
            for i in argnums:
                leaf = Box(args[i], level, None)
                boxed[i] = leaf
                leaves.append(leaf)
            out = f(*boxed)
            if isinstance(out, Box) and out.level == level:
                grads = _backward(out, level, leaves)
                value = out.value
            else:
                value = out
                grads = [np.zeros(_shape(leaf)) for leaf in leaves]
            return value, tuple(grads)
        finally:
            del _traces[level]

    return wrapped


def grad(f, argnums=(0,)):
    """Gradient-only variant of :func:`value_and_grad`."""
    vag = value_and_grad(f, argnums)

    def wrapped(*args):
        _, grads = vag(*args)
        return grads if len(grads) > 1 else grads[0]

    return wrapped
