"""Scalar-output computation graphs over a data point and parameters.

A :class:`ComputationGraph` packages a traced builder function together
with the shapes it expects: a feature slot ``x``, an optional target slot
``y`` and a tuple of parameter arrays.  Evaluation, input gradients and
the parameter gradient of the gradient-norm-penalized batch objective are
all derived from the same builder through the tape engine, so there is a
single source of truth for the differentiated program.

Graphs whose builder happens to be a standard feed-forward classifier can
carry a :class:`KernelHint`; batch-level entry points then dispatch to the
compiled kernels (or their numpy fallback) and the tape engine remains the
reference implementation the kernels are tested against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import engine
from .engine import deep_value, value_and_grad


class GraphError(ValueError):
    """Structural problem with a computation graph or its inputs."""


class SlotShapeError(GraphError):
    """An input does not match the declared shape of its slot."""

    def __init__(self, slot: str, expected, got):
        self.slot = slot
        self.expected = tuple(expected)
        self.got = tuple(got)
        super().__init__(
            f"slot {slot!r} expects shape {self.expected}, got {self.got}"
        )


@dataclass(frozen=True)
class KernelHint:
    """Marks a graph as a plain MLP classifier the fast kernels understand.

    ``widths`` runs from the input dimension to the number of classes,
    ``activation`` applies to every hidden layer (the output layer is the
    identity).
    """

    widths: tuple[int, ...]
    activation: str = "tanh"
    leaky_slope: float = 0.01


@dataclass(frozen=True)
class ComputationGraph:
    """A fixed differentiable program ``(x, y, params) -> scalar``.

    The builder must be written with the primitives from
    :mod:`wdro.autodiff.engine`; it is traced afresh on every call, which
    pins the topological evaluation order to the builder's own statement
    order and keeps evaluation bit-deterministic.
    """

    x_dim: int
    y_dim: Optional[int]  # None: no target slot; k: probability vector of length k
    param_shapes: tuple[tuple[int, ...], ...]
    builder: Callable
    name: str = ""
    kernel_hint: Optional[KernelHint] = None

    def _check(self, x, y, params):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.x_dim,):
            raise SlotShapeError("x", (self.x_dim,), x.shape)
        if self.y_dim is None:
            if y is not None:
                raise GraphError(f"graph {self.name!r} has no target slot")
            yv = None
        else:
            yv = np.asarray(y, dtype=np.float64)
            if yv.shape != (self.y_dim,):
                raise SlotShapeError("y", (self.y_dim,), yv.shape)
        if len(params) != len(self.param_shapes):
            raise GraphError(
                f"expected {len(self.param_shapes)} parameter arrays, "
                f"got {len(params)}"
            )
        pv = []
        for i, (p, shape) in enumerate(zip(params, self.param_shapes)):
            p = np.asarray(p, dtype=np.float64)
            if p.shape != shape:
                raise SlotShapeError(f"theta[{i}]", shape, p.shape)
            pv.append(p)
        return x, yv, tuple(pv)


def evaluate(graph: ComputationGraph, x, y, params) -> float:
    """Run the graph forward and return the scalar output."""
    x, y, params = graph._check(x, y, params)
    out = graph.builder(x, y, params)
    return float(deep_value(out))


def input_gradient(graph: ComputationGraph, x, y, params) -> np.ndarray:
    """Gradient of the output with respect to the feature slot ``x``.

    The target slot carries no gradient; only the feature block is
    differentiated.
    """
    x, y, params = graph._check(x, y, params)

    def fx(xv):
        return graph.builder(xv, y, params)

    _, (g,) = value_and_grad(fx)(x)
    return np.asarray(deep_value(g), dtype=np.float64)


def value_and_input_gradient(graph: ComputationGraph, x, y, params):
    x, y, params = graph._check(x, y, params)

    def fx(xv):
        return graph.builder(xv, y, params)

    v, (g,) = value_and_grad(fx)(x)
    return float(deep_value(v)), np.asarray(deep_value(g), dtype=np.float64)


def parameter_gradient(graph: ComputationGraph, x, y, params):
    """Plain first-order gradient of the output w.r.t. every parameter."""
    x, y, params = graph._check(x, y, params)
    n = len(params)

    def f(*ps):
        return graph.builder(x, y, ps)

    v, grads = value_and_grad(f, tuple(range(n)))(*params)
    return float(deep_value(v)), [np.asarray(deep_value(g)) for g in grads]


def parameter_gradient_of_penalized_loss(
    graph: ComputationGraph,
    xs: Sequence[np.ndarray],
    ys: Sequence,
    params,
    lam_grad: float,
):
    """Value and parameter gradient of the penalized batch objective

        mean_b h(x_b, y_b; theta) + lam_grad * mean_b ||d h / d x_b||_2^2.

    The penalty gradient needs second derivatives; they are obtained by
    running the input-gradient reverse sweep inside the parameter trace,
    i.e. by differentiating the tape of the first backward pass.  Batch
    sums accumulate left to right.

    Returns ``(objective, mean_loss, mean_penalty, grads)``.
    """
    if len(xs) != len(ys):
        raise GraphError("batch feature/target length mismatch")
    if len(xs) == 0:
        raise GraphError("empty batch")
    checked = [graph._check(x, y, params) for x, y in zip(xs, ys)]
    params = checked[0][2]
    nb = float(len(xs))
    lam = float(lam_grad)
    n = len(params)

    parts = {"loss": 0.0, "pen": 0.0}

    def objective(*ps):
        loss_sum = None
        pen_sum = None
        for x, y, _ in checked:
            def fx(xv):
                return graph.builder(xv, y, ps)

            h, (gx,) = value_and_grad(fx)(x)
            parts["loss"] += float(deep_value(h))
            gx_raw = deep_value(gx)
            parts["pen"] += float(np.dot(gx_raw, gx_raw))
            loss_sum = h if loss_sum is None else engine.add(loss_sum, h)
            if lam != 0.0:
                pen = engine.dot(gx, gx)
                pen_sum = pen if pen_sum is None else engine.add(pen_sum, pen)
        total = engine.mul(loss_sum, 1.0 / nb)
        if lam != 0.0:
            total = engine.add(total, engine.mul(pen_sum, lam / nb))
        return total

    v, grads = value_and_grad(objective, tuple(range(n)))(*params)

    return (
        float(deep_value(v)),
        parts["loss"] / nb,
        parts["pen"] / nb,
        [np.asarray(deep_value(g), dtype=np.float64) for g in grads],
    )
