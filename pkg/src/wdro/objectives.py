"""Empirical risk, gradient-norm penalties, and penalized surrogates.

The central objects are :class:`DifferentiableLoss` (a computation graph
bound to parameters, viewed as a function of the sample point) and the
penalized estimates built from it:

* ``risk``: weighted mean loss over a discrete measure;
* ``gradient_penalty``: the p*-moment of the dual norm of the input
  gradient, ``( sum_i w_i ||grad h(z_i)||_*^{p*} )^{1/p*}``;
* ``surrogate_risk``: risk plus ``alpha`` times the penalty, the
  first-order proxy for the worst-case risk over a Wasserstein ball of
  radius ``alpha`` and order p;
* ``perturbed_surrogate_risk``: the same two terms evaluated on a locally
  perturbed measure instead of the base points;
* ``training_objective``: the trainable batch analog, mean cross-entropy
  plus ``lam_grad`` times the mean squared l2 input-gradient norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import engine
from .autodiff.graph import (
    ComputationGraph,
    evaluate,
    input_gradient,
    parameter_gradient_of_penalized_loss,
)
from .geometry import HolderPair, NormSpec, dual_norm
from .measures import EmpiricalMeasure, PerturbedMeasure

__all__ = [
    "DifferentiableLoss",
    "SurrogateConfig",
    "risk",
    "gradient_penalty",
    "surrogate_risk",
    "perturbed_surrogate_risk",
    "training_objective",
    "scalar_network_loss",
    "quadratic_loss",
    "tanh_network_bounds",
]

# sup |tanh''| over the reals, attained where tanh^2 = 1/3
TANH_SECOND_DERIVATIVE_MAX = 4.0 / (3.0 * math.sqrt(3.0))


@dataclass(frozen=True, eq=False)
class DifferentiableLoss:
    """A graph plus bound parameters, exposed as ``h(z)`` over flat points.

    For labeled spaces the point layout is ``[x..., label]`` (integer
    mode) or ``[x..., onehot...]``; unlabeled spaces use the whole vector
    as features.  ``holder`` optionally records an analytic
    ``(C_H, k)`` smoothness descriptor of the input gradient and
    ``lipschitz`` an upper bound on the loss's norm-Lipschitz constant;
    verification suites use both, nothing enforces them.
    """

    graph: ComputationGraph
    params: tuple
    label_mode: str = "integer"
    holder: Optional[tuple[float, float]] = None
    lipschitz: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(
            self,
            "params",
            tuple(np.asarray(p, dtype=np.float64) for p in self.params),
        )
        if self.label_mode not in ("integer", "onehot"):
            raise ValueError(f"unknown label mode {self.label_mode!r}")

    @property
    def x_dim(self) -> int:
        return self.graph.x_dim

    @property
    def point_dim(self) -> int:
        """Length of the flat point vector this loss consumes."""
        if self.graph.y_dim is None:
            return self.graph.x_dim
        if self.label_mode == "integer":
            return self.graph.x_dim + 1
        return self.graph.x_dim + self.graph.y_dim

    def _split(self, z):
        z = np.asarray(z, dtype=np.float64).ravel()
        if z.size != self.point_dim:
            raise ValueError(
                f"point has {z.size} slots, loss {self.name!r} expects "
                f"{self.point_dim}"
            )
        if self.graph.y_dim is None:
            return z, None
        x = z[: self.graph.x_dim]
        rest = z[self.graph.x_dim:]
        if self.label_mode == "integer":
            label = int(round(float(rest[0])))
            if not 0 <= label < self.graph.y_dim:
                raise ValueError(
                    f"label {label} outside [0, {self.graph.y_dim})"
                )
            y = np.zeros(self.graph.y_dim)
            y[label] = 1.0
            return x, y
        return x, rest

    def value(self, z) -> float:
        x, y = self._split(z)
        return evaluate(self.graph, x, y, self.params)

    def input_gradient(self, z) -> np.ndarray:
        """Gradient with respect to the full point; label slots are zero."""
        x, y = self._split(z)
        g = np.zeros(self.point_dim)
        g[: self.graph.x_dim] = input_gradient(self.graph, x, y, self.params)
        return g

    def values_on(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.array([self.value(z) for z in pts])


@dataclass(frozen=True)
class SurrogateConfig:
    """Radius, order pair, and norm for the penalized surrogate."""

    alpha: float
    order: HolderPair
    norm: NormSpec

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


def _measure_points(measure):
    # EmpiricalMeasure and PerturbedMeasure agree on this interface: the
    # perturbed variant serves its moved points under the base weights.
    return measure.points, measure.weights


def risk(loss: DifferentiableLoss, measure) -> float:
    """Weighted mean loss; a perturbed measure contributes its moved
    points with the base weights."""
    pts, w = _measure_points(measure)
    return float(np.dot(w, loss.values_on(pts)))


def gradient_penalty(loss: DifferentiableLoss, measure, p_star,
                     norm: NormSpec) -> float:
    """The ``(Q, p*)`` gradient-norm moment: dual norms of the per-point
    input gradients, aggregated by the p*-mean (maximum when p* = inf)."""
    pts, w = _measure_points(measure)
    duals = np.array([
        dual_norm(loss.input_gradient(z), norm) for z in pts
    ])
    if p_star == math.inf:
        return float(np.max(duals))
    ps = float(p_star)
    if ps < 1:
        raise ValueError(f"p* must lie in [1, inf], got {p_star}")
    return float(np.dot(w, duals ** ps) ** (1.0 / ps))


def surrogate_risk(loss: DifferentiableLoss, measure,
                   cfg: SurrogateConfig) -> float:
    """Risk plus alpha times the gradient penalty on the same measure."""
    base = risk(loss, measure)
    if cfg.alpha == 0.0:
        return base
    return base + cfg.alpha * gradient_penalty(
        loss, measure, cfg.order.p_star, cfg.norm
    )


def perturbed_surrogate_risk(loss: DifferentiableLoss,
                             perturbed: PerturbedMeasure,
                             cfg: SurrogateConfig) -> float:
    """The surrogate evaluated on locally moved points: both the risk term
    and the penalty term use the perturbed support."""
    if not isinstance(perturbed, PerturbedMeasure):
        raise TypeError("perturbed_surrogate_risk needs a PerturbedMeasure")
    return surrogate_risk(loss, perturbed, cfg)


def training_objective(
    graph: ComputationGraph,
    features: np.ndarray,
    targets: np.ndarray,
    params,
    lam_grad: float,
):
    """Batch objective  mean_b CE + lam_grad * mean_b ||d CE / d x_b||_2^2
    with its parameter gradient.

    Dispatches to the compiled kernels when the graph carries a matching
    :class:`~wdro.autodiff.graph.KernelHint`; otherwise the tape engine
    differentiates the generic graph.  Returns
    ``(objective, mean_loss, mean_penalty, grads)``.
    """
    X = np.ascontiguousarray(features, dtype=np.float64)
    Y = np.ascontiguousarray(targets, dtype=np.float64)
    hint = graph.kernel_hint
    if hint is not None:
        from . import _accel

        return _accel.penalized_objective(
            [np.ascontiguousarray(p) for p in params],
            hint, X, Y, float(lam_grad),
        )
    return parameter_gradient_of_penalized_loss(
        graph, list(X), list(Y), params, lam_grad
    )


# ---------------------------------------------------------------------------
# ready-made losses for studies and tests
# ---------------------------------------------------------------------------

def scalar_network_loss(
    weights: list,
    activation: str = "tanh",
    holder: Optional[tuple[float, float]] = None,
    lipschitz: Optional[float] = None,
    name: str = "scalar-net",
) -> DifferentiableLoss:
    """An unlabeled scalar loss ``h(x)`` given by a small feed-forward
    network with a single output and no target slot.

    ``weights`` alternates matrices and bias vectors,
    ``[W1, b1, ..., WJ, bJ]`` with ``WJ`` having one row.  Hidden layers
    use ``activation``; the output layer is affine.
    """
    if len(weights) % 2 != 0 or not weights:
        raise ValueError("weights must alternate matrices and biases")
    mats = [np.asarray(w, dtype=np.float64) for w in weights]
    if mats[-2].shape[0] != 1:
        raise ValueError("final layer must have a single output row")
    x_dim = mats[0].shape[1]
    n_layers = len(mats) // 2

    if activation == "tanh":
        act = engine.tanh
    elif activation == "leaky_relu":
        act = engine.leaky_relu
    else:
        raise ValueError(f"unknown activation {activation!r}")

    def builder(x, y, params):
        a = x
        for layer in range(n_layers):
            w, b = params[2 * layer], params[2 * layer + 1]
            s = engine.add(engine.matvec(w, a), b)
            a = act(s) if layer < n_layers - 1 else s
        return engine.asum(a)

    graph = ComputationGraph(
        x_dim=x_dim,
        y_dim=None,
        param_shapes=tuple(m.shape for m in mats),
        builder=builder,
        name=name,
    )
    return DifferentiableLoss(
        graph=graph, params=tuple(mats), holder=holder,
        lipschitz=lipschitz, name=name,
    )


def quadratic_loss(curvature: float, slope, offset: float,
                   dim: int = 1, name: str = "quadratic") -> DifferentiableLoss:
    """``h(x) = curvature * <x, x> + <slope, x> + offset`` (unlabeled)."""
    slope_vec = np.full(dim, slope, dtype=np.float64) \
        if np.ndim(slope) == 0 else np.asarray(slope, dtype=np.float64)

    def builder(x, y, params):
        c, s = params
        quad = engine.mul(engine.asum(c), engine.dot(x, x))
        lin = engine.dot(s, x)
        return engine.add(engine.add(quad, lin), float(offset))

    graph = ComputationGraph(
        x_dim=dim,
        y_dim=None,
        param_shapes=((1,), (dim,)),
        builder=builder,
        name=name,
    )
    params = (np.array([curvature]), slope_vec)
    # grad h = 2 c x + s is (2|c|)-Lipschitz exactly
    return DifferentiableLoss(
        graph=graph, params=params,
        holder=(2.0 * abs(curvature), 1.0),
        name=name,
    )


def tanh_network_bounds(w1: np.ndarray, w2: np.ndarray):
    """Analytic ``(lipschitz, C_H)`` upper bounds for a one-hidden-layer
    tanh network ``x -> w2 @ tanh(w1 @ x + b1)`` with scalar output.

    ``|h'| <= sum_j |v_j| ||w_j||`` and the gradient is Hoelder with k = 1
    and constant ``sup|tanh''| * sum_j |v_j| ||w_j||^2``.
    """
    w1 = np.asarray(w1, dtype=np.float64)
    v = np.asarray(w2, dtype=np.float64).ravel()
    row_norms = np.linalg.norm(w1, axis=1)
    lip = float(np.sum(np.abs(v) * row_norms))
    c_h = float(TANH_SECOND_DERIVATIVE_MAX
                * np.sum(np.abs(v) * row_norms ** 2))
    return lip, c_h
