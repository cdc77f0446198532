"""Central finite-difference verification of analytic derivatives.

This is the independent numerical route against which the tape engine is
judged: every derivative the engine produces can be replayed coordinate by
coordinate through symmetric differences of plain forward evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .graph import (
    ComputationGraph,
    evaluate,
    input_gradient,
    parameter_gradient,
    parameter_gradient_of_penalized_loss,
)

REL_FLOOR = 1e-8


@dataclass(frozen=True)
class FDEntry:
    """One compared coordinate."""

    slot: str
    analytic: float
    numeric: float
    abs_error: float
    rel_error: float


@dataclass(frozen=True)
class FiniteDifferenceReport:
    """Per-coordinate comparison table, worst offenders first."""

    entries: tuple[FDEntry, ...]
    step: float

    @property
    def max_abs_error(self) -> float:
        return max((e.abs_error for e in self.entries), default=0.0)

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)

    def worst(self, k: int = 5) -> tuple[FDEntry, ...]:
        return self.entries[:k]


def _entry(slot: str, analytic: float, numeric: float) -> FDEntry:
    abs_err = abs(analytic - numeric)
    rel_err = abs_err / max(abs(analytic), REL_FLOOR)
    return FDEntry(slot, analytic, numeric, abs_err, rel_err)


def _sorted_report(entries, step) -> FiniteDifferenceReport:
    ordered = tuple(sorted(entries, key=lambda e: -e.rel_error))
    return FiniteDifferenceReport(ordered, step)


def finite_difference_check(
    graph: ComputationGraph,
    x,
    y,
    params,
    step: float = 1e-4,
) -> FiniteDifferenceReport:
    """Compare analytic first derivatives against central differences.

    Both the feature gradient and every parameter gradient of the graph
    output are checked.  Relative error uses a floor of ``1e-8`` on the
    analytic magnitude so near-zero coordinates do not blow up the table.
    """
    x = np.asarray(x, dtype=np.float64)
    params = [np.asarray(p, dtype=np.float64) for p in params]
    entries = []

    gx = input_gradient(graph, x, y, params)
    for i in range(x.size):
        xp = x.copy(); xp[i] += step
        xm = x.copy(); xm[i] -= step
        num = (evaluate(graph, xp, y, params)
               - evaluate(graph, xm, y, params)) / (2.0 * step)
        entries.append(_entry(f"x[{i}]", float(gx[i]), num))

    _, gps = parameter_gradient(graph, x, y, params)
    for k, (p, gp) in enumerate(zip(params, gps)):
        flat = p.reshape(-1)
        gflat = np.asarray(gp).reshape(-1)
        for j in range(flat.size):
            pp = [q.copy() for q in params]
            pm = [q.copy() for q in params]
            pp[k].reshape(-1)[j] += step
            pm[k].reshape(-1)[j] -= step
            num = (evaluate(graph, x, y, pp)
                   - evaluate(graph, x, y, pm)) / (2.0 * step)
            entries.append(_entry(f"theta[{k}][{j}]", float(gflat[j]), num))

    return _sorted_report(entries, step)


def finite_difference_check_penalized(
    graph: ComputationGraph,
    xs: Sequence[np.ndarray],
    ys: Sequence,
    params,
    lam_grad: float,
    step: float = 1e-4,
) -> FiniteDifferenceReport:
    """Second-order check: the parameter gradient of the penalized batch
    objective against central differences of its plain value.

    The penalty term contains the squared input-gradient norm, so this
    exercises the differentiated reverse sweep.
    """
    params = [np.asarray(p, dtype=np.float64) for p in params]

    def value_at(ps) -> float:
        total_h = 0.0
        total_pen = 0.0
        for x, y in zip(xs, ys):
            h, gx = _value_and_xgrad(graph, x, y, ps)
            total_h += h
            total_pen += float(np.dot(gx, gx))
        nb = float(len(xs))
        return total_h / nb + lam_grad * total_pen / nb

    _, _, _, grads = parameter_gradient_of_penalized_loss(
        graph, xs, ys, params, lam_grad
    )

    entries = []
    for k, (p, gp) in enumerate(zip(params, grads)):
        flat = np.asarray(gp).reshape(-1)
        for j in range(p.size):
            pp = [q.copy() for q in params]
            pm = [q.copy() for q in params]
            pp[k].reshape(-1)[j] += step
            pm[k].reshape(-1)[j] -= step
            num = (value_at(pp) - value_at(pm)) / (2.0 * step)
            entries.append(_entry(f"theta[{k}][{j}]", float(flat[j]), num))

    return _sorted_report(entries, step)


def _value_and_xgrad(graph, x, y, params):
    from .graph import value_and_input_gradient

    return value_and_input_gradient(graph, x, y, params)
