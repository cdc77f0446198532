"""Norms on the sample space, their duals, and Hölder conjugate orders.

Three norms cover every study in the package:

``euclidean``
    plain l2 on the whole vector;
``sup``
    l-infinity (whose dual is l1);
``product_classification``
    for labeled points ``z = (x, y)``: l2 on the feature block plus a
    label term.  With integer labels the label term is
    ``label_gap * 1{y != y'}``; with one-hot labels the label block is
    measured as ``(label_gap / sqrt(2)) * ||dy||_2``, which coincides with
    the indicator on pure one-hot vectors but is positively homogeneous,
    as convex label mixing requires.

Orders are exact rationals (or infinity): conjugation is an involution on
``Fraction`` inputs with no float round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import numpy as np

__all__ = [
    "Order",
    "HolderPair",
    "NormSpec",
    "holder_conjugate",
    "point_norm",
    "sample_distance",
    "dual_norm",
]

Order = Union[int, float, Fraction]

_ROOT2 = math.sqrt(2.0)


def _as_order(p: Order):
    """Normalize an order to ``Fraction`` or ``math.inf``."""
    if p == math.inf:
        return math.inf
    q = Fraction(p)
    if q < 1:
        raise ValueError(f"order must lie in [1, inf], got {p!r}")
    return q


def holder_conjugate(p: Order):
    """The exponent ``p*`` with 1/p + 1/p* = 1.

    Follows the conventions 1/inf = 0 and 1/1 = 1, so ``1 -> inf`` and
    ``inf -> 1``.  Exact on rational input: conjugation is an involution.
    """
    q = _as_order(p)
    if q == math.inf:
        return Fraction(1)
    if q == 1:
        return math.inf
    return q / (q - 1)


@dataclass(frozen=True)
class HolderPair:
    """An order and its conjugate, kept exact."""

    p: Union[Fraction, float]
    p_star: Union[Fraction, float]

    @classmethod
    def from_order(cls, p: Order) -> "HolderPair":
        q = _as_order(p)
        return cls(q, holder_conjugate(q))

    def __post_init__(self):
        object.__setattr__(self, "p", _as_order(self.p))
        object.__setattr__(self, "p_star", _as_order(self.p_star))
        if holder_conjugate(self.p) != self.p_star:
            raise ValueError(
                f"{self.p} and {self.p_star} are not conjugate exponents"
            )


@dataclass(frozen=True)
class NormSpec:
    """Which norm the sample space carries.

    ``x_dim`` is required for the product norm and marks where the feature
    block ends; the remainder of the vector is the label block (a single
    integer slot, or ``n_classes`` one-hot slots).
    """

    kind: str = "euclidean"
    x_dim: int | None = None
    label_gap: float = 4.0
    label_mode: str = "integer"

    def __post_init__(self):
        if self.kind not in ("euclidean", "sup", "product_classification"):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.label_mode not in ("integer", "onehot"):
            raise ValueError(f"unknown label mode {self.label_mode!r}")
        if self.kind == "product_classification":
            if self.x_dim is None or self.x_dim < 1:
                raise ValueError(
                    "product_classification needs x_dim >= 1 to locate "
                    "the feature block"
                )
            if self.label_gap < 0:
                raise ValueError("label_gap must be nonnegative")

    # -- helpers -----------------------------------------------------------

    def split(self, z: np.ndarray):
        """Feature block and label block of a flat point."""
        z = np.asarray(z, dtype=np.float64)
        if self.kind != "product_classification":
            return z, None
        if z.ndim != 1 or z.size <= self.x_dim:
            raise ValueError(
                f"product point needs {self.x_dim} feature slots plus a "
                f"label block, got shape {np.shape(z)}"
            )
        return z[: self.x_dim], z[self.x_dim:]

    def _label_term(self, dy: np.ndarray) -> float:
        if self.label_mode == "integer":
            if dy.size != 1:
                raise ValueError(
                    "integer label mode expects exactly one label slot, "
                    f"got {dy.size}"
                )
            return self.label_gap if dy[0] != 0.0 else 0.0
        return (self.label_gap / _ROOT2) * float(np.linalg.norm(dy))


def point_norm(z, spec: NormSpec) -> float:
    """The norm of a single point under ``spec``."""
    z = np.asarray(z, dtype=np.float64)
    if spec.kind == "euclidean":
        return float(np.linalg.norm(z))
    if spec.kind == "sup":
        return float(np.max(np.abs(z))) if z.size else 0.0
    x, y = spec.split(z)
    return float(np.linalg.norm(x)) + spec._label_term(y)


def sample_distance(z1, z2, spec: NormSpec) -> float:
    """Norm-induced distance between two points of the sample space."""
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise ValueError(f"point shapes differ: {z1.shape} vs {z2.shape}")
    if spec.kind == "product_classification":
        x1, y1 = spec.split(z1)
        x2, y2 = spec.split(z2)
        return float(np.linalg.norm(x1 - x2)) + spec._label_term(y1 - y2)
    return point_norm(z1 - z2, spec)


def dual_norm(v, spec: NormSpec) -> float:
    """Dual norm of a gradient vector.

    For the product norm only the feature block matters: the label slot of
    a gradient carries nothing (the loss is never differentiated in the
    label direction), so the dual norm is the l2 norm of the x-block.
    """
    v = np.asarray(v, dtype=np.float64)
    if spec.kind == "euclidean":
        return float(np.linalg.norm(v))
    if spec.kind == "sup":
        return float(np.sum(np.abs(v)))
    if v.size > spec.x_dim:
        v = v[: spec.x_dim]
    elif v.size != spec.x_dim:
        raise ValueError(
            f"gradient has {v.size} slots, feature block has {spec.x_dim}"
        )
    return float(np.linalg.norm(v))
