"""Discrete measures, local perturbations, and exact Wasserstein distances.

An :class:`EmpiricalMeasure` is a weighted finite set of points in a flat
sample space.  A :class:`PerturbedMeasure` moves every support point by a
bounded displacement while keeping its weight: the three constructors
(:func:`mixup_perturb`, :func:`mask_corrupt`, :func:`adversarial_perturb`)
record the displacement budget they can certify, and
:func:`verify_displacement_bound` re-measures the realized displacements
against it.

Wasserstein distances between small discrete measures are computed
exactly through the dense transportation simplex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import NormSpec, point_norm, sample_distance
from .transport import solve_transport

__all__ = [
    "EmpiricalMeasure",
    "PerturbedMeasure",
    "MixupConfig",
    "DisplacementReport",
    "mixup_perturb",
    "mask_corrupt",
    "adversarial_perturb",
    "salt_pepper_contaminate",
    "verify_displacement_bound",
    "wasserstein_distance",
    "SUPPORT_CAP",
]

SUPPORT_CAP = 64

_WEIGHT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Finitely supported probability measure: points with weights.

    Weights default to uniform and must be nonnegative and sum to one
    within ``1e-12``.
    """

    points: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError(f"points must be a nonempty (n, d) array, "
                             f"got shape {np.shape(self.points)}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite entries")
        object.__setattr__(self, "points", pts)

        if self.weights is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (pts.shape[0],):
                raise ValueError(
                    f"weights shape {w.shape} does not match "
                    f"{pts.shape[0]} points"
                )
            if np.any(w < 0):
                raise ValueError("weights must be nonnegative")
            if abs(float(w.sum()) - 1.0) > _WEIGHT_TOL:
                raise ValueError(
                    f"weights sum to {w.sum()!r}, expected 1 within "
                    f"{_WEIGHT_TOL}"
                )
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True, eq=False)
class PerturbedMeasure:
    """A measure whose support points moved by at most ``displacement_bound``
    (in the norm recorded alongside) while the weights stayed put."""

    base: EmpiricalMeasure
    points: np.ndarray
    displacement_bound: float
    norm: NormSpec
    kind: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != self.base.points.shape:
            raise ValueError(
                f"perturbed points shape {pts.shape} does not match base "
                f"{self.base.points.shape}"
            )
        object.__setattr__(self, "points", pts)
        if self.displacement_bound < 0:
            raise ValueError("displacement bound must be nonnegative")

    @property
    def weights(self) -> np.ndarray:
        return self.base.weights

    @property
    def n(self) -> int:
        return self.base.n


@dataclass(frozen=True)
class DisplacementReport:
    ok: bool
    bound: float
    max_displacement: float
    worst_index: int
    displacements: tuple[float, ...]


def verify_displacement_bound(pm: PerturbedMeasure,
                              slack: float = 1e-12) -> DisplacementReport:
    """Re-measure every displacement and compare with the recorded bound."""
    disps = [
        sample_distance(pm.points[i], pm.base.points[i], pm.norm)
        for i in range(pm.n)
    ]
    worst = int(np.argmax(disps)) if disps else 0
    max_disp = max(disps) if disps else 0.0
    return DisplacementReport(
        ok=max_disp <= pm.displacement_bound + slack,
        bound=pm.displacement_bound,
        max_displacement=max_disp,
        worst_index=worst,
        displacements=tuple(disps),
    )


# ---------------------------------------------------------------------------
# perturbation constructors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixupConfig:
    """Convex point mixing.

    ``gamma_floor`` rescales the Beta draw affinely into
    ``[gamma_floor, 1]``; it is how studies pin the displacement budget
    (a floor of ``1 - beta / (2 C_Z)`` certifies displacements <= beta).
    """

    beta_params: tuple[float, float] = (0.5, 0.5)
    pairing: str = "reversed"
    gamma_floor: Optional[float] = None

    def __post_init__(self):
        a, b = self.beta_params
        if a <= 0 or b <= 0:
            raise ValueError("Beta shape parameters must be positive")
        if self.pairing not in ("reversed", "random"):
            raise ValueError(f"unknown pairing {self.pairing!r}")
        if self.gamma_floor is not None and not 0.0 <= self.gamma_floor <= 1.0:
            raise ValueError("gamma_floor must lie in [0, 1]")


def mixup_perturb(
    base: EmpiricalMeasure,
    config: MixupConfig,
    rng: np.random.Generator,
    norm: NormSpec,
    gammas: Optional[np.ndarray] = None,
) -> PerturbedMeasure:
    """Mix every point with a partner: ``z_i' = g_i z_i + (1-g_i) z~_i``.

    Partners come from the reversed index order (position ``n-1-i``) or a
    seeded permutation.  Since the mixed point is a convex combination,
    its displacement is ``(1-g_i) ||z~_i - z_i|| <= 2 (1-g_min) C_Z`` with
    ``C_Z`` the largest point norm of the support, and that is the bound
    recorded on the result.  This argument needs a homogeneous norm, so
    integer-label product norms are rejected; use one-hot labels.

    ``gammas`` bypasses the Beta draw with given raw values in [0, 1]
    (still rescaled by ``gamma_floor``), which lets studies reuse one draw
    across a schedule of floors.
    """
    if norm.kind == "product_classification" and norm.label_mode == "integer":
        raise ValueError(
            "mixup needs a homogeneous norm; integer-label product norms "
            "make mixed labels incomparable (use label_mode='onehot')"
        )
    n = base.n
    if config.pairing == "reversed":
        partners = base.points[::-1]
    else:
        partners = base.points[rng.permutation(n)]

    raw = np.asarray(gammas, dtype=np.float64) if gammas is not None \
        else rng.beta(*config.beta_params, size=n)
    if raw.shape != (n,):
        raise ValueError(f"need {n} gamma values, got shape {raw.shape}")
    if np.any((raw < 0) | (raw > 1)):
        raise ValueError("raw gamma values must lie in [0, 1]")
    if config.gamma_floor is not None:
        g = config.gamma_floor + (1.0 - config.gamma_floor) * raw
    else:
        g = raw

    mixed = g[:, None] * base.points + (1.0 - g)[:, None] * partners
    c_z = max(point_norm(z, norm) for z in base.points)
    bound = 2.0 * (1.0 - float(g.min())) * c_z
    return PerturbedMeasure(
        base=base,
        points=mixed,
        displacement_bound=bound,
        norm=norm,
        kind="mixup",
        meta={"gamma_min": float(g.min()), "c_z": c_z,
              "gammas": g.copy()},
    )


def mask_corrupt(
    base: EmpiricalMeasure,
    drop_probability: float,
    rng: np.random.Generator,
    norm: NormSpec,
) -> PerturbedMeasure:
    """Zero out coordinates independently with the given probability.

    Each point becomes ``D_i z_i`` for a 0/1 diagonal mask ``D_i``.  The
    recorded bound is ``max_i ||I - D_i||_op * C_Z``; for the euclidean and
    sup norms the operator norm of a diagonal 0/1 projection is simply 1
    when any coordinate was dropped and 0 otherwise, so the bound is loose
    but certified from the realized masks.
    """
    if norm.kind == "product_classification":
        raise ValueError("mask corruption operates on plain feature spaces")
    if not 0.0 <= drop_probability <= 1.0:
        raise ValueError("drop probability must lie in [0, 1]")
    keep = (rng.random(base.points.shape) >= drop_probability)
    masked = base.points * keep
    dropped_any = bool(np.any(~keep))
    c_z = max(point_norm(z, norm) for z in base.points)
    d_op = 1.0 if dropped_any else 0.0
    return PerturbedMeasure(
        base=base,
        points=masked,
        displacement_bound=d_op * c_z,
        norm=norm,
        kind="mask",
        meta={"drop_probability": drop_probability, "c_z": c_z,
              "mask_operator_norm": d_op},
    )


def adversarial_perturb(
    base: EmpiricalMeasure,
    loss,
    budget: float,
    norm: NormSpec,
    steps: int = 1,
) -> PerturbedMeasure:
    """Move each feature block up the loss gradient inside a norm ball.

    ``loss`` must expose ``input_gradient(z) -> grad over z`` (label slots
    ignored).  One step takes the steepest-ascent direction of the feature
    norm (l2 direction ``g/||g||``, or ``sign(g)`` under the sup norm)
    scaled by ``budget / steps``; every step re-projects onto the budget
    ball, so the recorded displacement bound is exactly ``budget``.
    Labels never move.
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x_dim = norm.x_dim if norm.kind == "product_classification" \
        else base.dim
    ball = "sup" if norm.kind == "sup" else "euclidean"
    step_size = budget / steps

    out = base.points.copy()
    for i in range(base.n):
        z = out[i]
        x0 = z[:x_dim].copy()
        r = np.zeros(x_dim)
        for _ in range(steps):
            z_cur = z.copy()
            z_cur[:x_dim] = x0 + r
            g = np.asarray(loss.input_gradient(z_cur), dtype=np.float64)
            g = g[:x_dim]
            if ball == "sup":
                direction = np.sign(g)
            else:
                gn = float(np.linalg.norm(g))
                if gn == 0.0:
                    break
                direction = g / gn
            r = r + step_size * direction
            if ball == "sup":
                r = np.clip(r, -budget, budget)
            else:
                rn = float(np.linalg.norm(r))
                if rn > budget:
                    r *= budget / rn
        z[:x_dim] = x0 + r
    return PerturbedMeasure(
        base=base,
        points=out,
        displacement_bound=float(budget),
        norm=norm,
        kind="adversarial",
        meta={"steps": steps},
    )


def salt_pepper_contaminate(
    features: np.ndarray,
    pixel_probability: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Snap each coordinate independently to -1 or +1 (equal chance) with
    the given probability.  Data is assumed to live in the [-1, 1] box, so
    contaminated points stay inside it."""
    if not 0.0 <= pixel_probability <= 1.0:
        raise ValueError("pixel probability must lie in [0, 1]")
    x = np.asarray(features, dtype=np.float64)
    hit = rng.random(x.shape) < pixel_probability
    extremes = np.where(rng.random(x.shape) < 0.5, -1.0, 1.0)
    return np.where(hit, extremes, x)


# ---------------------------------------------------------------------------
# exact optimal transport distances
# ---------------------------------------------------------------------------

def wasserstein_distance(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    p,
    norm: NormSpec,
) -> float:
    """Order-``p`` Wasserstein distance between two discrete measures,
    solved exactly on the transportation polytope.

    The combined support may hold at most ``SUPPORT_CAP`` points; beyond
    that the dense tableau stops being the right tool.
    """
    p = float(p)
    if not (1.0 <= p < math.inf):
        raise ValueError(f"order must lie in [1, inf), got {p}")
    if mu.n + nu.n > SUPPORT_CAP:
        raise ValueError(
            f"combined support {mu.n + nu.n} exceeds the cap of "
            f"{SUPPORT_CAP} points"
        )
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    cost = np.empty((mu.n, nu.n))
    for i in range(mu.n):
        for j in range(nu.n):
            cost[i, j] = sample_distance(mu.points[i], nu.points[j],
                                         norm) ** p
    plan = solve_transport(cost, mu.weights, nu.weights)
    return float(max(plan.objective, 0.0) ** (1.0 / p))
