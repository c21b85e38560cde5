"""The coarse millefeuille space: tree-constrained tents and its visual boundary.

Points carry a fiber coordinate x in R^n, a downward tree ray xi in Q_m, and a
real height t; the tree merge height of the two rays joins the usual tent
floor, so horizontal transfer is only available where the rays already run
together. Boundary points drop the height.

Boundary normalization: the standard ultrametric on the tree factor forces a
snowflake of the whole boundary metric by ln(m). Concretely, structures are
reparametrized so that a_1 = ln(m) (:func:`normalize_for_boundary`), and
:func:`boundary_visual` returns m ** t* where t* is the merge-constrained
Euclidean unit-crossing height. With that normalization the closed-form
maximum metric :func:`dmax_formula` is comparable to the model value with a
constant bounded by sqrt(n), one constant across all three regimes (same
hyperplane, same tree copy, mixed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .heintze import (
    ExpandingStructure,
    HoroPoint,
    _tent_min,
    crossing_height,
    dm_closed_form,
    level_metric,
    snowflake_reparam,
)
from .madic import NEG_INF, MAdicPoint, TreeVertex, agreement_height, ball_of, madic_distance

_LN_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MillePoint:
    """A point (x, xi, t); equality is ball equivalence at the current height."""

    x: np.ndarray
    xi: MAdicPoint
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "t", float(self.t))


@dataclass(frozen=True, eq=False)
class BoundaryPoint:
    """A boundary point (x, xi) of R^n x Q_m."""

    x: np.ndarray
    xi: MAdicPoint

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))

    def to_json(self) -> str:
        return json.dumps({"x": self.x.tolist(), "xi": self.xi.encode()}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BoundaryPoint":
        data = json.loads(text)
        extra = set(data) - {"x", "xi"}
        if extra:
            raise ValueError(f"unknown boundary point keys: {sorted(extra)}")
        return cls(np.asarray(data["x"], dtype=float), MAdicPoint.parse(data["xi"]))


def same_mille_point(p: MillePoint, q: MillePoint) -> bool:
    """Ball equivalence: equal x, equal t, and rays agreeing at heights >= floor(t)."""
    if p.t != q.t or not np.array_equal(p.x, q.x):
        return False
    return agreement_height(p.xi, q.xi) <= math.floor(p.t)


def shift_point(E: ExpandingStructure, p: MillePoint, s: int) -> MillePoint:
    """Translate a point up by s: flow the fiber, shift the ray's digits."""
    from .heintze import apply_flow

    return MillePoint(apply_flow(E, s, p.x), p.xi.shift(s), p.t + s)


def mille_distance(E: ExpandingStructure, m: int, p: MillePoint, q: MillePoint) -> float:
    """Tent distance with the tree merge constraint joining the apex floor."""
    if p.xi.base != m or q.xi.base != m:
        raise ValueError(f"tree base mismatch: expected {m}")
    if p.x.shape != (E.dim,) or q.x.shape != (E.dim,):
        raise ValueError(f"fiber coordinates must have dimension {E.dim}")
    merge = agreement_height(p.xi, q.xi)
    floor = max(p.t, q.t)
    if merge != NEG_INF:
        floor = max(floor, float(merge))
    dx = p.x - q.x
    if not np.any(dx):
        return (floor - p.t) + (floor - q.t)
    return _tent_min(E, p.t, q.t, dx, floor)


# -- the parabolic visual boundary --------------------------------------------


def normalize_for_boundary(E: ExpandingStructure, m: int) -> tuple[ExpandingStructure, float]:
    """Reparametrize so a_1 = ln(m); returns (structure, applied factor)."""
    if m < 2:
        raise ValueError("tree base must be at least 2")
    factor = math.log(m) / E.alpha1
    E2 = snowflake_reparam(E, factor)
    return replace(E2, snowflake=math.log(m)), factor


def _require_normalized(E: ExpandingStructure, m: int) -> None:
    target = math.log(m)
    if abs(E.alpha1 - target) > _LN_TOL * max(1.0, target):
        raise ValueError(
            f"structure must be normalized so a_1 = ln({m}) = {target:.12g} "
            f"(got a_1 = {E.alpha1:.12g}); see normalize_for_boundary"
        )


def boundary_visual(E: ExpandingStructure, m: int, a: BoundaryPoint, b: BoundaryPoint) -> float:
    """Model-side boundary distance m ** t*.

    t* is the least height, at or above the tree merge height, past which the
    Euclidean level metric of the fiber parts stays below 1 -- the height at
    which the two vertical geodesics come within unit distance. Requires the
    ln(m) normalization (a_1 = ln m); the snowflake by ln(m) is what turns the
    tree regime into the standard ultrametric m ** merge_height.
    """
    _require_normalized(E, m)
    if a.xi.base != m or b.xi.base != m:
        raise ValueError(f"tree base mismatch: expected {m}")
    merge = agreement_height(a.xi, b.xi)
    same_fiber = np.array_equal(a.x, b.x)
    if same_fiber and merge == NEG_INF:
        return 0.0
    if same_fiber:
        t_star = float(merge)
    else:
        floor = None if merge == NEG_INF else float(merge)
        t_star = crossing_height(E, a.x, b.x, floor=floor)
    return float(m) ** t_star


def dmax_formula(E: ExpandingStructure, m: int, a: BoundaryPoint, b: BoundaryPoint) -> float:
    """Closed-form boundary metric: max of the layer formula and the tree ultrametric."""
    if not E.is_diagonal:
        raise ValueError("the closed form requires a diagonal structure")
    if a.xi.base != m or b.xi.base != m:
        raise ValueError(f"tree base mismatch: expected {m}")
    return max(dm_closed_form(E, a.x, b.x), madic_distance(a.xi, b.xi, float(m)))


# -- hyperplanes ---------------------------------------------------------------


class _InfinityEnd:
    """Sentinel for the distinguished end of the tree."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITY_END"


INFINITY_END = _InfinityEnd()


@dataclass(frozen=True)
class Hyperplane:
    """Preimage of a bi-infinite tree geodesic.

    ``kind`` is "coherent" (one downward end plus the distinguished end: a
    full copy of the homogeneous model) or "doubled" (two downward ends: two
    horoball complements glued along the horosphere at the apex).
    """

    kind: str
    ends: tuple[MAdicPoint, ...]
    apex: TreeVertex | None = None

    def contains(self, p: MillePoint) -> bool:
        """Whether the tree position of p at its height lies on the geodesic."""
        t_ball = math.floor(p.t)
        if self.kind == "coherent":
            return agreement_height(p.xi, self.ends[0]) <= t_ball
        if p.t > self.apex.height:
            return False
        if p.t != self.apex.height and t_ball == self.apex.height:
            return False  # the edge above the apex is not on the geodesic
        return any(agreement_height(p.xi, end) <= t_ball for end in self.ends)


def classify_hyperplane(end_a, end_b) -> Hyperplane:
    """Classify the hyperplane over the geodesic joining two tree ends.

    Ends are downward rays given as m-adic points, or :data:`INFINITY_END`.
    Two encodings of the same downward ray (or one ray with the distinguished
    end) give a coherent hyperplane; distinct downward rays give a doubled one
    with apex at the unique orientation-change height.
    """
    a_inf = end_a is INFINITY_END
    b_inf = end_b is INFINITY_END
    if a_inf and b_inf:
        raise ValueError("malformed geodesic: the two rays share no vertex (both ends at infinity)")
    if a_inf or b_inf:
        xi = end_b if a_inf else end_a
        return Hyperplane("coherent", (xi,))
    if end_a.base != end_b.base:
        raise ValueError(f"base mismatch: {end_a.base} != {end_b.base}")
    merge = agreement_height(end_a, end_b)
    if merge == NEG_INF:
        return Hyperplane("coherent", (end_a,))
    apex = ball_of(end_a, int(merge))
    return Hyperplane("doubled", (end_a, end_b), apex)


# -- doubled horoball complements ----------------------------------------------


def constrained_distance(E: ExpandingStructure, p: HoroPoint, q: HoroPoint,
                         cap: float, copies: tuple[int, int] = (0, 1)) -> float:
    """Induced path distance in a doubled horoball complement capped at ``cap``.

    The space is two copies of the sub-level set { t <= cap } glued along the
    horosphere at cap. Within one copy the apex of the tent may sit anywhere
    up to the cap; crossing between copies happens only on the glueing
    horosphere, where the full level distance at the cap is paid. Heights
    above the cap are rejected.
    """
    if p.t > cap or q.t > cap:
        raise ValueError("point height above the cap")
    if copies[0] == copies[1]:
        dx = p.x - q.x
        if not np.any(dx):
            return abs(p.t - q.t)
        return _tent_min(E, p.t, q.t, dx, max(p.t, q.t), cap=cap)
    return (cap - p.t) + (cap - q.t) + level_metric(E, cap, p.x, q.x)
