"""Expanding homogeneous-space models G = R^n x| R and their visual boundary.

An :class:`ExpandingStructure` packages the one-parameter expanding action:
layer exponents a_1 <= ... <= a_r with block sizes, an optional explicit
upper-triangular matrix generator, and a snowflake exponent. The flow at time
t scales layer i by exp(a_i * t); boundary distances come from the height at
which two vertical geodesics first stay within unit distance of each other.

The coarse distance is the tent formula

    inf over h >= max(s, t) of  (h - s) + (h - t) + level(h),

a computable stand-in within bounded additive error of any metric with these
level sets and vertical geodesics; every claim consumed downstream is
invariant at quasi-isometry scale.

Unit heights come in two flavours and the difference matters:

* ``unit_height`` (diagonal structures) uses the per-layer max norm, whose
  unit crossing has the closed form max_i ln|dx_i| / a_i. This matches the
  closed-form boundary metric ``dm_closed_form`` to floating-point accuracy.
* ``crossing_height`` solves the crossing of the Euclidean level metric
  numerically; it differs from the closed form by at most ln(sqrt(n)) / a_1,
  which is exactly the slack the model-versus-formula comparisons measure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

_TRI_TOL = 1e-9


@dataclass(frozen=True)
class Layer:
    alpha: float
    size: int

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"layer exponent must be positive, got {self.alpha}")
        if not isinstance(self.size, int) or self.size < 1:
            raise ValueError(f"layer size must be a positive integer, got {self.size}")


@dataclass(frozen=True)
class HoroPoint:
    """A point (x, t) of the model: fiber coordinate x in R^n and height t."""

    x: np.ndarray
    t: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or not np.all(np.isfinite(x)) or not math.isfinite(self.t):
            raise ValueError("HoroPoint needs a finite vector and a finite height")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", float(self.t))


@dataclass(frozen=True)
class ExpandingStructure:
    """Spectral data of a one-parameter expanding group on R^n.

    ``layers`` must be sorted by ascending exponent with all exponents
    positive. ``matrix``, when given, is the time-one map in upper-triangular
    real form with positive diagonal; its diagonal magnitudes must equal
    exp(alpha_i) layer by layer. ``snowflake`` defaults to the smallest
    exponent. ``jordan_blocks`` optionally records (exponent, block size)
    spectral data for classification; diagonal structures derive it.
    """

    layers: tuple[Layer, ...]
    snowflake: float | None = None
    matrix: np.ndarray | None = None
    jordan_blocks: tuple[tuple[float, int], ...] | None = None
    _alpha_coord: np.ndarray = field(init=False, repr=False, compare=False)
    _generator: np.ndarray | None = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        layers = tuple(l if isinstance(l, Layer) else Layer(*l) for l in self.layers)
        if not layers:
            raise ValueError("at least one layer is required")
        alphas = [l.alpha for l in layers]
        if any(a2 < a1 for a1, a2 in zip(alphas, alphas[1:])):
            raise ValueError("layers must be sorted by ascending exponent")
        object.__setattr__(self, "layers", layers)
        if self.snowflake is None:
            object.__setattr__(self, "snowflake", layers[0].alpha)
        elif self.snowflake <= 0:
            raise ValueError("snowflake exponent must be positive")
        per_coord = np.repeat([l.alpha for l in layers], [l.size for l in layers])
        object.__setattr__(self, "_alpha_coord", per_coord)
        generator = None
        if self.matrix is not None:
            m = np.asarray(self.matrix, dtype=float)
            n = self.dim
            if m.shape != (n, n):
                raise ValueError(f"matrix must be {n}x{n}, got {m.shape}")
            if np.abs(np.tril(m, -1)).max(initial=0.0) > _TRI_TOL:
                raise ValueError("matrix must be upper-triangular in real form")
            diag = np.diag(m)
            if np.any(diag <= 0):
                raise ValueError("matrix diagonal must be positive")
            if not np.allclose(np.sort(np.log(diag)), np.sort(per_coord), atol=1e-6):
                raise ValueError("matrix eigenvalue magnitudes do not match exp(layer exponents)")
            generator = np.real(scipy.linalg.logm(m))
            object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "_generator", generator)
        if self.jordan_blocks is not None:
            blocks = tuple(sorted((float(a), int(k)) for a, k in self.jordan_blocks))
            if any(a <= 0 or k < 1 for a, k in blocks):
                raise ValueError("jordan blocks need positive exponents and sizes >= 1")
            object.__setattr__(self, "jordan_blocks", blocks)

    # -- structure queries -------------------------------------------------

    @property
    def dim(self) -> int:
        return int(sum(l.size for l in self.layers))

    @property
    def alpha1(self) -> float:
        return self.layers[0].alpha

    @property
    def is_diagonal(self) -> bool:
        return self.matrix is None

    def layer_slices(self) -> list[slice]:
        out, start = [], 0
        for l in self.layers:
            out.append(slice(start, start + l.size))
            start += l.size
        return out

    def layer_norms(self, dx: np.ndarray) -> np.ndarray:
        dx = np.asarray(dx, dtype=float)
        return np.array([np.linalg.norm(dx[sl]) for sl in self.layer_slices()])

    @classmethod
    def diagonal(cls, layers: Sequence[tuple[float, int]], snowflake: float | None = None) -> "ExpandingStructure":
        return cls(tuple(Layer(float(a), int(k)) for a, k in layers), snowflake)

    # -- serialization -----------------------------------------------------

    def to_json(self) -> str:
        data = {
            "layers": [{"alpha": l.alpha, "size": l.size} for l in self.layers],
            "snowflake": self.snowflake,
        }
        if self.matrix is not None:
            data["matrix"] = self.matrix.tolist()
        if self.jordan_blocks is not None:
            data["jordan_blocks"] = [[a, k] for a, k in self.jordan_blocks]
        return json.dumps(data, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExpandingStructure":
        data = json.loads(text)
        known = {"layers", "snowflake", "matrix", "jordan_blocks"}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown structure keys: {sorted(extra)}")
        layers = tuple(Layer(float(l["alpha"]), int(l["size"])) for l in data["layers"])
        matrix = np.asarray(data["matrix"], dtype=float) if "matrix" in data else None
        blocks = tuple((float(a), int(k)) for a, k in data["jordan_blocks"]) if "jordan_blocks" in data else None
        return cls(layers, data.get("snowflake"), matrix, blocks)


# -- the flow and level metrics ---------------------------------------------


def apply_flow(E: ExpandingStructure, s: float, x: np.ndarray) -> np.ndarray:
    """Apply the time-s expanding map to x."""
    x = np.asarray(x, dtype=float)
    if E._generator is not None:
        return scipy.linalg.expm(s * E._generator) @ x
    return np.exp(E._alpha_coord * s) * x


def level_metric(E: ExpandingStructure, t: float, x: np.ndarray, y: np.ndarray) -> float:
    """Distance at height t: the Euclidean norm of the flowed-back difference."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (E.dim,) or y.shape != (E.dim,):
        raise ValueError(f"points must have dimension {E.dim}")
    dx = x - y
    if E._generator is not None:
        return float(np.linalg.norm(scipy.linalg.expm(-t * E._generator) @ dx))
    return float(np.linalg.norm(np.exp(-E._alpha_coord * t) * dx))


def _level_fn(E: ExpandingStructure, dx: np.ndarray):
    if E._generator is not None:
        gen = E._generator
        return lambda h: float(np.linalg.norm(scipy.linalg.expm(-h * gen) @ dx))
    alpha = E._alpha_coord
    return lambda h: float(np.linalg.norm(np.exp(-alpha * h) * dx))


# -- 1-d minimization helpers -------------------------------------------------

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_min(f, lo: float, hi: float, tol: float = 1e-11) -> tuple[float, float]:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    h = 0.5 * (a + b)
    return h, f(h)


def _tent_min(E: ExpandingStructure, t1: float, t2: float, dx: np.ndarray,
              floor: float, cap: float | None = None) -> float:
    """inf over admissible apex heights h of (h - t1) + (h - t2) + level(h)."""
    level = _level_fn(E, dx)

    def objective(h: float) -> float:
        return (h - t1) + (h - t2) + level(h)

    if not np.any(dx):
        return objective(floor)
    d0 = level(floor)
    hi = floor + 0.5 * d0 + 1.0
    if cap is not None:
        hi = min(hi, cap)
        if hi <= floor:
            return objective(floor)
    if E.is_diagonal:
        _, val = _golden_min(objective, floor, hi)
    else:
        # polynomial factors from nilpotent parts can dent convexity: coarse
        # scan, then refine around the best cell
        grid = np.linspace(floor, hi, 65)
        vals = [objective(h) for h in grid]
        k = int(np.argmin(vals))
        a = grid[max(0, k - 1)]
        b = grid[min(len(grid) - 1, k + 1)]
        _, val = _golden_min(objective, a, b)
    return min(val, objective(floor), objective(hi))


def tent_distance(E: ExpandingStructure, p: HoroPoint, q: HoroPoint) -> float:
    """Coarse distance: cheapest path over a single apex at or above both heights.

    Symmetric, at least |p.t - q.t|, and exactly |p.t - q.t| along one fiber.
    """
    floor = max(p.t, q.t)
    dx = p.x - q.x
    if not np.any(dx):
        return abs(p.t - q.t)
    return _tent_min(E, p.t, q.t, dx, floor)


# -- unit heights and boundary metrics ----------------------------------------


def unit_height(E: ExpandingStructure, x: np.ndarray, y: np.ndarray) -> float:
    """Least height above which the two vertical geodesics stay within unit distance.

    For diagonal structures this is the closed form max over layers of
    ln|dx_i| / a_i (the per-layer max norm crosses 1 exactly there); otherwise
    it is found by bracketing the eventually-sub-unit region and bisecting.
    Raises ValueError when x == y (no unit height exists).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = x - y
    if not np.any(dx):
        raise ValueError("unit height is undefined for equal points")
    if E.is_diagonal:
        norms = E.layer_norms(dx)
        return max(math.log(n) / l.alpha for n, l in zip(norms, E.layers) if n > 0)
    return crossing_height(E, x, y)


def crossing_height(E: ExpandingStructure, x: np.ndarray, y: np.ndarray,
                    floor: float | None = None) -> float:
    """Numeric inf of { t : level_metric(E, s, x, y) <= 1 for all s >= t }.

    The Euclidean-norm twin of :func:`unit_height`; on diagonal structures the
    two differ by at most ln(sqrt(n)) / a_1. ``floor`` clamps the answer from
    below (merge constraints of fibered models).
    """
    dx = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if not np.any(dx):
        if floor is None:
            raise ValueError("crossing height is undefined for equal points")
        return floor
    level = _level_fn(E, dx)
    if E.is_diagonal:
        # strictly decreasing level: Newton on the log of the squared level,
        # which is convex, with a bisection guarantee
        norms = E.layer_norms(dx)
        alphas = np.array([l.alpha for l in E.layers])
        mask = norms > 0
        c = norms[mask] ** 2
        a = alphas[mask]
        t = float(np.max(np.log(norms[mask]) / a))  # starting point at or below the root
        for _ in range(60):
            w = c * np.exp(-2.0 * a * t)
            g = math.log(float(np.sum(w)))
            if abs(g) < 1e-14:
                break
            gprime = -2.0 * float(np.sum(a * w) / np.sum(w))
            step = g / gprime
            t_new = t - step
            if abs(t_new - t) < 1e-14 * max(1.0, abs(t)):
                t = t_new
                break
            t = t_new
        root = t
    else:
        # eventually-sub-unit predicate checked on a forward window; nilpotent
        # polynomial growth is dominated within a few multiples of 1/a_1
        span = 8.0 / E.alpha1 + 8.0
        probe = np.linspace(0.0, span, 48)

        def subunit_from(t: float) -> bool:
            return all(level(t + s) <= 1.0 for s in probe)

        hi = math.log(max(float(np.linalg.norm(dx)), 1e-300)) / E.alpha1 + 1.0
        while not subunit_from(hi):
            hi += 1.0
        lo = hi - 1.0
        while subunit_from(lo):
            lo -= 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if subunit_from(mid):
                hi = mid
            else:
                lo = mid
        root = hi
    if floor is not None:
        root = max(root, floor)
    return root


def visual_distance(E: ExpandingStructure, x: np.ndarray, y: np.ndarray,
                    epsilon: float | None = None) -> float:
    """Parabolic visual metric exp(epsilon * unit_height); 0 when x == y.

    ``epsilon`` defaults to the structure's snowflake exponent (itself
    defaulting to a_1, which makes this agree with the closed-form metric).
    """
    eps = E.snowflake if epsilon is None else epsilon
    if eps <= 0:
        raise ValueError("snowflake exponent must be positive")
    dx = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if not np.any(dx):
        return 0.0
    return math.exp(eps * unit_height(E, x, y))


def dm_closed_form(E: ExpandingStructure, v: np.ndarray, w: np.ndarray) -> float:
    """Closed-form boundary metric max_i |dx_i| ** (a_1 / a_i) for diagonal structures."""
    if not E.is_diagonal:
        raise ValueError("closed form requires a diagonal structure")
    norms = E.layer_norms(np.asarray(v, dtype=float) - np.asarray(w, dtype=float))
    a1 = E.alpha1
    best = 0.0
    for n, l in zip(norms, E.layers):
        if n > 0:
            best = max(best, n ** (a1 / l.alpha))
    return best


def dm_closed_form_batch(E: ExpandingStructure, V: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Vectorized :func:`dm_closed_form` over rows of V and W."""
    if not E.is_diagonal:
        raise ValueError("closed form requires a diagonal structure")
    D = np.asarray(V, dtype=float) - np.asarray(W, dtype=float)
    a1 = E.alpha1
    out = np.zeros(D.shape[0])
    for l, sl in zip(E.layers, E.layer_slices()):
        norms = np.linalg.norm(D[:, sl], axis=1)
        np.maximum(out, norms ** (a1 / l.alpha), out)
    return out


def euclid_cygan(E: ExpandingStructure, x: np.ndarray, y: np.ndarray,
                 cutoff: float = -40.0) -> float:
    """Finite-cutoff horospherical limit metric exp(T + tent((x,T),(y,T)) / 2).

    Approximates the T -> -infinity limit; once the tent apex sits above the
    cutoff the value no longer depends on T. Returns the limit value 0 for
    equal points. Convergence can be monitored with
    :func:`euclid_cygan_convergence`.
    """
    if cutoff >= 0:
        raise ValueError("cutoff must be negative")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.array_equal(x, y):
        return 0.0
    tent = tent_distance(E, HoroPoint(x, cutoff), HoroPoint(y, cutoff))
    return math.exp(cutoff + 0.5 * tent)


def euclid_cygan_convergence(E: ExpandingStructure, x: np.ndarray, y: np.ndarray,
                             cutoff: float = -40.0) -> tuple[float, float]:
    """Values at the cutoff and at twice the cutoff, for convergence monitoring."""
    return euclid_cygan(E, x, y, cutoff), euclid_cygan(E, x, y, 2.0 * cutoff)


def snowflake_reparam(E: ExpandingStructure, a: float) -> ExpandingStructure:
    """Reparametrize the flow by speed a: layer exponents scale by a.

    Pointwise, visual_distance(E, x, y) == visual_distance(E', x, y) ** a for
    the returned E' (the stored snowflake exponent is carried over unchanged,
    which is what makes the identity hold).
    """
    if a <= 0:
        raise ValueError(f"reparametrization speed must be positive, got {a}")
    layers = tuple(Layer(l.alpha * a, l.size) for l in E.layers)
    matrix = None
    if E.matrix is not None:
        matrix = np.real(scipy.linalg.expm(a * E._generator))
    blocks = None
    if E.jordan_blocks is not None:
        blocks = tuple((alpha * a, k) for alpha, k in E.jordan_blocks)
    return ExpandingStructure(layers, E.snowflake, matrix, blocks)


def visual_triangle_defect(E: ExpandingStructure, count: int = 2000, seed: int = 0,
                           x_half: float = 10.0) -> float:
    """Worst sampled triangle defect d(x,z) - d(x,y) - d(y,z) of the visual metric.

    Positive values witness an inadmissible snowflake exponent; the admissible
    range is reported empirically rather than asserted in closed form.
    """
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-x_half, x_half, size=(count, 3, E.dim))
    worst = -math.inf
    for x, y, z in pts:
        dxz = visual_distance(E, x, z)
        defect = dxz - visual_distance(E, x, y) - visual_distance(E, y, z)
        worst = max(worst, defect)
    return worst
