"""Self-maps of the product boundary R^n x Q_m and empirical distortion estimators.

The map algebra follows the displayed coordinate form: similarities scale
layer i by c ** (a_i / a_1) through an orthogonal block and scale the tree
factor by the matching power of m; almost translations add to each layer a
Holder function of strictly later coordinates and of the tree coordinate,
leaving the tree coordinate fixed. Power maps and digit-routing maps are kept
as non-examples outside the invertible algebra.

Estimators never trust declared metadata: bilipschitz bounds, quasisymmetry
moduli, quasi-similarity uniformity, Holder norms, and measure distortion are
all measured on seeded samples, with extrema witnesses reported. Divergence
claims are monotonicity claims over growing windows, not curve fits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .heintze import ExpandingStructure, dm_closed_form_batch
from .madic import MAdicPoint, madic_distance
from .mille import BoundaryPoint

_ORTHO_TOL = 1e-9


# -- sampling ------------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    """Sampling window: a symmetric box of half-width ``x_half`` in the fiber
    and digit support between tree heights ``t_low`` and ``t_high``."""

    x_half: float
    t_low: int
    t_high: int

    def __post_init__(self):
        if self.x_half <= 0:
            raise ValueError("x_half must be positive")
        if not isinstance(self.t_low, int) or not isinstance(self.t_high, int):
            raise ValueError("tree heights must be integers")
        if self.t_low > self.t_high:
            raise ValueError("t_low must not exceed t_high")

    def scaled(self, factor: float) -> "Window":
        return Window(self.x_half * factor, self.t_low, self.t_high)

    def as_dict(self) -> dict:
        return {"x_half": self.x_half, "t_low": self.t_low, "t_high": self.t_high}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Window":
        extra = set(data) - {"x_half", "t_low", "t_high"}
        if extra:
            raise ValueError(f"unknown window keys: {sorted(extra)}")
        return cls(float(data["x_half"]), int(data["t_low"]), int(data["t_high"]))


@dataclass(frozen=True)
class PairBatch:
    ax: np.ndarray
    bx: np.ndarray
    axi: list[MAdicPoint]
    bxi: list[MAdicPoint]


@dataclass(frozen=True)
class TripleBatch:
    yx: np.ndarray
    xx: np.ndarray
    px: np.ndarray
    yxi: list[MAdicPoint]
    xxi: list[MAdicPoint]
    pxi: list[MAdicPoint]


@dataclass(frozen=True)
class Sampler:
    """Deterministic point/pair/triple source: identical seed + window + count
    yields identical streams, and windows enter only as scale factors, so
    growing the window never reshuffles the underlying draws."""

    seed: int
    window: Window
    count: int

    def _rng(self, salt: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, salt])

    def _xi_from_digits(self, m: int, row: np.ndarray) -> MAdicPoint:
        heights = range(self.window.t_low, self.window.t_high + 1)
        return MAdicPoint.from_digits(m, {h: int(d) for h, d in zip(heights, row)})

    def points(self, E: ExpandingStructure, m: int) -> tuple[np.ndarray, list[MAdicPoint]]:
        rng = self._rng(1)
        X = rng.uniform(-1.0, 1.0, size=(self.count, E.dim)) * self.window.x_half
        n_heights = self.window.t_high - self.window.t_low + 1
        digit_rows = rng.integers(0, m, size=(self.count, n_heights))
        xis = [self._xi_from_digits(m, row) for row in digit_rows]
        return X, xis

    def _tree_neighbour(self, xi: MAdicPoint, j: int, pick: int) -> MAdicPoint:
        # a point at tree distance exactly m**j: change the digit just below j
        d_old = xi.digit(j - 1)
        d_new = (d_old + 1 + pick % (xi.base - 1)) % xi.base
        return xi.with_digit(j - 1, d_new)

    def pairs(self, E: ExpandingStructure, m: int, sep_min: float = 1.0) -> PairBatch:
        """Pairs with log-uniform separations; displacements cycle through
        fiber-only, tree-only, and mixed moves."""
        if self.count < 2:
            raise ValueError("degenerate sampler: need count >= 2")
        rng = self._rng(2)
        w = self.window
        AX, axis_ = self.points(E, m)
        seps = sep_min * (2.0 * w.x_half / sep_min) ** rng.uniform(0.0, 1.0, self.count)
        dirs = rng.normal(size=(self.count, E.dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        tree_js = rng.integers(w.t_low + 1, w.t_high + 1, size=self.count)
        picks = rng.integers(0, max(m - 1, 1), size=self.count)
        BX = AX.copy()
        bxis = list(axis_)
        for i in range(self.count):
            kind = i % 3
            if kind in (0, 2):
                BX[i] = AX[i] + seps[i] * dirs[i]
            if kind in (1, 2):
                bxis[i] = self._tree_neighbour(axis_[i], int(tree_js[i]), int(picks[i]))
        return PairBatch(AX, BX, axis_, bxis)

    def triples(self, E: ExpandingStructure, m: int,
                ratio_targets: Sequence[float], sep_min: float = 1.0) -> TripleBatch:
        """Triples (y, x, x') steered toward the given distance-ratio targets;
        moves mix fiber and tree displacements in all four combinations."""
        rng = self._rng(3)
        w = self.window
        YX, yxis = self.points(E, m)
        seps = sep_min * (2.0 * w.x_half / sep_min) ** rng.uniform(0.0, 1.0, self.count)
        dirs = rng.normal(size=(self.count, 2, E.dim))
        dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
        picks = rng.integers(0, max(m - 1, 1), size=(self.count, 2))
        XX, PX = YX.copy(), YX.copy()
        xxis, pxis = list(yxis), list(yxis)
        log_m = math.log(m)
        for i in range(self.count):
            target = ratio_targets[i % len(ratio_targets)]
            kinds = ((i // len(ratio_targets)) % 4)
            s1 = seps[i]
            s2 = s1 / target
            for slot, (kind_bit, s) in enumerate((((kinds >> 0) & 1, s1), ((kinds >> 1) & 1, s2))):
                X, xis = (XX, xxis) if slot == 0 else (PX, pxis)
                if kind_bit == 0:
                    X[i] = YX[i] + s * dirs[i, slot]
                else:
                    j = int(round(math.log(max(s, 1e-12)) / log_m))
                    j = min(max(j, w.t_low + 1), w.t_high)
                    xis[i] = self._tree_neighbour(yxis[i], j, int(picks[i, slot]))
        return TripleBatch(YX, XX, PX, yxis, xxis, pxis)


def dmax_batch(E: ExpandingStructure, m: int, AX: np.ndarray, BX: np.ndarray,
               axis_: Sequence[MAdicPoint], bxis: Sequence[MAdicPoint]) -> np.ndarray:
    """Vectorized max-metric over parallel arrays of boundary points."""
    dm = dm_closed_form_batch(E, AX, BX)
    base = float(m)
    tree = np.fromiter((madic_distance(a, b, base) for a, b in zip(axis_, bxis)),
                       dtype=float, count=len(axis_))
    return np.maximum(dm, tree)


# -- tree similarities -----------------------------------------------------------


def _invert_perm(p: tuple[int, ...]) -> tuple[int, ...]:
    out = [0] * len(p)
    for i, v in enumerate(p):
        out[v] = i
    return tuple(out)


@dataclass(frozen=True)
class TreeSimilarity:
    """Similarity of Q_m: a height shift (ratio m**shift) composed with
    per-height digit permutations (isometries), applied after the shift."""

    base: int
    shift: int = 0
    perms: tuple[tuple[int, tuple[int, ...]], ...] = ()

    def __post_init__(self):
        for h, p in self.perms:
            if sorted(p) != list(range(self.base)):
                raise ValueError(f"not a digit permutation at height {h}: {p}")
        object.__setattr__(self, "perms", tuple(sorted(self.perms)))

    @property
    def ratio(self) -> float:
        return float(self.base) ** self.shift

    def apply(self, xi: MAdicPoint) -> MAdicPoint:
        if xi.base != self.base:
            raise ValueError(f"base mismatch: {xi.base} != {self.base}")
        out = xi.shift(self.shift) if self.shift else xi
        for h, p in self.perms:
            out = out.with_digit(h, p[out.digit(h)])
        return out

    def inverse(self) -> "TreeSimilarity":
        perms = tuple((h - self.shift, _invert_perm(p)) for h, p in self.perms)
        return TreeSimilarity(self.base, -self.shift, perms)

    def then(self, other: "TreeSimilarity") -> "TreeSimilarity":
        """The composition self-then-other, in the same shift+perms form."""
        if other.base != self.base:
            raise ValueError("base mismatch in tree composition")
        mine = {h + other.shift: p for h, p in self.perms}
        theirs = dict(other.perms)
        combined = []
        for h in sorted(set(mine) | set(theirs)):
            p1 = mine.get(h, tuple(range(self.base)))
            p2 = theirs.get(h, tuple(range(self.base)))
            combined.append((h, tuple(p2[p1[d]] for d in range(self.base))))
        return TreeSimilarity(self.base, self.shift + other.shift, tuple(combined))


# -- the map algebra ---------------------------------------------------------------


class BoundaryMap:
    """An evaluable self-map of the product boundary."""

    kind: str = "map"

    def apply_batch(self, X: np.ndarray, xis):
        raise NotImplementedError

    def evaluate(self, p: BoundaryPoint) -> BoundaryPoint:
        Z, xi = self.apply_batch(p.x[None, :], p.xi)
        return BoundaryPoint(Z[0], xi)

    __call__ = evaluate

    def invert(self) -> "BoundaryMap":
        raise ValueError(f"{self.kind} maps are outside the invertible algebra")

    def tree_component(self) -> TreeSimilarity | None:
        """The x-independent tree similarity this map induces, if any."""
        return None


def _map_xis(fn, xis):
    if isinstance(xis, MAdicPoint):
        return fn(xis)
    return [fn(x) for x in xis]


@dataclass(frozen=True)
class Similarity(BoundaryMap):
    """Product similarity of ratio m**tree.shift: layer i maps through
    c ** (a_i / a_1) times an orthogonal block, plus a translation; the tree
    factor moves by the matching tree similarity."""

    E: ExpandingStructure
    m: int
    tree: TreeSimilarity
    blocks: tuple[np.ndarray, ...]
    offset: np.ndarray

    kind = "similarity"

    def __post_init__(self):
        blocks = tuple(np.asarray(b, dtype=float) for b in self.blocks)
        if len(blocks) != len(self.E.layers):
            raise ValueError("one orthogonal block per layer is required")
        for b, l in zip(blocks, self.E.layers):
            if b.shape != (l.size, l.size):
                raise ValueError(f"block shape {b.shape} does not match layer size {l.size}")
            if np.abs(b.T @ b - np.eye(l.size)).max() > _ORTHO_TOL:
                raise ValueError("blocks must be orthogonal (B^T B = I to 1e-9)")
        offset = np.asarray(self.offset, dtype=float)
        if offset.shape != (self.E.dim,):
            raise ValueError(f"offset must have dimension {self.E.dim}")
        if self.tree.base != self.m:
            raise ValueError("tree similarity base must match m")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "offset", offset)

    @property
    def ratio(self) -> float:
        return self.tree.ratio

    def _layer_scales(self) -> list[float]:
        c = self.ratio
        a1 = self.E.alpha1
        return [c ** (l.alpha / a1) for l in self.E.layers]

    def apply_batch(self, X, xis):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = np.empty_like(X)
        for sl, A, s in zip(self.E.layer_slices(), self.blocks, self._layer_scales()):
            Z[:, sl] = s * (X[:, sl] @ A.T) + self.offset[sl]
        return Z, _map_xis(self.tree.apply, xis)

    def invert(self) -> "Similarity":
        blocks = tuple(A.T.copy() for A in self.blocks)
        offset = np.empty_like(self.offset)
        for sl, A, s in zip(self.E.layer_slices(), self.blocks, self._layer_scales()):
            offset[sl] = -(A.T @ self.offset[sl]) / s
        return Similarity(self.E, self.m, self.tree.inverse(), blocks, offset)

    def tree_component(self) -> TreeSimilarity:
        return self.tree


def identity_map(E: ExpandingStructure, m: int) -> Similarity:
    return Similarity(E, m, TreeSimilarity(m),
                      tuple(np.eye(l.size) for l in E.layers), np.zeros(E.dim))


def similarity_from_signs(E: ExpandingStructure, m: int, shift: int,
                          signs: Sequence[float], offset: Sequence[float],
                          perms: tuple = ()) -> Similarity:
    """Convenience constructor for structures whose layers are all 1-dim."""
    blocks = tuple(np.array([[float(s)]]) for s in signs)
    return Similarity(E, m, TreeSimilarity(m, shift, perms), blocks,
                      np.asarray(offset, dtype=float))


@dataclass(frozen=True)
class BTerm:
    """One additive term of an almost-translation component, with declared
    Holder data that the estimators test rather than assume.

    kinds: ``const``; ``power`` (coeff * sgn(u)|u|**exponent of a later
    coordinate: exactly exponent-Holder); ``sine`` (coeff * sin(omega u):
    bounded + Lipschitz, hence Holder at any declared exponent <= 1);
    ``tree`` (a digit series coeff * sum m**h * weights[digit_h], Lipschitz in
    the tree ultrametric).
    """

    kind: str
    coeff: float
    source: int | None = None
    exponent: float = 1.0
    omega: float = 1.0
    heights: tuple[int, int] = (0, 0)
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("const", "power", "sine", "tree"):
            raise ValueError(f"unknown term kind {self.kind!r}")
        if self.kind in ("power", "sine") and self.source is None:
            raise ValueError(f"{self.kind} terms need a source coordinate")
        if self.kind == "power" and not 0 < self.exponent <= 1:
            raise ValueError("power exponent must lie in (0, 1]")

    def values(self, X: np.ndarray, xis, m: int) -> np.ndarray:
        k = X.shape[0]
        if self.kind == "const":
            return np.full(k, self.coeff)
        if self.kind == "power":
            u = X[:, self.source]
            return self.coeff * np.sign(u) * np.abs(u) ** self.exponent
        if self.kind == "sine":
            return self.coeff * np.sin(self.omega * X[:, self.source])
        lo, hi = self.heights
        scales = [float(m) ** h for h in range(lo, hi + 1)]
        if isinstance(xis, MAdicPoint):
            v = self.coeff * sum(s * self.weights[xis.digit(h)]
                                 for h, s in zip(range(lo, hi + 1), scales))
            return np.full(k, v)
        return self.coeff * np.array([
            sum(s * self.weights[xi.digit(h)] for h, s in zip(range(lo, hi + 1), scales))
            for xi in xis])

    def declared_holder(self, m: int) -> tuple[str | int, float, float]:
        """(source, exponent, norm bound) for the dependence this term carries."""
        if self.kind == "const":
            return ("none", 1.0, 0.0)
        if self.kind == "power":
            return (self.source, self.exponent, abs(self.coeff) * 2.0 ** (1.0 - self.exponent))
        if self.kind == "sine":
            return (self.source, self.exponent,
                    abs(self.coeff) * max(abs(self.omega), 2.0))
        spread = (max(self.weights) - min(self.weights)) if self.weights else 0.0
        return ("tree", 1.0, abs(self.coeff) * spread * m / (m - 1.0))


@dataclass(frozen=True)
class AlmostTranslation(BoundaryMap):
    """Unitriangular boundary map: each coordinate gains a sum of terms read
    from strictly later layers and from the tree coordinate, which is fixed."""

    E: ExpandingStructure
    m: int
    terms: tuple[tuple[int, tuple[BTerm, ...]], ...]

    kind = "almost_translation"

    def __post_init__(self):
        layer_of = np.repeat(np.arange(len(self.E.layers)), [l.size for l in self.E.layers])
        cleaned = []
        for c, ts in self.terms:
            ts = tuple(ts)
            for t in ts:
                if t.kind in ("power", "sine"):
                    if not 0 <= t.source < self.E.dim:
                        raise ValueError(f"source coordinate {t.source} out of range")
                    if layer_of[t.source] <= layer_of[c]:
                        raise ValueError(
                            f"coordinate {c} may only read strictly later layers, "
                            f"not coordinate {t.source}")
                elif t.kind == "tree" and len(t.weights) != self.m:
                    raise ValueError("tree terms need one weight per digit")
            cleaned.append((int(c), ts))
        object.__setattr__(self, "terms", tuple(sorted(cleaned)))

    def apply_batch(self, X, xis):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = X.copy()
        for c, ts in self.terms:
            for t in ts:
                Z[:, c] += t.values(X, xis, self.m)
        return Z, xis

    def invert(self) -> "BoundaryMap":
        return _AlmostTranslationInverse(self)

    def tree_component(self) -> TreeSimilarity:
        return TreeSimilarity(self.m)

    def declared_bounds(self) -> list[tuple[int, str | int, float, float]]:
        """(target, source, exponent, bound) rows from the term metadata."""
        return [(c, *t.declared_holder(self.m)) for c, ts in self.terms for t in ts]


@dataclass(frozen=True)
class _AlmostTranslationInverse(BoundaryMap):
    """Exact inverse by back-substitution: sources live in strictly later
    layers, so recovering layers from the top down needs no iteration."""

    forward: AlmostTranslation

    kind = "almost_translation"

    def apply_batch(self, X, xis):
        Z = np.atleast_2d(np.asarray(X, dtype=float))
        fwd = self.forward
        layer_of = np.repeat(np.arange(len(fwd.E.layers)), [l.size for l in fwd.E.layers])
        out = Z.copy()
        for c, ts in sorted(fwd.terms, key=lambda item: layer_of[item[0]], reverse=True):
            for t in ts:
                out[:, c] -= t.values(out, xis, fwd.m)
        return out, xis

    def invert(self) -> AlmostTranslation:
        return self.forward

    def tree_component(self) -> TreeSimilarity:
        return TreeSimilarity(self.forward.m)


@dataclass(frozen=True)
class PowerMap(BoundaryMap):
    """Coordinatewise snowflake-type non-example sgn(x)|x|**theta, fixing the tree."""

    theta: float

    kind = "power_map"

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError("theta must be positive")

    def apply_batch(self, X, xis):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.sign(X) * np.abs(X) ** self.theta, xis

    def tree_component(self) -> TreeSimilarity | None:
        return None  # excluded from the invertible algebra on purpose


@dataclass(frozen=True)
class DigitRoutingMap(BoundaryMap):
    """Decomposition counterexample: routes the tree coordinate by sign(x_1),
    so the tree output is not a function of the tree input. Discontinuous
    across components; not bilipschitz."""

    m: int
    pivot_height: int = 0

    kind = "routing"

    def apply_batch(self, X, xis):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        single = isinstance(xis, MAdicPoint)
        xi_list = [xis] * X.shape[0] if single else list(xis)
        out = []
        for row, xi in zip(X, xi_list):
            if row[0] < 0:
                d = xi.digit(self.pivot_height)
                xi = xi.with_digit(self.pivot_height, (d + 1) % self.m)
            out.append(xi)
        return X.copy(), (out[0] if single and X.shape[0] == 1 else out)


@dataclass(frozen=True)
class Composite(BoundaryMap):
    """Ordered composition: factors apply first-to-last."""

    factors: tuple[BoundaryMap, ...]

    kind = "composite"

    def apply_batch(self, X, xis):
        Z = np.atleast_2d(np.asarray(X, dtype=float))
        for f in self.factors:
            Z, xis = f.apply_batch(Z, xis)
        return Z, xis

    def invert(self) -> "Composite":
        return Composite(tuple(f.invert() for f in reversed(self.factors)))

    def tree_component(self) -> TreeSimilarity | None:
        parts = [f.tree_component() for f in self.factors]
        if any(p is None for p in parts):
            return None
        combined = parts[0]
        for p in parts[1:]:
            combined = combined.then(p)
        return combined


def compose(f: BoundaryMap, g: BoundaryMap) -> BoundaryMap:
    """The map p -> g(f(p)). Two similarities merge exactly (ratios multiply)."""
    if isinstance(f, Similarity) and isinstance(g, Similarity):
        blocks, offset = [], np.empty(f.E.dim)
        for sl, Af, Ag, sg in zip(f.E.layer_slices(), f.blocks, g.blocks, g._layer_scales()):
            blocks.append(Ag @ Af)
            offset[sl] = sg * (Ag @ f.offset[sl]) + g.offset[sl]
        return Similarity(f.E, f.m, f.tree.then(g.tree), tuple(blocks), offset)
    parts: list[BoundaryMap] = []
    for h in (f, g):
        parts.extend(h.factors if isinstance(h, Composite) else (h,))
    return Composite(tuple(parts))


def invert(f: BoundaryMap) -> BoundaryMap:
    """Inverse within the algebra; raises ValueError for non-invertible kinds."""
    return f.invert()


# -- estimators --------------------------------------------------------------------


def _witness(ax, axi, bx, bxi, ratio, dist) -> dict:
    return {
        "a": {"x": [float(v) for v in ax], "xi": axi.encode()},
        "b": {"x": [float(v) for v in bx], "xi": bxi.encode()},
        "ratio": float(ratio),
        "distance": float(dist),
    }


def estimate_bilipschitz(f: BoundaryMap, sampler: Sampler, E: ExpandingStructure,
                         m: int, sep_min: float = 1.0) -> dict:
    """Sampled two-sided distortion bounds: the inf and sup of image/source
    distance ratios, with the extremal pairs as witnesses."""
    if sampler.count < 2:
        raise ValueError("degenerate sampler: need at least 2 samples")
    batch = sampler.pairs(E, m, sep_min)
    d = dmax_batch(E, m, batch.ax, batch.bx, batch.axi, batch.bxi)
    fa_x, fa_xi = f.apply_batch(batch.ax, batch.axi)
    fb_x, fb_xi = f.apply_batch(batch.bx, batch.bxi)
    di = dmax_batch(E, m, fa_x, fb_x, fa_xi, fb_xi)
    mask = d > 0
    ratios = di[mask] / d[mask]
    idx = np.flatnonzero(mask)
    i_lo, i_hi = idx[int(np.argmin(ratios))], idx[int(np.argmax(ratios))]
    return {
        "a_low": float(ratios.min()),
        "b_high": float(ratios.max()),
        "count": int(mask.sum()),
        "witness_low": _witness(batch.ax[i_lo], batch.axi[i_lo], batch.bx[i_lo],
                                batch.bxi[i_lo], di[i_lo] / d[i_lo], d[i_lo]),
        "witness_high": _witness(batch.ax[i_hi], batch.axi[i_hi], batch.bx[i_hi],
                                 batch.bxi[i_hi], di[i_hi] / d[i_hi], d[i_hi]),
    }


DEFAULT_RATIO_GRID = tuple(2.0 ** k for k in range(-3, 4))


def estimate_qs_modulus(f: BoundaryMap, sampler: Sampler, E: ExpandingStructure,
                        m: int, ratio_grid: Sequence[float] = DEFAULT_RATIO_GRID,
                        sep_min: float = 1.0) -> list[dict]:
    """Empirical quasisymmetry modulus: for each ratio bin t, the max image
    ratio d(fy,fx)/d(fy,fx') over sampled triples with d(y,x)/d(y,x') in the
    bin. Bins with no samples are absent, never interpolated."""
    grid = sorted(ratio_grid)
    batch = sampler.triples(E, m, grid, sep_min)
    d_yx = dmax_batch(E, m, batch.yx, batch.xx, batch.yxi, batch.xxi)
    d_yp = dmax_batch(E, m, batch.yx, batch.px, batch.yxi, batch.pxi)
    fy_x, fy_xi = f.apply_batch(batch.yx, batch.yxi)
    fx_x, fx_xi = f.apply_batch(batch.xx, batch.xxi)
    fp_x, fp_xi = f.apply_batch(batch.px, batch.pxi)
    di_yx = dmax_batch(E, m, fy_x, fx_x, fy_xi, fx_xi)
    di_yp = dmax_batch(E, m, fy_x, fp_x, fy_xi, fp_xi)
    half_width = math.sqrt(grid[1] / grid[0]) if len(grid) > 1 else 2.0
    bins: dict[float, list[float]] = {}
    for k in range(sampler.count):
        if d_yx[k] == 0 or d_yp[k] == 0 or di_yp[k] == 0:
            continue
        r = d_yx[k] / d_yp[k]
        for t in grid:
            if t / half_width <= r < t * half_width:
                bins.setdefault(t, []).append(di_yx[k] / di_yp[k])
                break
    return [{"t": t, "eta_hat": float(max(v)), "count": len(v)}
            for t, v in sorted(bins.items())]


def check_uniform(family: Sequence[BoundaryMap], sampler: Sampler,
                  E: ExpandingStructure, m: int, sep_min: float = 1.0) -> tuple[float, list[dict]]:
    """Quasi-similarity uniformity: per element, the geometric-mean scale s_f
    and the one-sided excess K_f; K_hat is the family max."""
    batch = sampler.pairs(E, m, sep_min)
    d = dmax_batch(E, m, batch.ax, batch.bx, batch.axi, batch.bxi)
    mask = d > 0
    per_element = []
    k_hat = 0.0
    for f in family:
        fa_x, fa_xi = f.apply_batch(batch.ax, batch.axi)
        fb_x, fb_xi = f.apply_batch(batch.bx, batch.bxi)
        di = dmax_batch(E, m, fa_x, fb_x, fa_xi, fb_xi)
        ratios = di[mask] / d[mask]
        s = float(np.exp(np.mean(np.log(ratios))))
        k_f = float(max(ratios.max() / s, s / ratios.min()))
        per_element.append({"kind": f.kind, "s": s, "K": k_f})
        k_hat = max(k_hat, k_f)
    return k_hat, per_element


def holder_norm_estimate(B: Callable, beta: float, sampler: Sampler,
                         interval: tuple[float, float] | None = None,
                         tree_base: int | None = None) -> float:
    """Empirical Holder norm sup |B(u) - B(v)| / d(u, v)**beta.

    Scalar mode samples pairs in ``interval`` (default the window box in one
    coordinate), anchoring a share of pairs at the left endpoint and spreading
    separations log-uniformly so both local and window-scale pairs appear.
    With ``tree_base`` set, B is a function of m-adic points and d is the tree
    ultrametric.
    """
    if not 0 < beta <= 1:
        raise ValueError("the exponent must lie in (0, 1]")
    rng = sampler._rng(4)
    n = sampler.count
    if tree_base is not None:
        m = tree_base
        w = sampler.window
        n_heights = w.t_high - w.t_low + 1
        rows = rng.integers(0, m, size=(n, n_heights))
        xis = [sampler._xi_from_digits(m, row) for row in rows]
        js = rng.integers(w.t_low + 1, w.t_high + 1, size=n)
        best = 0.0
        for xi, j in zip(xis, js):
            other = sampler._tree_neighbour(xi, int(j), 0)
            d = madic_distance(xi, other, float(m))
            best = max(best, abs(B(xi) - B(other)) / d ** beta)
        return best
    lo, hi = interval if interval is not None else (-sampler.window.x_half, sampler.window.x_half)
    width = hi - lo
    base = lo + width * rng.uniform(0.0, 1.0, n)
    seps = width * 10.0 ** rng.uniform(-9.0, 0.0, n)
    best = 0.0
    for i in range(n):
        u = lo if i % 3 == 0 else base[i]  # endpoint anchors catch boundary extremals
        v = min(u + seps[i], hi)
        if v == u:
            continue
        best = max(best, abs(B(v) - B(u)) / (v - u) ** beta)
    return float(best)


def _bounding_box(points: np.ndarray, inflate: float = 0.15) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = points.min(axis=0), points.max(axis=0)
    pad = inflate * np.maximum(hi - lo, 1e-9)
    return lo - pad, hi + pad


def _collision_probe(f: BoundaryMap, sampler: Sampler, E: ExpandingStructure, m: int,
                     count: int = 192) -> None:
    """Detect non-injectivity by collision sampling: random points plus their
    single-coordinate sign reflections (the pairs folding maps collapse)."""
    probe = Sampler(sampler.seed ^ 0x5EED, sampler.window, count)
    PX, pxis = probe.points(E, m)
    stacks = [PX]
    for c in range(E.dim):
        R = PX.copy()
        R[:, c] = -R[:, c]
        stacks.append(R)
    allX = np.vstack(stacks)
    all_xis = pxis * (E.dim + 1)
    IX, ixis = f.apply_batch(allX, all_xis)
    d_out = np.linalg.norm(IX[:, None, :] - IX[None, :, :], axis=2)
    d_in = np.linalg.norm(allX[:, None, :] - allX[None, :, :], axis=2)
    close = np.argwhere((d_out < 1e-9) & (d_in > 1e-6))
    for i, j in close:
        if i < j and ixis[i] == ixis[j]:
            raise ValueError("collision detected: the map is not injective on the window")


def estimate_measure_distortion(f: BoundaryMap, sampler: Sampler, E: ExpandingStructure,
                                m: int, n_boxes: int = 8, samples_per_box: int = 1 << 17,
                                xi_slices: int = 8) -> dict:
    """Monte-Carlo bounds on the measure ratio mu(f(box)) / mu(box) over random
    product boxes, with mu the product of Lebesgue volume and the tree ball
    mass normalized so a ball of radius m**t has mass m**t.

    Needs an invertible map (membership in the image is tested through the
    inverse) whose tree action is a similarity; collisions among probe images
    flag non-injectivity up front.
    """
    g = f.invert()
    tsim = f.tree_component()
    if tsim is None:
        raise ValueError("measure distortion needs an x-independent tree similarity")
    _collision_probe(f, sampler, E, m)
    rng = sampler._rng(5)
    w = sampler.window
    n = E.dim
    tree_factor = float(m) ** tsim.shift
    n_heights = w.t_high - w.t_low + 1
    per_box = []
    m_slice = max(samples_per_box // xi_slices, 1)
    for _ in range(n_boxes):
        center = rng.uniform(-0.5, 0.5, n) * w.x_half
        half = np.exp(rng.uniform(math.log(0.5), math.log(2.0), n))
        lo, hi = center - half, center + half
        vol = float(np.prod(hi - lo))
        h_ball = int(rng.integers(w.t_low + 1, w.t_high))
        xi_center = sampler._xi_from_digits(m, rng.integers(0, m, n_heights))
        ratios = []
        for _ in range(xi_slices):
            xi_s = xi_center
            for h in range(w.t_low, h_ball):
                xi_s = xi_s.with_digit(h, int(rng.integers(0, m)))
            sigma_xi = tsim.apply(xi_s)
            corners = lo + (hi - lo) * ((np.arange(2 ** min(n, 10))[:, None] >> np.arange(n)) & 1)
            inner = lo + (hi - lo) * rng.uniform(0.0, 1.0, size=(64, n))
            imgs, _ = f.apply_batch(np.vstack([corners, inner]), xi_s)
            blo, bhi = _bounding_box(imgs)
            W = blo + (bhi - blo) * rng.uniform(0.0, 1.0, size=(m_slice, n))
            back_x, back_xi = g.apply_batch(W, sigma_xi)
            if isinstance(back_xi, MAdicPoint):
                xi_ok = back_xi == xi_s
            else:
                xi_ok = all(b == xi_s for b in back_xi)
            hits = np.all((back_x >= lo) & (back_x <= hi), axis=1) if xi_ok else np.zeros(m_slice, bool)
            ratios.append(float(np.prod(bhi - blo)) * hits.mean() / vol)
        per_box.append(tree_factor * float(np.mean(ratios)))
    return {"b_low": float(min(per_box)), "b_high": float(max(per_box)),
            "per_box": per_box, "samples_per_box": m_slice * xi_slices}


# -- structural checks ---------------------------------------------------------------


def verify_decomposition(f: BoundaryMap, sampler: Sampler, E: ExpandingStructure,
                         m: int, max_witnesses: int = 5) -> dict:
    """Check that the tree output is a function of the tree input alone: pairs
    sharing a tree coordinate must map to equal tree coordinates, exactly."""
    X1, xis = sampler.points(E, m)
    X2 = Sampler(sampler.seed + 1, sampler.window, sampler.count).points(E, m)[0]
    _, out1 = f.apply_batch(X1, xis)
    _, out2 = f.apply_batch(X2, xis)
    witnesses = []
    for i, (a, b) in enumerate(zip(out1, out2)):
        if a != b:
            if len(witnesses) < max_witnesses:
                witnesses.append({
                    "xi": xis[i].encode(),
                    "x": [float(v) for v in X1[i]],
                    "x_other": [float(v) for v in X2[i]],
                    "image_xi": a.encode(),
                    "image_xi_other": b.encode(),
                })
            else:
                break
    return {"passed": not witnesses, "checked": sampler.count, "witnesses": witnesses}


def verify_coordinate_form(f: BoundaryMap, sampler: Sampler, E: ExpandingStructure,
                           m: int, tol: float = 1e-9) -> dict:
    """Check the triangular coordinate form: the tree output depends on the
    tree input alone and scales distances by one power of m; perturbing a
    coordinate leaves every strictly later layer unchanged and moves its own
    coordinate affinely with a base-point-independent slope."""
    X, xis = sampler.points(E, m)
    layer_of = np.repeat(np.arange(len(E.layers)), [l.size for l in E.layers])
    report: dict = {"passed": True, "failures": []}

    def fail(msg):
        report["passed"] = False
        if len(report["failures"]) < 8:
            report["failures"].append(msg)

    decomp = verify_decomposition(f, sampler, E, m)
    if not decomp["passed"]:
        fail("tree output depends on the fiber coordinate")

    # tree action is a single similarity: ratios of tree distances constant
    ratios = set()
    _, out = f.apply_batch(X, xis)
    for i in range(min(64, sampler.count - 1)):
        d0 = madic_distance(xis[i], xis[i + 1], float(m))
        if d0 == 0:
            continue
        d1 = madic_distance(out[i], out[i + 1], float(m))
        ratios.add(d1 / d0)
    if len(ratios) > 1:
        fail(f"tree action is not a similarity: ratios {sorted(ratios)[:4]}")

    Z0, _ = f.apply_batch(X, xis)
    for c in range(E.dim):
        pert = X.copy()
        pert[:, c] += 1.0
        Z1, _ = f.apply_batch(pert, xis)
        later = layer_of > layer_of[c]
        if np.abs(Z1[:, later] - Z0[:, later]).max(initial=0.0) > tol:
            fail(f"perturbing coordinate {c} leaks into a later layer")
        slopes = Z1[:, c] - Z0[:, c]
        if np.abs(slopes - slopes[0]).max() > tol * max(1.0, abs(slopes[0])):
            fail(f"coordinate {c} is not affine in itself with constant slope")
    return report


# -- window-growth experiments ----------------------------------------------------


def rigidity_experiment(families: Mapping[str, Sequence[BoundaryMap]], sampler: Sampler,
                        E: ExpandingStructure, m: int,
                        factors: Sequence[float] = (1.0, 10.0, 100.0, 1000.0),
                        bounded_factor: float = 4.0,
                        diverging_factor: float = 10.0) -> dict:
    """Grow the window and track, per family, the worst bilipschitz ratio and
    the worst normalized quasisymmetry modulus.

    A family classifies "bounded" when both stay within ``bounded_factor`` of
    their smallest-window values, "diverging" when the bilipschitz ratio grows
    monotonically and both grow by at least ``diverging_factor``. The
    consistency flag asserts that no family shows a bounded modulus with a
    diverging bilipschitz ratio.
    """
    rows = []
    series: dict[str, dict[str, list[float]]] = {name: {"R": [], "H": []} for name in families}
    for fac in factors:
        s = Sampler(sampler.seed, sampler.window.scaled(fac), sampler.count)
        for name, maps in families.items():
            r_worst, h_worst = 0.0, 0.0
            for fmap in maps:
                est = estimate_bilipschitz(fmap, s, E, m)
                r_worst = max(r_worst, est["b_high"] / est["a_low"])
                for row in estimate_qs_modulus(fmap, s, E, m):
                    h_worst = max(h_worst, row["eta_hat"] / row["t"])
            rows.append({"family": name, "window_factor": float(fac),
                         "bilip_ratio": r_worst, "qs_excess": h_worst})
            series[name]["R"].append(r_worst)
            series[name]["H"].append(h_worst)
    classification = {}
    consistent = True
    for name, data in series.items():
        R, H = data["R"], data["H"]
        r_bounded = R[-1] <= bounded_factor * R[0]
        h_bounded = H[-1] <= bounded_factor * H[0]
        r_diverging = all(b > a for a, b in zip(R, R[1:])) and R[-1] >= diverging_factor * R[0]
        h_diverging = H[-1] >= diverging_factor * H[0]
        if r_bounded and h_bounded:
            label = "bounded"
        elif r_diverging and h_diverging:
            label = "diverging"
        else:
            label = "mixed"
        classification[name] = label
        if h_bounded and r_diverging:
            consistent = False
    return {"rows": rows, "classification": classification, "consistent": consistent}


# -- catalogs -----------------------------------------------------------------------


def standard_catalog(E: ExpandingStructure, m: int) -> dict[str, list[BoundaryMap]]:
    """The built-in map families over a structure with at least two 1-dim layers:
    exact similarities, similarities composed with bounded almost translations,
    and power-map non-examples (alone and composed)."""
    if len(E.layers) < 2 or any(l.size != 1 for l in E.layers[:2]):
        raise ValueError("the standard catalog needs two leading 1-dim layers")
    theta12 = E.layers[0].alpha / E.layers[1].alpha
    n = E.dim
    swap = tuple((m - 1 - d) if m == 2 else (d + 1) % m for d in range(m))
    sims = [
        similarity_from_signs(E, m, 0, [1.0] * n, [0.7, -1.3] + [0.0] * (n - 2)),
        similarity_from_signs(E, m, 1, [-1.0] + [1.0] * (n - 1), [2.0] * n),
        similarity_from_signs(E, m, -1, [1.0] * n, [0.0] * n, perms=((0, swap),)),
        similarity_from_signs(E, m, 2, [1.0, -1.0] + [1.0] * (n - 2), [-0.5] * n),
    ]
    w_up = tuple(i / (m - 1.0) for i in range(m))
    at1 = AlmostTranslation(E, m, (
        (0, (BTerm("power", 0.8, source=1, exponent=theta12),
             BTerm("tree", 0.35, heights=(-2, 1), weights=w_up))),
        (1, (BTerm("tree", 0.5, heights=(-1, 2), weights=w_up),
             BTerm("const", 1.2))),
    ))
    at2 = AlmostTranslation(E, m, (
        (0, (BTerm("sine", 0.6, source=1, omega=2.0, exponent=theta12),
             BTerm("tree", 0.25, heights=(-2, 0), weights=w_up))),
        (1, (BTerm("const", -0.4),)),
    ))
    return {
        "similarities": sims,
        "almost_translations": [compose(sims[0], at1), at2, compose(at1, sims[1])],
        "power_maps": [PowerMap(0.5), PowerMap(0.4)],
        "power_composites": [compose(sims[0], PowerMap(0.5))],
    }


def map_from_config(spec: Mapping, E: ExpandingStructure, m: int,
                    resolved: Mapping[str, BoundaryMap] | None = None) -> BoundaryMap:
    """Build one map from its JSON description."""
    kind = spec.get("kind")
    if kind == "similarity":
        perms = tuple((int(h), tuple(p)) for h, p in spec.get("tree_perms", {}).items())
        if "signs" in spec:
            return similarity_from_signs(E, m, int(spec.get("tree_shift", 0)),
                                         spec["signs"], spec.get("offset", [0.0] * E.dim), perms)
        blocks = tuple(np.asarray(b, dtype=float) for b in spec["blocks"])
        tree = TreeSimilarity(m, int(spec.get("tree_shift", 0)), perms)
        return Similarity(E, m, tree, blocks, np.asarray(spec.get("offset", [0.0] * E.dim)))
    if kind == "almost_translation":
        terms = []
        for c, ts in spec["terms"].items():
            terms.append((int(c), tuple(
                BTerm(t["kind"], float(t["coeff"]), source=t.get("source"),
                      exponent=float(t.get("exponent", 1.0)), omega=float(t.get("omega", 1.0)),
                      heights=tuple(t.get("heights", (0, 0))),
                      weights=tuple(t.get("weights", ()))) for t in ts)))
        return AlmostTranslation(E, m, tuple(terms))
    if kind == "power":
        return PowerMap(float(spec["theta"]))
    if kind == "routing":
        return DigitRoutingMap(m, int(spec.get("pivot_height", 0)))
    if kind == "composite":
        if resolved is None:
            raise ValueError("composite maps need a resolved name table")
        maps = [resolved[name] for name in spec["factors"]]
        out = maps[0]
        for nxt in maps[1:]:
            out = compose(out, nxt)
        return out
    raise ValueError(f"unknown map kind {kind!r}")


def catalog_from_config(config: Mapping, E: ExpandingStructure, m: int) -> dict[str, list[BoundaryMap]]:
    """Build named families from a catalog JSON: a ``maps`` name table plus a
    ``families`` grouping. Composites may reference earlier map names."""
    extra = set(config) - {"maps", "families"}
    if extra:
        raise ValueError(f"unknown catalog keys: {sorted(extra)}")
    resolved: dict[str, BoundaryMap] = {}
    pending = dict(config.get("maps", {}))
    while pending:
        progressed = False
        for name in list(pending):
            spec = pending[name]
            if spec.get("kind") == "composite" and not all(f in resolved for f in spec["factors"]):
                continue
            resolved[name] = map_from_config(spec, E, m, resolved)
            del pending[name]
            progressed = True
        if not progressed:
            raise ValueError(f"unresolvable composite references: {sorted(pending)}")
    families = {}
    for fam, names in config.get("families", {}).items():
        families[fam] = [resolved[n] for n in names]
    return families if families else {"all": list(resolved.values())}
