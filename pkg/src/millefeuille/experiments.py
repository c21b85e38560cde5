"""Batch experiments combining the coarse model with its closed-form twins."""

from __future__ import annotations

import math

import numpy as np

from .heintze import ExpandingStructure, HoroPoint
from .madic import MAdicPoint
from .maps import Sampler
from .mille import (
    BoundaryPoint,
    MillePoint,
    boundary_visual,
    constrained_distance,
    dmax_formula,
    mille_distance,
)


def boundary_comparison(E: ExpandingStructure, m: int, sampler: Sampler,
                        case: str = "mixed") -> dict:
    """Compare the model boundary distance against the closed-form maximum
    metric over sampled pairs.

    ``case`` restricts the pair geometry: "same_ray" (fiber parts differ, tree
    rays equal), "same_fiber" (tree rays differ, fiber parts equal), or
    "mixed" (both differ). Records carry both values and their ratio; the
    summary reports the worst two-sided constant K.
    """
    if case not in ("same_ray", "same_fiber", "mixed"):
        raise ValueError(f"unknown case {case!r}")
    X, xis = sampler.points(E, m)
    rng = sampler._rng(6)
    n = E.dim
    w = sampler.window
    X2 = X + rng.normal(size=(sampler.count, n)) * (0.5 * w.x_half)
    js = rng.integers(w.t_low + 1, w.t_high + 1, size=sampler.count)
    picks = rng.integers(0, max(m - 1, 1), size=sampler.count)
    records = []
    ratios = []
    for i in range(sampler.count):
        if case == "same_ray":
            a = BoundaryPoint(X[i], xis[i])
            b = BoundaryPoint(X2[i], xis[i])
        elif case == "same_fiber":
            a = BoundaryPoint(X[i], xis[i])
            b = BoundaryPoint(X[i], sampler._tree_neighbour(xis[i], int(js[i]), int(picks[i])))
        else:
            a = BoundaryPoint(X[i], xis[i])
            b = BoundaryPoint(X2[i], sampler._tree_neighbour(xis[i], int(js[i]), int(picks[i])))
        model = boundary_visual(E, m, a, b)
        formula = dmax_formula(E, m, a, b)
        if formula == 0.0 and model == 0.0:
            continue
        ratio = model / formula
        ratios.append(ratio)
        records.append({
            "pair": {"a": {"x": a.x.tolist(), "xi": a.xi.encode()},
                     "b": {"x": b.x.tolist(), "xi": b.xi.encode()}},
            "model_value": model,
            "formula_value": formula,
            "ratio": ratio,
        })
    arr = np.array(ratios)
    k = float(max(arr.max(), 1.0 / arr.min()))
    return {"records": records, "ratio_min": float(arr.min()),
            "ratio_max": float(arr.max()), "K": k, "case": case}


def distortion_experiment(E: ExpandingStructure, m: int, cap: int = 0,
                          ln_d_range: tuple[float, float] = (2.0, 10.0),
                          count: int = 40, direction: str = "first_layer",
                          seed: int = 0) -> dict:
    """Exponential distortion of doubled horoball complements.

    For pairs sitting on the glueing horosphere of the two copies, with level
    distance D swept log-uniformly, the constrained path distance equals D
    while the ambient distance grows like (2/a_1) ln(D); the regression of
    ln(constrained) against ambient therefore has slope a_1/2, and the
    constrained/ambient ratio grows without bound.
    """
    if direction not in ("first_layer", "random"):
        raise ValueError(f"unknown direction {direction!r}")
    n = E.dim
    rng = np.random.default_rng(seed)
    xi1 = MAdicPoint.zero(m)
    xi2 = xi1.with_digit(cap - 1, 1)  # rays diverging exactly at the cap
    lnD = np.linspace(ln_d_range[0], ln_d_range[1], count)
    rows = []
    for ld in lnD:
        D = math.exp(ld)
        if direction == "first_layer":
            u = np.zeros(n)
            u[0] = 1.0
        else:
            u = rng.normal(size=n)
            u[0] = abs(u[0]) + 0.5  # keep slow-layer mass bounded below
            u /= np.linalg.norm(u)
        x1 = np.zeros(n)
        x2 = D * u
        constrained = constrained_distance(E, HoroPoint(x1, cap), HoroPoint(x2, cap),
                                           cap, copies=(0, 1))
        ambient = mille_distance(E, m, MillePoint(x1, xi1, cap), MillePoint(x2, xi2, cap))
        rows.append({"level_distance": float(D), "constrained": float(constrained),
                     "ambient": float(ambient), "ratio": float(constrained / ambient)})
    x = np.array([r["ambient"] for r in rows])
    y = np.log([r["constrained"] for r in rows])
    slope, intercept = np.polyfit(x, y, 1)
    ratios = np.array([r["ratio"] for r in rows])
    return {
        "rows": rows,
        "slope": float(slope),
        "intercept": float(intercept),
        "target_slope": E.alpha1 / 2.0,
        "ratio_monotone": bool(np.all(np.diff(ratios) > 0)),
        "ratio_increase": float(ratios[-1] - ratios[0]),
        "ratio_final": float(ratios[-1]),
    }
