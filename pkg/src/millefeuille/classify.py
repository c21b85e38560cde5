"""Quasi-isometry decision procedure for fibered models over trees.

Two models X(M, m) and X(M', m') can only be equivalent at quasi-isometry
scale when (a) m and m' are powers of a common base r, (b) the absolute
Jordan spectra are powers of each other, and (c) the height scalings forced
by the two factors agree. Spectral data is the canonical input; raw matrices
are accepted upstream only in upper-triangular form, so the exponents are
read off the diagonal instead of a numerically unstable Jordan decomposition.

On the height condition: the literature states the compatibility between the
smallest eigenvalues and the tree exponents in a difference form
(ln l_1 / ln l_1' = i - j), which fails for identical inputs and is
irreconcilable with reflexivity. The verdict therefore evaluates BOTH the
difference form (reported as ``stated_condition_holds``) and the ratio form
ln l_1 / ln l_1' = i / j, which is the one consistent with reflexivity,
symmetry, and the factor-by-factor height scalings; equivalence is gated on
the ratio form, and the diagnostics flag any disagreement between the two.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .heintze import ExpandingStructure

REL_TOL = 1e-9
INCONCLUSIVE_TOL = 1e-6


# -- common power bases --------------------------------------------------------


def _int_kth_root(m: int, k: int) -> int | None:
    """Exact integer k-th root of m, or None."""
    if k == 1:
        return m
    r = round(m ** (1.0 / k))
    for cand in (r - 1, r, r + 1):
        if cand >= 2 and cand ** k == m:
            return cand
    return None


@lru_cache(maxsize=None)
def primitive_root(m: int) -> tuple[int, int]:
    """The unique (r, k) with m = r**k and r not itself a perfect power."""
    if m < 2:
        raise ValueError("need m >= 2")
    for k in range(m.bit_length() - 1, 1, -1):
        r = _int_kth_root(m, k)
        if r is not None:
            return r, k
    return m, 1


def common_power_base(m: int, mp: int) -> tuple[int, int, int] | None:
    """The primitive r with m = r**i and mp = r**j, or None if no common base exists."""
    if m < 2 or mp < 2:
        raise ValueError("need integers >= 2")
    r1, i = primitive_root(m)
    r2, j = primitive_root(mp)
    if r1 != r2:
        return None
    return r1, i, j


def common_power_base_bruteforce(m: int, mp: int) -> tuple[int, int, int] | None:
    """Smallest r in 2..min(m, mp) with both m and mp powers of r (test oracle)."""
    for r in range(2, min(m, mp) + 1):
        i = _power_of(m, r)
        if i is None:
            continue
        j = _power_of(mp, r)
        if j is not None:
            return r, i, j
    return None


def _power_of(m: int, r: int) -> int | None:
    k, v = 0, 1
    while v < m:
        v *= r
        k += 1
    return k if v == m else None


# -- absolute Jordan spectra -----------------------------------------------------


@dataclass(frozen=True)
class AbsJordanForm:
    """Multiset of (exponent, block size) pairs, sorted; all exponents positive."""

    blocks: tuple[tuple[float, int], ...]

    def __post_init__(self):
        blocks = tuple(sorted((float(a), int(k)) for a, k in self.blocks))
        if not blocks:
            raise ValueError("at least one block is required")
        if any(a <= 0 or k < 1 for a, k in blocks):
            raise ValueError("blocks need positive exponents and sizes >= 1")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_structure(cls, E: ExpandingStructure) -> "AbsJordanForm":
        if E.jordan_blocks is not None:
            return cls(E.jordan_blocks)
        # diagonal action: each layer contributes size-1 blocks with its exponent
        return cls(tuple((l.alpha, 1) for l in E.layers for _ in range(l.size)))

    def scaled(self, s: float) -> "AbsJordanForm":
        return AbsJordanForm(tuple((a * s, k) for a, k in self.blocks))


def jordan_power_compatible(J: AbsJordanForm, J2: AbsJordanForm,
                            rel_tol: float = REL_TOL) -> float | None:
    """The s > 0 with J2 = J scaled by s block-for-block, or None.

    Block sizes must match layer by layer and every exponent ratio must agree
    with s to the given relative tolerance.
    """
    if len(J.blocks) != len(J2.blocks):
        return None
    s = J2.blocks[0][0] / J.blocks[0][0]
    for (a1, k1), (a2, k2) in zip(J.blocks, J2.blocks):
        if k1 != k2:
            return None
        if abs(a2 - s * a1) > rel_tol * max(abs(a2), abs(s * a1)):
            return None
    return s


# -- the verdict -----------------------------------------------------------------


@dataclass
class Verdict:
    """Outcome of the equivalence test, with every ingredient exposed."""

    equivalent: str  # "yes" | "no" | "inconclusive"
    common_base: tuple[int, int, int] | None
    jordan_scale: float | None
    height_ratio: float | None
    stated_condition_holds: bool
    ratio_condition_holds: bool
    diagnostics: str = ""

    def as_dict(self) -> dict:
        return {
            "equivalent": self.equivalent,
            "common_base": list(self.common_base) if self.common_base else None,
            "jordan_scale": self.jordan_scale,
            "height_ratio": self.height_ratio,
            "stated_condition_holds": self.stated_condition_holds,
            "ratio_condition_holds": self.ratio_condition_holds,
            "diagnostics": self.diagnostics,
        }


def _residual(value: float, target: float) -> float:
    return abs(value - target) / max(abs(value), abs(target), 1.0)


def qi_equivalent(E: ExpandingStructure, m: int, E2: ExpandingStructure, mp: int,
                  rel_tol: float = REL_TOL,
                  inconclusive_tol: float = INCONCLUSIVE_TOL) -> Verdict:
    """Decide equivalence of X(E, m) and X(E2, mp) from spectral data.

    Never raises: a verdict of "no" or "inconclusive" carries diagnostics.
    Real comparisons within (rel_tol, inconclusive_tol] downgrade the verdict
    to "inconclusive" rather than committing either way.
    """
    base = common_power_base(m, mp)
    J, J2 = AbsJordanForm.from_structure(E), AbsJordanForm.from_structure(E2)
    scale = jordan_power_compatible(J, J2, rel_tol)
    scale_loose = scale if scale is not None else jordan_power_compatible(J, J2, inconclusive_tol)

    # height scaling forced by the fiber factor: a = ln l_1 / ln l_1' with
    # l_1 = exp(a_1) the smallest eigenvalue magnitude
    a = E.alpha1 / E2.alpha1
    notes: list[str] = [f"height ratio a = ln(l1)/ln(l1') = a1/a1' = {a:.12g}"]

    if base is None:
        notes.append(f"m = {m} and m' = {mp} admit no common power base")
        return Verdict("no", None, scale, a, False, False, "; ".join(notes))

    r, i, j = base
    notes.append(f"common base: m = {r}^{i}, m' = {r}^{j}")

    stated_res = _residual(a, float(i - j))
    stated = stated_res <= rel_tol
    ratio_res = _residual(a, i / j)
    ratio_ok = ratio_res <= rel_tol
    notes.append(f"difference form a vs i-j = {i - j}: residual {stated_res:.3g}")
    notes.append(f"ratio form a vs i/j = {i / j:.12g}: residual {ratio_res:.3g}")
    if stated != ratio_ok:
        notes.append("NOTE: the difference form and the ratio form disagree; "
                     "equivalence is gated on the ratio form")

    if scale is None and scale_loose is None:
        notes.append("absolute Jordan spectra are not powers of each other")
        return Verdict("no", base, None, a, stated, ratio_ok, "; ".join(notes))
    if scale is not None:
        notes.append(f"jordan scale s = {scale:.12g}")

    if scale is not None and ratio_ok:
        verdict = "yes"
    elif ratio_res <= inconclusive_tol and scale_loose is not None:
        verdict = "inconclusive"
        notes.append("residuals inside the inconclusive band")
        if scale is None:
            scale = scale_loose
    else:
        verdict = "no"
        if not ratio_ok and ratio_res > inconclusive_tol:
            notes.append("height scalings of the two factors are incompatible")
    return Verdict(verdict, base, scale, a, stated, ratio_ok, "; ".join(notes))
