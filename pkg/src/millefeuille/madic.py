"""m-adic points, the oriented (m+1)-valent tree, and the boundary ultrametric.

A point of Q_m is a height-indexed digit expansion with finitely many nonzero
digits; heights increase toward the distinguished end of the tree. Distances
are carried as (base, exponent) pairs -- the exponent is the agreement height
-- and converted to floating point only at the API edge, so the ultrametric
axioms can be checked with exact integer comparisons.

Text encoding of a point: ``m:{t1:d1,t2:d2,...}`` with heights descending,
e.g. ``2:{3:1,0:1}``; the zero point of Q_2 is ``2:{}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

NEG_INF = float("-inf")


@dataclass(frozen=True)
class MAdicPoint:
    """A point of Q_m: base m and a canonical (zero-free) digit map.

    ``digits`` is stored as a tuple of (height, digit) pairs sorted by
    descending height; every unlisted height carries digit 0.
    """

    base: int
    digits: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not isinstance(self.base, int) or self.base < 2:
            raise ValueError(f"base must be an integer >= 2, got {self.base!r}")
        seen = set()
        prev = None
        for h, d in self.digits:
            if not isinstance(h, int) or not isinstance(d, int):
                raise ValueError("heights and digits must be integers")
            if not 0 < d < self.base:
                raise ValueError(
                    f"digit {d} at height {h} outside canonical range 1..{self.base - 1}"
                )
            if h in seen:
                raise ValueError(f"duplicate height {h}")
            if prev is not None and h >= prev:
                raise ValueError("digits must be sorted by descending height")
            seen.add(h)
            prev = h

    @classmethod
    def from_digits(cls, base: int, digits: Mapping[int, int] | Iterable[tuple[int, int]]) -> "MAdicPoint":
        """Build a point from any height->digit mapping; zero digits are dropped."""
        items = digits.items() if isinstance(digits, Mapping) else digits
        cleaned = tuple(sorted(((int(h), int(d)) for h, d in items if int(d) != 0), reverse=True))
        return cls(base, cleaned)

    @classmethod
    def zero(cls, base: int) -> "MAdicPoint":
        return cls(base, ())

    def digit(self, height: int) -> int:
        for h, d in self.digits:
            if h == height:
                return d
            if h < height:
                return 0
        return 0

    @property
    def support(self) -> tuple[int, ...]:
        """Heights carrying a nonzero digit, descending."""
        return tuple(h for h, _ in self.digits)

    def with_digit(self, height: int, digit: int) -> "MAdicPoint":
        """Return the point with one digit replaced (0 erases it)."""
        rest = [(h, d) for h, d in self.digits if h != height]
        if digit != 0:
            rest.append((height, digit))
        return MAdicPoint(self.base, tuple(sorted(rest, reverse=True)))

    def shift(self, k: int) -> "MAdicPoint":
        """Shift every digit up by k heights (a similarity of ratio base**k)."""
        return MAdicPoint(self.base, tuple((h + k, d) for h, d in self.digits))

    def truncated_at(self, height: int) -> "MAdicPoint":
        """Zero every digit below ``height`` (the canonical ball representative)."""
        return MAdicPoint(self.base, tuple((h, d) for h, d in self.digits if h >= height))

    def encode(self) -> str:
        body = ",".join(f"{h}:{d}" for h, d in self.digits)
        return f"{self.base}:{{{body}}}"

    @classmethod
    def parse(cls, text: str) -> "MAdicPoint":
        """Parse the ``m:{t:d,...}`` encoding; raises ValueError on malformed input."""
        text = text.strip()
        head, sep, body = text.partition(":")
        if not sep or not body.startswith("{") or not body.endswith("}"):
            raise ValueError(f"malformed point encoding: {text!r}")
        try:
            base = int(head)
        except ValueError as exc:
            raise ValueError(f"malformed base in {text!r}") from exc
        inner = body[1:-1].strip()
        digits: list[tuple[int, int]] = []
        if inner:
            for chunk in inner.split(","):
                h, sep2, d = chunk.partition(":")
                if not sep2:
                    raise ValueError(f"malformed digit entry {chunk!r} in {text!r}")
                try:
                    digits.append((int(h), int(d)))
                except ValueError as exc:
                    raise ValueError(f"malformed digit entry {chunk!r} in {text!r}") from exc
        for _, d in digits:
            if not 0 <= d < base:
                raise ValueError(f"digit out of range in {text!r}")
        return cls.from_digits(base, digits)

    def __repr__(self) -> str:
        return f"MAdicPoint({self.encode()!r})"


def agreement_height(x: MAdicPoint, y: MAdicPoint) -> int | float:
    """Least height t such that the digits of x and y coincide at every s >= t.

    Returns ``NEG_INF`` exactly when x == y. This is the height at which the
    two downward rays first run together; the boundary distance is
    base**agreement_height.
    """
    if x.base != y.base:
        raise ValueError(f"base mismatch: {x.base} != {y.base}")
    ax, ay = x.digits, y.digits
    i = j = 0
    nx, ny = len(ax), len(ay)
    while i < nx or j < ny:
        hx = ax[i][0] if i < nx else None
        hy = ay[j][0] if j < ny else None
        if hy is None or (hx is not None and hx > hy):
            return ax[i][0] + 1  # y has digit 0 there
        if hx is None or hy > hx:
            return ay[j][0] + 1
        if ax[i][1] != ay[j][1]:
            return hx + 1
        i += 1
        j += 1
    return NEG_INF


def madic_distance(x: MAdicPoint, y: MAdicPoint, base: float | None = None) -> float:
    """Parabolic visual distance a**agreement_height(x, y); defaults to a = m.

    The (base, exponent) pair is the exact carrier; this is the floating-point
    edge. Zero exactly when x == y.
    """
    if base is None:
        base = float(x.base)
    if base <= 1.0:
        raise ValueError(f"metric base must exceed 1, got {base}")
    h = agreement_height(x, y)
    if h == NEG_INF:
        return 0.0
    return float(base) ** h


@dataclass(frozen=True)
class TreeVertex:
    """Vertex of the (m+1)-valent tree at ``height``, named by the ball it bounds.

    The representative point keeps only digits at heights >= ``height``, so
    structural equality of vertices is equality of balls.
    """

    height: int
    rep: MAdicPoint

    def __post_init__(self):
        if self.rep.digits and self.rep.digits[-1][0] < self.height:
            raise ValueError("representative carries digits below the vertex height")

    @property
    def base(self) -> int:
        return self.rep.base

    def __repr__(self) -> str:
        return f"TreeVertex(h={self.height}, {self.rep.encode()!r})"


def ball_of(xi: MAdicPoint, height: int) -> TreeVertex:
    """The vertex at ``height`` whose ball contains xi."""
    return TreeVertex(height, xi.truncated_at(height))


def parent(v: TreeVertex) -> TreeVertex:
    """The unique outgoing neighbour, one height up."""
    return ball_of(v.rep, v.height + 1)


def children(v: TreeVertex) -> list[TreeVertex]:
    """The m incoming neighbours, one height down."""
    return [TreeVertex(v.height - 1, v.rep.with_digit(v.height - 1, d))
            for d in range(v.base)]


def tree_distance(u: TreeVertex, v: TreeVertex) -> int:
    """Graph distance on the tree: up to the lowest common ancestor and back down."""
    if u.base != v.base:
        raise ValueError(f"base mismatch: {u.base} != {v.base}")
    merge = agreement_height(u.rep, v.rep)
    t_merge = max(u.height, v.height)
    if merge != NEG_INF:
        t_merge = max(t_merge, int(merge))
    return (t_merge - u.height) + (t_merge - v.height)
