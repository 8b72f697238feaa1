"""Semi-algebraic sets: conjunctions of polynomial inequalities.

A set is stored as a list of (p, strict) constraints, each read as
p(x) < 0 (strict) or p(x) <= 0.  Sets optionally carry a bounding box,
which the sampler and the SOS layer require.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .poly import Polynomial, VectorField, lie_derivative, parse_polynomial

Box = tuple[tuple[float, float], ...]


class ComplementError(ValueError):
    """Complementation is only supported for single-constraint sets; split
    the problem so that domains and guards are single inequalities."""


class UnsupportedOrderError(NotImplementedError):
    """Transverse targets above Lie order 1 are not implemented."""


@dataclass(frozen=True)
class Constraint:
    poly: Polynomial
    strict: bool  # True: p < 0, False: p <= 0

    def holds(self, x: Sequence[float], tol: float = 0.0) -> bool:
        v = self.poly.evaluate(x)
        return v < tol if self.strict else v <= tol

    def __str__(self) -> str:
        return f"{self.poly} {'<' if self.strict else '<='} 0"


@dataclass(frozen=True)
class SemiAlgebraicSet:
    dimension: int
    constraints: tuple[Constraint, ...]
    box: Optional[Box] = None

    # -- construction ---------------------------------------------------

    @staticmethod
    def from_strings(dim: int, texts: Sequence[str],
                     box: Optional[Sequence[Sequence[float]]] = None) -> "SemiAlgebraicSet":
        cons = []
        for t in texts:
            t = t.strip()
            if t.endswith("<= 0"):
                body, strict = t[:-4], False
            elif t.endswith("<=0"):
                body, strict = t[:-3], False
            elif t.endswith("< 0"):
                body, strict = t[:-3], True
            elif t.endswith("<0"):
                body, strict = t[:-2], True
            else:
                raise ValueError(f"constraint must end with '< 0' or '<= 0': {t!r}")
            cons.append(Constraint(parse_polynomial(body, dim), strict))
        b = tuple((float(lo), float(hi)) for lo, hi in box) if box is not None else None
        return SemiAlgebraicSet(dim, tuple(cons), b)

    @staticmethod
    def whole_space(dim: int, box: Optional[Box] = None) -> "SemiAlgebraicSet":
        return SemiAlgebraicSet(dim, (), box)

    @staticmethod
    def empty(dim: int, box: Optional[Box] = None) -> "SemiAlgebraicSet":
        one = Polynomial.constant(dim, 1.0)
        return SemiAlgebraicSet(dim, (Constraint(one, True),), box)

    def to_strings(self) -> list[str]:
        return [str(c) for c in self.constraints]

    def with_box(self, box: Optional[Sequence[Sequence[float]]]) -> "SemiAlgebraicSet":
        b = tuple((float(lo), float(hi)) for lo, hi in box) if box is not None else None
        return replace(self, box=b)

    # -- membership -------------------------------------------------------

    def contains(self, x: Sequence[float], tol: float = 0.0) -> bool:
        return all(c.holds(x, tol) for c in self.constraints)

    def contains_many(self, pts: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Vectorized membership over an (n, dim) array."""
        pts = np.asarray(pts, dtype=float)
        ok = np.ones(pts.shape[0], dtype=bool)
        for c in self.constraints:
            v = c.poly.evaluate_many(pts)
            ok &= (v < tol) if c.strict else (v <= tol)
        return ok

    # -- set algebra -------------------------------------------------------

    def intersect(self, other: "SemiAlgebraicSet") -> "SemiAlgebraicSet":
        if self.dimension != other.dimension:
            raise ValueError("dimension mismatch in intersection")
        seen = set()
        cons = []
        for c in self.constraints + other.constraints:
            key = (c.poly.terms, c.strict)
            if key not in seen:
                seen.add(key)
                cons.append(c)
        box = box_intersect(self.box, other.box)
        return SemiAlgebraicSet(self.dimension, tuple(cons), box)

    def complement(self) -> "SemiAlgebraicSet":
        """Complement; only defined for single-constraint sets."""
        if len(self.constraints) != 1:
            raise ComplementError(
                f"complement of a {len(self.constraints)}-constraint conjunction "
                "is a union; only single-constraint sets can be complemented")
        c = self.constraints[0]
        return SemiAlgebraicSet(
            self.dimension, (Constraint(-c.poly, not c.strict),), None)

    def shrink_to_open(self, eps: float) -> "SemiAlgebraicSet":
        """Shrink every non-strict constraint: (p <= 0) -> (p + eps < 0).

        The result is open and contained in the original set; strict
        constraints are left unchanged."""
        if eps <= 0:
            raise ValueError("eps must be > 0")
        cons = tuple(c if c.strict else Constraint(c.poly + eps, True)
                     for c in self.constraints)
        return SemiAlgebraicSet(self.dimension, cons, self.box)

    def is_open(self) -> bool:
        return all(c.strict for c in self.constraints)

    # -- sampling ------------------------------------------------------------

    def sample(self, n: int, rng) -> tuple[np.ndarray, float]:
        """Rejection-sample up to n member points from the bounding box.

        Returns (points, acceptance_ratio).  Requires a bounding box."""
        if self.box is None:
            raise ValueError("sampling requires a bounding box")
        rng = _as_rng(rng)
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        accepted: list[np.ndarray] = []
        drawn = 0
        batch = max(4 * n, 256)
        max_draws = max(200 * n, 20000)
        while sum(len(a) for a in accepted) < n and drawn < max_draws:
            pts = rng.uniform(lo, hi, size=(batch, self.dimension))
            drawn += batch
            ok = self.contains_many(pts)
            if ok.any():
                accepted.append(pts[ok])
        if accepted:
            pts = np.concatenate(accepted)[:n]
        else:
            pts = np.empty((0, self.dimension))
        ratio = (sum(len(a) for a in accepted)) / drawn if drawn else 0.0
        return pts, min(ratio, 1.0)

    def __str__(self) -> str:
        return "{" + " & ".join(self.to_strings()) + "}"


@dataclass(frozen=True)
class EmptinessVerdict:
    empty: bool
    witness: Optional[tuple[float, ...]] = None

    def __bool__(self) -> bool:  # truthy when probably empty
        return self.empty


def is_probably_empty(s: SemiAlgebraicSet, budget: int = 10000,
                      rng=0) -> EmptinessVerdict:
    """One-sided sampling test: nonempty (with witness) or probably empty."""
    if s.box is None:
        raise ValueError("emptiness test requires a bounding box")
    rng = _as_rng(rng)
    lo = np.array([b[0] for b in s.box])
    hi = np.array([b[1] for b in s.box])
    remaining = budget
    while remaining > 0:
        k = min(remaining, 4096)
        pts = rng.uniform(lo, hi, size=(k, s.dimension))
        ok = s.contains_many(pts)
        idx = np.flatnonzero(ok)
        if idx.size:
            return EmptinessVerdict(False, tuple(pts[idx[0]]))
        remaining -= k
    return EmptinessVerdict(True, None)


def intersect(a: SemiAlgebraicSet, b: SemiAlgebraicSet) -> SemiAlgebraicSet:
    return a.intersect(b)


def shrink_to_open(s: SemiAlgebraicSet, eps: float) -> SemiAlgebraicSet:
    return s.shrink_to_open(eps)


def box_intersect(a: Optional[Box], b: Optional[Box]) -> Optional[Box]:
    if a is None:
        return b
    if b is None:
        return a
    return tuple((max(la, lb), min(ha, hb)) for (la, ha), (lb, hb) in zip(a, b))


@dataclass(frozen=True)
class TransverseTarget:
    """First-order surrogate of the instantaneous-exit set of {g <= 0}.

    The realized set is the band {-delta < g < delta, L_f g > delta}: points
    near the boundary where the flow pushes outward at order one.  Higher
    Lie orders are not enumerated."""

    boundary: Polynomial
    lie_order: int
    realized: SemiAlgebraicSet


def transverse_target(g: Polynomial, f: VectorField, delta: float,
                      max_order: int = 1,
                      box: Optional[Sequence[Sequence[float]]] = None) -> TransverseTarget:
    if g.dimension != f.dimension:
        raise ValueError("dimension mismatch between g and f")
    if delta <= 0:
        raise ValueError("delta must be > 0")
    if max_order > 1:
        raise UnsupportedOrderError(
            "transverse sets above Lie order 1 are unsupported")
    lie1 = lie_derivative(g, f, 1)
    cons = (
        Constraint(-g - delta, True),   # -delta < g
        Constraint(g - delta, True),    # g < delta
        Constraint(delta - lie1, True),  # L_f g > delta
    )
    b = tuple((float(lo), float(hi)) for lo, hi in box) if box is not None else None
    realized = SemiAlgebraicSet(g.dimension, cons, b)
    return TransverseTarget(g, 1, realized)


def derive_ball_box(s: SemiAlgebraicSet) -> Optional[Box]:
    """Try to derive a bounding box from a ball-type constraint
    sum a_i (x_i - c_i)^2 - r2 (<|<=) 0 with all a_i > 0."""
    for c in s.constraints:
        box = _ball_box(c.poly, s.dimension)
        if box is not None:
            return box_intersect(box, s.box)
    return s.box


def _ball_box(p: Polynomial, dim: int) -> Optional[Box]:
    quad = [0.0] * dim
    lin = [0.0] * dim
    const = 0.0
    for m, c in p.terms:
        if not m:
            const = c
        elif len(m) == 1 and m[0][1] == 1:
            lin[m[0][0]] = c
        elif len(m) == 1 and m[0][1] == 2:
            quad[m[0][0]] = c
        else:
            return None
    if any(q <= 0 for q in quad):
        return None
    # a_i (x_i - c_i)^2 with c_i = -lin/(2a); radius^2 = sum a c^2 - const
    centers = [-lin[i] / (2 * quad[i]) for i in range(dim)]
    r2 = sum(quad[i] * centers[i] ** 2 for i in range(dim)) - const
    if r2 <= 0:
        return None
    return tuple((centers[i] - (r2 / quad[i]) ** 0.5,
                  centers[i] + (r2 / quad[i]) ** 0.5) for i in range(dim))


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
