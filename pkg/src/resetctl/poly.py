"""Sparse multivariate polynomial arithmetic.

Polynomials carry the dynamics, the set descriptions and the certificates
everywhere else in the package.  Coefficients are 64-bit floats; monomials
are ordered globally in graded lexicographic order so that basis vectors
are reproducible across runs.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

# Operations refuse to build results above this total degree unless the
# caller raises the cap explicitly; runaway symbolic growth fails fast.
DEFAULT_DEGREE_CAP = 30


class DegreeCapError(ValueError):
    """Raised when an operation would exceed the configured degree cap."""


class PolynomialParseError(ValueError):
    """Raised on malformed polynomial text."""


# A monomial is a tuple of (variable index, exponent) pairs, sorted by
# index, with no zero exponents.  The empty tuple is the constant monomial.
Monomial = tuple[tuple[int, int], ...]

_CONST: Monomial = ()


def monomial_degree(m: Monomial) -> int:
    return sum(e for _, e in m)


def monomial_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    exps: dict[int, int] = dict(a)
    for i, e in b:
        exps[i] = exps.get(i, 0) + e
    return tuple(sorted(exps.items()))


def monomial_exponents(m: Monomial, dim: int) -> tuple[int, ...]:
    """Dense exponent vector of length `dim`."""
    out = [0] * dim
    for i, e in m:
        out[i] = e
    return tuple(out)


def grlex_key(m: Monomial, dim: int) -> tuple:
    """Graded-lex sort key: total degree first, then lexicographic on the
    dense exponent vector with x1 heaviest."""
    return (monomial_degree(m), monomial_exponents(m, dim))


def monomial_basis(dim: int, max_degree: int) -> list[Monomial]:
    """All monomials of total degree <= max_degree, graded-lex ascending."""
    out: list[Monomial] = []

    def rec(idx: int, remaining: int, acc: list[tuple[int, int]]):
        if idx == dim:
            out.append(tuple(acc))
            return
        for e in range(remaining + 1):
            if e > 0:
                acc.append((idx, e))
            rec(idx + 1, remaining - e, acc)
            if e > 0:
                acc.pop()

    rec(0, max_degree, [])
    out.sort(key=lambda m: grlex_key(m, dim))
    return out


@dataclass(frozen=True)
class Polynomial:
    """Sparse polynomial over float coefficients.

    `terms` maps Monomial -> nonzero coefficient; all variable indices are
    < `dimension`.  Instances are immutable and safe to share.
    """

    dimension: int
    terms: tuple[tuple[Monomial, float], ...]

    # -- construction -----------------------------------------------------

    @staticmethod
    def from_dict(dim: int, d: dict[Monomial, float],
                  degree_cap: int = DEFAULT_DEGREE_CAP) -> "Polynomial":
        clean = {m: c for m, c in d.items() if c != 0.0}
        for m in clean:
            if m and m[-1][0] >= dim:
                raise ValueError(f"variable index {m[-1][0]} outside dimension {dim}")
            if monomial_degree(m) > degree_cap:
                raise DegreeCapError(
                    f"monomial degree {monomial_degree(m)} exceeds cap {degree_cap}")
        items = sorted(clean.items(), key=lambda kv: grlex_key(kv[0], dim))
        return Polynomial(dim, tuple(items))

    @staticmethod
    def zero(dim: int) -> "Polynomial":
        return Polynomial(dim, ())

    @staticmethod
    def constant(dim: int, c: float) -> "Polynomial":
        return Polynomial.from_dict(dim, {_CONST: float(c)})

    @staticmethod
    def variable(dim: int, i: int) -> "Polynomial":
        if not 0 <= i < dim:
            raise ValueError(f"variable index {i} outside dimension {dim}")
        return Polynomial.from_dict(dim, {((i, 1),): 1.0})

    def as_dict(self) -> dict[Monomial, float]:
        return dict(self.terms)

    # -- queries -----------------------------------------------------------

    @property
    def degree(self) -> int:
        if not self.terms:
            return 0
        return max(monomial_degree(m) for m, _ in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def max_abs_coeff(self) -> float:
        return max((abs(c) for _, c in self.terms), default=0.0)

    def coefficient(self, m: Monomial) -> float:
        for mm, c in self.terms:
            if mm == m:
                return c
        return 0.0

    # -- arithmetic ---------------------------------------------------------

    def _check_dim(self, other: "Polynomial"):
        if self.dimension != other.dimension:
            raise ValueError(
                f"dimension mismatch: {self.dimension} vs {other.dimension}")

    def __add__(self, other) -> "Polynomial":
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.dimension, other)
        self._check_dim(other)
        d = self.as_dict()
        for m, c in other.terms:
            d[m] = d.get(m, 0.0) + c
        return Polynomial.from_dict(self.dimension, d)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.dimension, tuple((m, -c) for m, c in self.terms))

    def __sub__(self, other) -> "Polynomial":
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.dimension, other)
        return self + (-other)

    def __rsub__(self, other) -> "Polynomial":
        return (-self) + other

    def __mul__(self, other, degree_cap: int = DEFAULT_DEGREE_CAP) -> "Polynomial":
        if isinstance(other, (int, float)):
            if other == 0:
                return Polynomial.zero(self.dimension)
            return Polynomial(self.dimension,
                              tuple((m, c * other) for m, c in self.terms))
        self._check_dim(other)
        d: dict[Monomial, float] = {}
        for m1, c1 in self.terms:
            for m2, c2 in other.terms:
                m = monomial_mul(m1, m2)
                d[m] = d.get(m, 0.0) + c1 * c2
        return Polynomial.from_dict(self.dimension, d, degree_cap=degree_cap)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Polynomial":
        if not isinstance(k, int) or k < 0:
            raise ValueError("exponent must be a non-negative integer")
        out = Polynomial.constant(self.dimension, 1.0)
        for _ in range(k):
            out = out * self
        return out

    def scale(self, c: float) -> "Polynomial":
        return self * c

    # -- calculus -----------------------------------------------------------

    def differentiate(self, i: int) -> "Polynomial":
        """Partial derivative with respect to variable i."""
        d: dict[Monomial, float] = {}
        for m, c in self.terms:
            exps = dict(m)
            e = exps.get(i, 0)
            if e == 0:
                continue
            if e == 1:
                del exps[i]
            else:
                exps[i] = e - 1
            mm = tuple(sorted(exps.items()))
            d[mm] = d.get(mm, 0.0) + c * e
        return Polynomial.from_dict(self.dimension, d)

    def gradient(self) -> list["Polynomial"]:
        return [self.differentiate(i) for i in range(self.dimension)]

    # -- evaluation -----------------------------------------------------------

    def evaluate(self, x: Sequence[float]) -> float:
        if len(x) != self.dimension:
            raise ValueError("point dimension mismatch")
        total = 0.0
        for m, c in self.terms:
            v = c
            for i, e in m:
                v *= x[i] ** e
            total += v
        return total

    def __call__(self, x: Sequence[float]) -> float:
        return self.evaluate(x)

    def evaluate_many(self, pts) -> "object":
        """Vectorized evaluation on an (n, dim) array; returns length-n array."""
        import numpy as np

        pts = np.asarray(pts, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1)
        out = np.zeros(pts.shape[0])
        for m, c in self.terms:
            v = np.full(pts.shape[0], c)
            for i, e in m:
                v = v * pts[:, i] ** e
            out += v
        return out

    def evaluate_horner(self, x: Sequence[float]) -> float:
        """Alternative evaluation path (recursive Horner in the last active
        variable); used as an independent check on `evaluate`."""
        if not self.terms:
            return 0.0
        top = max((m[-1][0] for m, _ in self.terms if m), default=-1)
        if top < 0:
            return self.terms[0][1]
        groups: dict[int, dict[Monomial, float]] = {}
        for m, c in self.terms:
            exps = dict(m)
            e = exps.pop(top, 0)
            rest = tuple(sorted(exps.items()))
            groups.setdefault(e, {})[rest] = groups.setdefault(e, {}).get(rest, 0.0) + c
        emax = max(groups)
        acc = 0.0
        for e in range(emax, -1, -1):
            acc *= x[top]
            if e in groups:
                sub = Polynomial.from_dict(self.dimension, groups[e])
                acc += sub.evaluate_horner(x)
        return acc

    # -- substitution -----------------------------------------------------------

    def affine_substitute(self, center: Sequence[float], radius: Sequence[float]) -> "Polynomial":
        """Compose with x_i = center_i + radius_i * y_i; returns p in y."""
        dim = self.dimension
        subs = [Polynomial.constant(dim, center[i]) +
                Polynomial.variable(dim, i) * radius[i] for i in range(dim)]
        out = Polynomial.zero(dim)
        for m, c in self.terms:
            term = Polynomial.constant(dim, c)
            for i, e in m:
                term = term * subs[i] ** e
            out = out + term
        return out

    # -- printing / parsing ------------------------------------------------------

    def __str__(self) -> str:
        return format_polynomial(self)

    def __repr__(self) -> str:
        return f"Polynomial({self.dimension}, {format_polynomial(self)!r})"


@dataclass(frozen=True)
class VectorField:
    """Polynomial vector field: dx_i/dt = components[i](x)."""

    components: tuple[Polynomial, ...]

    def __post_init__(self):
        dims = {p.dimension for p in self.components}
        if len(dims) > 1:
            raise ValueError("vector field components disagree on dimension")

    @property
    def dimension(self) -> int:
        return self.components[0].dimension

    def evaluate(self, x: Sequence[float]) -> list[float]:
        return [p.evaluate(x) for p in self.components]

    @staticmethod
    def parse(dim: int, texts: Iterable[str]) -> "VectorField":
        return VectorField(tuple(parse_polynomial(t, dim) for t in texts))


def lie_derivative(g: Polynomial, f: VectorField, k: int = 1) -> Polynomial:
    """k-th Lie derivative of g along f: L^0 = g, L^{j+1} = <f, grad L^j>."""
    if g.dimension != f.dimension:
        raise ValueError("dimension mismatch between g and f")
    if k < 0:
        raise ValueError("order must be >= 0")
    cur = g
    for _ in range(k):
        acc = Polynomial.zero(g.dimension)
        for i, fi in enumerate(f.components):
            acc = acc + cur.differentiate(i) * fi
        cur = acc
    return cur


def gradient(p: Polynomial) -> list[Polynomial]:
    return p.gradient()


def integrate_over_box(p: Polynomial, box: Sequence[Sequence[float]]) -> float:
    """Exact integral of p over the axis-aligned box [[lo,hi],...]."""
    if len(box) != p.dimension:
        raise ValueError("box dimension mismatch")
    for lo, hi in box:
        if lo > hi:
            raise ValueError(f"degenerate box axis [{lo}, {hi}]")
    total = 0.0
    for m, c in p.terms:
        exps = dict(m)
        v = c
        for i, (lo, hi) in enumerate(box):
            e = exps.get(i, 0)
            v *= (hi ** (e + 1) - lo ** (e + 1)) / (e + 1)
        total += v
    return total


# ---------------------------------------------------------------------------
# text format: sums of `c * x1^a * x2^b` terms, `^` powers, unary minus,
# whitespace-insensitive; printed canonically in graded-lex descending order.
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
                    r"|(?P<var>x\d+)|(?P<op>[*^+-]))")


def parse_polynomial(text: str, dim: int) -> Polynomial:
    """Parse the canonical text syntax into a Polynomial of dimension dim."""
    tokens: list[tuple[str, str]] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            if text[pos:].strip() == "":
                break
            raise PolynomialParseError(f"unexpected character at {pos}: {text[pos:]!r}")
        pos = m.end()
        for kind in ("num", "var", "op"):
            if m.group(kind) is not None:
                tokens.append((kind, m.group(kind)))
                break
    if not tokens:
        raise PolynomialParseError("empty polynomial text")

    terms: dict[Monomial, float] = {}
    i = 0
    n = len(tokens)

    while i < n:
        sign = 1.0
        while i < n and tokens[i][0] == "op" and tokens[i][1] in "+-":
            if tokens[i][1] == "-":
                sign = -sign
            i += 1
        if i >= n:
            raise PolynomialParseError("dangling sign")
        coeff = sign
        exps: dict[int, int] = {}
        expect_factor = True
        while i < n:
            kind, val = tokens[i]
            if kind == "op" and val in "+-":
                break
            if kind == "op" and val == "*":
                i += 1
                expect_factor = True
                continue
            if not expect_factor:
                raise PolynomialParseError(f"missing '*' before {val!r}")
            if kind == "num":
                coeff *= float(val)
                i += 1
            elif kind == "var":
                idx = int(val[1:]) - 1
                if not 0 <= idx < dim:
                    raise PolynomialParseError(
                        f"variable {val} outside dimension {dim}")
                e = 1
                if i + 2 < n and tokens[i + 1] == ("op", "^") and tokens[i + 2][0] == "num":
                    etext = tokens[i + 2][1]
                    ef = float(etext)
                    if ef != int(ef) or ef < 0:
                        raise PolynomialParseError(f"bad exponent {etext}")
                    e = int(ef)
                    i += 3
                else:
                    i += 1
                exps[idx] = exps.get(idx, 0) + e
            else:
                raise PolynomialParseError(f"unexpected token {val!r}")
            expect_factor = False
        mono = tuple(sorted((k, v) for k, v in exps.items() if v > 0))
        terms[mono] = terms.get(mono, 0.0) + coeff
    return Polynomial.from_dict(dim, terms)


def _format_term(m: Monomial, c: float) -> str:
    parts = [repr(abs(c))]
    for i, e in m:
        parts.append(f"x{i + 1}" + (f"^{e}" if e > 1 else ""))
    return "*".join(parts)


def format_polynomial(p: Polynomial) -> str:
    """Canonical text form: graded-lex descending terms, explicit coefficients."""
    if not p.terms:
        return "0.0"
    ordered = sorted(p.terms, key=lambda kv: grlex_key(kv[0], p.dimension),
                     reverse=True)
    out = []
    for k, (m, c) in enumerate(ordered):
        if k == 0:
            out.append(("-" if c < 0 else "") + _format_term(m, c))
        else:
            out.append((" - " if c < 0 else " + ") + _format_term(m, c))
    return "".join(out)


def poly_close(a: Polynomial, b: Polynomial, tol: float = 1e-9) -> bool:
    """Coefficient-wise comparison within tol."""
    if a.dimension != b.dimension:
        return False
    da, db = a.as_dict(), b.as_dict()
    for m in set(da) | set(db):
        if not math.isclose(da.get(m, 0.0), db.get(m, 0.0),
                            rel_tol=tol, abs_tol=tol):
            return False
    return True
