"""SOS certificate programs for reach-avoid and invariance sets.

A reach-avoid program searches for polynomials theta, psi and SOS
multipliers such that

    (a_k)  -<grad theta, f> + sum_j s1_j zeta_j - h1_k gamma_k    in SOS
    (b_k)  theta - <grad psi, f> + sum_j s2_j zeta_j - h2_k gamma_k in SOS
    (c_j)  per-face boundary blocks forcing theta >= 0 on bd(S)
    (n)    theta >= -1 on the bounding box (scale normalization)

for S = {x | /\ zeta_j < 0} and open target TR = {x | /\ gamma_k < 0},
minimizing the box integral of theta.  Then {x in S | theta(x) < 0} inner
approximates the set of points whose trajectories reach TR while staying
in S beforehand.  An invariance program keeps (a), (c), (n) only; its
{theta < 0} cannot reach the boundary of S, so certified trajectories
stay inside S forever.

Every program is built in normalized coordinates (bounding box mapped to
[-1,1]^n, set polynomials rescaled to unit max-coefficient, the field
rescaled in time).  Geometry that presses a dip of theta against a
boundary face is repaired before assembly:

  * a target face glued to (or beyond) a safe face is dropped from the
    target -- trajectories exiting S there hit the closed target at that
    instant;
  * a safe face lying inside the target closure is relaxed a fixed margin
    into the target -- reaching the target ends the safety obligation, and
    without the margin theta would have to climb back to zero inside an
    arbitrarily thin window, which no practical degree can express;
  * closed targets are opened by fattening OUTWARD (the epsilon-
    neighborhood construction); shrinking them inward would create the
    same thin-window obstruction on shared faces.

The per-face boundary encoding (theta - lam_j zeta_j + sum_{j'} t_{j,j'}
zeta_{j'} in SOS) reduces to the aggregated single block for J = 1; the
aggregated form for J > 1 fails to pin the boundary at all (two
constraints summing to a negative constant make the program unbounded),
so it is only available behind `boundary_mode="verbatim"`.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .poly import (Monomial, Polynomial, VectorField, monomial_basis,
                   monomial_degree, monomial_mul)
from .semialg import Constraint, SemiAlgebraicSet
from . import sdpbackend
from .sdpbackend import ConicProblem, ConicSolution, ToleranceSet

logger = logging.getLogger(__name__)

CONST_KEY = "c"


class BasisOverflowError(ValueError):
    """A Gram basis exceeded the configured size limit."""


class InfeasibleAtDegree(Exception):
    """Solver failure signal consumed by the degree-escalation loop."""

    def __init__(self, degree: int, status: str, detail: str = ""):
        super().__init__(f"no certificate at degree {degree}: {status} {detail}")
        self.degree = degree
        self.status = status
        self.detail = detail


@dataclass(frozen=True)
class TemplateSpec:
    """Template degrees and tolerances for one certificate program."""

    theta_degree: int = 4
    psi_degree: int = 4
    mult_degree: Optional[int] = None    # SOS multipliers on zeta terms
    mult_degree_h: Optional[int] = None  # SOS multipliers on gamma terms
    eps_strict: float = 1e-6
    eps_target: float = 1e-3   # outward opening of closed targets (box units)
    eps_face: float = 0.25     # relaxation of safe faces inside the target
    eps_band: float = 0.3      # opening of targets glued to a safe boundary
    eps_post: float = 1e-6
    boundary_mode: str = "per_face"      # "per_face" | "verbatim"
    max_gram_dim: int = 400

    def resolved_mult(self) -> int:
        d = self.mult_degree if self.mult_degree is not None else self.theta_degree
        return d + (d % 2)

    def resolved_mult_h(self) -> int:
        d = self.mult_degree_h if self.mult_degree_h is not None else self.resolved_mult()
        return d + (d % 2)


# An affine expression over program variables: monomial -> {var key: coef}.
# Var keys: ("t", i) theta coeff, ("p", i) psi coeff, (name, i, j) multiplier
# Gram upper-triangle entry (off-diagonal doubling folded into the coef),
# CONST_KEY for the constant part.
AffineExpr = dict


@dataclass
class CertificateProgram:
    kind: str                      # "reach_avoid" | "invariance"
    dimension: int
    center: tuple[float, ...]
    radius: tuple[float, ...]
    time_scale: float
    theta_basis: list[Monomial]
    psi_basis: list[Monomial]
    multipliers: list[tuple[str, list[Monomial]]]
    blocks: list[tuple[str, AffineExpr, list[Monomial]]]
    objective: np.ndarray          # over theta coefficients
    spec: TemplateSpec
    safe_y: SemiAlgebraicSet       # program sets, normalized coordinates
    target_y: Optional[SemiAlgebraicSet]
    f_y: VectorField

    def describe(self) -> dict:
        """Stable structural summary (for logs and regression tests)."""
        return {
            "kind": self.kind,
            "theta_basis": len(self.theta_basis),
            "psi_basis": len(self.psi_basis),
            "multipliers": [(n, len(b)) for n, b in self.multipliers],
            "blocks": [(n, len(gb), len(e)) for n, e, gb in self.blocks],
        }


@dataclass
class Certificate:
    theta: Polynomial              # original coordinates
    psi: Optional[Polynomial]
    multipliers: dict[str, Polynomial]
    grams: dict[str, np.ndarray]
    solver_status: str
    objective: Optional[float]
    accepted: bool
    postcheck: dict = field(default_factory=dict)
    degrees: tuple[int, int, int] = (0, 0, 0)
    value_scale: float = 1.0       # max |theta| over the box

    def margin(self, kappa: float = 1e-3) -> float:
        return kappa * max(1.0, self.value_scale)

    def region(self, S: SemiAlgebraicSet, kappa: float = 1e-3) -> SemiAlgebraicSet:
        """The certified set {x in S | theta(x) < -margin}."""
        cons = S.constraints + (Constraint(self.theta + self.margin(kappa), True),)
        return SemiAlgebraicSet(S.dimension, cons, S.box)


# ---------------------------------------------------------------------------
# expression assembly
# ---------------------------------------------------------------------------


def _expr_add_poly(expr: AffineExpr, p: Polynomial, sign: float = 1.0):
    for m, c in p.terms:
        slot = expr.setdefault(m, {})
        slot[CONST_KEY] = slot.get(CONST_KEY, 0.0) + sign * c


def _expr_add_coeff_poly(expr: AffineExpr, key, p: Polynomial, sign: float = 1.0):
    for m, c in p.terms:
        slot = expr.setdefault(m, {})
        slot[key] = slot.get(key, 0.0) + sign * c


def _expr_add_template(expr: AffineExpr, tag: str, contribs: list[Polynomial],
                       sign: float = 1.0):
    for i, p in enumerate(contribs):
        _expr_add_coeff_poly(expr, (tag, i), p, sign)


def _expr_add_multiplier(expr: AffineExpr, name: str, basis: list[Monomial],
                         dim: int, partner: Polynomial, sign: float = 1.0):
    """Add sign * s(x) * partner(x) where s = z^T G z over `basis`."""
    for i in range(len(basis)):
        for j in range(i, len(basis)):
            mult = 1.0 if i == j else 2.0
            prod = Polynomial.from_dict(dim, {monomial_mul(basis[i], basis[j]): mult})
            _expr_add_coeff_poly(expr, (name, i, j), prod * partner, sign)


def _expr_degree(expr: AffineExpr) -> int:
    return max((monomial_degree(m) for m in expr), default=0)


def _mono_poly(dim: int, m: Monomial) -> Polynomial:
    return Polynomial.from_dict(dim, {m: 1.0})


def _grad_dot_f(dim: int, basis: list[Monomial], f: VectorField) -> list[Polynomial]:
    """Per-basis-element <grad(monomial), f>."""
    out = []
    for m in basis:
        acc = Polynomial.zero(dim)
        mp = _mono_poly(dim, m)
        for i, fi in enumerate(f.components):
            acc = acc + mp.differentiate(i) * fi
        out.append(acc)
    return out


def _normalize_unit(p: Polynomial) -> Polynomial:
    s = p.max_abs_coeff()
    return p if s == 0 else p * (1.0 / s)


def _objective_vector(basis: list[Monomial], dim: int) -> np.ndarray:
    """Integral of each basis monomial over [-1,1]^n."""
    w = np.zeros(len(basis))
    for k, m in enumerate(basis):
        exps = dict(m)
        v = 1.0
        for i in range(dim):
            e = exps.get(i, 0)
            v *= 0.0 if e % 2 == 1 else 2.0 / (e + 1)
        w[k] = v
    return w


# ---------------------------------------------------------------------------
# normalization and set surgery
# ---------------------------------------------------------------------------


def _to_box_coords(S: SemiAlgebraicSet, f: VectorField,
                   TR: Optional[SemiAlgebraicSet]):
    """Map the data into y-coordinates with S's box -> [-1,1]^n."""
    if S.box is None:
        raise ValueError("the safe set must carry a bounding box")
    dim = S.dimension
    center = tuple((lo + hi) / 2.0 for lo, hi in S.box)
    radius = tuple(max((hi - lo) / 2.0, 1e-9) for lo, hi in S.box)

    def conv(s: SemiAlgebraicSet) -> SemiAlgebraicSet:
        cons = tuple(
            Constraint(_normalize_unit(c.poly.affine_substitute(center, radius)),
                       c.strict) for c in s.constraints)
        return SemiAlgebraicSet(dim, cons, tuple((-1.0, 1.0) for _ in range(dim)))

    comps = [f.components[i].affine_substitute(center, radius) * (1.0 / radius[i])
             for i in range(dim)]
    fs = max((c.max_abs_coeff() for c in comps), default=0.0) or 1.0
    f_y = VectorField(tuple(c * (1.0 / fs) for c in comps))
    return center, radius, conv(S), (conv(TR) if TR is not None else None), f_y, fs


def _const_offset(p: Polynomial) -> Optional[float]:
    """If p is constant as a polynomial, return its value, else None."""
    for m, c in p.terms:
        if m and abs(c) > 1e-9:
            return None
    return p.coefficient(())


def _align_target(S: SemiAlgebraicSet, TR: SemiAlgebraicSet, eps_face: float,
                  eps_band: float):
    """Drop target faces glued to safe faces; relax matching safe faces.

    A non-strict target constraint that negates a safe constraint is the
    must-jump band pattern (target = closure of the domain complement);
    it is opened wide (eps_band) into the domain, with the matching safe
    face pushed just beyond, so the certificate has a real recovery
    window around the old shared boundary.  The widened band stays inside
    the guard because the other target constraints still apply."""
    tr_new = list(TR.constraints)
    s_new = list(S.constraints)
    for gi, gc in enumerate(TR.constraints):
        for k, sc in enumerate(s_new):
            delta_plus = _const_offset(gc.poly - _normalize_unit(sc.poly))
            delta_minus = _const_offset(gc.poly + _normalize_unit(sc.poly))
            if delta_plus is not None and delta_plus <= 1e-9:
                tr_new[gi] = None
            elif delta_minus is not None:
                glued = abs(delta_minus) <= 1e-6 and not gc.strict
                eps_eff = eps_band + eps_face if glued else eps_face
                if delta_minus > eps_eff:
                    continue
                # gamma = -zeta_hat + delta on this face; push the face to
                # depth eps_eff inside the target (enlarge S, never shrink)
                t = delta_minus + eps_eff
                if t > 0:
                    s_new[k] = Constraint(_normalize_unit(sc.poly) - t,
                                          sc.strict)
                if tr_new[gi] is not None and glued:
                    # exact negation of a safe constraint: the must-jump
                    # band; open it wide into the domain
                    tr_new[gi] = Constraint(gc.poly - eps_band, True)
    tr_keep = tuple(c for c in tr_new if c is not None)
    return (SemiAlgebraicSet(S.dimension, tuple(s_new), S.box),
            SemiAlgebraicSet(TR.dimension, tr_keep, TR.box))


def _prune_redundant(S: SemiAlgebraicSet, rng=None) -> SemiAlgebraicSet:
    """Drop constraints whose face does not meet the rest of the set.

    Such constraints never bind inside the conjunction but their per-face
    boundary blocks would still pin theta >= 0 on the whole variety."""
    rng = np.random.default_rng(0) if rng is None else rng
    cons = list(S.constraints)
    changed = True
    while changed and len(cons) > 1:
        changed = False
        for k, c in enumerate(cons):
            others = SemiAlgebraicSet(
                S.dimension, tuple(cc for i, cc in enumerate(cons) if i != k),
                S.box)
            if len(_face_points(c.poly, others, S.box, rng, n=40)) == 0:
                # face never active; verify the constraint holds throughout
                pts, _ = others.sample(512, rng)
                if len(pts) and bool(np.all(c.poly.evaluate_many(pts) < 0)):
                    cons.pop(k)
                    changed = True
                    break
    return SemiAlgebraicSet(S.dimension, tuple(cons), S.box)


def _relax_faces_in_target(S: SemiAlgebraicSet, TR: SemiAlgebraicSet,
                           eps_face: float, seed: int = 0) -> SemiAlgebraicSet:
    """Relax safe faces that lie (sampled) inside the target closure.

    These are exit-into-target faces: pinning theta >= 0 on them squeezes
    the certificate's recovery window to nothing."""
    rng = np.random.default_rng(seed)
    cons = list(S.constraints)
    for _ in range(2):
        changed = False
        probe = SemiAlgebraicSet(S.dimension, tuple(cons), S.box)
        for k, c in enumerate(cons):
            others = SemiAlgebraicSet(
                S.dimension, tuple(cc for i, cc in enumerate(cons) if i != k),
                S.box)
            pts = _face_points(c.poly, others, probe.box, rng, n=200)
            if len(pts) == 0:
                continue
            gmax = np.full(len(pts), -np.inf)
            for gc in TR.constraints:
                gmax = np.maximum(gmax, gc.poly.evaluate_many(pts))
            if not len(TR.constraints) or not (gmax <= eps_face / 2).all():
                continue  # face not (entirely) inside the target closure
            depth = -float(np.max(gmax))
            t = eps_face - depth
            if t > 0:
                cons[k] = Constraint(_normalize_unit(c.poly) - t, c.strict)
                changed = True
        if not changed:
            break
    return SemiAlgebraicSet(S.dimension, tuple(cons), S.box)


def _face_points(p: Polynomial, others: SemiAlgebraicSet, box, rng,
                 n: int = 200) -> np.ndarray:
    """Points with p = 0 (chord bisection) satisfying the other constraints."""
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    span = hi - lo
    a = rng.uniform(lo - 0.05 * span, hi + 0.05 * span, size=(8 * n, len(lo)))
    b = rng.uniform(lo - 0.05 * span, hi + 0.05 * span, size=(8 * n, len(lo)))
    za, zb = p.evaluate_many(a), p.evaluate_many(b)
    cross = za * zb < 0
    a, b, za = a[cross], b[cross], za[cross]
    if not len(a):
        return np.zeros((0, len(lo)))
    for _ in range(50):
        mid = 0.5 * (a + b)
        zm = p.evaluate_many(mid)
        left = za * zm <= 0
        b[left] = mid[left]
        a[~left] = mid[~left]
        za = np.where(left, za, zm)
    pts = 0.5 * (a + b)
    ok = others.contains_many(pts, tol=1e-9)
    return pts[ok][:n]


def _open_outward(TR: SemiAlgebraicSet, eps: float) -> SemiAlgebraicSet:
    """Open a closed target by the outward epsilon-neighborhood."""
    cons = tuple(c if c.strict else Constraint(c.poly - eps, True)
                 for c in TR.constraints)
    return SemiAlgebraicSet(TR.dimension, cons, TR.box)


# ---------------------------------------------------------------------------
# program builders
# ---------------------------------------------------------------------------


def _normalization_block(dim: int, theta_contribs, theta_deg: int,
                         prefix: str, multipliers: list, blocks: list):
    """theta >= -1 on the normalized box [-1,1]^n.

    The certificate conditions are positively homogeneous in the decision
    variables, so without this the integral objective recedes to -inf
    along theta -> c*theta; bounding theta below fixes the scale and
    leaves the certified set {theta < 0} unchanged."""
    u_deg = max(theta_deg - 2, 0)
    u_deg += u_deg % 2
    ub = monomial_basis(dim, u_deg // 2)
    expr: AffineExpr = {}
    _expr_add_template(expr, "t", theta_contribs, +1.0)
    _expr_add_poly(expr, Polynomial.constant(dim, 1.0))
    for i in range(dim):
        name = f"{prefix}_u_{i}"
        multipliers.append((name, ub))
        box_poly = Polynomial.from_dict(dim, {((i, 2),): 1.0, (): -1.0})
        _expr_add_multiplier(expr, name, ub, dim, box_poly, +1.0)
    blocks.append((f"{prefix}_norm", expr, None))


def _boundary_blocks(dim: int, zetas: list[Polynomial], theta_contribs,
                     mult_deg: int, spec: TemplateSpec, prefix: str,
                     multipliers: list, blocks: list):
    """Emit the theta >= 0 boundary condition for S = {/\\ zeta_j < 0}."""
    mb = monomial_basis(dim, mult_deg // 2)
    if spec.boundary_mode == "verbatim":
        expr: AffineExpr = {}
        _expr_add_template(expr, "t", theta_contribs, +1.0)
        for j, z in enumerate(zetas):
            name = f"{prefix}_s3_{j}"
            multipliers.append((name, mb))
            _expr_add_multiplier(expr, name, mb, dim, z, -1.0)
        blocks.append((f"{prefix}_bnd", expr, None))
        return
    if spec.boundary_mode != "per_face":
        raise ValueError(f"unknown boundary_mode {spec.boundary_mode!r}")
    for j in range(len(zetas)):
        expr = {}
        _expr_add_template(expr, "t", theta_contribs, +1.0)
        name = f"{prefix}_lam_{j}"
        multipliers.append((name, mb))
        _expr_add_multiplier(expr, name, mb, dim, zetas[j], -1.0)
        for j2, z2 in enumerate(zetas):
            if j2 == j:
                continue
            name2 = f"{prefix}_t_{j}_{j2}"
            multipliers.append((name2, mb))
            _expr_add_multiplier(expr, name2, mb, dim, z2, +1.0)
        blocks.append((f"{prefix}_bnd_face{j}", expr, None))


def _finalize_blocks(dim: int, blocks, max_gram_dim: int):
    out = []
    for name, expr, _ in blocks:
        deg = _expr_degree(expr)
        gb = monomial_basis(dim, (deg + 1) // 2)
        if len(gb) > max_gram_dim:
            raise BasisOverflowError(
                f"block {name}: Gram dimension {len(gb)} exceeds {max_gram_dim}")
        out.append((name, expr, gb))
    return out


def build_reach_avoid(S: SemiAlgebraicSet, TR: SemiAlgebraicSet, f: VectorField,
                      spec: TemplateSpec = TemplateSpec()) -> CertificateProgram:
    """Program whose solution theta certifies {theta < 0} as reach-avoid."""
    if S.dimension != f.dimension or TR.dimension != S.dimension:
        raise ValueError("dimension mismatch")
    center, radius, S_y, TR_y, f_y, fs = _to_box_coords(S, f, TR)
    dim = S.dimension
    S_y = _prune_redundant(S_y)
    S_y, TR_y = _align_target(S_y, TR_y, spec.eps_face, spec.eps_band)
    if not TR_y.is_open():
        TR_y = _open_outward(TR_y, spec.eps_target)
    S_y = _relax_faces_in_target(S_y, TR_y, spec.eps_face)
    zetas = [c.poly for c in S_y.constraints]
    gammas = [c.poly for c in TR_y.constraints]

    theta_basis = monomial_basis(dim, spec.theta_degree)
    psi_basis = [m for m in monomial_basis(dim, spec.psi_degree) if m]  # no const
    theta_direct = [_mono_poly(dim, m) for m in theta_basis]
    theta_lie = _grad_dot_f(dim, theta_basis, f_y)
    psi_lie = _grad_dot_f(dim, psi_basis, f_y)
    keep = [i for i, p in enumerate(psi_lie) if not p.is_zero()]
    psi_basis = [psi_basis[i] for i in keep]
    psi_lie = [psi_lie[i] for i in keep]
    if not gammas:
        # target covers the whole safe set: no flow or progress blocks remain
        psi_basis, psi_lie = [], []

    mult_deg = spec.resolved_mult()
    mult_deg_h = spec.resolved_mult_h()
    mb = monomial_basis(dim, mult_deg // 2)
    mbh = monomial_basis(dim, mult_deg_h // 2)

    multipliers: list[tuple[str, list[Monomial]]] = []
    blocks: list = []

    s1 = [f"s1_{j}" for j in range(len(zetas))]
    s2 = [f"s2_{j}" for j in range(len(zetas))]
    for name in s1 + s2:
        multipliers.append((name, mb))

    for k, gam in enumerate(gammas):
        expr_a: AffineExpr = {}
        _expr_add_template(expr_a, "t", theta_lie, -1.0)
        for j, z in enumerate(zetas):
            _expr_add_multiplier(expr_a, s1[j], mb, dim, z, +1.0)
        hname = f"h1_{k}"
        multipliers.append((hname, mbh))
        _expr_add_multiplier(expr_a, hname, mbh, dim, gam, -1.0)
        blocks.append((f"ra_a_k{k}", expr_a, None))

        expr_b: AffineExpr = {}
        _expr_add_template(expr_b, "t", theta_direct, +1.0)
        _expr_add_template(expr_b, "p", psi_lie, -1.0)
        for j, z in enumerate(zetas):
            _expr_add_multiplier(expr_b, s2[j], mb, dim, z, +1.0)
        hname = f"h2_{k}"
        multipliers.append((hname, mbh))
        _expr_add_multiplier(expr_b, hname, mbh, dim, gam, -1.0)
        blocks.append((f"ra_b_k{k}", expr_b, None))

    _boundary_blocks(dim, zetas, theta_direct, mult_deg, spec, "ra",
                     multipliers, blocks)
    _normalization_block(dim, theta_direct, spec.theta_degree, "ra",
                         multipliers, blocks)
    blocks = _finalize_blocks(dim, blocks, spec.max_gram_dim)

    return CertificateProgram(
        "reach_avoid", dim, center, radius, fs, theta_basis, psi_basis,
        multipliers, blocks, _objective_vector(theta_basis, dim), spec,
        S_y, TR_y, f_y)


def build_invariance(S: SemiAlgebraicSet, f: VectorField,
                     spec: TemplateSpec = TemplateSpec()) -> CertificateProgram:
    """Program whose solution theta certifies {theta < 0} as an invariant:
    theta never increases along f on S and is nonnegative on the boundary,
    so certified trajectories cannot leave S."""
    if S.dimension != f.dimension:
        raise ValueError("dimension mismatch")
    center, radius, S_y, _, f_y, fs = _to_box_coords(S, f, None)
    S_y = _prune_redundant(S_y)
    dim = S.dimension
    zetas = [c.poly for c in S_y.constraints]

    theta_basis = monomial_basis(dim, spec.theta_degree)
    theta_direct = [_mono_poly(dim, m) for m in theta_basis]
    theta_lie = _grad_dot_f(dim, theta_basis, f_y)
    mult_deg = spec.resolved_mult()
    mb = monomial_basis(dim, mult_deg // 2)

    multipliers: list[tuple[str, list[Monomial]]] = []
    blocks: list = []

    expr_a: AffineExpr = {}
    _expr_add_template(expr_a, "t", theta_lie, -1.0)
    for j, z in enumerate(zetas):
        name = f"s1_{j}"
        multipliers.append((name, mb))
        _expr_add_multiplier(expr_a, name, mb, dim, z, +1.0)
    blocks.append(("inv_a", expr_a, None))

    _boundary_blocks(dim, zetas, theta_direct, mult_deg, spec, "inv",
                     multipliers, blocks)
    _normalization_block(dim, theta_direct, spec.theta_degree, "inv",
                         multipliers, blocks)
    blocks = _finalize_blocks(dim, blocks, spec.max_gram_dim)

    return CertificateProgram(
        "invariance", dim, center, radius, fs, theta_basis, [], multipliers,
        blocks, _objective_vector(theta_basis, dim), spec, S_y, None, f_y)


# ---------------------------------------------------------------------------
# lowering to conic form
# ---------------------------------------------------------------------------


def _psd_index(prog: CertificateProgram):
    """Variable key -> ('f', idx) or ('b', blk, i, j) mapping."""
    nt = len(prog.theta_basis)
    blk_of: dict[str, int] = {}
    dims: list[int] = []
    for name, basis in prog.multipliers:
        blk_of[name] = len(dims)
        dims.append(len(basis))
    for _ in prog.blocks:
        dims.append(0)  # placeholder, filled by caller

    def key_col(key):
        if key == CONST_KEY:
            return None
        if key[0] == "t":
            return ("f", key[1])
        if key[0] == "p":
            return ("f", nt + key[1])
        name, i, j = key
        return ("b", blk_of[name], i, j)

    return len(prog.multipliers), key_col


def lower_to_conic(prog: CertificateProgram) -> ConicProblem:
    """Each SOS block becomes a PSD Gram variable with coefficient-matching
    equality rows against the block's affine expression."""
    gram_start, key_col = _psd_index(prog)
    dims = [len(b) for _, b in prog.multipliers] + \
           [len(gb) for _, _, gb in prog.blocks]
    nt, npsi = len(prog.theta_basis), len(prog.psi_basis)
    nfree = nt + npsi

    rows: list[tuple] = []
    rhs: list[float] = []
    for bi, (name, expr, gb) in enumerate(prog.blocks):
        gblk = gram_start + bi
        support: dict[Monomial, list] = {}
        for i in range(len(gb)):
            for j in range(i, len(gb)):
                m = monomial_mul(gb[i], gb[j])
                support.setdefault(m, []).append((i, j))
        for m in expr:
            support.setdefault(m, [])
        for m, pairs in sorted(support.items(),
                               key=lambda kv: (monomial_degree(kv[0]), kv[0])):
            entries: list = []
            const = 0.0
            for key, coef in expr.get(m, {}).items():
                if key == CONST_KEY:
                    const += coef
                    continue
                col = key_col(key)
                if col[0] == "f":
                    entries.append(("f", col[1], coef))
                else:
                    entries.append(("b", col[1], col[2], col[3], coef))
            for (i, j) in pairs:
                entries.append(("b", gblk, i, j, -1.0 if i == j else -2.0))
            if not entries:
                if abs(const) > 1e-12:
                    raise ValueError(
                        f"block {name}: monomial {m} structurally infeasible")
                continue
            rows.append(tuple(entries))
            rhs.append(-const)

    obj = np.zeros(nfree)
    obj[:nt] = prog.objective
    return ConicProblem(nfree, tuple(dims), tuple(rows), tuple(rhs),
                        tuple(obj), (), comment=f"resetctl {prog.kind} program")


# ---------------------------------------------------------------------------
# decoding and post-check
# ---------------------------------------------------------------------------


def _from_normalized(prog: CertificateProgram, p: Polynomial) -> Polynomial:
    """Map a polynomial in y back to original x coordinates."""
    c, r = prog.center, prog.radius
    return p.affine_substitute(tuple(-ci / ri for ci, ri in zip(c, r)),
                               tuple(1.0 / ri for ri in r))


def decode(prog: CertificateProgram, sol: ConicSolution,
           n_samples: int = 10000, seed: int = 0) -> Certificate:
    """Reconstruct certificate polynomials and run the sampling post-check.

    The post-check runs in normalized coordinates against the actual
    program sets; violations are reported on that unit scale."""
    if not sol.ok:
        raise InfeasibleAtDegree(prog.spec.theta_degree, sol.status,
                                 str(sol.solver_info))
    nt = len(prog.theta_basis)
    free = sol.free_values
    theta_y = Polynomial.from_dict(
        prog.dimension, {m: free[i] for i, m in enumerate(prog.theta_basis)})
    psi_y = Polynomial.from_dict(
        prog.dimension, {m: free[nt + i] for i, m in enumerate(prog.psi_basis)})
    theta = _from_normalized(prog, theta_y)
    # undo the time rescaling so <grad psi, f> <= theta holds for the
    # original field
    psi = (_from_normalized(prog, psi_y) * (1.0 / prog.time_scale)
           if prog.kind == "reach_avoid" else None)

    mults: dict[str, Polynomial] = {}
    grams: dict[str, np.ndarray] = {}
    mult_grams: dict[str, np.ndarray] = {}
    for k, (name, basis) in enumerate(prog.multipliers):
        G = sol.blocks[k]
        grams[name] = G
        mult_grams[name] = G
        d: dict[Monomial, float] = {}
        for i in range(len(basis)):
            for j in range(len(basis)):
                m = monomial_mul(basis[i], basis[j])
                d[m] = d.get(m, 0.0) + G[i, j]
        mults[name] = Polynomial.from_dict(prog.dimension, d)
    gram_recon = 0.0
    for bi, (name, expr, gb) in enumerate(prog.blocks):
        G = sol.blocks[len(prog.multipliers) + bi]
        grams[f"block:{name}"] = G
        gram_recon = max(gram_recon,
                         _gram_residual(prog, expr, gb, G, free, mult_grams))

    report = certificate_postcheck(
        theta_y, psi_y if prog.kind == "reach_avoid" else None,
        prog.safe_y, prog.target_y, prog.f_y, kind=prog.kind,
        n_samples=n_samples, seed=seed)
    report["gram_reconstruction"] = gram_recon
    scale = max(1.0, theta_y.max_abs_coeff())
    tol = prog.spec.eps_post * scale
    accepted = report["max_violation"] <= tol and gram_recon <= 1e-6 * scale
    report["tolerance"] = tol

    # value scale of theta over the box, for margins in original coordinates
    rng = np.random.default_rng(seed)
    ybox = rng.uniform(-1.0, 1.0, size=(2048, prog.dimension))
    vscale = float(np.max(np.abs(theta_y.evaluate_many(ybox))))
    return Certificate(theta, psi, mults, grams, sol.status, sol.objective,
                       accepted, report,
                       (prog.spec.theta_degree, prog.spec.psi_degree,
                        prog.spec.resolved_mult()), max(vscale, 1e-9))


def _gram_residual(prog, expr, gb, G, free, mult_grams) -> float:
    """Coefficient-wise |expr(solution) - z^T G z| in normalized coords."""
    nt = len(prog.theta_basis)
    vals: dict[Monomial, float] = {}
    for m, slot in expr.items():
        acc = 0.0
        for key, coef in slot.items():
            if key == CONST_KEY:
                acc += coef
            elif key[0] == "t":
                acc += coef * free[key[1]]
            elif key[0] == "p":
                acc += coef * free[nt + key[1]]
            else:
                name, i, j = key
                acc += coef * mult_grams[name][i, j]
        vals[m] = acc
    res = 0.0
    zz: dict[Monomial, float] = {}
    for i in range(len(gb)):
        for j in range(len(gb)):
            m = monomial_mul(gb[i], gb[j])
            zz[m] = zz.get(m, 0.0) + G[i, j]
    for m in set(vals) | set(zz):
        res = max(res, abs(vals.get(m, 0.0) - zz.get(m, 0.0)))
    return res


def sample_boundary(S: SemiAlgebraicSet, n: int, rng,
                    face_tol: float = 1e-9) -> np.ndarray:
    """Sample points on the boundary of S by bisecting random chords onto
    each face and keeping those satisfying the other constraints."""
    if S.box is None or not S.constraints:
        return np.zeros((0, S.dimension))
    out = []
    per_face = max(n // max(len(S.constraints), 1), 64)
    for j, cj in enumerate(S.constraints):
        others = SemiAlgebraicSet(
            S.dimension,
            tuple(c for i, c in enumerate(S.constraints) if i != j), S.box)
        pts = _face_points(cj.poly, others, S.box, rng, n=per_face)
        if len(pts):
            out.append(pts)
    if not out:
        return np.zeros((0, S.dimension))
    return np.concatenate(out)[:n]


def certificate_postcheck(theta: Polynomial, psi: Optional[Polynomial],
                          S: SemiAlgebraicSet, TR: Optional[SemiAlgebraicSet],
                          f: VectorField, kind: str = "reach_avoid",
                          n_samples: int = 10000, seed: int = 0) -> dict:
    """Sample-based re-evaluation of the certificate conditions: theta
    non-increasing along f on S (minus TR), the psi progress inequality
    <grad psi, f> <= theta there (reach-avoid), theta >= 0 on sampled
    boundary points of S."""
    rng = np.random.default_rng(seed)
    if S.box is None:
        raise ValueError("post-check requires a bounded safe set")
    lo = np.array([b[0] for b in S.box])
    hi = np.array([b[1] for b in S.box])
    dim = S.dimension

    grad_theta_f = sum((theta.differentiate(i) * f.components[i]
                        for i in range(dim)), Polynomial.zero(dim))
    grad_psi_f = None
    if psi is not None:
        grad_psi_f = sum((psi.differentiate(i) * f.components[i]
                          for i in range(dim)), Polynomial.zero(dim))

    pts = rng.uniform(lo, hi, size=(max(4 * n_samples, 4096), dim))
    in_S = S.contains_many(pts)
    if TR is not None:
        in_TR = TR.contains_many(pts)
    else:
        in_TR = np.zeros(len(pts), dtype=bool)
    flow_pts = pts[in_S & ~in_TR][:n_samples]

    v_flow = 0.0
    v_progress = 0.0
    if len(flow_pts):
        v_flow = max(0.0, float(np.max(grad_theta_f.evaluate_many(flow_pts),
                                       initial=-np.inf)))
        if kind == "reach_avoid" and grad_psi_f is not None and TR is not None:
            lhs = (theta.evaluate_many(flow_pts)
                   - grad_psi_f.evaluate_many(flow_pts))
            v_progress = max(0.0, float(np.max(-lhs, initial=0.0)))

    band_pts = sample_boundary(S, n_samples, rng)
    v_boundary = 0.0
    if len(band_pts):
        v_boundary = max(0.0, float(np.max(-theta.evaluate_many(band_pts),
                                           initial=0.0)))

    max_v = max(v_flow, v_progress, v_boundary)
    return {"flow_violation": v_flow, "progress_violation": v_progress,
            "boundary_violation": v_boundary, "max_violation": max_v,
            "n_flow_samples": int(len(flow_pts)),
            "n_boundary_samples": int(len(band_pts))}


# ---------------------------------------------------------------------------
# escalation driver
# ---------------------------------------------------------------------------


@dataclass
class SolveOptions:
    degree_cap: int = 10
    tolerances: ToleranceSet = field(default_factory=ToleranceSet)
    emptiness_budget: int = 4000
    kappa: float = 1e-3
    postcheck_samples: int = 10000
    seed: int = 0
    dump_dir: Optional[str] = None
    dump_tag: str = "prog"


def solve_certificate(kind: str, S: SemiAlgebraicSet, f: VectorField,
                      TR: Optional[SemiAlgebraicSet], spec: TemplateSpec,
                      opts: SolveOptions = SolveOptions(),
                      goal_set: Optional[SemiAlgebraicSet] = None
                      ) -> Optional[Certificate]:
    """Degree-escalation loop.

    Escalates until an accepted certificate's region meets `goal_set`
    (when given) or is merely nonempty; returns the best certificate found
    (goal-meeting > nonempty > accepted-empty > None)."""
    from .semialg import is_probably_empty

    fallback_empty: Optional[Certificate] = None
    fallback_nonempty: Optional[Certificate] = None
    cur = spec
    while cur.theta_degree <= opts.degree_cap:
        cert = None
        try:
            if kind == "reach_avoid":
                prog = build_reach_avoid(S, TR, f, cur)
            else:
                prog = build_invariance(S, f, cur)
            conic = lower_to_conic(prog)
            if opts.dump_dir:
                os.makedirs(opts.dump_dir, exist_ok=True)
                sdpbackend.write_sdpa(conic, os.path.join(
                    opts.dump_dir, f"{opts.dump_tag}_d{cur.theta_degree}.dat-s"))
            sol = sdpbackend.solve(conic, opts.tolerances)
            cert = decode(prog, sol, n_samples=opts.postcheck_samples,
                          seed=opts.seed)
        except (InfeasibleAtDegree, BasisOverflowError) as exc:
            logger.info("degree %d: %s", cur.theta_degree, exc)
        if cert is not None and cert.accepted:
            region = cert.region(S, opts.kappa)
            nonempty = not is_probably_empty(region, opts.emptiness_budget,
                                             opts.seed).empty
            if nonempty:
                if goal_set is None:
                    return cert
                hit = not is_probably_empty(region.intersect(goal_set),
                                            opts.emptiness_budget,
                                            opts.seed).empty
                if hit:
                    return cert
                if fallback_nonempty is None:
                    fallback_nonempty = cert
            elif fallback_empty is None:
                fallback_empty = cert
        cur = replace(cur, theta_degree=cur.theta_degree + 2,
                      psi_degree=cur.psi_degree + 2,
                      mult_degree=cur.resolved_mult() + 2,
                      mult_degree_h=cur.resolved_mult_h() + 2)
    return fallback_nonempty or fallback_empty
