"""Independent validation oracles: an exact 1-D interval reach-avoid
oracle, trace batteries over the simulator, and the certificate
post-check, all feeding a machine-readable report."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .automaton import HybridAutomaton, JumpPolicy, simulate
from .poly import Polynomial
from .semialg import SemiAlgebraicSet
from . import sosprog

REPORT_SCHEMA = 1

# Interval sets are lists of closed [lo, hi] pairs (lo <= hi), kept sorted
# and disjoint.  Endpoint open/closed distinctions are below the oracle's
# resolution by construction; results are closures.
Interval = tuple[float, float]
_INF = float("inf")


def normalize_intervals(ivs: Sequence[Sequence[float]],
                        merge_tol: float = 0.0) -> list[Interval]:
    ivs = sorted((float(a), float(b)) for a, b in ivs if a <= b)
    out: list[Interval] = []
    for a, b in ivs:
        if out and a <= out[-1][1] + merge_tol:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def intersect_intervals(a: Sequence[Interval], b: Sequence[Interval]) -> list[Interval]:
    out = []
    for (a0, a1) in a:
        for (b0, b1) in b:
            lo, hi = max(a0, b0), min(a1, b1)
            if lo <= hi:
                out.append((lo, hi))
    return normalize_intervals(out)


def complement_intervals(a: Sequence[Interval],
                         lo: float = -_INF, hi: float = _INF) -> list[Interval]:
    out = []
    cur = lo
    for (a0, a1) in normalize_intervals(a):
        if a0 > cur:
            out.append((cur, a0))
        cur = max(cur, a1)
    if cur < hi:
        out.append((cur, hi))
    return out


def union_intervals(a: Sequence[Interval], b: Sequence[Interval]) -> list[Interval]:
    return normalize_intervals(list(a) + list(b))


def subtract_intervals(a: Sequence[Interval], b: Sequence[Interval],
                       degenerate_tol: float = 1e-12) -> list[Interval]:
    out = intersect_intervals(a, complement_intervals(b))
    # closures leave measure-zero slivers at shared endpoints
    return [(x, y) for x, y in out if y - x > degenerate_tol]


def set_to_intervals(s: SemiAlgebraicSet, lo: float, hi: float,
                     tol: float = 1e-12) -> list[Interval]:
    """Solution intervals of a 1-D semi-algebraic set within [lo, hi].

    Constraint roots come from the companion-matrix solver; the sign on
    each root gap is sampled at its midpoint.  Closures are returned."""
    if s.dimension != 1:
        raise ValueError("interval conversion requires dimension 1")
    pieces = [[(lo, hi)]]
    for c in s.constraints:
        coeffs = [0.0] * (c.poly.degree + 1)
        for m, v in c.poly.terms:
            coeffs[m[0][1] if m else 0] = v
        arr = np.array(coeffs[::-1])
        if len(arr) == 1:
            sat = [(lo, hi)] if arr[0] <= 0 else []
            pieces.append(sat)
            continue
        roots = np.roots(arr)
        real = sorted(float(r.real) for r in roots
                      if abs(r.imag) <= 1e-9 * max(1.0, abs(r.real)))
        cuts = [lo] + [r for r in real if lo < r < hi] + [hi]
        sat = []
        for a, b in zip(cuts, cuts[1:]):
            mid = 0.5 * (a + b)
            if c.poly.evaluate([mid]) <= tol:
                sat.append((a, b))
        pieces.append(normalize_intervals(sat, merge_tol=1e-12))
    out = pieces[0]
    for p in pieces[1:]:
        out = intersect_intervals(out, p)
    return out


class OracleError(ValueError):
    """The 1-D oracle refuses fields that change sign on the safe set."""


def oracle_ra_1d(f_rate, SD: Sequence[Interval], TR: Sequence[Interval],
                 samples: int = 512) -> list[Interval]:
    """Exact reach-avoid set for 1-D sign-definite fields, as closures.

    Points of SD reach TR (entering it, or exiting SD directly into a TR
    point on the boundary) while staying inside SD beforehand.  Computed
    by an interval sweep along the flow direction."""
    SD = normalize_intervals(SD)
    TR = normalize_intervals(TR)
    if isinstance(f_rate, (int, float)):
        sign = float(np.sign(f_rate))
        if sign == 0:
            raise OracleError("zero rate field")
    else:
        signs = set()
        for (a, b) in SD:
            xs = np.linspace(a, b, samples).reshape(-1, 1)
            v = f_rate.evaluate_many(xs)
            signs.update(np.sign(v[np.abs(v) > 0]).astype(int).tolist())
        if len(signs) != 1:
            raise OracleError(f"field changes sign on SD (signs {signs})")
        sign = float(signs.pop())

    out: list[Interval] = []
    for (a, b) in SD:
        hits = intersect_intervals([(a, b)], TR)
        if not hits:
            continue
        if sign > 0:
            reach_limit = max(h[1] for h in hits)
            out.append((a, min(reach_limit, b)))
        else:
            reach_limit = min(h[0] for h in hits)
            out.append((max(reach_limit, a), b))
    return normalize_intervals(out)


def must_jump_target_1d(guard: Sequence[Interval], dom: Sequence[Interval],
                        target_mode: str = "guard_and_dom_complement",
                        lo: float = -1e9, hi: float = 1e9) -> list[Interval]:
    if target_mode == "guard":
        return normalize_intervals(guard)
    return intersect_intervals(guard, complement_intervals(dom, lo, hi))


def intervals_close(a: Sequence[Interval], b: Sequence[Interval],
                    tol: float = 1e-9) -> bool:
    a, b = normalize_intervals(a), normalize_intervals(b)
    if len(a) != len(b):
        return False
    return all(abs(x0 - y0) <= tol and abs(x1 - y1) <= tol
               for (x0, x1), (y0, y1) in zip(a, b))


# ---------------------------------------------------------------------------
# trace batteries
# ---------------------------------------------------------------------------


def default_policies(seed: int = 0, liveness: bool = False) -> list[JumpPolicy]:
    pols = [JumpPolicy.eager(), JumpPolicy.delayed(0.25),
            JumpPolicy.delayed(0.5), JumpPolicy.delayed(1.0),
            JumpPolicy.adversarial_random(seed + 1),
            JumpPolicy.adversarial_random(seed + 2)]
    if not liveness:
        # never jumping unless forced is a real behavior for safety
        pols.append(JumpPolicy.reluctant())
    return pols


@dataclass
class ValidationReport:
    schema: int = REPORT_SCHEMA
    n_traces: int = 0
    tags: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    safety_ok: bool = True
    liveness_ok: bool = True
    liveness_fraction: float = 0.0
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "schema": self.schema,
            "n_traces": self.n_traces,
            "tags": self.tags,
            "violations": self.violations,
            "safety_ok": self.safety_ok,
            "liveness_ok": self.liveness_ok,
            "liveness_fraction": self.liveness_fraction,
            "seed": self.seed,
        }, indent=2)


def trace_battery(ha: HybridAutomaton, n: int = 500,
                  policies: Optional[Sequence[JumpPolicy]] = None,
                  horizon: float = 200.0, max_jumps: int = 50,
                  seed: int = 0, step: float = 1e-2,
                  liveness: bool = False,
                  blocked_edges: Sequence[str] = ()) -> ValidationReport:
    """Simulate n traces from the automaton's initial sets across jump
    policies; count termination tags and collect counterexamples."""
    rng = np.random.default_rng(seed)
    if policies is None:
        policies = default_policies(seed, liveness=liveness)

    starts: list[tuple[str, np.ndarray]] = []
    per_mode: list[tuple[str, SemiAlgebraicSet]] = []
    for m in ha.modes:
        for piece in m.init:
            per_mode.append((m.id, piece))
    if not per_mode:
        rep = ValidationReport(seed=seed)
        rep.liveness_ok = False
        rep.violations.append({"kind": "no_initial_states"})
        return rep
    quota = max(1, n // len(per_mode))
    for mid, piece in per_mode:
        if piece.box is None:
            continue
        pts, _ = piece.sample(quota, rng)
        for p in pts:
            starts.append((mid, p))
    starts = starts[:n]

    report = ValidationReport(seed=seed)
    blocked = set(blocked_edges)
    for k, (mid, x0) in enumerate(starts):
        pol = policies[k % len(policies)]
        tr = simulate(ha, (mid, x0), pol, horizon=horizon,
                      max_jumps=max_jumps, step=step, rng_seed=seed + k)
        report.n_traces += 1
        report.tags[tr.tag] = report.tags.get(tr.tag, 0) + 1
        fired_blocked = [j.edge for j in tr.jumps if j.edge in blocked]
        if fired_blocked:
            report.violations.append({
                "kind": "blocked_edge_fired", "edges": fired_blocked,
                "start_mode": mid, "start": list(map(float, x0)),
                "policy": pol.describe()})
        if tr.tag == "left_safe":
            report.safety_ok = False
            report.violations.append({
                "kind": "safety", "start_mode": mid,
                "start": list(map(float, x0)), "policy": pol.describe(),
                "info": tr.info})
        if liveness and tr.tag != "reached_target":
            report.liveness_ok = False
            report.violations.append({
                "kind": "liveness", "tag": tr.tag, "start_mode": mid,
                "start": list(map(float, x0)), "policy": pol.describe(),
                "info": tr.info})
    if report.n_traces:
        report.liveness_fraction = (report.tags.get("reached_target", 0)
                                    / report.n_traces)
    if report.violations:
        report.safety_ok = report.safety_ok and not any(
            v["kind"] == "safety" for v in report.violations)
    return report


def certificate_postcheck(cert, S: SemiAlgebraicSet,
                          TR: Optional[SemiAlgebraicSet], f,
                          n_samples: int = 10000, seed: int = 0) -> dict:
    """Re-evaluate the certificate conditions pointwise (original
    coordinates); `cert` may be a Certificate or a bare theta Polynomial."""
    theta = cert.theta if hasattr(cert, "theta") else cert
    psi = getattr(cert, "psi", None)
    kind = "reach_avoid" if TR is not None else "invariance"
    report = sosprog.certificate_postcheck(theta, psi, S, TR, f, kind=kind,
                                           n_samples=n_samples, seed=seed)
    scale = max(1.0, getattr(cert, "value_scale", 1.0))
    report["accepted"] = report["max_violation"] <= 1e-6 * scale
    return report
