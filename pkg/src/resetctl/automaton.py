"""Hybrid automaton data model, file format, and trace simulator.

The simulator is the package's independent validation oracle: fixed-step
RK4 inside each mode domain, event times refined by bisection, jump
nondeterminism resolved by an explicit JumpPolicy.  Traces terminate with
one of: reached_target, left_safe, blocked, horizon, zeno_suspected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .poly import Polynomial, VectorField, format_polynomial, parse_polynomial
from .semialg import SemiAlgebraicSet

DOM_TOL = 1e-7          # membership slack at domain boundaries
EVENT_TIME_TOL = 1e-9   # bisection resolution for crossing times


@dataclass(frozen=True)
class ResetMap:
    kind: str  # "identity" | "affine" | "set_valued"
    matrix: Optional[tuple[tuple[float, ...], ...]] = None
    offset: Optional[tuple[float, ...]] = None
    target: Optional[SemiAlgebraicSet] = None
    seed: int = 0
    witness: Optional[tuple[float, ...]] = None

    @staticmethod
    def identity() -> "ResetMap":
        return ResetMap("identity")

    @staticmethod
    def affine(A: Sequence[Sequence[float]], b: Sequence[float]) -> "ResetMap":
        return ResetMap("affine", tuple(tuple(float(v) for v in row) for row in A),
                        tuple(float(v) for v in b))

    @staticmethod
    def set_valued(target: SemiAlgebraicSet, seed: int = 0,
                   witness: Optional[Sequence[float]] = None) -> "ResetMap":
        w = tuple(float(v) for v in witness) if witness is not None else None
        return ResetMap("set_valued", target=target, seed=seed, witness=w)

    def apply(self, x: np.ndarray, rng=None) -> np.ndarray:
        if self.kind == "identity":
            return np.array(x, dtype=float)
        if self.kind == "affine":
            A = np.array(self.matrix)
            b = np.array(self.offset)
            return A @ np.asarray(x, dtype=float) + b
        if self.witness is not None:
            return np.array(self.witness, dtype=float)
        if self.target is not None and self.target.box is not None:
            pts, _ = self.target.sample(1, rng if rng is not None else self.seed)
            if len(pts):
                return pts[0]
        raise ValueError("set-valued reset without witness or sampleable target")


@dataclass(frozen=True)
class Mode:
    id: str
    field: VectorField
    dom: SemiAlgebraicSet
    init: tuple[SemiAlgebraicSet, ...]  # union of conjunctive pieces
    safe: SemiAlgebraicSet
    target: Optional[SemiAlgebraicSet] = None

    @property
    def dimension(self) -> int:
        return self.field.dimension


@dataclass(frozen=True)
class Edge:
    source: str
    dest: str
    guard: SemiAlgebraicSet
    reset: ResetMap
    id: str = ""


@dataclass(frozen=True)
class HybridAutomaton:
    dimension: int
    variables: tuple[str, ...]
    modes: tuple[Mode, ...]
    edges: tuple[Edge, ...]
    box: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        ids = [m.id for m in self.modes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate mode ids")
        known = set(ids)
        for e in self.edges:
            if e.source not in known or e.dest not in known:
                raise ValueError(f"edge {e.source}->{e.dest} references unknown mode")

    def mode(self, q: str) -> Mode:
        for m in self.modes:
            if m.id == q:
                return m
        raise KeyError(f"unknown mode {q!r}")

    def outgoing(self, q: str) -> list[Edge]:
        self.mode(q)
        return [e for e in self.edges if e.source == q]

    def incoming(self, q: str) -> list[Edge]:
        self.mode(q)
        return [e for e in self.edges if e.dest == q]

    def post(self, q: str) -> list[str]:
        out = []
        for e in self.outgoing(q):
            if e.dest not in out:
                out.append(e.dest)
        return out

    def pre(self, q: str) -> list[str]:
        out = []
        for e in self.incoming(q):
            if e.source not in out:
                out.append(e.source)
        return out

    def with_controller(self, init_pieces: dict[str, Sequence[SemiAlgebraicSet]],
                        resets: dict[str, ResetMap]) -> "HybridAutomaton":
        """Refined automaton: new initial sets and reset maps, everything
        else untouched."""
        modes = tuple(replace(m, init=tuple(init_pieces.get(m.id, m.init)))
                      for m in self.modes)
        edges = tuple(replace(e, reset=resets.get(e.id, e.reset))
                      for e in self.edges)
        return replace(self, modes=modes, edges=edges)


def post(ha: HybridAutomaton, q: str) -> list[str]:
    return ha.post(q)


def pre(ha: HybridAutomaton, q: str) -> list[str]:
    return ha.pre(q)


# ---------------------------------------------------------------------------
# file format: JSON-shaped, canonical key order, canonical polynomial text.
# Mode init may be a single set object or a list of set objects (union).
# ---------------------------------------------------------------------------


def _set_to_json(s: Optional[SemiAlgebraicSet]):
    if s is None:
        return None
    out = {"constraints": s.to_strings()}
    out["box"] = [[lo, hi] for lo, hi in s.box] if s.box is not None else None
    return out


def _set_from_json(d, dim: int) -> SemiAlgebraicSet:
    if not isinstance(d, dict) or "constraints" not in d:
        raise ValueError("set object must have a 'constraints' list")
    return SemiAlgebraicSet.from_strings(dim, d["constraints"], d.get("box"))


def _reset_to_json(r: ResetMap):
    if r.kind == "identity":
        return {"kind": "identity"}
    if r.kind == "affine":
        return {"kind": "affine", "A": [list(row) for row in r.matrix],
                "b": list(r.offset)}
    out = {"kind": "set_valued", "target": _set_to_json(r.target),
           "seed": r.seed}
    out["witness"] = list(r.witness) if r.witness is not None else None
    return out


def _reset_from_json(d, dim: int) -> ResetMap:
    kind = d.get("kind")
    if kind == "identity":
        return ResetMap.identity()
    if kind == "affine":
        return ResetMap.affine(d["A"], d["b"])
    if kind == "set_valued":
        return ResetMap.set_valued(_set_from_json(d["target"], dim),
                                   d.get("seed", 0), d.get("witness"))
    raise ValueError(f"unknown reset kind {kind!r}")


def to_json(ha: HybridAutomaton) -> str:
    doc = {
        "format": "resetctl-ha",
        "version": 1,
        "variables": list(ha.variables),
        "bounding_box": ([[lo, hi] for lo, hi in ha.box]
                         if ha.box is not None else None),
        "modes": [
            {
                "id": m.id,
                "field": [format_polynomial(p) for p in m.field.components],
                "dom": _set_to_json(m.dom),
                "init": ([_set_to_json(s) for s in m.init]
                         if len(m.init) != 1 else _set_to_json(m.init[0])),
                "safe": _set_to_json(m.safe),
                "target": _set_to_json(m.target),
            }
            for m in ha.modes
        ],
        "edges": [
            {
                "id": e.id,
                "from": e.source,
                "to": e.dest,
                "guard": _set_to_json(e.guard),
                "reset": _reset_to_json(e.reset),
            }
            for e in ha.edges
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def from_json(text: str) -> HybridAutomaton:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"parse error at line {exc.lineno}, column {exc.colno}: "
                         f"{exc.msg}") from exc
    if doc.get("format") != "resetctl-ha":
        raise ValueError("not a resetctl-ha document")
    variables = tuple(doc["variables"])
    dim = len(variables)
    box = (tuple((float(lo), float(hi)) for lo, hi in doc["bounding_box"])
           if doc.get("bounding_box") else None)
    modes = []
    for md in doc["modes"]:
        init_raw = md.get("init")
        if isinstance(init_raw, list):
            init = tuple(_set_from_json(d, dim) for d in init_raw)
        elif init_raw is None:
            init = ()
        else:
            init = (_set_from_json(init_raw, dim),)
        modes.append(Mode(
            id=md["id"],
            field=VectorField.parse(dim, md["field"]),
            dom=_set_from_json(md["dom"], dim),
            init=init,
            safe=_set_from_json(md["safe"], dim),
            target=_set_from_json(md["target"], dim) if md.get("target") else None,
        ))
    edges = []
    for k, ed in enumerate(doc["edges"]):
        edges.append(Edge(
            source=ed["from"], dest=ed["to"],
            guard=_set_from_json(ed["guard"], dim),
            reset=_reset_from_json(ed["reset"], dim),
            id=ed.get("id") or f"e{k}",
        ))
    return HybridAutomaton(dim, variables, tuple(modes), tuple(edges), box)


def load(path: str) -> HybridAutomaton:
    with open(path) as fh:
        return from_json(fh.read())


def save(ha: HybridAutomaton, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(to_json(ha))


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JumpPolicy:
    """Resolves may-jump nondeterminism.

    kind "eager": jump the moment a guard is enabled; "delayed": jump after
    fraction u of the guard dwell (u = 1 waits for the last admissible
    moment, which is the domain exit when the dwell runs into it);
    "random": a seeded random fraction and edge choice per encounter;
    "reluctant": jump only when the domain forces it.
    """

    kind: str = "eager"
    u: float = 0.0
    seed: int = 0

    @staticmethod
    def eager() -> "JumpPolicy":
        return JumpPolicy("eager")

    @staticmethod
    def delayed(u: float) -> "JumpPolicy":
        return JumpPolicy("delayed", u=float(u))

    @staticmethod
    def adversarial_random(seed: int) -> "JumpPolicy":
        return JumpPolicy("random", seed=seed)

    @staticmethod
    def reluctant() -> "JumpPolicy":
        return JumpPolicy("reluctant")

    def describe(self) -> str:
        if self.kind == "delayed":
            return f"delayed({self.u})"
        if self.kind == "random":
            return f"random({self.seed})"
        return self.kind


@dataclass
class TraceSegment:
    mode: str
    t0: float
    t1: float
    states: np.ndarray  # sampled path, includes both endpoints


@dataclass
class TraceJump:
    edge: str
    time: float
    state_before: tuple[float, ...]
    state_after: tuple[float, ...]


@dataclass
class Trace:
    segments: list[TraceSegment]
    jumps: list[TraceJump]
    tag: str
    info: str = ""

    @property
    def total_time(self) -> float:
        return sum(s.t1 - s.t0 for s in self.segments)

    def audit(self, ha: HybridAutomaton, guard_tol: float = 1e-6) -> list[str]:
        """Check the trace against its own invariants; returns violations."""
        problems = []
        for a, b in zip(self.segments, self.segments[1:]):
            if b.t0 < a.t1 - 1e-12:
                problems.append(f"segment times not chained at t={a.t1}")
        for j in self.jumps:
            edge = next((e for e in ha.edges if e.id == j.edge), None)
            if edge is None:
                problems.append(f"jump via unknown edge {j.edge}")
                continue
            scale = max((c.poly.max_abs_coeff() for c in edge.guard.constraints),
                        default=1.0)
            if not edge.guard.contains(j.state_before, tol=guard_tol * scale):
                problems.append(
                    f"jump {j.edge} at t={j.time}: pre-state not in guard")
        return problems


# RK4 chunk kernel over a packed sparse polynomial field.  Packing:
# exps[t, d] exponent matrix, coefs[t], offs[i]:offs[i+1] rows of component i.


def _pack_field(f: VectorField):
    rows, coefs, offs = [], [], [0]
    dim = f.dimension
    for comp in f.components:
        for mono, c in comp.terms:
            row = [0] * dim
            for i, e in mono:
                row[i] = e
            rows.append(row)
            coefs.append(c)
        offs.append(len(rows))
    if not rows:
        rows = [[0] * dim]
        coefs = [0.0]
    return (np.array(rows, dtype=np.int64), np.array(coefs, dtype=np.float64),
            np.array(offs, dtype=np.int64))


def _rk4_chunk_py(exps, coefs, offs, x0, h, nsteps):
    dim = x0.shape[0]
    out = np.empty((nsteps + 1, dim))
    out[0] = x0
    x = x0.copy()
    k1 = np.empty(dim); k2 = np.empty(dim); k3 = np.empty(dim); k4 = np.empty(dim)
    tmp = np.empty(dim)

    def field(xv, kout):
        for i in range(dim):
            acc = 0.0
            for r in range(offs[i], offs[i + 1]):
                v = coefs[r]
                for d in range(dim):
                    e = exps[r, d]
                    if e:
                        v *= xv[d] ** e
                acc += v
            kout[i] = acc

    for s in range(nsteps):
        field(x, k1)
        for i in range(dim):
            tmp[i] = x[i] + 0.5 * h * k1[i]
        field(tmp, k2)
        for i in range(dim):
            tmp[i] = x[i] + 0.5 * h * k2[i]
        field(tmp, k3)
        for i in range(dim):
            tmp[i] = x[i] + h * k3[i]
        field(tmp, k4)
        for i in range(dim):
            x[i] = x[i] + (h / 6.0) * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
        out[s + 1] = x
    return out


try:  # pragma: no cover - exercised indirectly
    from numba import njit

    _rk4_chunk = njit(cache=True)(_rk4_chunk_py)
except Exception:  # pragma: no cover
    _rk4_chunk = _rk4_chunk_py


def _rk4_step(exps, coefs, offs, x, h):
    return _rk4_chunk(exps, coefs, offs, np.asarray(x, dtype=float), h, 1)[1]


def simulate(ha: HybridAutomaton, start: tuple[str, Sequence[float]],
             policy: JumpPolicy = JumpPolicy.eager(), horizon: float = 100.0,
             max_jumps: int = 50, step: float = 1e-3, rng_seed: int = 0,
             keep_every: int = 10) -> Trace:
    """Simulate one trace of the automaton from (mode, point).

    Events (domain exit, guard crossings, target/safety membership) are
    detected on the RK4 grid and refined by bisection to EVENT_TIME_TOL in
    time.  A jump is forced whenever the flow is about to leave the mode
    domain while some guard is enabled; leaving the domain with no enabled
    guard terminates the trace (blocked, or left_safe when the state also
    violates the safe set)."""
    if step <= 0:
        raise ValueError("step must be > 0")
    q, x0 = start
    mode = ha.mode(q)
    x = np.asarray(x0, dtype=float)
    dom_scale = _set_scale(mode.dom)
    if not mode.dom.contains(x, tol=DOM_TOL * dom_scale):
        raise ValueError(f"start point {x0} outside Dom({q})")

    rng = np.random.default_rng(policy.seed ^ (rng_seed * 2654435761 % 2**31))
    segments: list[TraceSegment] = []
    jumps: list[TraceJump] = []
    t = 0.0

    packs = {m.id: _pack_field(m.field) for m in ha.modes}

    while True:
        mode = ha.mode(q)
        exps, coefs, offs = packs[q]
        seg_states = [x.copy()]
        seg_t0 = t
        outgoing = ha.outgoing(q)

        # check immediate conditions at segment start
        tag = _instant_tag(mode, x)
        if tag:
            segments.append(TraceSegment(q, seg_t0, t, np.array(seg_states)))
            return Trace(segments, jumps, tag)

        jump_time = None       # absolute time at which the policy jumps
        dwell_started = None
        chunk = 2048
        status = None          # ("dom_exit"|"unsafe"|"target"|"horizon", t, x)
        while status is None:
            n = min(chunk, max(1, int(np.ceil((horizon - t) / step))))
            path = _rk4_chunk(exps, coefs, offs, x, step, n)
            n_real = path.shape[0] - 1
            ts = t + step * np.arange(n_real + 1)

            in_dom = mode.dom.contains_many(path, tol=DOM_TOL * dom_scale)
            in_safe = mode.safe.contains_many(path, tol=DOM_TOL * _set_scale(mode.safe))
            in_tr = (mode.target.contains_many(path)
                     if mode.target is not None else np.zeros(n_real + 1, bool))
            enabled = np.zeros(n_real + 1, dtype=bool)
            per_edge = []
            for e in outgoing:
                m = e.guard.contains_many(path)
                per_edge.append(m)
                enabled |= m

            # earliest event index on this chunk (index > 0)
            idx_dom = _first_false(in_dom)
            idx_unsafe = _first_false(in_safe)
            idx_tr = _first_true(in_tr)
            events = [(idx_dom, "dom_exit"), (idx_unsafe, "unsafe"),
                      (idx_tr, "target")]
            events = [(i, kind) for i, kind in events if i is not None]
            cut = min((i for i, _ in events), default=n_real + 1)

            # guard-entry handling limited to the pre-event part
            if policy.kind != "reluctant" and jump_time is None:
                lim = min(cut, n_real + 1)
                g_idx = _first_true(enabled[:lim])
                if g_idx is not None and dwell_started is None:
                    t_in = ts[g_idx] if g_idx else ts[0]
                    if g_idx:
                        t_in = _refine_entry(exps, coefs, offs, path[g_idx - 1],
                                             ts[g_idx - 1], step, outgoing)
                    dwell_started = t_in
                    if policy.kind == "eager":
                        jump_time = t_in
                    else:
                        u = policy.u if policy.kind == "delayed" \
                            else float(rng.random())
                        t_out = _dwell_end(ha, q, packs[q], path, ts, g_idx,
                                           enabled, in_dom, step, horizon, x,
                                           dom_scale)
                        jump_time = dwell_started + u * max(t_out - dwell_started, 0.0)

            if events and (jump_time is None or ts[cut] <= jump_time):
                i, kind = min(events)
                t_ev = ts[i]
                x_ev = path[i]
                # refine the crossing time
                t_lo, x_lo = ts[i - 1], path[i - 1]
                t_ev, x_ev = _refine_event(exps, coefs, offs, x_lo, t_lo, step,
                                           lambda p: _event_pred(mode, kind, p,
                                                                 dom_scale))
                seg_states.extend(path[1:i:keep_every])
                seg_states.append(x_ev)
                status = (kind, t_ev, x_ev)
                break

            if jump_time is not None and jump_time <= ts[n_real]:
                # advance to the jump time within this chunk
                k = int(np.floor((jump_time - t) / step))
                k = max(0, min(k, n_real))
                xj = path[k]
                rem = jump_time - ts[k]
                if rem > EVENT_TIME_TOL:
                    xj = _rk4_step(exps, coefs, offs, xj, rem)
                seg_states.extend(path[1:k + 1:keep_every])
                seg_states.append(xj)
                status = ("jump", jump_time, xj)
                break

            seg_states.extend(path[1::keep_every])
            x = path[n_real]
            t = ts[n_real]
            if t >= horizon - 1e-12:
                status = ("horizon", t, x)
                break

        kind, t_ev, x_ev = status
        segments.append(TraceSegment(q, seg_t0, t_ev, np.array(seg_states)))
        t, x = t_ev, np.asarray(x_ev, dtype=float)

        if kind == "target":
            return Trace(segments, jumps, "reached_target")
        if kind == "unsafe":
            return Trace(segments, jumps, "left_safe")
        if kind == "horizon":
            return Trace(segments, jumps, "horizon")

        if kind == "dom_exit":
            enabled_edges = [e for e in outgoing if e.guard.contains(
                x, tol=1e-6 * _set_scale(e.guard))]
            if not enabled_edges:
                tag = "left_safe" if not mode.safe.contains(
                    x, tol=DOM_TOL * _set_scale(mode.safe)) else "blocked"
                return Trace(segments, jumps, tag,
                             info=f"domain exit outside guards in {q}")
            edge = _pick_edge(enabled_edges, policy, rng)
        else:  # policy jump
            enabled_edges = [e for e in outgoing if e.guard.contains(
                x, tol=1e-9 * _set_scale(e.guard))]
            if not enabled_edges:
                # guard slipped away between grid points; keep flowing
                continue
            edge = _pick_edge(enabled_edges, policy, rng)

        x_new = edge.reset.apply(x, rng=int(rng.integers(2**31)))
        jumps.append(TraceJump(edge.id, t, tuple(x), tuple(x_new)))
        if len(jumps) >= max_jumps:
            tag = "zeno_suspected" if t < horizon / 100.0 else "horizon"
            return Trace(segments, jumps, tag, info="jump budget exhausted")
        q = edge.dest
        x = x_new
        mode = ha.mode(q)
        dom_scale = _set_scale(mode.dom)
        if not mode.safe.contains(x, tol=DOM_TOL * _set_scale(mode.safe)):
            segments.append(TraceSegment(q, t, t, np.array([x])))
            return Trace(segments, jumps, "left_safe",
                         info=f"reset landed outside safe set of {q}")
        if mode.target is not None and mode.target.contains(x):
            segments.append(TraceSegment(q, t, t, np.array([x])))
            return Trace(segments, jumps, "reached_target")
        if not mode.dom.contains(x, tol=DOM_TOL * dom_scale):
            segments.append(TraceSegment(q, t, t, np.array([x])))
            return Trace(segments, jumps, "blocked",
                         info=f"reset landed outside Dom({q})")


def _set_scale(s: SemiAlgebraicSet) -> float:
    return max((c.poly.max_abs_coeff() for c in s.constraints), default=1.0)


def _instant_tag(mode: Mode, x) -> Optional[str]:
    if mode.target is not None and mode.target.contains(x):
        return "reached_target"
    if not mode.safe.contains(x, tol=DOM_TOL * _set_scale(mode.safe)):
        return "left_safe"
    return None


def _first_true(mask) -> Optional[int]:
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else None


def _first_false(mask) -> Optional[int]:
    idx = np.flatnonzero(~mask)
    return int(idx[0]) if idx.size else None


def _event_pred(mode: Mode, kind: str, p, dom_scale) -> bool:
    """True while the event has NOT yet happened at point p."""
    if kind == "dom_exit":
        return mode.dom.contains(p, tol=DOM_TOL * dom_scale)
    if kind == "unsafe":
        return mode.safe.contains(p, tol=DOM_TOL * _set_scale(mode.safe))
    if kind == "target":
        return not mode.target.contains(p)
    raise ValueError(kind)


def _refine_event(exps, coefs, offs, x_lo, t_lo, h, pred):
    """Bisect the crossing inside [t_lo, t_lo + h] to EVENT_TIME_TOL."""
    lo, hi = 0.0, h
    x_base = np.asarray(x_lo, dtype=float)
    while hi - lo > EVENT_TIME_TOL:
        mid = 0.5 * (lo + hi)
        xm = _rk4_step(exps, coefs, offs, x_base, mid)
        if pred(xm):
            lo = mid
        else:
            hi = mid
    return t_lo + hi, _rk4_step(exps, coefs, offs, x_base, hi)


def _refine_entry(exps, coefs, offs, x_lo, t_lo, h, outgoing):
    lo, hi = 0.0, h
    x_base = np.asarray(x_lo, dtype=float)

    def inside(p):
        return any(e.guard.contains(p) for e in outgoing)

    while hi - lo > EVENT_TIME_TOL:
        mid = 0.5 * (lo + hi)
        if inside(_rk4_step(exps, coefs, offs, x_base, mid)):
            hi = mid
        else:
            lo = mid
    return t_lo + hi


def _dwell_end(ha, q, pack, path, ts, g_idx, enabled, in_dom, step, horizon,
               x_seg_start, dom_scale) -> float:
    """Lookahead: time at which the enabled-guard episode ends (guard exit
    or domain exit), bounded by the horizon."""
    exps, coefs, offs = pack
    mode = ha.mode(q)
    outgoing = ha.outgoing(q)
    n = len(ts) - 1
    i = g_idx
    while i <= n:
        if not in_dom[i]:
            return ts[i]
        if not enabled[i] and i > g_idx:
            return ts[i]
        i += 1
    # continue looking ahead beyond the chunk
    x = path[n].copy()
    t = ts[n]
    budget = int(min((horizon - t) / step, 200000))
    while budget > 0:
        k = min(4096, budget)
        ext = _rk4_chunk(exps, coefs, offs, x, step, k)
        dom_ok = mode.dom.contains_many(ext, tol=DOM_TOL * dom_scale)
        en = np.zeros(len(ext), dtype=bool)
        for e in outgoing:
            en |= e.guard.contains_many(ext)
        stop = _first_false(dom_ok & en)
        if stop is not None:
            return t + stop * step
        t += k * step
        x = ext[k]
        budget -= k
    return horizon


def _pick_edge(edges, policy: JumpPolicy, rng):
    if len(edges) == 1 or policy.kind != "random":
        return edges[0]
    return edges[int(rng.integers(len(edges)))]
