"""Reset-controller synthesis: refined domains, reset maps, and the
loop-blocking depth-first refinement.

Safety synthesis seeds each mode's refined domain with an invariance
certificate and extends it with reach certificates toward every outgoing
jump's must-jump region; resets land in a margin sublevel set of the
destination's refined domain, and the refined initial set is the original
one intersected with the refined domain.

Liveness synthesis seeds refined domains with reach-to-target
certificates instead, computes per-mode landing zones ST (reach the
target while avoiding every outgoing guard), and runs a depth-first
search over mode paths: dead ends and revisited modes trigger a backtrack
that either lands the entry jump's reset inside an ST or blocks the jump
by strengthening the source domain.

Two sound deviations from the literal set algebra (one-sided
approximations force them):

  * blocking "Dom_r minus guard-reach" is realized by recomputing the
    kept pieces with the guard's complement adjoined to the safe region,
    so every kept point provably avoids the blocked guard;
  * the ST landing zone is trimmed by the certified guard-reach regions
    (the set-difference the worked example uses), which is what makes the
    published no-controller verdicts reproducible.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .automaton import Edge, HybridAutomaton, Mode, ResetMap
from .poly import Polynomial, VectorField
from .semialg import (ComplementError, Constraint, SemiAlgebraicSet,
                      box_intersect, is_probably_empty)
from .sosprog import (Certificate, SolveOptions, TemplateSpec,
                      solve_certificate)

logger = logging.getLogger(__name__)


@dataclass
class SynthOptions:
    spec: TemplateSpec = field(default_factory=TemplateSpec)
    degree_cap: int = 10
    target_mode: str = "guard_and_dom_complement"  # or "guard"
    kappa: float = 1e-3
    seed: int = 0
    jobs: int = 1
    emptiness_budget: int = 8000
    dump_dir: Optional[str] = None

    def solve_opts(self, tag: str) -> SolveOptions:
        return SolveOptions(degree_cap=self.degree_cap, kappa=self.kappa,
                            seed=self.seed, dump_dir=self.dump_dir,
                            dump_tag=tag,
                            emptiness_budget=self.emptiness_budget)


@dataclass
class CertifiedPiece:
    """One certified subset of a refined domain, with provenance."""

    kind: str                    # invariance | reach_target | reach_guard | st
    mode: str
    edge: Optional[str] = None
    branch: int = 0
    cert: Optional[Certificate] = None
    region: Optional[SemiAlgebraicSet] = None  # {theta < -margin} inside SD
    nonempty: bool = False

    def describe(self) -> str:
        deg = self.cert.degrees[0] if self.cert else "-"
        return (f"kind={self.kind} mode={self.mode} edge={self.edge or '-'}"
                f" branch={self.branch} degree={deg} nonempty={self.nonempty}")


@dataclass
class STInfo:
    cert: Optional[Certificate]
    region: Optional[SemiAlgebraicSet]  # trimmed landing zone
    nonempty: bool


@dataclass
class ModeSynth:
    mode: Mode
    sd: SemiAlgebraicSet
    pieces: list[CertifiedPiece] = field(default_factory=list)
    st: Optional[STInfo] = None
    init_pieces: list[SemiAlgebraicSet] = field(default_factory=list)
    avoided_guards: list[str] = field(default_factory=list)  # blocked edges
    guard_certs: list[CertifiedPiece] = field(default_factory=list)
    sd_avoid: Optional[SemiAlgebraicSet] = None  # sd minus blocked guards

    def nonempty_pieces(self) -> list[CertifiedPiece]:
        return [p for p in self.pieces if p.nonempty]


@dataclass
class SynthesisResult:
    status: str                       # solved | no_controller
    refined: HybridAutomaton
    modes: dict[str, ModeSynth]
    resets: dict[str, ResetMap]
    reset_kinds: dict[str, str]       # edge id -> default | st | unassigned
    blocked_edges: list[str]
    log: list[str]
    problem: str                      # safety | liveness
    options: SynthOptions

    def log_text(self) -> str:
        return "\n".join(self.log) + "\n"


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _safe_domain(ha: HybridAutomaton, m: Mode) -> SemiAlgebraicSet:
    sd = m.safe.intersect(m.dom)
    box = sd.box if sd.box is not None else ha.box
    if box is None:
        raise ValueError(f"mode {m.id}: no bounding box for the safe domain")
    return sd.with_box(box)


def _syntactically_empty(s: Optional[SemiAlgebraicSet]) -> bool:
    if s is None:
        return True
    for c in s.constraints:
        if not any(m for m, _ in c.poly.terms):  # constant polynomial
            v = c.poly.coefficient(())
            if v > 0 or (v == 0 and c.strict):
                return True
    return False


def _must_jump_targets(ha: HybridAutomaton, mode: Mode, edge: Edge,
                       target_mode: str) -> list[SemiAlgebraicSet]:
    """Target sets for 'the jump via `edge` fires here'.

    Mode "guard": the guard itself.  Mode "guard_and_dom_complement": the
    printed Dom^c /\\ G, split into one branch per domain constraint
    (the complement of a conjunction is the union of the per-constraint
    negations)."""
    if target_mode == "guard":
        return [edge.guard]
    if target_mode != "guard_and_dom_complement":
        raise ValueError(f"unknown target_mode {target_mode!r}")
    branches = []
    for c in mode.dom.constraints:
        single = SemiAlgebraicSet(mode.dom.dimension, (c,), mode.dom.box)
        branches.append(edge.guard.intersect(single.complement()))
    return branches


def _target_nonempty(ha: HybridAutomaton, tgt: SemiAlgebraicSet,
                     sd: SemiAlgebraicSet, seed: int) -> bool:
    if _syntactically_empty(tgt):
        return False
    box = tgt.box or ha.box or sd.box
    if box is None:
        return True  # cannot sample; let the solver decide
    probe = tgt.with_box(box)
    return not is_probably_empty(probe, 4000, seed).empty


def _region_nonempty(region: Optional[SemiAlgebraicSet], budget: int,
                     seed: int) -> bool:
    if region is None or region.box is None:
        return False
    return not is_probably_empty(region, budget, seed).empty


def _first_init_goal(m: Mode, sd: SemiAlgebraicSet) -> Optional[SemiAlgebraicSet]:
    for piece in m.init:
        g = piece.intersect(sd)
        if not _syntactically_empty(g):
            return g
    return None


@dataclass(frozen=True)
class _CertTask:
    key: tuple
    kind: str
    S: SemiAlgebraicSet
    f: VectorField
    TR: Optional[SemiAlgebraicSet]
    spec: TemplateSpec
    opts: SolveOptions
    goal: Optional[SemiAlgebraicSet]


def _run_task(task: _CertTask):
    cert = solve_certificate(task.kind, task.S, task.f, task.TR, task.spec,
                             task.opts, goal_set=task.goal)
    return task.key, cert


def _solve_tasks(tasks: list[_CertTask], jobs: int) -> dict:
    if jobs <= 1 or len(tasks) <= 1:
        return dict(_run_task(t) for t in tasks)
    out = {}
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for key, cert in pool.map(_run_task, tasks):
            out[key] = cert
    return out


def _piece_from_cert(kind: str, mode_id: str, sd: SemiAlgebraicSet,
                     cert: Optional[Certificate], opts: SynthOptions,
                     edge: Optional[str] = None, branch: int = 0) -> CertifiedPiece:
    piece = CertifiedPiece(kind, mode_id, edge=edge, branch=branch, cert=cert)
    if cert is not None and cert.accepted:
        region = cert.region(sd, opts.kappa)
        piece.region = region
        piece.nonempty = _region_nonempty(region, opts.emptiness_budget,
                                          opts.seed)
    return piece


def _reset_into(piece_region: SemiAlgebraicSet, seed: int,
                theta: Optional[Polynomial] = None,
                n_witness: int = 10000) -> ResetMap:
    """Set-valued reset into a certified region; the stored witness is the
    sample with the most negative certificate value."""
    pts, _ = piece_region.sample(n_witness, seed)
    if not len(pts):
        raise ValueError("cannot place a reset witness in an empty region")
    if theta is not None:
        vals = theta.evaluate_many(pts)
        best = pts[int(np.argmin(vals))]
    else:
        best = pts[0]
    return ResetMap.set_valued(piece_region, seed=seed, witness=best)


# ---------------------------------------------------------------------------
# safety synthesis
# ---------------------------------------------------------------------------


def synth_safety(ha: HybridAutomaton, opts: SynthOptions = SynthOptions()
                 ) -> SynthesisResult:
    """Refined initial sets and reset maps for the safety problem.

    Each mode's refined domain collects an invariance certificate over the
    safe domain plus reach certificates toward every outgoing must-jump
    region; jumps whose destination ends up with an empty refined domain
    have their guard-reach pieces dropped again until stable."""
    log: list[str] = []
    modes: dict[str, ModeSynth] = {}
    tasks: list[_CertTask] = []
    for m in ha.modes:
        sd = _safe_domain(ha, m)
        ms = ModeSynth(m, sd)
        modes[m.id] = ms
        goal = _first_init_goal(m, sd)
        tasks.append(_CertTask(("inv", m.id), "invariance", sd, m.field,
                               None, opts.spec, opts.solve_opts(f"{m.id}_inv"),
                               goal))
        for e in ha.outgoing(m.id):
            for bi, tgt in enumerate(_must_jump_targets(ha, m, e,
                                                        opts.target_mode)):
                if not _target_nonempty(ha, tgt, sd, opts.seed):
                    log.append(f"SKIP mode={m.id} edge={e.id} branch={bi} "
                               f"reason=empty_target")
                    continue
                tasks.append(_CertTask(("guard", m.id, e.id, bi),
                                       "reach_avoid", sd, m.field, tgt,
                                       opts.spec,
                                       opts.solve_opts(f"{m.id}_{e.id}_b{bi}"),
                                       goal))
    results = _solve_tasks(tasks, opts.jobs)
    for key, cert in results.items():
        if key[0] == "inv":
            ms = modes[key[1]]
            piece = _piece_from_cert("invariance", key[1], ms.sd, cert, opts)
        else:
            _, mid, eid, bi = key
            ms = modes[mid]
            piece = _piece_from_cert("reach_guard", mid, ms.sd, cert, opts,
                                     edge=eid, branch=bi)
        ms.pieces.append(piece)
        log.append("CERT " + piece.describe())

    _drop_pieces_to_dead_destinations(ha, modes, log, opts)

    resets, reset_kinds, blocked = _assign_default_resets(ha, modes, {}, log,
                                                          opts)
    _compute_init(modes, opts, log)
    refined, status = _finish(ha, modes, resets, opts, log)
    return SynthesisResult(status, refined, modes, resets, reset_kinds,
                           blocked, log, "safety", opts)


def _drop_pieces_to_dead_destinations(ha, modes, log, opts):
    """A guard-reach piece is only safe if the jump it leads to has a
    nonempty refined landing; iterate dropping until stable."""
    changed = True
    while changed:
        changed = False
        for mid, ms in modes.items():
            for p in ms.pieces:
                if p.kind != "reach_guard" or not p.nonempty:
                    continue
                edge = next(e for e in ha.edges if e.id == p.edge)
                dest = modes[edge.dest]
                if not dest.nonempty_pieces():
                    p.nonempty = False
                    p.region = None
                    changed = True
                    log.append(f"DROP mode={mid} edge={p.edge} "
                               f"reason=dead_destination {edge.dest}")


def _assign_default_resets(ha, modes, refined_resets, log, opts):
    resets: dict[str, ResetMap] = {}
    reset_kinds: dict[str, str] = {}
    blocked: list[str] = []
    for e in ha.edges:
        if e.id in refined_resets:
            resets[e.id] = refined_resets[e.id]
            reset_kinds[e.id] = "st"
            continue
        dest = modes[e.dest]
        pieces = dest.nonempty_pieces()
        if not pieces:
            reset_kinds[e.id] = "unassigned"
            if e.id not in dest.avoided_guards:
                blocked.append(e.id)
                log.append(f"BLOCK edge={e.id} reason=empty_destination")
            continue
        piece = pieces[0]
        theta = piece.cert.theta if piece.cert else None
        resets[e.id] = _reset_into(piece.region, opts.seed, theta)
        reset_kinds[e.id] = "default"
        log.append(f"RESET edge={e.id} kind=default piece=({piece.describe()})")
    return resets, reset_kinds, blocked


def _compute_init(modes, opts, log):
    for mid, ms in modes.items():
        ms.init_pieces = []
        for init_piece in ms.mode.init:
            for p in ms.nonempty_pieces():
                cand = init_piece.intersect(p.region)
                if _region_nonempty(cand, opts.emptiness_budget, opts.seed):
                    ms.init_pieces.append(cand)
        log.append(f"INIT mode={mid} pieces={len(ms.init_pieces)}")


def _finish(ha, modes, resets, opts, log):
    init_map = {mid: ms.init_pieces for mid, ms in modes.items()}
    refined = ha.with_controller(init_map, resets)
    solved = any(ms.init_pieces for ms in modes.values())
    status = "solved" if solved else "no_controller"
    log.append(f"STATUS {status}")
    return refined, status


# ---------------------------------------------------------------------------
# liveness synthesis
# ---------------------------------------------------------------------------


def _guard_reach_intervals_1d(ha: HybridAutomaton, m: Mode,
                              sd: SemiAlgebraicSet, opts: SynthOptions):
    """Exact 1-D guard-reach sets per outgoing edge (None if the interval
    oracle does not apply)."""
    from . import validate as V

    if ha.dimension != 1:
        return None
    lo, hi = sd.box[0]
    pad = 0.5 * (hi - lo) + 1.0
    sd_iv = V.set_to_intervals(sd, lo - pad, hi + pad)
    out = {}
    try:
        for e in ha.outgoing(m.id):
            guard_iv = V.set_to_intervals(e.guard, lo - 10 * pad, hi + 10 * pad)
            if opts.target_mode == "guard":
                tgt = guard_iv
            else:
                dom_iv = V.set_to_intervals(m.dom, lo - 10 * pad, hi + 10 * pad)
                tgt = V.must_jump_target_1d(guard_iv, dom_iv,
                                            lo=lo - 10 * pad, hi=hi + 10 * pad)
            out[e.id] = V.oracle_ra_1d(m.field.components[0], sd_iv, tgt)
    except V.OracleError:
        return None
    return out


def compute_st(q: str, ha: HybridAutomaton, opts: SynthOptions,
               guard_pieces: Sequence[CertifiedPiece],
               sd: Optional[SemiAlgebraicSet] = None) -> STInfo:
    """Landing zone of mode q: certified reach of the target over the safe
    domain minus every outgoing guard, then trimmed by the guard-reach
    sets (the set difference that decides where loops can be blocked).

    The trim uses the exact interval oracle when the mode is 1-D with a
    sign-definite field, else the certified guard-reach regions."""
    m = ha.mode(q)
    sd = sd if sd is not None else _safe_domain(ha, m)
    if _syntactically_empty(m.target):
        return STInfo(None, None, False)
    safe = sd
    for e in ha.outgoing(q):
        try:
            safe = safe.intersect(e.guard.complement())
        except ComplementError as exc:
            raise ComplementError(
                f"mode {q}: guard of {e.id} must be a single constraint "
                f"to form the landing zone") from exc
    cert = solve_certificate("reach_avoid", safe, m.field, m.target,
                             opts.spec, opts.solve_opts(f"{q}_st"))
    if cert is None or not cert.accepted:
        return STInfo(cert, None, False)
    region = cert.region(safe, opts.kappa)
    cons = list(region.constraints)
    oracle_reach = _guard_reach_intervals_1d(ha, m, sd, opts)
    if oracle_reach is not None:
        # exact difference: outside [a,b] is the single constraint
        # (x-a)(x-b) > 0
        x = Polynomial.variable(1, 0)
        for ivs in oracle_reach.values():
            for (a, b) in ivs:
                outside = -((x - a) * (x - b))
                cons.append(Constraint(outside, True))
    else:
        for p in guard_pieces:
            if p.cert is None or not p.nonempty:
                continue
            margin = p.cert.margin(opts.kappa)
            # remove the certified reach region: keep theta_guard >= -margin
            cons.append(Constraint(-p.cert.theta - margin, False))
    trimmed = SemiAlgebraicSet(region.dimension, tuple(cons), region.box)
    nonempty = _region_nonempty(trimmed, opts.emptiness_budget, opts.seed)
    return STInfo(cert, trimmed, nonempty)


def synth_liveness(ha: HybridAutomaton, opts: SynthOptions = SynthOptions()
                   ) -> SynthesisResult:
    """Refined initial sets and reset maps for safety plus liveness."""
    log: list[str] = []
    modes: dict[str, ModeSynth] = {}
    tasks: list[_CertTask] = []
    for m in ha.modes:
        sd = _safe_domain(ha, m)
        ms = ModeSynth(m, sd)
        modes[m.id] = ms
        goal = _first_init_goal(m, sd)
        if not _syntactically_empty(m.target):
            tasks.append(_CertTask(("target", m.id), "reach_avoid", sd,
                                   m.field, m.target, opts.spec,
                                   opts.solve_opts(f"{m.id}_tr"), goal))
        else:
            log.append(f"SKIP mode={m.id} reason=empty_target")
        for e in ha.outgoing(m.id):
            for bi, tgt in enumerate(_must_jump_targets(ha, m, e,
                                                        opts.target_mode)):
                if not _target_nonempty(ha, tgt, sd, opts.seed):
                    log.append(f"SKIP mode={m.id} edge={e.id} branch={bi} "
                               f"reason=empty_target")
                    continue
                tasks.append(_CertTask(("guard", m.id, e.id, bi),
                                       "reach_avoid", sd, m.field, tgt,
                                       opts.spec,
                                       opts.solve_opts(f"{m.id}_{e.id}_b{bi}"),
                                       goal))
    results = _solve_tasks(tasks, opts.jobs)
    for key, cert in results.items():
        if key[0] == "target":
            ms = modes[key[1]]
            piece = _piece_from_cert("reach_target", key[1], ms.sd, cert, opts)
        else:
            _, mid, eid, bi = key
            ms = modes[mid]
            piece = _piece_from_cert("reach_guard", mid, ms.sd, cert, opts,
                                     edge=eid, branch=bi)
        ms.pieces.append(piece)
        log.append("CERT " + piece.describe())
    for m in ha.modes:
        if not any(p.kind == "reach_target" for p in modes[m.id].pieces):
            modes[m.id].pieces.insert(0, CertifiedPiece("reach_target", m.id))

    _compute_init(modes, opts, log)
    for m in ha.modes:
        ms = modes[m.id]
        ms.guard_certs = [p for p in ms.pieces if p.kind == "reach_guard"]
        ms.st = compute_st(m.id, ha, opts, ms.guard_certs, ms.sd)
        log.append(f"ST mode={m.id} nonempty={ms.st.nonempty}")

    state = _RefineState(ha, modes, opts, log)
    roots = [m.id for m in ha.modes if modes[m.id].init_pieces]
    for q in roots:
        log.append(f"DFS root={q}")
        refining_dom(q, ha, state)

    _compute_init(modes, opts, log)
    resets, reset_kinds, blocked_now = _assign_default_resets(
        ha, modes, state.refined_resets, log, opts)
    # an unassigned edge that was never explicitly blocked must still never
    # fire: strengthen its source like a blocked jump and recompute
    extra = [eid for eid, kind in reset_kinds.items()
             if kind == "unassigned" and eid not in state.blocked]
    for eid in extra:
        edge = next(e for e in ha.edges if e.id == eid)
        state.block_edge(edge, "unassignable_reset")
    if extra:
        _compute_init(modes, opts, log)
        resets, reset_kinds, _ = _assign_default_resets(
            ha, modes, state.refined_resets, log, opts)

    refined, status = _finish(ha, modes, resets, opts, log)
    return SynthesisResult(status, refined, modes, resets, reset_kinds,
                           sorted(state.blocked), log, "liveness", opts)


class _RefineState:
    """Shared mutable state for the depth-first refinement."""

    def __init__(self, ha: HybridAutomaton, modes: dict[str, ModeSynth],
                 opts: SynthOptions, log: list[str]):
        self.ha = ha
        self.modes = modes
        self.opts = opts
        self.log = log
        self.refined_resets: dict[str, ResetMap] = {}
        self.blocked: set[str] = set()
        self.visits = 0

    def edge_pruned(self, e: Edge) -> bool:
        return e.id in self.blocked or e.id in self.refined_resets

    def refine_reset(self, e: Edge, st: STInfo) -> bool:
        if e.id in self.refined_resets:
            self.log.append(f"CONFLICT edge={e.id} kept=first")
            return True
        theta = st.cert.theta if st.cert else None
        self.refined_resets[e.id] = _reset_into(st.region, self.opts.seed,
                                                theta)
        self.log.append(f"RESET edge={e.id} kind=st mode={e.dest}")
        return True

    def block_edge(self, e: Edge, reason: str):
        """Strengthen the source mode so the jump via e can never fire.

        With the exact 1-D reach oracle available, the kept pieces are the
        old ones minus the guard-reach intervals (the literal subtraction).
        Otherwise every kept piece is recomputed with the guard's
        complement adjoined to its safe region, so kept points provably
        avoid the blocked guard."""
        if e.id in self.blocked:
            return
        self.blocked.add(e.id)
        src = self.modes[e.source]
        src.avoided_guards.append(e.id)
        self.log.append(f"BLOCK edge={e.id} at={e.source} reason={reason}")
        reach = _guard_reach_intervals_1d(self.ha, src.mode, src.sd, self.opts)
        if reach is not None and e.id in reach:
            x = Polynomial.variable(1, 0)
            extra = tuple(Constraint(-((x - a) * (x - b)), True)
                          for (a, b) in reach[e.id])
            new_pieces = []
            for p in src.pieces:
                if p.edge == e.id:
                    self.log.append(f"DROP mode={e.source} edge={e.id} "
                                    f"reason=blocked")
                    continue
                if p.nonempty:
                    region = SemiAlgebraicSet(
                        p.region.dimension, p.region.constraints + extra,
                        p.region.box)
                    p = CertifiedPiece(p.kind, p.mode, edge=p.edge,
                                       branch=p.branch, cert=p.cert,
                                       region=region,
                                       nonempty=_region_nonempty(
                                           region,
                                           self.opts.emptiness_budget,
                                           self.opts.seed))
                    self.log.append("TRIM " + p.describe() +
                                    f" minus_reach_of={e.id}")
                new_pieces.append(p)
            src.pieces = new_pieces
            return
        try:
            guard_c = e.guard.complement()
        except ComplementError:
            raise ComplementError(
                f"cannot block edge {e.id}: its guard is not a single "
                f"constraint")
        base = src.sd_avoid if src.sd_avoid is not None else src.sd
        avoid_sd = base.intersect(guard_c)
        src.sd_avoid = avoid_sd
        mode = src.mode
        new_pieces: list[CertifiedPiece] = []
        for p in src.pieces:
            if p.edge == e.id:
                self.log.append(f"DROP mode={e.source} edge={e.id} "
                                f"reason=blocked")
                continue
            if not p.nonempty:
                new_pieces.append(p)
                continue
            if p.kind == "reach_target":
                tr = mode.target
            elif p.kind == "reach_guard":
                dest_edge = next(ee for ee in self.ha.edges if ee.id == p.edge)
                tgts = _must_jump_targets(self.ha, mode, dest_edge,
                                          self.opts.target_mode)
                tr = tgts[p.branch] if p.branch < len(tgts) else None
            else:
                tr = None
            if tr is None or _syntactically_empty(tr):
                new_pieces.append(replace_piece_empty(p))
                continue
            cert = solve_certificate(
                "reach_avoid", avoid_sd, mode.field, tr, self.opts.spec,
                self.opts.solve_opts(f"{e.source}_{p.kind}_avoid_{e.id}"))
            np_piece = _piece_from_cert(p.kind, e.source, src.sd, cert,
                                        self.opts, edge=p.edge,
                                        branch=p.branch)
            self.log.append("RECERT " + np_piece.describe() +
                            f" avoiding={e.id}")
            new_pieces.append(np_piece)
        src.pieces = new_pieces
        # the landing zone's safe set already excludes every guard and the
        # trim always uses the original reach information of all outgoing
        # jumps, so blocking does not change the trim inputs; keep the
        # existing ST
        self.log.append(f"ST mode={e.source} nonempty="
                        f"{src.st.nonempty if src.st else False} (kept)")


def replace_piece_empty(p: CertifiedPiece) -> CertifiedPiece:
    return CertifiedPiece(p.kind, p.mode, edge=p.edge, branch=p.branch,
                          cert=p.cert, region=None, nonempty=False)


def refining_dom(q: str, ha: HybridAutomaton, state: _RefineState,
                 max_visits: Optional[int] = None):
    """Depth-first path exploration from q (paths of at most |Q|+1 modes).

    Dead ends walk back refining the entry jump into the landing zone ST
    when one exists, else blocking the jump; revisits do the same over the
    loop suffix.  Exploration does not continue across jumps already
    refined into a landing zone or blocked: traces through them terminate
    at a target."""
    nq = len(ha.modes)
    budget = max_visits if max_visits is not None else \
        nq * max(2, max(len(ha.outgoing(m.id)) for m in ha.modes) + 1) ** nq

    def children(mid: str) -> list[Edge]:
        return [e for e in ha.outgoing(mid) if not state.edge_pruned(e)]

    def backtrack(path: list[str], top: int, stop: int):
        """Walk i = top .. stop+1: land the jump into ST or block it."""
        i = top
        while i > stop and i > 0:
            st = state.modes[path[i]].st
            if st is not None and st.nonempty:
                edge = _edge_between(ha, path[i - 1], path[i])
                state.refine_reset(edge, st)
                return
            edge = _edge_between(ha, path[i - 1], path[i])
            state.block_edge(edge, "st_empty")
            i -= 1

    def last_branching(path: list[str], upto: int) -> int:
        for k in range(upto - 1, -1, -1):
            if len(ha.outgoing(path[k])) > 1:
                return k
        return -1

    def dfs(path: list[str]):
        state.visits += 1
        if state.visits > budget:
            raise RuntimeError("refining_dom visit budget exceeded")
        mid = path[-1]
        if not ha.outgoing(mid):
            # dead end: back up to below the nearest branching ancestor
            stop = last_branching(path, len(path) - 1)
            backtrack(path, len(path) - 1, stop)
            return
        for e in children(mid):
            if state.edge_pruned(e):
                continue
            dest = e.dest
            if dest in path:
                loop_start = path.index(dest)
                full = path + [dest]
                stop = max(loop_start, last_branching(path, len(path)))
                backtrack(full, len(full) - 1, stop)
                continue
            if len(path) + 1 > nq + 1:
                continue
            dfs(path + [dest])

    dfs([q])


def _edge_between(ha: HybridAutomaton, src: str, dst: str) -> Edge:
    for e in ha.edges:
        if e.source == src and e.dest == dst:
            return e
    raise KeyError(f"no edge {src} -> {dst}")
