"""Bundled case studies.

Two 1-D teaching automata (a two-mode safety loop and a four-mode
safety-plus-liveness graph), a pair of coupled van der Pol style
oscillators, an aircraft conflict-resolution maneuver, and the
Clohessy-Wiltshire-Hill relative orbit model with three thrust modes.

Interval domains that must be complemented (for must-jump regions) are
encoded as single quadratic constraints; guards likewise.
"""

from __future__ import annotations

from .automaton import Edge, HybridAutomaton, Mode, ResetMap
from .poly import VectorField
from .semialg import SemiAlgebraicSet

CASE_NAMES = ("motivating", "fourmode", "vanderpol", "aircraft", "cwh")


def _set(dim, texts, box=None):
    return SemiAlgebraicSet.from_strings(dim, texts, box)


def motivating() -> HybridAutomaton:
    """Two 1-D modes ping-ponging through identity resets; safety only.

    q1 drifts up on [15,30) with safe band [15,31); q2 drifts down on
    (0,15] with safe band (0,14].  Identity resets are unsafe (jumping at
    25 lands outside q2's safe band), so the controller must synthesize
    new ones."""
    q1 = Mode("q1", VectorField.parse(1, ["1.0"]),
              dom=_set(1, ["x1^2 - 45.0*x1 + 450.0 < 0"], [[15, 30]]),
              init=(_set(1, ["15.0 - x1 <= 0", "x1 - 18.0 <= 0"], [[15, 18]]),),
              safe=_set(1, ["15.0 - x1 <= 0", "x1 - 31.0 < 0"], [[15, 31]]))
    q2 = Mode("q2", VectorField.parse(1, ["-1.0"]),
              dom=_set(1, ["x1^2 - 15.0*x1 < 0"], [[0, 15]]),
              init=(_set(1, ["11.0 - x1 <= 0", "x1 - 14.0 <= 0"], [[11, 14]]),),
              safe=_set(1, ["-x1 < 0", "x1 - 14.0 <= 0"], [[0, 14]]))
    e1 = Edge("q1", "q2", _set(1, ["25.0 - x1 <= 0"]), ResetMap.identity(), "e1")
    e2 = Edge("q2", "q1", _set(1, ["x1 - 1.0 <= 0"]), ResetMap.identity(), "e2")
    return HybridAutomaton(1, ("x1",), (q1, q2), (e1, e2), ((-2.0, 35.0),))


def fourmode(widen_e1: bool = False) -> HybridAutomaton:
    """Four 1-D modes with targets; the q0-q1-q2 loop and the dead-end q3.

    With `widen_e1` the guard of e1 gains the extra band [21,23], which
    removes every landing zone and makes the liveness problem unsolvable.
    """
    q0 = Mode("q0", VectorField.parse(1, ["1.0"]),
              dom=_set(1, ["x1 - 32.0 < 0"]),
              init=(_set(1, ["23.0 - x1 <= 0", "x1 - 25.0 <= 0"], [[23, 25]]),),
              safe=_set(1, ["23.0 - x1 <= 0", "x1 - 32.0 <= 0"], [[23, 32]]),
              target=_set(1, ["29.0 - x1 <= 0"]))
    q1 = Mode("q1", VectorField.parse(1, ["-1.0"]),
              dom=_set(1, ["22.0 - x1 < 0"]),
              init=(_set(1, ["26.0 - x1 <= 0", "x1 - 30.0 <= 0"], [[26, 30]]),),
              safe=_set(1, ["22.0 - x1 <= 0", "x1 - 32.0 <= 0"], [[22, 32]]),
              target=_set(1, ["22.0 - x1 <= 0", "x1 - 24.0 <= 0"]))
    q2 = Mode("q2", VectorField.parse(1, ["0.1"]),
              dom=_set(1, ["x1^2 - 50.0*x1 + 616.0 < 0"], [[22, 28]]),
              init=(_set(1, ["22.0 - x1 <= 0", "x1 - 26.0 <= 0"], [[22, 26]]),),
              safe=_set(1, ["22.0 - x1 <= 0", "x1 - 30.0 <= 0"], [[22, 30]]),
              target=_set(1, ["24.0 - x1 <= 0", "x1 - 25.0 <= 0"]))
    q3 = Mode("q3", VectorField.parse(1, ["1.0"]),
              dom=_set(1, ["x1^2 - 50.0*x1 + 616.0 < 0"], [[22, 28]]),
              init=(_set(1, ["22.0 - x1 <= 0", "x1 - 26.0 <= 0"], [[22, 26]]),),
              safe=_set(1, ["22.0 - x1 <= 0", "x1 - 30.0 <= 0"], [[22, 30]]),
              target=_set(1, ["1.0 < 0"]))
    if widen_e1:
        # [21,23] u [25,26] as a single quartic constraint
        g_e1 = _set(1, ["x1^4 - 95.0*x1^3 + 3377.0*x1^2 - 53233.0*x1 "
                        "+ 313950.0 <= 0"])
    else:
        g_e1 = _set(1, ["x1^2 - 51.0*x1 + 650.0 <= 0"])  # [25,26]
    e0 = Edge("q0", "q1", _set(1, ["28.0 - x1 <= 0"]), ResetMap.identity(), "e0")
    e1 = Edge("q1", "q2", g_e1, ResetMap.identity(), "e1")
    e2 = Edge("q2", "q0", _set(1, ["x1^2 - 56.0*x1 + 783.0 <= 0"]),  # [27,29]
              ResetMap.affine([[1.0]], [-4.0]), "e2")
    e3 = Edge("q1", "q3", _set(1, ["x1^2 - 58.0*x1 + 840.0 <= 0"]),  # [28,30]
              ResetMap.identity(), "e3")
    return HybridAutomaton(1, ("x1",), (q0, q1, q2, q3), (e0, e1, e2, e3),
                           ((15.0, 40.0),))


def vanderpol() -> HybridAutomaton:
    """Two nonlinearly damped oscillators coupled by guarded jumps.

    Both modes live on the open unit disk; the safe sets additionally
    exclude the guard balls (and a third hazard ball in q2), so jumps must
    fire exactly when trajectories reach a guard ball."""
    ball = ["x1^2 + x2^2 - 1.0 < 0"]
    box = [[-1.0, 1.0], [-1.0, 1.0]]
    g1 = "10.0*x1^2 + 10.0*x2^2 - 6.0*x2 - 0.1"       # guard ball of e1
    g2 = "15.0*x1^2 + 10.0*x2^2 - 1.0"                # guard ball of e2
    g3 = "36.0*x1^2 + 36.0*x2^2 - 50.4*x2 + 16.64"     # hazard ball in q2
    q1 = Mode("q1",
              VectorField.parse(2, ["-2.0*x2",
                                    "0.5*x1^2*x2 + 1.0*x1 - 0.105*x2"]),
              dom=_set(2, ball, box),
              init=(_set(2, ball, box),),
              safe=_set(2, ball + ["-10.0*x1^2 - 10.0*x2^2 + 6.0*x2 + 0.1 < 0"],
                        box))
    q2 = Mode("q2",
              VectorField.parse(2, ["-2.0*x2",
                                    "5.0*x1^2*x2 + 0.8*x1 - 1.05*x2"]),
              dom=_set(2, ball, box),
              init=(_set(2, ball, box),),
              safe=_set(2, ball + ["-15.0*x1^2 - 10.0*x2^2 + 1.0 < 0",
                                   "-36.0*x1^2 - 36.0*x2^2 + 50.4*x2 - 16.64 < 0"],
                        box))
    e1 = Edge("q1", "q2", _set(2, [g1 + " < 0"]), ResetMap.identity(), "e1")
    e2 = Edge("q2", "q1", _set(2, [g2 + " < 0"]), ResetMap.identity(), "e2")
    return HybridAutomaton(2, ("x1", "x2"), (q1, q2), (e1, e2),
                           ((-1.0, 1.0), (-1.0, 1.0)))


def aircraft() -> HybridAutomaton:
    """Two-aircraft conflict resolution: straight cruise, circular avoid.

    Cruise flies constant relative velocity inside an annulus (the unit
    disk is the conflict zone); the single jump enters the avoid mode,
    whose circular relative motion must reach the exit window."""
    box1 = [[-2.0, 2.0], [-2.0, 2.0]]
    box2 = [[-1.0, 1.0], [-1.0, 1.0]]
    q1 = Mode("q1", VectorField.parse(2, ["0.1", "-0.2"]),
              dom=_set(2, ["x1^2 + x2^2 - 4.0 < 0"], box1),
              init=(_set(2, ["x1^2 + x2^2 - 4.0 < 0",
                             "-x1^2 - x2^2 + 1.0 < 0"], box1),),
              safe=_set(2, ["x1^2 + x2^2 - 4.0 < 0",
                            "-x1^2 - x2^2 + 1.0 < 0"], box1))
    q2 = Mode("q2", VectorField.parse(2, ["x2 + 0.1", "-x1 - 0.2"]),
              dom=_set(2, ["x1^2 + x2^2 - 1.0 < 0"], box2),
              init=(_set(2, ["x1^2 + x2^2 - 1.0 < 0"], box2),),
              safe=_set(2, ["x1^2 + x2^2 - 1.0 < 0"], box2),
              target=_set(2, ["5.0*x1^2 + 5.0*x2^2 + 5.0*x1 + 5.0*x2 "
                              "+ 1.5 < 0"], [[-1.0, 0.0], [-1.0, 0.0]]))
    e1 = Edge("q1", "q2", _set(2, ["x1^2 + x2^2 - 1.0 < 0"]),
              ResetMap.identity(), "e1")
    return HybridAutomaton(2, ("x1", "x2"), (q1, q2), (e1,),
                           ((-2.0, 2.0), (-2.0, 2.0)))


def _cwh_field(omega: float, u1: float, u2: float, mc: float) -> VectorField:
    w2 = 3.0 * omega * omega
    tw = 2.0 * omega
    return VectorField.parse(4, [
        "1.0*x2",
        f"{w2!r}*x1 + {tw!r}*x4 + {u1 / mc!r}",
        "1.0*x4",
        f"{-tw!r}*x2 + {u2 / mc!r}",
    ])


def cwh() -> HybridAutomaton:
    """Relative orbital motion of a chaser with three thrust modes (4-D).

    All domains, safe sets and initial sets are the open unit ball; the
    three guard balls straddle its boundary and the target ball sits in
    the third mode."""
    ball = ["x1^2 + x2^2 + x3^2 + x4^2 - 1.0 < 0"]
    box = [[-1.0, 1.0]] * 4
    mc = 150.0
    f1 = _cwh_field(1.0, 1.0, 1.0, mc)
    f2 = _cwh_field(1.5, 3.0, 3.0, mc)
    f3 = _cwh_field(1.0, -1.0, -1.0, mc)
    g1 = ["x1^2 + x2^2 + x3^2 + x4^2 + 2.0*x1 + 2.0*x2 + 1.0 < 0"]
    g2 = ["x1^2 + x2^2 + x3^2 + x4^2 - 2.0*x1 - 2.0*x2 + 1.0 < 0"]
    g3 = ["x1^2 + x2^2 + x3^2 + x4^2 - 2.0*x1 + 2.0*x2 + 2.0*x3 + 2.0 < 0"]
    tr = ["x1^2 + x2^2 + x3^2 + x4^2 + 2.0*x1 - 2.0*x2 + 1.0 < 0"]
    modes = []
    for qid, f, target in (("q1", f1, None), ("q2", f2, None),
                           ("q3", f3, _set(4, tr, box))):
        modes.append(Mode(qid, f, dom=_set(4, ball, box),
                          init=(_set(4, ball, box),),
                          safe=_set(4, ball, box), target=target))
    e1 = Edge("q1", "q2", _set(4, g1), ResetMap.identity(), "e1")
    e2 = Edge("q2", "q3", _set(4, g2), ResetMap.identity(), "e2")
    e3 = Edge("q3", "q1", _set(4, g3), ResetMap.identity(), "e3")
    return HybridAutomaton(4, ("x1", "x2", "x3", "x4"), tuple(modes),
                           (e1, e2, e3), tuple((-1.0, 1.0) for _ in range(4)))


def build(name: str) -> HybridAutomaton:
    if name == "motivating":
        return motivating()
    if name == "fourmode":
        return fourmode()
    if name == "vanderpol":
        return vanderpol()
    if name == "aircraft":
        return aircraft()
    if name == "cwh":
        return cwh()
    raise KeyError(f"unknown case {name!r}; choose from {CASE_NAMES}")
