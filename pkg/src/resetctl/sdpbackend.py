"""Conic optimization backend: linear objective, equality constraints and
PSD / nonnegative-diagonal variable blocks, plus free scalar variables.

The embedded solver is CVXOPT's cone LP interior-point method.  Problems
serialize to SDPA sparse format (free variables are pair-split into a
diagonal block on write, which preserves the optimum).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

# Row entry: ("f", var_index, coef) for a free variable, or
# ("b", block_index, i, j, coef) for upper-triangle entry (i <= j) of a block.
# A row reads: sum of coef * variable == rhs.  Off-diagonal block entries are
# single variables X_ij mirrored into (j, i); coefficients are NOT doubled.
RowEntry = tuple


@dataclass(frozen=True)
class ToleranceSet:
    feastol: float = 1e-8
    gaptol: float = 1e-8
    max_iters: int = 200


@dataclass(frozen=True)
class ConicProblem:
    """Equality-form conic problem over block variables.

    block_dims: positive d = symmetric PSD block of dimension d; negative d
    = diagonal (componentwise nonnegative) block with |d| entries, stored as
    (i, i) triplets.  free_dim scalar variables are unconstrained.
    """

    free_dim: int
    block_dims: tuple[int, ...]
    rows: tuple[tuple[RowEntry, ...], ...]
    rhs: tuple[float, ...]
    obj_free: tuple[float, ...] = ()
    obj_blocks: tuple[RowEntry, ...] = ()
    comment: str = ""

    def __post_init__(self):
        if len(self.rows) != len(self.rhs):
            raise ValueError("rows / rhs length mismatch")
        if self.obj_free and len(self.obj_free) != self.free_dim:
            raise ValueError("objective length mismatch")
        for row in self.rows + (self.obj_blocks,):
            for ent in row:
                if ent[0] == "b":
                    _, blk, i, j, val = ent
                    d = abs(self.block_dims[blk])
                    if not (0 <= i <= j < d):
                        raise ValueError(f"bad block entry {ent}")
                    if self.block_dims[blk] < 0 and i != j:
                        raise ValueError("diagonal blocks only have (i, i) entries")
                    if not math.isfinite(val):
                        raise ValueError("non-finite coefficient")

    @property
    def n_constraints(self) -> int:
        return len(self.rows)


@dataclass
class ConicSolution:
    status: str  # optimal | near_optimal | infeasible | unbounded | numerical_failure
    free_values: Optional[np.ndarray]
    blocks: Optional[list[np.ndarray]]
    duals: Optional[np.ndarray]
    objective: Optional[float]
    residuals: dict = field(default_factory=dict)
    solver_info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "near_optimal")


def _var_layout(p: ConicProblem):
    """Column offsets: free vars first, then per-block upper-tri entries."""
    offs = [p.free_dim]
    for d in p.block_dims:
        n = abs(d) if d < 0 else d * (d + 1) // 2
        offs.append(offs[-1] + n)
    return offs


def _col_of(p: ConicProblem, offs, ent) -> tuple[int, float]:
    if ent[0] == "f":
        return ent[1], ent[2]
    _, blk, i, j, val = ent
    d = p.block_dims[blk]
    if d < 0:
        return offs[blk] + i, val
    # upper-tri index for column i<=j in a d x d block
    idx = i * d - i * (i - 1) // 2 + (j - i)
    return offs[blk] + idx, val


def solve(p: ConicProblem, tol: ToleranceSet = ToleranceSet()) -> ConicSolution:
    """Solve with the embedded CVXOPT cone LP solver; residuals recomputed."""
    from cvxopt import matrix, solvers, spmatrix

    offs = _var_layout(p)
    nvar = offs[-1]
    m = p.n_constraints

    if nvar == 0:
        return ConicSolution("optimal", np.zeros(0), [], np.zeros(m), 0.0,
                             {"primal": 0.0, "gap": 0.0})

    # objective
    c = np.zeros(nvar)
    for i, v in enumerate(p.obj_free):
        c[i] = v
    for ent in p.obj_blocks:
        col, v = _col_of(p, offs, ent)
        c[col] += v

    # cone section: diagonal blocks first ('l'), then PSD blocks ('s')
    diag_blocks = [k for k, d in enumerate(p.block_dims) if d < 0]
    psd_blocks = [k for k, d in enumerate(p.block_dims) if d > 0]
    gI, gJ, gV = [], [], []
    row = 0
    for k in diag_blocks:
        for i in range(-p.block_dims[k]):
            col, _ = _col_of(p, offs, ("b", k, i, i, 1.0))
            gI.append(row)
            gJ.append(col)
            gV.append(-1.0)
            row += 1
    for k in psd_blocks:
        d = p.block_dims[k]
        for jc in range(d):       # column-major full matrix
            for ir in range(d):
                i, j = min(ir, jc), max(ir, jc)
                col, _ = _col_of(p, offs, ("b", k, i, j, 1.0))
                gI.append(row)
                gJ.append(col)
                gV.append(-1.0)
                row += 1
    ncone = row
    dims = {"l": sum(-p.block_dims[k] for k in diag_blocks), "q": [],
            "s": [p.block_dims[k] for k in psd_blocks]}

    # equality rows
    aI, aJ, aV = [], [], []
    b = np.asarray(p.rhs, dtype=float)
    for r, entries in enumerate(p.rows):
        acc: dict[int, float] = {}
        for ent in entries:
            col, v = _col_of(p, offs, ent)
            acc[col] = acc.get(col, 0.0) + v
        for col, v in acc.items():
            if v != 0.0:
                aI.append(r)
                aJ.append(col)
                aV.append(v)

    G = spmatrix(gV, gI, gJ, (ncone, nvar))
    A = spmatrix(aV, aI, aJ, (m, nvar))
    h = matrix(np.zeros(ncone))

    opts = {"show_progress": False, "maxiters": tol.max_iters,
            "abstol": tol.gaptol, "reltol": tol.gaptol, "feastol": tol.feastol}
    # the LDL KKT solver is markedly more robust than the default on
    # SOS-shaped problems, which are frequently not strictly feasible
    try:
        sol = solvers.conelp(matrix(c), G, h, dims, A, matrix(b),
                             options=opts, kktsolver="ldl")
    except (ArithmeticError, ValueError, ZeroDivisionError) as exc:
        return ConicSolution("numerical_failure", None, None, None, None,
                             solver_info={"error": str(exc)})

    status = sol.get("status", "unknown")
    if status == "primal infeasible":
        return ConicSolution("infeasible", None, None, None, None,
                             solver_info={"solver_status": status})
    if status == "dual infeasible":
        return ConicSolution("unbounded", None, None, None, None,
                             solver_info={"solver_status": status})
    if sol.get("x") is None:
        return ConicSolution("numerical_failure", None, None, None, None,
                             solver_info={"solver_status": status})

    x = np.array(sol["x"]).ravel()
    y = np.array(sol["y"]).ravel() if sol.get("y") is not None else np.zeros(m)
    free = x[:p.free_dim].copy()
    blocks: list[np.ndarray] = []
    for k, d in enumerate(p.block_dims):
        if d < 0:
            vals = [x[_col_of(p, offs, ("b", k, i, i, 1.0))[0]] for i in range(-d)]
            blocks.append(np.diag(vals))
        else:
            M = np.zeros((d, d))
            for i in range(d):
                for j in range(i, d):
                    col, _ = _col_of(p, offs, ("b", k, i, j, 1.0))
                    M[i, j] = M[j, i] = x[col]
            blocks.append(M)

    # recompute residuals instead of trusting the solver report
    Ax = np.zeros(m)
    for r, entries in enumerate(p.rows):
        s = 0.0
        for ent in entries:
            col, v = _col_of(p, offs, ent)
            s += v * x[col]
        Ax[r] = s
    primal_res = float(np.max(np.abs(Ax - b))) / (1.0 + float(np.max(np.abs(b), initial=0.0)))
    min_eig = 0.0
    for M, d in zip(blocks, p.block_dims):
        if d > 0:
            w = np.linalg.eigvalsh(M)
            min_eig = min(min_eig, float(w[0]))
        elif d < 0:
            min_eig = min(min_eig, float(np.min(np.diag(M), initial=0.0)))
    # dual feasibility: c + G'z + A'y = 0
    z = np.array(sol["z"]).ravel() if sol.get("z") is not None else np.zeros(ncone)
    dres = c.copy()
    for r, col, v in zip(gI, gJ, gV):
        dres[col] += v * z[r]
    for r, col, v in zip(aI, aJ, aV):
        dres[col] += v * y[r]
    dual_res = float(np.max(np.abs(dres))) / (1.0 + float(np.max(np.abs(c), initial=0.0)))
    obj = float(c @ x)
    dual_obj = float(-b @ y)
    gap = abs(obj - dual_obj) / (1.0 + abs(obj))
    residuals = {"primal": primal_res, "dual": dual_res, "min_eig": min_eig,
                 "gap": gap, "solver_gap": sol.get("relative gap")}

    looks_good = (primal_res <= 100 * tol.feastol
                  and min_eig >= -100 * tol.feastol
                  and dual_res <= 1e-4)
    if status == "optimal" and looks_good and gap <= 1e-4:
        st = "optimal"
    elif looks_good:
        st = "near_optimal"
    else:
        st = "numerical_failure"
    return ConicSolution(st, free, blocks, y, obj, residuals,
                         {"solver_status": status})


# ---------------------------------------------------------------------------
# SDPA sparse format (.dat-s)
#
# The file encodes: max tr(F0 Y) s.t. tr(Fi Y) = c_i, Y >= 0 (block diagonal).
# Our standard form min tr(C X) s.t. tr(Ai X) = b_i maps onto it with
# F0 = -C, Fi = Ai, c = b.  Free variables are split u - v into an extra
# diagonal block on write; files therefore always describe pure block
# problems, and read_sdpa returns free_dim == 0.
# ---------------------------------------------------------------------------


def _tri_entries(p: ConicProblem, entries) -> dict:
    """Aggregate row entries into trace-convention coefficients per
    (block, i, j): file value = row coef for diagonal, coef/2 off-diagonal."""
    acc: dict[tuple[int, int, int], float] = {}
    for ent in entries:
        if ent[0] != "b":
            continue
        _, blk, i, j, v = ent
        acc[(blk, i, j)] = acc.get((blk, i, j), 0.0) + (v if i == j else v / 2.0)
    return acc


def write_sdpa(p: ConicProblem, path: str) -> None:
    block_dims = list(p.block_dims)
    free_block = -1
    if p.free_dim > 0:
        free_block = len(block_dims)
        block_dims.append(-2 * p.free_dim)

    def expand(entries, obj_free):
        out = list(entries)
        if free_block >= 0:
            for i, v in enumerate(obj_free):
                if v != 0.0:
                    out.append(("b", free_block, 2 * i, 2 * i, v))
                    out.append(("b", free_block, 2 * i + 1, 2 * i + 1, -v))
        return out

    lines = []
    if p.comment:
        lines.append(f"* {p.comment}")
    lines.append(str(p.n_constraints))
    lines.append(str(len(block_dims)))
    lines.append(" ".join(str(d) for d in block_dims))
    lines.append(" ".join(f"{v:.17g}" for v in p.rhs))

    # F0 = -C
    obj_entries = expand(p.obj_blocks, p.obj_free)
    full = ConicProblem(0, tuple(block_dims), (), (), (), ())
    for (blk, i, j), v in sorted(_tri_entries(full, obj_entries).items()):
        if v != 0.0:
            lines.append(f"0 {blk + 1} {i + 1} {j + 1} {-v:.17g}")
    for r, entries in enumerate(p.rows):
        free_part = [0.0] * p.free_dim
        for ent in entries:
            if ent[0] == "f":
                free_part[ent[1]] += ent[2]
        ent2 = expand([e for e in entries if e[0] == "b"], free_part)
        for (blk, i, j), v in sorted(_tri_entries(full, ent2).items()):
            if v != 0.0:
                lines.append(f"{r + 1} {blk + 1} {i + 1} {j + 1} {v:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_sdpa(path: str) -> ConicProblem:
    with open(path) as fh:
        raw = fh.readlines()
    body = []
    comment = ""
    for line in raw:
        if line.startswith(("*", '"')):
            comment = line.lstrip('*" ').strip()
            continue
        line = line.strip()
        if line:
            body.append(line)
    if len(body) < 3:
        raise ValueError("malformed SDPA file: missing header")

    def nums(s: str) -> list[str]:
        for ch in "{}(),":
            s = s.replace(ch, " ")
        return s.split()

    try:
        m = int(nums(body[0])[0])
        nblocks = int(nums(body[1])[0])
        dims = tuple(int(t) for t in nums(body[2]))
        if len(dims) != nblocks:
            raise ValueError("block count mismatch")
        rhs = tuple(float(t) for t in nums(body[3])) if m > 0 else ()
        if len(rhs) != m:
            raise ValueError("rhs length mismatch")
    except (IndexError, ValueError) as exc:
        raise ValueError(f"malformed SDPA file: {exc}") from exc

    rows: list[list[RowEntry]] = [[] for _ in range(m)]
    obj: list[RowEntry] = []
    for line in body[4:]:
        t = nums(line)
        if len(t) != 5:
            raise ValueError(f"malformed SDPA entry: {line!r}")
        mat, blk, i, j, val = int(t[0]), int(t[1]) - 1, int(t[2]) - 1, int(t[3]) - 1, float(t[4])
        if not (0 <= blk < nblocks):
            raise ValueError(f"block index out of range: {line!r}")
        i, j = min(i, j), max(i, j)
        coef = val if i == j else 2.0 * val  # undo trace convention
        if mat == 0:
            obj.append(("b", blk, i, j, -coef))  # C = -F0
        elif 1 <= mat <= m:
            rows[mat - 1].append(("b", blk, i, j, coef))
        else:
            raise ValueError(f"matrix index out of range: {line!r}")
    return ConicProblem(0, dims, tuple(tuple(r) for r in rows), rhs,
                        (), tuple(obj), comment)
