"""Dense two-phase simplex with Bland's rule.

Small LPs only. The solver always returns a basic optimal solution (a vertex
of the feasible polytope) together with constraint multipliers, which is
what the extreme-point machinery needs; an interior-point method would not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PIVOT_TOL = 1e-9


class LpError(RuntimeError):
    """Numerical or structural failure; never swallowed."""


@dataclass
class LinearProgram:
    """max/min c.x subject to rows ``A x (sense) b`` and per-variable bounds.

    ``senses`` entries are ``"<="``, ``">="`` or ``"="``. ``bounds[j]`` is
    ``(lo, hi)`` with ``-inf``/``inf`` allowed. ``names[j]`` is any hashable
    tag, e.g. ``("a", node)``.
    """

    c: np.ndarray
    A: np.ndarray
    senses: list[str]
    b: np.ndarray
    bounds: list[tuple[float, float]]
    names: list = field(default_factory=list)
    maximize: bool = True
    row_names: list = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.A = np.asarray(self.A, dtype=float).reshape(len(self.b), len(self.c))
        if len(self.senses) != len(self.b):
            raise ValueError("one sense per constraint row required")
        if len(self.bounds) != len(self.c):
            raise ValueError("one bound pair per variable required")
        for s in self.senses:
            if s not in ("<=", ">=", "="):
                raise ValueError(f"bad constraint sense {s!r}")
        if not self.names:
            self.names = [f"x{j}" for j in range(len(self.c))]
        if not self.row_names:
            self.row_names = [f"r{i}" for i in range(len(self.b))]

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def index(self, name) -> int:
        return self.names.index(name)

    def to_lp_format(self) -> str:
        """CPLEX-style LP text, one constraint per line."""

        def var(j):
            name = self.names[j]
            if isinstance(name, tuple):
                name = "_".join(str(p) for p in name)
            return str(name).replace("-", "m").replace(" ", "")

        def expr(coefs):
            terms = [f"{'+' if v >= 0 else '-'} {abs(v):.17g} {var(j)}"
                     for j, v in enumerate(coefs) if v != 0]
            return " ".join(terms) if terms else "0"

        lines = ["Maximize" if self.maximize else "Minimize", f" obj: {expr(self.c)}", "Subject To"]
        for i in range(len(self.b)):
            lines.append(f" c{i}: {expr(self.A[i])} {self.senses[i]} {self.b[i]:.17g}")
        lines.append("Bounds")
        for j, (lo, hi) in enumerate(self.bounds):
            if math.isinf(lo) and math.isinf(hi):
                lines.append(f" {var(j)} free")
            else:
                lo_s = "-inf" if math.isinf(lo) else f"{lo:.17g}"
                hi_s = "+inf" if math.isinf(hi) else f"{hi:.17g}"
                lines.append(f" {lo_s} <= {var(j)} <= {hi_s}")
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass
class LpSolution:
    x: np.ndarray
    duals: np.ndarray  # d(objective)/d(b_i)
    objective: float
    basis: tuple[int, ...]  # standard-form column indices
    is_vertex: bool
    iterations: int = 0
    primal_residual: float = 0.0
    slackness_residual: float = 0.0

    def value_of(self, lp: LinearProgram, name) -> float:
        return float(self.x[lp.index(name)])


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    colvals = T[:, col].copy()
    colvals[row] = 0.0
    nz = np.nonzero(np.abs(colvals) > 0.0)[0]
    if nz.size:
        T[nz] -= np.outer(colvals[nz], T[row])


def _simplex(T: np.ndarray, basis: list[int], allowed: np.ndarray, tol: float, max_iter: int) -> int:
    """Minimize the cost row T[-1] (stored as reduced costs) in place."""
    m = len(basis)
    it = 0
    while True:
        reduced = T[-1, :-1]
        cand = np.nonzero((reduced < -tol) & allowed)[0]
        if cand.size == 0:
            return it
        col = int(cand[0])  # Bland: lowest index enters
        colv = T[:m, col]
        pos = np.nonzero(colv > tol)[0]
        if pos.size == 0:
            raise LpError("LP is unbounded")
        ratios = T[pos, -1] / colv[pos]
        best = ratios.min()
        ties = pos[ratios <= best + tol * max(1.0, abs(best))]
        row = int(min(ties, key=lambda r: basis[r]))  # Bland: lowest basic index leaves
        _pivot(T, row, col)
        basis[row] = col
        it += 1
        if it > max_iter:
            raise LpError(f"simplex exceeded {max_iter} iterations")


def solve_lp(lp: LinearProgram, tol: float = PIVOT_TOL, max_iter: int = 200_000) -> LpSolution:
    m, n = lp.shape
    # variable transform x = shift + sum(coef * std column)
    cols: list[tuple[int, float]] = []  # (original var, sign)
    shift = np.zeros(n)
    extra_rows: list[tuple[int, float]] = []  # x'_col <= ub
    for j, (lo, hi) in enumerate(lp.bounds):
        if lo > hi:
            raise LpError(f"empty bounds on variable {lp.names[j]}")
        if math.isfinite(lo):
            shift[j] = lo
            cols.append((j, 1.0))
            if math.isfinite(hi):
                extra_rows.append((len(cols) - 1, hi - lo))
        elif math.isfinite(hi):
            shift[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    nx = len(cols)
    S = np.zeros((n, nx))
    for k, (j, s) in enumerate(cols):
        S[j, k] = s

    A = lp.A @ S
    b = lp.b - lp.A @ shift
    senses = list(lp.senses)
    if extra_rows:
        U = np.zeros((len(extra_rows), nx))
        for r, (k, ub) in enumerate(extra_rows):
            U[r, k] = 1.0
        A = np.vstack([A, U])
        b = np.concatenate([b, [ub for _, ub in extra_rows]])
        senses += ["<="] * len(extra_rows)
    mm = A.shape[0]
    cost = (-lp.c if lp.maximize else lp.c) @ S

    slack_rows = [i for i, s in enumerate(senses) if s != "="]
    ns = len(slack_rows)
    Astd = np.zeros((mm, nx + ns))
    Astd[:, :nx] = A
    for k, i in enumerate(slack_rows):
        Astd[i, nx + k] = 1.0 if senses[i] == "<=" else -1.0
    bstd = b.copy()
    flip = bstd < 0
    Astd[flip] *= -1.0
    bstd[flip] *= -1.0
    row_sign = np.where(flip, -1.0, 1.0)

    # initial basis: slack with +1 where possible, artificial elsewhere
    basis: list[int] = []
    art_rows = []
    slack_col = {i: nx + k for k, i in enumerate(slack_rows)}
    for i in range(mm):
        sc = slack_col.get(i)
        if sc is not None and Astd[i, sc] > 0:
            basis.append(sc)
        else:
            basis.append(-1)
            art_rows.append(i)
    na = len(art_rows)
    N = nx + ns + na
    T = np.zeros((mm + 1, N + 1))
    T[:mm, : nx + ns] = Astd
    T[:mm, -1] = bstd
    for k, i in enumerate(art_rows):
        T[i, nx + ns + k] = 1.0
        basis[i] = nx + ns + k
    iters = 0
    if na:
        T[-1, nx + ns: N] = 1.0
        for i in art_rows:
            T[-1] -= T[i]
        iters += _simplex(T, basis, np.ones(N, dtype=bool), tol, max_iter)
        if -T[-1, -1] > 1e-7 * max(1.0, np.abs(bstd).max(initial=0.0)):
            raise LpError(f"LP is infeasible (phase one residual {-T[-1, -1]:.3g})")
        # drive remaining artificials out; rows with no usable pivot are redundant
        keep = []
        for r in range(mm):
            if basis[r] >= nx + ns:
                row = T[r, : nx + ns]
                cand = np.nonzero(np.abs(row) > tol)[0]
                if cand.size:
                    _pivot(T, r, int(cand[0]))
                    basis[r] = int(cand[0])
                    keep.append(r)
            else:
                keep.append(r)
        T = np.vstack([T[keep][:, list(range(nx + ns)) + [N]], np.zeros((1, nx + ns + 1))])
        basis = [basis[r] for r in keep]
        kept_rows = keep
    else:
        T = np.delete(T, slice(nx + ns, N), axis=1)
        kept_rows = list(range(mm))

    full_cost = np.concatenate([cost, np.zeros(ns)])
    T[-1, :-1] = full_cost
    T[-1, -1] = 0.0
    for r, bc in enumerate(basis):
        if full_cost[bc] != 0.0:
            T[-1] -= full_cost[bc] * T[r]
    iters += _simplex(T, basis, np.ones(nx + ns, dtype=bool), tol, max_iter)

    xstd = np.zeros(nx + ns)
    for r, bc in enumerate(basis):
        xstd[bc] = T[r, -1]
    xstd[np.abs(xstd) < 1e-13] = 0.0

    B = Astd[np.ix_(kept_rows, basis)]
    cond = np.linalg.cond(B) if B.size else 1.0
    if not np.isfinite(cond) or cond > 1e12:
        raise LpError(f"ill-conditioned final basis (cond={cond:.3g})")
    # refine basic values against the original data
    xb = np.linalg.solve(B, bstd[kept_rows])
    if np.max(np.abs(xb - xstd[basis]), initial=0.0) < 1e-7:
        xstd[basis] = xb
        xstd[np.abs(xstd) < 1e-13] = 0.0
    ystd_kept = np.linalg.solve(B.T, full_cost[basis])
    ystd = np.zeros(mm)
    ystd[kept_rows] = ystd_kept
    # min-problem multipliers of the sign-normalized rows -> d(obj)/d(b)
    duals = ystd * row_sign
    if lp.maximize:
        duals = -duals
    duals = duals[:m]

    x = shift + S @ xstd[:nx]
    x[np.abs(x) < 1e-13] = 0.0
    obj = float(lp.c @ x)

    resid = lp.A @ x - lp.b
    viol = 0.0
    for i, s in enumerate(lp.senses):
        if s == "<=":
            viol = max(viol, resid[i])
        elif s == ">=":
            viol = max(viol, -resid[i])
        else:
            viol = max(viol, abs(resid[i]))
    for j, (lo, hi) in enumerate(lp.bounds):
        viol = max(viol, lo - x[j], x[j] - hi)
    if viol > 1e-7:
        raise LpError(f"primal infeasibility {viol:.3g} after solve (cond={cond:.3g})")
    slack = float(np.max(np.abs(duals * resid), initial=0.0))

    return LpSolution(x=x, duals=duals, objective=obj, basis=tuple(basis),
                      is_vertex=_is_vertex(lp, x), iterations=iters,
                      primal_residual=float(viol), slackness_residual=slack)


def _is_vertex(lp: LinearProgram, x: np.ndarray, tol: float = 1e-9) -> bool:
    """A point is a vertex iff its active constraints have full column rank."""
    n = lp.shape[1]
    rows = []
    resid = lp.A @ x - lp.b
    for i, s in enumerate(lp.senses):
        if s == "=" or abs(resid[i]) <= tol:
            rows.append(lp.A[i])
    eye = np.eye(n)
    for j, (lo, hi) in enumerate(lp.bounds):
        if abs(x[j] - lo) <= tol or abs(x[j] - hi) <= tol:
            rows.append(eye[j])
    if not rows:
        return n == 0
    return int(np.linalg.matrix_rank(np.array(rows), tol=1e-9)) == n


def enumerate_vertices(lp: LinearProgram, tol: float = 1e-9) -> list[np.ndarray]:
    """All vertices of the feasible polytope, by brute force over active sets.

    Independent of the simplex code: every choice of n linearly independent
    constraints (rows or bounds) taken as equalities gives a candidate point,
    kept if it is feasible. Exponential; tiny LPs only.
    """
    from itertools import combinations

    m, n = lp.shape
    rows, rhs = [], []
    for i in range(m):
        rows.append(lp.A[i])
        rhs.append(lp.b[i])
    eye = np.eye(n)
    for j, (lo, hi) in enumerate(lp.bounds):
        if math.isfinite(lo):
            rows.append(eye[j])
            rhs.append(lo)
        if math.isfinite(hi):
            rows.append(eye[j])
            rhs.append(hi)
    G = np.array(rows).reshape(-1, n)
    h = np.array(rhs)
    eq = [i for i, s in enumerate(lp.senses) if s == "="]
    others = [i for i in range(len(h)) if i not in eq]
    found: list[np.ndarray] = []
    need = n - len(eq)
    if need < 0:
        return found
    for combo in combinations(others, need):
        idx = eq + list(combo)
        sub = G[idx]
        if np.linalg.matrix_rank(sub) < n:
            continue
        pt = np.linalg.solve(sub, h[idx])
        if not _feasible(lp, pt, tol):
            continue
        if not any(np.max(np.abs(pt - f)) <= tol for f in found):
            found.append(pt)
    return found


def _feasible(lp: LinearProgram, x: np.ndarray, tol: float) -> bool:
    r = lp.A @ x - lp.b
    for i, s in enumerate(lp.senses):
        if (s == "<=" and r[i] > tol) or (s == ">=" and r[i] < -tol) or (s == "=" and abs(r[i]) > tol):
            return False
    return all(lo - tol <= v <= hi + tol for v, (lo, hi) in zip(x, lp.bounds))


def lp_from_rows(c: Sequence[float], rows: Sequence[tuple[Sequence[float], str, float]],
                 bounds=None, maximize: bool = True, names=None) -> LinearProgram:
    c = np.asarray(c, dtype=float)
    A = np.array([r[0] for r in rows], dtype=float).reshape(len(rows), len(c))
    return LinearProgram(c, A, [r[1] for r in rows], np.array([r[2] for r in rows], dtype=float),
                         bounds or [(0.0, math.inf)] * len(c), names or [], maximize)
