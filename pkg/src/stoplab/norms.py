"""Finite versions of the sup-over-stopping-times norm and the projection
seminorm, which agree on every finite tree."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .filtration import FiltrationTree
from .lp import LinearProgram, solve_lp
from .processes import LadlagReward
from .relaxation import build_primal_lp
from .snell import solve_os


@dataclass
class NormReport:
    sup_norm: float
    proj_norm: float
    witness_z: list[list[float]]  # witness_z[i][t] on tree.paths[i]

    @property
    def equal(self) -> bool:
        return abs(self.sup_norm - self.proj_norm) <= 1e-8


def sup_norm(tree: FiltrationTree, y: LadlagReward) -> float:
    """sup over stopping times of E|y_tau|; the pre track is ignored."""
    absy = LadlagReward.optional_only(tree, {n: abs(v) for n, v in y.opt.items()})
    return solve_os(tree, absy).value


def projection_lp(tree: FiltrationTree, y: LadlagReward) -> LinearProgram:
    """min E[max_t |z_t|] over path processes z whose optional projection is y.

    Columns: z[i, t] for every path i and time t (free), then s[i] >= 0.
    """
    T = tree.horizon
    npaths = len(tree.paths)
    nz = npaths * (T + 1)
    nvar = nz + npaths

    def zcol(i, t):
        return i * (T + 1) + t

    pw = [tree.prob[p[-1]] for p in tree.paths]
    rows, senses, rhs = [], [], []
    through: dict[int, list[int]] = {n: [] for n in tree.order}
    for i, path in enumerate(tree.paths):
        for n in path:
            through[n].append(i)
    for n in tree.order:
        row = np.zeros(nvar)
        t = tree.time(n)
        for i in through[n]:
            row[zcol(i, t)] = pw[i] / tree.prob[n]
        rows.append(row)
        senses.append("=")
        rhs.append(y.opt[n])
    for i in range(npaths):
        for t in range(T + 1):
            for sign in (1.0, -1.0):
                row = np.zeros(nvar)
                row[zcol(i, t)] = sign
                row[nz + i] = -1.0
                rows.append(row)
                senses.append("<=")
                rhs.append(0.0)
    c = np.concatenate([np.zeros(nz), pw])
    bounds = [(-math.inf, math.inf)] * nz + [(0.0, math.inf)] * npaths
    names = [("z", i, t) for i in range(npaths) for t in range(T + 1)] + [("s", i) for i in range(npaths)]
    return LinearProgram(c, np.array(rows), senses, np.array(rhs), bounds, names, maximize=False)


def proj_norm(tree: FiltrationTree, y: LadlagReward) -> NormReport:
    lp = projection_lp(tree, y)
    sol = solve_lp(lp)
    T = tree.horizon
    z = [[float(sol.x[i * (T + 1) + t]) for t in range(T + 1)] for i in range(len(tree.paths))]
    return NormReport(sup_norm(tree, y), sol.objective, z)


def nonneg_norm_identity(tree: FiltrationTree, y: LadlagReward) -> tuple[float, float]:
    """(value of the relaxed stopping LP, sup_norm) for a nonnegative reward."""
    if any(v < 0 for v in y.opt.values()):
        raise ValueError("reward must be nonnegative")
    sol = solve_lp(build_primal_lp(tree, y, quasi=False))
    return sol.objective, sup_norm(tree, y)
