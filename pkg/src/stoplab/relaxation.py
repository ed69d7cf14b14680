"""The convex relaxation over randomized quasi-stopping times as an LP,
extreme-point tests, splitting of non-extreme points and purification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .filtration import FiltrationTree
from .lp import LinearProgram, LpSolution, solve_lp
from .processes import LadlagReward
from .snell import QuasiStoppingTime, evaluate_policy

FEAS_TOL = 1e-9


@dataclass
class RandomizedQuasiStopping:
    """Stopping mass ``a[n]`` at slot t of node n and ``b[p]`` at slot (t+1)-
    announced at non-terminal node p. Path totals at most one."""

    a: dict[int, float] = field(default_factory=dict)
    b: dict[int, float] = field(default_factory=dict)

    @classmethod
    def from_policy(cls, tree: FiltrationTree, q: QuasiStoppingTime) -> "RandomizedQuasiStopping":
        return cls({n: float(n in q.opt_stops) for n in tree.order},
                   {p: float(p in q.pre_stops) for p in tree.nonterminal})

    @classmethod
    def from_lp(cls, tree: FiltrationTree, lp: LinearProgram, sol: LpSolution) -> "RandomizedQuasiStopping":
        a = {n: 0.0 for n in tree.order}
        b = {p: 0.0 for p in tree.nonterminal}
        for j, (kind, node) in enumerate(lp.names):
            (a if kind == "a" else b)[node] = float(sol.x[j])
        return cls(a, b)

    def path_mass(self, tree: FiltrationTree) -> list[float]:
        return [sum(self.a.get(n, 0.0) for n in path) + sum(self.b.get(p, 0.0) for p in path[:-1])
                for path in tree.paths]

    def check(self, tree: FiltrationTree, tol: float = FEAS_TOL) -> "RandomizedQuasiStopping":
        for n, v in self.a.items():
            if n not in tree.nodes:
                raise ValueError(f"unknown node {n} in a")
            if v < -1e-12:
                raise ValueError(f"negative mass {v} at node {n}")
        for p, v in self.b.items():
            if p not in tree.nodes or tree.is_terminal(p):
                raise ValueError(f"b mass on terminal or unknown node {p}")
            if v < -1e-12:
                raise ValueError(f"negative predictable mass {v} at node {p}")
        for path, mass in zip(tree.paths, self.path_mass(tree)):
            if mass > 1.0 + tol:
                raise ValueError(f"path ending at node {path[-1]} carries mass {mass} > 1")
        return self

    def objective(self, tree: FiltrationTree, y: LadlagReward) -> float:
        return (math.fsum(tree.prob[n] * y.opt[n] * v for n, v in self.a.items())
                + math.fsum(tree.prob[p] * y.pre[p] * v for p, v in self.b.items()))


def build_primal_lp(tree: FiltrationTree, y: LadlagReward, quasi: bool = True) -> LinearProgram:
    """One path constraint per leaf: total stopping mass along the path <= 1."""
    names = [("a", n) for n in tree.order]
    c = [tree.prob[n] * y.opt[n] for n in tree.order]
    if quasi:
        names += [("b", p) for p in tree.nonterminal]
        c += [tree.prob[p] * y.pre[p] for p in tree.nonterminal]
    col = {name: j for j, name in enumerate(names)}
    A = np.zeros((len(tree.paths), len(names)))
    for i, path in enumerate(tree.paths):
        for n in path:
            A[i, col["a", n]] = 1.0
        if quasi:
            for p in path[:-1]:
                A[i, col["b", p]] = 1.0
    return LinearProgram(np.array(c), A, ["<="] * len(tree.paths), np.ones(len(tree.paths)),
                         [(0.0, math.inf)] * len(names), names, maximize=True,
                         row_names=[("path", p[-1]) for p in tree.paths])


def solve_relaxation(tree: FiltrationTree, y: LadlagReward, quasi: bool = True):
    lp = build_primal_lp(tree, y, quasi)
    sol = solve_lp(lp)
    return lp, sol, RandomizedQuasiStopping.from_lp(tree, lp, sol)


def _near01(v: float, tol: float) -> bool:
    return abs(v) <= tol or abs(v - 1.0) <= tol


def is_extreme(tree: FiltrationTree, x: RandomizedQuasiStopping, tol: float = FEAS_TOL) -> bool:
    x.check(tree, tol)
    if not all(_near01(v, tol) for v in x.a.values()):
        return False
    if not all(_near01(v, tol) for v in x.b.values()):
        return False
    return all(_near01(m, tol) for m in x.path_mass(tree))


def cumulative_mass(tree: FiltrationTree, x: RandomizedQuasiStopping):
    """Cumulative mass up to and including each node slot and each pre slot.

    Returns ``(at_node, at_pre, before_node)`` where ``before_node[n]`` is the
    mass accumulated strictly before slot t of node n.
    """
    at_node, at_pre, before = {}, {}, {}
    for n in tree.order:
        par = tree.parent(n)
        before[n] = 0.0 if par is None else at_pre[par]
        at_node[n] = before[n] + x.a.get(n, 0.0)
        if not tree.is_terminal(n):
            at_pre[n] = at_node[n] + x.b.get(n, 0.0)
    return at_node, at_pre, before


def _transform(tree, x, fn) -> RandomizedQuasiStopping:
    at_node, at_pre, before = cumulative_mass(tree, x)
    a = {n: fn(at_node[n]) - fn(before[n]) for n in tree.order}
    b = {p: fn(at_pre[p]) - fn(at_node[p]) for p in tree.nonterminal}
    return RandomizedQuasiStopping(a, b)


def split_nonextreme(tree: FiltrationTree, x: RandomizedQuasiStopping, s: float,
                     tol: float = FEAS_TOL):
    """Write a non-extreme ``x`` as ``s*x1 + (1-s)*x2`` with x1 != x2.

    The cumulative mass X along each path is cut at level ``s``:
    x1 = min(X, s)/s and x2 = max(X - s, 0)/(1 - s), then differenced back
    into slot masses. Returns ``(x1, x2, (s, 1 - s))``.
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"threshold {s} outside the mass range (0, 1)")
    if is_extreme(tree, x, tol):
        raise ValueError("x is extreme")
    x1 = _transform(tree, x, lambda v: min(v, s) / s)
    x2 = _transform(tree, x, lambda v: max(v - s, 0.0) / (1.0 - s))
    return x1, x2, (s, 1.0 - s)


def level_crossing(tree: FiltrationTree, x: RandomizedQuasiStopping, level: float,
                   tol: float = 1e-12) -> QuasiStoppingTime:
    """First slot at which cumulative path mass reaches ``level``."""
    at_node, at_pre, _ = cumulative_mass(tree, x)
    opt, pre = set(), set()
    stack = [tree.root]
    while stack:
        n = stack.pop()
        if at_node[n] >= level - tol:
            opt.add(n)
        elif not tree.is_terminal(n):
            if at_pre[n] >= level - tol:
                pre.add(n)
            else:
                stack.extend(tree.children[n])
    return QuasiStoppingTime(opt, pre)


def purify(tree: FiltrationTree, y: LadlagReward, x: RandomizedQuasiStopping) -> QuasiStoppingTime:
    """Best level-crossing stopping time over all mass thresholds in (0, 1].

    The objective of ``x`` is the threshold-average of the level-crossing
    values, so the best one is at least as good as ``x``.
    """
    x.check(tree)
    at_node, at_pre, _ = cumulative_mass(tree, x)
    levels = sorted({round(v, 12) for v in list(at_node.values()) + list(at_pre.values())
                     if 1e-12 < v})
    levels = [min(v, 1.0) for v in levels]
    best, best_val = QuasiStoppingTime(), -math.inf
    for s in levels:
        q = level_crossing(tree, x, s)
        val = evaluate_policy(tree, y, q, validate=False)
        if val > best_val + 1e-15:
            best, best_val = q, val
    return best
