"""Backward induction for optimal stopping and quasi-stopping on a tree.

Slots along a path are visited in the order 0, 1-, 1, 2-, 2, ..., T, T+.
``W`` is the value at slot t (node ``n``), ``C`` the value at slot (t+1)-
(stored on the time-t node, which already knows it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .filtration import FiltrationTree, expect_children
from .processes import LadlagReward

MARTINGALE_TOL = 1e-12


@dataclass(frozen=True)
class QuasiStoppingTime:
    """Pure quasi-stopping time given by decision sets.

    ``opt_stops``: nodes where we stop at the node's own slot.
    ``pre_stops``: non-terminal nodes from which we stop at the next
    predictable slot. A path without a marker never stops.
    """

    opt_stops: frozenset = field(default_factory=frozenset)
    pre_stops: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "opt_stops", frozenset(self.opt_stops))
        object.__setattr__(self, "pre_stops", frozenset(self.pre_stops))

    @property
    def is_stopping_time(self) -> bool:
        return not self.pre_stops

    def validate(self, tree: FiltrationTree) -> "QuasiStoppingTime":
        for n in self.opt_stops:
            if n not in tree.nodes:
                raise ValueError(f"unknown node {n} in opt_stops")
        for p in self.pre_stops:
            if p not in tree.nodes:
                raise ValueError(f"unknown node {p} in pre_stops")
            if tree.is_terminal(p):
                raise ValueError(f"pre-stop from terminal node {p}")
        for path in tree.paths:
            marks = sum(n in self.opt_stops for n in path) + sum(n in self.pre_stops for n in path)
            if marks > 1:
                raise ValueError(f"path ending at node {path[-1]} has {marks} stop markers")
        return self

    def describe(self, tree: FiltrationTree) -> list[str]:
        lines = []
        for n in sorted(self.opt_stops | self.pre_stops, key=lambda i: (tree.time(i), tree.order.index(i))):
            t = tree.time(n)
            if n in self.opt_stops:
                lines.append(f"stop at node {tree.name(n)} (t={t})")
            if n in self.pre_stops:
                lines.append(f"pre-stop at slot {t + 1}- from node {tree.name(n)}")
        return lines or ["never stop"]

    def to_dict(self) -> dict:
        return {"opt_stops": sorted(self.opt_stops), "pre_stops": sorted(self.pre_stops)}


StoppingTime = QuasiStoppingTime


@dataclass
class SnellSolution:
    W: dict[int, float]
    C: dict[int, float]
    value: float
    policy: QuasiStoppingTime
    continuation: dict[int, float]  # E[W_{t+1} | F_t] on non-terminal nodes


@dataclass
class DoobDecomposition:
    M: dict[int, float]
    A: dict[int, float]


def _backward(tree: FiltrationTree, opt, pre) -> SnellSolution:
    W: dict[int, float] = {}
    C: dict[int, float] = {}
    cont: dict[int, float] = {}
    for n in reversed(tree.order):
        if tree.is_terminal(n):
            W[n] = max(opt[n], 0.0)
            continue
        cont[n] = expect_children(tree, W, n)
        C[n] = max(pre(n), cont[n])
        W[n] = max(opt[n], C[n])

    # earliest weakly optimal slot, t- before t, ties toward stopping
    opt_stops, pre_stops = set(), set()
    stack = [tree.root]
    while stack:
        n = stack.pop()
        if tree.is_terminal(n):
            if opt[n] >= 0.0:
                opt_stops.add(n)
            continue
        if opt[n] >= C[n]:
            opt_stops.add(n)
        elif pre(n) >= cont[n]:
            pre_stops.add(n)
        else:
            stack.extend(tree.children[n])
    return SnellSolution(W, C, W[tree.root], QuasiStoppingTime(opt_stops, pre_stops), cont)


def quasi_snell(tree: FiltrationTree, y: LadlagReward) -> SnellSolution:
    """Value of the quasi-stopping problem max E[R_tau + pre_{tau~}]."""
    return _backward(tree, y.opt, y.pre.__getitem__)


def solve_os(tree: FiltrationTree, y: LadlagReward) -> SnellSolution:
    """Ordinary optimal stopping: the pre track is ignored."""
    return _backward(tree, y.opt, lambda n: -math.inf)


def evaluate_policy(tree: FiltrationTree, y: LadlagReward, q: QuasiStoppingTime,
                    validate: bool = True) -> float:
    if validate:
        q.validate(tree)
    return (math.fsum(tree.prob[n] * y.opt[n] for n in q.opt_stops)
            + math.fsum(tree.prob[p] * y.pre[p] for p in q.pre_stops))


def doob(tree: FiltrationTree, s: SnellSolution) -> DoobDecomposition:
    """Split the envelope ``W`` into martingale minus increasing predictable part."""
    M = {tree.root: s.W[tree.root]}
    for n in tree.order:
        for c in tree.children[n]:
            M[c] = M[n] + s.W[c] - s.continuation[n]
    A = {n: M[n] - s.W[n] for n in tree.order}
    return DoobDecomposition(M, A)
