"""Reward processes with an optional track and a predictable left track."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .filtration import FiltrationTree, expect_children

DEFAULT_TOL = 1e-9
# stands for "no predictable stop available" so the pre track stays total
NO_PRE_STOP = -1e18


@dataclass(frozen=True)
class LadlagReward:
    """``opt[n]`` is the reward for stopping at node ``n``; ``pre[p]`` is the
    left-limit reward collected at slot (t+1)- and is attached to the time-t
    node ``p``, so it is known one tick in advance. Stopping never pays 0."""

    opt: Mapping[int, float]
    pre: Mapping[int, float]

    def check(self, tree: FiltrationTree) -> "LadlagReward":
        for n in tree.order:
            if n not in self.opt:
                raise ValueError(f"opt track missing node {n}")
            if not math.isfinite(self.opt[n]):
                raise ValueError(f"opt track not finite at node {n}")
            if tree.children[n]:
                if n not in self.pre:
                    raise ValueError(f"pre track missing non-terminal node {n}")
                if not math.isfinite(self.pre[n]):
                    raise ValueError(f"pre track not finite at node {n}")
        return self

    @classmethod
    def cadlag(cls, tree: FiltrationTree, opt: Mapping[int, float]) -> "LadlagReward":
        """Embedding with pre(p) := opt(p)."""
        return cls(dict(opt), {p: opt[p] for p in tree.nonterminal})

    @classmethod
    def optional_only(cls, tree: FiltrationTree, opt: Mapping[int, float]) -> "LadlagReward":
        return cls(dict(opt), {p: NO_PRE_STOP for p in tree.nonterminal})


@dataclass
class RegularityReport:
    is_subregular: bool
    is_regular: bool
    violations: list[tuple[int, float, float]] = field(default_factory=list)


def predictable_projection(tree: FiltrationTree, y: LadlagReward) -> dict[int, float]:
    """E[R_{t+1} | F_t], keyed by the time-t node."""
    return {p: expect_children(tree, y.opt, p) for p in tree.nonterminal}


def optional_projection(tree: FiltrationTree, z: Sequence[Sequence[float]]) -> dict[int, float]:
    """Optional projection of a path-indexed process.

    ``z[i][t]`` is the value at time ``t`` on ``tree.paths[i]``. The result at
    node ``n`` averages ``z`` over the paths through ``n``, weighted by their
    conditional probabilities.
    """
    if len(z) != len(tree.paths):
        raise ValueError(f"z has {len(z)} paths, tree has {len(tree.paths)}")
    num: dict[int, float] = {n: 0.0 for n in tree.order}
    for i, path in enumerate(tree.paths):
        if len(z[i]) != tree.horizon + 1:
            raise ValueError(f"z missing entries on path {i}")
        w = tree.prob[path[-1]]
        for t, n in enumerate(path):
            num[n] += w * z[i][t]
    return {n: num[n] / tree.prob[n] for n in tree.order}


def classify_regularity(tree: FiltrationTree, y: LadlagReward, tol: float = DEFAULT_TOL) -> RegularityReport:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    proj = predictable_projection(tree, y)
    sub = reg = True
    violations = []
    for p, pr in proj.items():
        v = y.pre[p]
        if v > pr + tol:
            sub = reg = False
            violations.append((p, v, pr))
        elif abs(v - pr) > tol:
            reg = False
            violations.append((p, v, pr))
    return RegularityReport(sub, reg, violations)


@dataclass(frozen=True)
class PiecewiseLinear:
    """g(x) = value + slopes[i]*(x - breakpoints[i]) pieced together.

    ``slopes`` has one more entry than ``breakpoints``: slopes[0] applies left
    of the first breakpoint and slopes[-1] right of the last. ``value`` is
    g(breakpoints[0]).
    """

    breakpoints: tuple[float, ...]
    slopes: tuple[float, ...]
    value: float = 0.0

    def __post_init__(self):
        if len(self.slopes) != len(self.breakpoints) + 1:
            raise ValueError("need exactly one more slope than breakpoints")
        if any(b2 <= b1 for b1, b2 in zip(self.breakpoints, self.breakpoints[1:])):
            raise ValueError("breakpoints must be strictly increasing")

    @property
    def is_convex(self) -> bool:
        return all(s2 >= s1 for s1, s2 in zip(self.slopes, self.slopes[1:]))

    @property
    def is_increasing(self) -> bool:
        return self.slopes[0] >= 0

    def __call__(self, x: float) -> float:
        bps = self.breakpoints
        if not bps:
            return self.value + self.slopes[0] * x
        i = bisect.bisect_right(bps, x)
        if i == 0:
            return self.value + self.slopes[0] * (x - bps[0])
        y = self.value
        for k in range(1, i):
            y += self.slopes[k] * (bps[k] - bps[k - 1])
        return y + self.slopes[i] * (x - bps[i - 1])


IDENTITY = PiecewiseLinear((), (1.0,), 0.0)
ABS = PiecewiseLinear((0.0,), (-1.0, 1.0), 0.0)
POSITIVE_PART = PiecewiseLinear((0.0,), (0.0, 1.0), 0.0)


def compose_convex(tree: FiltrationTree, y: LadlagReward, g: PiecewiseLinear,
                   increasing: bool = False, tol: float = DEFAULT_TOL):
    """Apply a convex ``g`` to both tracks.

    Regular ``y`` (or subregular ``y`` with increasing ``g``) gives a
    subregular result by conditional Jensen. Returns ``(reward, report)``.
    """
    if not g.is_convex:
        raise ValueError("g is not convex: slopes decrease")
    if increasing:
        if not g.is_increasing:
            raise ValueError("g declared increasing but has a negative slope")
        if not classify_regularity(tree, y, tol).is_subregular:
            raise ValueError("increasing composition requires a subregular reward")
    elif not classify_regularity(tree, y, tol).is_regular:
        raise ValueError("composition with a non-monotone g requires a regular reward")
    out = LadlagReward({n: g(v) for n, v in y.opt.items()},
                       {p: g(v) for p, v in y.pre.items()})
    return out, classify_regularity(tree, out, tol)
