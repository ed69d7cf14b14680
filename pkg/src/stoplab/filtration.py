"""Finite filtered probability spaces represented as scenario trees.

A path through the tree from the root to a leaf is a sample point; the
atoms of the time-t sigma-algebra are the time-t nodes. Information arrives
only at integer ticks, so the sigma-algebra "just before" t+1 coincides with
the one at t.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping

PROB_TOL = 1e-12
DEFAULT_NODE_CAP = 10**5

NodeFunction = dict  # node id -> float


class TreeError(ValueError):
    """Raised when a node list does not describe a valid filtration tree."""

    def __init__(self, message: str, node=None):
        super().__init__(message if node is None else f"{message} (node {node})")
        self.node = node


class CapExceeded(RuntimeError):
    pass


def node_cap(default: int = DEFAULT_NODE_CAP) -> int:
    """Enumeration / expansion cap, overridable through ``STOPLAB_NODE_CAP``."""
    raw = os.environ.get("STOPLAB_NODE_CAP")
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"STOPLAB_NODE_CAP must be an integer, got {raw!r}") from None


@dataclass(frozen=True)
class Node:
    id: int
    time: int
    parent: int | None
    cond_prob: float
    label: str | None = None

    @property
    def name(self) -> str:
        return self.label if self.label is not None else str(self.id)


@dataclass(frozen=True, eq=False)
class FiltrationTree:
    """Validated, immutable scenario tree. Build it with :func:`validate_tree`."""

    horizon: int
    nodes: Mapping[int, Node]
    children: Mapping[int, tuple[int, ...]]
    root: int
    order: tuple[int, ...]  # breadth first, so time is nondecreasing
    prob: Mapping[int, float] = field(repr=False)
    paths: tuple[tuple[int, ...], ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node) -> bool:
        return node in self.nodes

    def time(self, node: int) -> int:
        return self.nodes[node].time

    def parent(self, node: int) -> int | None:
        return self.nodes[node].parent

    def is_terminal(self, node: int) -> bool:
        return not self.children[node]

    @property
    def leaves(self) -> tuple[int, ...]:
        return tuple(p[-1] for p in self.paths)

    @property
    def nonterminal(self) -> tuple[int, ...]:
        return tuple(n for n in self.order if self.children[n])

    def at_time(self, t: int) -> tuple[int, ...]:
        return tuple(n for n in self.order if self.nodes[n].time == t)

    def name(self, node: int) -> str:
        return self.nodes[node].name

    def path_to(self, node: int) -> tuple[int, ...]:
        out = []
        cur: int | None = node
        while cur is not None:
            out.append(cur)
            cur = self.nodes[cur].parent
        return tuple(reversed(out))

    def paths_through(self, node: int) -> list[int]:
        """Indices of the leaf paths passing through ``node``."""
        t = self.nodes[node].time
        return [i for i, p in enumerate(self.paths) if p[t] == node]

    def to_records(self) -> list[dict]:
        return [
            {"id": n.id, "time": n.time, "parent": n.parent, "cond_prob": n.cond_prob,
             **({"label": n.label} if n.label is not None else {})}
            for n in (self.nodes[i] for i in self.order)
        ]


def _as_node(raw) -> Node:
    if isinstance(raw, Node):
        return raw
    if isinstance(raw, Mapping):
        prob = raw.get("cond_prob", raw.get("prob"))
        return Node(int(raw["id"]), int(raw["time"]),
                    None if raw.get("parent") is None else int(raw["parent"]),
                    float(prob), raw.get("label"))
    nid, time, parent, prob, *rest = raw
    return Node(int(nid), int(time), None if parent is None else int(parent),
                float(prob), rest[0] if rest else None)


def validate_tree(raw: Iterable, horizon: int, renormalize: bool = False) -> FiltrationTree:
    """Check a node list and return an immutable :class:`FiltrationTree`.

    ``raw`` holds ``Node`` objects, mappings with keys ``id, time, parent,
    cond_prob`` (optionally ``label``) or tuples in that order. Sibling
    probabilities must sum to one within 1e-12 unless ``renormalize`` is set.
    """
    if horizon < 0:
        raise TreeError(f"horizon must be nonnegative, got {horizon}")
    nodes: dict[int, Node] = {}
    for item in raw:
        node = _as_node(item)
        if node.id in nodes:
            raise TreeError("duplicate id", node.id)
        if not math.isfinite(node.cond_prob) or not 0.0 < node.cond_prob <= 1.0:
            raise TreeError(f"cond_prob must lie in (0, 1], got {node.cond_prob}", node.id)
        nodes[node.id] = node
    if not nodes:
        raise TreeError("tree has no nodes")

    roots = [n for n in nodes.values() if n.parent is None]
    if len(roots) != 1:
        raise TreeError(f"expected exactly one root, found {len(roots)}")
    root = roots[0]
    if root.time != 0:
        raise TreeError("root must have time 0", root.id)
    if abs(root.cond_prob - 1.0) > PROB_TOL:
        raise TreeError("root must have cond_prob 1", root.id)

    children: dict[int, list[int]] = {i: [] for i in nodes}
    for n in nodes.values():
        if n.parent is None:
            continue
        if n.parent not in nodes:
            raise TreeError(f"dangling parent {n.parent}", n.id)
        if n.time != nodes[n.parent].time + 1:
            raise TreeError("child time must be parent time+1", n.id)
        children[n.parent].append(n.id)

    # walking down from the root also rules out cycles: nodes on a cycle are never reached
    order = [root.id]
    for nid in order:
        order.extend(children[nid])
    if len(order) != len(nodes):
        unreached = sorted(set(nodes) - set(order))
        raise TreeError("node not reachable from root (cycle)", unreached[0])

    for nid in order:
        kids = children[nid]
        if not kids:
            if nodes[nid].time != horizon:
                raise TreeError(f"leaf at wrong depth {nodes[nid].time} != {horizon}", nid)
            continue
        total = math.fsum(nodes[k].cond_prob for k in kids)
        if abs(total - 1.0) > PROB_TOL:
            if not renormalize:
                label = "root" if nid == root.id else f"node {nid}"
                raise TreeError(f"probability sum mismatch at {label}: {total!r}", nid)
            for k in kids:
                n = nodes[k]
                nodes[k] = Node(n.id, n.time, n.parent, n.cond_prob / total, n.label)

    prob = {root.id: 1.0}
    for nid in order[1:]:
        prob[nid] = prob[nodes[nid].parent] * nodes[nid].cond_prob

    paths: list[tuple[int, ...]] = []
    stack: list[tuple[int, tuple[int, ...]]] = [(root.id, ())]
    while stack:
        nid, prefix = stack.pop()
        prefix = prefix + (nid,)
        if not children[nid]:
            paths.append(prefix)
        stack.extend((k, prefix) for k in reversed(children[nid]))
    return FiltrationTree(
        horizon=horizon,
        nodes=nodes,
        children={k: tuple(v) for k, v in children.items()},
        root=root.id,
        order=tuple(order),
        prob=prob,
        paths=tuple(paths),
    )


def atom_probability(tree: FiltrationTree, node: int) -> float:
    if node not in tree.nodes:
        raise KeyError(f"unknown node id {node!r}")
    return tree.prob[node]


def conditional_expectation(tree: FiltrationTree, f: Mapping[int, float], t: int) -> dict[int, float]:
    """E[f | F_t] for ``f`` given on the time-(t+1) nodes."""
    out = {}
    for p in tree.at_time(t):
        acc = 0.0
        for c in tree.children[p]:
            if c not in f:
                raise KeyError(f"function missing value at child node {c}")
            acc += tree.nodes[c].cond_prob * f[c]
        out[p] = acc
    return out


def expect_children(tree: FiltrationTree, f: Mapping[int, float], node: int) -> float:
    """One-step conditional expectation of ``f`` at a single non-terminal node."""
    return sum(tree.nodes[c].cond_prob * f[c] for c in tree.children[node])


def expectation(tree: FiltrationTree, f: Mapping[int, float], t: int | None = None) -> float:
    t = tree.horizon if t is None else t
    return math.fsum(tree.prob[n] * f[n] for n in tree.at_time(t))


def path_probabilities(tree: FiltrationTree) -> list[float]:
    return [tree.prob[p[-1]] for p in tree.paths]


# --- brute-force enumeration -------------------------------------------------

def count_stopping_times(tree: FiltrationTree, quasi: bool = False) -> int:
    """Number of (quasi-)stopping times, computed without enumerating them."""
    count: dict[int, int] = {}
    for nid in reversed(tree.order):
        kids = tree.children[nid]
        if not kids:
            count[nid] = 2
            continue
        prod = 1
        for k in kids:
            prod *= count[k]
        count[nid] = 1 + prod + (1 if quasi else 0)
    return count[tree.root]


def _enumerate(tree: FiltrationTree, quasi: bool, cap: int | None):
    from .snell import QuasiStoppingTime

    cap = node_cap() if cap is None else cap
    total = count_stopping_times(tree, quasi)
    if total > cap:
        raise CapExceeded(f"{total} {'quasi-' if quasi else ''}stopping times exceed cap {cap}")

    options: dict[int, list[tuple[frozenset, frozenset]]] = {}
    for nid in reversed(tree.order):
        out = [(frozenset([nid]), frozenset())]
        kids = tree.children[nid]
        if not kids:
            out.append((frozenset(), frozenset()))
        else:
            if quasi:
                out.append((frozenset(), frozenset([nid])))
            combos = [(frozenset(), frozenset())]
            for k in kids:
                child = options.pop(k)
                combos = [(a | ka, b | kb) for a, b in combos for ka, kb in child]
            out.extend(combos)
        options[nid] = out

    return [QuasiStoppingTime(a, b) for a, b in options[tree.root]]


def enumerate_stopping_times(tree: FiltrationTree, cap: int | None = None):
    """All stopping times (including never-stop) as decision sets."""
    return _enumerate(tree, False, cap)


def enumerate_quasi_stopping_times(tree: FiltrationTree, cap: int | None = None):
    """All quasi-stopping times: optional stops at nodes, predictable stops at the
    slot after a non-terminal node, at most one stop per path."""
    return _enumerate(tree, True, cap)
