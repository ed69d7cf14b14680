"""Dual problem, optimality certificates and pathwise (Rogers) upper bounds."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from .filtration import FiltrationTree, expect_children
from .lp import LinearProgram
from .modelio import LatticeModel, lattice_snell
from .processes import NO_PRE_STOP, LadlagReward
from .relaxation import RandomizedQuasiStopping
from .snell import SnellSolution, doob

FEAS_TOL = 1e-9
GAP_TOL = 1e-8


class MartingaleError(ValueError):
    def __init__(self, node, residual):
        super().__init__(f"not a martingale: worst residual {residual:.3g} at node {node}")
        self.node = node
        self.residual = residual


@dataclass
class MartingaleCertificate:
    """Node-indexed martingale offered as a dual feasible point."""

    M: dict[int, float]
    objective: float


def certificate(tree: FiltrationTree, M: Mapping[int, float]) -> MartingaleCertificate:
    return MartingaleCertificate(dict(M), M[tree.root])


@dataclass
class CertificateReport:
    feasible: bool
    gap: float
    oc1_residual: float
    oc2_residual: float
    violations: list[str] = field(default_factory=list)
    oc2_paths: list[int] = field(default_factory=list)  # leaves where oc2 fails
    optimal: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def martingale_residual(tree: FiltrationTree, M: Mapping[int, float]) -> tuple[int | None, float]:
    """Worst |E[M_{t+1}|F_t] - M_t| and the node where it occurs."""
    worst_node, worst = None, 0.0
    for p in tree.nonterminal:
        r = abs(expect_children(tree, M, p) - M[p])
        if r > worst:
            worst_node, worst = p, r
    return worst_node, worst


def build_dual_lp(tree: FiltrationTree, y: LadlagReward) -> LinearProgram:
    """min E[y] over terminal values y >= 0 whose martingale dominates the
    reward at every node and the pre track at every non-terminal node."""
    paths = tree.paths
    index = {n: [] for n in tree.order}
    for i, path in enumerate(paths):
        for n in path:
            index[n].append(i)
    c = np.array([tree.prob[p[-1]] for p in paths])
    rows, rhs, names = [], [], []
    for kind, nodes, track in (("opt", tree.order, y.opt), ("pre", tree.nonterminal, y.pre)):
        for n in nodes:
            if track[n] <= NO_PRE_STOP / 2:
                continue
            row = np.zeros(len(paths))
            for i in index[n]:
                row[i] = c[i] / tree.prob[n]
            rows.append(row)
            rhs.append(track[n])
            names.append((kind, n))
    A = np.array(rows).reshape(len(rows), len(paths))
    return LinearProgram(c, A, [">="] * len(rows), np.array(rhs),
                         [(0.0, math.inf)] * len(paths), [("y", p[-1]) for p in paths],
                         maximize=False, row_names=names)


def martingale_from_terminal(tree: FiltrationTree, terminal: Mapping[int, float]) -> dict[int, float]:
    """M_t = E[M_T | F_t] from leaf values."""
    M = dict(terminal)
    for n in reversed(tree.order):
        if not tree.is_terminal(n):
            M[n] = expect_children(tree, M, n)
    return M


def dual_lp_martingale(tree: FiltrationTree, lp: LinearProgram, x) -> MartingaleCertificate:
    leaves = {name[1]: float(v) for name, v in zip(lp.names, x)}
    return certificate(tree, martingale_from_terminal(tree, leaves))


def dual_from_snell(tree: FiltrationTree, s: SnellSolution) -> MartingaleCertificate:
    return certificate(tree, doob(tree, s).M)


def check_certificate(tree: FiltrationTree, y: LadlagReward, x: RandomizedQuasiStopping,
                      M: MartingaleCertificate | Mapping[int, float],
                      tol: float = FEAS_TOL) -> CertificateReport:
    """Test (x, M) against domination, the martingale property and the two
    complementary slackness conditions."""
    Mv = M.M if isinstance(M, MartingaleCertificate) else M
    missing = [n for n in tree.order if n not in Mv]
    if missing:
        raise ValueError(f"martingale missing node {missing[0]}")
    x.check(tree)
    violations: list[str] = []
    for p in tree.nonterminal:
        r = expect_children(tree, Mv, p) - Mv[p]
        if abs(r) > tol:
            violations.append(f"martingale: E[M_next|F] - M = {r:.6g} at node {tree.name(p)}")
    for n in tree.order:
        if Mv[n] < y.opt[n] - tol:
            violations.append(f"domination: M = {Mv[n]:.6g} < opt = {y.opt[n]:.6g} at node {tree.name(n)}")
    for p in tree.nonterminal:
        if Mv[p] < y.pre[p] - tol:
            violations.append(f"domination: M = {Mv[p]:.6g} < pre = {y.pre[p]:.6g} at node {tree.name(p)}")
    for n in tree.leaves:
        if Mv[n] < -tol:
            violations.append(f"terminal: M_T = {Mv[n]:.6g} < 0 at node {tree.name(n)}")
    feasible = not violations

    oc1_terms = [tree.prob[n] * v * (Mv[n] - y.opt[n]) for n, v in x.a.items() if v != 0.0]
    oc1_terms += [tree.prob[p] * v * (Mv[p] - y.pre[p]) for p, v in x.b.items() if v != 0.0]
    oc1 = math.fsum(oc1_terms)
    if oc1 > tol:
        violations.append(f"oc1: stopping mass where M exceeds the reward, residual {oc1:.6g}")

    oc2_terms, oc2_paths = [], []
    for path, mass in zip(tree.paths, x.path_mass(tree)):
        leaf = path[-1]
        term = (1.0 - mass) * Mv[leaf]
        oc2_terms.append(tree.prob[leaf] * term)
        if abs(term) > tol:
            oc2_paths.append(leaf)
            violations.append(f"oc2: residual never-stop mass {1.0 - mass:.6g} with M_T = {Mv[leaf]:.6g}"
                              f" on path to node {tree.name(leaf)}")
    oc2 = math.fsum(oc2_terms)

    gap = Mv[tree.root] - x.objective(tree, y)
    optimal = feasible and oc1 <= tol and not oc2_paths
    return CertificateReport(feasible, gap, oc1, oc2, violations, oc2_paths, optimal)


def rogers_bound(tree: FiltrationTree, y: LadlagReward,
                 M: MartingaleCertificate | Mapping[int, float], tol: float = FEAS_TOL) -> float:
    """E max over slots of (reward + M_T - M_slot), never-stop slot included.

    The predictable slot (t+1)- uses M at the time-t node.
    """
    Mv = M.M if isinstance(M, MartingaleCertificate) else M
    node, res = martingale_residual(tree, Mv)
    if res > tol * max(1.0, max(abs(v) for v in Mv.values())):
        raise MartingaleError(node, res)
    terms = []
    for path in tree.paths:
        MT = Mv[path[-1]]
        best = 0.0
        for n in path:
            best = max(best, y.opt[n] + MT - Mv[n])
        for p in path[:-1]:
            best = max(best, y.pre[p] + MT - Mv[p])
        terms.append(tree.prob[path[-1]] * best)
    return math.fsum(terms)


# --- Monte Carlo on lattices --------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def path_uniforms(seed: int, paths: np.ndarray, steps: int) -> np.ndarray:
    """Uniforms in [0, 1) for (path, step): splitmix64(splitmix64(splitmix64(seed) ^ path) ^ step).

    A counter-based stream: path i gets the same numbers whatever block or
    worker computes it.
    """
    key = splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    pk = splitmix64(np.asarray(paths, dtype=np.uint64) ^ key)
    bits = splitmix64(pk[:, None] ^ np.arange(steps, dtype=np.uint64)[None, :])
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def lattice_doob(lat: LatticeModel):
    """Snell values and their one-step conditional expectations on the lattice."""
    V = lattice_snell(lat)
    E = [lat.prob * V[k + 1][1:] + (1.0 - lat.prob) * V[k + 1][:-1] for k in range(lat.steps)]
    return V, E


def _penalties(lat: LatticeModel, martingale: str, V, E, seed: int, idx: np.ndarray) -> np.ndarray:
    ups = path_uniforms(seed, idx, lat.steps) < lat.prob
    j = np.zeros((len(idx), lat.steps + 1), dtype=np.int64)
    j[:, 1:] = np.cumsum(ups, axis=1)
    R = np.empty(j.shape)
    for k in range(lat.steps + 1):
        R[:, k] = lat.reward(k, j[:, k])
    if martingale == "zero":
        M = np.zeros(j.shape)
    else:
        M = np.empty(j.shape)
        M[:, 0] = V[0][0]
        for k in range(lat.steps):
            M[:, k + 1] = M[:, k] + V[k + 1][j[:, k + 1]] - E[k][j[:, k]]
    MT = M[:, -1:]
    return np.maximum((R + MT - M).max(axis=1), 0.0)


def mc_dual_bound(lat: LatticeModel, n_paths: int, seed: int, martingale: str = "snell",
                  workers: int = 1, block: int = 8192) -> tuple[float, float]:
    """Sample mean and standard error of the pathwise Rogers penalty.

    ``martingale`` is ``"snell"`` (Doob martingale of the lattice Snell
    envelope) or ``"zero"``. Results do not depend on ``workers``: penalties
    land in one array in path order and are summed there.
    """
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2 to estimate a standard error")
    if martingale not in ("snell", "zero"):
        raise ValueError(f"unknown martingale {martingale!r}")
    V, E = lattice_doob(lat)
    out = np.empty(n_paths)
    starts = list(range(0, n_paths, block))

    def run(start: int) -> None:
        idx = np.arange(start, min(start + block, n_paths), dtype=np.uint64)
        out[start:start + len(idx)] = _penalties(lat, martingale, V, E, seed, idx)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    mean = float(np.sum(out) / n_paths)
    sd = float(np.sqrt(np.sum((out - mean) ** 2) / (n_paths - 1)))
    return mean, sd / math.sqrt(n_paths)
