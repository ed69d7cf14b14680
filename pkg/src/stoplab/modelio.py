"""Model files, generators and the grid-refinement laboratory."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .filtration import CapExceeded, FiltrationTree, TreeError, node_cap, validate_tree
from .processes import NO_PRE_STOP, LadlagReward, PiecewiseLinear, predictable_projection

FORMAT_VERSION = 1
EXPAND_MAX_STEPS = 12


class ModelError(ValueError):
    """Malformed model text; ``where`` is a JSON path or line/column."""

    def __init__(self, message: str, where: str | None = None):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


# --- model files ----------------------------------------------------------------

_TOP_KEYS = {"version", "horizon", "nodes", "reward", "metadata"}
_NODE_KEYS = {"id", "time", "parent", "prob", "label"}
_REWARD_KEYS = {"opt", "pre"}


def _number(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ModelError(f"expected a number, got {v!r}", where)
    return float(v)


def parse_model(text: str, strict: bool = True) -> tuple[FiltrationTree, LadlagReward, dict]:
    """Parse model JSON into ``(tree, reward, metadata)``.

    Missing pre values default to the no-predictable-stop sentinel and the
    affected node ids are listed under ``metadata["pre_defaulted"]``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    if not isinstance(doc, dict):
        raise ModelError("top level must be an object", "$")
    if strict and (extra := set(doc) - _TOP_KEYS):
        raise ModelError(f"unknown keys {sorted(extra)}", "$")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelError(f"unsupported version {doc.get('version')!r}", "$.version")
    horizon = doc.get("horizon")
    if isinstance(horizon, bool) or not isinstance(horizon, int):
        raise ModelError("horizon must be an integer", "$.horizon")
    raw_nodes = doc.get("nodes")
    if not isinstance(raw_nodes, list):
        raise ModelError("nodes must be a list", "$.nodes")
    records = []
    for i, nd in enumerate(raw_nodes):
        where = f"$.nodes[{i}]"
        if not isinstance(nd, dict):
            raise ModelError("node must be an object", where)
        if strict and (extra := set(nd) - _NODE_KEYS):
            raise ModelError(f"unknown keys {sorted(extra)}", where)
        for key in ("id", "time"):
            if isinstance(nd.get(key), bool) or not isinstance(nd.get(key), int):
                raise ModelError(f"{key} must be an integer", f"{where}.{key}")
        parent = nd.get("parent")
        if parent is not None and (isinstance(parent, bool) or not isinstance(parent, int)):
            raise ModelError("parent must be an integer or null", f"{where}.parent")
        prob = _number(nd.get("prob", 1.0 if parent is None else None), f"{where}.prob")
        if not 0.0 < prob <= 1.0:
            raise ModelError(f"probability {prob!r} outside (0, 1]", f"{where}.prob")
        label = nd.get("label")
        if label is not None and not isinstance(label, str):
            raise ModelError("label must be a string", f"{where}.label")
        records.append({"id": nd["id"], "time": nd["time"], "parent": parent,
                        "cond_prob": prob, "label": label})
    try:
        tree = validate_tree(records, horizon)
    except TreeError as exc:
        raise ModelError(str(exc), "$.nodes") from None

    reward = doc.get("reward")
    if not isinstance(reward, dict):
        raise ModelError("reward must be an object", "$.reward")
    if strict and (extra := set(reward) - _REWARD_KEYS):
        raise ModelError(f"unknown keys {sorted(extra)}", "$.reward")
    opt_raw = reward.get("opt")
    if not isinstance(opt_raw, dict):
        raise ModelError("opt must map node ids to numbers", "$.reward.opt")
    pre_raw = reward.get("pre", {})
    if not isinstance(pre_raw, dict):
        raise ModelError("pre must map node ids to numbers", "$.reward.pre")

    def keyed(raw: dict, where: str) -> dict[int, float]:
        out = {}
        for k, v in raw.items():
            try:
                nid = int(k)
            except ValueError:
                raise ModelError(f"bad node id {k!r}", where) from None
            if nid not in tree.nodes:
                raise ModelError(f"unknown node id {nid}", f"{where}.{k}")
            out[nid] = _number(v, f"{where}.{k}")
        return out

    opt = keyed(opt_raw, "$.reward.opt")
    pre = keyed(pre_raw, "$.reward.pre")
    for n in tree.order:
        if n not in opt:
            raise ModelError(f"missing opt value for node {n}", "$.reward.opt")
    for p in pre:
        if tree.is_terminal(p):
            raise ModelError(f"pre value given for terminal node {p}", f"$.reward.pre.{p}")
    metadata = dict(doc.get("metadata") or {})
    defaulted = [p for p in tree.nonterminal if p not in pre]
    for p in defaulted:
        pre[p] = NO_PRE_STOP
    if defaulted:
        metadata["pre_defaulted"] = sorted(defaulted)
    return tree, LadlagReward(opt, pre), metadata


def write_model(tree: FiltrationTree, y: LadlagReward, metadata: dict | None = None) -> str:
    nodes = []
    for n in tree.order:
        node = tree.nodes[n]
        rec = {"id": n, "time": node.time, "parent": node.parent, "prob": node.cond_prob}
        if node.label is not None:
            rec["label"] = node.label
        nodes.append(rec)
    doc = {
        "version": FORMAT_VERSION,
        "horizon": tree.horizon,
        "nodes": nodes,
        "reward": {
            "opt": {str(n): y.opt[n] for n in tree.order},
            "pre": {str(p): y.pre[p] for p in tree.nonterminal},
        },
    }
    if metadata:
        doc["metadata"] = metadata
    # json emits floats with repr (shortest round-trip, at most 17 digits)
    return json.dumps(doc, indent=2) + "\n"


def load_model(path, strict: bool = True):
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read(), strict)


# --- fixtures -------------------------------------------------------------------

def chain(opt: Sequence[float], pre: Sequence[float] | None = None) -> tuple[FiltrationTree, LadlagReward]:
    """Deterministic path 0 -> 1 -> ... -> T; ``pre[k]`` is the slot (k+1)- value."""
    T = len(opt) - 1
    tree = validate_tree([(k, k, None if k == 0 else k - 1, 1.0, "root" if k == 0 else None)
                          for k in range(T + 1)], T)
    pre = [0.0] * T if pre is None else list(pre)
    if len(pre) != T:
        raise ValueError(f"need {T} pre values, got {len(pre)}")
    return tree, LadlagReward({k: float(v) for k, v in enumerate(opt)},
                              {k: float(v) for k, v in enumerate(pre)})


def fixture_a():
    """Chain with opt (1, 3, 2) and zero pre track."""
    return chain([1.0, 3.0, 2.0], [0.0, 0.0])


def fixture_b():
    """Chain T=1, opt (0.5, 0), pre(root) = 1: predictable stop beats stopping."""
    return chain([0.5, 0.0], [1.0])


def fixture_c(opt_u: float = 2.0, opt_d: float = 1.0, opt_root: float = 0.0, pre_root: float = 0.0):
    """Root with two equally likely children u and d."""
    tree = validate_tree([(0, 0, None, 1.0, "root"), (1, 1, 0, 0.5, "u"), (2, 1, 0, 0.5, "d")], 1)
    return tree, LadlagReward({0: opt_root, 1: opt_u, 2: opt_d}, {0: pre_root})


FIXTURES: dict[str, Callable] = {"A": fixture_a, "B": fixture_b, "C": fixture_c}


# --- random trees ---------------------------------------------------------------

def gen_random_tree(depth: int, max_branch: int, seed: int, law: str = "normal",
                    regular: bool = False, subregular: bool = False,
                    cap: int | None = None) -> tuple[FiltrationTree, LadlagReward]:
    """Random non-recombining tree, branching uniform in 1..max_branch per node.

    ``law`` selects the reward draw: ``normal`` (N(0,1) rounded to 1e-3),
    ``uniform`` (U(-1, 1)), or ``nonneg`` (|N(0,1)|). ``regular`` sets
    pre := E[opt_{t+1}|F_t]; ``subregular`` sets pre := min(draw, that).
    """
    cap = node_cap() if cap is None else cap
    if max_branch < 1 or depth < 0:
        raise ValueError("depth must be >= 0 and max_branch >= 1")
    worst = sum(max_branch**k for k in range(depth + 1))
    if worst > cap:
        raise CapExceeded(f"depth {depth}, branching {max_branch} may produce {worst} nodes > cap {cap}")
    rng = random.Random(seed)

    def draw() -> float:
        if law == "normal":
            return round(rng.gauss(0.0, 1.0), 3)
        if law == "uniform":
            return rng.uniform(-1.0, 1.0)
        if law == "nonneg":
            return abs(rng.gauss(0.0, 1.0))
        raise ValueError(f"unknown reward law {law!r}")

    records = [(0, 0, None, 1.0)]
    frontier = [0]
    next_id = 1
    for t in range(1, depth + 1):
        new = []
        for p in frontier:
            k = rng.randint(1, max_branch)
            w = [rng.uniform(0.2, 1.0) for _ in range(k)]
            tot = sum(w)
            probs = [v / tot for v in w]
            probs[-1] = 1.0 - math.fsum(probs[:-1])
            for q in probs:
                records.append((next_id, t, p, q))
                new.append(next_id)
                next_id += 1
        frontier = new
    tree = validate_tree(records, depth)
    opt = {n: draw() for n in tree.order}
    pre = {p: draw() for p in tree.nonterminal}
    y = LadlagReward(opt, pre)
    if regular or subregular:
        proj = predictable_projection(tree, y)
        pre = {p: proj[p] if regular else min(pre[p], proj[p]) for p in tree.nonterminal}
        y = LadlagReward(opt, pre)
    return tree, y


# --- binomial lattices ------------------------------------------------------------

@dataclass(frozen=True)
class LatticeModel:
    """Recombining binomial lattice; reward at (k, j) is discount**k * payoff(S)
    with S = S0 * up**j * down**(k-j)."""

    steps: int
    S0: float
    up: float
    down: float
    prob: float
    discount: float = 1.0
    kind: str = "put"  # put | call | zero | custom
    strike: float = 100.0
    custom: PiecewiseLinear | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 < self.down < 1.0 < self.up:
            raise ValueError("need 0 < down < 1 < up")
        if not 0.0 < self.prob < 1.0:
            raise ValueError("probability must lie in (0, 1)")
        if not 0.0 < self.discount <= 1.0 or self.S0 <= 0:
            raise ValueError("need 0 < discount <= 1 and S0 > 0")
        if self.kind not in ("put", "call", "zero", "custom"):
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        if self.kind == "custom" and self.custom is None:
            raise ValueError("custom payoff needs a piecewise-linear function")

    @classmethod
    def risk_neutral(cls, steps: int, S0: float, up: float, down: float, rate: float = 0.0,
                     kind: str = "put", strike: float = 100.0, custom=None) -> "LatticeModel":
        growth = math.exp(rate)
        p = (growth - down) / (up - down)
        return cls(steps, S0, up, down, p, 1.0 / growth, kind, strike, custom)

    def payoff(self, S):
        S = np.asarray(S, dtype=float)
        if self.kind == "put":
            return np.maximum(self.strike - S, 0.0)
        if self.kind == "call":
            return np.maximum(S - self.strike, 0.0)
        if self.kind == "zero":
            return np.zeros_like(S)
        return np.vectorize(self.custom)(S).astype(float)

    def spot(self, k: int, j):
        j = np.asarray(j)
        return self.S0 * self.up**j * self.down ** (k - j)

    def reward(self, k: int, j):
        return self.discount**k * self.payoff(self.spot(k, j))


def lattice_snell(lat: LatticeModel) -> list[np.ndarray]:
    """Backward induction on the recombining lattice; ``V[k][j]``, j up-moves."""
    V = [None] * (lat.steps + 1)
    V[lat.steps] = np.maximum(lat.reward(lat.steps, np.arange(lat.steps + 1)), 0.0)
    for k in range(lat.steps - 1, -1, -1):
        cont = lat.prob * V[k + 1][1:] + (1.0 - lat.prob) * V[k + 1][:-1]
        V[k] = np.maximum(lat.reward(k, np.arange(k + 1)), cont)
    return V


def gen_binomial(lat: LatticeModel, expand: bool = True, cap: int | None = None):
    """Expand the lattice into a tree (2**(steps+1)-1 nodes) with the cadlag
    pre track, or return the lattice unchanged when ``expand`` is false."""
    if not expand:
        return lat
    if lat.steps > EXPAND_MAX_STEPS:
        raise CapExceeded(f"expansion limited to {EXPAND_MAX_STEPS} steps, got {lat.steps}")
    size = 2 ** (lat.steps + 1) - 1
    if size > (node_cap() if cap is None else cap):
        raise CapExceeded(f"{size} nodes exceed cap")
    records = [(0, 0, None, 1.0)]
    ups = {0: 0}
    frontier = [0]
    nid = 1
    for k in range(1, lat.steps + 1):
        new = []
        for p in frontier:
            for is_up, q in ((1, lat.prob), (0, 1.0 - lat.prob)):
                records.append((nid, k, p, q))
                ups[nid] = ups[p] + is_up
                new.append(nid)
                nid += 1
        frontier = new
    tree = validate_tree(records, lat.steps)
    opt = {n: float(lat.reward(tree.time(n), ups[n])) for n in tree.order}
    return tree, LadlagReward.cadlag(tree, opt)


# --- refinement laboratory ----------------------------------------------------------

@dataclass(frozen=True)
class RefinementProfile:
    """Deterministic reward on [0, 1] with explicit left limits."""

    name: str
    value: Callable[[float], float]
    left_limit: Callable[[float], float]
    resolutions: tuple[int, ...] = (10, 100)

    def __post_init__(self):
        r = self.resolutions
        if len(r) < 1 or any(n < 2 for n in r) or any(b <= a for a, b in zip(r, r[1:])):
            raise ValueError("resolutions must be strictly increasing integers >= 2")


def _linear_dropoff_value(t: float) -> float:
    return t if t < 1.0 else 0.0


PROFILES: dict[str, tuple[Callable, Callable]] = {
    # R(t) = t on [0,1), R(1) = 0; left limit at 1 is 1
    "linear_dropoff": (_linear_dropoff_value, lambda t: t),
    "constant": (lambda t: 1.0, lambda t: 1.0),
    # jumps up at 1/2: left limit 0 <= value 1, so the chain is subregular
    "step_up": (lambda t: 1.0 if t >= 0.5 else 0.0, lambda t: 1.0 if t > 0.5 else 0.0),
}


def make_profile(name: str, resolutions: Sequence[int] = (10, 100)) -> RefinementProfile:
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    value, left = PROFILES[name]
    return RefinementProfile(name, value, left, tuple(resolutions))


def profile_chain(profile: RefinementProfile, n: int):
    """Chain on the grid k/n, k = 0..n (left-closed cells): opt from the
    profile value, pre at slot k- from the left limit at k/n."""
    opt = [profile.value(k / n) for k in range(n + 1)]
    pre = [profile.left_limit(k / n) for k in range(1, n + 1)]
    return chain(opt, pre)


def refinement_study(profile: RefinementProfile) -> list[dict]:
    from .snell import quasi_snell, solve_os

    rows = []
    for n in profile.resolutions:
        tree, y = profile_chain(profile, n)
        rows.append({"n": n, "os": solve_os(tree, y).value, "oqs": quasi_snell(tree, y).value})
    return rows


REFINEMENT_CONVENTION = "left-closed cells: grid points k/n, pre at k/n from the left limit"
