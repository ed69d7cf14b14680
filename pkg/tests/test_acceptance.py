"""Exit criteria. Each test records one PASS/FAIL line, printed in the
terminal summary under "acceptance criteria"."""

import os
import random
import subprocess
import sys
import time

import numpy as np
import pytest

from stoplab.duality import (
    build_dual_lp,
    check_certificate,
    dual_from_snell,
    mc_dual_bound,
    rogers_bound,
)
from stoplab.filtration import count_stopping_times, enumerate_quasi_stopping_times, validate_tree
from stoplab.lp import enumerate_vertices, solve_lp
from stoplab.modelio import (
    FIXTURES,
    LatticeModel,
    gen_random_tree,
    lattice_snell,
    make_profile,
    refinement_study,
)
from stoplab.norms import nonneg_norm_identity, proj_norm
from stoplab.processes import LadlagReward
from stoplab.relaxation import RandomizedQuasiStopping, build_primal_lp, split_nonextreme
from stoplab.snell import QuasiStoppingTime, evaluate_policy, quasi_snell, solve_os

pytestmark = pytest.mark.acceptance

FAMILY_SIZE = 200
ENUM_CAP = 10**4


def make_family(size=FAMILY_SIZE, max_depth=5, max_branch=3, salt=0, **kw):
    out = []
    for k in range(size):
        rng = random.Random(10_000 * salt + k)
        out.append(gen_random_tree(rng.randint(0, max_depth), rng.randint(1, max_branch), seed=k + salt, **kw))
    return out


@pytest.fixture(scope="module")
def family():
    return make_family()


def test_c1_oracle_equivalence(family, criterion):
    t0 = time.perf_counter()
    checked, worst = 0, 0.0
    for tree, y in family:
        if count_stopping_times(tree, quasi=True) > ENUM_CAP:
            continue
        checked += 1
        best = max(evaluate_policy(tree, y, q, validate=False) for q in enumerate_quasi_stopping_times(tree, ENUM_CAP))
        worst = max(worst, abs(best - quasi_snell(tree, y).value))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 60 and checked > 0
    criterion("1 oracle equivalence", ok, f"{checked} trees, max err {worst:.2e}, {elapsed:.1f}s")
    assert checked >= FAMILY_SIZE // 2
    assert worst <= 1e-10
    assert elapsed < 60


def test_c2_strong_duality(family, criterion):
    worst_pd = worst_snell = 0.0
    for tree, y in family:
        primal = solve_lp(build_primal_lp(tree, y, quasi=True)).objective
        dual = solve_lp(build_dual_lp(tree, y)).objective
        value = quasi_snell(tree, y).value
        worst_pd = max(worst_pd, abs(primal - dual))
        worst_snell = max(worst_snell, abs(primal - value), abs(dual - value))
    ok = worst_pd <= 1e-8 and worst_snell <= 1e-8
    criterion("2 strong duality", ok, f"|P-D| {worst_pd:.2e}, vs Snell {worst_snell:.2e}")
    assert ok


def small_fixture_trees():
    trees = [f()[0] for f in FIXTURES.values()]
    trees.append(validate_tree([(0, 0, None, 1.0)], 0))
    trees.append(validate_tree([(0, 0, None, 1.0), (1, 1, 0, 0.3), (2, 1, 0, 0.7),
                                (3, 2, 1, 1.0), (4, 2, 2, 0.5), (5, 2, 2, 0.5)], 2))
    trees.append(validate_tree([(0, 0, None, 1.0), (1, 1, 0, 0.2), (2, 1, 0, 0.3), (3, 1, 0, 0.5),
                                (4, 2, 1, 0.5), (5, 2, 1, 0.5), (6, 2, 2, 1.0), (7, 2, 3, 1.0)], 2))
    trees.append(validate_tree([(k, k, None if k == 0 else k - 1, 1.0) for k in range(5)], 4))
    return [t for t in trees if len(t) <= 9]


def test_c3_extreme_points(criterion):
    bad = []
    for tree in small_fixture_trees():
        zero = LadlagReward({n: 0.0 for n in tree.order}, {p: 0.0 for p in tree.nonterminal})
        verts = enumerate_vertices(build_primal_lp(tree, zero, quasi=True))
        integral = all(np.all(np.minimum(np.abs(v), np.abs(v - 1.0)) <= 1e-9) for v in verts)
        if not integral or len(verts) != count_stopping_times(tree, quasi=True):
            bad.append(len(tree))
    rng = np.random.default_rng(3)
    worst = 0.0
    for seed in range(50):
        tree, _ = gen_random_tree(3, 3, seed)
        a, b, used = {}, {}, {}
        for n in tree.order:
            base = 0.0 if tree.parent(n) is None else used[tree.parent(n)]
            a[n] = rng.uniform(0, 1 - base) * rng.uniform()
            used[n] = base + a[n]
            if not tree.is_terminal(n):
                b[n] = rng.uniform(0, 1 - used[n]) * rng.uniform()
                used[n] += b[n]
        x = RandomizedQuasiStopping(a, b)
        s = float(rng.uniform(0.05, 0.95))
        x1, x2, (w1, w2) = split_nonextreme(tree, x, s)
        for n in tree.order:
            worst = max(worst, abs(w1 * x1.a[n] + w2 * x2.a[n] - a[n]))
        for p in tree.nonterminal:
            worst = max(worst, abs(w1 * x1.b[p] + w2 * x2.b[p] - b[p]))
    ok = not bad and worst <= 1e-12
    criterion("3 extreme points", ok, f"{len(small_fixture_trees())} trees, split err {worst:.1e}")
    assert not bad
    assert worst <= 1e-12


def test_c4_subregular_collapse(criterion):
    worst = 0.0
    for tree, y in make_family(100, max_depth=5, salt=7, subregular=True):
        worst = max(worst, quasi_snell(tree, y).value - solve_os(tree, y).value)
    tree, y = FIXTURES["B"]()
    gap_b = quasi_snell(tree, y).value - solve_os(tree, y).value
    ok = worst <= 1e-9 and gap_b == 0.5
    criterion("4 subregular collapse", ok, f"max OQS-OS {worst:.1e}, fixture B gap {gap_b}")
    assert worst <= 1e-9
    assert gap_b == 0.5


def _suboptimal(tree, y, value):
    for q in (QuasiStoppingTime({tree.root}), QuasiStoppingTime()):
        if evaluate_policy(tree, y, q) < value - 1e-6:
            return q
    return None


def test_c5_certificates(family, criterion):
    accepted = perturbed = perturbed_rejected = swapped = swapped_rejected = 0
    for tree, y in family:
        s = quasi_snell(tree, y)
        cert = dual_from_snell(tree, s)
        x = RandomizedQuasiStopping.from_policy(tree, s.policy)
        accepted += check_certificate(tree, y, x, cert).optimal
        if tree.horizon >= 1:
            M = dict(cert.M)
            M[tree.order[-1]] += 1e-3
            rep = check_certificate(tree, y, x, M)
            perturbed += 1
            perturbed_rejected += (not rep.optimal) and any(v.startswith("martingale") for v in rep.violations)
        q = _suboptimal(tree, y, s.value)
        if q is not None:
            rep = check_certificate(tree, y, RandomizedQuasiStopping.from_policy(tree, q), cert)
            swapped += 1
            swapped_rejected += (not rep.optimal) and any(v.split(":")[0] in ("oc1", "oc2") for v in rep.violations)
    ok = accepted == len(family) and perturbed_rejected == perturbed and swapped_rejected == swapped
    criterion("5 certificates", ok, f"accepted {accepted}/{len(family)}, perturbed rejected "
              f"{perturbed_rejected}/{perturbed}, suboptimal rejected {swapped_rejected}/{swapped}")
    assert accepted == len(family)
    assert perturbed > 0 and perturbed_rejected == perturbed
    assert swapped > 0 and swapped_rejected == swapped


def test_c6_rogers_tightness(family, criterion):
    worst = 0.0
    weak_ok = 0
    for tree, y in family:
        s = quasi_snell(tree, y)
        worst = max(worst, abs(rogers_bound(tree, y, dual_from_snell(tree, s)) - s.value))
        weak_ok += rogers_bound(tree, y, {n: 0.0 for n in tree.order}) >= s.value - 1e-12
    ok = worst <= 1e-9 and weak_ok == len(family)
    criterion("6 Rogers bound", ok, f"tight err {worst:.1e}, M=0 upper bound {weak_ok}/{len(family)}")
    assert worst <= 1e-9
    assert weak_ok == len(family)


def test_c7_monte_carlo_dual(criterion):
    lat = LatticeModel.risk_neutral(10, 100.0, 1.1, 1 / 1.1, 0.0, "put", 100.0)
    t0 = time.perf_counter()
    primal = float(lattice_snell(lat)[0][0])
    est, se = mc_dual_bound(lat, 100_000, seed=20240601)
    elapsed = time.perf_counter() - t0
    ok = abs(est - primal) <= 3 * se and se <= 0.01 * primal and elapsed < 10
    criterion("7 Monte Carlo dual", ok,
              f"primal {primal:.6f}, estimate {est:.6f} +- {se:.4f}, {elapsed:.2f}s")
    assert abs(est - primal) <= 3 * se
    assert se <= 0.01 * primal
    assert elapsed < 10


def test_c8_norm_equality(criterion):
    worst_proj = worst_nonneg = 0.0
    for tree, y in make_family(100, max_depth=4, salt=11):
        rep = proj_norm(tree, y)
        worst_proj = max(worst_proj, abs(rep.sup_norm - rep.proj_norm))
    for tree, y in make_family(100, max_depth=4, salt=13, law="nonneg"):
        relaxed, sup = nonneg_norm_identity(tree, y)
        worst_nonneg = max(worst_nonneg, abs(relaxed - sup))
    ok = worst_proj <= 1e-8 and worst_nonneg <= 1e-8
    criterion("8 norm equality", ok, f"sup vs proj {worst_proj:.1e}, nonneg identity {worst_nonneg:.1e}")
    assert ok


def test_c9_refinement(criterion):
    resolutions = [2, 5, 10, 100, 1000]
    rows = refinement_study(make_profile("linear_dropoff", resolutions))
    ok = all(r["os"] == (r["n"] - 1) / r["n"] and r["oqs"] == 1.0 for r in rows)
    criterion("9 refinement lab", ok, ", ".join(f"n={r['n']}: OS={r['os']:g} OQS={r['oqs']:g}" for r in rows))
    assert ok


def _cli(args, hashseed, threads="1"):
    env = dict(os.environ, PYTHONHASHSEED=str(hashseed))
    proc = subprocess.run([sys.executable, "-m", "stoplab", *args, "--no-timings", "--threads", threads],
                          capture_output=True, env=env, check=False)
    return proc.returncode, proc.stdout


def test_c10_determinism(fixture_dir, criterion):
    a = str(fixture_dir / "fixtureA.json")
    c = str(fixture_dir / "fixtureC.json")
    commands = [
        ["solve", c, "--quasi", "--relaxed"],
        ["solve", a],
        ["certify", a, "--auto"],
        ["certify", a, "--policy", "stop-at-0"],
        ["bounds", "--steps", "10", "--paths", "20000", "--seed", "7"],
        ["norm", a],
        ["refine", "--profile", "linear_dropoff", "--resolutions", "10,100"],
    ]
    mismatches = []
    for cmd in commands:
        for fmt in ("json", "csv"):
            runs = [_cli([*cmd, "--out", fmt], seed, threads) for seed, threads in ((0, "1"), (1, "4"), (2, "2"))]
            if len({out for _, out in runs}) != 1 or len({code for code, _ in runs}) != 1 or not runs[0][1]:
                mismatches.append(" ".join(cmd[:1] + [fmt]))
    criterion("10 determinism", not mismatches, f"{len(commands) * 2} command/format pairs"
              + (f", mismatched: {mismatches}" if mismatches else ""))
    assert not mismatches
