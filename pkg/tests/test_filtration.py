import math
import re

import pytest
from hypothesis import given, settings, strategies as st

from stoplab.filtration import (
    CapExceeded,
    TreeError,
    atom_probability,
    conditional_expectation,
    count_stopping_times,
    enumerate_quasi_stopping_times,
    enumerate_stopping_times,
    expectation,
    validate_tree,
)
from stoplab.modelio import chain, gen_random_tree


def binomial_tree(depth, p):
    recs = [(0, 0, None, 1.0, "")]
    frontier = [(0, "")]
    nid = 1
    for t in range(1, depth + 1):
        new = []
        for pid, lab in frontier:
            for move, q in (("u", p), ("d", 1 - p)):
                recs.append((nid, t, pid, q, lab + move))
                new.append((nid, lab + move))
                nid += 1
        frontier = new
    return validate_tree(recs, depth)


def test_chain_is_valid():
    tree = validate_tree([(0, 0, None, 1.0), (1, 1, 0, 1.0), (2, 2, 1, 1.0)], 2)
    assert tree.horizon == 2 and len(tree) == 3
    assert tree.paths == ((0, 1, 2),)


@pytest.mark.parametrize(
    "nodes, horizon, message",
    [
        ([(0, 0, None, 1.0), (1, 1, 0, 0.5), (2, 1, 0, 0.6)], 1, "probability sum mismatch at root"),
        ([(0, 0, None, 1.0), (1, 2, 0, 1.0)], 2, "child time must be parent time+1"),
        ([(0, 0, None, 1.0), (0, 1, 0, 1.0)], 1, "duplicate id"),
        ([(0, 0, None, 1.0), (1, 1, 7, 1.0)], 1, "dangling parent"),
        ([(0, 0, None, 1.0), (1, 1, 0, 1.0)], 2, "leaf at wrong depth"),
    ],
)
def test_validation_errors(nodes, horizon, message):
    with pytest.raises(TreeError, match=re.escape(message)) as info:
        validate_tree(nodes, horizon)
    assert info.value.node is not None


def test_cycle_rejected():
    with pytest.raises(TreeError):
        validate_tree([(0, 0, None, 1.0), (1, 1, 2, 1.0), (2, 2, 1, 1.0)], 2)


def test_renormalize_on_request():
    tree = validate_tree([(0, 0, None, 1.0), (1, 1, 0, 0.5), (2, 1, 0, 0.6)], 1, renormalize=True)
    assert math.isclose(tree.nodes[1].cond_prob + tree.nodes[2].cond_prob, 1.0)


def test_atom_probability(fix_c):
    tree, _ = fix_c
    assert atom_probability(tree, 1) == 0.5
    assert atom_probability(tree, 0) == 1.0
    with pytest.raises(KeyError):
        atom_probability(tree, 99)


def test_atom_probability_binomial_path():
    tree = binomial_tree(3, 0.4)
    uud = next(n for n in tree.order if tree.nodes[n].label == "uud")
    assert atom_probability(tree, uud) == pytest.approx(0.4 * 0.4 * 0.6, abs=1e-15)


def test_conditional_expectation(fix_c):
    tree, _ = fix_c
    assert conditional_expectation(tree, {1: 2.0, 2: 1.0}, 0) == {0: 1.5}
    assert conditional_expectation(tree, {1: 4.0, 2: 4.0}, 0) == {0: 4.0}
    with pytest.raises(KeyError):
        conditional_expectation(tree, {1: 2.0}, 0)


def test_conditional_expectation_chain_is_identity():
    tree, _ = chain([0, 0, 0])
    assert conditional_expectation(tree, {2: 3.25}, 1) == {1: 3.25}


def test_stopping_time_counts(fix_c):
    tree, _ = fix_c
    assert len(enumerate_stopping_times(tree)) == 5
    assert len(enumerate_quasi_stopping_times(tree)) == 6
    single = validate_tree([(0, 0, None, 1.0)], 0)
    assert len(enumerate_stopping_times(single)) == 2
    assert len(enumerate_quasi_stopping_times(single)) == 2
    for T in range(5):
        tree, _ = chain([0.0] * (T + 1))
        assert len(enumerate_stopping_times(tree)) == T + 2
    tree, _ = chain([0.0, 0.0])
    quasi = enumerate_quasi_stopping_times(tree)
    assert len(quasi) == 4
    assert {(tuple(q.opt_stops), tuple(q.pre_stops)) for q in quasi} == {
        ((0,), ()), ((1,), ()), ((), (0,)), ((), ())}


def test_enumeration_cap(monkeypatch):
    tree, _ = gen_random_tree(4, 3, seed=5)
    with pytest.raises(CapExceeded):
        enumerate_quasi_stopping_times(tree, cap=3)
    monkeypatch.setenv("STOPLAB_NODE_CAP", "2")
    with pytest.raises(CapExceeded):
        enumerate_stopping_times(tree)


def test_enumerated_times_are_distinct_and_valid():
    tree, _ = gen_random_tree(3, 2, seed=11)
    qs = enumerate_quasi_stopping_times(tree)
    assert len(set(qs)) == len(qs) == count_stopping_times(tree, quasi=True)
    for q in qs:
        q.validate(tree)


seeds = st.integers(0, 10_000)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(0, 4), st.integers(1, 3))
def test_atoms_sum_to_one(seed, depth, branch):
    tree, _ = gen_random_tree(depth, branch, seed)
    for t in range(depth + 1):
        assert math.isclose(math.fsum(tree.prob[n] for n in tree.at_time(t)), 1.0, abs_tol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 4), st.integers(1, 3))
def test_iterated_conditional_expectation_is_expectation(seed, depth, branch):
    tree, y = gen_random_tree(depth, branch, seed)
    f = {n: y.opt[n] for n in tree.at_time(depth)}
    for t in range(depth - 1, -1, -1):
        f = conditional_expectation(tree, f, t)
    assert f[tree.root] == pytest.approx(expectation(tree, y.opt), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(0, 3), st.integers(1, 2))
def test_quasi_count_dominates(seed, depth, branch):
    tree, _ = gen_random_tree(depth, branch, seed)
    nq = count_stopping_times(tree, quasi=True)
    ns = count_stopping_times(tree, quasi=False)
    assert nq >= ns
    assert (nq == ns) == (depth == 0)


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(-5, 5), st.floats(0.1, 3))
def test_conditional_expectation_linear_monotone(seed, shift, scale):
    tree, y = gen_random_tree(2, 3, seed)
    f = {n: y.opt[n] for n in tree.at_time(2)}
    g = {n: scale * v + shift for n, v in f.items()}
    ef = conditional_expectation(tree, f, 1)
    eg = conditional_expectation(tree, g, 1)
    for p in ef:
        assert eg[p] == pytest.approx(scale * ef[p] + shift, abs=1e-12)
    up = {n: v + abs(shift) for n, v in f.items()}
    eu = conditional_expectation(tree, up, 1)
    assert all(eu[p] >= ef[p] - 1e-12 for p in ef)
