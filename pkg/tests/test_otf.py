from __future__ import annotations

import itertools
import random

import pytest
import z3

from logicgames import logic, oracle
from logicgames.automata import SymbolicAutomaton, Transition
from logicgames.fixpoints import Perspective, solve_buchi
from logicgames.otf import (
    OtfStatus,
    OutsideWinningRegion,
    counter_vocab,
    dest_pair,
    initial_vector,
    otf_loop,
    sigma_prod,
    solve_k,
    succ_k,
    succ_k_formula,
)

from conftest import corpus_game


@pytest.fixture(scope="module")
def example():
    return corpus_game("otf_example")


@pytest.fixture(scope="module")
def bounded():
    return corpus_game("otf_example_bounded")


@pytest.fixture(scope="module")
def k2(example):
    return solve_k(example, example.automaton_neg, 2)


def reachable(aut, k, values):
    seen, todo = {initial_vector(aut)}, [initial_vector(aut)]
    while todo:
        c = todo.pop()
        for x in values:
            d = succ_k(c, {"x": x}, aut, k)
            if d not in seen:
                seen.add(d)
                todo.append(d)
    return seen


# -- vectors -------------------------------------------------------------------------


def test_initial_vector(example):
    assert initial_vector(example.automaton_neg) == (0, -1, -1, -1)
    one = SymbolicAutomaton(example.vocab, 1, (0,), [Transition(0, logic.TRUE, 0)], frozenset())
    assert initial_vector(one) == (0,)


@pytest.mark.parametrize("c3", [0, 1, 2])
def test_worked_step_d_to_e(example, c3):
    assert succ_k((0, -1, 2, c3), {"x": 1}, example.automaton_neg, 2) == (0, 0, -1, 2)


def test_non_final_loop_is_stationary(example):
    one = SymbolicAutomaton(example.vocab, 1, (0,), [Transition(0, logic.TRUE, 0)], frozenset())
    for x in range(-3, 4):
        assert succ_k((0,), {"x": x}, one, 2) == (0,)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_succ_k_matches_explicit_counting(bounded, k):
    aut = bounded.automaton_neg
    box = oracle.GridBox.of_game(bounded)
    st = oracle.States(box)
    tab = oracle._aut_tables(aut, st)
    for c in reachable(aut, k, range(4)):
        for i in range(st.n):
            assert succ_k(c, st.point(i), aut, k) == oracle.counting_step(aut, tab, c, i, k)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_succ_k_formula_agrees(example, k):
    aut = example.automaton_neg
    vocab, names = counter_vocab(example.vocab, aut, k)
    f = succ_k_formula(aut, k, vocab, names)
    fn = logic.compile_formula(f)
    rows = list(itertools.product(range(-1, k + 2), repeat=aut.num_states))
    for c in reachable(aut, k, range(4)):
        for x in range(4):
            d = succ_k(c, {"x": x}, aut, k)
            for e in rows:
                val = {"x": x, **dict(zip(names, c)), **{n + "'": v for n, v in zip(names, e)}}
                assert bool(fn(val)) == (e == d)


def test_succ_k_formula_functional(example):
    aut, k = example.automaton_neg, 2
    vocab, names = counter_vocab(example.vocab, aut, k)
    f = succ_k_formula(aut, k, vocab, names)
    c = [vocab.var(n) for n in names]
    c1 = [vocab.var(n, 1) for n in names]
    d1 = z3.Ints(" ".join(f"d_{n}" for n in names))
    other = z3.substitute(f, *zip(c1, d1))
    box = z3.And(*[z3.And(v >= -1, v <= k + 1) for v in c + c1 + list(d1)])
    two = z3.And(box, f, other, z3.Or(*[a != b for a, b in zip(c1, d1)]))
    assert not logic.is_sat(two)
    # and a successor exists for every vector in range
    in_range = z3.And(*[z3.And(v >= -1, v <= k + 1) for v in c])
    out_range = z3.And(*[z3.And(v >= -1, v <= k + 1) for v in c1])
    assert logic.entails(in_range, z3.Exists(c1, z3.And(f, out_range)))


def test_sink_completion_forces_a_live_successor(example):
    x = example.vocab.var("x")
    aut = SymbolicAutomaton(example.vocab, 1, (0,), [Transition(0, x == 1, 0)], frozenset({0})).complete()
    vocab, names = counter_vocab(example.vocab, aut, 1)
    f = succ_k_formula(aut, 1, vocab, names)
    c = [vocab.var(n) for n in names]
    c1 = [vocab.var(n, 1) for n in names]
    live = z3.Or(*[v >= 0 for v in c])
    assert logic.entails(z3.And(f, live, *[v >= -1 for v in c]), z3.Or(*[v >= 0 for v in c1]))


def test_vector_bounds_and_absorption(example):
    aut = example.automaton_neg
    rng = random.Random(3)
    for k in range(4):
        for _ in range(80):
            c = initial_vector(aut)
            unsafe = False
            for _ in range(12):
                c = succ_k(c, {"x": rng.randint(-1, 4)}, aut, k)
                assert all(-1 <= v <= k + 1 for v in c)
                assert sum(v >= 0 for v in c) >= 1
                if unsafe:
                    assert max(c) == k + 1
                unsafe = unsafe or max(c) == k + 1


# -- k-safety solving ----------------------------------------------------------------


def test_no_final_states_is_immediate(example):
    aut = example.automaton_neg
    blank = SymbolicAutomaton(aut.vocab, aut.num_states, aut.initial, aut.transitions, frozenset())
    r = solve_k(example, blank, 3)
    assert r.iterations == 1
    assert logic.equivalent(r.at_c0, logic.TRUE)
    assert all(max(v) <= 0 for v in r.vectors)


def test_worked_example_k2(example, k2):
    assert logic.is_sat(k2.at_c0)
    assert logic.equivalent(k2.at_c0, solve_buchi(example).region)


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_bounded_k_safety_equals_oracle(bounded, k):
    box = oracle.GridBox.of_game(bounded)
    r = solve_k(bounded, bounded.automaton_neg, k)
    assert oracle.formula_region(r.at_c0, box) == oracle.explicit_ksafety(bounded, bounded.automaton_neg, k, box)


def test_symbolic_method_agrees(bounded):
    for k in (0, 2):
        a = solve_k(bounded, bounded.automaton_neg, k)
        b = solve_k(bounded, bounded.automaton_neg, k, method="symbolic")
        assert logic.equivalent(a.at_c0, b.at_c0)


@pytest.mark.parametrize("name", ["otf_example_bounded", "grid_buchi"])
def test_sandwich_and_monotone_in_k(name):
    g = corpus_game(name)
    box = oracle.GridBox.of_game(g)
    truth = oracle.explicit_solve(g, box)
    a_psi, a_neg = g.automaton.complete(), g.automaton_neg
    if a_neg is None:
        from logicgames.driver import automaton_for

        a_neg = automaton_for(g, True)
    prev = None
    for k in range(3):
        under = solve_k(g, a_neg, k).at_c0
        over = z3.And(g.domain(0), z3.Not(solve_k(g, a_psi, k, Perspective.ENVIRONMENT).at_c0))
        assert oracle.formula_region(under, box) <= truth <= oracle.formula_region(over, box)
        if prev is not None:
            assert logic.entails(prev, under)
        prev = under


def test_otf_loop_converges(example):
    res = otf_loop(example, example.automaton.complete(), example.automaton_neg)
    assert res.status is OtfStatus.CONVERGED
    assert logic.equivalent(res.W_U, res.W_O)
    assert logic.entails(res.W_U, res.W_O)
    assert res.monotone
    assert logic.equivalent(res.W_U, logic.TRUE)


# -- strategies ----------------------------------------------------------------------


def test_dest_pair_base_case(example):
    s0 = {"x": 5}
    assert dest_pair([s0], example.automaton_neg, 2) == (s0, (0, -1, -1, -1))


def test_dest_pair_folds_prefix(example):
    aut = example.automaton_neg
    prefix = [{"x": 0}, {"x": 0}, {"x": 0}, {"x": 1}, {"x": 7}]
    c = initial_vector(aut)
    for s in prefix[:-1]:
        c = succ_k(c, s, aut, 2)
    assert dest_pair(prefix, aut, 2) == (prefix[-1], c)
    assert dest_pair(prefix, aut, 2)[1] == (0, 0, -1, 2)


def test_sigma_prod_allows_moves_on_safe_plays(example, k2):
    aut = example.automaton_neg
    x1 = example.vocab.var("x", 1)
    rng = random.Random(11)
    cache: dict = {}
    for _ in range(1000):
        s, c = {"x": rng.randint(-3, 5)}, initial_vector(aut)
        for _ in range(6):
            if (s["x"], c) not in cache:
                allowed = sigma_prod(k2, example, aut, s, c)
                cache[s["x"], c] = [v for v in (1, 2) if logic.is_sat(z3.And(allowed, x1 == v))]
            options = cache[s["x"], c]
            assert options
            c = succ_k(c, s, aut, 2)
            t = {"x": rng.choice(options)}
            c = succ_k(c, t, aut, 2)
            assert max(c) <= 2
            s = t


def test_sigma_prod_outside_region(bounded):
    aut = bounded.automaton_neg
    r = solve_k(bounded, aut, 0)
    with pytest.raises(OutsideWinningRegion):
        sigma_prod(r, bounded, aut, {"x": 0}, (3, 3, 3, 3))
