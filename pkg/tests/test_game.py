from __future__ import annotations

import json

import pytest
import z3

from logicgames import logic, oracle
from logicgames.automata import SymbolicAutomaton, Transition
from logicgames.fixpoints import solve_simple
from logicgames.game import (
    GameError,
    IncompleteGameError,
    Polarity,
    StrategyAutomaton,
    fnd_moves,
    game_from_json,
    game_to_json,
    lift_strategy,
    product,
    project_initial_q,
)
from logicgames.logic import parse_constraint

from conftest import CORPUS, corpus_game, int_vocab


def always_accepting(vocab) -> SymbolicAutomaton:
    return SymbolicAutomaton(vocab, 1, (0,), [Transition(0, logic.TRUE, 0)], frozenset({0}))


# -- loading -------------------------------------------------------------------------


def test_load_elevator():
    g = corpus_game("elevator", check=True)
    assert g.vocab.names == ["x"]
    assert len(fnd_moves(g.con, g.vocab)) == 3
    assert g.automaton is not None and g.automaton.is_deterministic()


def test_load_cinderella():
    g = corpus_game("cinderella_c3", check=True)
    assert g.vocab.names == [f"b{i}" for i in range(1, 6)]
    assert all(d.sort.value == "Real" for d in g.vocab)
    assert logic.equivalent(g.init, z3.And(*[g.vocab.var(f"b{i}") == 0 for i in range(1, 6)]))


def test_incomplete_environment_rejected():
    data = {"variables": [{"name": "x"}], "controller": "x' == x", "environment": "false", "spec": "G x >= 0"}
    with pytest.raises(IncompleteGameError):
        game_from_json(data)


def test_missing_key_rejected():
    with pytest.raises(GameError):
        game_from_json({"variables": [{"name": "x"}], "controller": "x' == x", "spec": "G x >= 0"})


def test_json_round_trip():
    g = corpus_game("box")
    h = game_from_json(json.loads(json.dumps(game_to_json(g))))
    assert logic.equivalent(g.con, h.con) and logic.equivalent(g.env, h.env)
    assert g.vocab == h.vocab


def test_every_corpus_game_is_complete():
    for p in sorted(CORPUS.glob("*.game.json")):
        corpus_game(p.name.split(".")[0], check=True)


# -- FND -----------------------------------------------------------------------------


def test_fnd_single_move():
    v = int_vocab("x")
    assert len(fnd_moves(parse_constraint("x' == x", v), v)) == 1


def test_fnd_rejects_relational_move():
    v = int_vocab("x")
    assert fnd_moves(parse_constraint("x' >= x", v), v) is None


@pytest.mark.parametrize("name", ["elevator_bounded", "box", "grid_buchi", "otf_example_bounded"])
def test_fnd_preserved_by_product(name):
    g = corpus_game(name)
    aut = g.automaton.complete() if g.automaton is not None else always_accepting(g.vocab)
    pg = product(g, aut, Polarity.ACCEPTING)
    if fnd_moves(g.con, g.vocab) is not None:
        assert fnd_moves(pg.game.con, pg.game.vocab) is not None


# -- product -------------------------------------------------------------------------


def test_elevator_product_shape():
    g = corpus_game("elevator")
    pg = product(g, g.automaton, Polarity.ACCEPTING)
    assert pg.game.vocab.names == ["x", "q"]
    assert type(pg.game.objective).__name__ == "Globally"
    assert len(fnd_moves(pg.game.con, pg.game.vocab)) == 3


def test_product_with_trivial_automaton_wins_everywhere():
    g = corpus_game("box")
    pg = product(g, always_accepting(g.vocab), Polarity.ACCEPTING)
    r = solve_simple(pg.game, strategy=False)
    W = project_initial_q(r.region, pg)
    assert logic.equivalent(W, g.domain(0))
    box = oracle.GridBox.of_game(g)
    assert oracle.formula_region(W, box) == oracle.explicit_product_solve(g, always_accepting(g.vocab), "buchi", box)


def test_watertank_liveness_product():
    g = corpus_game("watertank_liveness")
    assert g.automaton.num_states == 3 and g.automaton.is_deterministic()
    pg = product(g, g.automaton, Polarity.ACCEPTING)
    assert pg.game.vocab.names == ["x", "q"]


def test_product_refuses_nondeterministic():
    g = corpus_game("eventually_stable")
    with pytest.raises(GameError):
        product(g, g.automaton, Polarity.ACCEPTING)


def test_product_refuses_incomplete():
    g = corpus_game("otf_example")
    aut = SymbolicAutomaton(g.vocab, 1, (0,), [Transition(0, g.vocab.var("x") == 1, 0)], frozenset({0}))
    with pytest.raises(GameError):
        product(g, aut, Polarity.ACCEPTING)


def test_project_initial_q_substitutes():
    g = corpus_game("otf_example")
    pg = product(g, g.automaton.complete(), Polarity.ACCEPTING)
    x, q = pg.game.vocab.var("x"), pg.game.vocab.var("q")
    W = z3.Or(z3.And(q == 0, x >= 1), z3.And(q == 1, x >= 5))
    assert logic.equivalent(project_initial_q(W, pg), x >= 1)
    assert z3.is_false(project_initial_q(logic.FALSE, pg))


# -- strategies ----------------------------------------------------------------------


def test_lift_with_one_state_automaton_projects_labels():
    g = corpus_game("box")
    pg = product(g, always_accepting(g.vocab), Polarity.ACCEPTING)
    r = solve_simple(pg.game)
    lifted = lift_strategy(pg, r.strategy)
    assert len(lifted.edges) == len(r.strategy.edges)
    q, q1 = pg.game.vocab.var("q"), pg.game.vocab.var("q", 1)
    zero = [(q, z3.IntVal(0)), (q1, z3.IntVal(0))]
    for (_, _, m), (_, _, n) in zip(r.strategy.edges, lifted.edges):
        assert logic.equivalent(lifted.ctrl_states[n], z3.substitute(r.strategy.ctrl_states[m], *zero))


@pytest.fixture(scope="module")
def elevator_bounded_lifted():
    g = corpus_game("elevator_bounded")
    pg = product(g, g.automaton, Polarity.ACCEPTING)
    r = solve_simple(pg.game)
    return g, pg, r, lift_strategy(pg, r.strategy)


def moves_at(strat: StrategyAutomaton, env: str, x: int) -> frozenset[int]:
    ctrl = strat.choose({env}, {"x": x})
    return frozenset(n for n in (x - 1, x, x + 1) for c in ctrl if strat.allowed({c}, {"x": x}, {"x": n}))


def test_elevator_lifted_strategy_uses_memory(elevator_bounded_lifted):
    g, pg, r, lifted = elevator_bounded_lifted
    assert logic.equivalent(project_initial_q(r.region, pg), g.domain(0))
    behaviours = {moves_at(lifted, e, 2) for e in lifted.env_states} - {frozenset()}
    assert len(behaviours) >= 2


def test_lifted_strategy_plays_stay_winning(elevator_bounded_lifted):
    g, _, _, lifted = elevator_bounded_lifted
    sim = oracle.Simulator(g, lifted)
    x = g.vocab.var("x")
    for seed in range(4):
        play = sim.play({"x": seed * 3}, 500, seed)
        assert play.always(g.domain(0))
        tail = oracle.Play(play.positions[500:])
        assert all(tail.count(x == f) > 0 for f in (1, 2, 3))


def test_strategy_json_and_dot_round_trip(elevator_bounded_lifted):
    g, _, _, lifted = elevator_bounded_lifted
    a = StrategyAutomaton.from_json(json.loads(json.dumps(lifted.to_json())), g.vocab)
    b = StrategyAutomaton.from_dot(lifted.to_dot(), g.vocab)
    for s in (a, b):
        assert s.initial == lifted.initial
        assert s.env_states == lifted.env_states
        assert set(s.ctrl_states) == set(lifted.ctrl_states)
        assert len(s.edges) == len(lifted.edges) and len(s.back_edges) == len(lifted.back_edges)
        p1 = oracle.Simulator(g, lifted).play({"x": 5}, 120, 3)
        p2 = oracle.Simulator(g, s).play({"x": 5}, 120, 3)
        assert p1.positions == p2.positions
