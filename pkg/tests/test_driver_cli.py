from __future__ import annotations

import json
import subprocess
import sys

import pytest
import z3

from logicgames import cli, logic, oracle
from logicgames.automata import SymbolicAutomaton, Transition
from logicgames.driver import (
    Engine,
    Report,
    SolveOptions,
    Verdict,
    automaton_for,
    choose_engine,
    dispatch,
    emit,
    realizability,
)
from logicgames.game import StrategyAutomaton, game_from_json

from conftest import CORPUS, corpus_game


# -- engine choice -------------------------------------------------------------------


def test_elevator_goes_to_buchi_product():
    engine, a_psi, _ = choose_engine(corpus_game("elevator"))
    assert engine is Engine.PRODUCT_GF
    assert a_psi.is_deterministic()


def test_cinderella_safety_goes_simple():
    assert choose_engine(corpus_game("cinderella_c3"))[0] is Engine.SIMPLE


def test_cinderella_general_goes_otf():
    engine, a_psi, a_neg = choose_engine(corpus_game("cinderella_c1_4_gen"))
    assert engine is Engine.OTF
    assert not a_psi.is_deterministic() and not a_neg.is_deterministic()


def _aut(vocab, deterministic: bool) -> SymbolicAutomaton:
    x = vocab.var("x")
    if deterministic:
        return SymbolicAutomaton(vocab, 1, (0,), [Transition(0, logic.TRUE, 0)], frozenset({0}))
    return SymbolicAutomaton(vocab, 2, (0,), [Transition(0, logic.TRUE, 0), Transition(0, x >= 0, 1),
                                              Transition(1, logic.TRUE, 1)], frozenset({1}))


@pytest.mark.parametrize("det_psi, det_neg, expect", [
    (True, True, Engine.PRODUCT_GF),
    (True, False, Engine.PRODUCT_GF),
    (False, True, Engine.PRODUCT_FG),
    (False, False, Engine.OTF),
])
def test_dispatch_order_with_injected_automata(det_psi, det_neg, expect):
    g = corpus_game("elevator")
    engine, _, _ = choose_engine(g, _aut(g.vocab, det_psi), _aut(g.vocab, det_neg))
    assert engine is expect


def test_simple_shape_wins_over_automata():
    g = corpus_game("grid_buchi")
    assert choose_engine(g, _aut(g.vocab, True), _aut(g.vocab, True))[0] is Engine.SIMPLE


def test_automaton_for_prefers_file():
    g = corpus_game("otf_example")
    assert automaton_for(g, True).num_states == 4
    t = automaton_for(corpus_game("grid_reach"), False)
    assert t.is_complete()


# -- dispatch and verdicts -----------------------------------------------------------


def test_dispatch_cinderella_c3_realizable():
    r = dispatch(corpus_game("cinderella_c3"))
    assert r.engine is Engine.SIMPLE and r.exact
    assert r.verdict is Verdict.REALIZABLE


def test_dispatch_elevator_bounded_product():
    g = corpus_game("elevator_bounded")
    r = dispatch(g)
    assert r.engine is Engine.PRODUCT_GF
    assert logic.equivalent(r.region, g.domain(0))
    assert r.verdict is Verdict.REALIZABLE


def test_dispatch_otf_on_example():
    g = corpus_game("otf_example")
    r = dispatch(g, SolveOptions(engine=Engine.OTF))
    assert r.exact and r.k is not None
    assert r.verdict is Verdict.REALIZABLE
    assert r.checks["otf_monotone_in_k"]


def test_false_init_is_vacuously_realizable():
    r = Report("g", Engine.SIMPLE, "C", region=logic.FALSE, exact=True)
    assert realizability(r, logic.FALSE) is Verdict.REALIZABLE


def test_partial_and_unrealizable():
    x = z3.Int("x")
    r = Report("g", Engine.SIMPLE, "C", region=x >= 0, exact=True)
    assert realizability(r, z3.And(x >= -1, x <= 1)) is Verdict.PARTIAL
    assert realizability(r, x == -5) is Verdict.UNREALIZABLE


def test_otf_verdicts():
    x = z3.Int("x")
    r = Report("g", Engine.OTF, "C", region=x >= 2, region_over=x >= 0)
    assert realizability(r, x == 3) is Verdict.REALIZABLE
    assert realizability(r, x == -1) is Verdict.UNREALIZABLE
    assert realizability(r, x == 1) is Verdict.UNKNOWN_UNDER


def test_cap_is_never_unrealizable():
    r = dispatch(corpus_game("walk_below_zero"), SolveOptions(iteration_cap=20))
    assert r.status == "cap"
    assert r.verdict is Verdict.CAP_REACHED


# -- emission ------------------------------------------------------------------------


def test_emit_empty_region(tmp_path):
    g = corpus_game("box")
    r = Report("empty", Engine.SIMPLE, "C", region=logic.FALSE, exact=True, vocab=g.vocab)
    paths = emit(r, {"region_smt2", "report_json"}, tmp_path)
    text = open(paths["region_smt2"]).read()
    assert "(assert false)" in text
    assert "(declare-const x Int)" in text or "(declare-fun x () Int)" in text
    data = json.loads(open(paths["report_json"]).read())
    assert data["game"] == "empty"


def test_emitted_region_reloads(tmp_path):
    g = corpus_game("diagonal")
    r = dispatch(g)
    paths = emit(r, {"region_smt2"}, tmp_path)
    back = logic.formula_from_smtlib(open(paths["region_smt2"]).read(), g.vocab)
    assert logic.equivalent(back, r.region)


def test_dot_replay_reproduces_plays(tmp_path):
    g = corpus_game("elevator_bounded")
    r = dispatch(g)
    paths = emit(r, {"strategy_dot", "strategy_json"}, tmp_path)
    from_dot = StrategyAutomaton.from_dot(open(paths["strategy_dot"]).read(), g.vocab)
    from_json = StrategyAutomaton.from_json(json.loads(open(paths["strategy_json"]).read()), g.vocab)
    for seed in range(5):
        base = oracle.Simulator(g, r.strategy).play({"x": seed}, 100, seed).positions
        assert oracle.Simulator(g, from_dot).play({"x": seed}, 100, seed).positions == base
        assert oracle.Simulator(g, from_json).play({"x": seed}, 100, seed).positions == base


def test_dot_shapes():
    r = dispatch(corpus_game("elevator_bounded"))
    dot = r.strategy.to_dot()
    assert "shape=box" in dot and "shape=ellipse" in dot


# -- command line --------------------------------------------------------------------


def test_cli_solve_ok(capsys):
    assert cli.main(["solve", str(CORPUS / "cinderella_c3.game.json"), "--json"]) == cli.EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["verdict"] == "Realizable"
    assert out["engine"] == "simple"


def test_cli_solve_cap():
    assert cli.main(["solve", str(CORPUS / "walk_below_zero.game.json"), "--cap", "5"]) == cli.EXIT_CAP


def test_cli_input_errors(tmp_path, capsys):
    assert cli.main(["solve", str(tmp_path / "missing.json")]) == cli.EXIT_INPUT
    bad = tmp_path / "bad.game.json"
    bad.write_text('{"variables": [{"name": "x"}], "controller": "x\' ==", "environment": "true", "spec": "G x > 0"}')
    assert cli.main(["solve", str(bad)]) == cli.EXIT_INPUT
    broken = tmp_path / "broken.game.json"
    broken.write_text("{not json")
    assert cli.main(["solve", str(broken)]) == cli.EXIT_INPUT


def test_cli_emit_and_simulate(tmp_path, capsys):
    game = str(CORPUS / "box.game.json")
    assert cli.main(["solve", game, "--emit", "strategy_json,region_smt2", "--out", str(tmp_path)]) == cli.EXIT_OK
    strat = tmp_path / "box.strategy.json"
    assert strat.exists() and (tmp_path / "box.region.smt2").exists()
    capsys.readouterr()
    assert cli.main(["simulate", game, str(strat), "--steps", "10", "--init", "x=1,y=0"]) == cli.EXIT_OK
    assert "x" in capsys.readouterr().out


def test_cli_entry_point_runs():
    out = subprocess.run([sys.executable, "-m", "logicgames.cli", "solve", str(CORPUS / "box.game.json"), "--json"],
                         capture_output=True, text=True, timeout=300)
    assert out.returncode == 0
    assert json.loads(out.stdout)["verdict"] == "Partial"


def test_cli_bench_csv(tmp_path):
    d = tmp_path / "games"
    d.mkdir()
    for name in ("box", "otf_example"):
        src = json.loads((CORPUS / f"{name}.game.json").read_text())
        for key in ("automaton", "automaton_neg"):
            if key in src:
                src[key] = str(CORPUS / src[key])
        (d / f"{name}.game.json").write_text(json.dumps(src))
    csv = tmp_path / "out.csv"
    assert cli.main(["bench", str(d), "--csv", str(csv), "--time-limit", "300"]) == cli.EXIT_OK
    rows = csv.read_text().splitlines()
    assert rows[0].startswith("game,engine,iterations,k,seconds,verdict")
    assert len(rows) == 3


def test_game_player_override():
    g = game_from_json({"variables": [{"name": "x", "min": 0, "max": 3}], "controller": ["x' == x"],
                        "environment": "x' == x || x' == x + 1 || x' == x - 1", "spec": "G x <= 2"})
    c = dispatch(g)
    e = dispatch(g, SolveOptions(player="E"))
    x = g.vocab.var("x")
    # the environment can push x past 2, so the idle controller wins nowhere
    assert not logic.is_sat(z3.And(c.region, g.domain(0)))
    # as the player, the environment keeps x fixed
    assert logic.equivalent(z3.And(e.region, g.domain(0)), z3.And(x <= 2, g.domain(0)))
