"""Command line interface: ``logicgames solve|bench|simulate``."""
from __future__ import annotations

import argparse
import csv
import json
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import z3

from . import logic
from .automata import AutomatonError, load_automaton
from .driver import EMIT_KINDS, Engine, SolveOptions, Verdict, dispatch, emit
from .fixpoints import DEFAULT_CAP
from .game import GameError, StrategyAutomaton, load_game
from .otf import DEFAULT_KMAX

EXIT_OK = 0
EXIT_CAP = 2
EXIT_INPUT = 3

CORPUS = Path(__file__).parent / "corpus"


def _emit_kinds(text: str) -> set[str]:
    kinds = {k.strip() for k in text.split(",") if k.strip()}
    bad = kinds - set(EMIT_KINDS)
    if bad:
        raise argparse.ArgumentTypeError(f"unknown emit kind(s): {', '.join(sorted(bad))}")
    return kinds


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="logicgames", description="Solve infinite-state games with LTL objectives.")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--engine", choices=[e.value for e in Engine], default="auto")
        sp.add_argument("--cap", type=int, default=DEFAULT_CAP, help="iteration cap per fixpoint loop")
        sp.add_argument("--kmax", type=int, default=DEFAULT_KMAX, help="largest k for the OTF engine")
        sp.add_argument("--timeout-ms", type=int, default=None, help="per-query backend timeout")
        sp.add_argument("--player", choices=["C", "E"], default=None, help="override the game's player")

    s = sub.add_parser("solve", help="solve one game file")
    s.add_argument("game")
    common(s)
    s.add_argument("--emit", type=_emit_kinds, default=set(), help=f"comma list of {', '.join(EMIT_KINDS)}")
    s.add_argument("--out", default=".", help="directory for emitted files")
    s.add_argument("--automaton", help="automaton file for the objective (overrides the game file)")
    s.add_argument("--automaton-neg", help="automaton file for the negated objective")
    s.add_argument("--json", action="store_true", help="print the report as JSON")

    b = sub.add_parser("bench", help="solve every game file in a directory and print a CSV")
    b.add_argument("dir", nargs="?", default=str(CORPUS))
    common(b)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--time-limit", type=float, default=900.0, help="wall-clock seconds per game")
    b.add_argument("--all", action="store_true", help="include games marked as outside the default suite")
    b.add_argument("--csv", help="also write the CSV to this file")

    m = sub.add_parser("simulate", help="play a strategy against a random environment")
    m.add_argument("game")
    m.add_argument("strategy", help="strategy file (.json or .dot)")
    m.add_argument("--steps", type=int, default=100)
    m.add_argument("--plays", type=int, default=1)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--init", help="initial state as name=value,...; default: a model of the initial region")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "solve":
            return cmd_solve(args)
        if args.cmd == "bench":
            return cmd_bench(args)
        return cmd_simulate(args)
    except (GameError, AutomatonError, logic.LogicError, FileNotFoundError, json.JSONDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


def _options(args) -> SolveOptions:
    return SolveOptions(
        engine=args.engine,
        iteration_cap=args.cap,
        k_max=args.kmax,
        backend_timeout_ms=args.timeout_ms,
        emit=getattr(args, "emit", set()),
        player=args.player,
    )


def cmd_solve(args) -> int:
    game = load_game(args.game)
    if args.automaton:
        game.automaton = load_automaton(args.automaton, game.vocab)
    if args.automaton_neg:
        game.automaton_neg = load_automaton(args.automaton_neg, game.vocab)
    opts = _options(args)
    report = dispatch(game, opts)
    if opts.emit:
        emit(report, opts.emit, args.out)
    if args.json:
        print(json.dumps(report.to_json(), indent=2, ensure_ascii=False))
    else:
        print(f"game:     {report.game}")
        print(f"engine:   {report.engine.value}")
        print(f"player:   {report.player}")
        print(f"verdict:  {report.verdict.value}")
        print(f"status:   {report.status}" + (f" ({report.error})" if report.error else ""))
        if report.region is not None:
            print(f"region:   {_show(report.region)}")
        if report.region_over is not None:
            print(f"over:     {_show(report.region_over)}")
        if report.k is not None:
            print(f"k:        {report.k}")
        print(f"iters:    {report.iterations}")
        print(f"seconds:  {report.seconds:.2f}")
        for kind, path in report.artifacts.items():
            print(f"{kind}: {path}")
    return EXIT_CAP if report.verdict in (Verdict.CAP_REACHED, Verdict.UNKNOWN_UNDER) else EXIT_OK


def _show(f) -> str:
    try:
        return logic.formula_to_text(f)
    except logic.Unprintable:
        return str(f)


def cmd_bench(args) -> int:
    files = sorted(Path(args.dir).glob("*.game.json"))
    def run(path: Path) -> dict:
        data = json.loads(path.read_text())
        bench = data.get("bench", {})
        row = {"game": data.get("name", path.stem), "engine": "", "iterations": "", "k": "", "seconds": "",
               "verdict": "", "paper_seconds": bench.get("paper_seconds", ""), "ratio": ""}
        if not args.all and bench.get("in_suite") is False:
            row["verdict"] = "skipped"
            return row
        cmd = [sys.executable, "-m", "logicgames.cli", "solve", str(path), "--json", "--engine", args.engine,
               "--cap", str(args.cap), "--kmax", str(args.kmax)]
        if args.timeout_ms:
            cmd += ["--timeout-ms", str(args.timeout_ms)]
        if args.player:
            cmd += ["--player", args.player]
        t0 = time.perf_counter()
        try:
            out = subprocess.run(cmd, capture_output=True, text=True, timeout=args.time_limit)
        except subprocess.TimeoutExpired:
            row.update(verdict="timeout", seconds=f"{time.perf_counter() - t0:.2f}")
            return row
        if out.returncode == EXIT_INPUT or not out.stdout.strip():
            row["verdict"] = "error"
            return row
        rep = json.loads(out.stdout)
        row.update(engine=rep["engine"], iterations=rep["iterations"], k="" if rep["k"] is None else rep["k"],
                   seconds=f"{rep['seconds']:.2f}", verdict=rep["verdict"])
        if row["paper_seconds"]:
            row["ratio"] = f"{rep['seconds'] / row['paper_seconds']:.2f}"
        return row

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        rows = list(pool.map(run, files))
    fields = ["game", "engine", "iterations", "k", "seconds", "verdict", "paper_seconds", "ratio"]
    w = csv.DictWriter(sys.stdout, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w2 = csv.DictWriter(fh, fieldnames=fields)
            w2.writeheader()
            w2.writerows(rows)
    bad = [r for r in rows if r["verdict"] in ("error",)]
    return EXIT_INPUT if bad else EXIT_OK


def cmd_simulate(args) -> int:
    from .oracle import Simulator, StrategyHole

    game = load_game(args.game)
    text = Path(args.strategy).read_text()
    if args.strategy.endswith(".dot"):
        strat = StrategyAutomaton.from_dot(text, game.vocab)
    else:
        strat = StrategyAutomaton.from_json(json.loads(text), game.vocab)
    sim = Simulator(game, strat)
    if args.init:
        init = {}
        for part in args.init.split(","):
            name, _, val = part.partition("=")
            v = Fraction(val.strip())
            init[name.strip()] = int(v) if v.denominator == 1 else v
    else:
        r = logic.check(z3.And(game.init if game.init is not None else logic.TRUE, game.domain(0)))
        if not r:
            print("error: empty initial region", file=sys.stderr)
            return EXIT_INPUT
        init = {n: r.model.get(n, 0) for n in sim.names}
    for i in range(args.plays):
        try:
            play = sim.play(init, args.steps, args.seed + i)
        except StrategyHole as e:
            print(f"play {i}: strategy hole: {e}")
            return EXIT_CAP
        last = play.positions[-1]
        print(f"play {i}: {len(play.positions)} positions, last state " + ", ".join(f"{k}={v}" for k, v in last.items()))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
