"""Engine selection, realizability verdicts and report/strategy emission."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

import z3

from . import logic
from .automata import SymbolicAutomaton, ltl_to_ba
from .fixpoints import (
    DEFAULT_CAP,
    Bound,
    IterationCapExceeded,
    Perspective,
    SolveResult,
    solve_simple,
)
from .game import Game, Polarity, StrategyAutomaton, lift_strategy, product, project_initial_q
from .logic import Formula, Vocabulary, formula_to_smtlib
from .ltl import General, classify, negate_nnf
from .otf import DEFAULT_KMAX, OtfResult, OtfStatus, otf_loop


class Engine(str, Enum):
    AUTO = "auto"
    SIMPLE = "simple"
    PRODUCT_GF = "product_gf"
    PRODUCT_FG = "product_fg"
    OTF = "otf"


class Verdict(str, Enum):
    REALIZABLE = "Realizable"
    UNREALIZABLE = "Unrealizable"
    PARTIAL = "Partial"
    UNKNOWN_UNDER = "UnknownUnder"
    CAP_REACHED = "CapReached"


EMIT_KINDS = ("region_smt2", "strategy_dot", "strategy_json", "report_json")


@dataclass
class SolveOptions:
    engine: Engine | str = Engine.AUTO
    iteration_cap: int = DEFAULT_CAP
    k_max: int = DEFAULT_KMAX
    backend_timeout_ms: int | None = None
    emit: frozenset[str] = frozenset()
    player: str | None = None
    strategy: bool = True

    def __post_init__(self):
        self.engine = Engine(self.engine)
        self.emit = frozenset(self.emit)
        bad = self.emit - set(EMIT_KINDS)
        if bad:
            raise ValueError(f"unknown emit kinds {sorted(bad)}")


@dataclass
class Report:
    game: str
    engine: Engine
    player: str
    region: Formula | None = None
    region_over: Formula | None = None
    exact: bool = False
    verdict: Verdict | None = None
    status: str = "ok"
    error: str | None = None
    iterations: int = 0
    sizes: list[int] = field(default_factory=list)
    k: int | None = None
    per_k: list[dict] = field(default_factory=list)
    seconds: float = 0.0
    strategy: StrategyAutomaton | None = None
    artifacts: dict[str, str] = field(default_factory=dict)
    result: object = None
    product_region: Formula | None = None
    checks: dict[str, bool] = field(default_factory=dict)
    vocab: Vocabulary | None = None

    def to_json(self) -> dict:
        def txt(f):
            return None if f is None else logic.formula_dump(f)

        return {
            "game": self.game,
            "engine": self.engine.value,
            "player": self.player,
            "verdict": self.verdict.value if self.verdict else None,
            "status": self.status,
            "error": self.error,
            "exact": self.exact,
            "region": txt(self.region),
            "region_smt2": formula_to_smtlib(self.region, self.vocab) if self.region is not None and self.vocab else None,
            "region_over": txt(self.region_over),
            "iterations": self.iterations,
            "sizes": self.sizes,
            "k": self.k,
            "per_k": [
                {key: (txt(v) if isinstance(v, z3.ExprRef) else v) for key, v in row.items()} for row in self.per_k
            ],
            "seconds": round(self.seconds, 3),
            "checks": self.checks,
            "strategy": self.strategy.to_json() if self.strategy is not None else None,
            "artifacts": self.artifacts,
        }


# ---------------------------------------------------------------------------
# Automata for general objectives


def automaton_for(game: Game, negated: bool) -> SymbolicAutomaton:
    """The user-supplied automaton when present, else a translation; always complete."""
    given = game.automaton_neg if negated else game.automaton
    if given is not None:
        return given.complete()
    phi = negate_nnf(game.objective) if negated else game.objective
    return ltl_to_ba(phi, game.vocab)


def choose_engine(game: Game, a_psi=None, a_neg=None) -> tuple[Engine, SymbolicAutomaton | None, SymbolicAutomaton | None]:
    """Simple shape first, then a deterministic A_psi, then a deterministic A_not_psi, else OTF."""
    if not isinstance(classify(game.objective), General):
        return Engine.SIMPLE, None, None
    a_psi = a_psi or automaton_for(game, False)
    if a_psi.is_deterministic():
        return Engine.PRODUCT_GF, a_psi, None
    a_neg = a_neg or automaton_for(game, True)
    if a_neg.is_deterministic():
        return Engine.PRODUCT_FG, a_psi, a_neg
    return Engine.OTF, a_psi, a_neg


# ---------------------------------------------------------------------------
# Dispatch


def dispatch(game: Game, opts: SolveOptions | None = None, backend: logic.Backend | None = None) -> Report:
    opts = opts or SolveOptions()
    backend = backend or (logic.Backend(timeout_ms=opts.backend_timeout_ms) if opts.backend_timeout_ms else None)
    player = opts.player or game.player.value
    persp = Perspective(player)
    t0 = time.perf_counter()
    engine = opts.engine
    a_psi = a_neg = None
    report = Report(game.name, engine, player, vocab=game.vocab)
    pg = None
    try:
        if engine is Engine.AUTO:
            engine, a_psi, a_neg = choose_engine(game)
        report.engine = engine
        if engine is Engine.SIMPLE:
            res = solve_simple(game, persp, opts.iteration_cap, backend, opts.strategy)
            _from_simple(report, res)
        elif engine in (Engine.PRODUCT_GF, Engine.PRODUCT_FG):
            gf = engine is Engine.PRODUCT_GF
            aut = (a_psi or automaton_for(game, False)) if gf else (a_neg or automaton_for(game, True))
            pg = product(game, aut, Polarity.ACCEPTING if gf else Polarity.REJECTING)
            res = solve_simple(pg.game, persp, opts.iteration_cap, backend, opts.strategy)
            _from_simple(report, res)
            report.product_region = res.region
            report.region = project_initial_q(res.region, pg)
            if res.strategy is not None:
                report.strategy = lift_strategy(pg, res.strategy)
        elif engine is Engine.OTF:
            a_psi = a_psi or automaton_for(game, False)
            a_neg = a_neg or automaton_for(game, True)
            res = otf_loop(game, a_psi, a_neg, opts.k_max, opts.iteration_cap, backend, persp, strategy=opts.strategy)
            _from_otf(report, res)
        else:
            raise ValueError(f"unknown engine {engine}")
    except IterationCapExceeded as e:
        report.status = "cap"
        report.error = str(e)
        last = project_initial_q(e.last, pg) if pg is not None else e.last
        if e.bound is Bound.UNDER:
            report.region = last
        else:
            report.region_over = last
        report.verdict = Verdict.CAP_REACHED
    except logic.BackendUnknown as e:
        report.status = "unknown"
        report.error = str(e)
        report.verdict = Verdict.CAP_REACHED
    report.seconds = time.perf_counter() - t0
    if report.verdict is None:
        report.verdict = realizability(report, game.init, game.domain(0), backend)
    return report


def _from_simple(report: Report, res: SolveResult) -> None:
    report.region = res.region
    report.exact = True
    report.iterations = res.iterations
    report.sizes = res.sizes
    report.strategy = res.strategy
    report.result = res


def _from_otf(report: Report, res: OtfResult) -> None:
    report.region = res.W_U
    report.region_over = res.W_O
    report.k = res.k_used
    report.per_k = res.per_k
    report.exact = res.status is OtfStatus.CONVERGED
    report.strategy = res.strategy
    report.result = res
    report.checks["otf_monotone_in_k"] = res.monotone
    if res.status is not OtfStatus.CONVERGED:
        report.status = res.status.value
    report.iterations = sum(row.get("iterations_under", 0) for row in res.per_k)


def realizability(report: Report, init: Formula | None, domain: Formula = logic.TRUE,
                  backend: logic.Backend | None = None) -> Verdict:
    """Does the player win from every initial state?"""
    be = backend or logic.default_backend()
    init = z3.And(init if init is not None else logic.TRUE, domain)
    if report.status == "cap" or report.region is None and report.region_over is None:
        return Verdict.CAP_REACHED
    if report.exact:
        W = report.region
        if be.entails(init, W):
            return Verdict.REALIZABLE
        if not be.check(z3.And(init, W)):
            return Verdict.UNREALIZABLE
        return Verdict.PARTIAL
    if report.region is not None and be.entails(init, report.region):
        return Verdict.REALIZABLE
    if report.region_over is not None and be.entails(init, z3.Not(report.region_over)):
        return Verdict.UNREALIZABLE
    return Verdict.UNKNOWN_UNDER


# ---------------------------------------------------------------------------
# Output


def emit(report: Report, kinds: Iterable[str], out_dir: str | Path) -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = report.game or "game"
    kinds = set(kinds)
    if "region_smt2" in kinds:
        p = out / f"{stem}.region.smt2"
        p.write_text(formula_to_smtlib(report.region if report.region is not None else logic.FALSE, report.vocab))
        report.artifacts["region_smt2"] = str(p)
    if "strategy_dot" in kinds and report.strategy is not None:
        p = out / f"{stem}.strategy.dot"
        p.write_text(report.strategy.to_dot())
        report.artifacts["strategy_dot"] = str(p)
    if "strategy_json" in kinds and report.strategy is not None:
        p = out / f"{stem}.strategy.json"
        p.write_text(json.dumps(report.strategy.to_json(), indent=2))
        report.artifacts["strategy_json"] = str(p)
    if "report_json" in kinds:
        p = out / f"{stem}.report.json"
        report.artifacts["report_json"] = str(p)
        p.write_text(json.dumps(report.to_json(), indent=2, ensure_ascii=False))
    return dict(report.artifacts)
