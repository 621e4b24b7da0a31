"""Logical two-player games, their product with an automaton, and strategy automata.

A round is a controller move ``Con(V, V')`` followed by an environment move
``Env(V', V'')``.  Variable bounds declared in the game file form the domain
``D``: every reachable state, including the intermediate one, must satisfy it.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import z3

from . import logic
from .automata import SymbolicAutomaton, load_automaton
from .logic import (
    Formula,
    LogicError,
    Role,
    Sort,
    VarDecl,
    Vocabulary,
    disj,
    formula_dump,
    formula_load,
    parse_constraint,
)
from .ltl import Atom, Eventually, Globally, Ltl, parse_ltl, to_text


class GameError(LogicError):
    pass


class IncompleteGameError(GameError):
    def __init__(self, who: str, state: dict):
        self.who = who
        self.state = state
        super().__init__(f"{who} has no legal move at {state}")


class Player(str, Enum):
    CONTROLLER = "C"
    ENVIRONMENT = "E"

    @property
    def other(self) -> Player:
        return Player.ENVIRONMENT if self is Player.CONTROLLER else Player.CONTROLLER


@dataclass
class Game:
    vocab: Vocabulary
    con: Formula
    env: Formula
    objective: Ltl
    init: Formula | None = None
    player: Player = Player.CONTROLLER
    name: str = ""
    automaton: SymbolicAutomaton | None = None
    automaton_neg: SymbolicAutomaton | None = None
    objective_text: str = ""
    source: Path | None = None
    meta: dict = field(default_factory=dict)

    def domain(self, tier: int = 0) -> Formula:
        return self.vocab.domain(tier)

    def check_complete(self) -> None:
        """Raise :class:`IncompleteGameError` unless both players always have a move."""
        for who, rel in (("controller", self.con), ("environment", self.env)):
            moves = logic.qelim(z3.Exists(self.vocab.vars(1), z3.And(rel, self.domain(1))))
            r = logic.check(z3.And(self.domain(0), z3.Not(moves)))
            if r:
                state = {n: r.model.get(n, Fraction(0)) for n in self.vocab.names}
                raise IncompleteGameError(who, state)


def _parse_bound(v) -> Fraction | None:
    if v is None:
        return None
    s = str(v).strip()
    neg = s.startswith("-")
    f = logic.parse_rational(s.lstrip("-"))
    return -f if neg else f


def vocab_from_json(spec: list[dict]) -> Vocabulary:
    decls = []
    for v in spec:
        sort = Sort(v.get("sort", "Int"))
        decls.append(VarDecl(v["name"], sort, Role.STATE, _parse_bound(v.get("min")), _parse_bound(v.get("max"))))
    return Vocabulary(decls)


def load_game(path: str | Path, check: bool = True) -> Game:
    path = Path(path)
    data = json.loads(path.read_text())
    return game_from_json(data, path, check)


def game_from_json(data: dict, path: Path | None = None, check: bool = True) -> Game:
    data = dict(data)
    for key, alias in (("controller", "con"), ("environment", "env"), ("spec", "objective")):
        if key not in data and alias in data:
            data[key] = data[alias]
    for key in ("variables", "controller", "environment", "spec"):
        if key not in data:
            raise GameError(f"game file lacks {key!r}")
    vocab = vocab_from_json(data["variables"])
    con = _relation(data["controller"], vocab)
    env = _relation(data["environment"], vocab)
    objective = parse_ltl(data["spec"], vocab)
    init = parse_constraint(data["init"], vocab, max_tier=0) if data.get("init") else None
    base = path.parent if path else Path(".")
    aut = aut_neg = None
    if data.get("automaton"):
        aut = load_automaton(base / data["automaton"], vocab)
    if data.get("automaton_neg"):
        aut_neg = load_automaton(base / data["automaton_neg"], vocab)
    g = Game(
        vocab=vocab,
        con=con,
        env=env,
        objective=objective,
        init=init,
        player=Player(data.get("player", "C")),
        name=data.get("name", path.stem if path else ""),
        automaton=aut,
        automaton_neg=aut_neg,
        objective_text=data["spec"],
        source=path,
        meta={k: v for k, v in data.items() if k in ("description", "bench", "oracle_box", "notes")},
    )
    if check:
        g.check_complete()
    return g


def _relation(spec, vocab: Vocabulary) -> Formula:
    """A move relation: one constraint string, or a list of them read as a disjunction."""
    if isinstance(spec, str):
        return parse_constraint(spec, vocab, max_tier=1)
    parts = [parse_constraint(s, vocab, max_tier=1) for s in spec]
    return parts[0] if len(parts) == 1 else z3.Or(*parts)


def game_to_json(g: Game) -> dict:
    out = {
        "name": g.name,
        "variables": [
            {k: v for k, v in (("name", d.name), ("sort", d.sort.value), ("min", _fmt(d.lo)), ("max", _fmt(d.hi))) if v is not None}
            for d in g.vocab
            if d.role is Role.STATE
        ],
        "controller": [formula_dump(m) for m in logic.top_disjuncts(g.con)],
        "environment": [formula_dump(m) for m in logic.top_disjuncts(g.env)],
        "spec": g.objective_text or to_text(g.objective),
        "player": g.player.value,
    }
    if g.init is not None:
        out["init"] = formula_dump(g.init)
    return out


def _fmt(v: Fraction | None):
    if v is None:
        return None
    return v.numerator if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


# ---------------------------------------------------------------------------
# Functional nondeterminism


def fnd_moves(con: Formula, vocab: Vocabulary) -> list[Formula] | None:
    """Split ``con`` into top-level disjuncts that each fix V' as a function of V.

    Functionality is checked over the declared domain.  Returns None when
    some disjunct admits two different successors, or when the backend
    cannot decide (with a warning).
    """
    moves = logic.top_disjuncts(con)
    pairs = [(vocab.var(n, 1), vocab.var(n, 2)) for n in vocab.names]
    dom = z3.And(vocab.domain(0), vocab.domain(1), vocab.domain(2))
    for m in moves:
        other = z3.substitute(m, *pairs)
        differ = disj([a != b for a, b in pairs])
        try:
            if logic.is_sat(z3.And(dom, m, other, differ)):
                return None
        except logic.BackendUnknown:
            warnings.warn("could not decide whether the controller moves are functional")
            return None
    return moves


# ---------------------------------------------------------------------------
# Product with an automaton


class Polarity(str, Enum):
    ACCEPTING = "accepting"  # the player wants GF(q in F)
    REJECTING = "rejecting"  # the player wants FG(q not in F)


Q_NAME = "q"


@dataclass
class ProductGame:
    game: Game
    base: Game
    automaton: SymbolicAutomaton
    polarity: Polarity
    q: str = Q_NAME

    @property
    def target(self) -> Formula:
        """Set of product states named in the objective."""
        qv = self.game.vocab.var(self.q)
        fin = disj([qv == f for f in sorted(self.automaton.final)])
        return fin if self.polarity is Polarity.ACCEPTING else logic.simplify(z3.Not(fin))


def product(g: Game, aut: SymbolicAutomaton, polarity: Polarity | str, force: bool = False) -> ProductGame:
    """Game over V plus the automaton state; both players' moves advance the automaton.

    When Con splits into functional moves, the product controller relation is
    kept as a disjunction with one disjunct per original move.  The automaton
    must be deterministic and complete; ``force`` skips that check, in which
    case whoever moves also resolves the automaton's choices.
    """
    polarity = Polarity(polarity)
    if len(aut.initial) != 1:
        raise GameError("product needs a single initial automaton state")
    if not force:
        if not aut.is_deterministic():
            raise GameError("product needs a deterministic automaton")
        if not aut.is_complete():
            raise GameError("product needs a complete automaton; call complete() first")
    name = Q_NAME
    while name in g.vocab:
        name += "_"
    qdecl = VarDecl(name, Sort.INT, Role.AUTOMATON, Fraction(0), Fraction(aut.num_states - 1))
    vocab = g.vocab.extend(qdecl)
    # rebuild formulas over the extended vocabulary (same constants, so reuse is safe)
    q0, q1 = vocab.var(name, 0), vocab.var(name, 1)
    step = aut.move_formula(q0, q1)
    moves = fnd_moves(g.con, g.vocab)
    if moves is not None and len(moves) > 1:
        con = z3.Or(*[z3.And(m, step) for m in moves])
    else:
        con = z3.And(g.con, step)
    env = z3.And(g.env, step)
    fin = disj([q0 == f for f in sorted(aut.final)])
    target = fin if polarity is Polarity.ACCEPTING else z3.Not(fin)
    objective = (
        Globally(Eventually(Atom.of(target)))
        if polarity is Polarity.ACCEPTING
        else Eventually(Globally(Atom.of(target)))
    )
    init = None
    if g.init is not None:
        init = z3.And(g.init, q0 == aut.initial[0])
    pg = Game(
        vocab=vocab,
        con=con,
        env=env,
        objective=objective,
        init=init,
        player=g.player,
        name=f"{g.name}*aut",
    )
    return ProductGame(pg, g, aut, polarity, name)


def project_initial_q(region: Formula, prod: ProductGame) -> Formula:
    """Substitute the initial automaton state into a product region."""
    qv = prod.game.vocab.var(prod.q)
    return logic.simplify(z3.substitute(region, (qv, z3.IntVal(prod.automaton.initial[0]))))


# ---------------------------------------------------------------------------
# Strategy automata


@dataclass
class StrategyAutomaton:
    """Finite transducer for the controller.

    Environment states read the current game state through guards over V and
    lead to controller states; a controller state is labelled with the move
    formula over V and V' that the controller may play.  After the move the
    automaton reads the intermediate state (guards over V again) and returns
    to an environment state.  With ``memoryless`` set, the return edge is
    implicit and leads back to the single environment state.
    """

    vocab: Vocabulary
    env_states: list[str]
    ctrl_states: dict[str, Formula]
    edges: list[tuple[str, Formula, str]]
    initial: str
    back_edges: list[tuple[str, Formula, str]] = field(default_factory=list)

    def _compiled(self):
        c = getattr(self, "_cache", None)
        if c is None:
            c = (
                [(s, logic.compile_formula(g), d) for s, g, d in self.edges],
                [(s, logic.compile_formula(g), d) for s, g, d in self.back_edges],
                {k: logic.compile_formula(v) for k, v in self.ctrl_states.items()},
            )
            object.__setattr__(self, "_cache", c)
        return c

    def choose(self, env_states: set[str], state: dict) -> set[str]:
        edges, _, _ = self._compiled()
        return {d for s, g, d in edges if s in env_states and g(state)}

    def allowed(self, ctrl: set[str], state: dict, nxt: dict) -> bool:
        """Is the move ``state -> nxt`` allowed by some active controller state?"""
        _, _, labels = self._compiled()
        val = dict(state)
        val.update({k + "'": v for k, v in nxt.items()})
        return any(labels[c](val) for c in ctrl)

    def advance(self, ctrl: set[str], inter: dict, chosen: dict | None = None) -> set[str]:
        """Environment states after the controller's move produced ``inter``.

        Only controller states whose label admits the chosen move survive.
        """
        _, back, labels = self._compiled()
        live = ctrl
        if chosen is not None:
            live = {c for c in ctrl if labels[c](chosen)}
        if not self.back_edges:
            return {self.initial}
        return {d for s, g, d in back if s in live and g(inter)}

    def move_formula(self, ctrl: set[str]) -> Formula:
        return disj([self.ctrl_states[c] for c in sorted(ctrl)])

    def guard_of(self, ctrl: str) -> Formula:
        return disj([g for s, g, d in self.edges if d == ctrl])

    # -- serialisation -------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "variables": [d.name for d in self.vocab],
            "initial": self.initial,
            "env_states": list(self.env_states),
            "ctrl_states": {k: formula_dump(v) for k, v in self.ctrl_states.items()},
            "edges": [[s, formula_dump(g), d] for s, g, d in self.edges],
            "back_edges": [[s, formula_dump(g), d] for s, g, d in self.back_edges],
        }

    @staticmethod
    def from_json(data: dict, vocab: Vocabulary) -> StrategyAutomaton:
        return StrategyAutomaton(
            vocab=vocab,
            env_states=list(data["env_states"]),
            ctrl_states={k: formula_load(v, vocab) for k, v in data["ctrl_states"].items()},
            edges=[(s, formula_load(g, vocab), d) for s, g, d in data["edges"]],
            initial=data["initial"],
            back_edges=[(s, formula_load(g, vocab), d) for s, g, d in data.get("back_edges", [])],
        )

    def to_dot(self) -> str:
        def esc(f: Formula) -> str:
            return formula_dump(f).replace("\\", "\\\\").replace('"', '\\"')

        lines = ["digraph strategy {", f'  initial="{self.initial}";']
        for e in self.env_states:
            lines.append(f'  "{e}" [shape=ellipse, player=E];')
        for c, lab in self.ctrl_states.items():
            lines.append(f'  "{c}" [shape=box, player=C, move="{esc(lab)}"];')
        for s, g, d in self.edges:
            lines.append(f'  "{s}" -> "{d}" [guard="{esc(g)}"];')
        for s, g, d in self.back_edges:
            lines.append(f'  "{s}" -> "{d}" [guard="{esc(g)}", back=1];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_dot(text: str, vocab: Vocabulary) -> StrategyAutomaton:
        import re

        def unesc(s: str) -> str:
            return s.replace('\\"', '"').replace("\\\\", "\\")

        q = r'"((?:[^"\\]|\\.)*)"'
        initial = re.search(r'initial=' + q, text).group(1)
        env, ctrl, edges, back = [], {}, [], []
        for m in re.finditer(r'^\s*' + q + r' \[shape=(\w+), player=(\w)(?:, move=' + q + r')?\];', text, re.M):
            name, _, who, move = m.groups()
            if who == "E":
                env.append(unesc(name))
            else:
                ctrl[unesc(name)] = formula_load(unesc(move), vocab)
        for m in re.finditer(r'^\s*' + q + r' -> ' + q + r' \[guard=' + q + r'(, back=1)?\];', text, re.M):
            s, d, g, is_back = m.groups()
            (back if is_back else edges).append((unesc(s), formula_load(unesc(g), vocab), unesc(d)))
        return StrategyAutomaton(vocab, env, ctrl, edges, unesc(initial), back)


def memoryless_strategy(vocab: Vocabulary, moves: Sequence[Formula], guards: Sequence[Formula]) -> StrategyAutomaton:
    """One environment state; controller state i allows move i where guard i holds."""
    ctrl = {f"m{i}": m for i, m in enumerate(moves)}
    edges = [("e0", g, f"m{i}") for i, g in enumerate(guards) if not z3.is_false(g)]
    return StrategyAutomaton(vocab, ["e0"], ctrl, edges, "e0")


def lift_strategy(prod: ProductGame, strat: StrategyAutomaton) -> StrategyAutomaton:
    """Turn a strategy of the product game into a strategy of the original game.

    Memory states pair a strategy state with an automaton state.  Edges into
    a controller state read the current state through the automaton guard,
    return edges read the intermediate state and advance the automaton again.
    """
    base = prod.base
    vocab = base.vocab
    aut = prod.automaton
    pv = prod.game.vocab
    qv, qv1 = pv.var(prod.q, 0), pv.var(prod.q, 1)
    label_cache: dict[tuple[str, int, int], Formula] = {}

    def label(c: str, p: int, p1: int) -> Formula:
        key = (c, p, p1)
        if key not in label_cache:
            f = z3.substitute(strat.ctrl_states[c], (qv, z3.IntVal(p)), (qv1, z3.IntVal(p1)))
            label_cache[key] = logic.simplify(f)
        return label_cache[key]

    env_states: list[str] = []
    ctrl_states: dict[str, Formula] = {}
    edges: list[tuple[str, Formula, str]] = []
    back: list[tuple[str, Formula, str]] = []
    start = (strat.initial, aut.initial[0])
    todo = [start]
    seen = {start}
    while todo:
        e, p = todo.pop(0)
        ename = f"{e}@{p}"
        env_states.append(ename)
        for s, g, c in strat.edges:
            if s != e:
                continue
            for t in aut.out(p):
                gg = logic.simplify(z3.And(z3.substitute(g, (qv, z3.IntVal(p))), t.guard))
                if not logic.is_sat(gg):
                    continue
                cname = f"{c}@{t.dst}"
                lab = label(c, p, t.dst)
                if cname in ctrl_states and not ctrl_states[cname].eq(lab):
                    cname = f"{c}@{p}>{t.dst}"
                if cname not in ctrl_states:
                    ctrl_states[cname] = lab
                    targets = _strategy_back_targets(strat, c)
                    for t2 in aut.out(t.dst):
                        for e2 in targets:
                            back.append((cname, t2.guard, f"{e2}@{t2.dst}"))
                            if (e2, t2.dst) not in seen:
                                seen.add((e2, t2.dst))
                                todo.append((e2, t2.dst))
                edges.append((ename, gg, cname))
    # a controller label mentions q' only through the automaton step, which is already fixed
    clean = {}
    for c, lab in ctrl_states.items():
        clean[c] = logic.qelim(z3.Exists([qv1], lab)) if qv1.decl().name() in logic.free_constants(lab) else lab
    return StrategyAutomaton(vocab, env_states, clean, edges, f"{start[0]}@{start[1]}", back)


def _strategy_back_targets(strat: StrategyAutomaton, c: str) -> list[str]:
    if not strat.back_edges:
        return [strat.initial]
    return sorted({d for s, _, d in strat.back_edges if s == c})
