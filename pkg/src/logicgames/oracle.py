"""Explicit-state reference solver and play simulator over bounded integer boxes.

Nothing here calls the SMT backend for solving: relations are evaluated
point-wise with :func:`logic.compile_formula`, and winning sets come from
textbook fixpoints over a sparse alternating graph.  The symbolic engines are
tested against these results.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import z3

from . import logic
from .automata import SymbolicAutomaton
from .game import Game, StrategyAutomaton
from .logic import Formula, Sort, Vocabulary, compile_formula
from .ltl import Buchi, CoBuchi, Reach, Safety, classify

DEFAULT_LIMIT = 10**6
PAIR_LIMIT = 5 * 10**7


class OracleError(Exception):
    pass


class BoxTooLarge(OracleError):
    pass


class ClippedIncomplete(OracleError):
    """Restricting moves to the box left a position without successors."""

    def __init__(self, who: str, state: dict):
        self.who = who
        self.state = state
        super().__init__(f"{who} has no move inside the box at {state}")


@dataclass(frozen=True)
class GridBox:
    names: tuple[str, ...]
    lo: tuple[int, ...]
    hi: tuple[int, ...]

    @staticmethod
    def of_game(game: Game, overrides: Mapping[str, tuple[int, int]] | None = None,
                limit: int = DEFAULT_LIMIT) -> GridBox:
        overrides = dict(overrides or {})
        names, lo, hi = [], [], []
        for d in game.vocab:
            if d.sort is not Sort.INT:
                raise OracleError(f"variable {d.name} is not Int-sorted; the region oracle covers integer games only")
            if d.name in overrides:
                a, b = overrides[d.name]
            elif d.lo is not None and d.hi is not None:
                a, b = int(d.lo), int(d.hi)
            else:
                raise OracleError(f"variable {d.name} is unbounded and no box bound was given")
            names.append(d.name)
            lo.append(int(a))
            hi.append(int(b))
        box = GridBox(tuple(names), tuple(lo), tuple(hi))
        if box.size > limit:
            raise BoxTooLarge(f"box has {box.size} points, limit {limit}")
        return box

    @property
    def size(self) -> int:
        return int(np.prod([h - l + 1 for l, h in zip(self.lo, self.hi)]))

    def points(self) -> np.ndarray:
        axes = [np.arange(l, h + 1) for l, h in zip(self.lo, self.hi)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=1).astype(np.int64)

    def columns(self, pts: np.ndarray, tier: int = 0) -> dict[str, np.ndarray]:
        suffix = logic.TIER_SUFFIX[tier]
        return {n + suffix: pts[:, i] for i, n in enumerate(self.names)}

    def as_formula(self, vocab: Vocabulary) -> Formula:
        return logic.conj([z3.And(vocab.var(n) >= l, vocab.var(n) <= h) for n, l, h in zip(self.names, self.lo, self.hi)])


# ---------------------------------------------------------------------------
# Point sets


class States:
    """Box points with an index, plus helpers to move between formulas and sets."""

    def __init__(self, box: GridBox):
        self.box = box
        self.pts = box.points()
        self.n = len(self.pts)
        self._index = {tuple(int(v) for v in p): i for i, p in enumerate(self.pts)}

    def index(self, point: Sequence[int]) -> int | None:
        return self._index.get(tuple(int(v) for v in point))

    def point(self, i: int) -> dict[str, int]:
        return {n: int(v) for n, v in zip(self.box.names, self.pts[i])}

    def holds(self, f: Formula) -> np.ndarray:
        return logic.evaluate_many(f, self.box.columns(self.pts), self.n)

    def tuples(self, mask: np.ndarray) -> set[tuple[int, ...]]:
        return {tuple(int(v) for v in p) for p in self.pts[mask]}

    def relation(self, rel: Formula, limit: int = PAIR_LIMIT) -> sp.csr_matrix:
        """Boolean matrix M[i, j] = rel(point i, point j)."""
        n = self.n
        if n * n > limit:
            raise BoxTooLarge(f"{n * n} state pairs exceed the pair limit {limit}")
        fn = compile_formula(rel)
        rows, cols = [], []
        chunk = max(1, limit // max(n, 1) // 8)
        idx = np.arange(n)
        for start in range(0, n, chunk):
            src = idx[start:start + chunk]
            a = np.repeat(src, n)
            b = np.tile(idx, len(src))
            cols_ = self.box.columns(self.pts[a], 0)
            cols_.update(self.box.columns(self.pts[b], 1))
            out = fn(cols_)
            mask = np.broadcast_to(np.asarray(out, dtype=bool), a.shape)
            rows.append(a[mask])
            cols.append(b[mask])
        r = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        c = np.concatenate(cols) if cols else np.zeros(0, np.int64)
        return sp.csr_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(n, n))


# ---------------------------------------------------------------------------
# Alternating arenas


@dataclass
class Arena:
    """Explicit two-player graph; ``existential[v]`` marks nodes of the player we solve for."""

    adj: sp.csr_matrix
    existential: np.ndarray
    labels: list[Hashable]

    def __post_init__(self):
        self.adj = sp.csr_matrix(self.adj)
        self.adjT = self.adj.T.tocsr()
        self.outdeg = np.asarray(self.adj.sum(axis=1)).ravel()

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    def pre(self, Y: np.ndarray) -> np.ndarray:
        hits = np.asarray(self.adj @ Y.astype(np.int64)).ravel()
        return np.where(self.existential, hits > 0, (hits == self.outdeg) & (self.outdeg > 0))

    def safety(self, T: np.ndarray) -> np.ndarray:
        return gfp(lambda Y: T & self.pre(Y), np.ones(self.n, bool))

    def reach(self, T: np.ndarray) -> np.ndarray:
        return lfp(lambda Y: T | self.pre(Y), np.zeros(self.n, bool))

    def buchi(self, T: np.ndarray) -> np.ndarray:
        def outer(Z):
            PZ = T & self.pre(Z)
            return lfp(lambda Y: PZ | self.pre(Y), np.zeros(self.n, bool))
        return gfp(outer, np.ones(self.n, bool))

    def cobuchi(self, T: np.ndarray) -> np.ndarray:
        def outer(Z):
            PZ = self.pre(Z)
            return gfp(lambda Y: (T & self.pre(Y)) | PZ, np.ones(self.n, bool))
        return lfp(outer, np.zeros(self.n, bool))

    def solve(self, kind: str, T: np.ndarray) -> np.ndarray:
        return {"safety": self.safety, "reach": self.reach, "buchi": self.buchi, "cobuchi": self.cobuchi}[kind](T)


def gfp(f: Callable[[np.ndarray], np.ndarray], start: np.ndarray) -> np.ndarray:
    Y = start
    while True:
        Z = f(Y) & Y
        if np.array_equal(Z, Y):
            return Y
        Y = Z


def lfp(f: Callable[[np.ndarray], np.ndarray], start: np.ndarray) -> np.ndarray:
    Y = start
    while True:
        Z = f(Y) | Y
        if np.array_equal(Z, Y):
            return Y
        Y = Z


KIND_OF = {Safety: "safety", Reach: "reach", Buchi: "buchi", CoBuchi: "cobuchi"}

Step = Callable[[Hashable, int], Iterable[Hashable]]


@dataclass
class ExplicitGame:
    """Explicit graph of a game on a box, optionally tracking memory ``aux``.

    Nodes are ``(state index, aux, turn)`` with turn 0 for the controller and
    1 for the environment.  ``step(aux, i)`` gives the memory values after
    reading the position with state index ``i``; the mover picks among them.
    """

    game: Game
    states: States
    con: sp.csr_matrix
    env: sp.csr_matrix

    @staticmethod
    def build(game: Game, box: GridBox | None = None) -> ExplicitGame:
        box = box or GridBox.of_game(game)
        st = States(box)
        return ExplicitGame(game, st, st.relation(game.con), st.relation(game.env))

    def arena(self, player: str = "C", step: Step | None = None, aux0: Hashable = None,
              starts: Iterable[int] | None = None, strict: bool = True) -> Arena:
        step = step or (lambda a, i: (a,))
        st = self.states
        start_nodes = [(i, aux0, 0) for i in (range(st.n) if starts is None else starts)]
        index: dict[Hashable, int] = {}
        labels: list[Hashable] = []
        rows: list[int] = []
        cols: list[int] = []
        todo = []
        for v in start_nodes:
            index[v] = len(labels)
            labels.append(v)
            todo.append(v)
        while todo:
            v = todo.pop()
            i, a, turn = v
            rel = self.con if turn == 0 else self.env
            succ_states = rel.indices[rel.indptr[i]:rel.indptr[i + 1]]
            if len(succ_states) == 0 and strict:
                raise ClippedIncomplete("controller" if turn == 0 else "environment", st.point(i))
            nexts = tuple(step(a, i))
            for j in succ_states:
                for b in nexts:
                    w = (int(j), b, 1 - turn)
                    if w not in index:
                        index[w] = len(labels)
                        labels.append(w)
                        todo.append(w)
                    rows.append(index[v])
                    cols.append(index[w])
        n = len(labels)
        adj = sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
        turn = np.array([l[2] for l in labels])
        existential = (turn == 0) if player == "C" else (turn == 1)
        return Arena(adj, existential, labels)

    def node_mask(self, arena: Arena, pred: Callable[[int, Hashable], bool]) -> np.ndarray:
        return np.array([pred(i, a) for (i, a, _) in arena.labels], dtype=bool)

    def controller_region(self, arena: Arena, win: np.ndarray, aux0: Hashable = None) -> np.ndarray:
        out = np.zeros(self.states.n, dtype=bool)
        for k, (i, a, t) in enumerate(arena.labels):
            if t == 0 and a == aux0 and win[k]:
                out[i] = True
        return out


def explicit_solve(game: Game, box: GridBox | None = None, kind: str | None = None, X: Formula | None = None,
                   player: str | None = None) -> set[tuple[int, ...]]:
    """Winning controller-turn states for a simple objective on a box."""
    eg = ExplicitGame.build(game, box)
    if kind is None or X is None:
        shape = classify(game.objective)
        if type(shape) not in KIND_OF:
            raise OracleError("objective is not simple; use explicit_product_solve")
        kind, X = KIND_OF[type(shape)], shape.X
    player = player or game.player.value
    arena = eg.arena(player)
    Xs = eg.states.holds(X)
    T = eg.node_mask(arena, lambda i, a: bool(Xs[i]))
    win = arena.solve(kind, T)
    return eg.states.tuples(eg.controller_region(arena, win))


def _aut_tables(aut: SymbolicAutomaton, states: States) -> dict[tuple[int, int], np.ndarray]:
    """Per edge (p, q) the box points where some transition p -> q fires."""
    out: dict[tuple[int, int], np.ndarray] = {}
    for t in aut.transitions:
        m = states.holds(t.guard)
        key = (t.src, t.dst)
        out[key] = out[key] | m if key in out else m
    return out


def explicit_product_solve(game: Game, aut: SymbolicAutomaton, acceptance: str, box: GridBox | None = None,
                           player: str | None = None) -> set[tuple[int, ...]]:
    """Winning states for a game whose objective is given by an automaton.

    ``acceptance`` is "buchi" (visit F infinitely often) or "cobuchi" (visit
    F finitely often).  The automaton reads every position; when it has
    several successors, the player who moves picks one, as in the symbolic
    product.  With a deterministic automaton this is the exact region.
    """
    eg = ExplicitGame.build(game, box)
    tab = _aut_tables(aut, eg.states)
    succ: dict[tuple[int, int], tuple[int, ...]] = {}

    def step(p, i):
        key = (p, i)
        if key not in succ:
            succ[key] = tuple(sorted({q for (pp, q), m in tab.items() if pp == p and m[i]}))
        return succ[key]

    player = player or game.player.value
    q0 = aut.initial[0]
    arena = eg.arena(player, step, q0, strict=True)
    # a node whose automaton has no move is a dead end; treat it as losing for the acceptor
    fin = eg.node_mask(arena, lambda i, q: q in aut.final)
    kind = {"buchi": "buchi", "cobuchi": "cobuchi"}[acceptance]
    T = fin if kind == "buchi" else ~fin
    win = arena.solve(kind, T)
    return eg.states.tuples(eg.controller_region(arena, win, q0))


# ---------------------------------------------------------------------------
# Counting-vector (k-safety) games


def counting_step(aut: SymbolicAutomaton, tab: Mapping[tuple[int, int], np.ndarray], c: tuple[int, ...], i: int,
                  k: int) -> tuple[int, ...]:
    """Successor vector by propagating every (state, count) pair along enabled edges."""
    pairs = {(p, n) for p, n in enumerate(c) if n >= 0}
    nxt = set()
    for p, n in pairs:
        for (pp, q), m in tab.items():
            if pp == p and m[i]:
                nxt.add((q, min(n + (1 if q in aut.final else 0), k + 1)))
    out = [-1] * aut.num_states
    for q, n in nxt:
        out[q] = max(out[q], n)
    return tuple(out)


def initial_counts(aut: SymbolicAutomaton) -> tuple[int, ...]:
    c = [-1] * aut.num_states
    c[aut.initial[0]] = 0
    return tuple(c)


def explicit_ksafety(game: Game, aut: SymbolicAutomaton, k: int, box: GridBox | None = None,
                     player: str = "C") -> set[tuple[int, ...]]:
    """States from which ``player`` keeps every count of ``aut`` at most k."""
    eg = ExplicitGame.build(game, box)
    tab = _aut_tables(aut, eg.states)
    cache: dict = {}

    def step(c, i):
        key = (c, i)
        if key not in cache:
            cache[key] = (counting_step(aut, tab, c, i, k),)
        return cache[key]

    c0 = initial_counts(aut)
    arena = eg.arena(player, step, c0)
    T = eg.node_mask(arena, lambda i, c: max(c) <= k)
    win = arena.safety(T)
    return eg.states.tuples(eg.controller_region(arena, win, c0))


# ---------------------------------------------------------------------------
# Layer-by-layer iterates, mirroring the symbolic loops on controller-turn states


def reach_iterates(game: Game, X: Formula, box: GridBox | None = None, count: int = 10) -> list[set[tuple[int, ...]]]:
    """W_0 = X, W_{i+1} = X or (some move reaches X or forces all replies into W_i)."""
    eg = ExplicitGame.build(game, box)
    st = eg.states
    Xs = st.holds(X)
    con, env = eg.con, eg.env
    out = []
    W = Xs.copy()
    out.append(st.tuples(W))
    envdeg = np.asarray(env.sum(axis=1)).ravel()
    for _ in range(count - 1):
        forced = (np.asarray(env @ W.astype(np.int64)).ravel() == envdeg) & (envdeg > 0)
        good_mid = Xs | forced
        W = Xs | (np.asarray(con @ good_mid.astype(np.int64)).ravel() > 0)
        out.append(st.tuples(W))
    return out


def formula_region(f: Formula, box: GridBox) -> set[tuple[int, ...]]:
    st = States(box)
    return st.tuples(st.holds(f))


def region_csv(region: Iterable[tuple[int, ...]], names: Sequence[str]) -> str:
    lines = [",".join(names)]
    lines += [",".join(str(v) for v in p) for p in sorted(region)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Play simulation


class StrategyHole(Exception):
    def __init__(self, step: int, state: dict):
        self.step = step
        self.state = state
        super().__init__(f"strategy has no move at step {step} in state {state}")


@dataclass
class Play:
    positions: list[dict]
    memory: list[set[str]] = field(default_factory=list)

    def count(self, f: Formula) -> int:
        fn = compile_formula(f)
        return sum(1 for s in self.positions if fn(s))

    def always(self, f: Formula) -> bool:
        fn = compile_formula(f)
        return all(fn(s) for s in self.positions)

    def reaches(self, f: Formula) -> int | None:
        fn = compile_formula(f)
        for i, s in enumerate(self.positions):
            if fn(s):
                return i
        return None


class Simulator:
    """Random plays of a game under a controller strategy.

    Successors come from the box when every variable is a bounded integer,
    otherwise from the SMT solver (up to ``max_models`` distinct models per
    query, one picked at random).
    """

    def __init__(self, game: Game, strategy: StrategyAutomaton | None = None, max_models: int = 8):
        self.game = game
        self.strategy = strategy
        self.vocab = game.vocab
        self.max_models = max_models
        self.names = [d.name for d in self.vocab]
        self._cache: dict = {}
        self.box = None
        if all(d.sort is Sort.INT and d.lo is not None and d.hi is not None for d in self.vocab):
            self.box = GridBox.of_game(game)
            self.states = States(self.box)
        self._con = compile_formula(game.con)
        self._env = compile_formula(game.env)

    def _key(self, s: Mapping[str, object]) -> tuple:
        return tuple(s[n] for n in self.names)

    def successors(self, rel: Formula, s: Mapping[str, object], tag: Hashable) -> list[dict]:
        key = (tag, self._key(s))
        if key in self._cache:
            return self._cache[key]
        if self.box is not None:
            st = self.states
            cols = {k: np.full(st.n, v) for k, v in logic.state_valuation(self.vocab, s, 0).items()}
            cols.update(self.box.columns(st.pts, 1))
            mask = np.broadcast_to(np.asarray(compile_formula(rel)(cols), dtype=bool), (st.n,))
            out = [st.point(i) for i in np.flatnonzero(mask)]
        else:
            out = self._smt_successors(rel, s)
        self._cache[key] = out
        return out

    def _smt_successors(self, rel: Formula, s: Mapping[str, object]) -> list[dict]:
        subs = [(self.vocab.var(n), _num(self.vocab.var(n), s[n])) for n in self.names]
        f = z3.And(z3.substitute(rel, *subs), self.game.domain(1))
        primed = [self.vocab.var(n, 1) for n in self.names]
        out = []
        solver = z3.Solver()
        solver.add(f)
        while len(out) < self.max_models and solver.check() == z3.sat:
            m = solver.model()
            vals = {n: logic._model_value(m.eval(v, model_completion=True)) for n, v in zip(self.names, primed)}
            out.append(vals)
            solver.add(z3.Or([v != _num(v, vals[n]) for n, v in zip(self.names, primed)]))
        return out

    def _options(self, mem: frozenset, s: Mapping[str, object]):
        key = ("opt", mem, self._key(s))
        if key not in self._cache:
            strat = self.strategy
            ctrl = strat.choose(set(mem), logic.state_valuation(self.vocab, s, 0))
            options = []
            for c in sorted(ctrl):
                for t in self.successors(z3.And(self.game.con, strat.ctrl_states[c]), s, ("c", c)):
                    options.append((c, t))
            self._cache[key] = (ctrl, options)
        return self._cache[key]

    def _advance(self, ctrl: set[str], s: Mapping[str, object], t: Mapping[str, object]) -> set[str]:
        key = ("adv", frozenset(ctrl), self._key(s), self._key(t))
        if key not in self._cache:
            chosen = {**logic.state_valuation(self.vocab, s, 0), **logic.state_valuation(self.vocab, t, 1)}
            self._cache[key] = self.strategy.advance(ctrl, logic.state_valuation(self.vocab, t, 0), chosen)
        return self._cache[key]

    def play(self, init: Mapping[str, object], steps: int, seed: int = 0) -> Play:
        """``steps`` controller/environment rounds; positions include the intermediate ones."""
        rng = random.Random(seed)
        s = dict(init)
        pos = [s]
        strat = self.strategy
        mem = {strat.initial} if strat else set()
        memory = [set(mem)]
        for step in range(steps):
            if strat is not None:
                ctrl, options = self._options(frozenset(mem), s)
                if not options:
                    raise StrategyHole(step, s)
                c, t = options[rng.randrange(len(options))]
                mem = self._advance(ctrl, s, t)
                if not mem:
                    raise StrategyHole(step, t)
            else:
                opts = self.successors(self.game.con, s, "con")
                t = opts[rng.randrange(len(opts))]
            pos.append(t)
            opts = self.successors(self.game.env, t, "env")
            if not opts:
                raise OracleError(f"environment has no move at {t}")
            s = opts[rng.randrange(len(opts))]
            pos.append(s)
            memory.append(set(mem))
        return Play([logic.state_valuation(self.vocab, p, 0) for p in pos], memory)


def _num(v: z3.ExprRef, x) -> z3.ExprRef:
    from fractions import Fraction

    x = Fraction(x)
    if v.sort() == z3.IntSort():
        return z3.IntVal(int(x))
    return z3.RealVal(f"{x.numerator}/{x.denominator}")


def simulate(game: Game, strategy: StrategyAutomaton | None, steps: int, seed: int = 0,
             init: Mapping[str, object] | None = None) -> Play:
    sim = Simulator(game, strategy)
    if init is None:
        r = logic.check(z3.And(game.init if game.init is not None else logic.TRUE, game.domain(0)))
        if not r:
            raise OracleError("empty initial region")
        init = {n: r.model.get(n, 0) for n in sim.names}
    return sim.play(init, steps, seed)
