"""On-the-fly k-safety determinisation of universal co-Büchi automata.

A counting vector records, per automaton state, the largest number of final
states seen on a run ending there (-1: no run, capped at k+1).  Reading a
state is a deterministic update, so "all counts stay at most k" is a safety
objective on the game extended with the vector.

Two solvers are provided.  ``method="vectors"`` enumerates the vectors
reachable from the initial one and keeps one region over V per vector; the
vector update is then a case split on guard cells, and each game step is the
staged predecessor computation of the fixpoint module.  ``method="symbolic"``
adds the vector as integer variables with the relational update
``Succ_k(c, V, c')`` and runs the safety solver on that game.  Both compute
the same greatest fixpoint; the enumerated form keeps formulas small.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Mapping, Sequence

import z3

from . import logic
from .automata import SymbolicAutomaton
from .fixpoints import (
    DEFAULT_CAP,
    Bound,
    IterationCapExceeded,
    MonotonicityError,
    Perspective,
    Predecessors,
    solve_safety,
)
from .game import Game, StrategyAutomaton
from .logic import Formula, Role, Sort, VarDecl, Vocabulary, compile_formula, conj, disj, shift

Vector = tuple[int, ...]

DEFAULT_KMAX = 10


class OtfError(Exception):
    pass


class OutsideWinningRegion(OtfError):
    pass


def fmt_vector(c: Sequence[int]) -> str:
    return "⟨" + ",".join(str(x) for x in c) + "⟩"


def _single_initial(aut: SymbolicAutomaton) -> int:
    if len(aut.initial) != 1:
        raise OtfError("counting vectors need an automaton with exactly one initial state")
    return aut.initial[0]


def initial_vector(aut: SymbolicAutomaton) -> Vector:
    q0 = _single_initial(aut)
    return tuple(0 if q == q0 else -1 for q in aut.states)


def is_safe(c: Vector, k: int) -> bool:
    return max(c) <= k


def _update(aut: SymbolicAutomaton, c: Vector, fired: set[tuple[int, int]], k: int) -> Vector:
    out = [-1] * aut.num_states
    for p, q in fired:
        if c[p] >= 0:
            out[q] = max(out[q], min(c[p] + (1 if q in aut.final else 0), k + 1))
    return tuple(out)


def succ_k(c: Vector, state: Mapping[str, object], aut: SymbolicAutomaton, k: int) -> Vector:
    """Counting vector after reading one state (a {name: value} valuation over V)."""
    val = logic.state_valuation(aut.vocab, state, 0)
    fired = {(t.src, t.dst) for t in aut.transitions if c[t.src] >= 0 and compile_formula(t.guard)(val)}
    return _update(aut, c, fired, k)


# ---------------------------------------------------------------------------
# Symbolic encoding of the vector update


def counter_vocab(vocab: Vocabulary, aut: SymbolicAutomaton, k: int, prefix: str = "c") -> tuple[Vocabulary, list[str]]:
    names = []
    decls = []
    for q in aut.states:
        name = f"{prefix}{q}"
        while name in vocab:
            name += "_"
        names.append(name)
        decls.append(VarDecl(name, Sort.INT, Role.AUTOMATON, Fraction(-1), Fraction(k + 1)))
    return vocab.extend(*decls), names


def succ_k_formula(aut: SymbolicAutomaton, k: int, vocab: Vocabulary, names: Sequence[str], tier: int = 0) -> Formula:
    """Relational ``Succ_k(c, V, c')`` with c, V at ``tier`` and c' at ``tier + 1``.

    c'(q) is at least every candidate min(c(p) + final(q), k+1) over enabled
    edges p -> q, and equals one of them, or -1 when there is none.
    """
    c = [vocab.var(n, tier) for n in names]
    c1 = [vocab.var(n, tier + 1) for n in names]
    parts = []
    for q in aut.states:
        f = 1 if q in aut.final else 0
        preds: dict[int, list[Formula]] = {}
        for t in aut.transitions:
            if t.dst == q:
                preds.setdefault(t.src, []).append(shift(t.guard, aut.vocab, tier) if tier else t.guard)
        enabled = {p: z3.And(c[p] >= 0, disj(gs)) for p, gs in preds.items()}
        lower = [z3.Implies(en, z3.Or(c1[q] >= c[p] + f, c1[q] >= k + 1)) for p, en in enabled.items()]
        hit = [z3.And(en, z3.Or(c1[q] == c[p] + f, z3.And(c1[q] == k + 1, c[p] + f >= k + 1))) for p, en in enabled.items()]
        none = z3.And(conj([z3.Not(en) for en in enabled.values()]), c1[q] == -1)
        parts.append(z3.And(conj(lower), z3.Or(none, *hit)))
    return conj(parts)


def safe_formula(vocab: Vocabulary, names: Sequence[str], k: int, tier: int = 0) -> Formula:
    return conj([vocab.var(n, tier) <= k for n in names])


def vector_formula(vocab: Vocabulary, names: Sequence[str], c: Vector, tier: int = 0) -> Formula:
    return conj([vocab.var(n, tier) == v for n, v in zip(names, c)])


def k_game(game: Game, aut: SymbolicAutomaton, k: int) -> tuple[Game, list[str]]:
    """The game extended with counters; both players' moves update them."""
    vocab, names = counter_vocab(game.vocab, aut, k)
    # both relations are stated from the mover's position, so one update formula serves both
    step = succ_k_formula(aut, k, vocab, names, 0)
    g = Game(
        vocab=vocab,
        con=z3.And(game.con, step),
        env=z3.And(game.env, step),
        objective=game.objective,
        init=None,
        player=game.player,
        name=f"{game.name}*k{k}",
    )
    return g, names


# ---------------------------------------------------------------------------
# Enumerated vectors


class Cells:
    """Partition of the domain by which automaton edges fire, grouped per successor vector."""

    def __init__(self, aut: SymbolicAutomaton, k: int, domain: Formula, backend: logic.Backend):
        self.aut = aut
        self.k = k
        self.domain = domain
        self.backend = backend
        self._cache: dict[Vector, dict[Vector, Formula]] = {}
        self._guards: dict[tuple[int, int], Formula] = {}
        for t in aut.transitions:
            key = (t.src, t.dst)
            self._guards[key] = z3.Or(self._guards[key], t.guard) if key in self._guards else t.guard

    def successors(self, c: Vector) -> dict[Vector, Formula]:
        """Map from successor vector to the (satisfiable) set of states producing it."""
        if c in self._cache:
            return self._cache[c]
        edges = [(e, g) for e, g in self._guards.items() if c[e[0]] >= 0]
        out: dict[Vector, list[Formula]] = {}

        def split(i: int, path: Formula, fired: set):
            if i == len(edges):
                v = _update(self.aut, c, fired, self.k)
                out.setdefault(v, []).append(path)
                return
            e, g = edges[i]
            for val, lit in ((True, g), (False, z3.Not(g))):
                p = z3.And(path, lit)
                if self.backend.check(p):
                    split(i + 1, p, fired | {e} if val else fired)

        split(0, self.domain, set())
        res = {v: self.backend.simplify(disj(ps)) for v, ps in out.items()}
        self._cache[c] = res
        return res


@dataclass
class KResult:
    k: int
    perspective: Perspective
    vectors: list[Vector]
    regions: dict[Vector, Formula]          # controller-turn region per vector (before reading)
    env_regions: dict[Vector, Formula]      # environment-turn region per vector (before reading)
    iterations: int
    names: list[str] = field(default_factory=list)
    vocab: Vocabulary | None = None
    c0: Vector = ()
    method: str = "vectors"
    history: list[dict[Vector, Formula]] = field(default_factory=list)

    @property
    def at_c0(self) -> Formula:
        return self.regions.get(self.c0, logic.FALSE)

    def as_formula(self) -> Formula:
        """The winning product region as one formula over V and the counters."""
        return disj([z3.And(vector_formula(self.vocab, self.names, v), W) for v, W in self.regions.items()])


def reachable_vectors(aut: SymbolicAutomaton, k: int, cells: Cells) -> list[Vector]:
    c0 = initial_vector(aut)
    seen = [c0]
    todo = [c0]
    known = {c0}
    while todo:
        c = todo.pop()
        for v in cells.successors(c):
            if is_safe(v, k) and v not in known:
                known.add(v)
                seen.append(v)
                todo.append(v)
    return seen


def solve_k(game: Game, aut: SymbolicAutomaton, k: int, persp: Perspective | str = Perspective.CONTROLLER,
            cap: int = DEFAULT_CAP, backend: logic.Backend | None = None, method: str = "vectors") -> KResult:
    """Greatest fixpoint of the k-safety controllable predecessor.

    ``persp`` names the player who wants every count to stay at most k;
    the controller still moves first.
    """
    persp = Perspective(persp)
    if method == "symbolic":
        return _solve_k_symbolic(game, aut, k, persp, cap, backend)
    P = Predecessors(game, persp, backend)
    cells = Cells(aut, k, P.D0, P.backend)
    vecs = reachable_vectors(aut, k, cells)
    c0 = initial_vector(aut)
    vocab, names = counter_vocab(game.vocab, aut, k)
    X = {v: P.D0 for v in vecs}
    hist = [dict(X)]
    for it in range(1, cap + 1):
        E = _env_regions(P, cells, X, k)
        new = {}
        for v in vecs:
            parts = []
            for v1, cell in cells.successors(v).items():
                if is_safe(v1, k) and not z3.is_false(E.get(v1, logic.FALSE)):
                    parts.append(z3.And(cell, P.step_c(E[v1])))
            new[v] = P.norm(disj(parts))
        for v in vecs:
            if not P.entails(new[v], X[v]):
                raise MonotonicityError(f"k-safety: region for {fmt_vector(v)} grew")
        hist.append(new)
        if all(P.entails(X[v], new[v]) for v in vecs):
            return KResult(k, persp, vecs, new, _env_regions(P, cells, new, k), it, names, vocab, c0, "vectors", hist)
        X = new
    raise IterationCapExceeded("k-safety", cap, X.get(c0, logic.FALSE), Bound.OVER, [h.get(c0, logic.FALSE) for h in hist])


def _env_regions(P: Predecessors, cells: Cells, X: Mapping[Vector, Formula], k: int) -> dict[Vector, Formula]:
    """Per vector v1: intermediate states from which the environment step keeps the play inside X."""
    stepped: dict[Vector, Formula] = {}
    out = {}
    for v1 in X:
        parts = []
        for v2, cell in cells.successors(v1).items():
            if not is_safe(v2, k) or v2 not in X:
                continue
            if v2 not in stepped:
                stepped[v2] = P.step_e(X[v2])
            parts.append(z3.And(cell, stepped[v2]))
        out[v1] = P.norm(disj(parts))
    return out


def _solve_k_symbolic(game: Game, aut: SymbolicAutomaton, k: int, persp: Perspective, cap: int,
                      backend: logic.Backend | None) -> KResult:
    kg, names = k_game(game, aut, k)
    G = safe_formula(kg.vocab, names, k)
    res = solve_safety(kg, G, persp, cap, backend, strategy=False)
    c0 = initial_vector(aut)
    be = backend or logic.default_backend()

    def at(v: Vector, f: Formula) -> Formula:
        subs = [(kg.vocab.var(n), z3.IntVal(x)) for n, x in zip(names, v)]
        return be.simplify(z3.substitute(f, *subs))

    # the vectors are not enumerated here; expose the region at c0 and the full formula
    regions = {c0: at(c0, res.region)}
    r = KResult(k, persp, [c0], regions, {}, res.iterations, names, kg.vocab, c0, "symbolic")
    r.full = res.region
    return r


# ---------------------------------------------------------------------------
# The k loop


class OtfStatus(str, Enum):
    CONVERGED = "converged"
    K_CAP = "k_cap_reached"
    FIXPOINT_CAP = "fixpoint_cap_reached"


@dataclass
class OtfResult:
    W_U: Formula
    W_O: Formula
    k_used: int
    status: OtfStatus
    per_k: list[dict] = field(default_factory=list)
    under: KResult | None = None
    over: KResult | None = None
    monotone: bool = True
    strategy: StrategyAutomaton | None = None


def otf_loop(game: Game, aut_psi: SymbolicAutomaton, aut_negpsi: SymbolicAutomaton, k_max: int = DEFAULT_KMAX,
             cap: int = DEFAULT_CAP, backend: logic.Backend | None = None, player: Perspective | str | None = None,
             k_min: int = 0, strategy: bool = True) -> OtfResult:
    """Raise k until the under- and over-approximations of the player's region meet.

    W_U(k): the player keeps the counts of A_not_psi bounded by k.
    W_O(k): complement of the opponent keeping the counts of A_psi bounded by k.
    """
    me = Perspective(player or game.player.value)
    other = Perspective.ENVIRONMENT if me is Perspective.CONTROLLER else Perspective.CONTROLLER
    be = backend or logic.default_backend()
    D = game.domain(0)
    per_k = []
    prev_U = None
    monotone = True
    last_U, last_O, under, over = logic.FALSE, D, None, None
    for k in range(k_min, k_max + 1):
        t0 = time.perf_counter()
        try:
            under = solve_k(game, aut_negpsi, k, me, cap, be)
            over = solve_k(game, aut_psi, k, other, cap, be)
        except IterationCapExceeded as e:
            per_k.append({"k": k, "error": str(e)})
            return OtfResult(last_U, last_O, k, OtfStatus.FIXPOINT_CAP, per_k, under, over, monotone)
        W_U = under.at_c0
        W_O = be.simplify(z3.And(D, z3.Not(over.at_c0)))
        if prev_U is not None and not be.entails(prev_U, W_U):
            monotone = False
        prev_U = W_U
        last_U, last_O = W_U, W_O
        done = be.entails(W_O, W_U)
        per_k.append({
            "k": k,
            "W_U": W_U,
            "W_O": W_O,
            "iterations_under": under.iterations,
            "iterations_over": over.iterations,
            "vectors_under": len(under.vectors),
            "vectors_over": len(over.vectors),
            "seconds": time.perf_counter() - t0,
            "converged": done,
        })
        if done:
            res = OtfResult(W_U, W_O, k, OtfStatus.CONVERGED, per_k, under, over, monotone)
            if strategy and me is Perspective.CONTROLLER:
                res.strategy = otf_strategy(under, game, aut_negpsi)
            return res
    return OtfResult(last_U, last_O, k_max, OtfStatus.K_CAP, per_k, under, over, monotone)


# ---------------------------------------------------------------------------
# Strategies


def otf_strategy(res: KResult, game: Game, aut: SymbolicAutomaton) -> StrategyAutomaton:
    """Strategy automaton whose memory is the counting vector.

    From a controller-turn state s with vector c inside the region, the
    vector after reading s is c1 = succ_k(c, s), and the allowed moves are
    those into the environment-turn region of c1.
    """
    if res.method != "vectors":
        raise OtfError("strategies are built from the enumerated solver")
    be = logic.default_backend()
    P = Predecessors(game, res.perspective, be)
    cells = Cells(aut, res.k, P.D0, be)
    env_states, ctrl, edges, back = [], {}, [], []
    for v in res.vectors:
        W = res.regions[v]
        if z3.is_false(W):
            continue
        env_states.append("e" + fmt_vector(v))
        for v1, cell in cells.successors(v).items():
            if v1 not in res.env_regions or not is_safe(v1, res.k):
                continue
            guard = be.simplify(z3.And(W, cell))
            if not be.check(guard):
                continue
            name = "c" + fmt_vector(v1)
            if name not in ctrl:
                ctrl[name] = be.simplify(z3.And(game.con, shift(res.env_regions[v1], game.vocab, 1)))
                for v2, cell2 in cells.successors(v1).items():
                    if is_safe(v2, res.k) and v2 in res.regions:
                        back.append((name, cell2, "e" + fmt_vector(v2)))
            edges.append(("e" + fmt_vector(v), guard, name))
    return StrategyAutomaton(game.vocab, env_states, ctrl, edges, "e" + fmt_vector(res.c0), back)


def dest_pair(prefix: Sequence[Mapping[str, object]], aut: SymbolicAutomaton, k: int) -> tuple[Mapping[str, object], Vector]:
    """Last state of a play prefix (controller-turn positions and intermediate ones) with its vector."""
    if not prefix:
        raise OtfError("empty play prefix")
    c = initial_vector(aut)
    for s in prefix[:-1]:
        c = succ_k(c, s, aut, k)
    return prefix[-1], c


def sigma_prod(res: KResult, game: Game, aut: SymbolicAutomaton, state: Mapping[str, object], c: Vector) -> Formula:
    """Allowed moves (a formula over V') at a controller-turn product state."""
    W = res.regions.get(c)
    val = logic.state_valuation(game.vocab, state, 0)
    if W is None or not compile_formula(W)(val):
        raise OutsideWinningRegion(f"{state} with {fmt_vector(c)} is not winning")
    c1 = succ_k(c, state, aut, res.k)
    target = shift(res.env_regions.get(c1, logic.FALSE), game.vocab, 1)
    subs = [(game.vocab.var(n), _const(game.vocab.var(n), state[n])) for n in game.vocab.names]
    return logic.simplify(z3.substitute(z3.And(game.con, game.domain(1), target), *subs))


def _const(v: z3.ExprRef, x) -> z3.ExprRef:
    x = Fraction(x)
    if v.sort() == z3.IntSort():
        return z3.IntVal(int(x))
    return z3.RealVal(f"{x.numerator}/{x.denominator}")
