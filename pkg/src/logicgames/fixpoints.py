"""Fixpoint solvers for safety, reachability, Büchi and co-Büchi games.

Every iteration eliminates quantifiers, so each region is a quantifier-free
formula over V.  The controllable-predecessor operators are computed in two
stages (environment step, then controller step) which keeps each elimination
problem small.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Union

import z3

from . import logic
from .game import Game, StrategyAutomaton, fnd_moves, memoryless_strategy
from .logic import Backend, Formula, conj, disj, shift
from .ltl import Buchi, CoBuchi, Reach, Safety, classify


class Perspective(str, Enum):
    CONTROLLER = "C"
    ENVIRONMENT = "E"


class Bound(str, Enum):
    UNDER = "under"
    OVER = "over"


class IterationCapExceeded(Exception):
    """A loop hit its iteration cap; ``last`` bounds the true fixpoint from ``bound``'s side."""

    def __init__(self, loop: str, cap: int, last: Formula, bound: Bound, history: list[Formula]):
        self.loop = loop
        self.cap = cap
        self.last = last
        self.bound = bound
        self.history = history
        super().__init__(f"{loop} loop reached the iteration cap {cap}")


class MonotonicityError(AssertionError):
    pass


DEFAULT_CAP = 500


# ---------------------------------------------------------------------------
# Controllable predecessors


@dataclass(frozen=True)
class Plain:
    pass


@dataclass(frozen=True)
class Safe:
    X: Formula = field(compare=False)


@dataclass(frozen=True)
class ReachCp:
    X: Formula = field(compare=False)


@dataclass(frozen=True)
class ReachPerMove:
    X: Formula = field(compare=False)
    move: int = 0


@dataclass(frozen=True)
class StepC:
    pass


@dataclass(frozen=True)
class StepE:
    pass


CpKind = Union[Plain, Safe, ReachCp, ReachPerMove, StepC, StepE]


def build_cp(game: Game, kind: CpKind, persp: Perspective, Y: Formula) -> Formula:
    """The quantified predecessor formula of ``kind`` applied to ``Y``, over V."""
    vocab = game.vocab
    V1, V2 = vocab.vars(1), vocab.vars(2)
    ctrl = persp is Perspective.CONTROLLER
    con = z3.And(game.con, game.domain(1))
    env_step = z3.And(game.env, game.domain(1))
    if isinstance(kind, StepC):
        Y1 = shift(Y, vocab, 1)
        return z3.Exists(V1, z3.And(con, Y1)) if ctrl else z3.ForAll(V1, z3.Implies(con, Y1))
    if isinstance(kind, StepE):
        Y1 = shift(Y, vocab, 1)
        return z3.ForAll(V1, z3.Implies(env_step, Y1)) if ctrl else z3.Exists(V1, z3.And(env_step, Y1))
    env2 = shift(env_step, vocab, 1)
    Y2 = shift(Y, vocab, 2)
    inner = z3.ForAll(V2, z3.Implies(env2, Y2)) if ctrl else z3.Exists(V2, z3.And(env2, Y2))
    if isinstance(kind, Plain):
        body = inner
    elif isinstance(kind, Safe):
        body = z3.And(shift(kind.X, vocab, 1), inner)
    elif isinstance(kind, (ReachCp, ReachPerMove)):
        body = z3.Or(shift(kind.X, vocab, 1), inner)
    else:
        raise TypeError(kind)
    if isinstance(kind, ReachPerMove):
        moves = fnd_moves(game.con, vocab) or logic.top_disjuncts(game.con)
        con = z3.And(moves[kind.move], game.domain(1))
    return z3.Exists(V1, z3.And(con, body)) if ctrl else z3.ForAll(V1, z3.Implies(con, body))


class Predecessors:
    """Staged, quantifier-eliminated predecessor operators for one game and perspective."""

    def __init__(self, game: Game, persp: Perspective, backend: Backend | None = None):
        self.game = game
        self.vocab = game.vocab
        self.persp = Perspective(persp)
        self.backend = backend or logic.default_backend()
        self.D0 = game.domain(0)
        self.D1 = game.domain(1)
        self.con = z3.And(game.con, self.D1)
        self.env = z3.And(game.env, self.D1)
        self.moves = fnd_moves(game.con, game.vocab)
        self.V1 = game.vocab.vars(1)

    @property
    def ctrl(self) -> bool:
        return self.persp is Perspective.CONTROLLER

    def qelim(self, f: Formula) -> Formula:
        return self.backend.qelim(f)

    def step_e(self, Y: Formula) -> Formula:
        """States (as intermediate positions) from which every / some environment move lands in Y."""
        Y1 = shift(Y, self.vocab, 1)
        if self.ctrl:
            return self.qelim(z3.ForAll(self.V1, z3.Implies(self.env, Y1)))
        return self.qelim(z3.Exists(self.V1, z3.And(self.env, Y1)))

    def step_c(self, Y: Formula, move: int | None = None) -> Formula:
        rel = self.con if move is None else z3.And(self.moves[move], self.D1)
        Y1 = shift(Y, self.vocab, 1)
        if self.ctrl:
            return self.qelim(z3.Exists(self.V1, z3.And(rel, Y1)))
        return self.qelim(z3.ForAll(self.V1, z3.Implies(rel, Y1)))

    def plain(self, Y: Formula, move: int | None = None, inner: Formula | None = None) -> Formula:
        return self.step_c(self.step_e(Y) if inner is None else inner, move)

    def safe(self, X: Formula, Y: Formula, move: int | None = None, inner: Formula | None = None) -> Formula:
        e = self.step_e(Y) if inner is None else inner
        return self.step_c(conj([X, e]), move)

    def reach(self, X: Formula, Y: Formula, move: int | None = None, inner: Formula | None = None) -> Formula:
        e = self.step_e(Y) if inner is None else inner
        return self.step_c(disj([X, e]), move)

    # -- chain bookkeeping -------------------------------------------------

    def norm(self, f: Formula) -> Formula:
        return self.backend.simplify(conj([f, self.D0]))

    def entails(self, f: Formula, g: Formula) -> bool:
        return self.backend.entails(f, g)

    def valid(self, f: Formula) -> bool:
        return self.backend.entails(self.D0, f)


@dataclass
class SolveResult:
    objective: str
    perspective: Perspective
    region: Formula
    env_region: Formula | None = None
    frontier: list[Formula] = field(default_factory=list)
    iterations: int = 0
    sizes: list[int] = field(default_factory=list)
    history: list[Formula] = field(default_factory=list)
    strategy: StrategyAutomaton | None = None
    moves: list[Formula] | None = None
    guards: list[Formula] | None = None


def _check_shrinking(P: Predecessors, new: Formula, old: Formula, loop: str) -> None:
    if not P.entails(new, old):
        raise MonotonicityError(f"{loop}: iterate is not contained in its predecessor")


def _check_growing(P: Predecessors, new: Formula, old: Formula, loop: str) -> None:
    if not P.entails(old, new):
        raise MonotonicityError(f"{loop}: iterate does not contain its predecessor")


def _gfp(P: Predecessors, start: Formula, update: Callable[[Formula], Formula], cap: int, loop: str, history: list):
    """Greatest fixpoint by downward iteration from ``start``; returns (fixpoint, iterations)."""
    W = start
    history.append(W)
    for i in range(1, cap + 1):
        new = update(W)
        _check_shrinking(P, new, W, loop)
        history.append(new)
        if P.entails(W, new):
            return new, i
        W = new
    raise IterationCapExceeded(loop, cap, W, Bound.OVER, history)


def _lfp(P: Predecessors, start: Formula, update: Callable[[Formula], Formula], cap: int, loop: str,
         history: list, frontier: list | None = None):
    """Least fixpoint by upward iteration from ``start``; ``frontier`` collects the layers."""
    W = start
    history.append(W)
    if frontier is not None:
        frontier.append(W)
    for i in range(1, cap + 1):
        new = update(W)
        _check_growing(P, new, W, loop)
        history.append(new)
        if P.entails(new, W):
            return new, i
        if frontier is not None:
            frontier.append(P.backend.simplify(z3.And(new, z3.Not(W))))
        W = new
    raise IterationCapExceeded(loop, cap, W, Bound.UNDER, history)


def _objective_set(game: Game, cls, X: Formula | None) -> Formula:
    if X is not None:
        return X
    shape = classify(game.objective)
    if not isinstance(shape, cls):
        raise ValueError(f"objective of {game.name!r} is not of shape {cls.__name__}")
    return shape.X


# ---------------------------------------------------------------------------
# Safety


def solve_safety(game: Game, X: Formula | None = None, persp: Perspective = Perspective.CONTROLLER,
                 cap: int = DEFAULT_CAP, backend: Backend | None = None, strategy: bool = True) -> SolveResult:
    P = Predecessors(game, persp, backend)
    X = P.norm(_objective_set(game, Safety, X))
    res = SolveResult("safety", P.persp, X)
    if not P.backend.check(X):
        res.region = logic.FALSE
        return _finish_safety(P, X, res, strategy)
    inner_cache: dict[int, Formula] = {}

    def update(W):
        e = P.step_e(W)
        inner_cache[id(W)] = e
        return P.norm(z3.And(P.safe(X, W, inner=e), X))

    res.region, res.iterations = _gfp(P, X, update, cap, "safety", res.history)
    res.sizes = [logic.formula_size(w) for w in res.history]
    return _finish_safety(P, X, res, strategy)


def _finish_safety(P: Predecessors, X: Formula, res: SolveResult, strategy: bool) -> SolveResult:
    if strategy and P.ctrl and P.moves is not None:
        W = res.region
        inner = P.step_e(W)
        guards = [P.backend.simplify(z3.And(W, P.safe(X, W, move=i, inner=inner))) for i in range(len(P.moves))]
        _attach(P, res, guards)
    return res


def _attach(P: Predecessors, res: SolveResult, guards: list[Formula]) -> None:
    res.moves = P.moves
    res.guards = guards
    res.strategy = memoryless_strategy(P.vocab, P.moves, guards)


# ---------------------------------------------------------------------------
# Reachability


def solve_reach(game: Game, X: Formula | None = None, persp: Perspective = Perspective.CONTROLLER,
                cap: int = DEFAULT_CAP, backend: Backend | None = None, strategy: bool = True) -> SolveResult:
    P = Predecessors(game, persp, backend)
    X = P.norm(_objective_set(game, Reach, X))
    res = SolveResult("reach", P.persp, X)
    if P.valid(X):
        res.region = P.D0
        res.frontier = [P.D0]
        res.history = [P.D0]
        return _finish_reach(P, X, res, strategy, [])
    inners: list[Formula] = []

    def update(W):
        e = P.step_e(W)
        inners.append(e)
        return P.norm(z3.Or(P.reach(X, W, inner=e), X))

    res.region, res.iterations = _lfp(P, X, update, cap, "reach", res.history, res.frontier)
    res.sizes = [logic.formula_size(w) for w in res.history]
    return _finish_reach(P, X, res, strategy, inners)


def _finish_reach(P: Predecessors, X: Formula, res: SolveResult, strategy: bool, inners: list[Formula]) -> SolveResult:
    if not (strategy and P.ctrl and P.moves is not None):
        return res
    # rank r > 0: the move either lands in X or forces the next state into W_{r-1}
    guards = []
    for i in range(len(P.moves)):
        parts = [z3.And(res.frontier[0], P.step_c(logic.TRUE, move=i))]
        for r in range(1, len(res.frontier)):
            parts.append(z3.And(res.frontier[r], P.reach(X, None, move=i, inner=inners[r - 1])))
        guards.append(P.backend.simplify(disj(parts)))
    _attach(P, res, guards)
    return res


# ---------------------------------------------------------------------------
# Co-Büchi


def solve_cobuchi(game: Game, X: Formula | None = None, persp: Perspective = Perspective.CONTROLLER,
                  cap: int = DEFAULT_CAP, backend: Backend | None = None, strategy: bool = True,
                  single_pass: bool = False) -> SolveResult:
    """Safety core inside X, then the attractor to it; repeated until no new states appear.

    Each round j computes the core ``S_j = nu Y. (X and CP_S^X(Y)) or CP(A_{j-1})``
    and its attractor ``A_j``.  Round one is exactly "safety core, then reach
    the core".  Later rounds only matter when the opponent can leave X a
    bounded but unknown number of times; ``single_pass=True`` stops after
    round one.
    """
    P = Predecessors(game, persp, backend)
    X = P.norm(_objective_set(game, CoBuchi, X))
    res = SolveResult("cobuchi", P.persp, X)
    if P.valid(X):
        res.region = P.D0
        res.frontier = [P.D0]
        res.history = [P.D0]
        layers = [(P.D0, [P.D0], [], logic.FALSE)]
        return _finish_cobuchi(P, X, res, strategy, layers)
    A_prev = logic.FALSE
    layers = []  # (core, attractor frontier, attractor inners, previous attractor)
    total = 0
    for rnd in range(1, cap + 1):
        esc = P.plain(A_prev) if not z3.is_false(A_prev) else logic.FALSE

        def core_update(Y, esc=esc):
            return P.norm(z3.Or(z3.And(P.safe(X, Y), X), esc))

        try:
            core, n1 = _gfp(P, P.norm(z3.Or(X, esc)), core_update, cap, "cobuchi-core", res.history)
        except IterationCapExceeded as e:
            # attractors of earlier rounds are contained in the winning region
            raise IterationCapExceeded(e.loop, cap, A_prev, Bound.UNDER, res.history) from None
        start = P.norm(z3.Or(core, A_prev))
        inners: list[Formula] = []
        frontier: list[Formula] = []

        def attr_update(W):
            e = P.step_e(W)
            inners.append(e)
            return P.norm(z3.Or(P.step_c(e), start))

        A, n2 = _lfp(P, start, attr_update, cap, "cobuchi-reach", res.history, frontier)
        total += n1 + n2
        layers.append((core, frontier, inners, A_prev))
        if single_pass or P.entails(A, A_prev):
            res.region = A
            break
        A_prev = A
    else:
        raise IterationCapExceeded("cobuchi-outer", cap, A_prev, Bound.UNDER, res.history)
    res.iterations = total
    res.frontier = [f for (_, fr, _, _) in layers for f in fr]
    res.sizes = [logic.formula_size(w) for w in res.history]
    return _finish_cobuchi(P, X, res, strategy, layers)


def _finish_cobuchi(P: Predecessors, X: Formula, res: SolveResult, strategy: bool, layers) -> SolveResult:
    if not (strategy and P.ctrl and P.moves is not None):
        return res
    n = len(P.moves)
    parts: list[list[Formula]] = [[] for _ in range(n)]
    for core, frontier, inners, A_prev in layers:
        new_core = P.backend.simplify(z3.And(core, z3.Not(A_prev)))
        core_inner = P.step_e(core)
        esc_inner = P.step_e(A_prev) if not z3.is_false(A_prev) else None
        for i in range(n):
            ok = z3.And(X, P.safe(X, None, move=i, inner=core_inner))
            if esc_inner is not None:
                ok = z3.Or(ok, P.step_c(esc_inner, move=i))
            parts[i].append(z3.And(new_core, ok))
            # attractor rings beyond the core: force the next state one ring inwards
            for r in range(1, len(frontier)):
                parts[i].append(z3.And(frontier[r], P.step_c(inners[r - 1], move=i)))
    guards = [P.backend.simplify(disj(p)) for p in parts]
    _attach(P, res, guards)
    return res


# ---------------------------------------------------------------------------
# Büchi


def solve_buchi(game: Game, X: Formula | None = None, persp: Perspective = Perspective.CONTROLLER,
                cap: int = DEFAULT_CAP, backend: Backend | None = None, strategy: bool = True) -> SolveResult:
    """Nested fixpoint over controller-turn and environment-turn regions.

    Outer loop (greatest): ``Z``/``Z_E`` shrink from the domain.  Inner loop
    (least): ``H``/``H_E`` grow from false by
    ``H <- CP_C(H_E) or R`` and ``H_E <- CP_E(H) or R_E`` where
    ``R = X and CP_C(Z_E)`` and ``R_E = X and CP_E(Z)`` are the states that
    visit X now and can continue inside the previous outer iterate.
    """
    P = Predecessors(game, persp, backend)
    X = P.norm(_objective_set(game, Buchi, X))
    res = SolveResult("buchi", P.persp, X)
    if not P.backend.check(X):
        res.region = logic.FALSE
        res.env_region = logic.FALSE
        return res
    Z, ZE = P.D0, P.D0
    res.history.append(Z)
    total = 0
    for outer in range(1, cap + 1):
        R = P.norm(z3.And(X, P.step_c(ZE)))
        RE = P.norm(z3.And(X, P.step_e(Z)))
        H, HE = logic.FALSE, logic.FALSE
        frontier: list[tuple[Formula, Formula]] = []  # (new controller states, env region they move into)
        inner_hist: list[Formula] = []
        for inner in range(1, cap + 1):
            Hn = P.norm(z3.Or(P.step_c(HE), R))
            HEn = P.norm(z3.Or(P.step_e(Hn), RE))
            _check_growing(P, Hn, H, "buchi-inner")
            _check_growing(P, HEn, HE, "buchi-inner-env")
            inner_hist.append(Hn)
            total += 1
            if P.entails(Hn, H) and P.entails(HEn, HE):
                break
            frontier.append((P.backend.simplify(z3.And(Hn, z3.Not(H))), HE))
            H, HE = Hn, HEn
        else:
            # the last completed outer iterate still contains the winning region
            raise IterationCapExceeded("buchi-inner", cap, Z, Bound.OVER, res.history + inner_hist)
        _check_shrinking(P, H, Z, "buchi-outer")
        _check_shrinking(P, HE, ZE, "buchi-outer-env")
        res.history.append(H)
        if P.entails(Z, H) and P.entails(ZE, HE):
            res.region, res.env_region = H, HE
            res.frontier = [f for f, _ in frontier]
            res.iterations = total
            res.sizes = [logic.formula_size(w) for w in res.history]
            return _finish_buchi(P, X, res, strategy, frontier, Z, ZE)
        Z, ZE = H, HE
    raise IterationCapExceeded("buchi-outer", cap, Z, Bound.OVER, res.history)


def _finish_buchi(P: Predecessors, X: Formula, res: SolveResult, strategy: bool, frontier, Z, ZE) -> SolveResult:
    if not (strategy and P.ctrl and P.moves is not None):
        return res
    n = len(P.moves)
    z_inner = ZE  # already a region of intermediate states
    parts: list[list[Formula]] = [[] for _ in range(n)]
    # rank 1: X holds now; the lowest-index move staying in the environment-turn region
    taken = logic.FALSE
    for i in range(n):
        ok = P.step_c(z_inner, move=i)
        if frontier:
            parts[i].append(z3.And(frontier[0][0], X, ok, z3.Not(taken)))
        taken = z3.Or(taken, ok)
    for r in range(1, len(frontier)):
        new, he_prev = frontier[r]
        for i in range(n):
            parts[i].append(z3.And(new, P.step_c(he_prev, move=i)))
    guards = [P.backend.simplify(disj(p)) for p in parts]
    _attach(P, res, guards)
    return res


SOLVERS = {
    Safety: solve_safety,
    Reach: solve_reach,
    Buchi: solve_buchi,
    CoBuchi: solve_cobuchi,
}


def solve_simple(game: Game, persp: Perspective = Perspective.CONTROLLER, cap: int = DEFAULT_CAP,
                 backend: Backend | None = None, strategy: bool = True) -> SolveResult:
    shape = classify(game.objective)
    solver = SOLVERS.get(type(shape))
    if solver is None:
        raise ValueError("objective is not of a simple shape")
    return solver(game, shape.X, persp, cap, backend, strategy)
