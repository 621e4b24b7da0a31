"""Automata whose transitions are guarded by linear-arithmetic formulas.

The same structure is read as a Büchi, co-Büchi, universal co-Büchi or
safety automaton depending on its ``view``.  :func:`ltl_to_ba` builds a
nondeterministic Büchi automaton for an LTL formula with the tableau method
followed by degeneralisation.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import z3

from . import logic
from .logic import Formula, Vocabulary, compile_formula, conj, disj, formula_dump, formula_load
from .ltl import (
    FALSE,
    TRUE,
    And,
    Atom,
    Eventually,
    Globally,
    Ltl,
    Next,
    Or,
    Release,
    Until,
    negate_atom,
    nnf,
)


class AutomatonError(ValueError):
    pass


class Acceptance(str, Enum):
    BUCHI = "buchi"
    COBUCHI = "cobuchi"
    UCW = "ucw"
    SAFETY = "safety"


@dataclass(frozen=True)
class Transition:
    src: int
    guard: Formula = field(compare=False)
    dst: int


@dataclass
class SymbolicAutomaton:
    vocab: Vocabulary
    num_states: int
    initial: tuple[int, ...]
    transitions: list[Transition]
    final: frozenset[int]
    view: Acceptance = Acceptance.BUCHI

    def __post_init__(self):
        if self.num_states < 1 or not self.initial:
            raise AutomatonError("an automaton needs at least one state and one initial state")
        for q in (*self.initial, *self.final):
            if not 0 <= q < self.num_states:
                raise AutomatonError(f"state id {q} out of range")
        for t in self.transitions:
            if not (0 <= t.src < self.num_states and 0 <= t.dst < self.num_states):
                raise AutomatonError(f"transition {t.src}->{t.dst} out of range")
            bad = [n for n in logic.free_constants(t.guard) if n not in self.vocab.names]
            if bad:
                raise AutomatonError(f"guard mentions {bad}; guards range over unprimed state variables")
        self._compiled = None

    @property
    def states(self) -> range:
        return range(self.num_states)

    def out(self, q: int) -> list[Transition]:
        return [t for t in self.transitions if t.src == q]

    def with_view(self, view: Acceptance | str) -> SymbolicAutomaton:
        return replace(self, view=Acceptance(view))

    def _guards(self):
        if self._compiled is None:
            self._compiled = [(t.src, compile_formula(t.guard), t.dst) for t in self.transitions]
        return self._compiled

    def step(self, q: int, state: Mapping[str, object]) -> set[int]:
        return {dst for src, g, dst in self._guards() if src == q and g(state)}

    # -- structure ---------------------------------------------------------

    def is_complete(self) -> bool:
        for q in self.states:
            if logic.is_sat(z3.Not(disj([t.guard for t in self.out(q)]))):
                return False
        return True

    def complete(self) -> SymbolicAutomaton:
        """Route every uncovered letter to a fresh non-final sink."""
        residuals = []
        for q in self.states:
            rest = logic.simplify(z3.Not(disj([t.guard for t in self.out(q)])))
            if logic.is_sat(rest):
                residuals.append((q, rest))
        if not residuals:
            return self
        sink = self.num_states
        trans = list(self.transitions)
        trans += [Transition(q, g, sink) for q, g in residuals]
        trans.append(Transition(sink, logic.TRUE, sink))
        return replace(self, num_states=sink + 1, transitions=trans)

    def is_deterministic(self) -> bool:
        if len(self.initial) != 1:
            return False
        for q in self.states:
            out = self.out(q)
            for i, a in enumerate(out):
                for b in out[i + 1:]:
                    if a.dst != b.dst and logic.is_sat(z3.And(a.guard, b.guard)):
                        return False
        return True

    def transition_formula(self, q: z3.ArithRef, q_next: z3.ArithRef) -> Formula:
        """Aut(q, V, q') as a disjunction over the transitions."""
        return disj([z3.And(q == t.src, t.guard, q_next == t.dst) for t in self.transitions])

    def move_formula(self, q: z3.ArithRef, q_next: z3.ArithRef) -> Formula:
        """Aut grouped by source state, one conjunct per state."""
        parts = []
        for p in self.states:
            out = disj([z3.And(t.guard, q_next == t.dst) for t in self.out(p)])
            parts.append(z3.Implies(q == p, out))
        return conj(parts)

    # -- words ---------------------------------------------------------------

    def accepts_lasso(self, prefix: Sequence[Mapping[str, object]], loop: Sequence[Mapping[str, object]]) -> bool:
        if not loop:
            raise ValueError("loop must be non-empty")
        word = list(prefix) + list(loop)
        n = len(word)
        nxt = [i + 1 for i in range(n - 1)] + [len(prefix)]
        succ: dict[tuple[int, int], list[tuple[int, int]]] = {}
        start = [(q, 0) for q in self.initial]
        seen = set(start)
        todo = deque(start)
        while todo:
            node = todo.popleft()
            q, i = node
            out = [(d, nxt[i]) for d in self.step(q, word[i])]
            succ[node] = out
            for m in out:
                if m not in seen:
                    seen.add(m)
                    todo.append(m)
        is_final = {node: node[0] in self.final for node in seen}
        if self.view is Acceptance.BUCHI:
            return _buchi_nonempty(succ, start, is_final)
        if self.view is Acceptance.UCW:
            return not _buchi_nonempty(succ, start, is_final)
        if self.view is Acceptance.COBUCHI:
            keep = {n for n in seen if not is_final[n]}
            return bool(_cyclic_nodes(succ, keep) & seen)
        keep = {n for n in seen if is_final[n]}
        reach = _reachable(succ, [s for s in start if s in keep], keep)
        return bool(_cyclic_nodes(succ, reach))

    # -- serialisation -------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "states": self.num_states,
            "initial": list(self.initial),
            "final": sorted(self.final),
            "view": self.view.value,
            "transitions": [{"src": t.src, "guard": formula_dump(t.guard), "dst": t.dst} for t in self.transitions],
        }

    @staticmethod
    def from_json(data: dict, vocab: Vocabulary) -> SymbolicAutomaton:
        try:
            rows = [(t["src"], t["guard"], t["dst"]) if isinstance(t, dict) else tuple(t) for t in data["transitions"]]
            trans = [Transition(int(s), formula_load(g, vocab), int(d)) for s, g, d in rows]
            n = int(data["states"])
        except (KeyError, TypeError, ValueError) as e:
            raise AutomatonError(f"malformed automaton: {e}") from e
        return SymbolicAutomaton(
            vocab=vocab,
            num_states=n,
            initial=tuple(int(i) for i in data["initial"]),
            transitions=trans,
            final=frozenset(int(f) for f in data["final"]),
            view=Acceptance(data.get("view", data.get("acceptance", "buchi"))),
        )

    def to_dot(self) -> str:
        lines = ["digraph automaton {", "  rankdir=LR;"]
        for q in self.states:
            shape = "doublecircle" if q in self.final else "circle"
            lines.append(f'  q{q} [shape={shape}, label="{q}"];')
        for i, q in enumerate(self.initial):
            lines.append(f"  init{i} [shape=point];")
            lines.append(f"  init{i} -> q{q};")
        for t in self.transitions:
            label = formula_dump(t.guard).replace('"', '\\"')
            lines.append(f'  q{t.src} -> q{t.dst} [label="{label}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def load_automaton(path: str | Path, vocab: Vocabulary, view: Acceptance | str | None = None) -> SymbolicAutomaton:
    data = json.loads(Path(path).read_text())
    a = SymbolicAutomaton.from_json(data, vocab)
    return a.with_view(view) if view is not None else a


def save_automaton(a: SymbolicAutomaton, path: str | Path) -> None:
    Path(path).write_text(json.dumps(a.to_json(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Graph helpers


def _reachable(succ, start, keep=None) -> set:
    seen = set(start)
    todo = list(start)
    while todo:
        n = todo.pop()
        for m in succ.get(n, ()):
            if m not in seen and (keep is None or m in keep):
                seen.add(m)
                todo.append(m)
    return seen


def _cyclic_nodes(succ, nodes: set) -> set:
    """Nodes of ``nodes`` lying on a cycle of the induced subgraph (iterative Tarjan)."""
    index: dict = {}
    low: dict = {}
    on: set = set()
    stack: list = []
    out: set = set()
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter([m for m in succ.get(root, ()) if m in nodes]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on.add(w)
                    work.append((w, iter([m for m in succ.get(w, ()) if m in nodes])))
                    advanced = True
                    break
                if w in on:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                low[work[-1][0]] = min(low[work[-1][0]], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                if len(comp) > 1 or v in succ.get(v, ()):
                    out.update(comp)
    return out


def _buchi_nonempty(succ, start, is_final) -> bool:
    reach = _reachable(succ, start)
    cyc = _cyclic_nodes(succ, reach)
    return any(is_final[n] for n in cyc)


# ---------------------------------------------------------------------------
# LTL to Büchi translation (tableau construction)


def _tableau_form(phi: Ltl) -> Ltl:
    """NNF with F and G expressed through until and release."""
    if isinstance(phi, Atom):
        return phi
    if isinstance(phi, Eventually):
        return Until(TRUE, _tableau_form(phi.arg))
    if isinstance(phi, Globally):
        return Release(FALSE, _tableau_form(phi.arg))
    if isinstance(phi, Next):
        return Next(_tableau_form(phi.arg))
    if isinstance(phi, (And, Or, Until, Release)):
        return type(phi)(_tableau_form(phi.left), _tableau_form(phi.right))
    raise TypeError(f"unexpected operator in NNF: {phi}")


def _untils(phi: Ltl, acc: dict) -> None:
    if isinstance(phi, Until):
        acc.setdefault(phi, None)
    if isinstance(phi, Next):
        _untils(phi.arg, acc)
    elif isinstance(phi, (And, Or, Until, Release)):
        _untils(phi.left, acc)
        _untils(phi.right, acc)


def _tableau(phi: Ltl, consistent=None):
    """Return (nodes, untils); each node is (incoming, old, next) with 'init' in incoming for initial nodes.

    ``consistent`` decides whether a set of atoms can hold together; branches
    whose literals contradict are cut as soon as the atom is added.
    """
    nodes: dict[tuple[frozenset, frozenset], dict] = {}
    order: list[tuple[frozenset, frozenset]] = []
    work = [({"init"}, [phi], frozenset(), frozenset())]
    while work:
        incoming, new, old, nxt = work.pop()
        if not new:
            key = (old, nxt)
            if key in nodes:
                nodes[key]["incoming"] |= incoming
                continue
            nid = len(order)
            nodes[key] = {"id": nid, "incoming": set(incoming)}
            order.append(key)
            work.append(({nid}, list(nxt), frozenset(), frozenset()))
            continue
        eta, rest = new[0], new[1:]
        if eta in old:
            work.append((incoming, rest, old, nxt))
            continue
        if isinstance(eta, Atom):
            if eta == FALSE or negate_atom(eta) in old:
                continue
            if consistent is not None and not consistent(frozenset(p for p in old if isinstance(p, Atom)) | {eta}):
                continue
            work.append((incoming, rest, old | {eta}, nxt))
        elif isinstance(eta, And):
            add = [p for p in (eta.left, eta.right) if p not in old]
            work.append((incoming, add + rest, old | {eta}, nxt))
        elif isinstance(eta, Next):
            work.append((incoming, rest, old | {eta}, nxt | {eta.arg}))
        elif isinstance(eta, Or):
            work.append((incoming, [eta.right] + rest, old | {eta}, nxt))
            work.append((incoming, [eta.left] + rest, old | {eta}, nxt))
        elif isinstance(eta, Until):
            work.append((incoming, [eta.right] + rest, old | {eta}, nxt))
            work.append((incoming, [eta.left] + rest, old | {eta}, nxt | {eta}))
        elif isinstance(eta, Release):
            work.append((incoming, [eta.left, eta.right] + rest, old | {eta}, nxt))
            work.append((incoming, [eta.right] + rest, old | {eta}, nxt | {eta}))
        else:
            raise TypeError(eta)
    untils: dict = {}
    _untils(phi, untils)
    result = []
    for key in order:
        old, nxt = key
        result.append((nodes[key]["incoming"], old, nxt))
    return result, list(untils)


def ltl_to_ba(phi: Ltl, vocab: Vocabulary) -> SymbolicAutomaton:
    """Nondeterministic Büchi automaton accepting exactly the models of ``phi``.

    The automaton reads one game state per step.  It is trimmed (states that
    cannot reach an accepting cycle are dropped) and then completed with a
    non-final sink.
    """
    form = _tableau_form(nnf(phi))
    sat_memo: dict[frozenset, bool] = {}

    def consistent(lits: frozenset) -> bool:
        if lits not in sat_memo:
            sat_memo[lits] = logic.is_sat(conj([a.formula for a in lits]))
        return sat_memo[lits]

    nodes, untils = _tableau(form, consistent)
    n = len(nodes)
    # generalised acceptance sets over tableau nodes
    acc_sets = []
    for u in untils:
        acc_sets.append({i for i, (_, old, _) in enumerate(nodes) if u not in old or u.right in old})
    labels = []
    for _, old, _ in nodes:
        lits = sorted((p for p in old if isinstance(p, Atom) and p != TRUE), key=lambda a: a.key)
        labels.append(conj([a.formula for a in lits]))
    # generalised automaton: state 0 is the initial pseudo-state, node i is state i+1
    edges: list[tuple[int, int]] = []
    for i, (incoming, _, _) in enumerate(nodes):
        for src in incoming:
            edges.append((0 if src == "init" else src + 1, i + 1))
    m = max(1, len(acc_sets))
    gen_final = [set(range(1, n + 1))] if not acc_sets else [{i + 1 for i in s} for s in acc_sets]

    # degeneralise: state (s, j) waits for acceptance set j; advance when s is in it
    def advance(s: int, j: int) -> int:
        return (j + 1) % m if s in gen_final[j] else j

    label_sat = [logic.is_sat(f) for f in labels]
    index: dict[tuple[int, int], int] = {(0, 0): 0}
    order = [(0, 0)]
    out_edges: dict[int, list[int]] = {}
    for s, d in edges:
        out_edges.setdefault(s, []).append(d)
    trans: list[tuple[int, int, int]] = []  # (src, dst, node label index)
    todo = deque([(0, 0)])
    while todo:
        s, j = todo.popleft()
        j2 = advance(s, j) if s != 0 else 0
        for d in sorted(out_edges.get(s, [])):
            if not label_sat[d - 1]:
                continue
            key = (d, j2)
            if key not in index:
                index[key] = len(order)
                order.append(key)
                todo.append(key)
            trans.append((index[(s, j)], index[key], d - 1))
    final = {index[k] for k in order if k[0] != 0 and k[1] == 0 and k[0] in gen_final[0]}
    ba = SymbolicAutomaton(
        vocab=vocab,
        num_states=len(order),
        initial=(0,),
        transitions=[Transition(a, labels[lab], b) for a, b, lab in trans],
        final=frozenset(final),
    )
    return _reduce(ba).complete()


def _reduce(a: SymbolicAutomaton) -> SymbolicAutomaton:
    """Trim useless states, merge parallel edges and collapse identical states."""
    succ: dict[int, list[int]] = {q: [] for q in a.states}
    for t in a.transitions:
        succ[t.src].append(t.dst)
    reach = _reachable(succ, list(a.initial))
    cyc = _cyclic_nodes(succ, reach)
    good_cycle = {q for q in cyc if q in a.final}
    # states from which an accepting cycle is reachable
    pred: dict[int, list[int]] = {q: [] for q in a.states}
    for t in a.transitions:
        pred[t.dst].append(t.src)
    # an accepting state on a cycle whose SCC is within reach
    useful = _reachable(pred, list(good_cycle))
    keep = reach & useful
    if not keep:
        return SymbolicAutomaton(a.vocab, 1, (0,), [], frozenset(), a.view)
    trans = [t for t in a.transitions if t.src in keep and t.dst in keep]
    # a Büchi run passes a state off every cycle at most once, so its flag is free
    final = set(a.final) | (keep - cyc) if a.view is Acceptance.BUCHI else set(a.final)
    # partition refinement on (final, {(guard, class)})
    cls = {q: int(q in final) for q in keep}
    # z3 hash-conses terms, so equal guards share an AST id
    out_edges: dict[int, list[tuple[int, int]]] = {q: [] for q in keep}
    for t in trans:
        out_edges[t.src].append((t.guard.get_id(), t.dst))
    while True:
        sig = {}
        for q in sorted(keep):
            out = frozenset((g, cls[d]) for g, d in out_edges[q])
            sig[q] = (cls[q], out)
        ids: dict = {}
        new = {q: ids.setdefault(sig[q], len(ids)) for q in sorted(keep)}
        if len(set(new.values())) == len(set(cls.values())):
            cls = new
            break
        cls = new
    # renumber in breadth-first order from the initial state
    init_cls = [cls[q] for q in a.initial if q in keep]
    merged: dict[tuple[int, int], list[Formula]] = {}
    for t in trans:
        merged.setdefault((cls[t.src], cls[t.dst]), [])
        g = merged[(cls[t.src], cls[t.dst])]
        if not any(x.eq(t.guard) for x in g):
            g.append(t.guard)
    adj: dict[int, list[int]] = {}
    for (s, d) in merged:
        adj.setdefault(s, []).append(d)
    order = []
    seen = set()
    todo = deque(dict.fromkeys(init_cls))
    for c in todo:
        seen.add(c)
    while todo:
        c = todo.popleft()
        order.append(c)
        for d in sorted(adj.get(c, [])):
            if d not in seen:
                seen.add(d)
                todo.append(d)
    num = {c: i for i, c in enumerate(order)}
    final_cls = {cls[q] for q in keep if q in final}
    new_trans = []
    for (s, d), gs in sorted(merged.items(), key=lambda kv: (num[kv[0][0]], num[kv[0][1]])):
        g = gs[0] if len(gs) == 1 else logic.simplify(z3.Or(*gs))
        new_trans.append(Transition(num[s], g, num[d]))
    return SymbolicAutomaton(
        vocab=a.vocab,
        num_states=len(order),
        initial=tuple(dict.fromkeys(num[c] for c in init_cls)),
        transitions=new_trans,
        final=frozenset(num[c] for c in final_cls),
        view=a.view,
    )
