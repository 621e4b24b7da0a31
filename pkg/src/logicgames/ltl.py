"""LTL over linear-arithmetic atoms: syntax, negation normal form, shape detection
and evaluation on ultimately periodic words."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import z3

from .logic import (
    Formula,
    Node,
    ParseError,
    Parser,
    Unprintable,
    Vocabulary,
    compile_formula,
    conj,
    disj,
    formula_to_text,
    make_atom,
    node_to_lin,
)


@dataclass(frozen=True)
class Atom:
    """A single comparison (or a truth constant) over unprimed variables."""

    formula: Formula = field(compare=False, hash=False)
    key: str = ""

    @staticmethod
    def of(f: Formula) -> Atom:
        return Atom(f, f.sexpr())


@dataclass(frozen=True)
class Not:
    arg: "Ltl"


@dataclass(frozen=True)
class And:
    left: "Ltl"
    right: "Ltl"


@dataclass(frozen=True)
class Or:
    left: "Ltl"
    right: "Ltl"


@dataclass(frozen=True)
class Implies:
    left: "Ltl"
    right: "Ltl"


@dataclass(frozen=True)
class Next:
    arg: "Ltl"


@dataclass(frozen=True)
class Until:
    left: "Ltl"
    right: "Ltl"


@dataclass(frozen=True)
class Release:
    left: "Ltl"
    right: "Ltl"


@dataclass(frozen=True)
class Eventually:
    arg: "Ltl"


@dataclass(frozen=True)
class Globally:
    arg: "Ltl"


Ltl = Union[Atom, Not, And, Or, Implies, Next, Until, Release, Eventually, Globally]

TRUE = Atom.of(z3.BoolVal(True))
FALSE = Atom.of(z3.BoolVal(False))


def parse_ltl(text: str, vocab: Vocabulary) -> Ltl:
    node = Parser(text, temporal=True).parse()
    return _from_node(node, vocab, text)


def _from_node(node: Node, vocab: Vocabulary, text: str) -> Ltl:
    op = node.op
    if op == "bool":
        return TRUE if node.args[0] else FALSE
    if op in ("<", "<=", "==", "=", "!=", ">=", ">"):
        a = node_to_lin(node.args[0], vocab, text, max_tier=0)
        b = node_to_lin(node.args[1], vocab, text, max_tier=0)
        return Atom.of(make_atom(a, op, b, vocab))
    if op == "!":
        return Not(_from_node(node.args[0], vocab, text))
    if op in ("G", "F", "X"):
        arg = _from_node(node.args[0], vocab, text)
        return {"G": Globally, "F": Eventually, "X": Next}[op](arg)
    if op in ("&&", "||", "->", "U"):
        a = _from_node(node.args[0], vocab, text)
        b = _from_node(node.args[1], vocab, text)
        return {"&&": And, "||": Or, "->": Implies, "U": Until}[op](a, b)
    if op == "<->":
        a = _from_node(node.args[0], vocab, text)
        b = _from_node(node.args[1], vocab, text)
        return And(Implies(a, b), Implies(b, a))
    raise ParseError(f"expected a temporal formula, found {op!r}", node.pos, text)


# ---------------------------------------------------------------------------
# Printing

_PREC = {Implies: 1, Or: 2, And: 3, Until: 4, Release: 4}


def to_text(phi: Ltl) -> str:
    return _text(phi, 0)


def _atom_text(a: Atom) -> str:
    try:
        return formula_to_text(a.formula)
    except Unprintable:
        raise Unprintable(f"atom {a.key} has no surface syntax") from None


def _text(phi: Ltl, ctx: int) -> str:
    if isinstance(phi, Atom):
        s = _atom_text(phi)
        return f"({s})" if ctx > 5 and s not in ("true", "false") else s
    if isinstance(phi, Not):
        return f"!{_text(phi.arg, 6)}"
    if isinstance(phi, (Globally, Eventually, Next)):
        op = {Globally: "G", Eventually: "F", Next: "X"}[type(phi)]
        return f"{op} {_text(phi.arg, 6)}"
    if isinstance(phi, Release):
        # no surface syntax for release; print its dual
        return _text(Not(Until(Not(phi.left), Not(phi.right))), ctx)
    prec = _PREC[type(phi)]
    sym = {Implies: "->", Or: "||", And: "&&", Until: "U"}[type(phi)]
    if isinstance(phi, (Implies, Until)):
        s = f"{_text(phi.left, prec + 1)} {sym} {_text(phi.right, prec)}"
    else:
        s = f"{_text(phi.left, prec)} {sym} {_text(phi.right, prec + 1)}"
    return f"({s})" if ctx > prec else s


# ---------------------------------------------------------------------------
# Negation normal form

_FLIP = {
    z3.Z3_OP_LE: lambda a, b: a > b,
    z3.Z3_OP_LT: lambda a, b: a >= b,
    z3.Z3_OP_GE: lambda a, b: a < b,
    z3.Z3_OP_GT: lambda a, b: a <= b,
    z3.Z3_OP_EQ: lambda a, b: a != b,
    z3.Z3_OP_DISTINCT: lambda a, b: a == b,
}


def negate_atom(a: Atom) -> Atom:
    f = a.formula
    if z3.is_true(f):
        return FALSE
    if z3.is_false(f):
        return TRUE
    k = f.decl().kind()
    if k in _FLIP and f.num_args() == 2 and z3.is_arith(f.arg(0)):
        return Atom.of(_FLIP[k](f.arg(0), f.arg(1)))
    if z3.is_not(f):
        return Atom.of(f.arg(0))
    return Atom.of(z3.Not(f))


def nnf(phi: Ltl) -> Ltl:
    """Push negations down to atoms; implications are expanded."""
    if isinstance(phi, Atom):
        return phi
    if isinstance(phi, Not):
        return negate_nnf(phi.arg)
    if isinstance(phi, And):
        return And(nnf(phi.left), nnf(phi.right))
    if isinstance(phi, Or):
        return Or(nnf(phi.left), nnf(phi.right))
    if isinstance(phi, Implies):
        return Or(negate_nnf(phi.left), nnf(phi.right))
    if isinstance(phi, Next):
        return Next(nnf(phi.arg))
    if isinstance(phi, Until):
        return Until(nnf(phi.left), nnf(phi.right))
    if isinstance(phi, Release):
        return Release(nnf(phi.left), nnf(phi.right))
    if isinstance(phi, Eventually):
        return Eventually(nnf(phi.arg))
    if isinstance(phi, Globally):
        return Globally(nnf(phi.arg))
    raise TypeError(phi)


def negate_nnf(phi: Ltl) -> Ltl:
    """Negation normal form of ``!phi``."""
    if isinstance(phi, Atom):
        return negate_atom(phi)
    if isinstance(phi, Not):
        return nnf(phi.arg)
    if isinstance(phi, And):
        return Or(negate_nnf(phi.left), negate_nnf(phi.right))
    if isinstance(phi, Or):
        return And(negate_nnf(phi.left), negate_nnf(phi.right))
    if isinstance(phi, Implies):
        return And(nnf(phi.left), negate_nnf(phi.right))
    if isinstance(phi, Next):
        return Next(negate_nnf(phi.arg))
    if isinstance(phi, Until):
        return Release(negate_nnf(phi.left), negate_nnf(phi.right))
    if isinstance(phi, Release):
        return Until(negate_nnf(phi.left), negate_nnf(phi.right))
    if isinstance(phi, Eventually):
        return Globally(negate_nnf(phi.arg))
    if isinstance(phi, Globally):
        return Eventually(negate_nnf(phi.arg))
    raise TypeError(phi)


# ---------------------------------------------------------------------------
# Shapes


@dataclass(frozen=True)
class Safety:
    X: Formula = field(compare=False)


@dataclass(frozen=True)
class Reach:
    X: Formula = field(compare=False)


@dataclass(frozen=True)
class Buchi:
    X: Formula = field(compare=False)


@dataclass(frozen=True)
class CoBuchi:
    X: Formula = field(compare=False)


@dataclass(frozen=True)
class General:
    phi: Ltl


Shape = Union[Safety, Reach, Buchi, CoBuchi, General]


def is_propositional(phi: Ltl) -> bool:
    if isinstance(phi, Atom):
        return True
    if isinstance(phi, Not):
        return is_propositional(phi.arg)
    if isinstance(phi, (And, Or, Implies)):
        return is_propositional(phi.left) and is_propositional(phi.right)
    return False


def state_formula(phi: Ltl) -> Formula:
    """The z3 formula of a temporal-operator-free LTL formula."""
    if isinstance(phi, Atom):
        return phi.formula
    if isinstance(phi, Not):
        return z3.Not(state_formula(phi.arg))
    if isinstance(phi, And):
        return conj([state_formula(phi.left), state_formula(phi.right)])
    if isinstance(phi, Or):
        return disj([state_formula(phi.left), state_formula(phi.right)])
    if isinstance(phi, Implies):
        return z3.Implies(state_formula(phi.left), state_formula(phi.right))
    raise TypeError(f"not a state formula: {phi}")


def classify(phi: Ltl) -> Shape:
    """Recognise G b, F b, G F b and F G b with b temporal-operator-free."""
    if isinstance(phi, Globally):
        inner = phi.arg
        if is_propositional(inner):
            return Safety(state_formula(inner))
        if isinstance(inner, Eventually) and is_propositional(inner.arg):
            return Buchi(state_formula(inner.arg))
    if isinstance(phi, Eventually):
        inner = phi.arg
        if is_propositional(inner):
            return Reach(state_formula(inner))
        if isinstance(inner, Globally) and is_propositional(inner.arg):
            return CoBuchi(state_formula(inner.arg))
    return General(phi)


def atoms(phi: Ltl) -> list[Atom]:
    out: dict[str, Atom] = {}

    def go(p):
        if isinstance(p, Atom):
            out.setdefault(p.key, p)
        elif isinstance(p, (Not, Next, Eventually, Globally)):
            go(p.arg)
        else:
            go(p.left)
            go(p.right)

    go(phi)
    return list(out.values())


# ---------------------------------------------------------------------------
# Lasso semantics


def holds_on_lasso(
    phi: Ltl,
    prefix: Sequence[Mapping[str, object]],
    loop: Sequence[Mapping[str, object]],
) -> bool:
    """Does the word ``prefix . loop^omega`` satisfy ``phi`` at position 0?

    States are mappings from variable names to numbers.  Evaluation runs over
    the finitely many lasso positions; until and release are computed as least
    and greatest fixpoints along the successor map.
    """
    if not loop:
        raise ValueError("loop must be non-empty")
    word = list(prefix) + list(loop)
    n = len(word)
    nxt = [i + 1 for i in range(n - 1)] + [len(prefix)]
    memo: dict[int, list[bool]] = {}
    compiled: dict[str, object] = {}

    def atom_vals(a: Atom) -> list[bool]:
        fn = compiled.get(a.key)
        if fn is None:
            fn = compiled[a.key] = compile_formula(a.formula)
        return [bool(fn(s)) for s in word]

    def ev(p: Ltl) -> list[bool]:
        key = id(p)
        if key in memo:
            return memo[key]
        if isinstance(p, Atom):
            r = atom_vals(p)
        elif isinstance(p, Not):
            r = [not v for v in ev(p.arg)]
        elif isinstance(p, And):
            a, b = ev(p.left), ev(p.right)
            r = [x and y for x, y in zip(a, b)]
        elif isinstance(p, Or):
            a, b = ev(p.left), ev(p.right)
            r = [x or y for x, y in zip(a, b)]
        elif isinstance(p, Implies):
            a, b = ev(p.left), ev(p.right)
            r = [(not x) or y for x, y in zip(a, b)]
        elif isinstance(p, Next):
            a = ev(p.arg)
            r = [a[nxt[i]] for i in range(n)]
        elif isinstance(p, (Until, Eventually)):
            a = [True] * n if isinstance(p, Eventually) else ev(p.left)
            b = ev(p.arg if isinstance(p, Eventually) else p.right)
            r = [False] * n
            changed = True
            while changed:
                changed = False
                for i in reversed(range(n)):
                    v = b[i] or (a[i] and r[nxt[i]])
                    if v != r[i]:
                        r[i] = v
                        changed = True
        elif isinstance(p, (Release, Globally)):
            a = [False] * n if isinstance(p, Globally) else ev(p.left)
            b = ev(p.arg if isinstance(p, Globally) else p.right)
            r = [True] * n
            changed = True
            while changed:
                changed = False
                for i in reversed(range(n)):
                    v = b[i] and (a[i] or r[nxt[i]])
                    if v != r[i]:
                        r[i] = v
                        changed = True
        else:
            raise TypeError(p)
        memo[key] = r
        return r

    return ev(phi)[0]

