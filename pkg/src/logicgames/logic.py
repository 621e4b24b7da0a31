"""Quantified linear-arithmetic formulas over a typed vocabulary.

Formulas are plain z3 Boolean expressions.  A :class:`Vocabulary` owns the
declared state variables and hands out the z3 constants for the three tiers
``x`` (current), ``x'`` (after the controller) and ``x''`` (after the
environment).  Everything else in the package goes through the operations in
this module: parsing, quantifier elimination, satisfiability, renaming and
concrete evaluation.
"""
from __future__ import annotations

import math
from collections import OrderedDict
import re
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import z3

Formula = z3.BoolRef
Valuation = Mapping[str, Fraction]

TIER_SUFFIX = ("", "'", "''")
RESERVED = frozenset({"true", "false", "G", "F", "X", "U", "R"})
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class LogicError(Exception):
    pass


class ParseError(LogicError):
    def __init__(self, message: str, pos: int | None = None, text: str | None = None):
        self.pos = pos
        self.text = text
        where = f" at offset {pos}" if pos is not None else ""
        super().__init__(f"{message}{where}")


class UndeclaredVariableError(ParseError):
    pass


class NonlinearError(ParseError):
    pass


class RenameError(LogicError):
    pass


class BackendUnknown(LogicError):
    """The SMT backend answered unknown or gave up within its budget."""

    def __init__(self, message: str, formula: Formula | None = None):
        self.formula = formula
        super().__init__(message)


class Sort(str, Enum):
    INT = "Int"
    REAL = "Real"


class Role(str, Enum):
    STATE = "state"
    AUTOMATON = "automaton"


@dataclass(frozen=True)
class VarDecl:
    name: str
    sort: Sort = Sort.INT
    role: Role = Role.STATE
    lo: Fraction | None = None
    hi: Fraction | None = None

    def __post_init__(self):
        if not _IDENT.match(self.name) or self.name in RESERVED:
            raise LogicError(f"invalid variable name {self.name!r}")
        if self.lo is not None and self.hi is not None and self.lo > self.hi:
            raise LogicError(f"empty domain for {self.name}")


class Vocabulary:
    """Declared state variables plus their primed and double-primed copies."""

    def __init__(self, decls: Iterable[VarDecl]):
        self.decls: tuple[VarDecl, ...] = tuple(decls)
        names = [d.name for d in self.decls]
        if len(set(names)) != len(names):
            raise LogicError(f"duplicate variable in {names}")
        self._by_name = {d.name: d for d in self.decls}
        self._index = {d.name: i for i, d in enumerate(self.decls)}
        self._consts: dict[tuple[str, int], z3.ArithRef] = {}
        self._lookup: dict[str, tuple[str, int]] = {}
        for d in self.decls:
            for tier, suf in enumerate(TIER_SUFFIX):
                mk = z3.Int if d.sort is Sort.INT else z3.Real
                c = mk(d.name + suf)
                self._consts[(d.name, tier)] = c
                self._lookup[d.name + suf] = (d.name, tier)

    def __iter__(self):
        return iter(self.decls)

    def __len__(self):
        return len(self.decls)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.decls == other.decls

    def __hash__(self):
        return hash(self.decls)

    def __repr__(self):
        return f"Vocabulary({[d.name for d in self.decls]})"

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.decls]

    def decl(self, name: str) -> VarDecl:
        return self._by_name[name]

    def index(self, name: str) -> int:
        return self._index[name]

    def var(self, name: str, tier: int = 0) -> z3.ArithRef:
        try:
            return self._consts[(name, tier)]
        except KeyError:
            raise UndeclaredVariableError(f"undeclared variable {name + TIER_SUFFIX[tier]!r}") from None

    def vars(self, tier: int = 0) -> list[z3.ArithRef]:
        return [self._consts[(d.name, tier)] for d in self.decls]

    def resolve(self, const_name: str) -> tuple[str, int]:
        """Map a z3 constant name such as ``x'`` back to ``("x", 1)``."""
        return self._lookup[const_name]

    def is_int(self) -> bool:
        return all(d.sort is Sort.INT for d in self.decls)

    def bounded(self) -> bool:
        return all(d.lo is not None and d.hi is not None for d in self.decls)

    def domain(self, tier: int = 0) -> Formula:
        parts = []
        for d in self.decls:
            v = self.var(d.name, tier)
            if d.lo is not None:
                parts.append(v >= _num(d.lo, d.sort))
            if d.hi is not None:
                parts.append(v <= _num(d.hi, d.sort))
        return _conj(parts)

    def extend(self, *decls: VarDecl) -> Vocabulary:
        return Vocabulary(self.decls + tuple(decls))


def _num(value: Fraction | int, sort: Sort = Sort.REAL) -> z3.ArithRef:
    value = Fraction(value)
    if sort is Sort.INT and value.denominator == 1:
        return z3.IntVal(value.numerator)
    if value.denominator == 1:
        return z3.RealVal(value.numerator)
    return z3.RealVal(f"{value.numerator}/{value.denominator}")


def _conj(parts: Sequence[Formula]) -> Formula:
    if not parts:
        return z3.BoolVal(True)
    return parts[0] if len(parts) == 1 else z3.And(*parts)


def _disj(parts: Sequence[Formula]) -> Formula:
    if not parts:
        return z3.BoolVal(False)
    return parts[0] if len(parts) == 1 else z3.Or(*parts)


def conj(parts: Iterable[Formula]) -> Formula:
    return _conj([p for p in parts if not z3.is_true(p)])


def disj(parts: Iterable[Formula]) -> Formula:
    return _disj([p for p in parts if not z3.is_false(p)])


TRUE = z3.BoolVal(True)
FALSE = z3.BoolVal(False)


# ---------------------------------------------------------------------------
# Lexing and parsing

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>\d+\.\d+\(\d+\)|\d+/\d+|\d+\.\d*|\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*'{0,2})
  | (?P<op><->|->|\|\||&&|<=|>=|==|!=|[!<>=+\-*()])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            out.append(Token(kind, m.group(), pos))
        pos = m.end()
    out.append(Token("eof", "", len(text)))
    return out


def parse_rational(text: str) -> Fraction:
    """Parse ``3``, ``1.4``, ``3/2`` or ``1.9(20)`` (trailing digits repeated forever)."""
    m = re.fullmatch(r"(\d+)\.(\d*)\((\d+)\)", text)
    if m:
        whole, fixed, rep = m.groups()
        base = Fraction(int(whole + fixed), 10 ** len(fixed))
        tail = Fraction(int(rep), (10 ** len(rep) - 1) * 10 ** len(fixed))
        return base + tail
    if "/" in text:
        p, q = text.split("/")
        if int(q) == 0:
            raise ParseError(f"zero denominator in {text!r}")
        return Fraction(int(p), int(q))
    return Fraction(text)


class Node:
    """Untyped syntax tree shared by the constraint and LTL parsers."""

    __slots__ = ("op", "args", "pos")

    def __init__(self, op: str, args: tuple, pos: int):
        self.op = op
        self.args = args
        self.pos = pos

    def __repr__(self):
        return f"Node({self.op!r}, {self.args!r})"


_COMPARE = {"<", "<=", "==", "=", "!=", ">=", ">"}
_INFIX = {
    "<->": (1, 1, False),
    "->": (1, 1, True),
    "||": (2, 2, False),
    "&&": (3, 3, False),
    "U": (4, 4, True),
    "<": (6, 6, None),
    "<=": (6, 6, None),
    "==": (6, 6, None),
    "=": (6, 6, None),
    "!=": (6, 6, None),
    ">=": (6, 6, None),
    ">": (6, 6, None),
    "+": (7, 7, False),
    "-": (7, 7, False),
    "*": (8, 8, False),
}
_PREFIX_BP = {"!": 5, "G": 5, "F": 5, "X": 5, "-": 9}


class Parser:
    def __init__(self, text: str, temporal: bool):
        self.text = text
        self.toks = tokenize(text)
        self.i = 0
        self.temporal = temporal

    def peek(self) -> Token:
        return self.toks[self.i]

    def take(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def parse(self) -> Node:
        node = self.expr(0)
        t = self.peek()
        if t.kind != "eof":
            raise ParseError(f"unexpected token {t.text!r}", t.pos, self.text)
        return node

    def _infix_op(self, t: Token) -> str | None:
        if t.kind == "op" and t.text in _INFIX:
            return t.text
        if self.temporal and t.kind == "ident" and t.text == "U":
            return "U"
        return None

    def expr(self, min_bp: int) -> Node:
        left = self.prefix()
        while True:
            t = self.peek()
            op = self._infix_op(t)
            if op is None:
                break
            lbp, _, right_assoc = _INFIX[op]
            if lbp < min_bp:
                break
            self.take()
            if right_assoc is None:  # comparisons do not chain
                right = self.expr(lbp + 1)
                nxt = self._infix_op(self.peek())
                if nxt in _COMPARE:
                    raise ParseError("chained comparison", self.peek().pos, self.text)
            elif right_assoc:
                right = self.expr(lbp)
            else:
                right = self.expr(lbp + 1)
            left = Node(op, (left, right), t.pos)
        return left

    def prefix(self) -> Node:
        t = self.take()
        if t.kind == "num":
            return Node("num", (parse_rational(t.text),), t.pos)
        if t.kind == "ident":
            if t.text in ("true", "false"):
                return Node("bool", (t.text == "true",), t.pos)
            if self.temporal and t.text in ("G", "F", "X"):
                return Node(t.text, (self.expr(_PREFIX_BP[t.text]),), t.pos)
            if t.text in RESERVED:
                raise ParseError(f"reserved word {t.text!r}", t.pos, self.text)
            return Node("var", (t.text,), t.pos)
        if t.kind == "op":
            if t.text == "(":
                inner = self.expr(0)
                close = self.take()
                if close.text != ")":
                    raise ParseError("expected ')'", close.pos, self.text)
                return inner
            if t.text in ("!", "-"):
                return Node("neg" if t.text == "-" else "!", (self.expr(_PREFIX_BP[t.text]),), t.pos)
        raise ParseError(f"unexpected token {t.text or 'end of input'!r}", t.pos, self.text)


class Lin:
    """Linear expression: rational coefficients per (name, tier) plus a constant."""

    __slots__ = ("coeffs", "const")

    def __init__(self, coeffs: dict[tuple[str, int], Fraction] | None = None, const: Fraction = Fraction(0)):
        self.coeffs = {k: v for k, v in (coeffs or {}).items() if v != 0}
        self.const = Fraction(const)

    def __add__(self, other: Lin) -> Lin:
        c = dict(self.coeffs)
        for k, v in other.coeffs.items():
            c[k] = c.get(k, 0) + v
        return Lin(c, self.const + other.const)

    def scale(self, f: Fraction) -> Lin:
        return Lin({k: v * f for k, v in self.coeffs.items()}, self.const * f)

    def __sub__(self, other: Lin) -> Lin:
        return self + other.scale(Fraction(-1))

    def is_const(self) -> bool:
        return not self.coeffs


def _split_name(name: str) -> tuple[str, int]:
    base = name.rstrip("'")
    return base, len(name) - len(base)


def node_to_lin(node: Node, vocab: Vocabulary, text: str, max_tier: int = 2) -> Lin:
    op = node.op
    if op == "num":
        return Lin(const=node.args[0])
    if op == "var":
        base, tier = _split_name(node.args[0])
        if base not in vocab:
            raise UndeclaredVariableError(f"undeclared variable {node.args[0]!r}", node.pos, text)
        if tier > max_tier:
            raise ParseError(f"variable {node.args[0]!r} not allowed here", node.pos, text)
        return Lin({(base, tier): Fraction(1)})
    if op == "neg":
        return node_to_lin(node.args[0], vocab, text, max_tier).scale(Fraction(-1))
    if op in ("+", "-"):
        a = node_to_lin(node.args[0], vocab, text, max_tier)
        b = node_to_lin(node.args[1], vocab, text, max_tier)
        return a + b if op == "+" else a - b
    if op == "*":
        a = node_to_lin(node.args[0], vocab, text, max_tier)
        b = node_to_lin(node.args[1], vocab, text, max_tier)
        if a.is_const():
            return b.scale(a.const)
        if b.is_const():
            return a.scale(b.const)
        raise NonlinearError("product of two variables", node.pos, text)
    raise ParseError(f"expected an arithmetic term, found {op!r}", node.pos, text)


_Z3_CMP = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    "==": lambda a, b: a == b,
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    ">=": lambda a, b: a >= b,
    ">": lambda a, b: a > b,
}
_PY_CMP = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    ">=": lambda a, b: a >= b,
    ">": lambda a, b: a > b,
}


def make_atom(lhs: Lin, op: str, rhs: Lin, vocab: Vocabulary) -> Formula:
    """Build the canonical z3 atom for ``lhs op rhs``.

    Variables go left in declaration order with integer coefficients, the
    constant goes right.  The construction is idempotent under printing and
    reparsing, which the LTL layer relies on for atom identity.
    """
    op = "==" if op == "=" else op
    d = lhs - rhs
    if d.is_const():
        return z3.BoolVal(_PY_CMP[op](d.const, 0))
    scale = 1
    for v in list(d.coeffs.values()) + [d.const]:
        scale = scale * v.denominator // math.gcd(scale, v.denominator)
    d = d.scale(Fraction(scale))
    keys = sorted(d.coeffs, key=lambda k: (vocab.index(k[0]), k[1]))
    all_int = all(vocab.decl(k[0]).sort is Sort.INT for k in keys)
    terms = []
    for k in keys:
        c = int(d.coeffs[k])
        v = vocab.var(*k)
        if not all_int and vocab.decl(k[0]).sort is Sort.INT:
            v = z3.ToReal(v)
        if c == 1:
            terms.append(v)
        else:
            terms.append((z3.IntVal(c) if all_int else z3.RealVal(c)) * v)
    left = terms[0] if len(terms) == 1 else z3.Sum(*terms)
    # a plain int on the right keeps z3 from using the reflected operator
    return _Z3_CMP[op](left, int(-d.const))


def node_to_formula(node: Node, vocab: Vocabulary, text: str, max_tier: int = 2) -> Formula:
    op = node.op
    if op == "bool":
        return z3.BoolVal(node.args[0])
    if op in _COMPARE:
        a = node_to_lin(node.args[0], vocab, text, max_tier)
        b = node_to_lin(node.args[1], vocab, text, max_tier)
        return make_atom(a, op, b, vocab)
    if op == "!":
        return z3.Not(node_to_formula(node.args[0], vocab, text, max_tier))
    if op in ("&&", "||", "->", "<->"):
        a = node_to_formula(node.args[0], vocab, text, max_tier)
        b = node_to_formula(node.args[1], vocab, text, max_tier)
        if op == "&&":
            return z3.And(a, b)
        if op == "||":
            return z3.Or(a, b)
        if op == "->":
            return z3.Implies(a, b)
        return a == b
    if op in ("G", "F", "X", "U"):
        raise ParseError(f"temporal operator {op!r} in a constraint", node.pos, text)
    raise ParseError(f"expected a Boolean formula, found {op!r}", node.pos, text)


def parse_constraint(text: str, vocab: Vocabulary, max_tier: int = 2) -> Formula:
    """Parse a quantifier-free linear constraint over ``vocab`` (primes allowed)."""
    node = Parser(text, temporal=False).parse()
    return node_to_formula(node, vocab, text, max_tier)


# ---------------------------------------------------------------------------
# Printing


def _num_text(e: z3.ExprRef) -> str:
    if z3.is_int_value(e):
        return str(e.as_long())
    f = Fraction(e.numerator_as_long(), e.denominator_as_long())
    return str(f.numerator) if f.denominator == 1 else f"{f.numerator}/{f.denominator}"


class Unprintable(LogicError):
    pass


def _term_text(e: z3.ExprRef) -> str:
    if z3.is_int_value(e) or z3.is_rational_value(e):
        return _num_text(e)
    if z3.is_const(e) and e.decl().kind() == z3.Z3_OP_UNINTERPRETED:
        return e.decl().name()
    k = e.decl().kind()
    if k == z3.Z3_OP_TO_REAL:
        return _term_text(e.arg(0))
    if k == z3.Z3_OP_ADD:
        return " + ".join(_term_text(c) for c in e.children())
    if k == z3.Z3_OP_SUB:
        first, *rest = e.children()
        return " - ".join([_term_text(first)] + [_paren_term(c) for c in rest])
    if k == z3.Z3_OP_UMINUS:
        return f"-{_paren_term(e.arg(0))}"
    if k == z3.Z3_OP_MUL:
        return "*".join(_paren_term(c) for c in e.children())
    raise Unprintable(f"no surface syntax for {e.sexpr()}")


def _paren_term(e: z3.ExprRef) -> str:
    s = _term_text(e)
    k = e.decl().kind() if z3.is_app(e) else None
    if k in (z3.Z3_OP_ADD, z3.Z3_OP_SUB):
        return f"({s})"
    return s


_CMP_TEXT = {
    z3.Z3_OP_LE: "<=",
    z3.Z3_OP_LT: "<",
    z3.Z3_OP_GE: ">=",
    z3.Z3_OP_GT: ">",
    z3.Z3_OP_EQ: "==",
    z3.Z3_OP_DISTINCT: "!=",
}


def formula_to_text(f: Formula) -> str:
    """Render in the surface grammar; raises :class:`Unprintable` otherwise."""
    return _ftext(f, 0)


def _ftext(e: z3.ExprRef, ctx: int) -> str:
    if z3.is_true(e):
        return "true"
    if z3.is_false(e):
        return "false"
    k = e.decl().kind()
    if k in _CMP_TEXT and e.num_args() == 2 and z3.is_arith(e.arg(0)):
        return f"{_term_text(e.arg(0))} {_CMP_TEXT[k]} {_term_text(e.arg(1))}"
    if k == z3.Z3_OP_NOT:
        return f"!{_ftext(e.arg(0), 9)}"
    if k in (z3.Z3_OP_AND, z3.Z3_OP_OR):
        prec = 3 if k == z3.Z3_OP_AND else 2
        sep = " && " if k == z3.Z3_OP_AND else " || "
        s = sep.join(_ftext(c, prec + 1) for c in e.children())
        return f"({s})" if ctx > prec else s
    if k == z3.Z3_OP_IMPLIES:
        s = f"{_ftext(e.arg(0), 2)} -> {_ftext(e.arg(1), 1)}"
        return f"({s})" if ctx > 1 else s
    if k == z3.Z3_OP_EQ and z3.is_bool(e.arg(0)):
        s = f"{_ftext(e.arg(0), 2)} <-> {_ftext(e.arg(1), 2)}"
        return f"({s})" if ctx > 1 else s
    raise Unprintable(f"no surface syntax for {e.sexpr()}")


def formula_to_smtlib(f: Formula, vocab: Vocabulary, tiers: Iterable[int] = (0,)) -> str:
    lines = []
    for d in vocab:
        for t in tiers:
            c = vocab.var(d.name, t)
            lines.append(f"(declare-fun {c.sexpr()} () {d.sort.value})")
    lines.append(f"(assert {f.sexpr()})")
    return "\n".join(lines) + "\n"


def formula_from_smtlib(text: str, vocab: Vocabulary) -> Formula:
    decls = {}
    for d in vocab:
        for t in range(3):
            c = vocab.var(d.name, t)
            decls[c.decl().name()] = c.decl()
    body = re.sub(r"\(declare-fun [^\n]*\)\n?", "", text)
    parsed = z3.parse_smt2_string(body, decls=decls)
    return _conj(list(parsed))


def formula_dump(f: Formula) -> str:
    """Surface text when possible, otherwise an ``smt2:`` prefixed s-expression."""
    try:
        return formula_to_text(f)
    except Unprintable:
        return "smt2:" + f.sexpr()


def formula_load(text: str, vocab: Vocabulary) -> Formula:
    if text.startswith("smt2:"):
        return formula_from_smtlib(f"(assert {text[5:]})", vocab)
    return parse_constraint(text, vocab)


# ---------------------------------------------------------------------------
# Structure


class _AstMemo:
    """Small LRU keyed by AST id; entries keep the expression alive so ids stay unique."""

    def __init__(self, size: int = 4096):
        self.size = size
        self.data: OrderedDict[int, tuple[z3.ExprRef, object]] = OrderedDict()

    def get(self, f: z3.ExprRef, compute: Callable[[z3.ExprRef], object]):
        key = f.get_id()
        hit = self.data.get(key)
        if hit is not None and hit[0].eq(f):
            self.data.move_to_end(key)
            return hit[1]
        val = compute(f)
        self.data[key] = (f, val)
        if len(self.data) > self.size:
            self.data.popitem(last=False)
        return val


_QUANT_MEMO = _AstMemo()
_CONST_MEMO = _AstMemo()


def has_quantifier(f: z3.ExprRef) -> bool:
    return _QUANT_MEMO.get(f, _has_quantifier)


def _has_quantifier(f: z3.ExprRef) -> bool:
    seen = set()
    stack = [f]
    while stack:
        e = stack.pop()
        if z3.is_quantifier(e):
            return True
        i = e.get_id()
        if i in seen:
            continue
        seen.add(i)
        stack.extend(e.children())
    return False


def free_constants(f: z3.ExprRef) -> set[str]:
    return set(free_constant_map(f))


def free_constant_map(f: z3.ExprRef) -> dict[str, z3.ExprRef]:
    return dict(_CONST_MEMO.get(f, _free_constant_map))


def _free_constant_map(f: z3.ExprRef) -> dict[str, z3.ExprRef]:
    out: dict[str, z3.ExprRef] = {}
    seen = set()
    stack = [f]
    while stack:
        e = stack.pop()
        i = e.get_id()
        if i in seen:
            continue
        seen.add(i)
        if z3.is_quantifier(e):
            stack.append(e.body())
            continue
        if z3.is_const(e) and e.decl().kind() == z3.Z3_OP_UNINTERPRETED:
            out[e.decl().name()] = e
        elif z3.is_app(e):
            stack.extend(e.children())
    return out


def formula_size(f: z3.ExprRef) -> int:
    """Number of distinct AST nodes (shared subterms counted once)."""
    seen = set()
    stack = [f]
    while stack:
        e = stack.pop()
        i = e.get_id()
        if i in seen:
            continue
        seen.add(i)
        if z3.is_quantifier(e):
            stack.append(e.body())
        elif z3.is_app(e):
            stack.extend(e.children())
    return len(seen)


def top_disjuncts(f: Formula) -> list[Formula]:
    if z3.is_or(f):
        out = []
        for c in f.children():
            out.extend(top_disjuncts(c))
        return out
    return [f]


def top_conjuncts(f: Formula) -> list[Formula]:
    if z3.is_and(f):
        out = []
        for c in f.children():
            out.extend(top_conjuncts(c))
        return out
    return [f]


# ---------------------------------------------------------------------------
# Renaming

class Shift(str, Enum):
    PRIME = "prime"
    UNPRIME = "unprime"
    TO_DOUBLEPRIME = "to_doubleprime"


def shift(f: Formula, vocab: Vocabulary, by: int) -> Formula:
    """Move every variable ``by`` tiers up (or down when negative), simultaneously."""
    if by == 0:
        return f
    pairs = []
    for name in free_constants(f):
        if name not in vocab._lookup:
            continue
        base, tier = vocab.resolve(name)
        target = tier + by
        if not 0 <= target <= 2:
            raise RenameError(f"cannot shift {name!r} by {by}")
        pairs.append((vocab.var(base, tier), vocab.var(base, target)))
    return z3.substitute(f, *pairs) if pairs else f


def rename(f: Formula, how: Shift | str, vocab: Vocabulary) -> Formula:
    how = Shift(how)
    tiers = {vocab.resolve(n)[1] for n in free_constants(f) if n in vocab._lookup}
    if how is Shift.PRIME:
        if tiers - {0}:
            raise RenameError("prime expects a formula over unprimed variables only")
        return shift(f, vocab, 1)
    if how is Shift.UNPRIME:
        if 0 in tiers and 1 in tiers:
            raise RenameError("unprime would identify x and x'")
        if 2 in tiers:
            raise RenameError("unprime does not apply to double-primed variables")
        return shift(f, vocab, -1) if 1 in tiers else f
    return shift(f, vocab, 1)


def substitute_values(f: Formula, vocab: Vocabulary, values: Mapping[str, Fraction | int], tier: int = 0) -> Formula:
    pairs = []
    for name, val in values.items():
        d = vocab.decl(name)
        pairs.append((vocab.var(name, tier), _num(Fraction(val), d.sort)))
    return z3.substitute(f, *pairs) if pairs else f


# ---------------------------------------------------------------------------
# Backend: quantifier elimination, simplification, satisfiability

class Sat:
    """A satisfiable answer; the model is read out of z3 on first access."""

    def __init__(self, model: dict[str, Fraction] | Callable[[], dict[str, Fraction]]):
        self._model = model

    @property
    def model(self) -> dict[str, Fraction]:
        if callable(self._model):
            self._model = self._model()
        return self._model

    def __bool__(self):
        return True

    def __repr__(self):
        return f"Sat({self.model})"


class Unsat:
    def __bool__(self):
        return False

    def __repr__(self):
        return "Unsat()"


def _model_value(v: z3.ExprRef) -> Fraction:
    if z3.is_int_value(v):
        return Fraction(v.as_long())
    if z3.is_rational_value(v):
        return Fraction(v.numerator_as_long(), v.denominator_as_long())
    if z3.is_algebraic_value(v):
        raise BackendUnknown("irrational model value")
    raise BackendUnknown(f"unexpected model value {v}")


class Backend:
    """z3-backed implementation of the logical operations.

    ``tactics`` is tried in order for quantifier elimination; the first one that
    returns a quantifier-free goal wins.  With ``race=True`` they run in
    parallel and the first to finish wins.  ``qe_budget_ms`` bounds each
    individual tactic so a stuck one falls through to the next; ``timeout_ms``
    bounds every backend call as a whole.
    """

    def __init__(
        self,
        tactics: Sequence[str] = ("qe2", "qe_rec", "qe"),
        timeout_ms: int | None = None,
        simplify_ms: int = 2000,
        race: bool = False,
        qe_budget_ms: int = 20000,
    ):
        self.tactics = tuple(tactics)
        self.timeout_ms = timeout_ms
        self.qe_budget_ms = qe_budget_ms
        self.simplify_ms = simplify_ms
        self.race = race
        self.stats = {"qelim": 0, "check": 0}
        self._simp = z3.Then(
            z3.Tactic("simplify"),
            z3.Tactic("propagate-ineqs"),
            z3.TryFor(z3.Tactic("ctx-solver-simplify"), simplify_ms),
            z3.Tactic("simplify"),
            z3.Tactic("ctx-simplify"),
            z3.Tactic("simplify"),
        )

    def _timed(self, t: z3.Tactic, last: bool) -> z3.Tactic:
        budget = [b for b in (self.timeout_ms, None if last else self.qe_budget_ms) if b]
        return z3.TryFor(t, min(budget)) if budget else t

    def _qe_tactics(self) -> list[tuple[str, z3.Tactic]]:
        if self.race:
            return [("race", self._timed(z3.ParOr(*[z3.Tactic(t) for t in self.tactics]), True))]
        n = len(self.tactics)
        return [(t, self._timed(z3.Tactic(t), i == n - 1)) for i, t in enumerate(self.tactics)]

    def qelim(self, f: Formula) -> Formula:
        self.stats["qelim"] += 1
        if not has_quantifier(f):
            return self.simplify(f)
        errors = []
        for name, t in self._qe_tactics():
            try:
                g = _goal_expr(t(f))
            except z3.Z3Exception as e:
                errors.append(f"{name}: {e}")
                continue
            if has_quantifier(g):
                errors.append(f"{name}: residual quantifier")
                continue
            return self.simplify(g)
        raise BackendUnknown("quantifier elimination failed: " + "; ".join(errors), f)

    def simplify(self, f: Formula) -> Formula:
        try:
            g = _goal_expr(self._simp(f))
        except z3.Z3Exception:
            g = z3.simplify(f)
        return g

    def check(self, f: Formula) -> Sat | Unsat:
        self.stats["check"] += 1
        if has_quantifier(f):
            f = self.qelim(f)
        s = z3.Solver()
        if self.timeout_ms:
            s.set("timeout", self.timeout_ms)
        s.add(f)
        r = s.check()
        if r == z3.unsat:
            return Unsat()
        if r == z3.unknown:
            raise BackendUnknown(f"solver returned unknown ({s.reason_unknown()})", f)
        m = s.model()
        return Sat(lambda: {
            name: _model_value(m.eval(c, model_completion=True))
            for name, c in free_constant_map(f).items()
        })

    def entails(self, f: Formula, g: Formula) -> bool:
        return not self.check(z3.And(f, z3.Not(g)))

    def equivalent(self, f: Formula, g: Formula) -> bool:
        return self.entails(f, g) and self.entails(g, f)


def _goal_expr(r: z3.ApplyResult) -> Formula:
    goals = [g.as_expr() for g in r]
    return _disj(goals)


_default = Backend()


def default_backend() -> Backend:
    return _default


def set_default_backend(b: Backend) -> Backend:
    global _default
    prev, _default = _default, b
    return prev


def qelim(f: Formula) -> Formula:
    return _default.qelim(f)


def simplify(f: Formula) -> Formula:
    return _default.simplify(f)


def check(f: Formula) -> Sat | Unsat:
    return _default.check(f)


def entails(f: Formula, g: Formula) -> bool:
    return _default.entails(f, g)


def equivalent(f: Formula, g: Formula) -> bool:
    return _default.equivalent(f, g)


def is_sat(f: Formula) -> bool:
    return bool(_default.check(f))


# ---------------------------------------------------------------------------
# Concrete evaluation, independent of the SMT solver


def _fraction_of(e: z3.ExprRef) -> Fraction:
    if z3.is_int_value(e):
        return Fraction(e.as_long())
    return Fraction(e.numerator_as_long(), e.denominator_as_long())


def _int_div(a, b):
    # SMT-LIB semantics: a = b*q + r with 0 <= r < |b|
    m = a % abs(b)
    return (a - m) // b


def _int_mod(a, b):
    return a % abs(b)


_KIND_OPS: dict[int, Callable] = {}


def compile_formula(f: z3.ExprRef) -> Callable[[Mapping[str, object]], object]:
    """Compile a quantifier-free formula or term to a Python closure.

    The closure takes a mapping from constant names (``x``, ``x'``, ...) to
    numbers and works equally on ints, Fractions and numpy arrays.
    """
    cache: dict[int, Callable] = {}

    def go(e: z3.ExprRef) -> Callable:
        i = e.get_id()
        if i in cache:
            return cache[i]
        fn = build(e)
        cache[i] = fn
        return fn

    def build(e: z3.ExprRef) -> Callable:
        if z3.is_quantifier(e):
            raise LogicError("cannot evaluate a quantified formula")
        if z3.is_true(e):
            return lambda s: True
        if z3.is_false(e):
            return lambda s: False
        if z3.is_int_value(e) or z3.is_rational_value(e):
            v = _fraction_of(e)
            v = v.numerator if v.denominator == 1 else v
            return lambda s: v
        k = e.decl().kind()
        if k == z3.Z3_OP_UNINTERPRETED and e.num_args() == 0:
            name = e.decl().name()
            return lambda s: s[name]
        args = [go(c) for c in e.children()]
        if k == z3.Z3_OP_AND:
            return lambda s: _all(a(s) for a in args)
        if k == z3.Z3_OP_OR:
            return lambda s: _any(a(s) for a in args)
        if k == z3.Z3_OP_NOT:
            a = args[0]
            return lambda s: _not(a(s))
        if k == z3.Z3_OP_IMPLIES:
            a, b = args
            return lambda s: _any([_not(a(s)), b(s)])
        if k == z3.Z3_OP_XOR:
            a, b = args
            return lambda s: a(s) != b(s)
        if k == z3.Z3_OP_ITE:
            c, a, b = args
            return lambda s: _ite(c(s), a(s), b(s))
        if k == z3.Z3_OP_EQ:
            a, b = args
            return lambda s: a(s) == b(s)
        if k == z3.Z3_OP_DISTINCT:
            if len(args) == 2:
                a, b = args
                return lambda s: a(s) != b(s)
            return lambda s: _all(x(s) != y(s) for n, x in enumerate(args) for y in args[n + 1:])
        if k in (z3.Z3_OP_LE, z3.Z3_OP_LT, z3.Z3_OP_GE, z3.Z3_OP_GT):
            a, b = args
            op = {z3.Z3_OP_LE: "<=", z3.Z3_OP_LT: "<", z3.Z3_OP_GE: ">=", z3.Z3_OP_GT: ">"}[k]
            cmp = _PY_CMP[op]
            return lambda s: cmp(a(s), b(s))
        if k == z3.Z3_OP_ADD:
            return lambda s: _sum(a(s) for a in args)
        if k == z3.Z3_OP_SUB:
            first, *rest = args
            return lambda s: first(s) - _sum(a(s) for a in rest)
        if k == z3.Z3_OP_UMINUS:
            a = args[0]
            return lambda s: -a(s)
        if k == z3.Z3_OP_MUL:
            def mul(s, args=args):
                out = args[0](s)
                for a in args[1:]:
                    out = out * a(s)
                return out
            return mul
        if k == z3.Z3_OP_TO_REAL:
            return args[0]
        if k == z3.Z3_OP_IDIV:
            a, b = args
            return lambda s: _int_div(a(s), b(s))
        if k == z3.Z3_OP_MOD:
            a, b = args
            return lambda s: _int_mod(a(s), b(s))
        if k == z3.Z3_OP_IS_INT:
            a = args[0]
            return lambda s: _is_int(a(s))
        raise LogicError(f"cannot evaluate operator {e.decl().name()}")

    return go(f)


def _is_int(v):
    if isinstance(v, np.ndarray):
        return np.vectorize(lambda t: Fraction(t).denominator == 1)(v)
    return Fraction(v).denominator == 1


def _all(it):
    out = True
    for v in it:
        if isinstance(v, np.ndarray) or isinstance(out, np.ndarray):
            out = np.logical_and(out, v)
        elif not v:
            return False
    return out


def _any(it):
    out = False
    for v in it:
        if isinstance(v, np.ndarray) or isinstance(out, np.ndarray):
            out = np.logical_or(out, v)
        elif v:
            return True
    return out


def _not(v):
    return np.logical_not(v) if isinstance(v, np.ndarray) else not v


def _ite(c, a, b):
    if isinstance(c, np.ndarray):
        return np.where(c, a, b)
    return a if c else b


def _sum(it):
    out = 0
    for v in it:
        out = out + v
    return out


def evaluate(f: Formula, valuation: Mapping[str, object]) -> bool:
    """Truth value of a quantifier-free formula under a total valuation."""
    missing = free_constants(f) - set(valuation)
    if missing:
        raise LogicError(f"valuation misses {sorted(missing)}")
    return bool(compile_formula(f)(valuation))


def evaluate_many(f: Formula, columns: Mapping[str, np.ndarray], size: int | None = None) -> np.ndarray:
    """Vectorised evaluation over arrays of values; returns a bool array."""
    out = compile_formula(f)(columns)
    if not isinstance(out, np.ndarray):
        n = size if size is not None else len(next(iter(columns.values())))
        out = np.full(n, bool(out))
    return out.astype(bool)


def state_valuation(vocab: Vocabulary, values: Mapping[str, object], tier: int = 0) -> dict[str, object]:
    """Relabel a {name: value} state as tier-``tier`` constants."""
    return {d.name + TIER_SUFFIX[tier]: values[d.name] for d in vocab}
