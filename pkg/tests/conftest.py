from __future__ import annotations

from fractions import Fraction
from pathlib import Path

import pytest

from logicgames.automata import load_automaton
from logicgames.game import load_game
from logicgames.logic import Sort, VarDecl, Vocabulary

CORPUS = Path(__file__).resolve().parents[1] / "src" / "logicgames" / "corpus"


def corpus_game(name: str, check: bool = False):
    return load_game(CORPUS / f"{name}.game.json", check=check)


def corpus_automaton(name: str, vocab):
    return load_automaton(CORPUS / f"{name}.aut.json", vocab)


def int_vocab(*names: str, lo=None, hi=None) -> Vocabulary:
    f = (lambda v: None if v is None else Fraction(v))
    return Vocabulary([VarDecl(n, Sort.INT, lo=f(lo), hi=f(hi)) for n in names])


def real_vocab(*names: str) -> Vocabulary:
    return Vocabulary([VarDecl(n, Sort.REAL) for n in names])


@pytest.fixture
def xy_int():
    return int_vocab("x", "y")


@pytest.fixture
def xy_real():
    return real_vocab("x", "y")


# -- lasso words ---------------------------------------------------------------


def _constants(f, out: set) -> None:
    import z3

    if z3.is_int_value(f):
        out.add(Fraction(f.as_long()))
    elif z3.is_rational_value(f):
        out.add(Fraction(f.numerator_as_long(), f.denominator_as_long()))
    for c in f.children():
        _constants(c, out)


def value_grid(vocab, phi) -> dict[str, list]:
    """Per variable a small finite grid around the constants mentioned in ``phi``."""
    from logicgames.ltl import atoms

    consts: set = set()
    for a in atoms(phi):
        _constants(a.formula, consts)
    consts |= {Fraction(0)}
    grid = {}
    for d in vocab:
        if d.sort is Sort.INT:
            lo = int(d.lo) if d.lo is not None else int(min(consts)) - 1
            hi = int(d.hi) if d.hi is not None else int(max(consts)) + 1
            grid[d.name] = list(range(lo, hi + 1))
        else:
            vals = set()
            for c in consts:
                vals |= {c - 1, c - Fraction(1, 10), c, c + Fraction(1, 10), c + 1}
            vals = {v for v in vals if (d.lo is None or v >= d.lo) and (d.hi is None or v <= d.hi)}
            grid[d.name] = sorted(vals)
    return grid


def random_lasso(rng, grid: dict[str, list], max_len: int = 4):
    def state():
        return {n: rng.choice(vals) for n, vals in grid.items()}

    prefix = [state() for _ in range(rng.randint(0, max_len))]
    loop = [state() for _ in range(rng.randint(1, max_len))]
    return prefix, loop


# -- acceptance report ---------------------------------------------------------

ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
