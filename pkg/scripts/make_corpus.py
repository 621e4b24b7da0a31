"""Regenerate the benchmark corpus under src/logicgames/corpus.

Run from the repository root:  python3 scripts/make_corpus.py
"""
from __future__ import annotations

import json
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "src" / "logicgames" / "corpus"


# wall-clock seconds reported for the most suitable engine; soft budgets only
PAPER_SECONDS = {
    "cinderella_c2": 0.4, "cinderella_c3": 0.3, "cinderella_c1_4_reach": 0.3, "cinderella_c1_4_gf": 43.0,
    "cinderella_c1_4_gen": 301.0, "cinderella_c1_9_20": 42.0, "simple3": 3.3, "simple4": 4.1, "simple5": 5.8,
    "simple8": 15.6, "simple10": 30.3, "watertank_safety": 0.3, "watertank_liveness": 2.5, "sort3": 0.7,
    "sort4": 1.5, "sort5": 7.0, "box": 0.3, "box_limited": 0.2, "diagonal": 0.2, "evasion": 0.7, "follow": 0.7,
    "solitary_box": 0.3, "square5": 0.3,
}


def write(name: str, data: dict) -> None:
    if data.get("name") in PAPER_SECONDS:
        data.setdefault("bench", {})["paper_seconds"] = PAPER_SECONDS[data["name"]]
    if "transitions" in data:
        data["transitions"] = [{"src": s, "guard": g, "dst": d} for s, g, d in data["transitions"]]
    (OUT / name).write_text(json.dumps(data, indent=2) + "\n")


def keep(names, but=()):
    return " && ".join(f"{v}' == {v}" for v in names if v not in but) or "true"


def ivar(name, lo=None, hi=None):
    d = {"name": name, "sort": "Int"}
    if lo is not None:
        d["min"] = lo
    if hi is not None:
        d["max"] = hi
    return d


def rvar(name):
    return {"name": name, "sort": "Real"}


# ---------------------------------------------------------------------------
# Automata


def dba_gf(guard: str) -> dict:
    """Deterministic Büchi automaton for G F guard: state 1 is entered on guard."""
    neg = f"!({guard})"
    return {
        "states": 2,
        "initial": [0],
        "final": [1],
        "view": "buchi",
        "transitions": [[0, guard, 1], [0, neg, 0], [1, guard, 1], [1, neg, 0]],
    }


def dba_floors(n: int, bounded: bool) -> dict:
    """Visit floors 1..n in order, forever; with ``bounded`` also G(1 <= x <= n).

    State i < n waits for floor i+1, state n is final (just saw floor n) and
    behaves like state 0.  A bounded automaton has a non-final sink n+1.
    """
    inside = f"1 <= x && x <= {n}"
    trans = []

    def g(s):
        return f"({s}) && {inside}" if bounded else s

    for i in range(n + 1):
        want = 1 if i == n else i + 1
        stay = 0 if i == n else i
        trans.append([i, g(f"x == {want}"), want])
        trans.append([i, g(f"x != {want}"), stay])
    states = n + 1
    if bounded:
        sink = n + 1
        for i in range(n + 1):
            trans.append([i, f"x < 1 || x > {n}", sink])
        trans.append([sink, "true", sink])
        states += 1
    return {"states": states, "initial": [0], "final": [n], "view": "buchi", "transitions": trans}


# ---------------------------------------------------------------------------
# Games


def floors_game():
    write("elevator_gf123.aut.json", dba_floors(3, bounded=False))
    con = ["x' == x", "x' == x + 1", "x' == x - 1"]
    write("elevator.game.json", {
        "name": "elevator",
        "description": "Elevator over the integers; visit floors 1, 2 and 3 infinitely often.",
        "variables": [ivar("x")],
        "controller": con,
        "environment": "x' == x",
        "spec": "G (F x == 1 && F x == 2 && F x == 3)",
        "automaton": "elevator_gf123.aut.json",
        "bench": {"kind": "Gen"},
    })
    write("elevator_bounded.game.json", {
        "name": "elevator_bounded",
        "description": "Elevator restricted to floors 0..10; moves leaving the range are unavailable.",
        "variables": [ivar("x", 0, 10)],
        "controller": con,
        "environment": "x' == x",
        "spec": "G (F x == 1 && F x == 2 && F x == 3)",
        "automaton": "elevator_gf123.aut.json",
        "oracle_box": True,
        "bench": {"kind": "Gen"},
    })
    for n in (3, 4, 5, 8, 10):
        write(f"simple{n}.aut.json", dba_floors(n, bounded=True))
        visits = " && ".join(f"F x == {i}" for i in range(1, n + 1))
        write(f"simple{n}.game.json", {
            "name": f"simple{n}",
            "description": f"Elevator with {n} floors that must stay within the floors and visit each one infinitely often.",
            "variables": [ivar("x")],
            "controller": con,
            "environment": "x' == x",
            "spec": f"G (1 <= x && x <= {n}) && G ({visits})",
            "init": "x >= 0 && x <= 8" if n == 10 else "x == 0",
            "automaton": f"simple{n}.aut.json",
            "bench": {"kind": "Gen", "in_suite": n <= 5},
        })


def cinderella():
    b = [f"b{i}" for i in range(1, 6)]

    def con(w):
        out = []
        for s in range(5):
            win = {(s + j) % 5 for j in range(w)}
            out.append(" && ".join(f"{v}' == 0" if i in win else f"{v}' == {v}" for i, v in enumerate(b)))
        return out

    env = " && ".join(f"{v}' >= {v}" for v in b) + " && " + " + ".join(f"{v}'" for v in b) + " == " + " + ".join(b) + " + 1"
    zero = " && ".join(f"{v} == 0" for v in b)

    def safe(c):
        return " && ".join(f"{v} <= {c}" for v in b) + " && " + " && ".join(f"{v} >= 0" for v in b)

    def game(name, w, objective, player="C", desc="", kind="G", extra=None):
        d = {
            "name": name,
            "description": desc,
            "variables": [rvar(v) for v in b],
            "controller": con(w),
            "environment": env,
            "spec": objective,
            "init": zero,
            "player": player,
            "bench": {"kind": kind},
        }
        d.update(extra or {})
        write(f"{name}.game.json", d)

    game("cinderella_c3", 3, f"G ({safe(2)})", desc="Cinderella empties 3 adjacent buckets of capacity 2; the stepmother adds one unit.")
    game("cinderella_c2", 2, f"G ({safe(3)})", desc="Cinderella empties 2 adjacent buckets of capacity 3; the stepmother adds one unit.")
    game("cinderella_c1_4_reach", 2, f"F !({safe('1.4')})", player="E", kind="F",
         desc="Capacity 1.4, two adjacent buckets emptied; the stepmother tries to overflow.")
    write("cinderella_c1_4_gf.aut.json", dba_gf(safe("1.4")))
    game("cinderella_c1_4_gf", 2, f"G F ({safe('1.4')})", kind="GF",
         desc="Capacity 1.4; the buckets must be within capacity infinitely often.",
         extra={"automaton": "cinderella_c1_4_gf.aut.json"})
    gen = (f"G F ({safe('1.4')}) || (G F (b1 <= 1.4 && b2 > 1.4) && !(G F ({safe('1.4')})) && !(G F b1 > 1.4))")
    game("cinderella_c1_4_gen", 2, gen, kind="Gen", desc="Capacity 1.4 with a general LTL objective.",
         extra={"bench": {"kind": "Gen", "in_suite": False}})
    game("cinderella_c1_9_20", 2, f"G ({safe('1.9(20)')})", kind="G",
         desc="Capacity 1.99999999999999999999 (9 repeated 20 times), two adjacent buckets emptied.",
         extra={"bench": {"kind": "G", "in_suite": False}})


def watertank():
    write("watertank_safety.game.json", {
        "name": "watertank_safety",
        "description": "Two tanks; the controller adds 0.2 to one tank or waits, the environment drains each tank by up to 0.1.",
        "variables": [rvar("x1"), rvar("x2")],
        "controller": ["x1' == x1 + 0.2 && x2' == x2", "x1' == x1 && x2' == x2 + 0.2", "x1' == x1 && x2' == x2"],
        "environment": "x1' <= x1 && x1' >= x1 - 0.1 && x2' <= x2 && x2' >= x2 - 0.1",
        "spec": "G (x1 >= 0.1 && x1 < 0.7 && x2 >= 0.1 && x2 < 0.7)",
        "init": "x1 >= 0.2 && x1 < 0.7 && x2 >= 0.2 && x2 < 0.7",
        "bench": {"kind": "G"},
    })
    ok = "x >= 0 && x < 0.7"
    write("watertank_liveness.aut.json", {
        "states": 3,
        "initial": [0],
        "final": [0],
        "view": "buchi",
        "transitions": [
            [0, f"{ok} && x >= 0.1", 0],
            [0, f"{ok} && x < 0.1", 1],
            [1, f"{ok} && x >= 0.4", 0],
            [1, f"{ok} && x < 0.4", 1],
            [0, f"!({ok})", 2],
            [1, f"!({ok})", 2],
            [2, "true", 2],
        ],
    })
    write("watertank_liveness.game.json", {
        "name": "watertank_liveness",
        "description": "One tank; the controller adds 0.2 or waits, the environment drains up to 0.1; a low level must be followed by a refill.",
        "variables": [rvar("x")],
        "controller": ["x' == x + 0.2", "x' == x"],
        "environment": "x' <= x && x' >= x - 0.1",
        "spec": f"G ({ok}) && G (x < 0.1 -> F x >= 0.4)",
        "init": ok,
        "automaton": "watertank_liveness.aut.json",
        "bench": {"kind": "Gen"},
    })


def sort_games():
    for n in (3, 4, 5):
        vs = "abcde"[:n]
        con = [keep(vs)]
        for i in range(n - 1):
            a, c = vs[i], vs[i + 1]
            con.append(f"{a}' == {c} && {c}' == {a}" + "".join(f" && {v}' == {v}" for v in vs if v not in (a, c)))
        sorted_ = " && ".join(f"{vs[i]} >= {vs[i + 1]}" for i in range(n - 1))
        write(f"sort{n}_neg.aut.json", dba_gf(f"!({sorted_})"))
        write(f"sort{n}.game.json", {
            "name": f"sort{n}",
            "description": "The controller swaps adjacent values or skips; the environment skips. Eventually sorted for good.",
            "variables": [ivar(v) for v in vs],
            "controller": con,
            "environment": keep(vs),
            "spec": f"F G ({sorted_})",
            "automaton_neg": f"sort{n}_neg.aut.json",
            "bench": {"kind": "FG"},
        })


def grids():
    def step4(x, y, others=()):
        keep_rest = "".join(f" && {v}' == {v}" for v in others)
        return [
            f"{x}' == {x} && {y}' == {y}{keep_rest}",
            f"{x}' == {x} + 1 && {y}' == {y}{keep_rest}",
            f"{x}' == {x} - 1 && {y}' == {y}{keep_rest}",
            f"{x}' == {x} && {y}' == {y} + 1{keep_rest}",
            f"{x}' == {x} && {y}' == {y} - 1{keep_rest}",
        ]

    def dis(moves):
        return " || ".join(f"({m})" for m in moves)

    common = {"oracle_box": True}
    write("box.game.json", {
        "name": "box",
        "description": "The controller moves x by at most one, the environment then pushes x by at most one; y is idle.",
        "variables": [ivar("x", -2, 5), ivar("y", 0, 1)],
        "controller": ["x' == x && y' == y", "x' == x + 1 && y' == y", "x' == x - 1 && y' == y"],
        "environment": "(x' == x || x' == x + 1 || x' == x - 1) && y' == y",
        "spec": "G (x <= 3 && x >= 0)",
        **common,
    })
    write("box_limited.game.json", {
        "name": "box_limited",
        "description": "The controller can only raise x or wait; the environment lowers x when y is positive and toggles y.",
        "variables": [ivar("x", -2, 5), ivar("y", 0, 1)],
        "controller": ["x' == x && y' == y", "x' == x + 1 && y' == y"],
        "environment": "(x' == x - 1 && y >= 1 && y' == 0) || (x' == x && y' == 1 - y) || (x' == x && y' == y)",
        "spec": "G (x <= 3 && x >= 0)",
        **common,
    })
    write("diagonal.game.json", {
        "name": "diagonal",
        "description": "The controller moves y by at most one, the environment moves x by at most one.",
        "variables": [ivar("x", 0, 8), ivar("y", 0, 8)],
        "controller": ["y' == y && x' == x", "y' == y + 1 && x' == x", "y' == y - 1 && x' == x"],
        "environment": "(x' == x || x' == x + 1 || x' == x - 1) && y' == y",
        "spec": "G (y >= x - 2 && y <= x + 2)",
        **common,
    })
    write("evasion.game.json", {
        "name": "evasion",
        "description": "Two tokens on a 4x4 grid; the controller moves token 1, the environment moves token 2, each one step in a compass direction or not at all.",
        "variables": [ivar("x1", 0, 3), ivar("y1", 0, 3), ivar("x2", 0, 3), ivar("y2", 0, 3)],
        "controller": step4("x1", "y1", ("x2", "y2")),
        "environment": dis(step4("x2", "y2", ("x1", "y1"))),
        "spec": "G !(x1 == x2 && y1 == y2)",
        **common,
    })
    follow = (
        "G ((x1 >= x2 && y1 >= y2 -> x1 - x2 + y1 - y2 <= 2) && (x1 >= x2 && y1 < y2 -> x1 - x2 + y2 - y1 <= 2)"
        " && (x1 < x2 && y1 >= y2 -> x2 - x1 + y1 - y2 <= 2) && (x1 < x2 && y1 < y2 -> x2 - x1 + y2 - y1 <= 2))"
    )
    write("follow.game.json", {
        "name": "follow",
        "description": "Token 1 (controller) must stay within Manhattan distance 2 of token 2 (environment); both step by one.",
        "variables": [ivar("x1", 0, 3), ivar("y1", 0, 3), ivar("x2", 0, 3), ivar("y2", 0, 3)],
        "controller": step4("x1", "y1", ("x2", "y2")),
        "environment": dis(step4("x2", "y2", ("x1", "y1"))),
        "spec": follow,
        **common,
    })
    write("solitary_box.game.json", {
        "name": "solitary_box",
        "description": "The controller moves x by at most one; the environment never moves.",
        "variables": [ivar("x", -2, 5), ivar("y", 0, 1)],
        "controller": ["x' == x && y' == y", "x' == x + 1 && y' == y", "x' == x - 1 && y' == y"],
        "environment": "x' == x && y' == y",
        "spec": "G (x <= 3 && x >= 0)",
        **common,
    })
    write("square5.game.json", {
        "name": "square5",
        "description": "The controller moves one coordinate by one; the environment pushes one coordinate by one.",
        "variables": [ivar("x", -1, 6), ivar("y", -1, 6)],
        "controller": step4("x", "y"),
        "environment": dis(step4("x", "y")),
        "spec": "G (x <= 5 && x >= 0 && y <= 5 && y >= 0)",
        **common,
    })
    # one game per remaining simple shape
    write("grid_reach.game.json", {
        "name": "grid_reach",
        "description": "The controller raises x or moves y; the environment lowers x, but only on even rows.",
        "variables": [ivar("x", 0, 5), ivar("y", 0, 4)],
        "controller": ["x' == x && y' == y", "x' == x + 1 && y' == y", "x' == x && y' == y + 1", "x' == x && y' == y - 1"],
        "environment": "(x' == x && y' == y) || (x' == x - 1 && y' == y && (y == 0 || y == 2 || y == 4))",
        "spec": "F x >= 4",
        **common,
    })
    write("grid_buchi.aut.json", dba_gf("x == 0"))
    write("grid_buchi.game.json", {
        "name": "grid_buchi",
        "description": "The controller moves x by one; the environment pushes x up when y is positive or moves y.",
        "variables": [ivar("x", 0, 6), ivar("y", 0, 2)],
        "controller": ["x' == x && y' == y", "x' == x + 1 && y' == y", "x' == x - 1 && y' == y"],
        "environment": "(x' == x && y' == y) || (x' == x + 1 && y' == y && y >= 1) || (x' == x && y' == y + 1) || (x' == x && y' == y - 1)",
        "spec": "G F x == 0",
        "automaton": "grid_buchi.aut.json",
        **common,
    })
    write("grid_cobuchi_neg.aut.json", dba_gf("!(x <= 2)"))
    write("grid_cobuchi.game.json", {
        "name": "grid_cobuchi",
        "description": "The controller moves x by one; the environment may push x up, spending one unit of its budget y each time, and pushes for free from x >= 3 once the budget is spent.",
        "variables": [ivar("x", 0, 6), ivar("y", 0, 3)],
        "controller": ["x' == x && y' == y", "x' == x + 1 && y' == y", "x' == x - 1 && y' == y"],
        "environment": "(x' == x && y' == y) || (x' == x + 1 && y' == y - 1) || (y == 0 && x >= 3 && x' == x + 1 && y' == y)",
        "spec": "F G x <= 2",
        "automaton_neg": "grid_cobuchi_neg.aut.json",
        **common,
    })
    write("budget_cobuchi.game.json", {
        "name": "budget_cobuchi",
        "description": "The environment may clear flag b, spending one unit of n; the controller sets b again. Winning everywhere, but only n == 0 can stay inside b == 1 unconditionally.",
        "variables": [ivar("n", 0, 3), ivar("b", 0, 1)],
        "controller": ["b' == 1 && n' == n"],
        "environment": "(b' == b && n' == n) || (n >= 1 && n' == n - 1 && b' == 0)",
        "spec": "F G b == 1",
        **common,
    })


def small_examples():
    write("otf_example_neg.aut.json", {
        "states": 4,
        "initial": [0],
        "final": [2],
        "view": "ucw",
        "transitions": [
            [0, "true", 0],
            [0, "x != 2", 1],
            [1, "x != 2", 1],
            [1, "x != 1 && x != 2", 2],
            [1, "x == 2", 3],
            [2, "x != 1 && x != 2", 2],
            [2, "x == 1 || x == 2", 3],
            [3, "true", 3],
        ],
    })
    write("otf_example.aut.json", dba_gf("x == 1 || x == 2"))
    write("otf_example.game.json", {
        "name": "otf_example",
        "description": "The controller picks 1 or 2, the environment skips; visit 1 or 2 infinitely often.",
        "variables": [ivar("x")],
        "controller": ["x' == 1", "x' == 2"],
        "environment": "x' == x",
        "spec": "G F (x == 1 || x == 2)",
        "automaton": "otf_example.aut.json",
        "automaton_neg": "otf_example_neg.aut.json",
    })
    write("otf_example_bounded.game.json", {
        "name": "otf_example_bounded",
        "description": "The OTF example restricted to x in 0..3.",
        "variables": [ivar("x", 0, 3)],
        "controller": ["x' == 1", "x' == 2"],
        "environment": "x' == x",
        "spec": "G F (x == 1 || x == 2)",
        "automaton": "otf_example.aut.json",
        "automaton_neg": "otf_example_neg.aut.json",
        "oracle_box": True,
    })
    write("eventually_stable_nba.aut.json", {
        "states": 2,
        "initial": [0],
        "final": [1],
        "view": "buchi",
        "transitions": [[0, "true", 0], [0, "x == 1", 1], [1, "x != 0", 1]],
    })
    write("eventually_stable_dcw.aut.json", {
        "states": 2,
        "initial": [0],
        "final": [0],
        "view": "cobuchi",
        "transitions": [[0, "x == 1", 1], [0, "x != 1", 0], [1, "x == 0", 0], [1, "x != 0", 1]],
    })
    write("eventually_stable.game.json", {
        "name": "eventually_stable",
        "description": "Domain {0,1,2}; the controller plays 0 or 1, the environment plays 2. Reach 1 and never see 0 again.",
        "variables": [ivar("x", 0, 2)],
        "controller": ["x' == 0", "x' == 1"],
        "environment": "x' == 2",
        "spec": "F (x == 1 && G !(x == 0))",
        "automaton": "eventually_stable_nba.aut.json",
        "oracle_box": True,
    })
    write("walk_below_zero.game.json", {
        "name": "walk_below_zero",
        "description": "The controller steps x up or down, the environment skips; reach a negative x. Realizable, but the fixpoint never converges.",
        "variables": [ivar("x")],
        "controller": ["x' == x - 1", "x' == x + 1"],
        "environment": "x' == x",
        "spec": "F x < 0",
        "init": "x >= 0",
    })


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    floors_game()
    cinderella()
    watertank()
    sort_games()
    grids()
    small_examples()
    print(f"wrote {len(list(OUT.glob('*.json')))} files to {OUT}")
