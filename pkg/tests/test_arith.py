from itertools import product

from hypothesis import given
from hypothesis import strategies as st

from ghostsig.lang.parser import parse_expr
from ghostsig.lang.syntax import Val, eval_expr, subst
from ghostsig.lang.values import TRUE, IntV
from ghostsig.logic.arith import canon, feasible, proves

P = parse_expr


def prove(facts, goal):
    return proves([P(f) for f in facts], P(goal))


def test_basic_proofs():
    assert prove(["1 <= n", "n <= 100"], "0 < n")
    assert prove(["b == a + 3"], "b - a == 3")
    assert prove(["x < y", "y < z"], "x + 1 < z")
    assert not prove(["x <= y"], "x < y")
    assert prove([], "size(l) >= 0")


def test_integer_tightening():
    # 2x == 1 has no integer solution
    assert not feasible([P("x + x == 1")])
    assert prove(["0 < x", "x < 2"], "x == 1")


def test_disequality_split():
    assert prove(["0 <= x", "x <= 1", "!(x == 0)"], "x == 1")
    assert not feasible([P("0 <= x"), P("x <= 0"), P("!(x == 0)")])


def test_canonical_printing():
    assert str(canon(P("0 - n + 101"))) == str(canon(P("101 - n")))
    assert canon(P("(a + 1) - a")) == Val(IntV(1))


VARS = ("x", "y")
terms = st.tuples(st.integers(-2, 2), st.integers(-2, 2), st.integers(-4, 4))
ops = st.sampled_from(["<", "<=", "=="])


def _render(t, op):
    a, b, k = t
    return f"{a} * x + {b} * y {op} {k}"


def _holds(src, env):
    e = P(src)
    for x, v in env.items():
        e = subst(e, x, IntV(v))
    return eval_expr(e) == TRUE


BOX = range(-6, 7)


@given(st.lists(st.tuples(terms, ops), min_size=1, max_size=3), st.tuples(terms, ops))
def test_proves_is_sound(facts, goal):
    fs = [_render(t, o) for t, o in facts] + ["-6 <= x", "x <= 6", "-6 <= y", "y <= 6"]
    g = _render(*goal)
    if prove(fs, g):
        for x, y in product(BOX, BOX):
            env = {"x": x, "y": y}
            if all(_holds(f, env) for f in fs):
                assert _holds(g, env), (fs, g, env)


@given(st.lists(st.tuples(terms, ops), min_size=1, max_size=3))
def test_infeasible_means_no_model(facts):
    fs = [_render(t, o) for t, o in facts] + ["-6 <= x", "x <= 6", "-6 <= y", "y <= 6"]
    has_model = any(all(_holds(f, {"x": x, "y": y}) for f in fs) for x, y in product(BOX, BOX))
    if has_model:
        assert feasible([P(f) for f in fs])
