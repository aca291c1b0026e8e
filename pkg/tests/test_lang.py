import pytest
from hypothesis import given
from hypothesis import strategies as st

from ghostsig.corpus_loader import FILES, corpus_load
from ghostsig.lang.parser import ParseError, parse_cmd, parse_expr, parse_program
from ghostsig.lang.printer import show_expr, show_program
from ghostsig.lang.syntax import (
    Acquire,
    Alloc,
    AwaitAnn,
    AwaitStarted,
    Eq,
    If,
    IfHole,
    Let,
    LetHole,
    Not,
    Op,
    Read,
    Release,
    Val,
    Var,
    While,
    WhileDecStarted,
    cmd_size,
    erase_annotations,
    eval_expr,
    extract_degree,
    has_ghosts,
    match_await,
    plug,
    walk,
)
from ghostsig.lang.values import FALSE, TRUE, UNIT, IntV, ListV

I = lambda n: Val(IntV(n))
E = Op("<", (I(1), I(2)))


def test_parse_let_alloc_read():
    c = parse_cmd("let x = cons(0) in [x]")
    assert c == Let("x", Alloc(I(0)), Read(Var("x")))


def test_parse_await_sugar():
    c = parse_cmd("with m await {s} (true)")
    assert type(c) is While and c.ann == AwaitAnn((Var("s"),))
    m, r, inner = match_await(c.body)
    assert m == Var("m") and inner == Val(TRUE)
    assert type(c.body.bound) is Acquire
    assert type(c.body.body.body.bound) is Release


def test_parse_neq_sugar():
    assert parse_expr("a != b") == Not(Eq(Var("a"), Var("b")))


def test_parse_errors():
    with pytest.raises(ParseError):
        parse_cmd("let x = in")
    with pytest.raises(ParseError):
        parse_program("invariant I(x) = x |-> ;\nunit")


def test_eval_examples():
    assert eval_expr(Not(Val(FALSE))) == TRUE
    assert eval_expr(Eq(I(1), I(1))) == TRUE
    assert eval_expr(Var("x")) is None


def test_eval_lists():
    l = eval_expr(parse_expr("append(singleton(1), singleton(2))"))
    assert l == ListV((IntV(1), IntV(2)))
    assert eval_expr(parse_expr("size(tail(append(singleton(1), singleton(2))))")) == IntV(1)
    assert eval_expr(parse_expr("tail(nil)")) is None
    assert eval_expr(parse_expr("1 + true")) is None


closed_int = st.recursive(
    st.integers(-20, 20).map(I),
    lambda sub: st.tuples(st.sampled_from(["+", "-", "*"]), sub, sub).map(lambda t: Op(t[0], (t[1], t[2]))),
    max_leaves=8,
)


@given(closed_int, closed_int)
def test_eval_total_and_deterministic(a, b):
    for e in (a, Op("<", (a, b)), Op("<=", (a, b)), Eq(a, b), Not(Eq(a, b))):
        v = eval_expr(e)
        assert v is not None
        assert eval_expr(e) == v


@given(closed_int)
def test_expr_print_parse_roundtrip(e):
    assert parse_expr(show_expr(e)) == e


def test_plug_examples():
    c = Alloc(I(1))
    assert plug(LetHole("x", Val(UNIT)), c) == Let("x", c, Val(UNIT))
    assert plug(IfHole(Read(I(0))), E) == If(E, Read(I(0)))
    assert plug((LetHole("x", Val(UNIT)), IfHole(Val(UNIT))), E) == Let("x", If(E, Val(UNIT)), Val(UNIT))


def test_erase_examples():
    assert erase_annotations(WhileDecStarted(5, E)) == While(E)
    aw = erase_annotations(AwaitStarted((Var("s"),), I(0), E))
    assert type(aw) is While and match_await(aw.body) is not None
    assert match_await(aw.body)[0] == I(0)


@pytest.mark.parametrize("name", FILES)
def test_erase_idempotent_on_corpus(name):
    c = erase_annotations(corpus_load(name).program.cmd)
    assert not has_ghosts(c)
    assert erase_annotations(c) == c


@pytest.mark.parametrize("name", FILES)
def test_program_roundtrip(name):
    p = corpus_load(name).program
    text = show_program(p.decls, p.cmd)
    q = parse_program(text)
    assert q.cmd == p.cmd
    assert {k: d.body for k, d in q.decls.items()} == {k: d.body for k, d in p.decls.items()}


def test_roundtrip_unbounded_party():
    p = corpus_load("unbounded_party", 2).program
    assert parse_program(show_program(p.decls, p.cmd)).cmd == p.cmd


def test_cmd_size_examples():
    assert cmd_size(Val(UNIT)) == 1
    c = Read(I(0))
    assert cmd_size(If(E, c)) == 1 + cmd_size(E) + cmd_size(c)


def test_degree_examples():
    assert extract_degree(While(E)) == 2
    assert extract_degree(Let("x", While(E), WhileDecStarted(3, E))) == 2
    assert extract_degree(Alloc(E)) == 0


def test_degree_relations():
    for body in (E, parse_cmd("let x = [y] in x < 3"), parse_cmd("while {bound 2} (true) do skip")):
        d = extract_degree(While(body))
        assert d == extract_degree(WhileDecStarted(4, body)) + 1
        assert d == extract_degree(AwaitStarted((), I(0), body)) + 1


def test_walk_visits_everything():
    c = corpus_load("fifo").program.cmd
    kinds = {type(x).__name__ for x in walk(c)}
    assert {"Let", "Fork", "While", "Ghost", "Write", "If"} <= kinds
