import json

import pytest

from ghostsig.annotated import run_annotated
from ghostsig.bags import Bag, dm_less
from ghostsig.corpus_loader import corpus_load
from ghostsig.lang.parser import parse_cmd, parse_program
from ghostsig.plain import make_schedule
from ghostsig.pog import (
    LOOP_CASES,
    Pog,
    await_stats,
    build_pog,
    export_dot,
    extract_rank,
    report_json,
    size_descent_violations,
    verify_rank_descent,
)

LIVELOCK = """
invariant T(x) = exists b. x |-> b ** signal(f[0], 1, b);
let x = cons(false) in
let m = new_mutex in
ghost new_signal 1 as f[0];
ghost mut_init m at 0 with T(x);
fork [obs f[0], m @ 1/2] (skip);
with m await {f[0]} ([x])
"""


@pytest.fixture(scope="module")
def flag_graph():
    tr = run_annotated(corpus_load("minimal_flag").program, make_schedule("random", 2, 4), 10_000)
    return tr, build_pog(tr)


def test_rank_of_loops():
    assert extract_rank(parse_cmd("let x = cons(0) in [x]")) == Bag()
    one = extract_rank(parse_cmd("while {bound 3} (true) do skip"))
    two = extract_rank(parse_cmd("while {bound 3} (true) do skip; while {bound 3} (true) do skip"))
    nested = extract_rank(parse_cmd("while {bound 3} (while {bound 2} (true) do skip; true) do skip"))
    assert one == Bag.of(2) and two == Bag.of(2, 2) and nested == Bag.of(4)
    # a nested loop outranks any number of sequential loops of lower degree
    assert dm_less(one, two) and dm_less(two, nested)


def test_graph_shape(flag_graph):
    tr, g = flag_graph
    assert len(g.nodes) == len(tr.nodes())
    assert len(g.edges) == len(g.nodes) - 1
    assert g.is_binary_tree()
    assert len(g.roots()) == 1
    assert size_descent_violations(g) == []


def test_flag_rank_descent(flag_graph):
    tr, g = flag_graph
    rep = verify_rank_descent(g, tr)
    assert rep.ok and rep.precondition_ok
    assert set(rep.case_counts) == set(LOOP_CASES)


def test_fifo_covers_all_loop_cases(fifo):
    tr = run_annotated(fifo, make_schedule("random", 0, 16), 1_000_000, check=False, shadow=False)
    g = build_pog(tr)
    rep = verify_rank_descent(g, tr)
    assert rep.ok, rep.violations[:3]
    assert all(rep.case_counts[c] > 0 for c in LOOP_CASES)


def test_await_stats_counts(flag_graph):
    tr, g = flag_graph
    stats = await_stats(g, tr.set_signals())
    assert not stats.persistent
    assert all(e.rule == "Await" for es in stats.await_edges.values() for e in es)


def test_livelock_has_persistent_signal():
    tr = run_annotated(parse_program(LIVELOCK), make_schedule("random", 0, 4), 3000, mode="explore")
    assert tr.outcome == "BUDGET"
    g = build_pog(tr)
    stats = await_stats(g, tr.set_signals())
    assert len(stats.persistent) == 1
    rep = verify_rank_descent(g, tr)
    assert not rep.precondition_ok and not rep.ok


def test_dot_and_report(flag_graph):
    tr, g = flag_graph
    assert export_dot(Pog([], [])) == "digraph pog {}"
    dot = export_dot(g)
    assert dot.startswith("digraph pog {") and "->" in dot
    rep = verify_rank_descent(g, tr)
    d = json.loads(report_json(rep, await_stats(g, tr.set_signals())))
    assert d["violations"] == []
