from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghostsig.annotated import (
    AnnoHeap,
    AnnoThreadPool,
    APointsTo,
    AThread,
    GhostResult,
    SignalA,
    StuckReport,
    ast_step,
    check_compat_physical,
    check_consistent,
    ghost_step,
    initial_heap,
    run_annotated,
)
from ghostsig.bags import Bag, HeapLoc, Obligation, Signal, SignalId
from ghostsig.corpus_loader import corpus_load
from ghostsig.lang.parser import parse_cmd, parse_program
from ghostsig.lang.syntax import NewSignal, SetSignal, Val, Var
from ghostsig.lang.values import IntV
from ghostsig.logic.heaps import PointsToRes, SignalRes
from ghostsig.plain import PhysHeap, PointsTo, Unlocked, make_schedule

L0 = HeapLoc(0)


def run(src, seed=None, **kw):
    sched = make_schedule("random", seed, 4) if seed is not None else None
    return run_annotated(parse_program(src), sched, 20_000, **kw)


def test_new_signal_adds_obligation():
    r = ghost_step(AnnoHeap(), initial_heap(), NewSignal(Val(IntV(2)), Var("s")), cont=Var("s"))
    assert isinstance(r, GhostResult)
    sid = SignalId(0)
    assert r.cont == Val(sid)
    assert r.heap.obligations() == Bag.of(Obligation(sid, 2))
    assert r.aheap.sigs[sid] == SignalA(Signal(sid, 2), False)


def test_set_signal_discharges():
    r = ghost_step(AnnoHeap(), initial_heap(), NewSignal(Val(IntV(2)), Var("s")), cont=Var("s"))
    r2 = ghost_step(r.aheap, r.heap, SetSignal(r.cont))
    assert r2.heap.obligations() == Bag()
    assert r2.aheap.sigs[SignalId(0)].flag is True
    r3 = ghost_step(r2.aheap, r2.heap, SetSignal(r.cont))
    assert isinstance(r3, StuckReport) and "already set" in r3.message


def test_set_signal_without_obligation():
    sid = SignalId(0)
    sig = Signal(sid, 1)
    aheap = AnnoHeap().set_sig(sid, SignalA(sig, False))
    h = initial_heap().add(SignalRes(sig, False))
    r = ghost_step(aheap, h, SetSignal(Val(sid)))
    assert isinstance(r, StuckReport) and "obligation" in r.message


def test_fractional_read_and_write():
    aheap = AnnoHeap().set_loc(APointsTo(L0, IntV(7)))
    half = initial_heap().add(PointsToRes(L0, IntV(7)), F(1, 2))
    r = ast_step(aheap, half, parse_cmd("[x]").__class__(Val(L0)))
    assert r.cmd == Val(IntV(7))
    w = ast_step(aheap, half, parse_cmd("[x] := 1").__class__(Val(L0), Val(IntV(1))))
    assert isinstance(w, StuckReport) and "full permission" in w.message


def test_flag_terminates_without_obligations(flag):
    tr = run_annotated(flag, None, 10_000)
    assert tr.ok and tr.shadow_ok
    assert all(not b for b in tr.final_obligations().values())


def test_leak_detected():
    tr = run("ghost new_signal 1 as s; skip")
    assert not tr.ok and "leaked" in tr.report.message


def test_explore_mode_tolerates_leak():
    tr = run("ghost new_signal 1 as s; skip", mode="explore")
    assert tr.outcome == "TERMINATED"


def test_plain_while_is_stuck():
    tr = run("let x = cons(0) in while ([x] == 0) do skip")
    assert tr.report.rule == "While" and "no proof annotation" in tr.report.message


def test_bounded_loop_runs_out():
    tr = run("let x = cons(0) in while {bound 3} ([x] == 0) do skip")
    assert tr.report.rule == "WhileDec"


def test_acquire_needs_init():
    tr = run("let m = new_mutex in acquire m; release m")
    assert "not initialised" in tr.report.message


def test_acquire_level_check():
    src = """
    invariant T() = true;
    let m = new_mutex in
    ghost mut_init m at 5 with T();
    ghost new_signal 3 as s;
    acquire m; release m;
    ghost set_signal s; skip
    """
    tr = run(src)
    assert tr.report.rule == "Acquire" and "not below" in tr.report.message


def test_await_may_wait_below_own_mutex():
    # flag example: main waits at level 1 holding only the loop's mutex obligation at level 0
    tr = run_annotated(corpus_load("minimal_flag").program, make_schedule("random", 3, 4), 10_000)
    assert tr.ok


@pytest.mark.parametrize("name,rule", [("fifo_badlevels", "Await"), ("fifo_nomutinit", "Acquire"), ("fifo_leak", "Terminate")])
def test_mutants_rejected(name, rule):
    tr = run_annotated(corpus_load(name).program, make_schedule("random", 0, 16), 1_000_000)
    assert not tr.ok
    assert tr.report.rule == rule


def test_fifo_accepted(fifo):
    tr = run_annotated(fifo, make_schedule("random", 0, 16), 1_000_000)
    assert tr.ok and tr.shadow_ok and tr.checks_run > 0


def test_compat_physical():
    aheap = AnnoHeap().set_loc(APointsTo(L0, IntV(1)))
    assert check_compat_physical(aheap, PhysHeap([PointsTo(L0, IntV(1))]))
    assert not check_compat_physical(aheap, PhysHeap([PointsTo(L0, IntV(2))]))
    assert not check_compat_physical(aheap, PhysHeap([Unlocked(L0)]))
    assert not check_compat_physical(aheap, PhysHeap())


def test_consistency():
    aheap = AnnoHeap().set_loc(APointsTo(L0, IntV(1)))
    h = initial_heap().add(PointsToRes(L0, IntV(1)))
    assert check_consistent(aheap, AnnoThreadPool({0: AThread(h, Val(IntV(0)))}))
    twice = AnnoThreadPool({0: AThread(h, Val(IntV(0))), 1: AThread(h, Val(IntV(0)))})
    assert not check_consistent(aheap, twice)


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_random_schedules_of_party(seed):
    prog = corpus_load("unbounded_party", 2).program
    tr = run_annotated(prog, make_schedule("random", seed, 6), 200_000)
    assert tr.ok and tr.shadow_ok
    # obligations are never created out of nothing: every step stays consistent
    assert all(s.consistent for s in tr.steps)
    assert {s.id for s in tr.set_signals()} == {sid.id for sid, r in tr.aheap.sigs.items() if isinstance(r, SignalA)}
