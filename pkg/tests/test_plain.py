import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ghostsig.bags import HeapLoc
from ghostsig.corpus_loader import corpus_load
from ghostsig.lang.parser import parse_cmd
from ghostsig.lang.syntax import Acquire, Alloc, Fork, If, Val, cmd_size, erase_annotations
from ghostsig.lang.values import TRUE, UNIT, IntV
from ghostsig.plain import (
    STUCK_OUTCOME,
    TERMINATED,
    TERMINATED_OUTCOME,
    FixedSchedule,
    Locked,
    PhysHeap,
    PointsTo,
    RoundRobin,
    ThreadPool,
    Unlocked,
    count_list_ops,
    fairness_audit,
    make_schedule,
    run_fair,
    st_step,
    tp_spawn,
    tp_step,
)

L = HeapLoc


def test_if_true():
    h = PhysHeap()
    c = Alloc(Val(IntV(1)))
    r = st_step(h, If(Val(TRUE), c))
    assert (r.heap, r.cmd, r.forked) == (h, c, None)


def test_alloc_fresh():
    r = st_step(PhysHeap(), Alloc(Val(IntV(5))))
    loc = r.cmd.value
    assert r.heap.get(loc) == PointsTo(loc, IntV(5))
    r2 = st_step(r.heap, Alloc(Val(IntV(6))))
    assert r2.cmd.value != loc


def test_acquire():
    h = PhysHeap([Unlocked(L(0))])
    r = st_step(h, Acquire(Val(L(0))))
    assert r.heap.get(L(0)) == Locked(L(0)) and r.cmd == Val(UNIT)
    assert st_step(PhysHeap([Locked(L(0))]), Acquire(Val(L(0)))) is None


def test_spawn():
    c, c2 = Val(UNIT), Alloc(Val(IntV(0)))
    assert tp_spawn(ThreadPool({0: c}), None) == ThreadPool({0: c})
    assert tp_spawn(ThreadPool({0: c}), c2) == ThreadPool({0: c, 1: c2})
    assert tp_spawn(ThreadPool({0: c, 1: TERMINATED}), c2) == ThreadPool({0: c, 1: TERMINATED, 2: c2})


def test_pool_steps():
    h = PhysHeap()
    ps = tp_step(h, ThreadPool({0: Val(UNIT)}), 0)
    assert ps.pool[0] is TERMINATED and ps.heap == h
    assert tp_step(h, ps.pool, 0) is None
    body = Alloc(Val(IntV(1)))
    ps = tp_step(h, ThreadPool({0: Fork(body)}), 0)
    assert ps.pool[0] == Val(UNIT) and ps.pool[1] == body and ps.forked_tid == 1


def test_flag_terminates_rr(flag):
    tr = run_fair(None, flag.cmd, RoundRobin())
    assert tr.outcome == TERMINATED_OUTCOME


def test_fifo_rr_counts(fifo):
    tr = run_fair(None, fifo.cmd, RoundRobin(), 1_000_000)
    assert tr.outcome == TERMINATED_OUTCOME
    assert count_list_ops(tr) == (100, 100)


def test_self_deadlock():
    c = parse_cmd("let m = new_mutex in acquire m; acquire m")
    assert run_fair(None, c, RoundRobin(), 1000).outcome == STUCK_OUTCOME


def test_budget():
    c = parse_cmd("let x = cons(0) in while ([x] == 0) do skip")
    assert run_fair(None, c, RoundRobin(), 50).outcome == "BUDGET"


def test_fairness_audit():
    c = corpus_load("unbounded_party", 2).program.cmd
    tr = run_fair(None, c, RoundRobin())
    assert fairness_audit(tr, tr.threads).ok
    # keep scheduling thread 0 only: thread 1 starves
    tr = run_fair(None, parse_cmd("fork (while (true) do skip); while (true) do skip"), FixedSchedule([0] * 200), 200)
    rep = fairness_audit(tr, 10)
    assert not rep.ok and rep.violations[0][1] == 1


@pytest.mark.parametrize("seed", range(5))
def test_random_schedule_fair(seed, flag):
    tr = run_fair(None, flag.cmd, make_schedule("random", seed, 4))
    assert tr.outcome == TERMINATED_OUTCOME
    assert fairness_audit(tr, 4).ok


def _random_run(cmd, seed, limit=3000):
    rng = random.Random(seed)
    heap, pool = PhysHeap(), ThreadPool({0: erase_annotations(cmd)})
    for _ in range(limit):
        running = pool.running()
        if not running:
            return
        t = rng.choice(running)
        before = pool[t]
        ps = tp_step(heap, pool, t)
        assert tp_step(heap, pool, t) == ps  # deterministic per choice
        if ps is None:
            continue
        for loc in ps.heap.locations():
            assert ps.heap.get(loc).loc == loc
        for loc in heap.locations():
            old, new = heap.get(loc), ps.heap.get(loc)
            if type(old) is Locked and type(new) is Unlocked:
                assert ps.rule == "Release"
            if type(old) is Unlocked and type(new) is Locked:
                assert ps.rule == "Acquire"
        if ps.rule not in ("While", "Terminate"):
            after = ps.pool[t]
            assert cmd_size(after) < cmd_size(before)
        heap, pool = ps.heap, ps.pool
        for u, c in pool.items():
            if u != t and c is TERMINATED:
                assert tp_step(heap, pool, u) is None


@given(st.integers(0, 10_000), st.sampled_from(["minimal_flag", "party"]))
def test_random_executions_respect_invariants(seed, name):
    cmd = corpus_load("unbounded_party", 2).program.cmd if name == "party" else corpus_load(name).program.cmd
    _random_run(cmd, seed)
