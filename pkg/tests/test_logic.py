from fractions import Fraction as F

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ghostsig.bags import Bag, HeapLoc, Obligation, Signal, SignalId
from ghostsig.corpus_loader import corpus_load
from ghostsig.lang.parser import parse_assertion
from ghostsig.lang.values import FALSE, TRUE, IntV
from ghostsig.logic.heaps import (
    Ctx,
    LogHeap,
    MutexRes,
    Mutex,
    ObsRes,
    PointsToRes,
    SignalRes,
    carve,
    lh_add,
    lh_complete,
    lh_consistent,
    lh_finite,
    lh_scale,
    lh_sub,
    models,
    star_witness,
)

L0, L1 = HeapLoc(0), HeapLoc(1)
S0 = Signal(SignalId(0), 1)


def pt(loc, v, q=1):
    return LogHeap({PointsToRes(loc, IntV(v) if isinstance(v, int) else v): q})


def obs(*obls):
    return LogHeap({ObsRes(Bag(list(obls))): 1})


def test_fractional_points_to():
    h = pt(L0, 3, F(1, 2))
    env = {"x": L0}
    assert models(h, parse_assertion("x |-(1/4)-> 3"), env=env)
    assert models(h, parse_assertion("x |-(1/2)-> 3"), env=env)
    assert not models(h, parse_assertion("x |-> 3"), env=env)
    assert not models(h, parse_assertion("x |-(1/2)-> 4"), env=env)


def test_exists_and_pure():
    env = {"x": L0}
    assert models(pt(L0, 3), parse_assertion("exists v. x |-> v ** pure(v > 2)"), env=env)
    assert not models(pt(L0, 1), parse_assertion("exists v. x |-> v ** pure(v > 2)"), env=env)


def test_star_splits_disjointly():
    h = lh_add(pt(L0, 1), pt(L1, 2))
    env = {"x": L0, "y": L1}
    assert models(h, parse_assertion("x |-> 1 ** y |-> 2"), env=env)
    assert not models(pt(L0, 1), parse_assertion("x |-(1/2)-> 1 ** x |-(2/3)-> 1"), env=env)
    assert models(pt(L0, 1), parse_assertion("x |-(1/2)-> 1 ** x |-(1/2)-> 1"), env=env)


def test_obs_exact():
    assert models(obs(), parse_assertion("obs{}"))
    assert not models(obs(Obligation(SignalId(0), 1)), parse_assertion("obs{}"))


def test_invariant_flag():
    p = corpus_load("minimal_flag").program
    ctx = Ctx(p.decls, lambda name, k: SignalId(0))
    a = parse_assertion("FLAG(x)", p.decls)
    for flag, val, ok in [(False, FALSE, True), (True, TRUE, True), (True, FALSE, False)]:
        h = lh_add(pt(L0, val), LogHeap({SignalRes(S0, flag): 1}))
        assert models(h, a, ctx, {"x": L0}) is ok


def test_complete_and_consistent():
    assert lh_complete(obs())
    assert not lh_complete(pt(L0, 1))
    assert not lh_complete(lh_add(obs(), obs()))
    assert lh_consistent(lh_add(pt(L0, 1, F(1, 2)), pt(L0, 1, F(1, 2))))
    assert not lh_consistent(lh_add(pt(L0, 1, F(1, 2)), pt(L0, 2, F(1, 2))))
    assert not lh_consistent(lh_scale(F(1, 2), obs()))
    mx = LogHeap({MutexRes(Mutex(L0, 0), parse_assertion("true")): 1})
    assert not lh_consistent(lh_add(mx, pt(L0, 1)))
    assert lh_finite(pt(L0, 1))


def test_star_witness_and_carve():
    h = lh_add(pt(L0, 1), LogHeap({SignalRes(S0, True): 1}))
    h1, h2 = star_witness(h, parse_assertion("x |-> 1 ** true"), Ctx())
    assert lh_add(h1, h2) == h and h1 == pt(L0, 1)
    claimed, rest = carve(h, parse_assertion("x |-> 1"), env={"x": L0})
    assert claimed == pt(L0, 1) and lh_add(claimed, rest) == h


fracs = st.fractions(min_value=F(1, 8), max_value=2).map(lambda q: q.limit_denominator(8)).filter(lambda q: q > 0)
heaps = st.lists(
    st.tuples(st.integers(0, 2), st.integers(0, 2), fracs), max_size=4
).map(lambda xs: LogHeap([(PointsToRes(HeapLoc(l), IntV(v)), q) for l, v, q in xs]))
assertions = st.sampled_from(
    ["x |-(1/2)-> 0", "x |-> 1", "exists v. x |-(1/4)-> v", "x |-(1/8)-> 2 ** true", "true", "x |-> 0 \\/ x |-> 2"]
)


@given(heaps, heaps, assertions)
def test_models_monotone(h, extra, a):
    env = {"x": L0}
    pa = parse_assertion(a)
    if models(h, pa, env=env):
        assert models(lh_add(h, extra), pa, env=env)


@given(heaps, assertions)
def test_star_witness_sound(h, a):
    pa = parse_assertion(f"({a}) ** true")
    w = star_witness(h, pa, Ctx())
    if w is not None:
        assert lh_add(*w) == h
        assert models(w[0], pa.left)


@given(heaps, fracs)
def test_scale_sub_roundtrip(h, q):
    assert lh_sub(lh_add(h, lh_scale(q, h)), h) == lh_scale(q, h)


@pytest.mark.parametrize("name", ["minimal_flag", "fifo"])
def test_invariants_hold_at_end_of_run(name):
    # every unlocked mutex guards a heap that models its invariant
    from ghostsig.annotated import UnlockedA, run_annotated
    from ghostsig.plain import make_schedule

    prog = corpus_load(name).program
    tr = run_annotated(prog, make_schedule("random", 1, 8), 200_000)
    assert tr.ok
    ctx = Ctx(prog.decls, tr.aheap.resolve_key)
    found = [r for r in tr.aheap.resources() if isinstance(r, UnlockedA)]
    assert found
    for r in found:
        assert lh_consistent(r.heap)
        assert models(r.heap, ctx.inv(r.inv), ctx)
