"""Acceptance criteria; each test prints one PASS/FAIL line.

Also runnable directly: ``python3 tests/test_acceptance.py``.
"""

import time
from itertools import product

import pytest

from ghostsig.annotated import run_annotated
from ghostsig.bags import Bag, bag_union, dm_less, dm_less_exhaustive
from ghostsig.corpus_loader import FILES, corpus_load
from ghostsig.lang.syntax import erase_annotations
from ghostsig.plain import (
    TERMINATED_OUTCOME,
    PhysHeap,
    RoundRobin,
    ThreadPool,
    count_list_ops,
    make_schedule,
    run_fair,
    tp_step,
)
from ghostsig.pog import LOOP_CASES, build_pog, verify_rank_descent
from ghostsig.proof_checker import check_outline

SEEDS = range(100)


def _fifo_trace():
    return run_annotated(corpus_load("fifo").program, make_schedule("random", 0, 16), 1_000_000)


def criterion_1():
    cmd = corpus_load("fifo").program.cmd
    t0 = time.perf_counter()
    scheds = [("rr", RoundRobin())] + [(f"seed {s}", make_schedule("random", s, 16)) for s in SEEDS]
    for label, sched in scheds:
        tr = run_fair(None, cmd, sched, 1_000_000)
        if tr.outcome != TERMINATED_OUTCOME:
            return False, f"{label}: {tr.outcome}"
        if count_list_ops(tr) != (100, 100):
            return False, f"{label}: pushes/pops {count_list_ops(tr)}"
    dt = time.perf_counter() - t0
    return dt < 10, f"101 schedules, 100 pushes and 100 pops each, {dt:.1f}s"


def criterion_2():
    tr = _fifo_trace()
    if tr.report is not None:
        return False, str(tr.report)
    if not tr.ok:
        return False, tr.outcome
    left = {t: b for t, b in tr.final_obligations().items() if b}
    if left:
        return False, f"obligations left {left}"
    if not all(s.consistent for s in tr.steps) or tr.checks_run != len(tr.nodes()):
        return False, f"checks ran on {tr.checks_run} of {len(tr.nodes())} steps"
    blocked = len(tr.steps) - len(tr.nodes())
    return True, f"{tr.checks_run} steps all checked ({blocked} blocked attempts), {len(tr.pool.items())} threads terminated"


MUTANT_STAGES = {"fifo_badlevels": "Await", "fifo_leak": "Terminate", "fifo_nomutinit": "Acquire"}


def criterion_3():
    got = []
    for name, stage in MUTANT_STAGES.items():
        tr = run_annotated(corpus_load(name).program, make_schedule("random", 0, 16), 1_000_000)
        if tr.report is None or tr.report.rule != stage:
            return False, f"{name}: expected {stage}, got {tr.report}"
        if stage == "Await" and "below the level" not in tr.report.message:
            return False, f"{name}: {tr.report.message}"
        if stage == "Terminate" and "leaked" not in tr.report.message:
            return False, f"{name}: {tr.report.message}"
        got.append(f"{name}@{stage}")
    return True, ", ".join(got)


def criterion_4():
    t0 = time.perf_counter()
    bags = [Bag.from_counts(dict(zip(range(4), ms))) for ms in product(range(3), repeat=4)]
    less = {}
    for a, b in product(bags, bags):
        r = dm_less(a, b)
        if r != dm_less_exhaustive(a, b):
            return False, f"disagree on {a} < {b}"
        less[a, b] = r
    if any(less[a, a] for a in bags):
        return False, "not irreflexive"
    above = {a: [b for b in bags if less[a, b]] for a in bags}
    for a in bags:
        for b in above[a]:
            for c in above[b]:
                if not less[a, c]:
                    return False, f"not transitive: {a} < {b} < {c}"
    pairs = [(a, b) for a in bags for b in above[a]]
    for a, b in pairs:
        for c in bags:
            if not dm_less(bag_union(a, c), bag_union(b, c)):
                return False, f"union: {a} < {b} but not with {c}"
    dt = time.perf_counter() - t0
    return dt < 10, f"{len(bags) ** 2} pairs, {len(pairs)} related, {dt:.1f}s"


def criterion_5():
    for k in range(6):
        for d in range(4):
            if not dm_less(bag_union(Bag.of(d), Bag.of(*[d + 1] * k)), Bag.of(*[d + 1] * (1 + k))):
                return False, f"await inequality fails for k={k}, d={d}"
    tr = _fifo_trace()
    rep = verify_rank_descent(build_pog(tr), tr)
    if not rep.ok:
        return False, f"{len(rep.violations)} violations"
    missing = [c for c in LOOP_CASES if rep.case_counts.get(c, 0) == 0]
    if missing:
        return False, f"loop cases not covered: {missing}"
    return True, "0 violations; " + ", ".join(f"{c} {rep.case_counts[c]}" for c in LOOP_CASES)


def criterion_6():
    from test_proof_checker import frame_holds

    for name in ("minimal_flag", "fifo"):
        e = corpus_load(name)
        r = check_outline(e.outline, e.program.cmd, e.program.decls)
        if not r.ok:
            return False, f"{name} rejected: {r.error}"
    e = corpus_load("fifo_badlevels")
    r = check_outline(e.outline, e.program.cmd, e.program.decls)
    if r.ok or r.error.rule != "AwaitGen" or "below the level of all held obligations" not in r.error.message:
        return False, f"fifo_badlevels: {r.error}"
    ok, why = frame_holds(50)
    if not ok:
        return False, f"frame: {why}"
    return True, "2 accepted, fifo_badlevels rejected at AwaitGen, 50 frames"


def _replay(prog, tr):
    """Replay the erased program on the plain semantics along the trace's thread choices."""
    heap, pool = PhysHeap(), ThreadPool({0: erase_annotations(prog.cmd)})
    k = 0
    for s in tr.steps:
        if s.ghost or s.rule == "WhileDecInit":
            continue
        ps = tp_step(heap, pool, s.tid)
        if s.rule == "Blocked":
            if ps is not None:
                return f"step {s.step}: blocked only in the annotated run"
            continue
        if ps is None:
            return f"step {s.step}: no plain step for thread {s.tid}"
        if ps.rule != {"WhileDec": "While", "AwaitInit": "While", "Await": "While"}.get(s.rule, s.rule):
            return f"step {s.step}: {ps.rule} vs {s.rule}"
        heap, pool = ps.heap, ps.pool
        if tr.physical[k] != heap:
            return f"step {s.step}: physical heap differs"
        k += 1
    return None


def criterion_7():
    runs = [(n, corpus_load(n).program) for n in FILES] + [("unbounded_party(3)", corpus_load("unbounded_party", 3).program)]
    total = 0
    for name, prog in runs:
        tr = run_annotated(prog, make_schedule("random", 0, 16), 1_000_000, keep_physical=True)
        if not tr.shadow_ok:
            return False, f"{name}: {tr.shadow_error}"
        err = _replay(prog, tr)
        if err:
            return False, f"{name}: {err}"
        total += len(tr.physical)
    return True, f"{len(runs)} traces, {total} plain steps replayed"


def criterion_8():
    prog = corpus_load("unbounded_party", 3).program
    t0 = time.perf_counter()
    for s in SEEDS:
        tr = run_annotated(prog, make_schedule("random", s, 16), 1_000_000)
        if not tr.ok:
            return False, f"seed {s}: {tr.report or tr.outcome}"
        if any(tr.final_obligations().values()):
            return False, f"seed {s}: obligations left"
    dt = time.perf_counter() - t0
    return dt < 30, f"100 seeds, {dt:.1f}s"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8]
TITLES = [
    "bounded FIFO plain runs",
    "annotated FIFO run",
    "mutation kill-set",
    "Dershowitz-Manna oracle",
    "rank descent",
    "proof checker",
    "erasure simulation",
    "unbounded party N=3",
]


def _line(i, ok, detail):
    return f"criterion {i} [{TITLES[i - 1]}]: {'PASS' if ok else 'FAIL'} ({detail})"


@pytest.mark.parametrize("i", range(1, 9))
def test_criterion(i, capsys):
    ok, detail = CRITERIA[i - 1]()
    with capsys.disabled():
        print("\n" + _line(i, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    import sys
    from pathlib import Path

    sys.path.insert(0, str(Path(__file__).parent))
    for i, f in enumerate(CRITERIA, 1):
        print(_line(i, *f()))
