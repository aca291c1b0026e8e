"""Plain operational semantics: physical heaps, single-thread and thread-pool steps,
fair schedulers, traces and the fairness audit.

``st_step`` and ``tp_step`` are the reference step functions and work on whole
commands. ``run_fair`` drives the same rules through a faster representation
that keeps each thread's evaluation context as an explicit stack; the test
suite replays its traces through ``tp_step`` to check that the two agree.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Tuple

from .bags import HeapLoc
from .lang.syntax import (
    SEQ_VAR,
    UNIT_E,
    Acquire,
    Alloc,
    Expr,
    Fork,
    If,
    Let,
    NewMutex,
    Read,
    Release,
    Val,
    While,
    Write,
    decompose,
    erase_annotations,
    eval_expr,
    plug,
    subst,
)
from .lang.values import BoolV, ListV, Value

# ------------------------------------------------------------------ resources


@dataclass(frozen=True, slots=True)
class PointsTo:
    loc: HeapLoc
    value: Value


@dataclass(frozen=True, slots=True)
class Unlocked:
    loc: HeapLoc


@dataclass(frozen=True, slots=True)
class Locked:
    loc: HeapLoc


PhysResource = (PointsTo, Unlocked, Locked)

_MASK = (1 << 64) - 1


def _chunk_hash(res) -> int:
    return hash(res) & _MASK


class PhysHeap:
    """A set of physical chunks keyed by location, plus the allocation counter."""

    __slots__ = ("_m", "next_addr")

    def __init__(self, chunks: Iterable = (), next_addr: Optional[int] = None):
        m = {}
        for r in chunks:
            if r.loc in m:
                raise ValueError(f"location {r.loc!r} occurs twice")
            m[r.loc] = r
        self._m = m
        if next_addr is None:
            next_addr = max((l.addr + 1 for l in m), default=0)
        self.next_addr = next_addr

    @classmethod
    def _raw(cls, m: Dict[HeapLoc, object], next_addr: int) -> "PhysHeap":
        h = cls.__new__(cls)
        h._m = m
        h.next_addr = next_addr
        return h

    def get(self, loc):
        return self._m.get(loc)

    def locations(self) -> frozenset:
        return frozenset(self._m)

    def chunks(self) -> frozenset:
        return frozenset(self._m.values())

    def set(self, res) -> "PhysHeap":
        m = dict(self._m)
        m[res.loc] = res
        return PhysHeap._raw(m, max(self.next_addr, res.loc.addr + 1))

    def fresh_loc(self) -> HeapLoc:
        return HeapLoc(self.next_addr)

    def digest(self) -> str:
        return heap_digest(self._m.values())

    def __len__(self):
        return len(self._m)

    def __eq__(self, other):
        return isinstance(other, PhysHeap) and self._m == other._m

    def __hash__(self):
        return hash(frozenset(self._m.values()))

    def __repr__(self):
        return "PhysHeap({" + ", ".join(repr(r) for r in sorted(self._m.values(), key=lambda r: r.loc)) + "})"


def heap_digest(chunks: Iterable) -> str:
    d = 0
    for r in chunks:
        d ^= _chunk_hash(r)
    return f"{d:016x}"


# -------------------------------------------------------- single-thread step


class StepResult(NamedTuple):
    heap: PhysHeap
    cmd: object
    forked: Optional[object]
    rule: str


def _loc(e) -> Optional[HeapLoc]:
    v = eval_expr(e) if isinstance(e, Expr) and not e.fv else None
    return v if type(v) is HeapLoc else None


def reduce_redex(heap: PhysHeap, c) -> Optional[StepResult]:
    """Apply the head rule to a redex (a command that is not itself a context)."""
    t = type(c)
    if t is Let:
        if not isinstance(c.bound, Expr) or c.bound.fv:
            return None
        v = eval_expr(c.bound)
        if v is None:
            return None
        body = c.body if c.var == SEQ_VAR else subst(c.body, c.var, v)
        return StepResult(heap, body, None, "Let")
    if t is If:
        v = eval_expr(c.cond) if isinstance(c.cond, Expr) and not c.cond.fv else None
        if type(v) is not BoolV:
            return None
        if v.b:
            return StepResult(heap, c.then, None, "IfTrue")
        return StepResult(heap, UNIT_E, None, "IfFalse")
    if t is While:
        return StepResult(heap, If(c.body, c), None, "While")
    if t is Fork:
        return StepResult(heap, UNIT_E, c.body, "Fork")
    if t is Alloc:
        if c.arg.fv:
            return None
        v = eval_expr(c.arg)
        if v is None:
            return None
        loc = heap.fresh_loc()
        return StepResult(heap.set(PointsTo(loc, v)), Val(loc), None, "Alloc")
    if t is Read:
        r = heap.get(_loc(c.loc))
        if type(r) is not PointsTo:
            return None
        return StepResult(heap, Val(r.value), None, "Read")
    if t is Write:
        loc = _loc(c.loc)
        r = heap.get(loc)
        if type(r) is not PointsTo or c.value.fv:
            return None
        v = eval_expr(c.value)
        if v is None:
            return None
        return StepResult(heap.set(PointsTo(loc, v)), UNIT_E, None, "Write")
    if t is NewMutex:
        loc = heap.fresh_loc()
        return StepResult(heap.set(Unlocked(loc)), Val(loc), None, "NewMutex")
    if t is Acquire:
        loc = _loc(c.mutex)
        if type(heap.get(loc)) is not Unlocked:
            return None
        return StepResult(heap.set(Locked(loc)), UNIT_E, None, "Acquire")
    if t is Release:
        loc = _loc(c.mutex)
        if type(heap.get(loc)) is not Locked:
            return None
        return StepResult(heap.set(Unlocked(loc)), UNIT_E, None, "Release")
    return None


def st_step(heap: PhysHeap, c) -> Optional[StepResult]:
    """One single-thread step, or ``None`` when no rule applies."""
    frames, redex = decompose(c)
    r = reduce_redex(heap, redex)
    if r is None:
        return None
    return StepResult(r.heap, plug(frames, r.cmd), r.forked, r.rule)


def is_final(c) -> bool:
    """A thread is finished when its command is a closed expression with a value."""
    return isinstance(c, Expr) and not c.fv and eval_expr(c) is not None


# ---------------------------------------------------------------- thread pools


class _Terminated:
    __slots__ = ()

    def __repr__(self):
        return "Terminated"


TERMINATED = _Terminated()


class ThreadPool:
    """Immutable map from thread id to a command or ``TERMINATED``."""

    __slots__ = ("_m",)

    def __init__(self, threads: Optional[Dict[int, object]] = None):
        self._m = dict(threads or {})

    def __getitem__(self, t):
        return self._m[t]

    def __contains__(self, t):
        return t in self._m

    def items(self):
        return self._m.items()

    def tids(self):
        return sorted(self._m)

    def running(self) -> List[int]:
        return sorted(t for t, c in self._m.items() if c is not TERMINATED)

    def set(self, t, c) -> "ThreadPool":
        m = dict(self._m)
        m[t] = c
        return ThreadPool(m)

    def min_unused(self) -> int:
        i = 0
        while i in self._m:
            i += 1
        return i

    def __eq__(self, other):
        return isinstance(other, ThreadPool) and self._m == other._m

    def __repr__(self):
        return f"ThreadPool({self._m!r})"


def tp_spawn(tp: ThreadPool, forked) -> ThreadPool:
    if forked is None:
        return tp
    return tp.set(tp.min_unused(), forked)


class PoolStep(NamedTuple):
    heap: PhysHeap
    pool: ThreadPool
    rule: str
    forked_tid: Optional[int]


def tp_step(heap: PhysHeap, tp: ThreadPool, t: int) -> Optional[PoolStep]:
    c = tp[t]
    if c is TERMINATED:
        return None
    if is_final(c):
        return PoolStep(heap, tp.set(t, TERMINATED), "Terminate", None)
    r = st_step(heap, c)
    if r is None:
        return None
    pool = tp.set(t, r.cmd)
    ftid = None
    if r.forked is not None:
        ftid = pool.min_unused()
        pool = tp_spawn(pool, r.forked)
    return PoolStep(r.heap, pool, r.rule, ftid)


# ------------------------------------------------------------------ schedules


class RoundRobin:
    """Cycle through running threads in id order."""

    kind = "rr"

    def chooser(self) -> "_RRChooser":
        return _RRChooser()

    def __repr__(self):
        return "RoundRobin()"


class _RRChooser:
    def __init__(self):
        self.last = -1

    def spawned(self, tid: int, i: int):
        pass

    def pick(self, i: int, running: List[int]) -> int:
        for t in running:
            if t > self.last:
                self.last = t
                return t
        self.last = running[0]
        return running[0]


@dataclass(frozen=True)
class SeededRandomFair:
    """Uniform random choice, overridden whenever a thread nears its fairness deadline.

    Every running thread is scheduled at least once in any ``window + 1``
    consecutive decisions, provided ``window`` is at least the number of
    threads running at once.
    """

    seed: int = 0
    window: int = 16
    kind: str = field(default="random", init=False)

    def chooser(self) -> "_RandomChooser":
        return _RandomChooser(self.seed, self.window)


class _RandomChooser:
    def __init__(self, seed: int, window: int):
        self.rng = random.Random(seed)
        self.window = window
        self.last: Dict[int, int] = {0: -1}

    def spawned(self, tid: int, i: int):
        self.last[tid] = i

    def pick(self, i: int, running: List[int]) -> int:
        last = self.last
        n = len(running)
        urgent = None
        best = None
        for t in running:
            slack = last[t] + self.window + 1 - i
            if slack < n and (best is None or slack < best):
                best, urgent = slack, t
        t = urgent if urgent is not None else running[self.rng.randrange(n)]
        last[t] = i
        return t


class FixedSchedule:
    """Replays a fixed list of thread ids, falling back to the lowest running id."""

    kind = "fixed"

    def __init__(self, choices: Iterable[int]):
        self.choices = list(choices)

    def chooser(self):
        return _FixedChooser(self.choices)


class _FixedChooser:
    def __init__(self, choices):
        self.choices = choices

    def spawned(self, tid, i):
        pass

    def pick(self, i, running):
        if i < len(self.choices) and self.choices[i] in running:
            return self.choices[i]
        return running[0]


def make_schedule(kind: str, seed: int = 0, window: int = 16):
    if kind == "rr":
        return RoundRobin()
    if kind == "random":
        return SeededRandomFair(seed, window)
    raise ValueError(f"unknown scheduler {kind!r}")


# ---------------------------------------------------------------------- traces


class TraceStep(NamedTuple):
    step: int
    tid: int
    rule: str
    forked: Optional[int]
    heap_digest: str
    detail: Optional[Tuple] = None


BLOCKED = "Blocked"


@dataclass
class Trace:
    steps: List[TraceStep]
    outcome: str
    final_heap: PhysHeap
    checkpoints: Dict[int, PhysHeap] = field(default_factory=dict)
    threads: int = 1

    def reductions(self) -> List[TraceStep]:
        return [s for s in self.steps if s.rule != BLOCKED]

    def to_jsonl(self) -> str:
        lines = []
        for s in self.steps:
            d = {"step": s.step, "tid": s.tid, "rule": s.rule, "heap_digest": s.heap_digest}
            if s.forked is not None:
                d["forked"] = s.forked
            lines.append(json.dumps(d))
        return "\n".join(lines) + ("\n" if lines else "")


TERMINATED_OUTCOME = "TERMINATED"
BUDGET_OUTCOME = "BUDGET"
STUCK_OUTCOME = "STUCK"


class _Thread:
    __slots__ = ("focus", "frames")

    def __init__(self, focus):
        self.focus = focus
        self.frames: List[Tuple] = []

    def command(self):
        c = self.focus
        for kind, a, b in reversed(self.frames):
            c = If(c, a) if kind == 0 else Let(a, c, b)
        return c


_NOT_ENABLED = 0


def _fast_step(th: _Thread, heap: Dict, alloc: List[int]):
    """Advance one thread by one step in place.

    Returns ``(rule, forked_cmd, detail)``, or ``None`` when the thread has no
    step (finished, blocked or stuck).
    """
    c = th.focus
    frames = th.frames
    while True:
        t = type(c)
        if t is Let:
            b = c.bound
            if isinstance(b, Expr) and not b.fv:
                break
            frames.append((1, c.var, c.body))
            c = b
        elif t is If:
            b = c.cond
            if isinstance(b, Expr) and not b.fv:
                break
            frames.append((0, c.then, None))
            c = b
        else:
            break
    th.focus = c
    if isinstance(c, Expr):
        if c.fv or not frames:
            return None
        v = c.value if t is Val else eval_expr(c)
        if v is None:
            return None
        kind, a, b = frames[-1]
        if kind == 1:
            frames.pop()
            th.focus = b if a == SEQ_VAR else subst(b, a, v)
            return ("Let", None, None)
        if type(v) is not BoolV:
            return None
        frames.pop()
        if v.b:
            th.focus = a
            return ("IfTrue", None, None)
        th.focus = UNIT_E
        return ("IfFalse", None, None)
    if t is Let:
        b = c.bound
        v = b.value if type(b) is Val else eval_expr(b)
        if v is None:
            return None
        th.focus = c.body if c.var == SEQ_VAR else subst(c.body, c.var, v)
        return ("Let", None, None)
    if t is If:
        b = c.cond
        v = b.value if type(b) is Val else eval_expr(b)
        if type(v) is not BoolV:
            return None
        th.focus = c.then if v.b else UNIT_E
        return ("IfTrue" if v.b else "IfFalse", None, None)
    if t is While:
        th.focus = If(c.body, c)
        return ("While", None, None)
    if t is Read:
        r = heap.get(_loc(c.loc))
        if type(r) is not PointsTo:
            return None
        th.focus = Val(r.value)
        return ("Read", None, None)
    if t is Write:
        loc = _loc(c.loc)
        r = heap.get(loc)
        if type(r) is not PointsTo or c.value.fv:
            return None
        v = eval_expr(c.value)
        if v is None:
            return None
        heap[loc] = PointsTo(loc, v)
        th.focus = UNIT_E
        return ("Write", None, (loc, v))
    if t is Acquire:
        loc = _loc(c.mutex)
        if type(heap.get(loc)) is not Unlocked:
            return None
        heap[loc] = Locked(loc)
        th.focus = UNIT_E
        return ("Acquire", None, None)
    if t is Release:
        loc = _loc(c.mutex)
        if type(heap.get(loc)) is not Locked:
            return None
        heap[loc] = Unlocked(loc)
        th.focus = UNIT_E
        return ("Release", None, None)
    if t is Fork:
        th.focus = UNIT_E
        return ("Fork", c.body, None)
    if t is Alloc:
        if c.arg.fv:
            return None
        v = eval_expr(c.arg)
        if v is None:
            return None
        loc = HeapLoc(alloc[0])
        alloc[0] += 1
        heap[loc] = PointsTo(loc, v)
        th.focus = Val(loc)
        return ("Alloc", None, (loc, v))
    if t is NewMutex:
        loc = HeapLoc(alloc[0])
        alloc[0] += 1
        heap[loc] = Unlocked(loc)
        th.focus = Val(loc)
        return ("NewMutex", None, None)
    return None


def _finished(th: _Thread) -> bool:
    c = th.focus
    return not th.frames and isinstance(c, Expr) and not c.fv and eval_expr(c) is not None


def _enabled(th: _Thread, heap: Dict) -> bool:
    """Whether a step exists, decided on a scratch copy so nothing is mutated."""
    probe = _Thread(th.focus)
    probe.frames = list(th.frames)
    return _finished(th) or _fast_step(probe, dict(heap), [1 << 62]) is not None


def run_fair(
    heap0: Optional[PhysHeap],
    c0,
    sched=None,
    max_steps: int = 1_000_000,
    checkpoint_every: int = 0,
) -> Trace:
    """Run a program under a fair schedule until termination, budget exhaustion or deadlock.

    Ghost commands and proof annotations are erased first. Scheduling
    attempts on blocked threads are recorded as ``Blocked`` entries and count
    against the budget.
    """
    heap0 = heap0 if heap0 is not None else PhysHeap()
    sched = sched if sched is not None else RoundRobin()
    chooser = sched.chooser()
    heap: Dict = dict(heap0._m)
    alloc = [heap0.next_addr]
    threads: Dict[int, _Thread] = {0: _Thread(erase_annotations(c0))}
    running = [0]
    steps: List[TraceStep] = []
    checkpoints: Dict[int, PhysHeap] = {}
    digest = 0
    for r in heap.values():
        digest ^= _chunk_hash(r)
    outcome = BUDGET_OUTCOME
    i = 0
    while i < max_steps:
        if not running:
            outcome = TERMINATED_OUTCOME
            break
        t = chooser.pick(i, running)
        th = threads[t]
        if _finished(th):
            running.remove(t)
            steps.append(TraceStep(i, t, "Terminate", None, f"{digest:016x}"))
            i += 1
            continue
        res = _fast_step(th, heap, alloc)
        if res is None:
            steps.append(TraceStep(i, t, BLOCKED, None, f"{digest:016x}"))
            i += 1
            if not any(_enabled(threads[u], heap) for u in running):
                outcome = STUCK_OUTCOME
                break
            continue
        rule, forked, detail = res
        if rule in ("Write", "Acquire", "Release", "Alloc", "NewMutex"):
            digest = 0
            for r in heap.values():
                digest ^= _chunk_hash(r)
        ftid = None
        if forked is not None:
            ftid = len(threads)
            threads[ftid] = _Thread(forked)
            running.append(ftid)
            chooser.spawned(ftid, i)
        steps.append(TraceStep(i, t, rule, ftid, f"{digest:016x}", detail))
        if checkpoint_every and i % checkpoint_every == 0:
            checkpoints[i] = PhysHeap._raw(dict(heap), alloc[0])
        i += 1
    else:
        if not running:
            outcome = TERMINATED_OUTCOME
    return Trace(steps, outcome, PhysHeap._raw(heap, alloc[0]), checkpoints, len(threads))


# ---------------------------------------------------------------- auditing


@dataclass
class FairnessReport:
    window: int
    violations: List[Tuple[int, int]]

    @property
    def ok(self) -> bool:
        return not self.violations


def fairness_audit(trace, window: int) -> FairnessReport:
    """Check every running thread is scheduled within ``window`` steps of every point.

    Blocked attempts count as being scheduled. A thread that has terminated or
    is still pending when the trace ends is not a violation.
    """
    steps = trace.steps if hasattr(trace, "steps") else list(trace)
    n = len(steps)
    start = {0: 0}
    end: Dict[int, int] = {}
    sched: Dict[int, List[int]] = {}
    for s in steps:
        sched.setdefault(s.tid, []).append(s.step)
        if s.forked is not None:
            start[s.forked] = s.step + 1
        if s.rule == "Terminate":
            end[s.tid] = s.step
    violations = []
    for t, s0 in start.items():
        prev = s0 - 1
        for k in sched.get(t, []):
            if k - (prev + 1) > window:
                violations.append((prev + 1, t))
            prev = k
        i = prev + 1
        if t not in end and i + window < n:
            violations.append((i, t))
    return FairnessReport(window, sorted(violations))


def count_list_ops(trace: Trace, loc: Optional[HeapLoc] = None) -> Tuple[int, int]:
    """Count writes that grow (push) or shrink (pop) a list-valued location by one."""
    last: Dict = {}
    pushes = pops = 0
    for s in trace.steps:
        if s.detail is None:
            continue
        l, v = s.detail
        if s.rule == "Write" and (loc is None or l == loc):
            old = last.get(l)
            if type(old) is ListV and type(v) is ListV:
                d = len(v.items) - len(old.items)
                if d == 1:
                    pushes += 1
                elif d == -1:
                    pops += 1
        last[l] = v
    return pushes, pops
