"""Annotated semantics: ghost-resource tracking on top of the plain semantics.

Every thread carries a logical heap. Real steps consume and produce logical
resources alongside the annotated heap, ghost commands transform them without
touching physical state, and any step whose side condition fails produces a
``StuckReport`` instead of a successor.

Await loops are instrumented: the unrolled body evaluates the loop condition
while holding the mutex and then runs a ``WaitCheck`` ghost command. When the
condition was false the check picks an unset signal from the loop's signal
set whose level is below every obligation the thread holds (its own mutex
obligation aside) and leaves it as a wait token; the next ``Await`` unrolling
consumes the token and records the signal as the step's wait annotation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, NamedTuple, Optional, Tuple, Union

from .bags import Bag, HeapLoc, Obligation, Signal, SignalId, level_below_bag, level_below_bag_except
from .lang.syntax import (
    SEQ_VAR,
    UNIT_E,
    Acquire,
    Alloc,
    AllocSignalId,
    AwaitAnn,
    AwaitStarted,
    BoundAnn,
    DonateLoc,
    DonateObs,
    DonateSig,
    Expr,
    Fork,
    Ghost,
    If,
    InitSignal,
    KeyRef,
    Let,
    MutInit,
    NewMutex,
    NewSignal,
    Read,
    Release,
    SetSignal,
    Val,
    Var,
    WaitCheck,
    While,
    WhileDecStarted,
    Write,
    await_body,
    decompose,
    erase_annotations,
    eval_expr,
    match_await,
    plug,
    subst,
)
from .lang.values import BoolV, IntV
from .logic import assertions as A
from .logic.heaps import (
    ONE,
    Ctx,
    FragmentError,
    LockedRes,
    LogHeap,
    Mutex,
    MutexRes,
    ObsRes,
    PointsToRes,
    SignalRes,
    SigUninitRes,
    UninitRes,
    carve,
    inconsistency,
    lh_complete,
    lh_finite,
    lh_sum,
)
from .plain import (
    BUDGET_OUTCOME,
    STUCK_OUTCOME,
    TERMINATED,
    TERMINATED_OUTCOME,
    Locked,
    PhysHeap,
    PointsTo,
    RoundRobin,
    ThreadPool,
    Unlocked,
    is_final,
    tp_step,
)

# ------------------------------------------------------- annotated resources


@dataclass(frozen=True)
class APointsTo:
    loc: HeapLoc
    value: object


@dataclass(frozen=True)
class UninitA:
    loc: HeapLoc


@dataclass(frozen=True)
class UnlockedA:
    mutex: Mutex
    inv: A.InvRef
    heap: LogHeap

    @property
    def loc(self):
        return self.mutex.loc


@dataclass(frozen=True)
class LockedA:
    mutex: Mutex
    inv: A.InvRef
    frac: Fraction

    @property
    def loc(self):
        return self.mutex.loc


@dataclass(frozen=True)
class SignalA:
    signal: Signal
    flag: bool


@dataclass(frozen=True)
class ReservedA:
    """A signal id allocated ahead of its initialisation."""

    id: SignalId


class AnnoHeap:
    """Annotated heap: location chunks, signal chunks and the keyed-name registry.

    Immutable; every update returns a new heap. The registry only grows.
    """

    __slots__ = ("locs", "sigs", "registry", "next_addr", "next_sig")

    def __init__(self, locs=None, sigs=None, registry=None, next_addr=0, next_sig=0):
        self.locs: Dict[HeapLoc, object] = dict(locs or {})
        self.sigs: Dict[SignalId, object] = dict(sigs or {})
        self.registry: Dict[Tuple[str, object], SignalId] = dict(registry or {})
        self.next_addr = next_addr
        self.next_sig = next_sig

    def _copy(self, locs=None, sigs=None, registry=None, next_addr=None, next_sig=None) -> "AnnoHeap":
        h = AnnoHeap.__new__(AnnoHeap)
        h.locs = self.locs if locs is None else locs
        h.sigs = self.sigs if sigs is None else sigs
        h.registry = self.registry if registry is None else registry
        h.next_addr = self.next_addr if next_addr is None else next_addr
        h.next_sig = self.next_sig if next_sig is None else next_sig
        return h

    def set_loc(self, res) -> "AnnoHeap":
        locs = dict(self.locs)
        locs[res.loc] = res
        return self._copy(locs=locs, next_addr=max(self.next_addr, res.loc.addr + 1))

    def set_sig(self, sid: SignalId, res) -> "AnnoHeap":
        sigs = dict(self.sigs)
        sigs[sid] = res
        return self._copy(sigs=sigs, next_sig=max(self.next_sig, sid.id + 1))

    def register(self, name: str, key, sid: SignalId) -> "AnnoHeap":
        reg = dict(self.registry)
        reg[(name, key)] = sid
        return self._copy(registry=reg)

    def resolve_key(self, name: str, key) -> Optional[SignalId]:
        return self.registry.get((name, key))

    def resources(self) -> List:
        return list(self.locs.values()) + list(self.sigs.values())

    def protected_heaps(self) -> List[LogHeap]:
        return [r.heap for r in self.locs.values() if type(r) is UnlockedA]

    def __eq__(self, other):
        return (
            isinstance(other, AnnoHeap)
            and self.locs == other.locs
            and self.sigs == other.sigs
            and self.registry == other.registry
        )

    def __repr__(self):
        return f"AnnoHeap({self.resources()!r})"


# ----------------------------------------------------------------- threads


class AThread(NamedTuple):
    heap: LogHeap
    cmd: object
    token: Optional[SignalId] = None


class AnnoThreadPool:
    """Map from thread id to an annotated thread; terminated threads keep their heap."""

    __slots__ = ("_m",)

    def __init__(self, threads: Optional[Mapping[int, AThread]] = None):
        self._m: Dict[int, AThread] = dict(threads or {})

    def __getitem__(self, t) -> AThread:
        return self._m[t]

    def __contains__(self, t):
        return t in self._m

    def __len__(self):
        return len(self._m)

    def items(self):
        return self._m.items()

    def running(self) -> List[int]:
        return sorted(t for t, th in self._m.items() if th.cmd is not TERMINATED)

    def set(self, t, th: AThread) -> "AnnoThreadPool":
        m = dict(self._m)
        m[t] = th
        return AnnoThreadPool(m)

    def min_unused(self) -> int:
        i = 0
        while i in self._m:
            i += 1
        return i

    def heaps(self) -> List[LogHeap]:
        return [th.heap for th in self._m.values()]


def initial_heap() -> LogHeap:
    return LogHeap.single(ObsRes(Bag()))


# ---------------------------------------------------------------- reports


class StuckReport(NamedTuple):
    step: int
    tid: int
    rule: str
    message: str

    def __str__(self):
        return f"step {self.step}, thread {self.tid}: {self.rule}: {self.message}"


class _Stuck(Exception):
    def __init__(self, rule: str, message: str):
        super().__init__(message)
        self.rule = rule
        self.message = message


BLOCKED = "Blocked"

# --------------------------------------------------------------- helpers


def _value(e):
    if not isinstance(e, Expr) or e.fv:
        return None
    return eval_expr(e)


def _level(e, rule) -> int:
    v = _value(e)
    if type(v) is not IntV:
        raise _Stuck(rule, f"level {e!r} is not an integer")
    return v.n


def _loc_of(e, rule) -> HeapLoc:
    v = _value(e)
    if type(v) is not HeapLoc:
        raise _Stuck(rule, f"{e!r} is not a location")
    return v


def resolve_signal(ref, aheap: AnnoHeap) -> Optional[SignalId]:
    """Resolve a signal reference: a substituted id or a keyed name."""
    if type(ref) is KeyRef:
        k = _value(ref.key)
        return None if k is None else aheap.resolve_key(ref.name, k)
    v = _value(ref)
    return v if type(v) is SignalId else None


def _signal_ref(ref, aheap, rule) -> SignalId:
    sid = resolve_signal(ref, aheap)
    if sid is None:
        raise _Stuck(rule, f"unknown signal {ref!r}")
    return sid


def _bind_ref(ref, sid: SignalId, aheap: AnnoHeap, cont, rule):
    """Name a fresh signal: substitute a binder or register a keyed name."""
    if type(ref) is Var:
        return aheap, subst(cont, ref.name, sid)
    if type(ref) is KeyRef:
        k = _value(ref.key)
        if k is None:
            raise _Stuck(rule, f"signal name {ref!r} has an undetermined key")
        if (ref.name, k) in aheap.registry:
            raise _Stuck(rule, f"signal name {ref.name}[{k!r}] is already in use")
        return aheap.register(ref.name, k, sid), cont
    raise _Stuck(rule, f"cannot name a signal by {ref!r}")


def _ctx(aheap: AnnoHeap, decls) -> Ctx:
    return Ctx(decls, aheap.resolve_key)


def _without(h: LogHeap, pred) -> LogHeap:
    return h.where(lambda r: not pred(r))


def _carve_inv(h: LogHeap, inv: A.InvRef, aheap, decls, rule, exclude=None):
    """Carve an obligation-free sub-heap of ``h`` satisfying ``inv``."""
    src = _without(h, lambda r: type(r) is ObsRes or (exclude is not None and exclude(r)))
    try:
        res = carve(src, inv, _ctx(aheap, decls))
    except FragmentError as e:
        raise _Stuck(rule, f"lock invariant {inv.name}: {e}") from None
    if res is None:
        raise _Stuck(rule, f"lock invariant {_show_inv(inv)} cannot be established from the thread's resources")
    return res[0]


def _show_inv(inv: A.InvRef) -> str:
    from .lang.printer import show_assertion

    return show_assertion(inv)


# ------------------------------------------------------------- ghost steps


class GhostResult(NamedTuple):
    aheap: AnnoHeap
    heap: LogHeap
    cont: object
    token: Optional[SignalId]
    rule: str


def _ghost(aheap: AnnoHeap, tlocal: LogHeap, g, cont, decls, token=None) -> GhostResult:
    t = type(g)
    obs = tlocal.obligations()
    if t is NewSignal:
        rule = "NewSignal"
        lev = _level(g.level, rule)
        sid = SignalId(aheap.next_sig)
        sig = Signal(sid, lev)
        aheap = aheap.set_sig(sid, SignalA(sig, False))
        aheap, cont = _bind_ref(g.ref, sid, aheap, cont, rule)
        h = tlocal.add(SignalRes(sig, False)).with_obligations(obs + Bag.of(Obligation(sid, lev)))
        return GhostResult(aheap, h, cont, token, rule)
    if t is SetSignal:
        rule = "SetSignal"
        sid = _signal_ref(g.ref, aheap, rule)
        a = aheap.sigs.get(sid)
        if type(a) is not SignalA:
            raise _Stuck(rule, f"signal {sid!r} is not initialised")
        sig = a.signal
        if tlocal.coeff(SignalRes(sig, False)) < 1:
            if tlocal.coeff(SignalRes(sig, True)) > 0 or a.flag:
                raise _Stuck(rule, f"signal {sid!r} is already set")
            raise _Stuck(rule, f"thread does not hold the full chunk of signal {sid!r}")
        ob = Obligation(sid, sig.level)
        if ob not in obs:
            raise _Stuck(rule, f"thread does not hold the obligation for signal {sid!r}")
        h = tlocal.remove(SignalRes(sig, False)).add(SignalRes(sig, True))
        h = h.with_obligations(obs - Bag.of(ob))
        return GhostResult(aheap.set_sig(sid, SignalA(sig, True)), h, cont, token, rule)
    if t is MutInit:
        rule = "MutInit"
        loc = _loc_of(g.mutex, rule)
        lev = _level(g.level, rule)
        if tlocal.coeff(UninitRes(loc)) < 1 or type(aheap.locs.get(loc)) is not UninitA:
            raise _Stuck(rule, f"thread does not hold the full uninitialised mutex chunk at {loc!r}")
        args = []
        for e in g.args:
            v = _value(e)
            if v is None:
                raise _Stuck(rule, f"invariant argument {e!r} is not a value")
            args.append(Val(v))
        inv = A.InvRef(g.inv, tuple(args))
        rest = tlocal.remove(UninitRes(loc))
        hinv = _carve_inv(rest, inv, aheap, decls, rule)
        m = Mutex(loc, lev)
        h = (rest - hinv).add(MutexRes(m, inv))
        return GhostResult(aheap.set_loc(UnlockedA(m, inv, hinv)), h, cont, token, rule)
    if t is AllocSignalId:
        rule = "AllocSignalId"
        sid = SignalId(aheap.next_sig)
        aheap = aheap.set_sig(sid, ReservedA(sid))
        aheap, cont = _bind_ref(g.ref, sid, aheap, cont, rule)
        return GhostResult(aheap, tlocal.add(SigUninitRes(sid)), cont, token, rule)
    if t is InitSignal:
        rule = "InitSignal"
        sid = _signal_ref(g.ref, aheap, rule)
        lev = _level(g.level, rule)
        if tlocal.coeff(SigUninitRes(sid)) < 1 or type(aheap.sigs.get(sid)) is not ReservedA:
            raise _Stuck(rule, f"thread does not hold the uninitialised signal {sid!r}")
        sig = Signal(sid, lev)
        h = tlocal.remove(SigUninitRes(sid)).add(SignalRes(sig, False))
        h = h.with_obligations(obs + Bag.of(Obligation(sid, lev)))
        if g.bind:
            cont = subst(cont, g.bind, sid)
        return GhostResult(aheap.set_sig(sid, SignalA(sig, False)), h, cont, token, rule)
    if t is WaitCheck:
        rule = "Await"
        r = _value(g.result)
        if type(r) is not BoolV:
            raise _Stuck(rule, "await body did not produce a boolean")
        if r.b:
            return GhostResult(aheap, tlocal, cont, None, "WaitCheck")
        mloc = _value(g.mutex)
        return GhostResult(aheap, tlocal, cont, _pick_wait(aheap, tlocal, g.sigs, mloc, obs), "WaitCheck")
    raise _Stuck("Ghost", f"unknown ghost command {t.__name__}")


def _pick_wait(aheap, tlocal, sigs, mloc, obs) -> SignalId:
    """The first listed unset signal the thread may wait for."""
    unset = []
    for ref in sigs:
        sid = resolve_signal(ref, aheap)
        a = aheap.sigs.get(sid) if sid is not None else None
        if type(a) is not SignalA or a.flag:
            continue
        if tlocal.coeff(SignalRes(a.signal, False)) <= 0:
            continue
        unset.append(a.signal)
        if level_below_bag_except(a.signal.level, obs, (mloc,)):
            return sid
    if unset:
        s = unset[0]
        held = sorted((ob.level for ob in obs.elements() if ob.target != mloc))
        raise _Stuck(
            "Await",
            f"signal {s.id!r} at level {s.level} is not below the level of all held obligations {held}",
        )
    raise _Stuck("Await", "no unset signal of the await's signal set is available to wait for")


def ghost_step(aheap: AnnoHeap, tlocal: LogHeap, g, decls=None, cont=UNIT_E):
    """Run one ghost command; returns a ``GhostResult`` or a ``StuckReport``."""
    try:
        return _ghost(aheap, tlocal, g, cont, decls or {})
    except _Stuck as s:
        return StuckReport(-1, -1, s.rule, s.message)


# -------------------------------------------------------------- real steps


class AStepResult(NamedTuple):
    aheap: AnnoHeap
    heap: LogHeap
    cmd: object
    forked: Optional[Tuple[LogHeap, object]]
    rule: str
    wait_signal: Optional[SignalId] = None
    token: Optional[SignalId] = None
    ghost: bool = False
    detail: Optional[Tuple] = None


def _points_to(aheap, tlocal, loc, rule):
    a = aheap.locs.get(loc)
    if type(a) is not APointsTo:
        raise _Stuck(rule, f"no points-to chunk at {loc!r}")
    r = PointsToRes(loc, a.value)
    q = tlocal.coeff(r)
    if q <= 0:
        raise _Stuck(rule, f"thread holds no permission for {loc!r}")
    return r, q


def _fork_split(aheap, tlocal: LogHeap, donations, rule):
    obs = tlocal.obligations()
    moved = []
    give = LogHeap()
    for d in donations:
        t = type(d)
        if t is DonateObs:
            sid = resolve_signal(d.ref, aheap)
            target = sid if sid is not None else _value(d.ref)
            ob = next((o for o in obs.elements() if o.target == target), None)
            if ob is None:
                raise _Stuck(rule, f"parent holds no obligation for {d.ref!r}")
            obs = obs - Bag.of(ob)
            moved.append(ob)
        elif t is DonateSig:
            sid = _signal_ref(d.ref, aheap, rule)
            part = tlocal.where(lambda r: type(r) is SignalRes and r.signal.id == sid)
            part = part - give.where(lambda r: r in part)
            if not part:
                raise _Stuck(rule, f"parent holds no chunk of signal {sid!r}")
            give = give + part
        elif t is DonateLoc:
            loc = _loc_of(d.loc, rule)
            held = tlocal.at_loc(loc)
            if not held:
                raise _Stuck(rule, f"parent holds no chunk at {loc!r}")
            for r, q in held.items():
                give = give.add(r, q * d.frac)
        else:
            raise _Stuck(rule, f"unknown donation {d!r}")
    try:
        parent = tlocal - give
    except ValueError:
        raise _Stuck(rule, "donations exceed the parent's resources") from None
    child = give.with_obligations(Bag(moved))
    return parent.with_obligations(obs), child


def _real(aheap: AnnoHeap, tlocal: LogHeap, c, token, decls) -> Union[AStepResult, str]:
    t = type(c)
    if t is Let:
        v = _value(c.bound)
        if v is None:
            raise _Stuck("Let", "bound expression does not evaluate")
        body = c.body if c.var == SEQ_VAR else subst(c.body, c.var, v)
        return AStepResult(aheap, tlocal, body, None, "Let", token=token)
    if t is If:
        v = _value(c.cond)
        if type(v) is not BoolV:
            raise _Stuck("If", "condition is not a boolean")
        if v.b:
            return AStepResult(aheap, tlocal, c.then, None, "IfTrue", token=token)
        return AStepResult(aheap, tlocal, UNIT_E, None, "IfFalse", token=token)
    if t is While:
        ann = c.ann
        if type(ann) is BoundAnn:
            n = _value(ann.bound)
            if type(n) is not IntV or n.n < 0:
                raise _Stuck("WhileDecInit", f"loop bound {ann.bound!r} is not a natural number")
            return AStepResult(aheap, tlocal, WhileDecStarted(n.n, c.body), None, "WhileDecInit", token=token)
        if type(ann) is AwaitAnn:
            shape = match_await(c.body)
            if shape is None:
                raise _Stuck("AwaitInit", "signal-set annotation on a loop that is not an await")
            m, r, inner = shape
            started = AwaitStarted(ann.sigs, m, inner, r)
            return AStepResult(aheap, tlocal, If(await_body(m, inner, r, ann.sigs), started), None, "AwaitInit")
        raise _Stuck("While", "loop has no proof annotation (no bound, no signal set)")
    if t is WhileDecStarted:
        if c.n <= 0:
            raise _Stuck("WhileDec", "loop bound exhausted")
        return AStepResult(aheap, tlocal, If(c.body, WhileDecStarted(c.n - 1, c.body)), None, "WhileDec", token=token)
    if t is AwaitStarted:
        if token is None:
            raise _Stuck("Await", "await iteration without a justifying unset signal")
        nxt = If(await_body(c.mutex, c.body, c.var, c.sigs), c)
        return AStepResult(aheap, tlocal, nxt, None, "Await", wait_signal=token)
    if t is Fork:
        parent, child = _fork_split(aheap, tlocal, c.donations, "Fork")
        return AStepResult(aheap, parent, UNIT_E, (child, c.body), "Fork", token=token)
    if t is Alloc:
        v = _value(c.arg)
        if v is None:
            raise _Stuck("Alloc", "argument does not evaluate")
        loc = HeapLoc(aheap.next_addr)
        h = tlocal.add(PointsToRes(loc, v))
        return AStepResult(aheap.set_loc(APointsTo(loc, v)), h, Val(loc), None, "Alloc", token=token, detail=(loc, v))
    if t is Read:
        loc = _loc_of(c.loc, "Read")
        r, _ = _points_to(aheap, tlocal, loc, "Read")
        return AStepResult(aheap, tlocal, Val(r.value), None, "Read", token=token)
    if t is Write:
        loc = _loc_of(c.loc, "Write")
        v = _value(c.value)
        if v is None:
            raise _Stuck("Write", "value does not evaluate")
        r, q = _points_to(aheap, tlocal, loc, "Write")
        if q < 1:
            raise _Stuck("Write", f"write requires full permission for {loc!r}, thread holds {q}")
        h = tlocal.remove(r, q).add(PointsToRes(loc, v), q)
        return AStepResult(aheap.set_loc(APointsTo(loc, v)), h, UNIT_E, None, "Write", token=token, detail=(loc, v))
    if t is NewMutex:
        loc = HeapLoc(aheap.next_addr)
        return AStepResult(aheap.set_loc(UninitA(loc)), tlocal.add(UninitRes(loc)), Val(loc), None, "NewMutex", token=token)
    if t is Acquire:
        return _acquire(aheap, tlocal, c, token)
    if t is Release:
        return _release(aheap, tlocal, c, token, decls)
    raise _Stuck(type(c).__name__, "no annotated rule applies")


def _acquire(aheap, tlocal, c, token):
    rule = "Acquire"
    loc = _loc_of(c.mutex, rule)
    held = tlocal.at_loc(loc)
    mres = [(r, q) for r, q in held.items() if type(r) is MutexRes]
    if not mres:
        if any(type(r) is LockedRes for r in held):
            raise _Stuck(rule, f"thread already holds the lock {loc!r}")
        if any(type(r) is UninitRes for r in held):
            raise _Stuck(rule, f"mutex {loc!r} is not initialised (no mutex chunk)")
        raise _Stuck(rule, f"thread holds no mutex chunk for {loc!r}")
    r, f = mres[0]
    m = r.mutex
    obs = tlocal.obligations()
    if not level_below_bag(m.level, obs):
        held_levels = sorted(ob.level for ob in obs.elements())
        raise _Stuck(
            rule,
            f"mutex level {m.level} is not below the level of all held obligations {held_levels}",
        )
    a = aheap.locs.get(loc)
    if type(a) is LockedA:
        return BLOCKED
    if type(a) is not UnlockedA:
        raise _Stuck(rule, f"no initialised mutex at {loc!r}")
    h = tlocal.remove(r, f).add(LockedRes(m, a.inv, f)) + a.heap
    h = h.with_obligations(obs + Bag.of(Obligation(loc, m.level)))
    return AStepResult(aheap.set_loc(LockedA(m, a.inv, f)), h, UNIT_E, None, rule, token=token)


def _release(aheap, tlocal, c, token, decls):
    rule = "Release"
    loc = _loc_of(c.mutex, rule)
    lres = [(r, q) for r, q in tlocal.at_loc(loc).items() if type(r) is LockedRes]
    if not lres or lres[0][1] < 1:
        raise _Stuck(rule, f"thread does not hold the lock {loc!r}")
    r = lres[0][0]
    m = r.mutex
    obs = tlocal.obligations()
    ob = Obligation(loc, m.level)
    if ob not in obs:
        raise _Stuck(rule, f"thread holds no obligation for mutex {loc!r}")
    rest = tlocal.remove(r)
    hinv = _carve_inv(rest, r.inv, aheap, decls, rule)
    h = (rest - hinv).add(MutexRes(m, r.inv), r.frac).with_obligations(obs - Bag.of(ob))
    return AStepResult(aheap.set_loc(UnlockedA(m, r.inv, hinv)), h, UNIT_E, None, rule, token=token)


def _thread_step(aheap, tlocal, c, token, decls):
    frames, redex = decompose(c)
    if type(redex) is Ghost:
        g = _ghost(aheap, tlocal, redex.g, redex.cont, decls, token)
        return AStepResult(g.aheap, g.heap, plug(frames, g.cont), None, g.rule, token=g.token, ghost=True)
    r = _real(aheap, tlocal, redex, token, decls)
    if r is BLOCKED:
        return r
    return r._replace(cmd=plug(frames, r.cmd))


def ast_step(aheap: AnnoHeap, tlocal: LogHeap, c, t: int = 0, token=None, decls=None):
    """One annotated single-thread step.

    Returns an ``AStepResult``, ``BLOCKED`` when the thread waits for a held
    lock, or a ``StuckReport`` naming the violated side condition. A ghost
    redex is executed as its own step with ``ghost=True``.
    """
    try:
        return _thread_step(aheap, tlocal, c, token, decls or {})
    except _Stuck as s:
        return StuckReport(-1, t, s.rule, s.message)


def atp_step(aheap: AnnoHeap, atp: AnnoThreadPool, t: int, ghost_budget: int = 64, decls=None, mode: str = "verify"):
    """Pending ghost commands of thread ``t``, then exactly one real step.

    Returns ``(aheap, atp, annotations)`` where ``annotations`` lists
    ``(rule, wait_signal)`` per executed step, ``BLOCKED``, or a ``StuckReport``.
    """
    th = atp[t]
    if th.cmd is TERMINATED:
        return StuckReport(-1, t, "Terminate", "thread already terminated")
    notes = []
    heap, cmd, token = th.heap, th.cmd, th.token
    for _ in range(ghost_budget + 1):
        if is_final(cmd):
            obs = heap.obligations()
            if obs and mode == "verify":
                return StuckReport(-1, t, "Terminate", f"obligation leaked at termination: {obs!r}")
            notes.append(("Terminate", None))
            return aheap, atp.set(t, AThread(heap, TERMINATED)), notes
        r = ast_step(aheap, heap, cmd, t, token, decls)
        if r is BLOCKED or isinstance(r, StuckReport):
            return r
        aheap, heap, cmd, token = r.aheap, r.heap, r.cmd, r.token
        notes.append((r.rule, r.wait_signal))
        if not r.ghost:
            atp = atp.set(t, AThread(heap, cmd, token))
            if r.forked is not None:
                atp = atp.set(atp.min_unused(), AThread(r.forked[0], r.forked[1]))
            return aheap, atp, notes
    return StuckReport(-1, t, "Ghost", f"ghost divergence: more than {ghost_budget} ghost steps before a real step")


# ---------------------------------------------------------- compatibility


def project_physical(aheap: AnnoHeap) -> PhysHeap:
    out = []
    for loc, r in aheap.locs.items():
        t = type(r)
        if t is APointsTo:
            out.append(PointsTo(loc, r.value))
        elif t is LockedA:
            out.append(Locked(loc))
        else:
            out.append(Unlocked(loc))
    return PhysHeap(out, aheap.next_addr)


def check_compat_physical(aheap: AnnoHeap, pheap: PhysHeap) -> bool:
    """The structural correspondence between annotated and physical chunks."""
    if aheap.locs.keys() != pheap.locations():
        return False
    for loc, r in aheap.locs.items():
        p = pheap.get(loc)
        t = type(r)
        if t is APointsTo:
            if type(p) is not PointsTo or p.value != r.value:
                return False
        elif t is UninitA or t is UnlockedA:
            if type(p) is not Unlocked:
                return False
        elif t is LockedA:
            if type(p) is not Locked:
                return False
        else:
            return False
    return True


def _expect(r):
    """Logical chunks an annotated chunk stands for."""
    t = type(r)
    if t is APointsTo:
        return ((PointsToRes(r.loc, r.value), ONE),)
    if t is UninitA:
        return ((UninitRes(r.loc), ONE),)
    if t is UnlockedA:
        return ((MutexRes(r.mutex, r.inv), ONE),)
    if t is LockedA:
        if r.frac < 1:
            return ((LockedRes(r.mutex, r.inv, r.frac), ONE), (MutexRes(r.mutex, r.inv), 1 - r.frac))
        return ((LockedRes(r.mutex, r.inv, r.frac), ONE),)
    if t is SignalA:
        return ((SignalRes(r.signal, r.flag), ONE),)
    return ((SigUninitRes(r.id), ONE),)


def expected_logical(aheap: AnnoHeap) -> LogHeap:
    """The logical heap the annotated chunks stand for.

    Protected heaps are not included: they are summed on the owned side.
    """
    return LogHeap([x for r in aheap.resources() for x in _expect(r)])


def compat_logical(aheap: AnnoHeap, owned: LogHeap) -> Optional[str]:
    """``None`` when ``aheap`` is compatible with ``owned`` (obligation chunks ignored)."""
    actual = owned.where(lambda r: type(r) is not ObsRes)
    exp = expected_logical(aheap)
    if actual == exp:
        return None
    extra = [(r, q) for r, q in actual.items() if exp.coeff(r) != q]
    missing = [(r, q) for r, q in exp.items() if actual.coeff(r) != q]
    return f"annotated and logical heaps differ: logical {extra[:3]!r} vs annotated {missing[:3]!r}"


def consistency_error(aheap: AnnoHeap, atp: AnnoThreadPool) -> Optional[str]:
    for t, th in atp.items():
        e = inconsistency(th.heap)
        if e:
            return f"thread {t}: {e}"
    for r in aheap.locs.values():
        if type(r) is UnlockedA:
            e = _protected_error(r)
            if e:
                return e
    owned = lh_sum(atp.heaps() + aheap.protected_heaps())
    return compat_logical(aheap, owned)


def check_consistent(aheap: AnnoHeap, atp: AnnoThreadPool) -> bool:
    """Thread heaps and protected heaps consistent, and the annotated heap compatible with their sum."""
    return consistency_error(aheap, atp) is None


# ------------------------------------------------------------------ runner


class _CompatTracker:
    """Incremental form of the compatibility check.

    Keeps ``owned + protected - expected`` (obligation chunks ignored) as a
    sparse map updated from each step's changes; the configuration is
    compatible exactly when the map is empty.
    """

    __slots__ = ("delta",)

    def __init__(self):
        self.delta: Dict = {}

    def _bump(self, r, q):
        if type(r) is ObsRes:
            return
        d = self.delta
        v = d.get(r, 0) + q
        if v:
            d[r] = v
        else:
            d.pop(r, None)

    def heap(self, h: LogHeap, sign: int = 1):
        for r, q in h.items():
            self._bump(r, sign * q)

    def thread(self, old: LogHeap, new: LogHeap):
        om, nm = old._m, new._m
        if om is nm:
            return
        for r, q in nm.items():
            o = om.get(r)
            if o is not q:
                self._bump(r, q - (o or 0))
        for r, q in om.items():
            if r not in nm:
                self._bump(r, -q)

    def aheap(self, old: AnnoHeap, new: AnnoHeap) -> Optional[str]:
        """Account for changed annotated chunks; reports a bad new protected heap."""
        if old is new:
            return None
        err = None
        for om, nm in ((old.locs, new.locs), (old.sigs, new.sigs)):
            if om is nm:
                continue
            for k, r in nm.items():
                o = om.get(k)
                if o is r:
                    continue
                if o is not None:
                    self._chunk(o, -1)
                self._chunk(r, 1)
                if type(r) is UnlockedA and err is None:
                    err = _protected_error(r)
            for k, o in om.items():
                if k not in nm:
                    self._chunk(o, -1)
        return err

    def _chunk(self, r, sign):
        for x, q in _expect(r):
            self._bump(x, -sign * q)
        if type(r) is UnlockedA:
            self.heap(r.heap, sign)

    def error(self) -> Optional[str]:
        if not self.delta:
            return None
        items = list(self.delta.items())[:3]
        return f"annotated and logical heaps differ (logical minus annotated): {items!r}"


def _protected_error(r: UnlockedA) -> Optional[str]:
    e = inconsistency(r.heap)
    if e:
        return f"invariant heap of {r.loc!r}: {e}"
    if r.heap.obs_chunks():
        return f"invariant heap of {r.loc!r} holds an obligations chunk"
    return None


@dataclass
class AStep:
    step: int
    tid: int
    rule: str
    ghost: bool
    cmd: object
    wait_signal: Optional[SignalId] = None
    forked: Optional[int] = None
    obligations_digest: str = ""
    consistent: bool = True

    def to_json(self) -> dict:
        d = {"step": self.step, "tid": self.tid, "rule": self.rule}
        if self.wait_signal is not None:
            d["wait_signal"] = self.wait_signal.id
        if self.forked is not None:
            d["forked"] = self.forked
        d["ghost"] = self.ghost
        d["obligations_digest"] = self.obligations_digest
        d["consistent"] = self.consistent
        return d


@dataclass
class AnnotatedTrace:
    steps: List[AStep]
    outcome: str
    report: Optional[StuckReport]
    aheap: AnnoHeap
    pool: AnnoThreadPool
    warnings: List[str] = field(default_factory=list)
    shadow_ok: bool = True
    shadow_error: Optional[str] = None
    checks_run: int = 0
    physical: List[PhysHeap] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.outcome == TERMINATED_OUTCOME and self.report is None

    def nodes(self) -> List[AStep]:
        return [s for s in self.steps if s.rule != BLOCKED]

    def final_obligations(self) -> Dict[int, Bag]:
        return {t: th.heap.obligations() for t, th in self.pool.items()}

    def set_signals(self) -> set:
        return {sid for sid, r in self.aheap.sigs.items() if type(r) is SignalA and r.flag}

    def to_jsonl(self) -> str:
        return "".join(json.dumps(s.to_json()) + "\n" for s in self.steps)


_PLAIN_RULE = {"WhileDec": "While", "AwaitInit": "While", "Await": "While"}


def _obs_digest(pool: AnnoThreadPool) -> str:
    d = 0
    for t, th in pool.items():
        d ^= hash((t, th.heap.obligations())) & ((1 << 64) - 1)
    return f"{d:016x}"


def run_annotated(
    program,
    sched=None,
    max_steps: int = 1_000_000,
    ghost_budget: int = 64,
    mode: str = "verify",
    decls=None,
    check: bool = True,
    shadow: bool = True,
    keep_physical: bool = False,
) -> AnnotatedTrace:
    """Run a ghost-annotated program under a schedule.

    ``program`` is a parsed ``Program`` or a bare command (then ``decls``
    supplies the invariant declarations). Each scheduling decision runs the
    chosen thread's pending ghost commands and one real step; every executed
    step is a trace entry. With ``check`` every entry is followed by the
    completeness, finiteness and consistency checks, and with ``shadow`` every
    real step is replayed on the erased program under the plain semantics and
    compared against the annotated state. ``max_steps`` bounds scheduling
    decisions.
    """
    if hasattr(program, "cmd"):
        decls = program.decls if decls is None else decls
        cmd0 = program.cmd
    else:
        cmd0 = program
    decls = decls or {}
    sched = sched if sched is not None else RoundRobin()
    chooser = sched.chooser()
    aheap = AnnoHeap()
    pool = AnnoThreadPool({0: AThread(initial_heap(), cmd0)})
    steps: List[AStep] = []
    warnings: List[str] = []
    phys = PhysHeap()
    plain_pool = ThreadPool({0: erase_annotations(cmd0)})
    shadow_error = None
    physical: List[PhysHeap] = []
    checks = 0
    tracker = _CompatTracker()
    report = None
    outcome = BUDGET_OUTCOME

    def fail(rule, msg, tid):
        return StuckReport(len(steps), tid, rule, msg)

    decision = 0
    while decision < max_steps:
        running = pool.running()
        if not running:
            outcome = TERMINATED_OUTCOME
            break
        t = chooser.pick(decision, running)
        decision += 1
        ghosts = 0
        blocked = False
        while True:
            th = pool[t]
            cmd_before = th.cmd
            aheap_before = aheap
            ftid = None
            if is_final(th.cmd):
                obs = th.heap.obligations()
                if obs:
                    msg = f"obligation leaked at termination: {obs!r}"
                    if mode == "verify":
                        report = fail("Terminate", msg, t)
                        break
                    warnings.append(f"thread {t}: {msg}")
                pool = pool.set(t, AThread(th.heap, TERMINATED))
                rule, ghost, wait = "Terminate", False, None
            else:
                try:
                    r = _thread_step(aheap, th.heap, th.cmd, th.token, decls)
                except _Stuck as s:
                    report = fail(s.rule, s.message, t)
                    break
                if r is BLOCKED:
                    steps.append(AStep(len(steps), t, BLOCKED, False, cmd_before))
                    blocked = True
                else:
                    aheap = r.aheap
                    pool = pool.set(t, AThread(r.heap, r.cmd, r.token))
                    if r.forked is not None:
                        ftid = pool.min_unused()
                        pool = pool.set(ftid, AThread(r.forked[0], r.forked[1]))
                        chooser.spawned(ftid, decision - 1)
                    rule, ghost, wait = r.rule, r.ghost, r.wait_signal
            if shadow and shadow_error is None and (blocked or not ghost):
                shadow_error, ps = _shadow_check(
                    aheap, pool, t, ftid, phys, plain_pool, BLOCKED if blocked else rule
                )
                if ps is not None:
                    phys, plain_pool = ps.heap, ps.pool
                    if keep_physical:
                        physical.append(phys)
                if shadow_error is not None and mode == "verify":
                    report = fail("Erasure", shadow_error, t)
                    break
            if blocked:
                break
            entry = AStep(len(steps), t, rule, ghost, cmd_before, wait, ftid)
            steps.append(entry)
            if check:
                checks += 1
                err = _local_check(pool[t].heap, t)
                tracker.thread(th.heap, pool[t].heap)
                if err is None and ftid is not None:
                    err = _local_check(pool[ftid].heap, ftid)
                    tracker.heap(pool[ftid].heap)
                err = err or tracker.aheap(aheap_before, aheap) or tracker.error()
                if err is not None:
                    entry.consistent = False
                    report = StuckReport(entry.step, t, "Consistency", err)
                    break
                entry.obligations_digest = _obs_digest(pool)
            if not ghost:
                break
            ghosts += 1
            if ghosts > ghost_budget:
                report = fail("Ghost", f"ghost divergence: more than {ghost_budget} ghost steps before a real step", t)
                break
        if report is not None:
            outcome = STUCK_OUTCOME
            break
        if blocked and not any(_can_move(aheap, pool, u, decls) for u in pool.running()):
            outcome = STUCK_OUTCOME
            report = StuckReport(len(steps), t, "Deadlock", "every running thread is blocked")
            break
    else:
        if not pool.running():
            outcome = TERMINATED_OUTCOME
    if check and report is None:
        err = consistency_error(aheap, pool)
        if err is not None:
            outcome = STUCK_OUTCOME
            report = StuckReport(len(steps), -1, "Consistency", err)
    return AnnotatedTrace(
        steps, outcome, report, aheap, pool, warnings, shadow_error is None, shadow_error, checks, physical
    )


def _local_check(h: LogHeap, t: int) -> Optional[str]:
    if not lh_complete(h):
        return f"thread {t}: heap is not complete"
    if not lh_finite(h):
        return f"thread {t}: heap is not finite"
    e = inconsistency(h)
    return f"thread {t}: {e}" if e else None


def _can_move(aheap, pool, t, decls) -> bool:
    th = pool[t]
    if is_final(th.cmd):
        return True
    try:
        return _thread_step(aheap, th.heap, th.cmd, th.token, decls) is not BLOCKED
    except _Stuck:
        return True


def _shadow_check(aheap, pool, t, ftid, phys, plain_pool, rule):
    """Compare the annotated step of ``t`` with the plain step of the erased program.

    Returns ``(error, plain_step)``; the plain step is ``None`` for stutters and
    blocked attempts.
    """
    if rule == "WhileDecInit":
        ok = erase_annotations(pool[t].cmd) == plain_pool[t]
        return (None if ok else f"loop initialisation changed the erased command of thread {t}"), None
    ps = tp_step(phys, plain_pool, t)
    if rule == BLOCKED:
        if ps is None:
            return None, None
        return f"thread {t} is blocked in the annotated run but can step in the plain run", None
    if ps is None:
        return f"plain semantics has no step for thread {t} ({rule})", None
    want = _PLAIN_RULE.get(rule, rule)
    if ps.rule != want:
        return f"plain step {ps.rule} does not match annotated step {rule}", ps
    if ftid != ps.forked_tid:
        return f"forked thread ids differ ({ftid} vs {ps.forked_tid})", ps
    th = pool[t]
    pc = ps.pool[t]
    if th.cmd is TERMINATED:
        if pc is not TERMINATED:
            return f"thread {t} terminated only in the annotated run", ps
    elif erase_annotations(th.cmd) != pc:
        return f"erased command of thread {t} differs from the plain successor", ps
    if ftid is not None and erase_annotations(pool[ftid].cmd) != ps.pool[ftid]:
        return f"erased command of forked thread {ftid} differs", ps
    if not check_compat_physical(aheap, ps.heap):
        return "annotated heap is not compatible with the physical heap", ps
    return None, ps
