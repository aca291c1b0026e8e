"""Pretty-printer producing text that parses back to the same tree."""

from __future__ import annotations

from typing import Dict

from ..bags import HeapLoc, SignalId
from ..logic import assertions as A
from .syntax import (
    INFIX_OPS,
    SEQ_VAR,
    Acquire,
    Alloc,
    AllocSignalId,
    AwaitAnn,
    AwaitStarted,
    BoundAnn,
    DonateLoc,
    DonateObs,
    DonateSig,
    Eq,
    Fork,
    Ghost,
    If,
    InitSignal,
    KeyRef,
    Let,
    MutInit,
    NewMutex,
    NewSignal,
    Not,
    Op,
    Read,
    Release,
    SetSignal,
    Val,
    Var,
    WaitCheck,
    While,
    WhileDecStarted,
    Write,
    fresh_var,
    match_await,
)
from .values import BoolV, IntV, ListV, UnitV

_PREC = {"<": 1, "<=": 1, "+": 2, "-": 2, "*": 3}


def show_value(v) -> str:
    t = type(v)
    if t is UnitV:
        return "unit"
    if t is BoolV:
        return "true" if v.b else "false"
    if t is IntV:
        return str(v.n)
    if t is ListV:
        return "#[" + ", ".join(show_value(x) for x in v.items) + "]"
    if t is HeapLoc:
        return f"#l{v.addr}"
    if t is SignalId:
        return f"#s{v.id}"
    raise TypeError(f"not a value: {v!r}")


def show_expr(e, prec: int = 0) -> str:
    t = type(e)
    if t is Var:
        return e.name
    if t is Val:
        return show_value(e.value)
    if t is KeyRef:
        return f"{e.name}[{show_expr(e.key)}]"
    if t is Eq:
        s = f"{show_expr(e.left, 2)} == {show_expr(e.right, 2)}"
        return f"({s})" if prec > 1 else s
    if t is Not:
        if type(e.arg) is Eq:
            s = f"{show_expr(e.arg.left, 2)} != {show_expr(e.arg.right, 2)}"
            return f"({s})" if prec > 1 else s
        return "!" + show_expr(e.arg, 4)
    if t is Op:
        if e.name == "nil" and not e.args:
            return "nil"
        if e.name in INFIX_OPS:
            p = _PREC[e.name]
            lp = p + 1 if p == 1 else p
            s = f"{show_expr(e.args[0], lp)} {e.name} {show_expr(e.args[1], p + 1)}"
            return f"({s})" if prec > p else s
        return f"{e.name}(" + ", ".join(show_expr(a) for a in e.args) + ")"
    raise TypeError(f"not an expression: {t.__name__}")


def _refs(sigs) -> str:
    return "{" + ", ".join(show_expr(s) for s in sigs) + "}"


def show_ghost(g) -> str:
    t = type(g)
    if t is NewSignal:
        return f"new_signal {show_expr(g.level)} as {show_expr(g.ref)}"
    if t is SetSignal:
        return f"set_signal {show_expr(g.ref)}"
    if t is MutInit:
        s = f"mut_init {show_expr(g.mutex)} at {show_expr(g.level)} with {g.inv}"
        if g.args:
            s += "(" + ", ".join(show_expr(a) for a in g.args) + ")"
        return s
    if t is AllocSignalId:
        return f"alloc_signal_id as {show_expr(g.ref)}"
    if t is InitSignal:
        s = f"init_signal {show_expr(g.ref)} at {show_expr(g.level)}"
        return s + (f" as {g.bind}" if g.bind else "")
    if t is WaitCheck:
        return f"justify_wait {_refs(g.sigs)} {show_expr(g.mutex, 5)} {show_expr(g.result, 5)}"
    raise TypeError(t.__name__)


def _donation(d) -> str:
    t = type(d)
    if t is DonateObs:
        return "obs " + show_expr(d.ref)
    if t is DonateSig:
        return "sig " + show_expr(d.ref)
    if t is DonateLoc:
        s = show_expr(d.loc)
        if d.frac != 1:
            s += f" @ {d.frac}"
        return s
    raise TypeError(t.__name__)


def _e5(e) -> str:
    return show_expr(e, 5)


def show_cmd(c, simple: bool = False) -> str:
    """Render a command; ``simple`` marks positions where a sequence needs parentheses."""
    t = type(c)
    if t in (Var, Val, Eq, Not, Op, KeyRef):
        s = show_expr(c)
        return s
    if t is Let:
        if c.var == SEQ_VAR:
            s = f"{show_cmd(c.bound, True)}; {show_cmd(c.body)}"
        else:
            s = f"let {c.var} = {show_cmd(c.bound)} in {show_cmd(c.body)}"
        return f"({s})" if simple else s
    if t is Ghost:
        s = f"ghost {show_ghost(c.g)}; {show_cmd(c.cont)}"
        return f"({s})" if simple else s
    if t is If:
        return f"if {show_cmd(c.cond, True)} then {show_cmd(c.then, True)}"
    if t is While:
        ann = c.ann
        shape = match_await(c.body)
        if shape is not None and (ann is None or type(ann) is AwaitAnn):
            m, r, inner = shape
            if r == fresh_var(m.fv | inner.fv) and _plain_await(c.body):
                sig = " " + _refs(ann.sigs) if ann is not None else ""
                return f"with {show_expr(m)} await{sig} ({show_cmd(inner)})"
        a = ""
        if type(ann) is BoundAnn:
            a = "{bound " + show_expr(ann.bound) + "} "
        elif type(ann) is AwaitAnn:
            a = "{await " + ", ".join(show_expr(s) for s in ann.sigs) + "} "
        return f"while {a}{show_cmd(c.body, True)} do skip"
    if t is Fork:
        d = ""
        if c.donations:
            d = "[" + ", ".join(_donation(x) for x in c.donations) + "] "
        return f"fork {d}({show_cmd(c.body)})"
    if t is Alloc:
        return f"cons({show_expr(c.arg)})"
    if t is Read:
        return f"[{show_expr(c.loc)}]"
    if t is Write:
        return f"[{show_expr(c.loc)}] := {show_expr(c.value)}"
    if t is NewMutex:
        return "new_mutex"
    if t is Acquire:
        return f"acquire {_e5(c.mutex)}"
    if t is Release:
        return f"release {_e5(c.mutex)}"
    if t is WhileDecStarted:
        return f"while_started {c.n} ({show_cmd(c.body)})"
    if t is AwaitStarted:
        return f"await_started {_refs(c.sigs)} {_e5(c.mutex)} ({show_cmd(c.body)})"
    raise TypeError(f"not a command: {t.__name__}")


def _plain_await(body) -> bool:
    """True when the await body carries no wait-check ghost (the parser never emits one)."""
    tail = body.body.body
    return type(tail) is Let


def show_assertion(a, prec: int = 0) -> str:
    t = type(a)
    if t is A.ATrue:
        return "true"
    if t is A.AFalse:
        return "false"
    if t is A.AOr:
        s = f"{show_assertion(a.left, 1)} \\/ {show_assertion(a.right, 2)}"
        return f"({s})" if prec > 1 else s
    if t is A.AAnd:
        s = f"{show_assertion(a.left, 2)} /\\ {show_assertion(a.right, 3)}"
        return f"({s})" if prec > 2 else s
    if t is A.AStar:
        s = f"{show_assertion(a.left, 4)} ** {show_assertion(a.right, 3)}"
        return f"({s})" if prec > 3 else s
    if t is A.ANot:
        return "~" + show_assertion(a.arg, 5)
    if t is A.Exists:
        s = f"exists {a.var}. {show_assertion(a.body)}"
        return f"({s})" if prec > 0 else s
    if t is A.BigOr:
        return "any{" + "; ".join(show_assertion(x) for x in a.alts) + "}"
    if t is A.Pure:
        return f"pure({show_expr(a.expr)})"
    if t is A.InvRef:
        return _inv(a)
    if t is A.ObsAs:
        return "obs{" + ", ".join(f"({show_expr(x)}, {show_expr(y)})" for x, y in a.items) + "}"
    if t is A.PointsToAs:
        arrow = "|->" if a.frac == 1 else f"|-({a.frac})->"
        return f"{show_expr(a.loc, 2)} {arrow} {show_expr(a.value, 2)}"
    pre = "" if a.frac == 1 else f"[{a.frac}]"
    if t is A.UninitAs:
        return f"{pre}uninit({show_expr(a.loc)})"
    if t is A.MutexAs:
        return f"{pre}mutex({show_expr(a.loc)}, {show_expr(a.level)}, {_inv(a.inv)})"
    if t is A.LockedAs:
        return f"{pre}locked({show_expr(a.loc)}, {show_expr(a.level)}, {_inv(a.inv)}, {a.held})"
    if t is A.SignalAs:
        return f"{pre}signal({show_expr(a.sig)}, {show_expr(a.level)}, {show_expr(a.flag)})"
    raise TypeError(t.__name__)


def _inv(r: A.InvRef) -> str:
    return r.name + "(" + ", ".join(show_expr(x) for x in r.args) + ")"


def show_program(decls: Dict[str, A.InvDecl], cmd) -> str:
    lines = []
    for d in decls.values():
        params = "(" + ", ".join(d.params) + ")" if d.params else ""
        lines.append(f"invariant {d.name}{params} = {show_assertion(d.body)};")
    lines.append(show_cmd(cmd))
    return "\n".join(lines) + "\n"
