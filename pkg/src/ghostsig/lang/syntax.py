"""Abstract syntax of expressions, commands and ghost commands.

Expressions are themselves commands. Every node caches its free variables so
that substitution can skip closed subtrees, which keeps the interpreters fast.
Nodes are treated as immutable; equality is structural and hashes are cached.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Callable, Dict, FrozenSet, Optional, Tuple

from .values import FALSE, TRUE, UNIT, BoolV, IntV, ListV, Value

_EMPTY: FrozenSet[str] = frozenset()
SEQ_VAR = "_"


class Node:
    __slots__ = ("fv", "_h")
    _fields: Tuple[str, ...] = ()

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if type(self) is not type(other):
            return False
        return all(getattr(self, f) == getattr(other, f) for f in self._fields)

    def __ne__(self, other) -> bool:
        return not self.__eq__(other)

    def __hash__(self) -> int:
        h = self._h
        if h is None:
            h = self._h = hash((type(self).__name__,) + tuple(getattr(self, f) for f in self._fields))
        return h

    def __repr__(self) -> str:
        args = ", ".join(repr(getattr(self, f)) for f in self._fields)
        return f"{type(self).__name__}({args})"


def _fv(*parts) -> FrozenSet[str]:
    out = _EMPTY
    for p in parts:
        if p is None:
            continue
        if isinstance(p, Node):
            if p.fv:
                out = out | p.fv
        else:
            for q in p:
                if q.fv:
                    out = out | q.fv
    return out


# ---------------------------------------------------------------- expressions


class Expr(Node):
    __slots__ = ()


class Var(Expr):
    __slots__ = ("name",)
    _fields = ("name",)

    def __init__(self, name: str):
        self.name = name
        self.fv = frozenset((name,))
        self._h = None


class Val(Expr):
    __slots__ = ("value",)
    _fields = ("value",)

    def __init__(self, value: Value):
        self.value = value
        self.fv = _EMPTY
        self._h = None


class Eq(Expr):
    __slots__ = ("left", "right")
    _fields = ("left", "right")

    def __init__(self, left: Expr, right: Expr):
        self.left = left
        self.right = right
        self.fv = _fv(left, right)
        self._h = None


class Not(Expr):
    __slots__ = ("arg",)
    _fields = ("arg",)

    def __init__(self, arg: Expr):
        self.arg = arg
        self.fv = arg.fv
        self._h = None


class Op(Expr):
    __slots__ = ("name", "args")
    _fields = ("name", "args")

    def __init__(self, name: str, args: Tuple[Expr, ...]):
        self.name = name
        self.args = tuple(args)
        self.fv = _fv(self.args)
        self._h = None


class KeyRef(Expr):
    """A named signal ``NAME[key]``; only meaningful in ghost positions."""

    __slots__ = ("name", "key")
    _fields = ("name", "key")

    def __init__(self, name: str, key: Expr):
        self.name = name
        self.key = key
        self.fv = key.fv
        self._h = None


UNIT_E = Val(UNIT)
TRUE_E = Val(TRUE)
FALSE_E = Val(FALSE)


# ------------------------------------------------------------ operation table


def _int2(f):
    def g(a, b):
        if type(a) is IntV and type(b) is IntV:
            return f(a.n, b.n)
        return None
    return g


def _append(a, b):
    if type(a) is ListV and type(b) is ListV:
        return ListV(a.items + b.items)
    return None


def _tail(a):
    if type(a) is ListV and a.items:
        return ListV(a.items[1:])
    return None


def _head(a):
    if type(a) is ListV and a.items:
        return a.items[0]
    return None


def _size(a):
    if type(a) is ListV:
        return IntV(len(a.items))
    return None


OPS: Dict[str, Tuple[int, Callable]] = {
    "+": (2, _int2(lambda x, y: IntV(x + y))),
    "-": (2, _int2(lambda x, y: IntV(x - y))),
    "*": (2, _int2(lambda x, y: IntV(x * y))),
    "<": (2, _int2(lambda x, y: TRUE if x < y else FALSE)),
    "<=": (2, _int2(lambda x, y: TRUE if x <= y else FALSE)),
    "nil": (0, lambda: ListV(())),
    "singleton": (1, lambda a: ListV((a,))),
    "append": (2, _append),
    "tail": (1, _tail),
    "head": (1, _head),
    "size": (1, _size),
}
INFIX_OPS = ("+", "-", "*", "<", "<=")


def eval_expr(e: Expr) -> Optional[Value]:
    """Value of a closed expression, or ``None`` when undefined."""
    t = type(e)
    if t is Val:
        return e.value
    if t is Eq:
        a = eval_expr(e.left)
        if a is None:
            return None
        b = eval_expr(e.right)
        if b is None:
            return None
        return TRUE if a == b else FALSE
    if t is Not:
        a = eval_expr(e.arg)
        if type(a) is BoolV:
            return FALSE if a.b else TRUE
        return None
    if t is Op:
        arity, fn = OPS[e.name]
        vals = []
        for x in e.args:
            v = eval_expr(x)
            if v is None:
                return None
            vals.append(v)
        return fn(*vals)
    return None


# ------------------------------------------------------------------ commands


class Cmd(Node):
    __slots__ = ()


class BoundAnn(Node):
    """Loop annotation: the body runs at most ``bound`` times."""

    __slots__ = ("bound",)
    _fields = ("bound",)

    def __init__(self, bound: Expr):
        self.bound = bound
        self.fv = bound.fv
        self._h = None


class AwaitAnn(Node):
    """Loop annotation: an await loop waiting on the given signal references."""

    __slots__ = ("sigs",)
    _fields = ("sigs",)

    def __init__(self, sigs: Tuple[Expr, ...]):
        self.sigs = tuple(sigs)
        self.fv = _fv(self.sigs)
        self._h = None


class While(Cmd):
    __slots__ = ("body", "ann")
    _fields = ("body", "ann")

    def __init__(self, body, ann: Optional[Node] = None):
        self.body = body
        self.ann = ann
        self.fv = _fv(body, ann)
        self._h = None


class DonateObs(Node):
    __slots__ = ("ref",)
    _fields = ("ref",)

    def __init__(self, ref: Expr):
        self.ref = ref
        self.fv = ref.fv
        self._h = None


class DonateSig(Node):
    __slots__ = ("ref",)
    _fields = ("ref",)

    def __init__(self, ref: Expr):
        self.ref = ref
        self.fv = ref.fv
        self._h = None


class DonateLoc(Node):
    """Hand ``frac`` times the held share of every chunk at a location."""

    __slots__ = ("loc", "frac")
    _fields = ("loc", "frac")

    def __init__(self, loc: Expr, frac: Fraction = Fraction(1)):
        self.loc = loc
        self.frac = Fraction(frac)
        self.fv = loc.fv
        self._h = None


class Fork(Cmd):
    __slots__ = ("body", "donations")
    _fields = ("body", "donations")

    def __init__(self, body, donations: Tuple[Node, ...] = ()):
        self.body = body
        self.donations = tuple(donations)
        self.fv = _fv(body, self.donations)
        self._h = None


class Let(Cmd):
    __slots__ = ("var", "bound", "body")
    _fields = ("var", "bound", "body")

    def __init__(self, var: str, bound, body):
        self.var = var
        self.bound = bound
        self.body = body
        bfv = body.fv
        if var in bfv:
            bfv = bfv - {var}
        self.fv = bound.fv | bfv if bfv else bound.fv
        self._h = None


def Seq(first, second) -> Let:
    return Let(SEQ_VAR, first, second)


class If(Cmd):
    """``if cond then then``; the else branch is implicitly ``unit``."""

    __slots__ = ("cond", "then")
    _fields = ("cond", "then")

    def __init__(self, cond, then):
        self.cond = cond
        self.then = then
        self.fv = _fv(cond, then)
        self._h = None


class Alloc(Cmd):
    __slots__ = ("arg",)
    _fields = ("arg",)

    def __init__(self, arg: Expr):
        self.arg = arg
        self.fv = arg.fv
        self._h = None


class Read(Cmd):
    __slots__ = ("loc",)
    _fields = ("loc",)

    def __init__(self, loc: Expr):
        self.loc = loc
        self.fv = loc.fv
        self._h = None


class Write(Cmd):
    __slots__ = ("loc", "value")
    _fields = ("loc", "value")

    def __init__(self, loc: Expr, value: Expr):
        self.loc = loc
        self.value = value
        self.fv = _fv(loc, value)
        self._h = None


class NewMutex(Cmd):
    __slots__ = ()
    _fields = ()

    def __init__(self):
        self.fv = _EMPTY
        self._h = None


class Acquire(Cmd):
    __slots__ = ("mutex",)
    _fields = ("mutex",)

    def __init__(self, mutex: Expr):
        self.mutex = mutex
        self.fv = mutex.fv
        self._h = None


class Release(Cmd):
    __slots__ = ("mutex",)
    _fields = ("mutex",)

    def __init__(self, mutex: Expr):
        self.mutex = mutex
        self.fv = mutex.fv
        self._h = None


class Ghost(Cmd):
    """``ghost g; cont``."""

    __slots__ = ("g", "cont")
    _fields = ("g", "cont")

    def __init__(self, g: "GhostCmd", cont):
        self.g = g
        self.cont = cont
        cfv = cont.fv
        b = g.binds()
        if b and cfv:
            cfv = cfv - b
        self.fv = g.fv | cfv
        self._h = None


class WhileDecStarted(Cmd):
    __slots__ = ("n", "body")
    _fields = ("n", "body")

    def __init__(self, n: int, body):
        if n < 0:
            raise ValueError("loop counter must be a natural number")
        self.n = n
        self.body = body
        self.fv = body.fv
        self._h = None


class AwaitStarted(Cmd):
    """A started await loop; ``var`` names the body result in the unrolled form."""

    __slots__ = ("sigs", "mutex", "body", "var")
    _fields = ("sigs", "mutex", "body", "var")

    def __init__(self, sigs: Tuple[Expr, ...], mutex: Expr, body, var: Optional[str] = None):
        self.sigs = tuple(sigs)
        self.mutex = mutex
        self.body = body
        self.var = var
        self.fv = _fv(self.sigs, mutex, body)
        self._h = None


# ------------------------------------------------------------- ghost commands


class GhostCmd(Node):
    __slots__ = ()

    def binds(self) -> FrozenSet[str]:
        return _EMPTY


def _binder(ref: Expr) -> FrozenSet[str]:
    return frozenset((ref.name,)) if type(ref) is Var else _EMPTY


def _ref_fv(ref: Expr) -> FrozenSet[str]:
    return _EMPTY if type(ref) is Var else ref.fv


class NewSignal(GhostCmd):
    """Create a signal at ``level`` named by ``ref`` (a binder or a keyed name)."""

    __slots__ = ("level", "ref")
    _fields = ("level", "ref")

    def __init__(self, level: Expr, ref: Expr):
        self.level = level
        self.ref = ref
        self.fv = level.fv | _ref_fv(ref)
        self._h = None

    def binds(self):
        return _binder(self.ref)


class SetSignal(GhostCmd):
    __slots__ = ("ref",)
    _fields = ("ref",)

    def __init__(self, ref: Expr):
        self.ref = ref
        self.fv = ref.fv
        self._h = None


class MutInit(GhostCmd):
    __slots__ = ("mutex", "level", "inv", "args")
    _fields = ("mutex", "level", "inv", "args")

    def __init__(self, mutex: Expr, level: Expr, inv: str, args: Tuple[Expr, ...] = ()):
        self.mutex = mutex
        self.level = level
        self.inv = inv
        self.args = tuple(args)
        self.fv = _fv(mutex, level, self.args)
        self._h = None


class AllocSignalId(GhostCmd):
    __slots__ = ("ref",)
    _fields = ("ref",)

    def __init__(self, ref: Expr):
        self.ref = ref
        self.fv = _ref_fv(ref)
        self._h = None

    def binds(self):
        return _binder(self.ref)


class InitSignal(GhostCmd):
    __slots__ = ("ref", "level", "bind")
    _fields = ("ref", "level", "bind")

    def __init__(self, ref: Expr, level: Expr, bind: Optional[str] = None):
        self.ref = ref
        self.level = level
        self.bind = bind
        self.fv = ref.fv | level.fv
        self._h = None

    def binds(self):
        return frozenset((self.bind,)) if self.bind else _EMPTY


class WaitCheck(GhostCmd):
    """Internal: justify one more await iteration after a false body result."""

    __slots__ = ("sigs", "mutex", "result")
    _fields = ("sigs", "mutex", "result")

    def __init__(self, sigs: Tuple[Expr, ...], mutex: Expr, result: Expr):
        self.sigs = tuple(sigs)
        self.mutex = mutex
        self.result = result
        self.fv = _fv(self.sigs, mutex, result)
        self._h = None


def is_value_expr(c) -> bool:
    return isinstance(c, Expr) and not c.fv


# ------------------------------------------------------------- substitution


def subst(c, x: str, v: Value):
    """Replace free occurrences of ``x`` by the value ``v``."""
    if x not in c.fv:
        return c
    return _subst(c, x, Val(v))


def _s(c, x, ve):
    if c is None or x not in c.fv:
        return c
    return _subst(c, x, ve)


def _st(cs, x, ve):
    return tuple(_s(c, x, ve) for c in cs)


def _subst(c, x, ve):
    t = type(c)
    if t is Var:
        return ve
    if t is Let:
        b = c.body if c.var == x else _s(c.body, x, ve)
        return Let(c.var, _s(c.bound, x, ve), b)
    if t is If:
        return If(_s(c.cond, x, ve), _s(c.then, x, ve))
    if t is Eq:
        return Eq(_s(c.left, x, ve), _s(c.right, x, ve))
    if t is Not:
        return Not(_subst(c.arg, x, ve))
    if t is Op:
        return Op(c.name, _st(c.args, x, ve))
    if t is Read:
        return Read(_subst(c.loc, x, ve))
    if t is Write:
        return Write(_s(c.loc, x, ve), _s(c.value, x, ve))
    if t is Acquire:
        return Acquire(_subst(c.mutex, x, ve))
    if t is Release:
        return Release(_subst(c.mutex, x, ve))
    if t is While:
        return While(_s(c.body, x, ve), _s(c.ann, x, ve))
    if t is Fork:
        return Fork(_s(c.body, x, ve), _st(c.donations, x, ve))
    if t is Alloc:
        return Alloc(_subst(c.arg, x, ve))
    if t is Ghost:
        cont = c.cont if x in c.g.binds() else _s(c.cont, x, ve)
        return Ghost(_s(c.g, x, ve), cont)
    if t is WhileDecStarted:
        return WhileDecStarted(c.n, _subst(c.body, x, ve))
    if t is AwaitStarted:
        return AwaitStarted(_st(c.sigs, x, ve), _s(c.mutex, x, ve), _s(c.body, x, ve), c.var)
    if t is KeyRef:
        return KeyRef(c.name, _subst(c.key, x, ve))
    if t is BoundAnn:
        return BoundAnn(_subst(c.bound, x, ve))
    if t is AwaitAnn:
        return AwaitAnn(_st(c.sigs, x, ve))
    if t is DonateObs:
        return DonateObs(_subst(c.ref, x, ve))
    if t is DonateSig:
        return DonateSig(_subst(c.ref, x, ve))
    if t is DonateLoc:
        return DonateLoc(_subst(c.loc, x, ve), c.frac)
    if t is NewSignal:
        ref = c.ref if type(c.ref) is Var else _s(c.ref, x, ve)
        return NewSignal(_s(c.level, x, ve), ref)
    if t is SetSignal:
        return SetSignal(_subst(c.ref, x, ve))
    if t is MutInit:
        return MutInit(_s(c.mutex, x, ve), _s(c.level, x, ve), c.inv, _st(c.args, x, ve))
    if t is AllocSignalId:
        return AllocSignalId(_s(c.ref, x, ve))
    if t is InitSignal:
        return InitSignal(_s(c.ref, x, ve), _s(c.level, x, ve), c.bind)
    if t is WaitCheck:
        return WaitCheck(_st(c.sigs, x, ve), _s(c.mutex, x, ve), _s(c.result, x, ve))
    raise TypeError(f"cannot substitute into {t.__name__}")


# ------------------------------------------------------- evaluation contexts


class IfHole(Node):
    __slots__ = ("then",)
    _fields = ("then",)

    def __init__(self, then):
        self.then = then
        self.fv = then.fv
        self._h = None


class LetHole(Node):
    __slots__ = ("var", "body")
    _fields = ("var", "body")

    def __init__(self, var: str, body):
        self.var = var
        self.body = body
        self.fv = body.fv
        self._h = None


def plug(ctx, c):
    """Fill a hole. ``ctx`` is one frame or a sequence of frames, outermost first."""
    if isinstance(ctx, (IfHole, LetHole)):
        ctx = (ctx,)
    for fr in reversed(tuple(ctx)):
        if type(fr) is IfHole:
            c = If(c, fr.then)
        else:
            c = Let(fr.var, c, fr.body)
    return c


def decompose(c):
    """Split ``c`` into evaluation-context frames (outermost first) and a redex."""
    frames = []
    while True:
        t = type(c)
        if t is Let and not is_value_expr(c.bound):
            frames.append(LetHole(c.var, c.body))
            c = c.bound
        elif t is If and not is_value_expr(c.cond):
            frames.append(IfHole(c.then))
            c = c.cond
        else:
            return tuple(frames), c


# ------------------------------------------------------------ await shape


def fresh_var(avoid, base: str = "_r") -> str:
    if base not in avoid:
        return base
    i = 1
    while f"{base}{i}" in avoid:
        i += 1
    return f"{base}{i}"


def await_body(mutex: Expr, c, r: Optional[str] = None, sigs=None):
    """``acquire m; let r = c in release m; !r`` with an optional wait-justification ghost."""
    if r is None:
        r = fresh_var(mutex.fv | c.fv)
    tail = Seq(Release(mutex), Not(Var(r)))
    if sigs is not None:
        tail = Ghost(WaitCheck(tuple(sigs), mutex, Var(r)), tail)
    return Seq(Acquire(mutex), Let(r, c, tail))


def make_await(mutex: Expr, c, sigs: Optional[Tuple[Expr, ...]] = None) -> While:
    ann = AwaitAnn(tuple(sigs)) if sigs is not None else None
    return While(await_body(mutex, c), ann)


def match_await(body):
    """Recognise the await shape; returns ``(mutex, var, inner)`` or ``None``.

    Accepts both the plain body and the instrumented one carrying a wait check.
    """
    if type(body) is not Let or body.var != SEQ_VAR or type(body.bound) is not Acquire:
        return None
    m = body.bound.mutex
    inner = body.body
    if type(inner) is not Let or inner.var == SEQ_VAR:
        return None
    r = inner.var
    tail = inner.body
    if type(tail) is Ghost and type(tail.g) is WaitCheck:
        tail = tail.cont
    if (
        type(tail) is Let
        and tail.var == SEQ_VAR
        and type(tail.bound) is Release
        and tail.bound.mutex == m
        and tail.body == Not(Var(r))
    ):
        return m, r, inner.bound
    return None


# ---------------------------------------------------------------- erasure


def erase_annotations(c):
    """Drop ghost commands and proof annotations; fold started loops back into loops."""
    t = type(c)
    if isinstance(c, Expr):
        return c
    if t is While:
        body = erase_annotations(c.body)
        if c.ann is None and body is c.body:
            return c
        return While(body)
    if t is Fork:
        body = erase_annotations(c.body)
        if not c.donations and body is c.body:
            return c
        return Fork(body)
    if t is Let:
        a, b = erase_annotations(c.bound), erase_annotations(c.body)
        if a is c.bound and b is c.body:
            return c
        return Let(c.var, a, b)
    if t is If:
        a, b = erase_annotations(c.cond), erase_annotations(c.then)
        if a is c.cond and b is c.then:
            return c
        return If(a, b)
    if t is Ghost:
        return erase_annotations(c.cont)
    if t is WhileDecStarted:
        return While(erase_annotations(c.body))
    if t is AwaitStarted:
        return While(await_body(c.mutex, erase_annotations(c.body), c.var))
    return c


def has_ghosts(c) -> bool:
    t = type(c)
    if t in (Ghost, WhileDecStarted, AwaitStarted):
        return True
    if t is While:
        return c.ann is not None or has_ghosts(c.body)
    if t is Fork:
        return bool(c.donations) or has_ghosts(c.body)
    if t is Let:
        return has_ghosts(c.bound) or has_ghosts(c.body)
    if t is If:
        return has_ghosts(c.cond) or has_ghosts(c.then)
    return False


# ---------------------------------------------------------------- metrics


def cmd_size(c) -> int:
    """Number of syntax nodes; annotations and ghost payloads are not counted.

    ``NewMutex`` counts as an application to unit (2), so that its step to the
    fresh location value is a strict decrease like every other real step.
    """
    t = type(c)
    if t is Val or t is Var:
        return 1
    if t is NewMutex:
        return 2
    if t is Eq:
        return 1 + cmd_size(c.left) + cmd_size(c.right)
    if t is Not:
        return 1 + cmd_size(c.arg)
    if t is Op:
        return 1 + sum(cmd_size(a) for a in c.args)
    if t is KeyRef:
        return 1 + cmd_size(c.key)
    if t is Let:
        return 1 + cmd_size(c.bound) + cmd_size(c.body)
    if t is If:
        return 1 + cmd_size(c.cond) + cmd_size(c.then)
    if t is While or t is Fork or t is WhileDecStarted:
        return 1 + cmd_size(c.body)
    if t is Alloc:
        return 1 + cmd_size(c.arg)
    if t is Read:
        return 1 + cmd_size(c.loc)
    if t is Write:
        return 1 + cmd_size(c.loc) + cmd_size(c.value)
    if t is Acquire or t is Release:
        return 1 + cmd_size(c.mutex)
    if t is Ghost:
        return 1 + cmd_size(c.cont)
    if t is AwaitStarted:
        return 1 + cmd_size(c.mutex) + cmd_size(c.body)
    raise TypeError(f"not a command: {t.__name__}")


def extract_degree(c) -> int:
    """Loop-nesting degree. Ghost prefixes are transparent."""
    t = type(c)
    if t is While:
        return extract_degree(c.body) + 2
    if t is WhileDecStarted or t is AwaitStarted:
        return extract_degree(c.body) + 1
    if t is Fork:
        return extract_degree(c.body)
    if t is Let:
        return max(extract_degree(c.bound), extract_degree(c.body))
    if t is If:
        return max(extract_degree(c.cond), extract_degree(c.then))
    if t is Ghost:
        return extract_degree(c.cont)
    return 0


def walk(c):
    """Pre-order traversal over command and expression nodes."""
    stack = [c]
    while stack:
        n = stack.pop()
        yield n
        t = type(n)
        if t is Let:
            stack += [n.body, n.bound]
        elif t is If:
            stack += [n.then, n.cond]
        elif t in (While, Fork, WhileDecStarted):
            stack.append(n.body)
        elif t is Ghost:
            stack.append(n.cont)
        elif t is AwaitStarted:
            stack += [n.body, n.mutex]
        elif t is Eq:
            stack += [n.right, n.left]
        elif t is Not:
            stack.append(n.arg)
        elif t is Op:
            stack += list(reversed(n.args))
        elif t is Alloc:
            stack.append(n.arg)
        elif t is Read:
            stack.append(n.loc)
        elif t is Write:
            stack += [n.value, n.loc]
        elif t in (Acquire, Release):
            stack.append(n.mutex)
