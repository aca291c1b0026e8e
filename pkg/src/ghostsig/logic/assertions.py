"""Assertion syntax. Chunk assertions carry a constant fraction prefix."""

from __future__ import annotations

from fractions import Fraction
from typing import Tuple

from ..lang.syntax import Expr, Node, Val, _fv

ONE = Fraction(1)


class Assertion(Node):
    __slots__ = ()


class ATrue(Assertion):
    __slots__ = ()
    _fields = ()

    def __init__(self):
        self.fv = frozenset()
        self._h = None


class AFalse(Assertion):
    __slots__ = ()
    _fields = ()

    def __init__(self):
        self.fv = frozenset()
        self._h = None


class ANot(Assertion):
    __slots__ = ("arg",)
    _fields = ("arg",)

    def __init__(self, arg: Assertion):
        self.arg = arg
        self.fv = arg.fv
        self._h = None


class _Bin(Assertion):
    __slots__ = ("left", "right")
    _fields = ("left", "right")

    def __init__(self, left: Assertion, right: Assertion):
        self.left = left
        self.right = right
        self.fv = _fv(left, right)
        self._h = None


class AAnd(_Bin):
    __slots__ = ()


class AOr(_Bin):
    __slots__ = ()


class AStar(_Bin):
    __slots__ = ()


class BigOr(Assertion):
    __slots__ = ("alts",)
    _fields = ("alts",)

    def __init__(self, alts: Tuple[Assertion, ...]):
        self.alts = tuple(alts)
        self.fv = _fv(self.alts)
        self._h = None


class PointsToAs(Assertion):
    __slots__ = ("frac", "loc", "value")
    _fields = ("frac", "loc", "value")

    def __init__(self, loc: Expr, value: Expr, frac=ONE):
        self.frac = Fraction(frac)
        self.loc = loc
        self.value = value
        self.fv = _fv(loc, value)
        self._h = None


class UninitAs(Assertion):
    __slots__ = ("frac", "loc")
    _fields = ("frac", "loc")

    def __init__(self, loc: Expr, frac=ONE):
        self.frac = Fraction(frac)
        self.loc = loc
        self.fv = loc.fv
        self._h = None


class InvRef(Assertion):
    """A named invariant applied to argument expressions."""

    __slots__ = ("name", "args")
    _fields = ("name", "args")

    def __init__(self, name: str, args: Tuple[Expr, ...] = ()):
        self.name = name
        self.args = tuple(args)
        self.fv = _fv(self.args)
        self._h = None


class MutexAs(Assertion):
    __slots__ = ("frac", "loc", "level", "inv")
    _fields = ("frac", "loc", "level", "inv")

    def __init__(self, loc: Expr, level: Expr, inv: InvRef, frac=ONE):
        self.frac = Fraction(frac)
        self.loc = loc
        self.level = level
        self.inv = inv
        self.fv = _fv(loc, level, inv)
        self._h = None


class LockedAs(Assertion):
    __slots__ = ("frac", "loc", "level", "inv", "held")
    _fields = ("frac", "loc", "level", "inv", "held")

    def __init__(self, loc: Expr, level: Expr, inv: InvRef, held, frac=ONE):
        self.frac = Fraction(frac)
        self.loc = loc
        self.level = level
        self.inv = inv
        self.held = Fraction(held)
        self.fv = _fv(loc, level, inv)
        self._h = None


class SignalAs(Assertion):
    __slots__ = ("frac", "sig", "level", "flag")
    _fields = ("frac", "sig", "level", "flag")

    def __init__(self, sig: Expr, level: Expr, flag: Expr, frac=ONE):
        self.frac = Fraction(frac)
        self.sig = sig
        self.level = level
        self.flag = flag
        self.fv = _fv(sig, level, flag)
        self._h = None


class ObsAs(Assertion):
    """``obs{(t1, l1), ...}``: the thread's whole obligation bag."""

    __slots__ = ("items",)
    _fields = ("items",)

    def __init__(self, items: Tuple[Tuple[Expr, Expr], ...] = ()):
        self.items = tuple((t, l) for t, l in items)
        self.fv = _fv([x for it in self.items for x in it])
        self._h = None


class Pure(Assertion):
    __slots__ = ("expr",)
    _fields = ("expr",)

    def __init__(self, expr: Expr):
        self.expr = expr
        self.fv = expr.fv
        self._h = None


class Exists(Assertion):
    __slots__ = ("var", "body")
    _fields = ("var", "body")

    def __init__(self, var: str, body: Assertion):
        self.var = var
        self.body = body
        self.fv = body.fv - {var}
        self._h = None


CHUNK_TYPES = (PointsToAs, UninitAs, MutexAs, LockedAs, SignalAs)


def star_all(parts) -> Assertion:
    parts = list(parts)
    if not parts:
        return ATrue()
    out = parts[-1]
    for p in reversed(parts[:-1]):
        out = AStar(p, out)
    return out


def subst_assertion(a: Assertion, x: str, e: Expr) -> Assertion:
    """Replace free ``x`` by the expression ``e`` (expected closed or fresh)."""
    if x not in a.fv:
        return a
    t = type(a)
    if t is ANot:
        return ANot(subst_assertion(a.arg, x, e))
    if t in (AAnd, AOr, AStar):
        return t(subst_assertion(a.left, x, e), subst_assertion(a.right, x, e))
    if t is BigOr:
        return BigOr(tuple(subst_assertion(b, x, e) for b in a.alts))
    if t is Exists:
        if a.var == x:
            return a
        if a.var in e.fv:
            from ..lang.syntax import Var, fresh_var

            y = fresh_var(e.fv | a.body.fv | {x}, a.var + "_")
            return Exists(y, subst_assertion(subst_assertion(a.body, a.var, Var(y)), x, e))
        return Exists(a.var, subst_assertion(a.body, x, e))
    if t is PointsToAs:
        return PointsToAs(_se(a.loc, x, e), _se(a.value, x, e), a.frac)
    if t is UninitAs:
        return UninitAs(_se(a.loc, x, e), a.frac)
    if t is InvRef:
        return InvRef(a.name, tuple(_se(y, x, e) for y in a.args))
    if t is MutexAs:
        return MutexAs(_se(a.loc, x, e), _se(a.level, x, e), subst_assertion(a.inv, x, e), a.frac)
    if t is LockedAs:
        return LockedAs(_se(a.loc, x, e), _se(a.level, x, e), subst_assertion(a.inv, x, e), a.held, a.frac)
    if t is SignalAs:
        return SignalAs(_se(a.sig, x, e), _se(a.level, x, e), _se(a.flag, x, e), a.frac)
    if t is ObsAs:
        return ObsAs(tuple((_se(u, x, e), _se(v, x, e)) for u, v in a.items))
    if t is Pure:
        return Pure(_se(a.expr, x, e))
    raise TypeError(t.__name__)


def _se(expr: Expr, x: str, e: Expr) -> Expr:
    """Expression substitution by an arbitrary expression."""
    from ..lang.syntax import Eq, KeyRef, Not, Op, Var

    if x not in expr.fv:
        return expr
    t = type(expr)
    if t is Var:
        return e
    if t is Eq:
        return Eq(_se(expr.left, x, e), _se(expr.right, x, e))
    if t is Not:
        return Not(_se(expr.arg, x, e))
    if t is Op:
        return Op(expr.name, tuple(_se(y, x, e) for y in expr.args))
    if t is KeyRef:
        return KeyRef(expr.name, _se(expr.key, x, e))
    raise TypeError(t.__name__)


subst_expr = _se


def instantiate(a: Assertion, binding) -> Assertion:
    """Substitute a mapping of variables to values or expressions."""
    for x, v in binding.items():
        a = subst_assertion(a, x, v if isinstance(v, Expr) else Val(v))
    return a


class InvDecl:
    """``invariant NAME(params) = body;``"""

    __slots__ = ("name", "params", "body")

    def __init__(self, name: str, params: Tuple[str, ...], body: Assertion):
        self.name = name
        self.params = tuple(params)
        self.body = body

    def __eq__(self, other):
        return (
            isinstance(other, InvDecl)
            and (self.name, self.params, self.body) == (other.name, other.params, other.body)
        )

    def __hash__(self):
        return hash((self.name, self.params, self.body))

    def __repr__(self):
        return f"InvDecl({self.name!r}, {self.params!r}, {self.body!r})"

    def apply(self, args) -> Assertion:
        if len(args) != len(self.params):
            raise ValueError(f"invariant {self.name} expects {len(self.params)} arguments")
        from ..lang.syntax import Var

        body = self.body
        tmp = [f"%p{i}" for i in range(len(self.params))]
        for p, t in zip(self.params, tmp):
            body = subst_assertion(body, p, Var(t))
        for t, v in zip(tmp, args):
            body = subst_assertion(body, t, v if isinstance(v, Expr) else Val(v))
        return body
