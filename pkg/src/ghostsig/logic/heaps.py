"""Logical resources, logical heaps and the assertion model relation.

The model relation is decided over a fragment: chunk assertions claim a
fraction of a matching resource, ``**`` splits the heap chunk-wise (the left
conjunct claims, the right conjunct sees the remainder), and existential
variables are bound by matching against resources actually present.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, Iterable, Iterator, Mapping, Optional, Tuple

from ..bags import Bag, HeapLoc, Obligation, Signal, SignalId
from ..lang.syntax import Eq, Expr, KeyRef, Not, Op, Val, Var, eval_expr
from ..lang.values import BoolV, IntV
from . import assertions as A

ZERO = Fraction(0)
ONE = Fraction(1)


class FragmentError(ValueError):
    """Raised when an assertion falls outside the decidable fragment."""


# ------------------------------------------------------------------ resources


@dataclass(frozen=True, order=True)
class Mutex:
    loc: HeapLoc
    level: int

    def __repr__(self):
        return f"({self.loc!r}, {self.level})"


@dataclass(frozen=True)
class PointsToRes:
    loc: HeapLoc
    value: object


@dataclass(frozen=True)
class UninitRes:
    loc: HeapLoc


@dataclass(frozen=True)
class MutexRes:
    mutex: Mutex
    inv: A.InvRef


@dataclass(frozen=True)
class LockedRes:
    mutex: Mutex
    inv: A.InvRef
    frac: Fraction


@dataclass(frozen=True)
class SignalRes:
    signal: Signal
    flag: bool


@dataclass(frozen=True)
class SigUninitRes:
    """An allocated signal id not yet bound to a level."""

    id: SignalId


@dataclass(frozen=True)
class ObsRes:
    bag: Bag


def res_loc(r) -> Optional[HeapLoc]:
    t = type(r)
    if t is PointsToRes or t is UninitRes:
        return r.loc
    if t is MutexRes or t is LockedRes:
        return r.mutex.loc
    return None


def res_signal_id(r) -> Optional[SignalId]:
    t = type(r)
    if t is SignalRes:
        return r.signal.id
    if t is SigUninitRes:
        return r.id
    return None


# --------------------------------------------------------------------- heaps


class LogHeap:
    """Finite map from logical resources to positive rationals. Immutable."""

    __slots__ = ("_m", "_h")

    def __init__(self, items: Optional[Mapping] = None):
        m = {}
        if items:
            for r, q in (items.items() if hasattr(items, "items") else items):
                q = Fraction(q)
                if q < 0:
                    raise ValueError("negative coefficient")
                if q:
                    m[r] = m.get(r, ZERO) + q
        self._m = m
        self._h = None

    @classmethod
    def _raw(cls, m: Dict) -> "LogHeap":
        h = cls.__new__(cls)
        h._m = m
        h._h = None
        return h

    @classmethod
    def single(cls, r, q=ONE) -> "LogHeap":
        return cls._raw({r: Fraction(q)})

    def coeff(self, r) -> Fraction:
        return self._m.get(r, ZERO)

    __getitem__ = coeff

    def __contains__(self, r):
        return r in self._m

    def items(self):
        return self._m.items()

    def support(self):
        return self._m.keys()

    def __iter__(self):
        return iter(self._m)

    def __len__(self):
        return len(self._m)

    def __bool__(self):
        return bool(self._m)

    def __eq__(self, other):
        return isinstance(other, LogHeap) and self._m == other._m

    def __hash__(self):
        if self._h is None:
            self._h = hash(frozenset(self._m.items()))
        return self._h

    def __repr__(self):
        inner = ", ".join(f"{r!r}: {q}" for r, q in self._m.items())
        return "LogHeap({" + inner + "})"

    def __add__(self, other: "LogHeap") -> "LogHeap":
        return lh_add(self, other)

    def __sub__(self, other: "LogHeap") -> "LogHeap":
        return lh_sub(self, other)

    def __le__(self, other: "LogHeap") -> bool:
        return all(q <= other.coeff(r) for r, q in self._m.items())

    def add(self, r, q=ONE) -> "LogHeap":
        m = dict(self._m)
        m[r] = m.get(r, ZERO) + Fraction(q)
        return LogHeap._raw(m)

    def remove(self, r, q=ONE) -> "LogHeap":
        m = dict(self._m)
        left = m.get(r, ZERO) - Fraction(q)
        if left < 0:
            raise ValueError(f"cannot remove {q} of {r!r}")
        if left:
            m[r] = left
        else:
            m.pop(r, None)
        return LogHeap._raw(m)

    def where(self, pred: Callable) -> "LogHeap":
        return LogHeap._raw({r: q for r, q in self._m.items() if pred(r)})

    def obs_chunks(self):
        return [(r, q) for r, q in self._m.items() if type(r) is ObsRes]

    def obligations(self) -> Bag:
        """The bag of the unique obligations chunk (empty when there is none)."""
        for r in self._m:
            if type(r) is ObsRes:
                return r.bag
        return Bag()

    def with_obligations(self, bag: Bag) -> "LogHeap":
        m = {r: q for r, q in self._m.items() if type(r) is not ObsRes}
        m[ObsRes(bag)] = ONE
        return LogHeap._raw(m)

    def at_loc(self, loc: HeapLoc) -> "LogHeap":
        return self.where(lambda r: res_loc(r) == loc)


EMPTY_HEAP = LogHeap()


def lh_add(a: LogHeap, b: LogHeap) -> LogHeap:
    if len(a) < len(b):
        a, b = b, a
    m = dict(a._m)
    for r, q in b._m.items():
        m[r] = m.get(r, ZERO) + q
    return LogHeap._raw(m)


def lh_sub(a: LogHeap, b: LogHeap) -> LogHeap:
    m = dict(a._m)
    for r, q in b._m.items():
        left = m.get(r, ZERO) - q
        if left < 0:
            raise ValueError(f"cannot subtract {q} of {r!r}")
        if left:
            m[r] = left
        else:
            del m[r]
    return LogHeap._raw(m)


def lh_scale(q, a: LogHeap) -> LogHeap:
    q = Fraction(q)
    if q < 0:
        raise ValueError("negative scale")
    if not q:
        return EMPTY_HEAP
    return LogHeap._raw({r: c * q for r, c in a._m.items()})


def lh_sum(heaps: Iterable[LogHeap]) -> LogHeap:
    m: Dict = {}
    for h in heaps:
        for r, q in h._m.items():
            m[r] = m.get(r, ZERO) + q
    return LogHeap._raw(m)


def lh_complete(h: LogHeap) -> bool:
    obs = h.obs_chunks()
    return len(obs) == 1 and obs[0][1] == 1


def lh_finite(h: LogHeap) -> bool:
    # Heaps are dictionaries, so the support is finite by construction;
    # what remains checkable is that every coefficient is a finite rational.
    return all(type(q) is Fraction for q in h._m.values())


def lh_consistent(h: LogHeap) -> bool:
    """Obligation chunks have natural coefficients and locations are unique."""
    seen: Dict[HeapLoc, object] = {}
    for r, q in h._m.items():
        if q <= 0:
            return False
        if type(r) is ObsRes:
            if q.denominator != 1:
                return False
            continue
        loc = res_loc(r)
        if loc is not None:
            if loc in seen and seen[loc] != r:
                return False
            seen[loc] = r
    return True


def inconsistency(h: LogHeap) -> Optional[str]:
    """A short description of the first consistency violation, if any."""
    seen: Dict[HeapLoc, object] = {}
    for r, q in h._m.items():
        if type(r) is ObsRes and q.denominator != 1:
            return f"obligations chunk with coefficient {q}"
        loc = res_loc(r)
        if loc is not None:
            if loc in seen and seen[loc] != r:
                return f"location {loc!r} held by {seen[loc]!r} and {r!r}"
            seen[loc] = r
    return None


# ----------------------------------------------------------- model relation


class Ctx:
    """Resolution context: invariant declarations and keyed signal names."""

    __slots__ = ("decls", "resolve_key")

    def __init__(self, decls: Optional[Mapping] = None, resolve_key: Optional[Callable] = None):
        self.decls = dict(decls or {})
        self.resolve_key = resolve_key

    def inv(self, ref: A.InvRef) -> A.Assertion:
        d = self.decls.get(ref.name)
        if d is None:
            raise FragmentError(f"unknown invariant {ref.name}")
        return d.apply(ref.args)


_NO_CTX = Ctx()


def _closed(e: Expr, env: Mapping) -> Optional[Expr]:
    """Substitute bound variables; ``None`` when a free variable is left unbound."""
    if not e.fv:
        return e
    if not e.fv <= env.keys():
        return None
    for x in e.fv:
        e = A.subst_expr(e, x, Val(env[x]))
    return e


def eval_in(e: Expr, env: Mapping, ctx: Ctx = _NO_CTX):
    """Evaluate ``e`` under ``env``; keyed references go through the context."""
    e = _closed(e, env)
    if e is None:
        return None
    return _eval(e, ctx)


def _eval(e: Expr, ctx: Ctx):
    t = type(e)
    if t is KeyRef:
        k = _eval(e.key, ctx)
        if k is None or ctx.resolve_key is None:
            return None
        return ctx.resolve_key(e.name, k)
    if t is Eq:
        a, b = _eval(e.left, ctx), _eval(e.right, ctx)
        return None if a is None or b is None else BoolV(a == b)
    if t is Not:
        a = _eval(e.arg, ctx)
        return BoolV(not a.b) if type(a) is BoolV else None
    if t is Op and any(_has_key(x) for x in e.args):
        args = [_eval(x, ctx) for x in e.args]
        if any(a is None for a in args):
            return None
        return eval_expr(Op(e.name, tuple(Val(a) for a in args)))
    return eval_expr(e)


def _has_key(e: Expr) -> bool:
    t = type(e)
    if t is KeyRef:
        return True
    if t is Eq:
        return _has_key(e.left) or _has_key(e.right)
    if t is Not:
        return _has_key(e.arg)
    if t is Op:
        return any(_has_key(x) for x in e.args)
    return False


def _unify(e: Expr, v, env: Dict, ctx: Ctx) -> Optional[Dict]:
    """Match expression ``e`` against value ``v``, binding at most one unbound variable."""
    if type(e) is Var and e.name not in env:
        env2 = dict(env)
        env2[e.name] = v
        return env2
    if e.fv <= env.keys():
        w = eval_in(e, env, ctx)
        return env if w is not None and w == v else None
    raise FragmentError(f"cannot bind variables of {e!r} by matching")


def _level(v) -> Optional[int]:
    return v.n if type(v) is IntV else None


def _flag(v) -> Optional[bool]:
    return v.b if type(v) is BoolV else None


def _inv_closed(ref: A.InvRef, env, ctx) -> Optional[A.InvRef]:
    args = []
    for a in ref.args:
        v = eval_in(a, env, ctx)
        if v is None:
            return None
        args.append(Val(v))
    return A.InvRef(ref.name, tuple(args))


def _unify_inv(ref: A.InvRef, inv: A.InvRef, env, ctx) -> Optional[Dict]:
    if ref.name != inv.name or len(ref.args) != len(inv.args):
        return None
    for a, b in zip(ref.args, inv.args):
        env = _unify(a, b.value, env, ctx)
        if env is None:
            return None
    return env


def _chunk_matches(a, r, env, ctx) -> Optional[Dict]:
    t = type(a)
    if t is A.PointsToAs:
        if type(r) is not PointsToRes:
            return None
        env = _unify(a.loc, r.loc, env, ctx)
        return None if env is None else _unify(a.value, r.value, env, ctx)
    if t is A.UninitAs:
        return _unify(a.loc, r.loc, env, ctx) if type(r) is UninitRes else None
    if t is A.MutexAs:
        if type(r) is not MutexRes:
            return None
        env = _unify(a.loc, r.mutex.loc, env, ctx)
        env = env and _unify(a.level, IntV(r.mutex.level), env, ctx)
        return env and _unify_inv(a.inv, r.inv, env, ctx)
    if t is A.LockedAs:
        if type(r) is not LockedRes or r.frac != a.held:
            return None
        env = _unify(a.loc, r.mutex.loc, env, ctx)
        env = env and _unify(a.level, IntV(r.mutex.level), env, ctx)
        return env and _unify_inv(a.inv, r.inv, env, ctx)
    if t is A.SignalAs:
        if type(r) is not SignalRes:
            return None
        env = _unify(a.sig, r.signal.id, env, ctx)
        env = env and _unify(a.level, IntV(r.signal.level), env, ctx)
        return env and _unify(a.flag, BoolV(r.flag), env, ctx)
    return None


_CHUNK_RES = {
    A.PointsToAs: PointsToRes,
    A.UninitAs: UninitRes,
    A.MutexAs: MutexRes,
    A.LockedAs: LockedRes,
    A.SignalAs: SignalRes,
}


def _chunk_key(a, env, ctx):
    """The location or signal id the chunk talks about, when already determined."""
    if type(a) is A.SignalAs:
        return eval_in(a.sig, env, ctx) if a.sig.fv <= env.keys() else None
    return eval_in(a.loc, env, ctx) if a.loc.fv <= env.keys() else None


def _match(a, h: LogHeap, env: Dict, ctx: Ctx) -> Iterator[Tuple[LogHeap, Dict]]:
    """Yield ``(claimed, env')`` with ``claimed <= h`` and ``claimed`` modelling ``a``."""
    t = type(a)
    if t is A.ATrue:
        yield EMPTY_HEAP, env
    elif t is A.AFalse:
        return
    elif t in _CHUNK_RES:
        want = _CHUNK_RES[t]
        key = _chunk_key(a, env, ctx)
        for r, q in list(h.items()):
            if type(r) is not want or q < a.frac:
                continue
            if key is not None:
                rk = r.signal.id if want is SignalRes else (r.loc if hasattr(r, "loc") else r.mutex.loc)
                if rk != key:
                    continue
            env2 = _chunk_matches(a, r, env, ctx)
            if env2 is not None:
                yield LogHeap.single(r, a.frac), env2
    elif t is A.ObsAs:
        items = []
        for te, le in a.items:
            tv, lv = eval_in(te, env, ctx), eval_in(le, env, ctx)
            if tv is None or lv is None:
                raise FragmentError("obligation items must be determined before matching")
            items.append(Obligation(tv, _level(lv)))
        r = ObsRes(Bag(items))
        if h.coeff(r) >= 1:
            yield LogHeap.single(r), env
    elif t is A.Pure:
        e = a.expr
        if type(e) is Eq and e.fv - env.keys():
            for lhs, rhs in ((e.left, e.right), (e.right, e.left)):
                if type(lhs) is Var and lhs.name not in env and rhs.fv <= env.keys():
                    v = eval_in(rhs, env, ctx)
                    if v is not None:
                        env2 = dict(env)
                        env2[lhs.name] = v
                        yield EMPTY_HEAP, env2
                    return
        if not e.fv <= env.keys():
            raise FragmentError(f"pure assertion has unbound variables {sorted(e.fv - env.keys())}")
        v = eval_in(e, env, ctx)
        if type(v) is BoolV and v.b:
            yield EMPTY_HEAP, env
    elif t is A.AStar:
        for h1, e1 in _match(a.left, h, env, ctx):
            rest = lh_sub(h, h1)
            for h2, e2 in _match(a.right, rest, e1, ctx):
                yield lh_add(h1, h2), e2
    elif t is A.AAnd:
        for h1, e1 in _match(a.left, h, env, ctx):
            for h2, e2 in _match(a.right, h, e1, ctx):
                m = dict(h1._m)
                for r, q in h2.items():
                    m[r] = max(m.get(r, ZERO), q)
                yield LogHeap._raw(m), e2
    elif t is A.AOr:
        yield from _match(a.left, h, env, ctx)
        yield from _match(a.right, h, env, ctx)
    elif t is A.BigOr:
        for alt in a.alts:
            yield from _match(alt, h, env, ctx)
    elif t is A.ANot:
        free = a.arg.fv - env.keys()
        if free:
            raise FragmentError(f"negation over unbound variables {sorted(free)}")
        for _ in _match(a.arg, h, env, ctx):
            return
        yield EMPTY_HEAP, env
    elif t is A.Exists:
        inner = {k: v for k, v in env.items() if k != a.var}
        for h1, e1 in _match(a.body, h, inner, ctx):
            if a.var not in e1:
                raise FragmentError(f"existential {a.var} is not determined by the heap")
            out = {k: v for k, v in e1.items() if k != a.var}
            if a.var in env:
                out[a.var] = env[a.var]
            yield h1, out
    elif t is A.InvRef:
        body = ctx.inv(A.InvRef(a.name, tuple(Val(eval_in(x, env, ctx)) for x in a.args)))
        yield from _match(body, h, env, ctx)
    else:
        raise FragmentError(f"unsupported assertion {t.__name__}")


def claims(h: LogHeap, a: A.Assertion, ctx: Ctx = _NO_CTX, env: Optional[Mapping] = None):
    """The first sub-heap of ``h`` that models ``a``, with its witness bindings, or ``None``."""
    for claimed, env2 in _match(a, h, dict(env or {}), ctx):
        return claimed, env2
    return None


def models(h: LogHeap, a: A.Assertion, ctx: Ctx = _NO_CTX, env: Optional[Mapping] = None) -> bool:
    """``h |= a``. Chunk assertions are satisfied by at least the stated fraction."""
    return claims(h, a, ctx, env) is not None


def carve(h: LogHeap, a: A.Assertion, ctx: Ctx = _NO_CTX, env: Optional[Mapping] = None):
    """Split ``h`` into ``(claimed, rest)`` with ``claimed |= a``; ``None`` if impossible."""
    c = claims(h, a, ctx, env)
    if c is None:
        return None
    return c[0], lh_sub(h, c[0])


def star_witness(h: LogHeap, a: A.AStar, ctx: Ctx = _NO_CTX):
    """Witness heaps ``(h1, h2)`` with ``h1 + h2 == h`` for a star, or ``None``."""
    for h1, e1 in _match(a.left, h, {}, ctx):
        rest = lh_sub(h, h1)
        if models(rest, a.right, ctx, e1):
            return h1, rest
    return None
