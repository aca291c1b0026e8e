"""Symbolic heaps for the proof checker.

A symbolic state is a chunk multiset over logical constants together with the
thread's obligations (or ``None`` when they are framed away), pure facts and a
solved substitution. Assertions are turned into patterns in disjunctive normal
form; ``consume`` matches a pattern against a state (frame inference), and
``produce`` adds one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from ..lang.printer import show_expr
from ..lang.syntax import Eq, Expr, KeyRef, Not, Val, Var
from ..lang.values import FALSE, TRUE
from . import assertions as A
from .arith import ONE_KEY, canon, feasible, from_lin, lin, proves, subst_expr
from .heaps import FragmentError

ONE = Fraction(1)
ZERO = Fraction(0)


class CheckError(Exception):
    """A failed side condition; ``rule`` names the rule that failed."""

    def __init__(self, rule: str, message: str):
        super().__init__(f"{rule}: {message}")
        self.rule = rule
        self.message = message


# ------------------------------------------------------------------ chunks


@dataclass(frozen=True)
class Chunk:
    kind: str  # pt, uninit, mutex, locked, signal, sigid
    args: tuple
    frac: Fraction = ONE

    def with_frac(self, q: Fraction) -> "Chunk":
        return Chunk(self.kind, self.args, q)

    def __str__(self) -> str:
        a = self.args
        q = "" if self.frac == 1 else f"[{self.frac}]"
        if self.kind == "pt":
            arrow = "|->" if self.frac == 1 else f"|-({self.frac})->"
            return f"{show_expr(a[0])} {arrow} {show_expr(a[1])}"
        if self.kind == "uninit":
            return f"{q}uninit({show_expr(a[0])})"
        if self.kind == "mutex":
            return f"{q}mutex({show_expr(a[0])}, {show_expr(a[1])}, {_inv_str(a[2])})"
        if self.kind == "locked":
            return f"{q}locked({show_expr(a[0])}, {show_expr(a[1])}, {_inv_str(a[2])}, {a[3]})"
        if self.kind == "signal":
            return f"{q}signal({show_expr(a[0])}, {show_expr(a[1])}, {show_expr(a[2])})"
        return f"{q}signal_id({show_expr(a[0])})"


def _inv_str(r: A.InvRef) -> str:
    if not r.args:
        return r.name
    return f"{r.name}({', '.join(show_expr(x) for x in r.args)})"


def _map_args(c: Chunk, f) -> Chunk:
    out = []
    for x in c.args:
        if isinstance(x, Expr):
            out.append(f(x))
        elif isinstance(x, A.InvRef):
            out.append(A.InvRef(x.name, tuple(f(y) for y in x.args)))
        else:
            out.append(x)
    return Chunk(c.kind, tuple(out), c.frac)


def show_obs(obs) -> str:
    if obs is None:
        return "(framed)"
    return "obs{" + ", ".join(f"({show_expr(t)}, {show_expr(l)})" for t, l in obs) + "}"


# ------------------------------------------------------------------ symbols


class Symbols:
    """Fresh logical constants; later constants are eliminated first."""

    def __init__(self, reserved=()):
        self.age: Dict[str, int] = {}
        self.used = set(reserved)
        self._ex = 0

    def fresh(self, base: str) -> str:
        base = base.lstrip("?_%").split("#")[0] or "v"
        name = base
        k = 1
        while name in self.used:
            name = f"{base}_{k}"
            k += 1
        self.used.add(name)
        self.age[name] = len(self.age)
        return name

    def exvar(self, base: str) -> str:
        self._ex += 1
        return f"?{base}#{self._ex}"


def _is_ex(name: str) -> bool:
    return name.startswith("?")


# ------------------------------------------------------------------ states


@dataclass(frozen=True)
class SymState:
    chunks: Tuple[Chunk, ...] = ()
    obs: Optional[Tuple[Tuple[Expr, Expr], ...]] = None
    facts: Tuple[Expr, ...] = ()
    sub: Mapping[str, Expr] = field(default_factory=dict)

    def c(self, e: Expr) -> Expr:
        return canon(e, self.sub)

    def proves(self, goal: Expr) -> bool:
        return proves(self.facts, self.c(goal))

    def equal(self, a: Expr, b: Expr) -> bool:
        a, b = self.c(a), self.c(b)
        if a == b:
            return True
        if type(a) is KeyRef or type(b) is KeyRef:
            if type(a) is not KeyRef or type(b) is not KeyRef or a.name != b.name:
                return False
            return self.equal(a.key, b.key)
        return proves(self.facts, canon(Eq(a, b)))

    def add_facts(self, fs) -> "SymState":
        return replace(self, facts=self.facts + tuple(fs))

    def __str__(self) -> str:
        parts = [str(c) for c in self.chunks]
        if self.obs is not None:
            parts.append(show_obs(self.obs))
        parts += [f"pure({show_expr(f)})" for f in self.facts]
        return " ** ".join(parts) if parts else "true"


EMPTY_STATE = SymState()


@dataclass(frozen=True)
class Pattern:
    exvars: Tuple[str, ...] = ()
    chunks: Tuple[Chunk, ...] = ()
    obs: Optional[Tuple[Tuple[Expr, Expr], ...]] = None
    facts: Tuple[Expr, ...] = ()


def _star(p: Pattern, q: Pattern) -> Pattern:
    if p.obs is not None and q.obs is not None:
        raise FragmentError("an assertion may hold at most one obligations chunk")
    return Pattern(p.exvars + q.exvars, p.chunks + q.chunks, p.obs if p.obs is not None else q.obs, p.facts + q.facts)


def _rename(a: A.Assertion, x: str, y: str) -> A.Assertion:
    return A.subst_assertion(a, x, Var(y))


def patterns(a: A.Assertion, decls: Mapping[str, A.InvDecl], syms: Symbols) -> List[Pattern]:
    """Disjunctive normal form of an assertion in the chunk fragment."""
    t = type(a)
    if t is A.ATrue:
        return [Pattern()]
    if t is A.AFalse:
        return []
    if t is A.AStar:
        ls = patterns(a.left, decls, syms)
        rs = patterns(a.right, decls, syms)
        return [_star(p, q) for p in ls for q in rs]
    if t is A.AOr:
        return patterns(a.left, decls, syms) + patterns(a.right, decls, syms)
    if t is A.BigOr:
        return [p for b in a.alts for p in patterns(b, decls, syms)]
    if t is A.Exists:
        v = syms.exvar(a.var)
        body = patterns(_rename(a.body, a.var, v), decls, syms)
        return [replace(p, exvars=(v,) + p.exvars) for p in body]
    if t is A.Pure:
        return [Pattern(facts=(a.expr,))]
    if t is A.ObsAs:
        return [Pattern(obs=tuple(a.items))]
    if t is A.PointsToAs:
        return [Pattern(chunks=(Chunk("pt", (a.loc, a.value), a.frac),))]
    if t is A.UninitAs:
        return [Pattern(chunks=(Chunk("uninit", (a.loc,), a.frac),))]
    if t is A.MutexAs:
        return [Pattern(chunks=(Chunk("mutex", (a.loc, a.level, a.inv), a.frac),))]
    if t is A.LockedAs:
        return [Pattern(chunks=(Chunk("locked", (a.loc, a.level, a.inv, a.held), a.frac),))]
    if t is A.SignalAs:
        return [Pattern(chunks=(Chunk("signal", (a.sig, a.level, a.flag), a.frac),))]
    if t is A.InvRef:
        d = decls.get(a.name)
        if d is None:
            raise FragmentError(f"unknown invariant {a.name}")
        return patterns(d.apply(a.args), decls, syms)
    raise FragmentError(f"{t.__name__} is outside the chunk-conjunction fragment")


# ------------------------------------------------------------ normalisation


def _age(syms: Symbols, name: str) -> int:
    return syms.age.get(name, -1)


def _solution(fact: Expr, syms: Symbols) -> Optional[Tuple[str, Expr]]:
    """An equation ``x = e`` implied by a fact, eliminating the newest constant."""
    t = type(fact)
    if t is Var:
        return fact.name, Val(TRUE)
    if t is Not and type(fact.arg) is Var:
        return fact.arg.name, Val(FALSE)
    if t is not Eq:
        return None
    a, b = fact.left, fact.right
    cands = []
    if type(a) is Var and a.name not in b.fv:
        cands.append((a.name, b))
    if type(b) is Var and b.name not in a.fv:
        cands.append((b.name, a))
    d = lin(a)
    for x, c in lin(b).items():
        d[x] = d.get(x, 0) - c
    for x, c in d.items():
        if type(x) is Var and abs(c) == 1 and all(x.name not in (y.fv if isinstance(y, Expr) else ()) for y in d if y is not x):
            rest = {y: -c * v for y, v in d.items() if y is not x and y != ONE_KEY}
            if d.get(ONE_KEY):
                rest[ONE_KEY] = -c * d[ONE_KEY]
            cands.append((x.name, from_lin(rest)))
    if not cands:
        return None
    return max(cands, key=lambda p: _age(syms, p[0]))


def normalize(st: SymState, syms: Symbols) -> Optional[SymState]:
    """Solve equalities, merge chunks, apply agreement; ``None`` if infeasible."""
    sub = dict(st.sub)
    chunks = list(st.chunks)
    facts = list(st.facts)
    obs = st.obs
    for _ in range(200):
        new_facts = []
        solved = None
        for f in facts:
            g = canon(f, sub)
            if type(g) is Val:
                if g.value == TRUE:
                    continue
                return None
            if solved is None:
                s = _solution(g, syms)
                if s is not None:
                    solved = s
                    continue
            if g not in new_facts:
                new_facts.append(g)
        facts = new_facts
        if solved is not None:
            x, e = solved
            e = canon(e, sub)
            sub = {k: canon(subst_expr(v, {x: e})) for k, v in sub.items()}
            sub[x] = e
            continue
        chunks = [_map_args(c, lambda y: canon(y, sub)) for c in chunks]
        if obs is not None:
            obs = tuple((canon(t, sub), canon(l, sub)) for t, l in obs)
        merged: List[Chunk] = []
        extra = []
        for c in chunks:
            for i, m in enumerate(merged):
                if m.kind == c.kind and m.args == c.args:
                    merged[i] = m.with_frac(m.frac + c.frac)
                    break
                if m.kind == "pt" and c.kind == "pt" and m.args[0] == c.args[0]:
                    extra.append(Eq(m.args[1], c.args[1]))
                    merged.append(c)
                    break
                if {m.kind, c.kind} in ({"pt", "uninit"}, {"pt", "mutex"}, {"uninit", "mutex"}) and m.args[0] == c.args[0]:
                    return None
            else:
                merged.append(c)
        if extra:
            facts = facts + extra
            chunks = merged
            continue
        chunks = merged
        break
    if not feasible(facts):
        return None
    return SymState(tuple(chunks), obs, tuple(facts), sub)


def produce(st: SymState, pat: Pattern, syms: Symbols, binding: Optional[Dict[str, Expr]] = None) -> Optional[SymState]:
    """``st ** pat`` with the pattern's existentials opened as fresh constants."""
    ren = {}
    for v in pat.exvars:
        if binding and v in binding:
            ren[v] = binding[v]
        else:
            ren[v] = Var(syms.fresh(v[1:].split("#")[0]))

    def f(e):
        return subst_expr(e, ren)

    chunks = tuple(_map_args(c, f) for c in pat.chunks)
    obs = st.obs
    if pat.obs is not None:
        if obs is not None:
            raise CheckError("Produce", "state already holds an obligations chunk")
        obs = tuple((f(t), f(l)) for t, l in pat.obs)
    facts = tuple(f(x) for x in pat.facts)
    return normalize(SymState(st.chunks + chunks, obs, st.facts + facts, st.sub), syms)


def produce_all(states: Sequence[SymState], pats: Sequence[Pattern], syms: Symbols) -> List[SymState]:
    out = []
    for st in states:
        for p in pats:
            s = produce(st, p, syms)
            if s is not None:
                out.append(s)
    return out


# ------------------------------------------------------------------ matching


class _Defer(Exception):
    pass


def _unbound(e: Expr, bind) -> List[str]:
    return [x for x in e.fv if _is_ex(x) and x not in bind]


def unify(pe: Expr, se: Expr, bind: Dict[str, Expr], st: SymState) -> Optional[Dict[str, Expr]]:
    """Extend ``bind`` so that ``pe`` equals ``se`` in ``st``; raise _Defer if undetermined."""
    pe = subst_expr(pe, bind)
    free = _unbound(pe, bind)
    if not free:
        return bind if st.equal(pe, se) else None
    if type(pe) is Var:
        out = dict(bind)
        out[pe.name] = st.c(se)
        return out
    if type(pe) is KeyRef:
        se = st.c(se)
        if type(se) is not KeyRef or se.name != pe.name:
            return None
        return unify(pe.key, se.key, bind, st)
    if len(free) == 1:
        x = free[0]
        d = lin(pe)
        xv = Var(x)
        c = d.get(xv, 0)
        if abs(c) == 1 and all(x not in (y.fv if isinstance(y, Expr) else ()) for y in d if y != xv):
            rest = {y: v for y, v in d.items() if y != xv}
            for y, v in lin(st.c(se)).items():
                rest[y] = rest.get(y, 0) - v
            sol = {y: -c * v for y, v in rest.items() if v}
            out = dict(bind)
            out[x] = st.c(from_lin(sol))
            return out
    raise _Defer()


def _unify_arg(pa, sa, bind, st):
    if isinstance(pa, Expr):
        return unify(pa, sa, bind, st)
    if isinstance(pa, A.InvRef):
        if not isinstance(sa, A.InvRef) or pa.name != sa.name or len(pa.args) != len(sa.args):
            return None
        for x, y in zip(pa.args, sa.args):
            bind = unify(x, y, bind, st)
            if bind is None:
                return None
        return bind
    return bind if pa == sa else None


def _chunk_unify(pc: Chunk, sc: Chunk, bind, st):
    if pc.kind != sc.kind:
        return None
    deferred = False
    for pa, sa in zip(pc.args, sc.args):
        try:
            b = _unify_arg(pa, sa, bind, st)
        except _Defer:
            deferred = True
            continue
        if b is None:
            return None
        bind = b
    if deferred:
        # retry once the other arguments are bound
        for pa, sa in zip(pc.args, sc.args):
            b = _unify_arg(pa, sa, bind, st)
            if b is None:
                return None
            bind = b
    return bind


class MatchFailure:
    def __init__(self):
        self.reason = "no match"
        self.depth = -1

    def note(self, depth: int, reason: str):
        if depth >= self.depth:
            self.depth = depth
            self.reason = reason


def _match_chunks(st, pending: List[Chunk], avail: List[Chunk], bind, fail: MatchFailure, depth=0) -> Iterator:
    if not pending:
        yield avail, bind
        return
    deferred_all = True
    for i, pc in enumerate(pending):
        rest = pending[:i] + pending[i + 1:]
        any_defer = False
        tried = False
        for j, sc in enumerate(avail):
            if sc.kind != pc.kind:
                continue
            try:
                b = _chunk_unify(pc, sc, bind, st)
            except _Defer:
                any_defer = True
                continue
            tried = True
            if b is None:
                continue
            if sc.frac < pc.frac:
                fail.note(depth, f"only fraction {sc.frac} of {_show_bound(pc, b)} is held")
                continue
            left = avail[:j] + avail[j + 1:]
            if sc.frac > pc.frac:
                left = left + [sc.with_frac(sc.frac - pc.frac)]
            yield from _match_chunks(st, rest, left, b, fail, depth + 1)
        if any_defer and not tried:
            continue
        deferred_all = False
        if not tried and not any_defer:
            fail.note(depth, f"no chunk matching {_show_bound(pc, bind)}")
        break
    if deferred_all:
        fail.note(depth, f"cannot determine existential witnesses for {', '.join(_show_bound(p, bind) for p in pending)}")


def _show_bound(c: Chunk, bind) -> str:
    return str(_map_args(c, lambda e: subst_expr(e, bind)))


def _match_obs(st: SymState, pobs, sobs, bind) -> Iterator[Dict[str, Expr]]:
    if not pobs:
        if not sobs:
            yield bind
        return
    (pt, pl), rest = pobs[0], pobs[1:]
    for j, (t, l) in enumerate(sobs):
        try:
            b = unify(pt, t, bind, st)
            if b is not None:
                b = unify(pl, l, b, st)
        except _Defer:
            continue
        if b is not None:
            yield from _match_obs(st, rest, sobs[:j] + sobs[j + 1:], b)


def consume(
    st: SymState, pat: Pattern, syms: Symbols, witness: Optional[Mapping[str, Expr]] = None, fail: Optional[MatchFailure] = None
) -> Optional[Tuple[SymState, Dict[str, Expr]]]:
    """Carve ``pat`` out of ``st``; returns the remainder and the existential binding."""
    fail = fail or MatchFailure()
    bind: Dict[str, Expr] = {}
    if witness:
        names = {v.split("#")[0][1:]: v for v in pat.exvars}
        for k, e in witness.items():
            if k in names:
                bind[names[k]] = st.c(e)
    base = len(pat.chunks)
    for avail, b in _match_chunks(st, list(pat.chunks), list(st.chunks), bind, fail):
        obs_binds = [b]
        if pat.obs is not None:
            if st.obs is None:
                fail.note(base, "obligations are not in scope here")
                return None
            obs_binds = list(_match_obs(st, list(pat.obs), list(st.obs), b))
            if not obs_binds:
                pobs = tuple((subst_expr(t, b), subst_expr(l, b)) for t, l in pat.obs)
                fail.note(base, f"held obligations {show_obs(st.obs)} do not match {show_obs(pobs)}")
                continue
        for ob in obs_binds:
            ok = _check_facts(st, pat.facts, ob, fail, base + 1)
            if ok is not None:
                rem = SymState(tuple(avail), None if pat.obs is not None else st.obs, st.facts, st.sub)
                return rem, ok
    return None


def _check_facts(st, facts, bind, fail, depth):
    bind = dict(bind)
    pending = list(facts)
    progress = True
    while progress:
        progress = False
        for f in list(pending):
            g = subst_expr(f, bind)
            free = _unbound(g, bind)
            if not free:
                continue
            if type(g) is Eq:
                for side, other in ((g.left, g.right), (g.right, g.left)):
                    if type(side) is Var and side.name in free and not _unbound(other, bind):
                        bind[side.name] = st.c(other)
                        progress = True
                        break
    for f in pending:
        g = subst_expr(f, bind)
        free = _unbound(g, bind)
        if free:
            fail.note(depth, f"existential {free[0].split('#')[0][1:]} needs an explicit witness")
            return None
        if not st.proves(g):
            fail.note(depth, f"cannot prove pure({show_expr(st.c(g))})")
            return None
    return bind


def entail_states(states: Sequence[SymState], pats: Sequence[Pattern], syms: Symbols, witness=None):
    """Every state entails some pattern; returns (ok, message, remainders)."""
    rems = []
    for st in states:
        fail = MatchFailure()
        for p in pats:
            r = consume(st, p, syms, witness, fail)
            if r is not None:
                rems.append((r[0], p, r[1]))
                break
        else:
            why = fail.reason if pats else "the target assertion is unsatisfiable"
            return False, f"{why}; state: {st}", rems
    return True, "", rems
