"""Symbolic expressions over logical constants and a linear-arithmetic decider.

Integer terms are kept in a canonical linear form; everything that is not
linear (list operations, signal names, ``size`` of an opaque list, ...) is an
atom. Facts are boolean expressions; provability is refutation of the negated
goal by Fourier-Motzkin elimination with integer tightening, splitting
disequalities into two strict cases.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from itertools import product
from math import floor, gcd
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from ..lang.syntax import Eq, Expr, KeyRef, Not, Op, Val, Var, eval_expr
from ..lang.values import FALSE, TRUE, BoolV, IntV, ListV

ONE_KEY = ""  # constant term of a linear form

Lin = Dict[object, int]


def _add(a: Lin, b: Lin, k: int = 1) -> Lin:
    out = dict(a)
    for t, c in b.items():
        v = out.get(t, 0) + k * c
        if v:
            out[t] = v
        else:
            out.pop(t, None)
    return out


def _const(n: int) -> Lin:
    return {ONE_KEY: n} if n else {}


def _size(arg: Expr) -> Lin:
    t = type(arg)
    if t is Val and type(arg.value) is ListV:
        return _const(len(arg.value.items))
    if t is Op:
        if arg.name == "nil":
            return {}
        if arg.name == "singleton":
            return _const(1)
        if arg.name == "append":
            return _add(_size(arg.args[0]), _size(arg.args[1]))
        if arg.name == "tail":
            return _add(_size(arg.args[0]), _const(-1))
    return {Op("size", (arg,)): 1}


def lin(e: Expr) -> Lin:
    """Linear form of an integer-valued expression (atoms for the rest)."""
    t = type(e)
    if t is Val:
        if type(e.value) is IntV:
            return _const(e.value.n)
        return {e: 1}
    if t is Op:
        if e.name == "+":
            return _add(lin(e.args[0]), lin(e.args[1]))
        if e.name == "-":
            return _add(lin(e.args[0]), lin(e.args[1]), -1)
        if e.name == "*":
            a, b = lin(e.args[0]), lin(e.args[1])
            for k, other in ((a, b), (b, a)):
                if set(k) <= {ONE_KEY}:
                    c = k.get(ONE_KEY, 0)
                    return {x: c * v for x, v in other.items()} if c else {}
            return {e: 1}
        if e.name == "size":
            return _size(e.args[0])
    return {e: 1}


def _atom_key(x) -> str:
    return repr(x)


def from_lin(f: Lin) -> Expr:
    terms = sorted(((x, c) for x, c in f.items() if x != ONE_KEY), key=lambda p: (p[1] < 0, _atom_key(p[0])))
    k = f.get(ONE_KEY, 0)
    out: Optional[Expr] = None
    if terms and terms[0][1] < 0 and k > 0:
        out, k = Val(IntV(k)), 0
    for x, c in terms:
        mag = abs(c)
        term = x if mag == 1 else Op("*", (Val(IntV(mag)), x))
        if out is None:
            out = term if c > 0 else Op("-", (Val(IntV(0)), term))
        else:
            out = Op("+" if c > 0 else "-", (out, term))
    if out is None:
        return Val(IntV(k))
    if k > 0:
        out = Op("+", (out, Val(IntV(k))))
    elif k < 0:
        out = Op("-", (out, Val(IntV(-k))))
    return out


_ARITH = ("+", "-", "*")


def subst_expr(e: Expr, sub: Mapping[str, Expr]) -> Expr:
    if not sub or not (e.fv & sub.keys()):
        return e
    t = type(e)
    if t is Var:
        return sub.get(e.name, e)
    if t is Eq:
        return Eq(subst_expr(e.left, sub), subst_expr(e.right, sub))
    if t is Not:
        return Not(subst_expr(e.arg, sub))
    if t is Op:
        return Op(e.name, tuple(subst_expr(a, sub) for a in e.args))
    if t is KeyRef:
        return KeyRef(e.name, subst_expr(e.key, sub))
    return e


def canon(e: Expr, sub: Mapping[str, Expr] = {}) -> Expr:
    """Substitute, evaluate closed parts and normalise arithmetic."""
    e = subst_expr(e, sub)
    return _canon(e)


def _canon(e: Expr) -> Expr:
    t = type(e)
    if t is Val or t is Var:
        return e
    if not e.fv and t is not KeyRef:
        v = eval_expr(e)
        if v is not None:
            return Val(v)
    if t is Op:
        if e.name in _ARITH or e.name == "size":
            inner = Op(e.name, tuple(_canon(a) for a in e.args))
            return from_lin(lin(inner))
        if e.name in ("<", "<="):
            d = _add(lin(_canon(e.args[1])), lin(_canon(e.args[0])), -1)
            if set(d) <= {ONE_KEY}:
                k = d.get(ONE_KEY, 0)
                return Val(TRUE if (k > 0 if e.name == "<" else k >= 0) else FALSE)
            return Op(e.name, (_canon(e.args[0]), _canon(e.args[1])))
        return Op(e.name, tuple(_canon(a) for a in e.args))
    if t is KeyRef:
        return KeyRef(e.name, _canon(e.key))
    if t is Not:
        a = _canon(e.arg)
        if type(a) is Val and type(a.value) is BoolV:
            return Val(FALSE if a.value.b else TRUE)
        if type(a) is Not:
            return a.arg
        return Not(a)
    if t is Eq:
        a, b = _canon(e.left), _canon(e.right)
        if a == b:
            return Val(TRUE)
        if type(a) is Val and type(b) is Val:
            return Val(FALSE)
        if type(b) is Val and type(b.value) is BoolV:
            return a if b.value.b else _canon(Not(a))
        if type(a) is Val and type(a.value) is BoolV:
            return b if a.value.b else _canon(Not(b))
        if _intish(a) or _intish(b):
            d = _add(lin(a), lin(b), -1)
            if set(d) <= {ONE_KEY}:
                return Val(TRUE if not d.get(ONE_KEY, 0) else FALSE)
        if type(a) is KeyRef and type(b) is KeyRef and a.name != b.name:
            return Val(FALSE)
        if repr(b) < repr(a):
            a, b = b, a
        return Eq(a, b)
    return e


def _intish(e: Expr) -> bool:
    t = type(e)
    if t is Val:
        return type(e.value) is IntV
    return t is Op and (e.name in _ARITH or e.name == "size")


# ------------------------------------------------------------- constraints

# A constraint is (frozenset of (atom_key, coeff) pairs, constant, kind) with
# kind ">=" meaning sum + const >= 0 and "!=" meaning sum + const != 0.
Constraint = Tuple[Tuple[Tuple[str, int], ...], int, str]


def _mk(f: Lin, kind: str) -> Optional[Constraint]:
    k = f.get(ONE_KEY, 0)
    terms = tuple(sorted((_atom_key(x), c) for x, c in f.items() if x != ONE_KEY))
    return (terms, k, kind)


def constraints_of(fact: Expr, negate: bool = False) -> List[List[Constraint]]:
    """Disjunction (outer list) of conjunctions of constraints for a fact."""
    t = type(fact)
    if t is Not:
        return constraints_of(fact.arg, not negate)
    if t is Op and fact.name in ("<", "<="):
        a, b = lin(fact.args[0]), lin(fact.args[1])
        strict = fact.name == "<"
        if negate:  # b <= a (or b < a)
            d = _add(a, b, -1)
            if not strict:
                d = _add(d, _const(-1))
        else:
            d = _add(b, a, -1)
            if strict:
                d = _add(d, _const(-1))
        return [[_mk(d, ">=")]]
    if t is Eq:
        d = _add(lin(fact.left), lin(fact.right), -1)
        if negate:
            return [[_mk(d, "!=")]]
        return [[_mk(d, ">="), _mk({x: -c for x, c in d.items()}, ">=")]]
    return []


def _size_atoms(cs: Iterable[Constraint]) -> List[Constraint]:
    out = []
    seen = set()
    for terms, _, _ in cs:
        for x, _ in terms:
            if x.startswith("Op('size'") and x not in seen:
                seen.add(x)
                out.append((((x, 1),), 0, ">="))
    return out


def _tighten(terms: Dict[str, int], k: int) -> Tuple[Dict[str, int], int]:
    g = 0
    for c in terms.values():
        g = gcd(g, abs(c))
    if g > 1:
        terms = {x: c // g for x, c in terms.items()}
        k = floor(Fraction(k, g))
    return terms, k


@lru_cache(maxsize=20000)
def _fm_feasible(cs: Tuple[Constraint, ...]) -> bool:
    rows: List[Tuple[Dict[str, int], int]] = []
    for terms, k, _ in cs:
        d = dict(terms)
        if not d:
            if k < 0:
                return False
            continue
        rows.append(_tighten(d, k))
    while rows:
        vars_ = {x for d, _ in rows for x in d}
        if not vars_:
            break
        # eliminate the variable producing the fewest combinations
        best = None
        for x in vars_:
            pos = sum(1 for d, _ in rows if d.get(x, 0) > 0)
            neg = sum(1 for d, _ in rows if d.get(x, 0) < 0)
            score = pos * neg - pos - neg
            if best is None or score < best[0]:
                best = (score, x)
        x = best[1]
        pos = [(d, k) for d, k in rows if d.get(x, 0) > 0]
        neg = [(d, k) for d, k in rows if d.get(x, 0) < 0]
        rest = [(d, k) for d, k in rows if x not in d]
        new = []
        for dp, kp in pos:
            for dn, kn in neg:
                a, b = dp[x], -dn[x]
                d: Dict[str, int] = {}
                for y in set(dp) | set(dn):
                    if y == x:
                        continue
                    v = b * dp.get(y, 0) + a * dn.get(y, 0)
                    if v:
                        d[y] = v
                kk = b * kp + a * kn
                if not d:
                    if kk < 0:
                        return False
                    continue
                new.append(_tighten(d, kk))
        rows = list({(tuple(sorted(d.items())), k): (d, k) for d, k in rest + new}.values())
        if len(rows) > 4000:
            return True  # give up: treat as satisfiable (sound for refutation)
    return True


def feasible(facts: Iterable[Expr]) -> bool:
    """False only if the facts are contradictory in linear integer arithmetic."""
    base: List[Constraint] = []
    disj: List[List[List[Constraint]]] = []
    for f in facts:
        if type(f) is Val and type(f.value) is BoolV:
            if not f.value.b:
                return False
            continue
        opts = constraints_of(f)
        if not opts:
            continue
        if len(opts) == 1 and all(c[2] == ">=" for c in opts[0]):
            base.extend(opts[0])
        else:
            disj.append(opts)
    diseqs = []
    for opts in disj:
        for conj in opts:
            for c in conj:
                if c[2] == "!=":
                    diseqs.append(c)
                else:
                    base.append(c)
    base += _size_atoms(base + diseqs)
    key = tuple(sorted(set(base)))
    if not _fm_feasible(key):
        return False
    if not diseqs:
        return True
    # each disequality is split into < 0 or > 0
    choices = []
    for terms, k, _ in diseqs:
        lo = (tuple((x, -c) for x, c in terms), -k - 1, ">=")
        hi = (terms, k - 1, ">=")
        choices.append((lo, hi))
    if len(choices) > 8:
        return True
    for pick in product(*choices):
        if _fm_feasible(tuple(sorted(set(base) | set(pick)))):
            return True
    return False


def proves(facts: Iterable[Expr], goal: Expr) -> bool:
    """Whether the facts entail the goal (sound, incomplete)."""
    facts = list(facts)
    g = _canon(goal)
    if type(g) is Val and type(g.value) is BoolV:
        return g.value.b or not feasible(facts)
    if g in facts:
        return True
    if not constraints_of(g):
        return not feasible(facts)
    return not feasible(facts + [_canon(Not(g))])
