"""Proof-outline checker.

An outline is a JSON tree mirroring the command. Each node names the proof
rule applied at that command and may state a precondition, a (result-indexed)
postcondition and rule-specific instantiation data. The checker executes the
program symbolically from the outline's precondition: assertions that are
omitted are computed, assertions that are stated are checked by entailment in
the chunk fragment. Loop invariants are the only assertions an outline must
supply.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .lang.parser import ParseError, parse_assertion, parse_expr
from .lang.printer import show_expr
from .lang.syntax import (
    Acquire,
    Alloc,
    AllocSignalId,
    AwaitAnn,
    BoundAnn,
    DonateLoc,
    DonateObs,
    DonateSig,
    Eq,
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
    Not,
    Op,
    Read,
    Release,
    SetSignal,
    Val,
    Var,
    While,
    Write,
    match_await,
)
from .lang.values import FALSE, TRUE, UNIT, IntV
from .logic import assertions as A
from .logic.arith import subst_expr
from .logic.heaps import FragmentError
from .logic.symbolic import (
    EMPTY_STATE,
    CheckError,
    Chunk,
    MatchFailure,
    Pattern,
    Symbols,
    SymState,
    consume,
    entail_states,
    normalize,
    patterns,
    produce,
    show_obs,
)

RULES = (
    "Frame", "ViewShift", "Exp", "Exists", "Fork", "If", "AwaitGen", "WhileDec",
    "Let", "Acquire", "Release", "NewMutex", "Alloc", "Read", "Assign",
)
VS_RULES = ("SemImp", "Trans", "Or", "NewSignal", "SetSignal", "MutInit", "GhostLoop", "AllocSigID", "SigInit")
WRAPPERS = ("Frame", "Exists")
UNIT_E = Val(UNIT)


# ------------------------------------------------------------------ outlines


@dataclass
class ProofOutline:
    rule: str
    pre: Optional[str] = None
    post: Optional[Union[str, Dict[str, str]]] = None
    inst: Dict[str, Any] = field(default_factory=dict)
    children: List["ProofOutline"] = field(default_factory=list)

    @classmethod
    def from_json(cls, d: Mapping) -> "ProofOutline":
        if not isinstance(d, Mapping) or "rule" not in d:
            raise ValueError("outline node must be an object with a 'rule' field")
        unknown = set(d) - {"rule", "pre", "post", "inst", "children", "note"}
        if unknown:
            raise ValueError(f"unknown outline field(s): {', '.join(sorted(unknown))}")
        return cls(
            d["rule"],
            d.get("pre"),
            d.get("post"),
            dict(d.get("inst") or {}),
            [cls.from_json(c) for c in d.get("children", [])],
        )

    def to_json(self) -> dict:
        out: Dict[str, Any] = {"rule": self.rule}
        if self.pre is not None:
            out["pre"] = self.pre
        if self.post is not None:
            out["post"] = self.post
        if self.inst:
            out["inst"] = self.inst
        if self.children:
            out["children"] = [c.to_json() for c in self.children]
        return out


@dataclass
class OutlineDoc:
    """A whole outline file: the thread's pre/postcondition and the proof tree."""

    proof: ProofOutline
    pre: str = "obs{}"
    post: Union[str, Dict[str, str]] = "obs{}"
    program: Optional[str] = None

    @classmethod
    def from_json(cls, d: Mapping) -> "OutlineDoc":
        if "proof" not in d:
            return cls(ProofOutline.from_json(d))
        return cls(ProofOutline.from_json(d["proof"]), d.get("pre", "obs{}"), d.get("post", "obs{}"), d.get("program"))

    def to_json(self) -> dict:
        out: Dict[str, Any] = {}
        if self.program:
            out["program"] = self.program
        out["pre"] = self.pre
        out["post"] = self.post
        out["proof"] = self.proof.to_json()
        return out


def load_outline(path) -> OutlineDoc:
    return OutlineDoc.from_json(json.loads(Path(path).read_text()))


def skeleton(c) -> ProofOutline:
    """The default outline for a command: one node per command, no assertions."""
    t = type(c)
    if isinstance(c, Expr):
        return ProofOutline("Exp")
    if t is Let:
        return ProofOutline("Let", children=[skeleton(c.bound), skeleton(c.body)])
    if t is If:
        return ProofOutline("If", children=[skeleton(c.cond), skeleton(c.then)])
    if t is Fork:
        return ProofOutline("Fork", children=[skeleton(c.body)])
    if t is While:
        aw = match_await(c.body)
        if aw is not None:
            return ProofOutline("AwaitGen", children=[skeleton(aw[2])])
        return ProofOutline("WhileDec", inst={"var": "n", "inv": "true"}, children=[skeleton(c.body)])
    if t is Ghost:
        return ProofOutline("ViewShift", children=[skeleton(c.cont)])
    name = {Alloc: "Alloc", Read: "Read", Write: "Assign", NewMutex: "NewMutex", Acquire: "Acquire", Release: "Release"}.get(t)
    if name is None:
        raise ValueError(f"no proof rule for {t.__name__}")
    return ProofOutline(name)


# ------------------------------------------------------------------ results


@dataclass
class Diagnostic:
    path: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.rule}: {self.message}"


@dataclass
class CheckResult:
    ok: bool
    diagnostics: List[Diagnostic] = field(default_factory=list)
    nodes: int = 0
    states: int = 0

    def __bool__(self) -> bool:
        return self.ok

    @property
    def error(self) -> Optional[Diagnostic]:
        return self.diagnostics[0] if self.diagnostics else None


class _NodeError(Exception):
    def __init__(self, path: str, err: CheckError):
        super().__init__(str(err))
        self.path = path
        self.err = err


# ------------------------------------------------------------------ shape


def _expected_rule(c) -> str:
    t = type(c)
    if isinstance(c, Expr):
        return "Exp"
    if t is While:
        return "AwaitGen" if match_await(c.body) is not None else "WhileDec"
    if t is Ghost:
        return "ViewShift"
    return {
        Let: "Let", If: "If", Fork: "Fork", Alloc: "Alloc", Read: "Read", Write: "Assign",
        NewMutex: "NewMutex", Acquire: "Acquire", Release: "Release",
    }.get(t, t.__name__)


def _subcmds(c) -> list:
    t = type(c)
    if t is Let:
        return [c.bound, c.body]
    if t is If:
        return [c.cond, c.then]
    if t is Fork:
        return [c.body]
    if t is While:
        aw = match_await(c.body)
        return [aw[2]] if aw is not None else [c.body]
    if t is Ghost:
        return [c.cont]
    return []


_REQUIRED_INST = {"WhileDec": ("var", "inv"), "Frame": ("frame",), "Exists": ("var", "assert")}


def check_shape(node: ProofOutline, c, path: str = "") -> List[Diagnostic]:
    """Tree shape and instantiation fields, before any symbolic execution."""
    here = f"{path}/{node.rule}"
    if node.rule not in RULES:
        return [Diagnostic(here, node.rule, f"unknown rule; expected one of {', '.join(RULES)}")]
    for k in _REQUIRED_INST.get(node.rule, ()):
        if k not in node.inst:
            return [Diagnostic(here, node.rule, f"missing instantiation field {k!r}")]
    wrapper = node.rule in WRAPPERS or (node.rule == "ViewShift" and type(c) is not Ghost)
    if wrapper:
        if len(node.children) != 1:
            return [Diagnostic(here, node.rule, "a wrapper node has exactly one child proving the same command")]
        return check_shape(node.children[0], c, here)
    want = _expected_rule(c)
    if node.rule != want:
        return [Diagnostic(here, node.rule, f"command is {type(c).__name__}; expected rule {want}")]
    subs = _subcmds(c)
    if len(node.children) != len(subs):
        return [Diagnostic(here, node.rule, f"expected {len(subs)} children, got {len(node.children)}")]
    out: List[Diagnostic] = []
    for i, (n, s) in enumerate(zip(node.children, subs)):
        out += check_shape(n, s, f"{here}[{i}]")
        if out:
            break
    return out


# ------------------------------------------------------------------ checker

Outcome = Tuple[Expr, SymState]


def _subst_many(a: A.Assertion, mapping: Mapping[str, Expr]) -> A.Assertion:
    keys = [k for k in mapping if k in a.fv]
    tmp = {k: f"%s{i}" for i, k in enumerate(keys)}
    for k in keys:
        a = A.subst_assertion(a, k, Var(tmp[k]))
    for k in keys:
        a = A.subst_assertion(a, tmp[k], mapping[k])
    return a


def _obs_minus(st: SymState, target: Expr, level: Optional[Expr]):
    for i, (t, l) in enumerate(st.obs or ()):
        if st.equal(t, target) and (level is None or st.equal(l, level)):
            return st.obs[:i] + st.obs[i + 1:]
    return None


def _find(st: SymState, kind: str, key: Expr, pos: int = 0):
    for i, c in enumerate(st.chunks):
        if c.kind == kind and st.equal(c.args[pos], key):
            return i, c
    return None


def _drop(st: SymState, i: int) -> SymState:
    return replace(st, chunks=st.chunks[:i] + st.chunks[i + 1:])


class Checker:
    def __init__(self, decls: Optional[Mapping[str, A.InvDecl]] = None):
        self.decls = dict(decls or {})
        self.syms = Symbols()
        self.nodes = 0
        self.states = 0

    # ---------------------------------------------------------- helpers

    def assertion(self, text, scope: Mapping[str, Expr], rule: str) -> A.Assertion:
        try:
            a = parse_assertion(text, self.decls) if isinstance(text, str) else text
        except ParseError as e:
            raise CheckError(rule, f"cannot parse assertion {text!r}: {e}")
        a = _subst_many(a, scope)
        bad = sorted(x for x in a.fv if x not in self.syms.used)
        if bad:
            raise CheckError(rule, f"unbound name {bad[0]!r} in assertion {text!r}")
        return a

    def pats(self, text, scope, rule) -> List[Pattern]:
        try:
            return patterns(self.assertion(text, scope, rule), self.decls, self.syms)
        except FragmentError as e:
            raise CheckError(rule, str(e))

    def expr(self, text, scope: Mapping[str, Expr], rule: str) -> Expr:
        try:
            e = parse_expr(text) if isinstance(text, str) else text
        except ParseError as err:
            raise CheckError(rule, f"cannot parse expression {text!r}: {err}")
        e = subst_expr(e, scope)
        bad = sorted(x for x in e.fv if x not in self.syms.used)
        if bad:
            raise CheckError(rule, f"unbound name {bad[0]!r} in {text!r}")
        return e

    def witness(self, inst, scope, rule):
        w = inst.get("witness") or {}
        return {k: self.expr(v, scope, rule) for k, v in w.items()}

    def ev(self, e: Expr, env: Mapping[str, Expr], rule: str) -> Expr:
        bad = sorted(x for x in e.fv if x not in env)
        if bad:
            raise CheckError(rule, f"unbound program variable {bad[0]!r}")
        return subst_expr(e, env)

    def norm(self, st: SymState) -> Optional[SymState]:
        self.states += 1
        return normalize(st, self.syms)

    def split(self, st: SymState, r: Expr) -> Tuple[Optional[SymState], Optional[SymState]]:
        return self.norm(st.add_facts([r])), self.norm(st.add_facts([Not(r)]))

    def entail(self, states, pats, rule, what, witness=None):
        ok, why, rems = entail_states(states, pats, self.syms, witness)
        if not ok:
            raise CheckError(rule, f"{what}: {why}")
        return rems

    def inv_pats(self, inv: A.InvRef, st: SymState, rule: str) -> List[Pattern]:
        d = self.decls.get(inv.name)
        if d is None:
            raise CheckError(rule, f"unknown invariant {inv.name}")
        try:
            ps = patterns(d.apply(inv.args), self.decls, self.syms)
        except FragmentError as e:
            raise CheckError(rule, str(e))
        if any(p.obs is not None for p in ps):
            raise CheckError(rule, f"lock invariant {inv.name} may not hold obligations")
        return ps

    # ---------------------------------------------------------- ghost steps

    def sig_ref(self, ref: Expr, env, rule: str, binder: bool = False) -> Tuple[Expr, dict]:
        if type(ref) is Var:
            if binder:
                s = Var(self.syms.fresh(ref.name))
                return s, {ref.name: s}
            return self.ev(ref, env, rule), {}
        return self.ev(ref, env, rule), {}

    def vs_new_signal(self, st: SymState, s: Expr, lev: Expr) -> SymState:
        if st.obs is None:
            raise CheckError("NewSignal", "obligations are not in scope here")
        s, lev = st.c(s), st.c(lev)
        if any(c.kind in ("signal", "sigid") and st.equal(c.args[0], s) for c in st.chunks):
            raise CheckError("NewSignal", f"signal {show_expr(s)} is not fresh")
        return replace(st, chunks=st.chunks + (Chunk("signal", (s, lev, Val(FALSE))),), obs=st.obs + ((s, lev),))

    def vs_set_signal(self, st: SymState, s: Expr) -> SymState:
        hit = _find(st, "signal", s)
        if hit is None:
            raise CheckError("SetSignal", f"no chunk for signal {show_expr(st.c(s))}; state: {st}")
        i, c = hit
        if c.frac != 1:
            raise CheckError("SetSignal", f"setting signal {show_expr(c.args[0])} needs the full chunk (held {c.frac})")
        if st.obs is None:
            raise CheckError("SetSignal", "obligations are not in scope here")
        rest = _obs_minus(st, c.args[0], c.args[1])
        if rest is None:
            raise CheckError(
                "SetSignal", f"no obligation for signal {show_expr(c.args[0])} in {show_obs(st.obs)}"
            )
        chunks = list(st.chunks)
        chunks[i] = Chunk("signal", (c.args[0], c.args[1], Val(TRUE)), 1)
        return replace(st, chunks=tuple(chunks), obs=rest)

    def vs_mut_init(self, st: SymState, m: Expr, lev: Expr, inv: A.InvRef, witness=None) -> List[SymState]:
        hit = _find(st, "uninit", m)
        if hit is None or hit[1].frac != 1:
            raise CheckError("MutInit", f"no full uninit({show_expr(st.c(m))}) chunk")
        base = _drop(st, hit[0])
        fail = MatchFailure()
        for p in self.inv_pats(inv, st, "MutInit"):
            r = consume(base, p, self.syms, witness, fail)
            if r is not None:
                rem = r[0]
                out = replace(rem, chunks=rem.chunks + (Chunk("mutex", (st.c(m), st.c(lev), inv)),))
                n = self.norm(out)
                return [n] if n is not None else []
        raise CheckError("MutInit", f"invariant {inv.name} does not hold: {fail.reason}; state: {base}")

    def vs_alloc_sig_id(self, st: SymState, s: Expr) -> SymState:
        return replace(st, chunks=st.chunks + (Chunk("sigid", (st.c(s),)),))

    def vs_sig_init(self, st: SymState, s: Expr, lev: Expr) -> SymState:
        hit = _find(st, "sigid", s)
        if hit is None:
            raise CheckError("SigInit", f"signal id {show_expr(st.c(s))} was not allocated")
        if st.obs is None:
            raise CheckError("SigInit", "obligations are not in scope here")
        st2 = _drop(st, hit[0])
        s, lev = st.c(s), st.c(lev)
        return replace(st2, chunks=st2.chunks + (Chunk("signal", (s, lev, Val(FALSE))),), obs=st2.obs + ((s, lev),))

    def ghost(self, g, states: List[SymState], env, inst) -> Tuple[List[SymState], Dict[str, Expr]]:
        t = type(g)
        out: List[SymState] = []
        if t is NewSignal:
            s, b = self.sig_ref(g.ref, env, "NewSignal", binder=True)
            lev = self.ev(g.level, env, "NewSignal")
            for st in states:
                n = self.norm(self.vs_new_signal(st, s, lev))
                if n is not None:
                    out.append(n)
            return out, b
        if t is SetSignal:
            s, _ = self.sig_ref(g.ref, env, "SetSignal")
            for st in states:
                n = self.norm(self.vs_set_signal(st, s))
                if n is not None:
                    out.append(n)
            return out, {}
        if t is MutInit:
            m = self.ev(g.mutex, env, "MutInit")
            lev = self.ev(g.level, env, "MutInit")
            inv = A.InvRef(g.inv, tuple(self.ev(a, env, "MutInit") for a in g.args))
            w = self.witness(inst, env, "MutInit")
            for st in states:
                inv_c = A.InvRef(inv.name, tuple(st.c(a) for a in inv.args))
                out += self.vs_mut_init(st, m, lev, inv_c, w)
            return out, {}
        if t is AllocSignalId:
            s, b = self.sig_ref(g.ref, env, "AllocSigID", binder=True)
            for st in states:
                n = self.norm(self.vs_alloc_sig_id(st, s))
                if n is not None:
                    out.append(n)
            return out, b
        if t is InitSignal:
            s, _ = self.sig_ref(g.ref, env, "SigInit")
            lev = self.ev(g.level, env, "SigInit")
            for st in states:
                n = self.norm(self.vs_sig_init(st, s, lev))
                if n is not None:
                    out.append(n)
            return out, ({g.bind: s} if g.bind else {})
        raise CheckError("ViewShift", f"{t.__name__} is not a source-level ghost command")

    def apply_vs(self, app: Mapping, states: List[SymState], scope) -> List[SymState]:
        """Forward application of a view-shift instantiation (outline JSON form)."""
        rule = app.get("rule")
        if rule not in VS_RULES:
            raise CheckError("ViewShift", f"unknown view-shift rule {rule!r}")
        if rule == "SemImp":
            pats = self.pats(app["to"], scope, "SemImp")
            rems = self.entail(states, pats, "SemImp", "semantic implication fails", self.witness(app, scope, "SemImp"))
            out = []
            for rem, p, _ in rems:
                n = produce(rem, p, self.syms)
                if n is not None:
                    out.append(n)
            return out
        if rule == "Trans":
            for sub in app.get("chain", []):
                states = self.apply_vs(sub, states, scope)
            return states
        if rule == "Or":
            cases = app.get("cases") or []
            out = []
            for st in states:
                errs = []
                for chain in cases:
                    try:
                        res = [st]
                        for sub in chain:
                            res = self.apply_vs(sub, res, scope)
                        if "to" in app:
                            self.entail(res, self.pats(app["to"], scope, "Or"), "Or", "case does not reach the target")
                        out += res
                        break
                    except CheckError as e:
                        errs.append(e.message)
                else:
                    raise CheckError("Or", "no case applies: " + "; ".join(errs))
            return out
        if rule == "GhostLoop":
            return self.ghost_loop(app, states, scope)
        if rule == "MutInit":
            m = self.expr(app["mutex"], scope, rule)
            lev = self.expr(app["level"], scope, rule)
            inv = self.assertion(app["inv"], scope, rule)
            if type(inv) is not A.InvRef:
                raise CheckError(rule, "inv must name a declared invariant")
            out = []
            for st in states:
                out += self.vs_mut_init(st, m, lev, inv, self.witness(app, scope, rule))
            return out
        s = self.expr(app["signal"], scope, rule) if rule not in ("AllocSigID",) or "signal" in app else None
        out = []
        for st in states:
            if rule == "NewSignal":
                res = self.vs_new_signal(st, s, self.expr(app["level"], scope, rule))
            elif rule == "SetSignal":
                res = self.vs_set_signal(st, s)
            elif rule == "AllocSigID":
                res = self.vs_alloc_sig_id(st, s)
            else:
                res = self.vs_sig_init(st, s, self.expr(app["level"], scope, rule))
            n = self.norm(res)
            if n is not None:
                out.append(n)
        return out

    def ghost_loop(self, app, states, scope) -> List[SymState]:
        var = app["var"]
        bound = self.expr(app["bound"], scope, "GhostLoop")
        inv = app["inv"]
        out = []
        for st in states:
            if not st.proves(Op("<=", (Val(IntV(0)), bound))):
                raise CheckError("GhostLoop", f"iteration count {show_expr(st.c(bound))} is not a natural number")
            (rem, _, _), = self.entail([st], self.pats(inv, {**scope, var: bound}, "GhostLoop"), "GhostLoop", "invariant does not hold initially")
            i = Var(self.syms.fresh(var))
            base = SymState(facts=st.facts + (Op("<", (Val(IntV(0)), i)),), sub=st.sub)
            body = [s for s in (produce(base, p, self.syms) for p in self.pats(inv, {**scope, var: i}, "GhostLoop")) if s]
            for sub in app.get("body", []):
                body = self.apply_vs(sub, body, {**scope, var: i})
            dec = Op("-", (i, Val(IntV(1))))
            self.entail(body, self.pats(inv, {**scope, var: dec}, "GhostLoop"), "GhostLoop", "an iteration does not decrease the measure by one")
            fin = [s for s in (produce(rem, p, self.syms) for p in self.pats(inv, {**scope, var: Val(IntV(0))}, "GhostLoop")) if s]
            out += fin
        return out

    # ---------------------------------------------------------- locks

    def acquire(self, st: SymState, m: Expr, rule: str) -> List[SymState]:
        hit = _find(st, "mutex", m)
        if hit is None:
            if _find(st, "locked", m):
                raise CheckError(rule, f"already holds the lock {show_expr(st.c(m))}")
            if _find(st, "uninit", m):
                raise CheckError(rule, f"mutex {show_expr(st.c(m))} is not initialised")
            raise CheckError(rule, f"holds no mutex chunk for {show_expr(st.c(m))}; state: {st}")
        i, c = hit
        loc, lev, inv = c.args
        if st.obs is None:
            raise CheckError(rule, "obligations are not in scope here")
        for t, l in st.obs:
            if not st.proves(Op("<", (lev, l))):
                raise CheckError(
                    rule,
                    f"mutex level {show_expr(lev)} is not below the level of all held obligations {show_obs(st.obs)}",
                )
        base = _drop(st, i)
        base = replace(base, chunks=base.chunks + (Chunk("locked", (loc, lev, inv, c.frac)),), obs=st.obs + ((loc, lev),))
        return [s for s in (produce(base, p, self.syms) for p in self.inv_pats(inv, st, rule)) if s is not None]

    def release(self, st: SymState, m: Expr, rule: str, witness=None) -> SymState:
        hit = _find(st, "locked", m)
        if hit is None or hit[1].frac != 1:
            raise CheckError(rule, f"does not hold the lock {show_expr(st.c(m))}")
        i, c = hit
        loc, lev, inv, held = c.args
        rest = _obs_minus(st, loc, lev)
        if rest is None:
            raise CheckError(rule, f"no obligation for mutex {show_expr(loc)} in {show_obs(st.obs)}")
        base = _drop(st, i)
        fail = MatchFailure()
        for p in self.inv_pats(inv, st, rule):
            r = consume(base, p, self.syms, witness, fail)
            if r is not None:
                rem = r[0]
                return replace(rem, chunks=rem.chunks + (Chunk("mutex", (loc, lev, inv), held),), obs=rest)
        raise CheckError(rule, f"lock invariant {inv.name} is not re-established: {fail.reason}; state: {base}")

    # ---------------------------------------------------------- traversal

    def run(self, node: ProofOutline, c, states: List[SymState], env: Dict[str, Expr], path: str) -> List[Outcome]:
        here = f"{path}/{node.rule}"
        self.nodes += 1
        try:
            if node.pre is not None:
                self.entail(states, self.pats(node.pre, env, node.rule), node.rule, "precondition does not hold",
                            self.witness(node.inst, env, node.rule))
            outs = self.dispatch(node, c, states, env, here)
            if node.post is not None:
                self.check_post(node.post, outs, env, node.rule, self.witness(node.inst, env, node.rule))
            return outs
        except CheckError as e:
            raise _NodeError(here, e)

    def check_post(self, post, outs: List[Outcome], env, rule, witness=None):
        if isinstance(post, str):
            bind, text = None, post
        else:
            bind, text = post.get("bind"), post["assert"]
        for r, st in outs:
            scope = dict(env)
            if bind:
                scope[bind] = r
            self.entail([st], self.pats(text, scope, rule), rule, "postcondition does not hold", witness)

    def dispatch(self, node, c, states, env, here) -> List[Outcome]:
        rule = node.rule
        kids = node.children
        t = type(c)
        if rule == "Frame":
            return self.frame(node, c, states, env, here)
        if rule == "Exists":
            return self.exists(node, c, states, env, here)
        if rule == "ViewShift" and t is not Ghost:
            scope = env
            for app in node.inst.get("before", []):
                states = self.apply_vs(app, states, scope)
            outs = self.run(kids[0], c, states, env, here)
            after = node.inst.get("after", [])
            if not after:
                return outs
            res = []
            for r, st in outs:
                for s in self._apply_after(after, st, env):
                    res.append((r, s))
            return res
        if rule == "Exp":
            return [(self.exp(c, st, env), st) for st in states]
        if rule == "Let":
            out = []
            for r, st in self.run(kids[0], c.bound, states, env, here + "[0]"):
                env2 = dict(env)
                if c.var != "_":
                    env2[c.var] = r
                out += self.run(kids[1], c.body, [st], env2, here + "[1]")
            return out
        if rule == "If":
            out = []
            for r, st in self.run(kids[0], c.cond, states, env, here + "[0]"):
                yes, no = self.split(st, r)
                if yes is not None:
                    out += self.run(kids[1], c.then, [yes], env, here + "[1]")
                if no is not None:
                    out.append((UNIT_E, no))
            return out
        if rule == "Alloc":
            v = self.ev(c.arg, env, rule)
            out = []
            for st in states:
                loc = Var(self.syms.fresh("loc"))
                n = self.norm(replace(st, chunks=st.chunks + (Chunk("pt", (loc, st.c(v))),)))
                if n is not None:
                    out.append((loc, n))
            return out
        if rule == "NewMutex":
            out = []
            for st in states:
                loc = Var(self.syms.fresh("mtx"))
                n = self.norm(replace(st, chunks=st.chunks + (Chunk("uninit", (loc,)),)))
                if n is not None:
                    out.append((loc, n))
            return out
        if rule == "Read":
            loc = self.ev(c.loc, env, rule)
            out = []
            for st in states:
                hit = _find(st, "pt", loc)
                if hit is None:
                    raise CheckError(rule, f"no points-to chunk for {show_expr(st.c(loc))}; state: {st}")
                out.append((hit[1].args[1], st))
            return out
        if rule == "Assign":
            loc = self.ev(c.loc, env, rule)
            v = self.ev(c.value, env, rule)
            out = []
            for st in states:
                self._defined(v, st, rule)
                hit = _find(st, "pt", loc)
                if hit is None:
                    raise CheckError(rule, f"no points-to chunk for {show_expr(st.c(loc))}; state: {st}")
                i, ch = hit
                if ch.frac != 1:
                    raise CheckError(rule, f"write requires full permission (held {ch.frac} of {show_expr(st.c(loc))})")
                chunks = list(st.chunks)
                chunks[i] = Chunk("pt", (ch.args[0], st.c(v)))
                n = self.norm(replace(st, chunks=tuple(chunks)))
                if n is not None:
                    out.append((UNIT_E, n))
            return out
        if rule == "Acquire":
            m = self.ev(c.mutex, env, rule)
            return [(UNIT_E, s) for st in states for s in self.acquire(st, m, rule)]
        if rule == "Release":
            m = self.ev(c.mutex, env, rule)
            w = self.witness(node.inst, env, rule)
            out = []
            for st in states:
                n = self.norm(self.release(st, m, rule, w))
                if n is not None:
                    out.append((UNIT_E, n))
            return out
        if rule == "ViewShift":
            g_states, binds = self.ghost(c.g, states, env, node.inst)
            env2 = {**env, **binds}
            return self.run(kids[0], c.cont, g_states, env2, here + "[0]")
        if rule == "Fork":
            return self.fork(node, c, states, env, here)
        if rule == "WhileDec":
            return self.while_dec(node, c, states, env, here)
        if rule == "AwaitGen":
            return self.await_gen(node, c, states, env, here)
        raise CheckError(rule, "rule does not apply here")

    def _apply_after(self, after, st, env):
        return self.apply_vs({"rule": "Trans", "chain": after}, [st], env)

    def _defined(self, e: Expr, st: SymState, rule: str):
        for sub in _subexprs(e):
            if type(sub) is Op and sub.name in ("head", "tail"):
                if not st.proves(Op("<", (Val(IntV(0)), Op("size", (sub.args[0],))))):
                    raise CheckError(rule, f"{sub.name} of a possibly empty list {show_expr(st.c(sub.args[0]))}")

    def exp(self, c: Expr, st: SymState, env) -> Expr:
        e = self.ev(c, env, "Exp")
        self._defined(e, st, "Exp")
        return st.c(e)

    def frame(self, node, c, states, env, here) -> List[Outcome]:
        pats = self.pats(node.inst["frame"], env, "Frame")
        if any(p.obs is not None for p in pats):
            raise CheckError("Frame", "a frame may not hold obligations")
        out = []
        for rem, p, bind in self.entail(states, pats, "Frame", "frame is not held", self.witness(node.inst, env, "Frame")):
            for r, st in self.run(node.children[0], c, [rem], env, here):
                n = produce(st, p, self.syms, bind)
                if n is not None:
                    out.append((r, n))
        return out

    def exists(self, node, c, states, env, here) -> List[Outcome]:
        var, body = node.inst["var"], node.inst["assert"]
        hole = Var(self.syms.fresh(var))
        inner = self.assertion(body, {**env, var: hole}, "Exists")
        pats = self.pats(A.Exists(var, A.subst_assertion(inner, hole.name, Var(var))), {}, "Exists")
        out = []
        for rem, _, _ in self.entail(states, pats, "Exists", "existential precondition does not hold",
                                     self.witness(node.inst, env, "Exists")):
            x = Var(self.syms.fresh(var))
            for q in self.pats(body, {**env, var: x}, "Exists"):
                st = produce(rem, q, self.syms)
                if st is not None:
                    out += self.run(node.children[0], c, [st], {**env, var: x}, here)
        return out

    # ---------------------------------------------------------- fork

    def fork(self, node, c: Fork, states, env, here) -> List[Outcome]:
        out = []
        for st in states:
            child = SymState(obs=(), facts=st.facts, sub=st.sub)
            parent = st
            for d in c.donations:
                if type(d) is DonateObs:
                    s = self.ev(d.ref, env, "Fork")
                    if parent.obs is None:
                        raise CheckError("Fork", "obligations are not in scope here")
                    for i, (t, l) in enumerate(parent.obs):
                        if parent.equal(t, s):
                            child = replace(child, obs=child.obs + ((t, l),))
                            parent = replace(parent, obs=parent.obs[:i] + parent.obs[i + 1:])
                            break
                    else:
                        raise CheckError("Fork", f"no obligation for {show_expr(st.c(s))} to donate in {show_obs(parent.obs)}")
                elif type(d) is DonateSig:
                    s = self.ev(d.ref, env, "Fork")
                    moved = [ch for ch in parent.chunks if ch.kind == "signal" and parent.equal(ch.args[0], s)]
                    if not moved:
                        raise CheckError("Fork", f"no chunk for signal {show_expr(st.c(s))} to donate")
                    parent = replace(parent, chunks=tuple(ch for ch in parent.chunks if ch not in moved))
                    child = replace(child, chunks=child.chunks + tuple(moved))
                elif type(d) is DonateLoc:
                    loc = self.ev(d.loc, env, "Fork")
                    keep, give = [], []
                    for ch in parent.chunks:
                        if ch.kind in ("pt", "uninit", "mutex", "locked") and parent.equal(ch.args[0], loc):
                            part = ch.frac * d.frac
                            give.append(ch.with_frac(part))
                            if ch.frac > part:
                                keep.append(ch.with_frac(ch.frac - part))
                        else:
                            keep.append(ch)
                    if not give:
                        raise CheckError("Fork", f"nothing held at {show_expr(st.c(loc))} to donate")
                    parent = replace(parent, chunks=tuple(keep))
                    child = replace(child, chunks=child.chunks + tuple(give))
            child = self.norm(child)
            if child is not None:
                outs = self.run(node.children[0], c.body, [child], dict(env), here + "[0]")
                self.entail([s for _, s in outs], [Pattern(obs=())], "Fork", "the forked thread may end holding obligations")
            parent = self.norm(parent)
            if parent is not None:
                out.append((UNIT_E, parent))
        return out

    # ---------------------------------------------------------- loops

    def while_dec(self, node, c: While, states, env, here) -> List[Outcome]:
        if not isinstance(c.ann, BoundAnn):
            raise CheckError("WhileDec", "loop has no bound annotation")
        var, inv = node.inst["var"], node.inst["inv"]
        bound = self.ev(c.ann.bound, env, "WhileDec")
        out = []
        for st in states:
            rems = self.entail([st], self.pats(inv, {**env, var: bound}, "WhileDec"), "WhileDec",
                               "loop invariant does not hold on entry", self.witness(node.inst, env, "WhileDec"))
            frame = rems[0][0]
            n = Var(self.syms.fresh(var))
            scope = {**env, var: n}
            base = SymState(facts=st.facts, sub=st.sub)
            body_states = [s for s in (produce(base, p, self.syms) for p in self.pats(inv, scope, "WhileDec")) if s]
            for bs in body_states:
                if not bs.proves(Op("<", (Val(IntV(0)), n))):
                    raise CheckError("WhileDec", f"the invariant does not guarantee a positive bound (0 < {n.name}); state: {bs}")
            dec = {**env, var: Op("-", (n, Val(IntV(1))))}
            for r, s in self.run(node.children[0], c.body, body_states, env, here + "[0]"):
                yes, no = self.split(s, r)
                if yes is not None:
                    self.entail([yes], self.pats(inv, dec, "WhileDec"), "WhileDec",
                                f"loop invariant is not re-established for {n.name} - 1")
                if no is not None:
                    fin = self.norm(replace(no, chunks=no.chunks + frame.chunks))
                    if fin is not None:
                        out.append((UNIT_E, fin))
        return out

    def await_gen(self, node, c: While, states, env, here) -> List[Outcome]:
        aw = match_await(c.body)
        if not isinstance(c.ann, AwaitAnn):
            raise CheckError("AwaitGen", "await loop has no signal set")
        m_e, _, inner = aw
        m = self.ev(m_e, env, "AwaitGen")
        sigs = [self.ev(s, env, "AwaitGen") for s in c.ann.sigs]
        witness = self.witness(node.inst, env, "AwaitGen")
        out = []
        for st in states:
            if "inv" in node.inst:
                pats = self.pats(node.inst["inv"], env, "AwaitGen")
                rems = self.entail([st], pats, "AwaitGen", "await precondition does not hold", witness)
                frame = rems[0][0]
                base = SymState(facts=st.facts, sub=st.sub)
                entry = [s for s in (produce(base, p, self.syms) for p in pats) if s]
            else:
                pats = [Pattern(chunks=st.chunks, obs=st.obs)]
                frame = SymState()
                entry = [st]
            for e in entry:
                body_in = self.acquire(e, m, "AwaitGen")
                for r, s in self.run(node.children[0], inner, body_in, env, here + "[0]"):
                    yes, no = self.split(s, r)
                    if yes is not None:
                        done = self.norm(self.release(yes, m, "AwaitGen", witness))
                        if done is not None:
                            fin = self.norm(replace(done, chunks=done.chunks + frame.chunks))
                            if fin is not None:
                                out.append((UNIT_E, fin))
                    if no is not None:
                        self.wait_check(no, m, sigs)
                        again = self.norm(self.release(no, m, "AwaitGen", witness))
                        if again is not None:
                            self.entail([again], pats, "AwaitGen", "a failed iteration does not re-establish the await precondition")
        return out

    def wait_check(self, st: SymState, m: Expr, sigs: Sequence[Expr]):
        held = list(st.obs or ())
        for i, (t, l) in enumerate(held):
            if st.equal(t, m):
                del held[i]
                break
        level_err = None
        for s in sigs:
            for ch in st.chunks:
                if ch.kind != "signal" or not st.equal(ch.args[0], s):
                    continue
                if not st.proves(Eq(ch.args[2], Val(FALSE))):
                    continue
                lev = ch.args[1]
                if all(st.proves(Op("<", (lev, l))) for _, l in held):
                    return
                level_err = (ch.args[0], lev)
        if level_err is not None:
            s, lev = level_err
            raise CheckError(
                "AwaitGen",
                f"signal {show_expr(s)} at level {show_expr(lev)} is not below the level of all held obligations "
                f"{show_obs(tuple(held))}",
            )
        names = ", ".join(show_expr(st.c(s)) for s in sigs)
        raise CheckError("AwaitGen", f"no unset signal of {{{names}}} is available to wait for; state: {st}")



def _subexprs(e: Expr):
    stack = [e]
    while stack:
        x = stack.pop()
        yield x
        t = type(x)
        if t is Op:
            stack += list(x.args)
        elif t is Eq:
            stack += [x.left, x.right]
        elif t is Not:
            stack.append(x.arg)
        elif t is KeyRef:
            stack.append(x.key)


# ------------------------------------------------------------------ API


def _doc(o) -> OutlineDoc:
    if isinstance(o, OutlineDoc):
        return o
    if isinstance(o, ProofOutline):
        return OutlineDoc(o)
    return OutlineDoc.from_json(o)


def check_outline(o, c, decls: Optional[Mapping[str, A.InvDecl]] = None, pre=None, post=None) -> CheckResult:
    """Check an outline against a command; the first failing node is reported."""
    doc = _doc(o)
    pre = doc.pre if pre is None else pre
    post = doc.post if post is None else post
    shape = check_shape(doc.proof, c)
    if shape:
        return CheckResult(False, shape)
    ck = Checker(decls)
    # free names of the outline's pre and post act as logical parameters
    for spec in (pre, post):
        bound = ()
        if isinstance(spec, Mapping):
            spec, bound = spec.get("assert", "true"), (spec.get("bind"),)
        try:
            a = parse_assertion(spec, ck.decls) if isinstance(spec, str) else spec
        except ParseError:
            continue
        ck.syms.used.update(x for x in a.fv if x not in bound)
    try:
        try:
            states = [s for s in (produce(EMPTY_STATE, p, ck.syms) for p in ck.pats(pre, {}, "Outline")) if s]
        except CheckError as e:
            raise _NodeError("", e)
        if any(s.obs is None for s in states):
            return CheckResult(False, [Diagnostic("", "Outline", "the precondition must state the thread's obligations")])
        outs = ck.run(doc.proof, c, states, {}, "")
        try:
            ck.check_post(post, outs, {}, "Outline")
        except CheckError as e:
            raise _NodeError("", e)
    except _NodeError as e:
        return CheckResult(False, [Diagnostic(e.path or "/", e.err.rule, e.err.message)], ck.nodes, ck.states)
    return CheckResult(True, [], ck.nodes, ck.states)


def check_program_outline(program, o) -> CheckResult:
    return check_outline(o, program.cmd, program.decls)


def entail_diag(a, b, decls=None, witness: Optional[Mapping[str, str]] = None) -> Tuple[bool, str]:
    ck = Checker(decls)
    a = parse_assertion(a, ck.decls) if isinstance(a, str) else a
    b = parse_assertion(b, ck.decls) if isinstance(b, str) else b
    for x in a.fv | b.fv:
        ck.syms.used.add(x)
    states = [s for s in (produce(EMPTY_STATE, p, ck.syms) for p in patterns(a, ck.decls, ck.syms)) if s]
    w = {k: parse_expr(v) if isinstance(v, str) else v for k, v in (witness or {}).items()}
    ok, why, _ = entail_states(states, patterns(b, ck.decls, ck.syms), ck.syms, w)
    return ok, why


def entail(a, b, decls=None, witness=None) -> bool:
    """Syntactic entailment in the chunk fragment (raises FragmentError outside it)."""
    return entail_diag(a, b, decls, witness)[0]


@dataclass
class ViewShiftApp:
    rule: str
    frm: Any
    to: Any = None
    inst: Dict[str, Any] = field(default_factory=dict)


def check_viewshift(vs: ViewShiftApp, decls=None) -> CheckResult:
    """Check ``frm`` view-shifts to ``to`` by the named rule."""
    ck = Checker(decls)
    try:
        frm = parse_assertion(vs.frm, ck.decls) if isinstance(vs.frm, str) else vs.frm
        to = vs.to
        if isinstance(to, str):
            to = parse_assertion(to, ck.decls)
        names = set(frm.fv) | (set(to.fv) if to is not None else set())
        for k, v in vs.inst.items():
            if isinstance(v, str) and k in ("signal", "level", "mutex", "bound"):
                try:
                    names |= parse_expr(v).fv
                except ParseError:
                    pass
        for x in names:
            ck.syms.used.add(x)
        app = dict(vs.inst)
        app["rule"] = vs.rule
        if vs.rule == "Or":
            if type(frm) is not A.AOr:
                raise CheckError("Or", "the source of an Or shift must be a disjunction")
            cases = app.get("cases") or [[], []]
            if len(cases) != 2:
                raise CheckError("Or", "an Or shift needs one case per disjunct")
            for part, chain in zip((frm.left, frm.right), cases):
                states = [s for s in (produce(EMPTY_STATE, p, ck.syms) for p in patterns(part, ck.decls, ck.syms)) if s]
                for sub in chain:
                    states = ck.apply_vs(sub, states, {})
                if to is not None:
                    ck.entail(states, patterns(to, ck.decls, ck.syms), "Or", "case does not reach the target")
            return CheckResult(True, [], ck.nodes, ck.states)
        if vs.rule == "SemImp":
            app.setdefault("to", to if to is not None else A.ATrue())
        states = [s for s in (produce(EMPTY_STATE, p, ck.syms) for p in patterns(frm, ck.decls, ck.syms)) if s]
        if vs.rule in ("NewSignal", "SetSignal", "SigInit") and any(s.obs is None for s in states):
            raise CheckError(vs.rule, "the source assertion must state the obligations")
        states = ck.apply_vs(app, states, {})
        if to is not None:
            ck.entail(states, patterns(to, ck.decls, ck.syms), vs.rule, "the shifted state does not entail the target")
        return CheckResult(True, [], ck.nodes, ck.states)
    except CheckError as e:
        return CheckResult(False, [Diagnostic("", e.rule, e.message)], ck.nodes, ck.states)
    except (FragmentError, ParseError, KeyError) as e:
        return CheckResult(False, [Diagnostic("", vs.rule, f"malformed view shift: {e}")], ck.nodes, ck.states)
