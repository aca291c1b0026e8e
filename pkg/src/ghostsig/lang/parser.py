"""Hand-written recursive-descent parser for programs, expressions and assertions."""

from __future__ import annotations

import re
from fractions import Fraction
from typing import Dict, List, NamedTuple, Optional, Tuple

from ..bags import HeapLoc, SignalId
from ..logic import assertions as A
from .syntax import (
    OPS,
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
    WaitCheck,
    While,
    WhileDecStarted,
    Write,
    make_await,
    walk,
)
from .values import FALSE, TRUE, UNIT, IntV, ListV


class ParseError(Exception):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {msg}" if line else msg)
        self.msg = msg
        self.line = line
        self.col = col


class Program(NamedTuple):
    decls: Dict[str, A.InvDecl]
    cmd: object


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|//[^\n]*)
  | (?P<punct>\|->|\|-\(|\)->|\*\*|\\/|/\\|:=|==|!=|<=|>=|\#\[|[-+*/<>()\[\]{},;=!~.@¬])
  | (?P<lit>\#[ls]\d+)
  | (?P<int>\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_']*)
""",
    re.VERBOSE,
)

KEYWORDS = {
    "let", "in", "if", "then", "while", "do", "skip", "fork", "cons", "new_mutex",
    "acquire", "release", "with", "await", "ghost", "new_signal", "set_signal",
    "mut_init", "alloc_signal_id", "init_signal", "at", "as", "invariant", "true",
    "false", "unit", "nil", "bound", "while_started", "await_started", "justify_wait",
}

_CMP = {"==", "!=", "<", "<=", ">", ">="}
_BINOPS = _CMP | {"+", "-", "*"}


class Tok(NamedTuple):
    kind: str
    text: str
    line: int
    col: int


def tokenize(src: str) -> List[Tok]:
    toks = []
    pos = 0
    line, lstart = 1, 0
    n = len(src)
    while pos < n:
        m = _TOKEN.match(src, pos)
        if not m:
            raise ParseError(f"unexpected character {src[pos]!r}", line, pos - lstart + 1)
        kind = m.lastgroup
        text = m.group()
        if kind != "ws":
            toks.append(Tok(kind, text, line, pos - lstart + 1))
        nl = text.count("\n")
        if nl:
            line += nl
            lstart = pos + text.rfind("\n") + 1
        pos = m.end()
    toks.append(Tok("eof", "", line, pos - lstart + 1))
    return toks


class Parser:
    def __init__(self, src: str):
        self.toks = tokenize(src)
        self.i = 0
        self.hoists: List[Tuple[str, Expr]] = []
        used = [int(t.text[2:]) for t in self.toks if t.kind == "name" and re.fullmatch(r"_d\d+", t.text)]
        self.fresh = max(used, default=-1) + 1
        self.decls: Dict[str, A.InvDecl] = {}

    # ----------------------------------------------------------- utilities

    @property
    def tok(self) -> Tok:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, msg: str, tok: Optional[Tok] = None):
        tok = tok or self.tok
        raise ParseError(msg, tok.line, tok.col)

    def at(self, *texts: str) -> bool:
        t = self.tok
        return t.kind in ("punct", "name") and t.text in texts

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Tok:
        if not self.at(text):
            found = self.tok.text or "end of input"
            self.error(f"expected {text!r}, found {found!r}")
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> str:
        t = self.tok
        if t.kind != "name" or t.text in KEYWORDS:
            self.error(f"expected identifier, found {t.text or 'end of input'!r}")
        self.i += 1
        return t.text

    def var_name(self) -> str:
        name = self.ident()
        if name == SEQ_VAR:
            self.error("'_' cannot be used as a variable", self.toks[self.i - 1])
        return name

    # ------------------------------------------------------------ programs

    def program(self) -> Program:
        while self.at("invariant"):
            self.invariant_decl()
        c = self.seq()
        if self.tok.kind != "eof":
            self.error(f"unexpected {self.tok.text!r}")
        self.check_names(c)
        return Program(dict(self.decls), c)

    def invariant_decl(self):
        self.expect("invariant")
        name_tok = self.tok
        name = self.ident()
        params: List[str] = []
        if self.accept("("):
            if not self.at(")"):
                params.append(self.var_name())
                while self.accept(","):
                    params.append(self.var_name())
            self.expect(")")
        self.expect("=")
        body = self.assertion()
        self.expect(";")
        if name in self.decls:
            self.error(f"invariant {name} declared twice", name_tok)
        self.decls[name] = A.InvDecl(name, tuple(params), body)

    def check_names(self, c):
        for n in walk(c):
            if type(n) is Ghost and type(n.g) is MutInit:
                self.check_inv(n.g.inv, len(n.g.args))
        for d in self.decls.values():
            for a in _assertion_nodes(d.body):
                if type(a) is A.InvRef:
                    self.check_inv(a.name, len(a.args))

    def check_inv(self, name: str, arity: int):
        d = self.decls.get(name)
        if d is None:
            raise ParseError(f"unbound invariant name {name!r}")
        if len(d.params) != arity:
            raise ParseError(f"invariant {name} expects {len(d.params)} arguments, got {arity}")

    # ------------------------------------------------------------ commands

    def seq(self):
        first = self.simple()
        if self.accept(";"):
            return Let(SEQ_VAR, first, self.seq())
        return first

    def simple(self):
        mark = len(self.hoists)
        c = self._simple()
        return self.wrap_hoists(mark, c)

    def wrap_hoists(self, mark: int, c):
        hs = self.hoists[mark:]
        del self.hoists[mark:]
        for var, loc in reversed(hs):
            c = Let(var, Read(loc), c)
        return c

    def _simple(self):
        t = self.tok
        if t.kind == "name":
            kw = t.text
            if kw == "let":
                self.i += 1
                x = self.var_name()
                self.expect("=")
                bound = self.seq()
                self.expect("in")
                return Let(x, bound, self.seq())
            if kw == "if":
                self.i += 1
                cond = self.simple()
                self.expect("then")
                return If(cond, self.simple())
            if kw == "while":
                self.i += 1
                ann = None
                if self.accept("{"):
                    if self.accept("bound"):
                        ann = BoundAnn(self.expr())
                    elif self.accept("await"):
                        ann = AwaitAnn(self.sig_refs_tail())
                        self.i -= 1
                    else:
                        self.error("expected 'bound' or 'await' annotation")
                    self.expect("}")
                body = self.simple()
                self.expect("do")
                self.expect("skip")
                return While(body, ann)
            if kw == "with":
                self.i += 1
                m = self.expr()
                self.expect("await")
                sigs = None
                if self.accept("{"):
                    sigs = self.sig_refs_tail()
                self.expect("(")
                body = self.seq()
                self.expect(")")
                return make_await(m, body, sigs)
            if kw == "fork":
                self.i += 1
                dons = self.donations() if self.at("[") else ()
                self.expect("(")
                body = self.seq()
                self.expect(")")
                return Fork(body, dons)
            if kw == "cons":
                self.i += 1
                self.expect("(")
                e = self.expr()
                self.expect(")")
                return Alloc(e)
            if kw == "new_mutex":
                self.i += 1
                return NewMutex()
            if kw == "acquire":
                self.i += 1
                return Acquire(self.expr())
            if kw == "release":
                self.i += 1
                return Release(self.expr())
            if kw == "ghost":
                self.i += 1
                g = self.ghost_cmd()
                self.expect(";")
                return Ghost(g, self.seq())
            if kw == "skip":
                self.i += 1
                return Val(UNIT)
            if kw == "while_started":
                self.i += 1
                n = self.nat()
                self.expect("(")
                body = self.seq()
                self.expect(")")
                return WhileDecStarted(n, body)
            if kw == "await_started":
                self.i += 1
                self.expect("{")
                sigs = self.sig_refs_tail()
                m = self.primary()
                self.expect("(")
                body = self.seq()
                self.expect(")")
                return AwaitStarted(sigs, m, body)
        if t.kind == "punct" and t.text == "[":
            save_i, save_h = self.i, len(self.hoists)
            self.i += 1
            loc = self.expr()
            self.expect("]")
            if self.accept(":="):
                return Write(loc, self.expr())
            self.i = save_i
            del self.hoists[save_h:]
        if t.kind == "punct" and t.text == "(":
            save_i, save_h = self.i, len(self.hoists)
            try:
                self.i += 1
                c = self.seq()
                self.expect(")")
                if not (self.tok.kind == "punct" and self.tok.text in _BINOPS):
                    return c
            except ParseError:
                pass
            self.i = save_i
            del self.hoists[save_h:]
        mark = len(self.hoists)
        e = self.expr()
        if type(e) is Var and len(self.hoists) == mark + 1 and self.hoists[mark][0] == e.name:
            _, loc = self.hoists.pop()
            return Read(loc)
        return e

    def nat(self) -> int:
        t = self.tok
        if t.kind != "int":
            self.error("expected a natural number")
        self.i += 1
        return int(t.text)

    def sig_refs_tail(self) -> Tuple[Expr, ...]:
        """Signal references after an opening brace, up to and including '}'."""
        refs = []
        if not self.at("}"):
            refs.append(self.sig_ref())
            while self.accept(","):
                refs.append(self.sig_ref())
        self.expect("}")
        return tuple(refs)

    def sig_ref(self) -> Expr:
        t = self.tok
        if t.kind == "lit" and t.text.startswith("#s"):
            self.i += 1
            return Val(SignalId(int(t.text[2:])))
        name = self.var_name()
        if self.accept("["):
            key = self.expr()
            self.expect("]")
            return KeyRef(name, key)
        return Var(name)

    def donations(self):
        self.expect("[")
        out = []
        if not self.at("]"):
            out.append(self.donation())
            while self.accept(","):
                out.append(self.donation())
        self.expect("]")
        return tuple(out)

    def donation(self):
        if self.tok.kind == "name" and self.tok.text in ("obs", "sig") and self.peek().kind in ("name", "lit"):
            kind = self.tok.text
            self.i += 1
            ref = self.sig_ref()
            return DonateObs(ref) if kind == "obs" else DonateSig(ref)
        loc = self.expr()
        q = Fraction(1)
        if self.accept("@"):
            q = self.fraction()
        return DonateLoc(loc, q)

    def fraction(self) -> Fraction:
        n = self.nat()
        d = 1
        if self.accept("/"):
            d = self.nat()
        if d == 0:
            self.error("zero denominator")
        q = Fraction(n, d)
        if not 0 < q <= 1:
            self.error(f"fraction {q} outside (0, 1]")
        return q

    def ghost_cmd(self):
        t = self.tok
        kw = t.text if t.kind == "name" else ""
        if kw == "new_signal":
            self.i += 1
            lev = self.expr()
            self.expect("as")
            return NewSignal(lev, self.sig_ref())
        if kw == "set_signal":
            self.i += 1
            return SetSignal(self.sig_ref())
        if kw == "mut_init":
            self.i += 1
            m = self.expr()
            self.expect("at")
            lev = self.expr()
            self.expect("with")
            name = self.ident()
            args = self.arg_list() if self.at("(") else ()
            return MutInit(m, lev, name, args)
        if kw == "alloc_signal_id":
            self.i += 1
            self.expect("as")
            return AllocSignalId(self.sig_ref())
        if kw == "init_signal":
            self.i += 1
            ref = self.sig_ref()
            self.expect("at")
            lev = self.expr()
            bind = None
            if self.accept("as"):
                bind = self.var_name()
            return InitSignal(ref, lev, bind)
        if kw == "justify_wait":
            self.i += 1
            self.expect("{")
            sigs = self.sig_refs_tail()
            m = self.primary()
            r = self.primary()
            return WaitCheck(sigs, m, r)
        self.error(f"unknown ghost command {t.text!r}")

    def arg_list(self) -> Tuple[Expr, ...]:
        self.expect("(")
        args = []
        if not self.at(")"):
            args.append(self.expr())
            while self.accept(","):
                args.append(self.expr())
        self.expect(")")
        return tuple(args)

    # --------------------------------------------------------- expressions

    def expr(self) -> Expr:
        left = self.additive()
        t = self.tok
        if t.kind == "punct" and t.text in _CMP:
            self.i += 1
            right = self.additive()
            op = t.text
            if op == "==":
                return Eq(left, right)
            if op == "!=":
                return Not(Eq(left, right))
            if op == "<":
                return Op("<", (left, right))
            if op == "<=":
                return Op("<=", (left, right))
            if op == ">":
                return Op("<", (right, left))
            return Op("<=", (right, left))
        return left

    def additive(self) -> Expr:
        e = self.multiplicative()
        while self.tok.kind == "punct" and self.tok.text in ("+", "-"):
            op = self.tok.text
            self.i += 1
            e = Op(op, (e, self.multiplicative()))
        return e

    def multiplicative(self) -> Expr:
        e = self.unary()
        while self.at("*"):
            self.i += 1
            e = Op("*", (e, self.unary()))
        return e

    def unary(self) -> Expr:
        if self.at("!", "¬"):
            self.i += 1
            return Not(self.unary())
        return self.primary()

    def primary(self) -> Expr:
        t = self.tok
        if t.kind == "int":
            self.i += 1
            return Val(IntV(int(t.text)))
        if t.kind == "lit":
            self.i += 1
            n = int(t.text[2:])
            return Val(HeapLoc(n) if t.text[1] == "l" else SignalId(n))
        if t.kind == "punct":
            if t.text == "-" and self.peek().kind == "int":
                self.i += 2
                return Val(IntV(-int(self.toks[self.i - 1].text)))
            if t.text == "(":
                self.i += 1
                e = self.expr()
                self.expect(")")
                return e
            if t.text == "[":
                self.i += 1
                loc = self.expr()
                self.expect("]")
                var = f"_d{self.fresh}"
                self.fresh += 1
                self.hoists.append((var, loc))
                return Var(var)
            if t.text == "#[":
                self.i += 1
                items = []
                if not self.at("]"):
                    items.append(self.literal())
                    while self.accept(","):
                        items.append(self.literal())
                self.expect("]")
                return Val(ListV(tuple(items)))
        if t.kind == "name":
            if t.text == "true":
                self.i += 1
                return Val(TRUE)
            if t.text == "false":
                self.i += 1
                return Val(FALSE)
            if t.text == "unit":
                self.i += 1
                return Val(UNIT)
            if t.text == "nil":
                self.i += 1
                return Op("nil", ())
            if t.text not in KEYWORDS:
                nxt = self.peek()
                if nxt.kind == "punct" and nxt.text == "(":
                    if t.text not in OPS:
                        self.error(f"unknown operation {t.text!r}")
                    self.i += 1
                    args = self.arg_list()
                    arity = OPS[t.text][0]
                    if len(args) != arity:
                        self.error(f"operation {t.text} takes {arity} arguments, got {len(args)}", t)
                    return Op(t.text, args)
                if nxt.kind == "punct" and nxt.text == "[":
                    return self.sig_ref()
                return Var(self.var_name())
        self.error(f"unexpected {t.text or 'end of input'!r} in expression")

    def literal(self):
        e = self.primary()
        if type(e) is Op and e.name == "nil":
            return ListV(())
        if type(e) is not Val:
            self.error("list literals may only contain values")
        return e.value

    # ---------------------------------------------------------- assertions

    def assertion(self) -> A.Assertion:
        a = self.a_and()
        while self.accept("\\/"):
            a = A.AOr(a, self.a_and())
        return a

    def a_and(self) -> A.Assertion:
        a = self.a_star()
        while self.accept("/\\"):
            a = A.AAnd(a, self.a_star())
        return a

    def a_star(self) -> A.Assertion:
        a = self.a_unary()
        if self.accept("**"):
            return A.AStar(a, self.a_star())
        return a

    def a_unary(self) -> A.Assertion:
        if self.accept("~"):
            return A.ANot(self.a_unary())
        return self.a_atom()

    def a_atom(self) -> A.Assertion:
        t = self.tok
        if t.kind == "name":
            kw = t.text
            nxt = self.peek()
            if kw == "true" and not _is_binop(nxt):
                self.i += 1
                return A.ATrue()
            if kw == "false" and not _is_binop(nxt):
                self.i += 1
                return A.AFalse()
            if kw == "exists":
                self.i += 1
                x = self.var_name()
                self.expect(".")
                return A.Exists(x, self.assertion())
            if kw == "any" and nxt.text == "{":
                self.i += 2
                alts = [self.assertion()]
                while self.accept(";"):
                    alts.append(self.assertion())
                self.expect("}")
                return A.BigOr(tuple(alts))
            if kw == "pure" and nxt.text == "(":
                self.i += 2
                e = self.expr()
                self.expect(")")
                return A.Pure(e)
            if kw == "obs" and nxt.text == "{":
                self.i += 2
                items = []
                if not self.at("}"):
                    items.append(self.ob_item())
                    while self.accept(","):
                        items.append(self.ob_item())
                self.expect("}")
                return A.ObsAs(tuple(items))
            if kw in ("uninit", "mutex", "locked", "signal") and nxt.text == "(":
                return self.chunk(Fraction(1))
            if kw not in KEYWORDS and kw not in OPS and nxt.text == "(":
                self.i += 1
                return A.InvRef(kw, self.arg_list())
        if t.kind == "punct" and t.text == "[":
            self.i += 1
            q = self.fraction()
            self.expect("]")
            return self.chunk(q)
        if t.kind == "punct" and t.text == "(":
            save = self.i
            try:
                self.i += 1
                a = self.assertion()
                self.expect(")")
                return a
            except ParseError:
                self.i = save
        return self.points_to(Fraction(1))

    def ob_item(self):
        self.expect("(")
        target = self.expr()
        self.expect(",")
        lev = self.expr()
        self.expect(")")
        return (target, lev)

    def chunk(self, q: Fraction) -> A.Assertion:
        t = self.tok
        kw = t.text if t.kind == "name" else ""
        if kw == "uninit":
            self.i += 1
            self.expect("(")
            loc = self.expr()
            self.expect(")")
            return A.UninitAs(loc, q)
        if kw in ("mutex", "locked"):
            self.i += 1
            self.expect("(")
            loc = self.expr()
            self.expect(",")
            lev = self.expr()
            self.expect(",")
            inv = self.inv_ref()
            if kw == "mutex":
                self.expect(")")
                return A.MutexAs(loc, lev, inv, q)
            self.expect(",")
            held = self.fraction()
            self.expect(")")
            return A.LockedAs(loc, lev, inv, held, q)
        if kw == "signal":
            self.i += 1
            self.expect("(")
            s = self.sig_ref()
            self.expect(",")
            lev = self.expr()
            self.expect(",")
            flag = self.expr()
            self.expect(")")
            return A.SignalAs(s, lev, flag, q)
        return self.points_to(q)

    def points_to(self, q: Fraction) -> A.Assertion:
        loc = self.expr()
        if self.accept("|-("):
            q = self.fraction()
            self.expect(")->")
        elif not self.accept("|->"):
            self.error("expected an assertion")
        return A.PointsToAs(loc, self.expr(), q)

    def inv_ref(self) -> A.InvRef:
        name = self.ident()
        args = self.arg_list() if self.at("(") else ()
        return A.InvRef(name, args)


def _is_binop(t: Tok) -> bool:
    return t.kind == "punct" and t.text in _BINOPS | {"|->", "|-("}


def _assertion_nodes(a):
    stack = [a]
    while stack:
        n = stack.pop()
        yield n
        if isinstance(n, (A.AAnd, A.AOr, A.AStar)):
            stack += [n.left, n.right]
        elif isinstance(n, A.ANot):
            stack.append(n.arg)
        elif isinstance(n, A.BigOr):
            stack += list(n.alts)
        elif isinstance(n, A.Exists):
            stack.append(n.body)
        elif isinstance(n, (A.MutexAs, A.LockedAs)):
            stack.append(n.inv)


def parse_program(text: str) -> Program:
    """Parse a program: invariant declarations followed by a command."""
    return Parser(text).program()


def parse_cmd(text: str):
    return parse_program(text).cmd


def parse_expr(text: str) -> Expr:
    p = Parser(text)
    e = p.expr()
    if p.hoists:
        raise ParseError("heap reads are not allowed in a bare expression")
    if p.tok.kind != "eof":
        p.error(f"unexpected {p.tok.text!r}")
    return e


def parse_assertion(text: str, decls: Optional[Dict[str, A.InvDecl]] = None) -> A.Assertion:
    p = Parser(text)
    a = p.assertion()
    if p.hoists:
        raise ParseError("heap reads are not allowed inside assertions")
    if p.tok.kind != "eof":
        p.error(f"unexpected {p.tok.text!r}")
    if decls is not None:
        p.decls = decls
        for n in _assertion_nodes(a):
            if type(n) is A.InvRef:
                p.check_inv(n.name, len(n.args))
    return a
