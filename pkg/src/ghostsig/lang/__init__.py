"""Syntax, concrete grammar, evaluation, erasure and command metrics."""

from .parser import ParseError, Program, parse_assertion, parse_cmd, parse_expr, parse_program
from .printer import show_assertion, show_cmd, show_expr, show_program, show_value
from .syntax import (
    OPS,
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
    IfHole,
    InitSignal,
    KeyRef,
    Let,
    LetHole,
    MutInit,
    NewMutex,
    NewSignal,
    Not,
    Op,
    Read,
    Release,
    Seq,
    SetSignal,
    Val,
    Var,
    WaitCheck,
    While,
    WhileDecStarted,
    Write,
    await_body,
    cmd_size,
    decompose,
    erase_annotations,
    eval_expr,
    extract_degree,
    has_ghosts,
    is_value_expr,
    make_await,
    match_await,
    plug,
    subst,
)
from .values import FALSE, NIL, TRUE, UNIT, BoolV, IntV, ListV, UnitV, as_value
