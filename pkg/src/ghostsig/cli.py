"""Command-line front end: ``ghostsig {run,run-annotated,check,pog,corpus}``.

Exit codes: 0 success/accepted, 1 stuck/rejected, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from .corpus_loader import GENERATORS, corpus_load, corpus_names, resolve_program_path
from .lang.parser import ParseError, Program, parse_program

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


@dataclass(frozen=True)
class RunConfig:
    scheduler: str = "rr"
    seed: int = 0
    window: int = 16
    max_steps: int = 1_000_000
    ghost_budget: int = 64
    mode: str = "verify"
    dot: Optional[str] = None
    report: Optional[str] = None
    trace: Optional[str] = None

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("--max-steps must be at least 1")
        if self.window < 1:
            raise ValueError("--window must be at least 1")

    def schedule(self):
        from .plain import make_schedule

        return make_schedule(self.scheduler, self.seed, self.window)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ghostsig", description="Run, check and analyse ghost-signal programs.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, default_sched):
        sp.add_argument("file", help="program file, or the name of a bundled program")
        sp.add_argument("--scheduler", choices=("rr", "random"), default=default_sched)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--window", type=int, default=16, help="fairness window of the random scheduler")
        sp.add_argument("--max-steps", type=int, default=1_000_000)
        sp.add_argument("--n", type=int, default=3, help="instance size for generated programs")
        sp.add_argument("--trace", metavar="PATH", help="write the trace as JSON lines")

    run = sub.add_parser("run", help="run under the plain semantics")
    common(run, "rr")

    ann = sub.add_parser("run-annotated", help="run under the annotated semantics")
    common(ann, "random")
    ann.add_argument("--ghost-budget", type=int, default=64)
    ann.add_argument("--mode", choices=("verify", "explore"), default="verify")

    chk = sub.add_parser("check", help="check a proof outline")
    chk.add_argument("file")
    chk.add_argument("--outline", metavar="PATH", help="outline JSON (default: the one beside the program)")

    pg = sub.add_parser("pog", help="run annotated, then build and analyse the program order graph")
    common(pg, "random")
    pg.add_argument("--ghost-budget", type=int, default=64)
    pg.add_argument("--mode", choices=("verify", "explore"), default="verify")
    pg.add_argument("--dot", metavar="PATH")
    pg.add_argument("--report", metavar="PATH")
    pg.add_argument("--horizon", type=float, default=0.25)

    sub.add_parser("corpus", help="list bundled programs")
    return p


def _load(name: str, n: int = 3) -> Program:
    if name in GENERATORS:
        return corpus_load(name, n).program
    path = resolve_program_path(name if Path(name).suffix else name + ".gs")
    return parse_program(path.read_text())


def _config(a) -> RunConfig:
    return RunConfig(
        scheduler=a.scheduler,
        seed=a.seed,
        window=a.window,
        max_steps=a.max_steps,
        ghost_budget=getattr(a, "ghost_budget", 64),
        mode=getattr(a, "mode", "verify"),
        dot=getattr(a, "dot", None),
        report=getattr(a, "report", None),
        trace=a.trace,
    )


def _cmd_run(a, out) -> int:
    from .plain import TERMINATED_OUTCOME, count_list_ops, run_fair

    cfg = _config(a)
    prog = _load(a.file, a.n)
    tr = run_fair(None, prog.cmd, cfg.schedule(), cfg.max_steps)
    if cfg.trace:
        Path(cfg.trace).write_text(tr.to_jsonl())
    pushes, pops = count_list_ops(tr)
    print(f"{tr.outcome} after {len(tr.steps)} steps ({tr.threads} threads, {pushes} pushes, {pops} pops)", file=out)
    return EXIT_OK if tr.outcome == TERMINATED_OUTCOME else EXIT_FAIL


def _annotated(a, out):
    from .annotated import run_annotated

    cfg = _config(a)
    prog = _load(a.file, a.n)
    tr = run_annotated(prog, cfg.schedule(), cfg.max_steps, cfg.ghost_budget, cfg.mode)
    if cfg.trace:
        Path(cfg.trace).write_text(tr.to_jsonl())
    for w in tr.warnings:
        print(f"warning: {w}", file=out)
    if tr.report is not None:
        print(f"STUCK: {tr.report}", file=out)
    else:
        left = {t: b for t, b in tr.final_obligations().items() if b}
        print(f"{tr.outcome} after {len(tr.steps)} steps; {tr.checks_run} state checks passed", file=out)
        if left:
            print(f"obligations left: {left}", file=out)
    if not tr.shadow_ok:
        print(f"erasure mismatch: {tr.shadow_error}", file=out)
    return cfg, tr


def _cmd_run_annotated(a, out) -> int:
    _, tr = _annotated(a, out)
    return EXIT_OK if tr.ok and tr.shadow_ok else EXIT_FAIL


def _cmd_check(a, out) -> int:
    from .proof_checker import check_outline, load_outline

    prog = _load(a.file)
    if a.outline:
        opath = Path(a.outline)
        if not opath.exists():
            opath = resolve_program_path(a.outline)
    else:
        src = resolve_program_path(a.file if Path(a.file).suffix else a.file + ".gs")
        opath = src.with_name(src.stem + ".outline.json")
        if not opath.exists():
            print(f"no outline beside {src}; pass --outline", file=out)
            return EXIT_USAGE
    try:
        doc = load_outline(opath)
    except (ValueError, json.JSONDecodeError) as e:
        print(f"malformed outline {opath}: {e}", file=out)
        return EXIT_USAGE
    res = check_outline(doc, prog.cmd, prog.decls)
    if res.ok:
        print(f"ACCEPTED ({res.nodes} nodes, {res.states} symbolic states)", file=out)
        return EXIT_OK
    for d in res.diagnostics:
        print(f"REJECTED at {d}", file=out)
    return EXIT_FAIL


def _cmd_pog(a, out) -> int:
    from .pog import await_stats, build_pog, export_dot, report_json, verify_rank_descent

    cfg, tr = _annotated(a, out)
    g = build_pog(tr)
    stats = await_stats(g, tr.set_signals(), a.horizon)
    rep = verify_rank_descent(g, tr, a.horizon)
    if cfg.dot:
        Path(cfg.dot).write_text(export_dot(g) + "\n")
    if cfg.report:
        Path(cfg.report).write_text(report_json(rep, stats) + "\n")
    print(
        f"pog: {len(g.nodes)} nodes, {len(g.edges)} edges, {rep.paths} paths, "
        f"{rep.edges_checked} edges checked, {len(rep.violations)} violations",
        file=out,
    )
    for case, k in sorted(rep.case_counts.items()):
        print(f"  {case}: {k}", file=out)
    if not rep.precondition_ok:
        print(f"persistent wait set not empty: {sorted(s.id for s in rep.persistent)}", file=out)
    return EXIT_OK if tr.ok and rep.ok else EXIT_FAIL


def _cmd_corpus(a, out) -> int:
    for name in corpus_names():
        if name in GENERATORS:
            print(f"{name}(N)", file=out)
            continue
        e = corpus_load(name)
        print(f"{name}{'  [outline]' if e.outline else ''}", file=out)
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "run-annotated": _cmd_run_annotated,
    "check": _cmd_check,
    "pog": _cmd_pog,
    "corpus": _cmd_corpus,
}


def cmd_dispatch(argv: Optional[List[str]] = None, out=None) -> int:
    out = out if out is not None else sys.stdout
    try:
        a = _parser().parse_args(argv)
        if a.command is None:
            raise _UsageError("ghostsig: error: a subcommand is required")
        return _COMMANDS[a.command](a, out)
    except _UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, KeyError) as e:
        print(f"ghostsig: error: no such program or file: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, ValueError) as e:
        print(f"ghostsig: error: {e}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(cmd_dispatch())
