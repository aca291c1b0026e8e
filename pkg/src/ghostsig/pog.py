"""Program order graphs over annotated traces and rank-descent validation.

Nodes are the executed steps of an annotated trace (blocked attempts are not
steps). Each node has at most one successor in its own thread and, when the
step forked, one edge to the first step of the new thread. Edges carry the
source step's rule, with await iterations tagged by the awaited signal.
"""

from __future__ import annotations

import json
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Tuple

from .bags import Bag, SignalId, dm_leq, dm_less
from .lang.syntax import (
    AwaitStarted,
    Fork,
    Ghost,
    If,
    Let,
    While,
    WhileDecStarted,
    cmd_size,
    extract_degree,
)

LOOP_CASES = ("WhileDecInit", "WhileDec", "AwaitInit", "Await")


class Edge(NamedTuple):
    src: int
    tid: int
    tag: object
    dst: int
    fork: bool = False

    @property
    def rule(self) -> str:
        return self.tag[0] if isinstance(self.tag, tuple) else self.tag

    @property
    def signal(self) -> Optional[SignalId]:
        return self.tag[1] if isinstance(self.tag, tuple) else None


@dataclass
class Pog:
    nodes: List[int]
    edges: List[Edge]
    tid: Dict[int, int] = field(default_factory=dict)
    tag: Dict[int, object] = field(default_factory=dict)
    cmd: Dict[int, object] = field(default_factory=dict)

    def succ(self, n: int) -> List[Edge]:
        return self._out.get(n, [])

    def __post_init__(self):
        self._out: Dict[int, List[Edge]] = {}
        for e in self.edges:
            self._out.setdefault(e.src, []).append(e)

    def roots(self) -> List[int]:
        has_in = {e.dst for e in self.edges}
        return [n for n in self.nodes if n not in has_in]

    def is_binary_tree(self) -> bool:
        if not self.nodes:
            return True
        indeg: Dict[int, int] = {}
        for e in self.edges:
            indeg[e.dst] = indeg.get(e.dst, 0) + 1
        if any(v > 1 for v in indeg.values()):
            return False
        if any(len(v) > 2 for v in self._out.values()):
            return False
        roots = self.roots()
        return len(roots) == 1 and len(self.edges) == len(self.nodes) - 1

    def paths(self) -> List[List[int]]:
        """All maximal paths from the roots, in depth-first order."""
        out = []
        for r in self.roots():
            stack = [[r]]
            while stack:
                p = stack.pop()
                nxt = self.succ(p[-1])
                if not nxt:
                    out.append(p)
                    continue
                if len(nxt) == 1:
                    p.append(nxt[0].dst)
                    stack.append(p)
                    continue
                for e in reversed(nxt):
                    stack.append(p + [e.dst])
        return out

    def edge_between(self, a: int, b: int) -> Optional[Edge]:
        for e in self.succ(a):
            if e.dst == b:
                return e
        return None


def _tag(step) -> object:
    if step.wait_signal is not None:
        return ("Await", step.wait_signal)
    return step.rule


def build_pog(trace) -> Pog:
    """Same-thread successor edges and fork edges, labelled by the source step."""
    steps = trace.nodes() if hasattr(trace, "nodes") else [s for s in trace if s.rule != "Blocked"]
    nodes, edges = [], []
    last: Dict[int, int] = {}
    fork_src: Dict[int, int] = {}
    tids, tags, cmds = {}, {}, {}
    for s in steps:
        n = s.step
        nodes.append(n)
        tids[n] = s.tid
        tags[n] = _tag(s)
        cmds[n] = s.cmd
        if s.tid in last:
            p = last[s.tid]
            edges.append(Edge(p, s.tid, tags[p], n))
        elif s.tid in fork_src:
            p = fork_src.pop(s.tid)
            edges.append(Edge(p, tids[p], tags[p], n, True))
        last[s.tid] = n
        if s.forked is not None:
            fork_src[s.forked] = n
    return Pog(nodes, edges, tids, tags, cmds)


# ------------------------------------------------------------- await edges


@dataclass
class AwaitStats:
    await_edges: Dict[SignalId, List[Edge]]
    wait_signals: frozenset
    persistent: frozenset
    horizon: float


def await_stats(g, set_signals: Iterable = (), horizon: float = 0.25) -> AwaitStats:
    """Await edges per signal and the finite-horizon surrogate of the infinitely-waited set.

    ``g`` is a ``Pog`` or a sequence of its edges (a path). A signal is
    persistent when it labels an await edge whose source lies in the final
    ``horizon`` fraction of the node range and it is never set.
    """
    edges = g.edges if isinstance(g, Pog) else list(g)
    per: Dict[SignalId, List[Edge]] = {}
    for e in edges:
        s = e.signal
        if s is not None:
            per.setdefault(s, []).append(e)
    if isinstance(g, Pog) and g.nodes:
        lo, hi = min(g.nodes), max(g.nodes)
    elif edges:
        lo, hi = min(e.src for e in edges), max(e.dst for e in edges)
    else:
        lo = hi = 0
    cut = hi - (hi - lo) * horizon
    done = frozenset(set_signals)
    persistent = frozenset(s for s, es in per.items() if s not in done and any(e.src >= cut for e in es))
    return AwaitStats(per, frozenset(per), persistent, horizon)


# ------------------------------------------------------------------ ranks


class _Parts(NamedTuple):
    fixed: Bag
    started: Tuple[Tuple[int, Tuple], ...]


_EMPTY_PARTS = _Parts(Bag(), ())


def _parts(c, memo: Dict) -> _Parts:
    """Split the rank into the suffix-independent part and the started await loops."""
    t = type(c)
    if t is While:
        return _Parts(Bag.of(extract_degree(c)), ())
    if t is WhileDecStarted:
        return _Parts(Bag.from_counts({extract_degree(c): c.n}), ())
    if t is AwaitStarted:
        return _Parts(Bag(), ((extract_degree(c), c.sigs),))
    if t is Fork:
        return _cached(c.body, memo)
    if t is Ghost:
        return _cached(c.cont, memo)
    if t is Let or t is If:
        a = _cached(c.bound if t is Let else c.cond, memo)
        b = _cached(c.body if t is Let else c.then, memo)
        if not b.fixed and not b.started:
            return a
        if not a.fixed and not a.started:
            return b
        return _Parts(a.fixed + b.fixed, a.started + b.started)
    return _EMPTY_PARTS


def _cached(c, memo):
    k = id(c)
    hit = memo.get(k)
    if hit is not None and hit[0] is c:
        return hit[1]
    r = _parts(c, memo)
    memo[k] = (c, r)
    return r


def extract_rank(c, awaits: Optional[Callable[[Tuple], int]] = None, memo: Optional[Dict] = None) -> Bag:
    """Rank of a command: a bag of loop degrees.

    ``awaits(sigs)`` gives the number of await edges, in the relevant path
    suffix, whose signal belongs to the loop's signal set; it defaults to 0.
    Ghost prefixes are transparent.
    """
    p = _cached(c, memo if memo is not None else {})
    out = p.fixed
    for deg, sigs in p.started:
        k = awaits(sigs) if awaits is not None else 0
        if k:
            out = out + Bag.from_counts({deg: k})
    return out


# ---------------------------------------------------------- rank descent


@dataclass
class RankCheck:
    path_id: int
    node: int
    edge_case: str
    rank_before: Bag
    rank_after: Bag
    ok: bool

    def to_json(self) -> dict:
        return {
            "path_id": self.path_id,
            "node": self.node,
            "edge_case": self.edge_case,
            "rank_before": sorted(self.rank_before.elements()),
            "rank_after": sorted(self.rank_after.elements()),
            "ok": self.ok,
        }


@dataclass
class RankReport:
    entries: List[RankCheck]
    violations: List[RankCheck]
    case_counts: Dict[str, int]
    paths: int
    edges_checked: int
    precondition_ok: bool = True
    persistent: frozenset = frozenset()

    @property
    def ok(self) -> bool:
        return self.precondition_ok and not self.violations

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "precondition_ok": self.precondition_ok,
            "persistent_wait_set": sorted(s.id for s in self.persistent),
            "paths": self.paths,
            "edges_checked": self.edges_checked,
            "case_counts": self.case_counts,
            "violations": [v.to_json() for v in self.violations],
            "loop_edges": [e.to_json() for e in self.entries],
        }


def _resolver(trace) -> Callable:
    from .annotated import resolve_signal

    aheap = trace.aheap

    def resolve(sigs: Tuple) -> frozenset:
        out = set()
        for ref in sigs:
            s = resolve_signal(ref, aheap)
            if s is not None:
                out.add(s)
        return frozenset(out)

    return resolve


def verify_rank_descent(g: Pog, trace, horizon: float = 0.25, keep_all: bool = False) -> RankReport:
    """Check ranks along every maximal path.

    Loop edges (loop initialisation, bounded unrolling, await initialisation
    and await iterations) must strictly decrease the rank in the
    Dershowitz-Manna order; every other edge must not increase it.
    """
    stats = await_stats(g, trace.set_signals() if hasattr(trace, "set_signals") else (), horizon)
    if stats.persistent:
        return RankReport([], [], {}, 0, 0, False, stats.persistent)
    resolve = _resolver(trace)
    sig_cache: Dict[Tuple, frozenset] = {}
    memo: Dict = {}
    entries, violations = [], []
    counts = {c: 0 for c in LOOP_CASES}
    checked = 0
    for pid, path in enumerate(g.paths()):
        pos: Dict[SignalId, List[int]] = {}
        for i, n in enumerate(path):
            tag = g.tag[n]
            if isinstance(tag, tuple):
                pos.setdefault(tag[1], []).append(i)

        def rank_at(i: int) -> Bag:
            def awaits(sigs):
                ss = sig_cache.get(sigs)
                if ss is None:
                    ss = sig_cache[sigs] = resolve(sigs)
                total = 0
                for s in ss:
                    lst = pos.get(s)
                    if lst:
                        total += len(lst) - bisect_left(lst, i)
                return total

            return extract_rank(g.cmd[path[i]], awaits, memo)

        prev = rank_at(0) if path else None
        for i in range(len(path) - 1):
            a, b = path[i], path[i + 1]
            e = g.edge_between(a, b)
            after = rank_at(i + 1)
            case = e.rule
            checked += 1
            if case in LOOP_CASES and not e.fork:
                ok = dm_less(after, prev)
                counts[case] += 1
                rc = RankCheck(pid, a, case, prev, after, ok)
                if keep_all or not ok:
                    entries.append(rc)
            else:
                ok = dm_leq(after, prev)
                rc = RankCheck(pid, a, case, prev, after, ok)
            if not ok:
                violations.append(rc)
            prev = after
    return RankReport(entries, violations, counts, len(g.paths()), checked, True, stats.persistent)


def size_descent_violations(g: Pog) -> List[int]:
    """Nodes whose non-loop, non-fork same-thread edge does not shrink the command."""
    bad = []
    for e in g.edges:
        if e.fork or e.rule in LOOP_CASES or e.rule in ("Terminate", "Blocked"):
            continue
        if cmd_size(g.cmd[e.dst]) >= cmd_size(g.cmd[e.src]):
            bad.append(e.src)
    return bad


# ------------------------------------------------------------------- output


def _dot_label(tag) -> str:
    if isinstance(tag, tuple):
        return f"Await {tag[1]!r}"
    return str(tag)


def export_dot(g: Pog) -> str:
    """DOT text; await edges name their signal and loop edges are drawn bold."""
    if not g.nodes:
        return "digraph pog {}"
    lines = ["digraph pog {", "  node [shape=circle, fontsize=9];"]
    for n in g.nodes:
        lines.append(f'  n{n} [label="{n}\\nt{g.tid[n]}"];')
    for e in g.edges:
        attrs = [f'label="t{e.tid} {_dot_label(e.tag)}"']
        if e.fork:
            attrs.append("style=dashed")
        elif e.rule in LOOP_CASES:
            attrs.append("style=bold")
            attrs.append('color="red"' if e.signal is not None else 'color="blue"')
        lines.append(f"  n{e.src} -> n{e.dst} [{', '.join(attrs)}];")
    lines.append("}")
    return "\n".join(lines)


def report_json(report: RankReport, stats: Optional[AwaitStats] = None) -> str:
    d = report.to_json()
    if stats is not None:
        d["wait_signal_set"] = sorted(s.id for s in stats.wait_signals)
        d["await_edges"] = {str(s.id): len(es) for s, es in sorted(stats.await_edges.items())}
    return json.dumps(d, indent=2)
