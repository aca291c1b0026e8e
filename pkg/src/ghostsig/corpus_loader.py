"""Bundled example programs and proof outlines."""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Callable, Dict, NamedTuple, Optional, Union

from .lang.parser import Program, parse_program

FILES = ("minimal_flag", "fifo", "fifo_badlevels", "fifo_leak", "fifo_nomutinit")
GENERATORS = ("unbounded_party",)


class CorpusEntry(NamedTuple):
    name: str
    source: str
    program: Program
    outline: Optional[dict]


def corpus_dir() -> Path:
    return Path(str(resources.files("ghostsig") / "corpus"))


def corpus_names():
    return list(FILES) + list(GENERATORS)


def unbounded_party_source(n: int = 3) -> str:
    """``n`` producers and ``n`` consumers passing items through a one-slot buffer.

    The parties take turns on a shared event counter ``k``: producer ``i`` may
    push when ``k == 2i - 2`` and consumer ``i`` may pop when ``k == 2i - 1``.
    Signal ``push[i]`` is set by producer ``i`` and ``pop[i]`` by consumer
    ``i``; levels grow along the event order so every wait targets an
    earlier event.
    """
    if n < 1:
        raise ValueError("need at least one producer/consumer pair")
    sigs = []
    for i in range(1, n + 1):
        sigs.append(f"signal(push[{i}], {2 * i}, {2 * i - 1} <= k)")
        sigs.append(f"signal(pop[{i}], {2 * i + 1}, {2 * i} <= k)")
    inv = (
        "invariant PARTY(buf, kc) =\n  exists k. exists f.\n"
        "    buf |-> f ** kc |-> k ** pure(0 <= k) ** pure(k <= " + str(2 * n) + ") ** pure(size(f) <= 1)\n"
        + "".join(f"    ** {s}\n" for s in sigs)
    ).rstrip("\n") + ";\n"
    lines = [
        f"// {n} producers and {n} consumers over a one-slot buffer (generated).",
        "",
        inv,
        "let buf = cons(nil) in",
        "let kc = cons(0) in",
        "let m = new_mutex in",
    ]
    for i in range(1, n + 1):
        lines.append(f"ghost new_signal {2 * i} as push[{i}]; ghost new_signal {2 * i + 1} as pop[{i}]; unit;")
    lines.append("ghost mut_init m at 0 with PARTY(buf, kc);")
    for i in range(1, n + 1):
        lines += [
            f"fork [obs push[{i}], m @ 1/2] (",
            f"  with m await {{pop[{i - 1}]}} (",
            "    let k = [kc] in",
            f"    if k == {2 * i - 2} then ([buf] := singleton({i}); [kc] := k + 1; ghost set_signal push[{i}]; unit);",
            f"    k == {2 * i - 2}",
            "  )",
            ");",
            f"fork [obs pop[{i}], m @ 1/2] (",
            f"  with m await {{push[{i}]}} (",
            "    let k = [kc] in",
            f"    if k == {2 * i - 1} then (let f = [buf] in [buf] := tail(f); [kc] := k + 1; ghost set_signal pop[{i}]; unit);",
            f"    k == {2 * i - 1}",
            "  )",
            ");",
        ]
    lines.append("unit")
    return "\n".join(lines) + "\n"


_GEN: Dict[str, Callable[..., str]] = {"unbounded_party": unbounded_party_source}


def _outline(name: str) -> Optional[dict]:
    import json

    p = corpus_dir() / f"{name}.outline.json"
    if p.exists():
        return json.loads(p.read_text())
    return None


def corpus_load(name: str, n: int = 3) -> Union[CorpusEntry, Callable[[int], CorpusEntry]]:
    """Load a bundled program (and its outline when one ships).

    Generators are returned as a callable of ``n`` when ``n`` is passed as
    ``None``; otherwise they are instantiated at ``n``.
    """
    if name in _GEN:
        gen = _GEN[name]

        def make(k: int) -> CorpusEntry:
            src = gen(k)
            return CorpusEntry(f"{name}({k})", src, parse_program(src), None)

        return make if n is None else make(n)
    if name not in FILES:
        raise KeyError(f"unknown corpus program {name!r}; available: {', '.join(corpus_names())}")
    src = (corpus_dir() / f"{name}.gs").read_text()
    return CorpusEntry(name, src, parse_program(src), _outline(name))


def resolve_program_path(path: str) -> Path:
    """A file path as given, or the bundled file of that name."""
    p = Path(path)
    if p.exists():
        return p
    q = corpus_dir() / p.name
    if q.exists():
        return q
    raise FileNotFoundError(path)
