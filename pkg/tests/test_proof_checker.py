import copy
import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ghostsig.corpus_loader import corpus_dir, corpus_load
from ghostsig.lang.parser import parse_assertion, parse_cmd
from ghostsig.lang.values import IntV
from ghostsig.logic.heaps import LogHeap, PointsToRes, models
from ghostsig.bags import HeapLoc
from ghostsig.proof_checker import (
    OutlineDoc,
    ProofOutline,
    ViewShiftApp,
    check_outline,
    check_shape,
    check_viewshift,
    entail,
    entail_diag,
    load_outline,
    skeleton,
)


def check(name, outline=None):
    e = corpus_load(name)
    return check_outline(outline or e.outline, e.program.cmd, e.program.decls)


# ------------------------------------------------------------- entailment


@pytest.mark.parametrize(
    "a,b",
    [
        ("x |-> 1", "x |-(1/2)-> 1"),
        ("x |-> 1 ** y |-> 2", "y |-> 2"),
        ("x |-> 1", "exists v. x |-> v ** pure(v > 0)"),
        ("x |-> 1 ** pure(n == 3)", "x |-> 1 ** pure(n + 1 == 4)"),
        ("x |-(1/2)-> v ** x |-(1/2)-> v", "x |-> v"),
        ("signal(s, 2, false)", "signal(s, 2, false)"),
        ("obs{(s, 1)}", "obs{(s, 1)}"),
    ],
)
def test_entails(a, b):
    assert entail(a, b)


@pytest.mark.parametrize(
    "a,b",
    [
        ("x |-(1/2)-> 1", "x |-> 1"),
        ("x |-> 1", "x |-> 2"),
        ("obs{(s, 1)}", "obs{}"),
        ("obs{}", "obs{(s, 1)}"),
        ("signal(s, 2, b)", "signal(s, 2, false)"),
        ("true", "x |-> 1"),
    ],
)
def test_not_entails(a, b):
    ok, why = entail_diag(a, b)
    assert not ok and why


def test_witness_given():
    assert entail("x |-> 1 ** y |-> 1", "exists v. x |-> v ** y |-> v", witness={"v": "1"})


CHUNKS = ["x |-> 1", "x |-(1/2)-> 1", "y |-> 2", "exists v. y |-> v", "x |-> 1 ** y |-> 2", "true", "pure(1 < 2)"]


@given(st.sampled_from(CHUNKS))
def test_entail_reflexive(a):
    assert entail(a, a)


@given(st.sampled_from(CHUNKS), st.sampled_from(CHUNKS), st.sampled_from(CHUNKS))
def test_entail_transitive(a, b, c):
    if entail(a, b) and entail(b, c):
        assert entail(a, c)


LOCS = {"x": HeapLoc(0), "y": HeapLoc(1)}
small_heaps = st.lists(
    st.tuples(st.sampled_from([0, 1]), st.integers(0, 2), st.sampled_from(["1/4", "1/2", "1"])), max_size=3
).map(lambda xs: LogHeap([(PointsToRes(HeapLoc(l), IntV(v)), q) for l, v, q in xs]))


def _sane(h):
    # coefficients at most 1 and one value per location
    seen = {}
    for r, q in h.items():
        if q > 1 or seen.setdefault(r.loc, r.value) != r.value:
            return False
    return True


@given(st.sampled_from(CHUNKS), st.sampled_from(CHUNKS), small_heaps)
def test_entail_sound_against_models(a, b, h):
    if _sane(h) and entail(a, b) and models(h, parse_assertion(a), env=LOCS):
        assert models(h, parse_assertion(b), env=LOCS)


# ------------------------------------------------------------ view shifts


def test_viewshifts():
    assert check_viewshift(ViewShiftApp("NewSignal", "obs{}", "signal(s, 3, false) ** obs{(s, 3)}", {"signal": "s", "level": "3"}))
    assert not check_viewshift(ViewShiftApp("SetSignal", "signal(s, 3, false) ** obs{}", None, {"signal": "s"}))
    assert check_viewshift(ViewShiftApp("SetSignal", "signal(s, 3, false) ** obs{(s, 3)}", "signal(s, 3, true) ** obs{}", {"signal": "s"}))
    assert check_viewshift(ViewShiftApp("SemImp", "x |-> 1 ** y |-> 2", "y |-> 2"))
    assert not check_viewshift(ViewShiftApp("SemImp", "x |-> 1", "y |-> 2"))


def test_alloc_then_init():
    chain = [{"rule": "AllocSigID", "signal": "s"}, {"rule": "SigInit", "signal": "s", "level": "2"}]
    vs = ViewShiftApp("Trans", "obs{}", "signal(s, 2, false) ** obs{(s, 2)}", {"chain": chain})
    assert check_viewshift(vs)


# --------------------------------------------------------------- outlines


@pytest.mark.parametrize("name", ["minimal_flag", "fifo"])
def test_corpus_outlines_accepted(name):
    r = check(name)
    assert r.ok, r.error


def test_badlevels_rejected():
    r = check("fifo_badlevels")
    assert not r.ok
    assert r.error.rule == "AwaitGen"
    assert "below the level of all held obligations" in r.error.message


def _with_invs(doc, f):
    d = copy.deepcopy(doc)

    def walk(n):
        if n["rule"] == "WhileDec":
            n["inst"]["inv"] = f(n["inst"]["inv"])
        for c in n.get("children", []):
            walk(c)

    walk(d["proof"])
    return OutlineDoc.from_json(d)


def test_weakened_invariant_rejected():
    doc = corpus_load("fifo").outline
    assert not check("fifo", _with_invs(doc, lambda s: s.replace(" ** pure(n <= 100)", ""))).ok
    # dropping the loop's obligation from the invariant
    assert not check("fifo", _with_invs(doc, lambda s: s[: s.index(" ** obs{")] + " ** obs{}" + s[s.index("} ** [1/2]") + 1 :])).ok


def test_skeleton_without_invariants_rejected():
    e = corpus_load("fifo")
    r = check_outline(OutlineDoc(skeleton(e.program.cmd)), e.program.cmd, e.program.decls)
    assert not r.ok


def test_leaking_program_rejected():
    c = parse_cmd("ghost new_signal 1 as s; skip")
    r = check_outline(OutlineDoc(skeleton(c)), c)
    assert not r.ok


def test_half_write_rejected():
    c = parse_cmd("let x = cons(0) in [x] := 1")
    assert check_outline(OutlineDoc(skeleton(c)), c).ok
    r = check_outline(OutlineDoc(skeleton(c)), parse_cmd("[y] := 1"), pre="obs{} ** y |-(1/2)-> 0")
    assert not r.ok


def test_shape_errors():
    c = parse_cmd("let x = cons(0) in [x]")
    assert check_shape(ProofOutline("Let", children=[ProofOutline("Alloc"), ProofOutline("Read")]), c) == []
    diags = check_shape(ProofOutline("Let", children=[ProofOutline("Read"), ProofOutline("Read")]), c)
    assert diags
    with pytest.raises(ValueError):
        ProofOutline.from_json({"rule": "Let", "bogus": 1})


def test_json_roundtrip_and_schema():
    jsonschema = pytest.importorskip("jsonschema")
    schema = json.loads((corpus_dir() / "outline.schema.json").read_text())
    for name in ("minimal_flag", "fifo", "fifo_badlevels"):
        path = corpus_dir() / f"{name}.outline.json"
        raw = json.loads(path.read_text())
        jsonschema.validate(raw, schema)
        doc = load_outline(path)
        assert OutlineDoc.from_json(doc.to_json()) == doc


# ------------------------------------------------------ frame metamorphic


def random_frame(rng):
    parts = []
    if rng.random() < 0.7:
        parts.append(f"z |-({rng.choice(['1', '1/2', '1/3'])})-> {rng.randint(0, 9)}")
    if rng.random() < 0.5:
        parts.append(f"w |-> {rng.choice(['true', 'false', '7'])}")
    if rng.random() < 0.5:
        parts.append(f"signal(t, {rng.randint(0, 5)}, {rng.choice(['true', 'false'])})")
    if rng.random() < 0.4:
        parts.append(f"[{rng.choice(['1', '1/2'])}]mutex(u, {rng.randint(0, 5)}, FLAG(z))")
    return " ** ".join(parts or ["z |-> 0"])


def frame_holds(n=50, seed=0):
    e = corpus_load("minimal_flag")
    base = check_outline(e.outline, e.program.cmd, e.program.decls)
    if not base.ok:
        return False, "base outline rejected"
    rng = random.Random(seed)
    for _ in range(n):
        f = random_frame(rng)
        r = check_outline(e.outline, e.program.cmd, e.program.decls, pre=f"obs{{}} ** {f}", post=f"obs{{}} ** {f}")
        if not r.ok:
            return False, f"{f}: {r.error}"
    return True, ""


def test_frame_metamorphic():
    ok, why = frame_holds()
    assert ok, why


def test_frame_not_invented():
    e = corpus_load("minimal_flag")
    r = check_outline(e.outline, e.program.cmd, e.program.decls, post="obs{} ** z |-> 0")
    assert not r.ok


# ------------------------------------------------ checker/runtime agreement


@pytest.mark.parametrize("name", ["minimal_flag", "fifo"])
def test_accepted_outlines_run_clean(name):
    from ghostsig.annotated import run_annotated
    from ghostsig.plain import make_schedule

    assert check(name).ok
    prog = corpus_load(name).program
    for seed in range(100):
        # stuck reports are what matters here; the state checks run elsewhere
        tr = run_annotated(prog, make_schedule("random", seed, 16), 1_000_000, check=False, shadow=False)
        assert tr.ok, (seed, tr.report)
