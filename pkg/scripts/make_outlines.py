"""Regenerate the bundled proof outlines from command skeletons."""

import json
import sys
from pathlib import Path

from ghostsig.corpus_loader import corpus_dir, corpus_load
from ghostsig.proof_checker import OutlineDoc, skeleton

LOOP = (
    "{cnt} |-(1/2)-> n ** pure(1 <= n) ** pure(n <= 100) ** obs{{({sig}[n], {lev})}}"
    " ** [1/2]mutex(m, 0, FIFO(q, pc, cc))"
)

# loop invariants in program order: producer, then consumer
INVARIANTS = {
    "minimal_flag": [],
    "fifo": [LOOP.format(cnt="pc", sig="push", lev="101 - n"), LOOP.format(cnt="cc", sig="pop", lev="102 - n")],
    "fifo_badlevels": [LOOP.format(cnt="pc", sig="push", lev="102 - n"), LOOP.format(cnt="cc", sig="pop", lev="101 - n")],
}


def fill(node, invs):
    if node.rule == "WhileDec":
        node.inst = {"var": "n", "inv": invs.pop(0)}
    for ch in node.children:
        fill(ch, invs)


def build(name):
    e = corpus_load(name)
    proof = skeleton(e.program.cmd)
    invs = list(INVARIANTS[name])
    fill(proof, invs)
    assert not invs, name
    return OutlineDoc(proof, program=f"{name}.gs").to_json()


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else corpus_dir()
    for name in INVARIANTS:
        (out / f"{name}.outline.json").write_text(json.dumps(build(name), indent=1) + "\n")
        print("wrote", name)
