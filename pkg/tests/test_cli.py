import io
import json
import subprocess
import sys

import pytest

from ghostsig.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, RunConfig, cmd_dispatch


def run(*argv):
    out = io.StringIO()
    code = cmd_dispatch(list(argv), out)
    return code, out.getvalue()


def test_run_flag():
    code, out = run("run", "minimal_flag")
    assert code == EXIT_OK and out.startswith("TERMINATED")


def test_run_fifo_random():
    code, out = run("run", "fifo", "--scheduler", "random", "--seed", "4")
    assert code == EXIT_OK and "100 pushes, 100 pops" in out


def test_check():
    assert run("check", "fifo")[0] == EXIT_OK
    code, out = run("check", "fifo_badlevels")
    assert code == EXIT_FAIL and "AwaitGen" in out


def test_check_without_outline():
    code, out = run("check", "fifo_leak")
    assert code == EXIT_USAGE and "--outline" in out


def test_run_annotated_mutants():
    assert run("run-annotated", "minimal_flag")[0] == EXIT_OK
    code, out = run("run-annotated", "fifo_nomutinit")
    assert code == EXIT_FAIL and "STUCK" in out and "Acquire" in out


def test_party_generator():
    code, out = run("run-annotated", "unbounded_party", "--n", "2")
    assert code == EXIT_OK


def test_pog_outputs(tmp_path):
    dot, rep = tmp_path / "g.dot", tmp_path / "r.json"
    code, out = run("pog", "minimal_flag", "--dot", str(dot), "--report", str(rep))
    assert code == EXIT_OK and "0 violations" in out
    assert dot.read_text().startswith("digraph pog")
    assert json.loads(rep.read_text())["ok"] is True


def test_trace_file(tmp_path):
    t = tmp_path / "t.jsonl"
    assert run("run", "minimal_flag", "--trace", str(t))[0] == EXIT_OK
    lines = t.read_text().splitlines()
    assert lines and all("rule" in json.loads(x) for x in lines)


def test_corpus_listing():
    code, out = run("corpus")
    assert code == EXIT_OK
    assert "fifo  [outline]" in out and "unbounded_party(N)" in out


@pytest.mark.parametrize(
    "argv",
    [[], ["--bogus"], ["run"], ["run", "nope"], ["run", "fifo", "--max-steps", "0"], ["run", "fifo", "--window", "0"]],
)
def test_usage_errors(argv):
    assert run(*argv)[0] == EXIT_USAGE


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(max_steps=0)
    assert RunConfig().schedule() is not None


def test_console_entry():
    p = subprocess.run([sys.executable, "-m", "ghostsig", "run", "minimal_flag"], capture_output=True, text=True)
    assert p.returncode == 0 and "TERMINATED" in p.stdout
