import csv
import io
import json
import subprocess
import sys

import pytest

from tamc.cli import run

STRB = "benchmarks/strb.ta"


def test_parse_summary(capsys):
    assert run(["parse", STRB]) == 0
    assert "4 locations, 8 rules" in capsys.readouterr().out


def test_parse_emit_round_trips(capsys, tmp_path):
    assert run(["parse", STRB, "--emit"]) == 0
    text = capsys.readouterr().out
    (tmp_path / "again.ta").write_text(text)
    assert run(["parse", str(tmp_path / "again.ta"), "--emit"]) == 0
    assert capsys.readouterr().out == text


def test_bundled_files_resolve_by_name(capsys):
    assert run(["parse", "floodmin.ta", "--format", "json"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["flavor"] == "sync" and len(info["rules"]) == 9


def test_input_errors_exit_3(capsys, tmp_path):
    assert run(["parse", "nosuchfile.ta"]) == 3
    assert "nosuchfile" in capsys.readouterr().err
    broken = tmp_path / "broken.ta"
    broken.write_text("thresholdAutomaton x { flavor async; parameters n; }")
    assert run(["parse", str(broken), "--format", "json"]) == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ParseError" and err["line"] >= 1


def test_usage_errors_exit_3(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["frobnicate"])
    assert exc.value.code == 3
    assert run(["explore", STRB]) == 3
    assert "--params" in capsys.readouterr().err


def test_explicit_check(capsys):
    assert run(["check-explicit", STRB, "--params", "n=4,t=1,f=1", "--spec", "unforg", "--format", "json"]) == 0
    (res,) = json.loads(capsys.readouterr().out)["results"]
    assert res["verdict"] == "safe" and res["spec"] == "unforg"


def test_resilience_violation_exits_3():
    assert run(["explore", "benchmarks/tendermint1r.ta", "--params", "N=7,T=2,F=3"]) == 3


@pytest.mark.solver
def test_schema_safety_verdicts(capsys):
    assert run(["schema-safety", STRB, "--spec", "unforg"]) == 0
    assert "unforg: safe" in capsys.readouterr().out
    code = run(["schema-safety", "benchmarks/tendermint1r.ta", "--spec", "agree", "--assume", "N >= 3*T+1",
                "--format", "json"])
    assert code == 1
    (res,) = json.loads(capsys.readouterr().out)["results"]
    assert res["verdict"] == "unsafe" and res["trace"]["steps"]


@pytest.mark.solver
def test_sync_commands(capsys):
    assert run(["diameter", "benchmarks/floodmin.ta", "--format", "json"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["status"] == "found" and 1 <= d["diameter"] <= 8
    assert run(["bmc", "benchmarks/floodmin.ta", "--depth", str(d["diameter"]), "--spec", "agreement"]) == 0
    assert "agreement: safe" in capsys.readouterr().out


@pytest.mark.solver
def test_liveness_command(capsys):
    assert run(["schema-liveness", STRB, "--spec", "corr"]) == 0
    assert run(["schema-liveness", STRB, "--spec", "corr", "--no-fairness"]) == 1
    assert "loop starts here" in capsys.readouterr().out


@pytest.mark.solver
def test_translate_writes_automaton(tmp_path, capsys):
    out = tmp_path / "strb_sent.ta"
    assert run(["translate", "benchmarks/strb_receive.ta", "--fault", "byzantine", "-o", str(out)]) == 0
    text = out.read_text()
    assert "echo >= t + 1 - f" in text and "nr(" not in text
    assert run(["parse", str(out)]) == 0


@pytest.mark.solver
def test_bench_writes_table_and_figures(tmp_path, capsys):
    code = run(["bench", "--only", "strb", "--figures", str(tmp_path)])
    out = capsys.readouterr().out
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0
    assert {r["spec"] for r in rows} >= {"unforg", "corr", "relay"}
    assert all(r["match"] == "True" for r in rows)
    for name in ("bench.csv", "wall_time.png", "schemas.png"):
        assert (tmp_path / name).stat().st_size > 0
    assert (tmp_path / "bench.csv").read_text() == out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tamc", "parse", STRB], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "strb" in proc.stdout
