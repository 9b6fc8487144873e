import json
import os
import subprocess
import sys

import pytest

from netfd.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from netfd.config import load_config
from netfd.errors import ConfigurationError
from netfd.output import Check, RunSummary, fmt, read_csv, write_csv

FAST_TRANSPORT = """
[transport]
mode = markovian
n0 = 0.5, 0.1, 0.3
t_end = 200.0
dt = 0.05
output_every = 10.0
"""

UNSTABLE_MEMORY = """
[interaction]
model = ladder
coupling = 0.1
strength = 1.0
[transport]
mode = memory
n0 = 0.5, 0.1, 0.3
t_end = 20.0
dt = 0.05
broadening = 0.05
"""


def write(tmp_path, text, name="scenario.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_transport_run_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["transport", "--config", write(tmp_path, FAST_TRANSPORT), "--out", str(out)])
    assert code == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert any(line.startswith("PASS  asymptote_error") for line in lines)
    h, header, rows = read_csv(str(out / "transport.csv"))
    assert header == ["t", "n_1", "n_2", "n_3", "ndot_1", "ndot_2", "ndot_3", "equilibrium_gap"]
    assert len(rows) == 21 and rows[0][1:4] == [0.5, 0.1, 0.3]
    recs = [json.loads(x) for x in (out / "checks.jsonl").read_text().splitlines()]
    assert recs[0] == {"config_hash": h}
    assert recs[-1]["manifest"] == ["checks.jsonl", "transport.csv"]
    assert all(r["status"] == "pass" for r in recs[1:-1])


def test_missing_config_file(tmp_path):
    assert main(["transport", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)]) == EXIT_CONFIG


@pytest.mark.parametrize("text", [
    "[transport]\nn0 = a, b, c\n",
    "[transport]\nmode = markovian\n",  # a file section replaces the built-in one, so n0 is missing
    "[run]\nkind = evolve\n",
    "[tolerances]\nexact = -1\n",
    "[modes]\nenergies = 1, 2\nstatistics = boson\n",
    "[interaction]\nmodel = sparse\n",
    "not an ini file",
])
def test_configuration_errors(tmp_path, text):
    assert main(["transport", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_tight_tolerance_fails_check(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("NETFD_TOL_EXACT", "1e-30")
    code = main(["transport", "--config", write(tmp_path, FAST_TRANSPORT), "--out", str(tmp_path / "o")])
    assert code == EXIT_CHECK
    assert "FAIL  collision_fixed_point" in capsys.readouterr().out


def test_numerical_failure_exit_code(tmp_path, capsys):
    code = main(["transport", "--config", write(tmp_path, UNSTABLE_MEMORY), "--out", str(tmp_path / "o")])
    assert code == EXIT_NUMERIC
    assert "persistently" in capsys.readouterr().err


def test_env_override_changes_hash():
    a = load_config("transport", environ={})
    b = load_config("transport", environ={"NETFD_TOL_EXACT": "1e-10"})
    assert a.tol_exact != b.tol_exact == 1e-10
    assert a.config_hash != b.config_hash
    assert load_config("transport", environ={}).config_hash == a.config_hash


def test_seed_changes_hash():
    assert load_config("evolve", seed=1, environ={}).config_hash != load_config("evolve", seed=2, environ={}).config_hash


def test_unknown_kind():
    with pytest.raises(ConfigurationError):
        load_config("fly")


def test_csv_number_format(tmp_path):
    p = write_csv(str(tmp_path / "x.csv"), ("a", "b"), [(0.1, 2), (1 / 3, float("nan"))], "abc")
    text = open(p).read().splitlines()
    assert text[0] == "# config_hash: abc"
    assert text[2] == "0.10000000000000001,2"
    assert text[3] == "0.33333333333333331,nan"
    assert read_csv(p)[2][0] == [0.1, 2.0]


def test_empty_rows_give_header_only(tmp_path):
    p = write_csv(str(tmp_path / "e.csv"), ("t", "n_1"), [], "h")
    assert open(p).read() == "# config_hash: h\nt,n_1\n"


def test_check_relations():
    assert Check("a", 1e-13, 1e-12).passed
    assert not Check("a", float("nan"), 1e-12).passed
    assert Check("b", 0.5, 1e-3, ">").passed
    s = RunSummary("h")
    s.add("x", 0.0, 1.0)
    with pytest.raises(ValueError):
        s.add("x", 0.0, 1.0)
    assert fmt(True) == "true" and fmt(3) == "3"


def test_reruns_are_byte_identical(tmp_path):
    cfg = write(tmp_path, FAST_TRANSPORT)
    for d in ("a", "b"):
        assert main(["transport", "--config", cfg, "--out", str(tmp_path / d), "--seed", "7"]) == EXIT_OK
    for name in ("transport.csv", "checks.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_console_entry_point(tmp_path):
    env = dict(os.environ)
    env.pop("NETFD_TOL_EXACT", None)
    proc = subprocess.run([sys.executable, "-m", "netfd.cli", "verify-algebra", "--out", str(tmp_path)],
                          capture_output=True, text=True, env=env, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert "FAIL" not in proc.stdout
    assert (tmp_path / "algebra.csv").exists()


def test_table_vertex_reproduces_ladder(tmp_path):
    table = FAST_TRANSPORT + """
[interaction]
model = table
coupling = 0.1
[interaction.vertex]
0,2,1,1 = 0.5
2,0,1,1 = 0.5
1,1,0,2 = 0.5
1,1,2,0 = 0.5
"""
    assert main(["transport", "--config", write(tmp_path, FAST_TRANSPORT, "a.ini"), "--out", str(tmp_path / "a")]) == 0
    assert main(["transport", "--config", write(tmp_path, table, "b.ini"), "--out", str(tmp_path / "b")]) == 0
    assert read_csv(str(tmp_path / "a" / "transport.csv"))[2] == read_csv(str(tmp_path / "b" / "transport.csv"))[2]


def test_asymmetric_table_vertex_rejected(tmp_path):
    text = "[interaction]\nmodel = table\ncoupling = 0.1\n[interaction.vertex]\n0,2,1,1 = 0.5\n"
    assert main(["transport", "--config", write(tmp_path, FAST_TRANSPORT + text), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
