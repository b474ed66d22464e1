import csv
import json

import pytest

from rcmlab import cli
from rcmlab.verify import FitReport


def _run(*argv):
    return cli.run([str(a) for a in argv])


def _doc(path):
    with open(path) as fh:
        return json.load(fh)


def test_sample_env_deterministic(tmp_path):
    a, b = tmp_path / "a.rcm", tmp_path / "b.rcm"
    for p in (a, b):
        assert _run("sample-env", "--d", 2, "--n", 64, "--gamma", 1, "--seed", 7, "--out", p) == 0
    assert a.read_bytes() == b.read_bytes()
    da, db = _doc(str(a) + ".json"), _doc(str(b) + ".json")
    for doc in (da, db):
        doc["run"]["config"].pop("out")
    assert da["run"] == db["run"] and da["run"]["config"]["seed"] == 7


def test_saved_environment_reused(tmp_path):
    env = tmp_path / "e.rcm"
    assert _run("sample-env", "--d", 2, "--n", 6, "--seed", 1, "--out", env) == 0
    out1, out2 = tmp_path / "k1.json", tmp_path / "k2.json"
    assert _run("kernel", "--env", env, "--t", 2, "--out", out1) == 0
    assert _run("kernel", "--d", 2, "--n", 6, "--seed", 1, "--t", 2, "--out", out2) == 0
    assert _doc(out1)["run"]["results"] == _doc(out2)["run"]["results"]


def test_verify_decay_passes(tmp_path):
    out = tmp_path / "decay.json"
    assert _run("verify", "decay", "--d", 2, "--gamma", 1, "--seeds", 10, "--out", out) == 0
    assert _doc(out)["run"]["results"]["passed"]


def test_verify_failure_exit_code(tmp_path):
    # an impossible tolerance makes the report fail
    out = tmp_path / "decay.json"
    code = _run("verify", "decay", "--d", 2, "--constant", 1, "--tolerance", 1e-9, "--t-grid", "4,8,16,32",
                "--out", out)
    assert code == 1 and not _doc(out)["run"]["results"]["passed"]


@pytest.mark.parametrize("argv", [
    ["kernel", "--t", "-1"],
    ["kernel", "--bogus", "1"],
    ["verify", "nonsense"],
    ["kernel", "--config", "/nonexistent/config.json"],
    ["walk", "--estimand", "NOPE"],
    ["sample-env", "--d", "2", "--n", "4"],
])
def test_usage_errors(argv, tmp_path):
    assert cli.run(argv) == 2


def test_memory_budget_exit_code(monkeypatch, tmp_path):
    monkeypatch.setenv("RCM_MEMORY_MB", "0.001")
    assert _run("kernel", "--d", 2, "--n", 30, "--t", 1, "--out", tmp_path / "k.json") == 3


def test_bad_thread_variable(monkeypatch):
    monkeypatch.setenv("RCM_THREADS", "many")
    assert _run("kernel", "--t", 1) == 2


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"d": 1, "n": 5, "t": 3.0, "seed": 2}))
    out = tmp_path / "k.json"
    assert _run("kernel", "--config", cfg, "--t", 1.5, "--out", out) == 0
    conf = _doc(out)["run"]["config"]
    assert conf["d"] == 1 and conf["t"] == 1.5 and conf["seed"] == 2
    cfg.write_text(json.dumps({"unknown_key": 1}))
    assert _run("kernel", "--config", cfg) == 2


def test_kernel_csv_and_walk(tmp_path):
    kcsv, wcsv = tmp_path / "k.csv", tmp_path / "w.csv"
    assert _run("kernel", "--d", 2, "--n", 3, "--t", 1, "--csv", kcsv, "--out", tmp_path / "k.json") == 0
    rows = list(csv.reader(kcsv.open()))
    assert rows[0] == ["x0", "x1", "value", "error_bound"] and len(rows) == 50
    assert _run("walk", "--d", 2, "--n", 4, "--t", 1, "--replicas", 100, "--csv", wcsv,
                "--out", tmp_path / "w.json") == 0
    rows = list(csv.reader(wcsv.open()))
    assert rows[0] == ["estimand", "params", "point", "ci_low", "ci_high", "replicas", "seed"]


def test_percolation_and_spectral(tmp_path):
    out = tmp_path / "p.json"
    assert _run("percolation", "--d", 2, "--n", 8, "--p", 0.9, "--xi", 0.5, "--samples", 5,
                "--csv", tmp_path / "tail.csv", "--out", out) == 0
    res = _doc(out)["run"]["results"]
    assert 0 <= res["density"] <= 1 and "finite_cluster_probability" in res
    out = tmp_path / "s.json"
    assert _run("spectral", "--d", 2, "--n", 6, "--lam", 0.5, "--out", out) == 0
    assert _doc(out)["run"]["results"]["lambda1"] > 0


def test_report_round_trip_and_empty(tmp_path):
    rep = FitReport("claim", {"slope": -1.0, "grid": [1, 2]}, {"tol": 0.1}, True, {"seeds": [0]}, [{"t": 1.0}])
    path = tmp_path / "r.json"
    cli.report("JSON", [rep], path)
    assert cli.read_reports(path) == [rep]
    empty = tmp_path / "e.csv"
    cli.report("CSV", [], empty)
    assert empty.read_text().splitlines() == [",".join(cli.REPORT_CSV_COLUMNS)]
    full = tmp_path / "f.csv"
    cli.report("CSV", [rep], full)
    rows = list(csv.reader(full.open()))
    assert tuple(rows[0]) == cli.REPORT_CSV_COLUMNS
    assert rows[1] == ["1", "claim", "1", "slope", "-1.0"]
    cli.report("JSON", [], tmp_path / "e.json")
    assert cli.read_reports(tmp_path / "e.json") == []


def test_version_flag(capsys):
    assert cli.run(["--version"]) == 0
