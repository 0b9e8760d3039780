import csv
import json

import pytest
import yaml

from shardsim import cli
from shardsim.cluster import UnknownKey
from shardsim.metrics import METRICS
from shardsim.runner import PLOT_HEADER, load_report, plot_rows

from conftest import small_config
from shardsim.config import config_to_dict

FAILURES = {"crash_rate": 0.05, "mean_downtime": 20, "corruption_rate": 0.05, "corruption_fraction": 0.2}


def scenario(tmp_path, name="s.yaml", drop_seed=False, **overrides):
    raw = config_to_dict(small_config(**overrides))
    if drop_seed:
        del raw["seed"]
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return str(p)


def test_run_is_byte_identical(tmp_path):
    cfg = scenario(tmp_path, failure=FAILURES)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert cli.main(["run", "--config", cfg, "--seed", "42", "--out", str(a), "--quiet"]) == 0
    assert cli.main(["run", "--config", cfg, "--seed", "42", "--out", str(b), "--quiet"]) == 0
    assert a.read_bytes() == b.read_bytes()
    report = json.loads(a.read_text())
    assert report["seeds"] == [42] and report["config"]["seed"] == 42


def test_echoed_config_reproduces_report(tmp_path):
    cfg = scenario(tmp_path, strategy="consistent")
    first = tmp_path / "first.json"
    cli.main(["run", "--config", cfg, "--out", str(first), "--quiet"])
    echo = tmp_path / "echo.yaml"
    echo.write_text(yaml.safe_dump(json.loads(first.read_text())["config"]))
    second = tmp_path / "second.json"
    cli.main(["run", "--config", str(echo), "--out", str(second), "--quiet"])
    assert first.read_bytes() == second.read_bytes()


def test_missing_seed_is_drawn_and_recorded(tmp_path):
    cfg = scenario(tmp_path, drop_seed=True, strategy="hash", duration=30)
    out = tmp_path / "r.json"
    assert cli.main(["run", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    report = json.loads(out.read_text())
    (seed,) = report["seeds"]
    assert 0 <= seed < 2**64 and report["config"]["seed"] == seed


def test_adaptive_report_has_heat_census(tmp_path):
    cfg = scenario(tmp_path, strategy="adaptive")
    out = tmp_path / "r.json"
    assert cli.main(["run", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    buckets = json.loads(out.read_text())["runs"]["adaptive"]["11"]["trace"]["buckets"]
    assert all(set(b["heat"]) == {"hot", "warm", "cold"} for b in buckets)


def test_compare_cross_product(tmp_path, capsys):
    cfg = scenario(tmp_path, duration=60, failure=FAILURES)
    out = tmp_path / "c.json"
    rc = cli.main(["compare", "--config", cfg, "--seeds", "1,2,3",
                   "--strategies", "range,hash,consistent,adaptive", "--out", str(out)])
    assert rc == 0
    report = json.loads(out.read_text())
    assert sum(len(r) for r in report["runs"].values()) == 12
    table = report["normalized"]
    assert sorted(table) == ["adaptive", "consistent", "hash", "range"]
    assert all(sorted(row) == sorted(METRICS) for row in table.values())
    for m in METRICS:
        assert max(row[m] for row in table.values()) == 1.0
    printed = capsys.readouterr().out
    assert "normalized" in printed and "adaptive" in printed


def test_compare_needs_two_strategies(tmp_path):
    cfg = scenario(tmp_path)
    assert cli.main(["compare", "--config", cfg, "--strategies", "hash",
                     "--out", str(tmp_path / "x.json"), "--quiet"]) == cli.EXIT_CONFIG


def test_config_errors_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("nodez: 3\n")
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o.json")]) == 1
    assert cli.main(["run", "--config", str(tmp_path / "none.yaml"), "--out", "o"]) == 1
    err = capsys.readouterr().err
    assert "nodez" in err and "not found" in err


def test_runtime_abort_exits_two(tmp_path, monkeypatch, capsys):
    from shardsim.strategies import HashStrategy

    def broken(self, key, is_write, now):
        raise UnknownKey(f"key {key} is not placed")
    monkeypatch.setattr(HashStrategy, "route", broken)
    cfg = scenario(tmp_path, strategy="hash")
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o.json")]) == 2
    err = capsys.readouterr().err.strip()
    assert len(err.splitlines()) == 1 and "UnknownKey" in err


def fake_report(strategies=("a", "b"), buckets=10, fields=6):
    series = {}
    for i, s in enumerate(strategies):
        body = {"bucket_time": [10.0 * b for b in range(buckets)]}
        for f in range(fields):
            body[f"m{f}"] = [i + f + 0.25 * b for b in range(buckets)]
        series[s] = body
    return {"series": series}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_plotdata_row_count(tmp_path):
    rep = tmp_path / "r.json"
    rep.write_text(json.dumps(fake_report()))
    out = tmp_path / "p.csv"
    assert cli.main(["plotdata", str(rep), "--out", str(out), "--quiet"]) == 0
    rows = read_csv(out)
    assert tuple(rows[0]) == PLOT_HEADER
    assert len(rows) == 121


def test_plotdata_empty_report_is_header_only(tmp_path):
    rep = tmp_path / "r.json"
    rep.write_text(json.dumps({"series": {}}))
    out = tmp_path / "p.csv"
    assert cli.main(["plotdata", str(rep), "--out", str(out), "--quiet"]) == 0
    assert read_csv(out) == [list(PLOT_HEADER)]


def test_plotdata_round_trip(tmp_path):
    cfg = scenario(tmp_path, duration=60)
    rep = tmp_path / "r.json"
    cli.main(["compare", "--config", cfg, "--strategies", "hash,adaptive", "--out", str(rep), "--quiet"])
    out = tmp_path / "p.csv"
    cli.main(["plotdata", str(rep), "--out", str(out), "--quiet"])
    series = load_report(rep)["series"]
    rows = read_csv(out)[1:]
    assert len(rows) == len(plot_rows(load_report(rep)))
    for t, s, m, v in rows:
        i = series[s]["bucket_time"].index(float(t))
        assert float(v) == series[s][m][i]


@pytest.mark.parametrize("content", ["not json", json.dumps([1]), json.dumps({"series": {"a": {"x": [1]}}}),
                                     json.dumps({"series": {"a": {"bucket_time": [0], "x": ["?"]}}})])
def test_malformed_report(tmp_path, content):
    rep = tmp_path / "r.json"
    rep.write_text(content)
    assert cli.main(["plotdata", str(rep), "--out", str(tmp_path / "p.csv")]) == cli.EXIT_CONFIG


def test_log_goes_to_stderr_only(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SHARDSIM_LOG", "info")
    cfg = scenario(tmp_path, strategy="hash", duration=20)
    out = tmp_path / "r.json"
    assert cli.main(["run", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    captured = capsys.readouterr()
    assert captured.out == "" and "running hash" in captured.err
    assert "running" not in out.read_text()
