from __future__ import annotations

import json
import math
import os
import subprocess
import sys
from importlib import resources

import jsonschema
import pytest

import metrion.cli as cli
from metrion.pipeline import RunResult
from metrion.simulator import SimConfig, ThreadSpec, archetype

MS = 1_000_000


def _bundled(name: str) -> str:
    return resources.files("metrion").joinpath(name).read_text(encoding="utf-8")


def _small(tmp_path, name="small", **kw):
    base = dict(
        name=name, sockets=2, cores_per_socket=1, smt_factor=2, duration_ns=40 * MS, calibration_ns=100 * MS,
        sample_period_ns=MS,
        threads=[
            ThreadSpec("w0", "web", dram_read_rate=2e7, locality=0.6),
            ThreadSpec("w1", "web", duty_cycle=0.5),
            ThreadSpec("q0", "db", cpu_intensity=0.4, dram_read_rate=8e7, locality=0.3),
        ],
    )
    base.update(kw)
    path = tmp_path / f"{name}.json"
    path.write_text(SimConfig(**base).to_json())
    return path


def _simulate(tmp_path, config, out="out"):
    assert cli.main(["simulate", "--config", str(config), "--out", str(tmp_path / out)]) == 0
    name = json.loads(config.read_text())["name"]
    return tmp_path / out / f"{name}.trace.jsonl", tmp_path / out / f"{name}.ledger.json"


def _attribute(tmp_path, trace, *extra, out="report.json"):
    dest = tmp_path / out
    assert cli.main(["attribute", "--trace", str(trace), "--window-ns", str(10 * MS), "--out", str(dest), *extra]) == 0
    return json.loads(dest.read_text())


def test_bundled_config_simulates_deterministically(tmp_path):
    config = tmp_path / "example.json"
    config.write_text(_bundled("data/example_sim.json"))
    trace, ledger = _simulate(tmp_path, config, "a")
    again, again_ledger = _simulate(tmp_path, config, "b")
    assert sorted(p.name for p in trace.parent.iterdir()) == sorted([trace.name, ledger.name])
    assert trace.read_bytes() == again.read_bytes()
    assert ledger.read_bytes() == again_ledger.read_bytes()


def test_malformed_config_exits_2_and_writes_nothing(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"sockets": -1, "threads": [{"id": "t", "app": "a"}]}')
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", str(bad), "--out", str(out)]) == 2
    assert not out.exists() or not any(out.iterdir())
    assert "sockets" in capsys.readouterr().err


def test_single_thread_gets_all_active_energy(tmp_path):
    config = _small(tmp_path, sockets=1, smt_factor=1, threads=[ThreadSpec("solo", "app", dram_read_rate=1e7)])
    trace, _ = _simulate(tmp_path, config)
    report = _attribute(tmp_path, trace, "--raw")
    for w in report["windows"]:
        for cid, comp in w["components"].items():
            got = w["applications"].get("app", {}).get(cid, {"active_j": 0.0})["active_j"]
            assert got == pytest.approx(comp["active_j"], rel=1e-9, abs=1e-12)


def test_report_totals_resum_windows_and_match_schema(tmp_path):
    trace, _ = _simulate(tmp_path, _small(tmp_path))
    report = _attribute(tmp_path, trace, "--raw")
    jsonschema.validate(report, json.loads(_bundled("schemas/report.schema.json")))
    for app, entry in report["totals"]["applications"].items():
        for cid, total in entry["active_j"].items():
            parts = [w["applications"][app][cid]["active_j"] for w in report["windows"]
                     if cid in w["applications"].get(app, {})]
            assert total == pytest.approx(math.fsum(parts), rel=1e-12)
    rounded = _attribute(tmp_path, trace, out="rounded.json")
    jsonschema.validate(rounded, json.loads(_bundled("schemas/report.schema.json")))
    sample = rounded["windows"][0]["components"]["pkg0"]["total_j"]
    assert sample == float(f"{sample:.6g}")


def test_parallel_jobs_give_identical_report(tmp_path):
    trace, _ = _simulate(tmp_path, _small(tmp_path))
    one = _attribute(tmp_path, trace, "--raw", out="one.json")
    many = _attribute(tmp_path, trace, "--raw", "--jobs", "3", out="many.json")
    assert one == many


def test_ingest_then_attribute_from_store(tmp_path):
    trace, _ = _simulate(tmp_path, _small(tmp_path))
    store = tmp_path / "m.store"
    assert cli.main(["ingest", "--trace", str(trace), "--store", str(store)]) == 0
    assert cli.main(["ingest", "--trace", str(trace), "--store", str(store)]) == 0
    direct = _attribute(tmp_path, trace, "--raw", out="direct.json")
    dest = tmp_path / "stored.json"
    assert cli.main(["attribute", "--store", str(store), "--window-ns", str(10 * MS), "--raw", "--out", str(dest)]) == 0
    assert json.loads(dest.read_text()) == direct


def test_ingest_rejects_a_different_machine(tmp_path):
    trace, _ = _simulate(tmp_path, _small(tmp_path))
    other, _ = _simulate(tmp_path, _small(tmp_path, name="other", cores_per_socket=2), out="o")
    store = tmp_path / "m.store"
    assert cli.main(["ingest", "--trace", str(trace), "--store", str(store)]) == 0
    assert cli.main(["ingest", "--trace", str(other), "--store", str(store)]) == 2


def test_attribute_input_errors(tmp_path):
    trace, _ = _simulate(tmp_path, _small(tmp_path))
    assert cli.main(["attribute"]) == 2
    assert cli.main(["attribute", "--trace", str(trace), "--window-ns", "0"]) == 2
    assert cli.main(["attribute", "--trace", str(trace), "--sigma", "0.5"]) == 2
    assert cli.main(["attribute", "--store", str(tmp_path / "missing")]) == 2
    broken = tmp_path / "broken.trace.jsonl"
    broken.write_bytes(trace.read_bytes()[:-40])
    assert cli.main(["attribute", "--trace", str(broken)]) == 2


def test_conservation_failure_exits_3(tmp_path, monkeypatch):
    trace, _ = _simulate(tmp_path, _small(tmp_path))
    monkeypatch.setattr(cli, "run", lambda *a, **k: RunResult([], False, ["pkg0 window 0: off by 1 J"]))
    dest = tmp_path / "r.json"
    assert cli.main(["attribute", "--trace", str(trace), "--out", str(dest)]) == 3
    assert not dest.exists()


def test_report_subcommand_prints_table(tmp_path, capsys):
    trace, _ = _simulate(tmp_path, _small(tmp_path))
    _attribute(tmp_path, trace)
    capsys.readouterr()
    assert cli.main(["report", "--report", str(tmp_path / "report.json")]) == 0
    text = capsys.readouterr().out
    assert "web" in text and "db" in text and "windows: 4" in text
    (tmp_path / "x.json").write_text("{}")
    assert cli.main(["report", "--report", str(tmp_path / "x.json")]) == 2


def test_evaluate_zero_noise_is_accurate(tmp_path, capsys):
    trace, ledger = _simulate(tmp_path, _small(tmp_path))
    _attribute(tmp_path, trace, "--raw")
    summary = tmp_path / "summary.json"
    assert cli.main(["evaluate", "--report", str(tmp_path / "report.json"), "--ledger", str(ledger),
                     "--out", str(summary)]) == 0
    rows = json.loads(summary.read_text())["mape_percent"]
    assert rows["small"]["all"] < 0.1


def test_evaluate_adversarial_is_nonzero_across_workloads(tmp_path):
    reports, ledgers = [], []
    for kind in ("cpu", "combined"):
        config = tmp_path / f"{kind}.json"
        cfg = archetype(kind, seed=1, duration_ns=50 * MS, mode="adversarial", calibration_ns=100 * MS)
        config.write_text(cfg.to_json())
        trace, ledger = _simulate(tmp_path, config)
        _attribute(tmp_path, trace, out=f"{kind}.report.json")
        reports += ["--report", str(tmp_path / f"{kind}.report.json")]
        ledgers += ["--ledger", str(ledger)]
    summary = tmp_path / "summary.json"
    assert cli.main(["evaluate", *reports, *ledgers, "--out", str(summary)]) == 0
    data = json.loads(summary.read_text())
    assert data["mape_percent"]["combined"]["all"] > 0
    spread = data["across_workloads"]["all"]
    assert spread["cv"] == pytest.approx(spread["std"] / spread["mean"])


def test_evaluate_key_mismatch_exits_2(tmp_path):
    trace, _ = _simulate(tmp_path, _small(tmp_path))
    _attribute(tmp_path, trace)
    other = _small(tmp_path, name="other", threads=[ThreadSpec("z", "elsewhere")])
    _, other_ledger = _simulate(tmp_path, other, "o")
    assert cli.main(["evaluate", "--report", str(tmp_path / "report.json"), "--ledger", str(other_ledger)]) == 2
    report = str(tmp_path / "report.json")
    assert cli.main(["evaluate", "--report", report, "--report", report, "--ledger", str(other_ledger)]) == 2


def test_log_level_from_environment(tmp_path):
    trace, _ = _simulate(tmp_path, _small(tmp_path))
    cmd = [sys.executable, "-m", "metrion.cli", "ingest", "--trace", str(trace), "--store", str(tmp_path / "s")]
    loud = subprocess.run(cmd, capture_output=True, text=True, env={**os.environ, "METRION_LOG": "info"})
    assert loud.returncode == 0 and "measurement(s) added" in loud.stderr
    quiet = subprocess.run(cmd, capture_output=True, text=True, env={**os.environ, "METRION_LOG": "error"})
    assert quiet.returncode == 0 and quiet.stderr == ""
