"""Acceptance suite: one test per primary criterion, each printing a PASS/FAIL line."""

from __future__ import annotations

import dataclasses
import json
import math
import random
import time
from pathlib import Path

from metrion import cli
import metrion.attribution as attribution_mod
from metrion.attribution import ComponentEnergy, ModelParams, Window, attribute_window
from metrion.ingestion import dump_records, parse_trace
from metrion.intervals import ExecutionInterval, build_intervals, split_smt, tile_windows
from metrion.model import EntityKind, build_topology
from metrion.pipeline import dump_report, report_dict, run
from metrion.simulator import GroundTruthLedger, SimConfig, ThreadSpec, archetype, mape, simulate

from tests import oracles
from tests.oracles import NS_PER_S, US

GOLDEN = Path(__file__).parent / "golden"

# collected for the terminal summary (see conftest.py)
VERDICTS: list[str] = []


def _verdict(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[criterion {number}] {'PASS' if ok else 'FAIL'} - {title}: {detail}"
    VERDICTS.append(line)
    print("\n" + line)
    assert ok, detail


def test_criterion_1_worked_example(tmp_path):
    start = time.perf_counter()
    trace = tmp_path / "example.trace.jsonl"
    trace.write_bytes(oracles.worked_example_trace())
    out = tmp_path / "report.json"
    code = cli.main(["attribute", "--trace", str(trace), "--out", str(out), "--window-ns", str(NS_PER_S)])
    report = json.loads(out.read_text())
    totals = {app: v["total_j"] for app, v in report["totals"]["applications"].items()}
    elapsed = time.perf_counter() - start
    ok = (
        code == 0
        and abs(totals["A"] - 18.3) <= 0.1
        and abs(totals["B"] - 31.7) <= 0.1
        and elapsed < 1.0
    )
    _verdict(1, "worked example", ok, f"A={totals['A']:.4f} J B={totals['B']:.4f} J in {elapsed:.3f} s")


def _random_config(rng: random.Random, seed: int) -> SimConfig:
    sockets = rng.randint(1, 2)
    smt = rng.randint(1, 2)
    cores_per_socket = rng.randint(1, 16 // smt)
    n_logical = sockets * cores_per_socket * smt
    n_threads = rng.randint(1, 64)
    threads = []
    dedicated = 0
    for i in range(n_threads):
        duty = 1.0 if (rng.random() < 0.3 and dedicated < n_logical - 1) else rng.uniform(0.05, 0.95)
        dedicated += duty == 1.0
        threads.append(
            ThreadSpec(
                id=f"t{i}",
                app=f"app{rng.randrange(max(1, n_threads // 4))}",
                cpu_intensity=rng.uniform(0, 1),
                frequency=[[0, rng.uniform(0.5, 1.5)], [rng.randint(1, 5) * 1_000_000, rng.uniform(0.5, 1.5)]],
                dram_read_rate=rng.choice([0.0, rng.uniform(1e5, 2e8)]),
                locality=rng.random(),
                duty_cycle=duty,
            )
        )
    return SimConfig(
        name=f"random{seed}",
        seed=seed,
        sockets=sockets,
        cores_per_socket=cores_per_socket,
        smt_factor=smt,
        duration_ns=rng.randint(5, 15) * 1_000_000,
        calibration_ns=100_000_000,
        sample_period_ns=1_000_000,
        quantum_ns=(100_000, 1_000_000),
        noise_rel_std=rng.choice([0.0, 0.01, 0.05]),
        mode=rng.choice(["default", "adversarial"]),
        uncore_joules_per_read=2e-9,
        dram_joules_per_write=1e-8,
        threads=threads,
    )


def _activity(tile, topology, comp):
    entity = topology.get(comp)
    if entity.kind is EntityKind.CPU_PACKAGE:
        on = [s for s in tile if topology.get(s.core_id).parent_id == comp]
        return any(s.ucc_delta > 0 and s.aperf_delta > 0 for s in on), bool(on)
    readers = any(s.dram_reads.get(comp, 0) > 0 for s in tile)
    return readers, readers


def test_criterion_2_conservation():
    start = time.perf_counter()
    rng = random.Random(2024)
    checked = failures = 0
    first_failure = ""
    for k in range(200):
        cfg = _random_config(rng, k)
        trace, _ = simulate(cfg)
        parsed = parse_trace(trace)
        window_ns = rng.choice([1_000_000, 2_500_000, 3_000_000])
        result = run(parsed.topology, parsed.registry, parsed.measurements, window_ns=window_ns)
        subs = split_smt(build_intervals(parsed.measurements, parsed.topology), parsed.topology)
        edges = [r.window.t_start for r in result.reports] + [result.reports[-1].window.t_stop]
        tiles = tile_windows(subs, edges)
        for report, tile in zip(result.reports, tiles):
            for comp, energy in report.window.component_energy.items():
                has_work, has_time = _activity(tile, parsed.topology, comp)
                shares = [c[comp] for c in report.per_thread.values() if comp in c]
                for label, expected, got, active in (
                    ("active", energy.active_j, math.fsum(s.active_j for s in shares), has_work),
                    ("idle", energy.idle_j, math.fsum(s.idle_j for s in shares), has_time),
                ):
                    if not active:
                        continue
                    checked += 1
                    if not math.isclose(got, expected, rel_tol=1e-9, abs_tol=1e-12):
                        failures += 1
                        first_failure = first_failure or f"{cfg.name} {comp} {label}: {got} vs {expected}"
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 60
    _verdict(2, "conservation", ok, f"{checked} component sums checked, {failures} off, {elapsed:.1f} s {first_failure}")


def _oracle_case(rng: random.Random):
    topo = build_topology(2, 2, 2)
    n_threads = rng.randint(1, 5)
    n_intervals = rng.randint(1, 20)
    t0 = NS_PER_S
    horizon_us = rng.choice([50, 200, 1000])
    spans = oracles.random_schedule(rng, topo, n_threads, n_intervals, horizon_us, t0=t0)
    apps = {f"t{i}": f"app{i % 2}" for i in range(n_threads)}
    window_ns = rng.choice([horizon_us * US, horizon_us * US // 3 + 1, 17 * US])
    edges = list(range(t0, t0 + horizon_us * US, window_ns)) + [t0 + horizon_us * US]
    # dyadic values keep calibration (stop - start) / 1 s exact, so both sides see identical window energy
    idle_w = {c.id: rng.choice([0.0, 2.0, 4.5, 12.25, 30.0]) for c in topo.components()}
    readings = {}
    for c in topo.components():
        value = float(rng.randint(100, 10_000))
        samples = [(t0, value)]
        for a, b in zip(edges, edges[1:]):
            value += round(idle_w[c.id] * (b - a) / NS_PER_S * rng.uniform(0.5, 3.0) * 2**20) / 2**20
            samples.append((b, value))
        readings[c.id] = samples
    trace = oracles.trace_lines(topo, apps, spans, idle_w, readings, (0, t0))
    energy = []
    for w, (a, b) in enumerate(zip(edges, edges[1:])):
        per = {}
        for comp, samples in readings.items():
            total = samples[w + 1][1] - samples[w][1]
            idle = idle_w[comp] * ((b - a) / NS_PER_S)
            per[comp] = (idle, max(0.0, total - idle))
        energy.append(per)
    return topo, spans, apps, edges, window_ns, energy, trace


def test_criterion_3_brute_force_oracle():
    start = time.perf_counter()
    rng = random.Random(3)
    cases = mismatches = 0
    detail = ""
    while time.perf_counter() - start < 6.0 and cases < 400:
        topo, spans, apps, edges, window_ns, energy, trace = _oracle_case(rng)
        sigma = rng.choice([1.0, 1.15, 1.7])
        gamma = rng.choice([1.0, 9.67])
        if not spans:
            continue
        parsed = parse_trace(trace)
        result = run(parsed.topology, parsed.registry, parsed.measurements, ModelParams(sigma, gamma), window_ns)
        expected = oracles.brute_force(topo, spans, apps, edges, energy, sigma, gamma)
        got = [
            {tid: {c: (s.active_j, s.idle_j) for c, s in comps.items()} for tid, comps in r.per_thread.items()}
            for r in result.reports
        ]
        # threads with no recorded share on a component appear with (0, 0) on the pipeline side only
        got = [{t: {c: v for c, v in comps.items() if v != (0.0, 0.0)} for t, comps in w.items()} for w in got]
        expected = [{t: {c: v for c, v in comps.items() if v != (0.0, 0.0)} for t, comps in w.items()} for w in expected]
        got = [{t: c for t, c in w.items() if c} for w in got]
        expected = [{t: c for t, c in w.items() if c} for w in expected]
        cases += 1
        if got != expected:
            mismatches += 1
            detail = detail or f"case {cases}: {got} != {expected}"
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and cases >= 100 and elapsed < 10
    _verdict(3, "brute-force oracle", ok, f"{cases} traces, {mismatches} mismatches, {elapsed:.2f} s {detail[:300]}")


def test_criterion_4_model_consistent_recovery():
    start = time.perf_counter()
    lines = []
    ok = True
    for kind in ("cpu", "memory", "combined"):
        for noise, bound in ((0.0, 0.1), (0.01, 2.0)):
            cfg = archetype(kind, seed=11, noise=noise)
            trace, ledger = simulate(cfg)
            parsed = parse_trace(trace)
            result = run(parsed.topology, parsed.registry, parsed.measurements,
                         ModelParams(cfg.smt_sigma, cfg.gamma_remote))
            truth = ledger.application_active()
            attributed = result.application_active()
            keys = set(truth) | set(attributed)
            value = mape({k: attributed.get(k, 0.0) for k in keys}, {k: truth.get(k, 0.0) for k in keys})
            ok &= value < bound
            lines.append(f"{kind}@{noise:.0%}={value:.4f}%")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 30
    _verdict(4, "model-consistent recovery", ok, f"{' '.join(lines)} in {elapsed:.1f} s")


def test_criterion_5_smt_splitting():
    rng = random.Random(5)
    problems = []
    samples = 0
    for k in range(100):
        topo = build_topology(rng.randint(1, 2), rng.randint(1, 3), rng.choice([2, 2, 1]))
        spans = oracles.random_schedule(rng, topo, rng.randint(1, 8), rng.randint(1, 30), 400)
        intervals = [
            ExecutionInterval(s.thread, s.core, s.t_in, s.t_out, s.ucc, s.aperf, s.mperf, dict(s.reads))
            for s in spans
        ]
        subs = split_smt(intervals, topo)
        by_parent = {}
        for sub in subs:
            by_parent.setdefault(id(sub.parent), []).append(sub)
        for iv in intervals:
            pieces = sorted(by_parent.get(id(iv), []), key=lambda s: s.t_start)
            edges = [p.t_start for p in pieces] + [pieces[-1].t_stop] if pieces else []
            if not pieces or edges[0] != iv.t_in or edges[-1] != iv.t_out or any(
                a.t_stop != b.t_start for a, b in zip(pieces, pieces[1:])
            ):
                problems.append(f"schedule {k}: {iv} not tiled")
                continue
            for name in ("ucc_delta", "aperf_delta", "mperf_delta"):
                if sum(getattr(p, name) for p in pieces) != getattr(iv, name):
                    problems.append(f"schedule {k}: {name} not conserved")
            for node, n in iv.dram_reads.items():
                if sum(p.dram_reads[node] for p in pieces) != n:
                    problems.append(f"schedule {k}: reads on {node} not conserved")
            for p in pieces:
                for t in range(p.t_start, p.t_stop, US):
                    samples += 1
                    if oracles.siblings_busy_at(topo, spans, p.core_id, t + US / 2) != p.smt_active:
                        problems.append(f"schedule {k}: {p.core_id}@{t} labelled {p.smt_active}")
                        break
    ok = not problems
    _verdict(5, "SMT splitting", ok, f"{samples} sweep points over 100 schedules; {problems[:3]}")


def _sensitivity_case(rng):
    topo, spans, apps, edges, window_ns, energy, trace = _oracle_case(rng)
    parsed = parse_trace(trace)
    subs = split_smt(build_intervals(parsed.measurements, topo), topo)
    tiles = tile_windows(subs, edges)
    windows = [
        Window(a, b, {c: ComponentEnergy(i + act, i, act) for c, (i, act) in energy[w].items()})
        for w, (a, b) in enumerate(zip(edges, edges[1:]))
    ]
    return topo, parsed.registry, tiles, windows


def _positive_active(report, comp):
    vals = {tid: c[comp].active_j for tid, c in report.per_thread.items() if comp in c}
    return {t: v for t, v in vals.items() if v > 0}


def test_criterion_6_parameter_sensitivity(monkeypatch):
    rng = random.Random(6)
    flag_problems = 0
    scale_problems = 0
    cases = 0
    original = attribution_mod._component_work
    for _ in range(150):
        topo, registry, tiles, windows = _sensitivity_case(rng)
        for tile, window in zip(tiles, windows):
            if not tile:
                continue
            cases += 1
            params = ModelParams(smt_sigma=1.0)
            base = attribute_window(tile, window, topo, registry, params)
            flipped = [dataclasses.replace(s, smt_active=not s.smt_active) for s in tile]
            if attribute_window(flipped, window, topo, registry, params).per_thread != base.per_thread:
                flag_problems += 1

            target = rng.choice(sorted(window.component_energy))
            factor = rng.choice([1e-6, 0.37, 3.0, 1234.5, 1e9])
            ref = attribute_window(tile, window, topo, registry, ModelParams())
            monkeypatch.setattr(
                attribution_mod,
                "_component_work",
                lambda s, comp, t, p: original(s, comp, t, p) * (factor if comp.id == target else 1.0),
            )
            scaled = attribute_window(tile, window, topo, registry, ModelParams())
            monkeypatch.setattr(attribution_mod, "_component_work", original)
            a, b = _positive_active(ref, target), _positive_active(scaled, target)
            if a.keys() != b.keys():
                scale_problems += 1
                continue
            # the scaled run's favourite must also be a favourite of the reference run (ties allowed)
            if a and not math.isclose(a[max(b, key=b.get)], max(a.values()), rel_tol=1e-12):
                scale_problems += 1
            if any(not math.isclose(a[t], b[t], rel_tol=1e-9) for t in a):
                scale_problems += 1
    ok = flag_problems == 0 and scale_problems == 0 and cases > 0
    _verdict(6, "parameter sensitivity", ok,
             f"{cases} windows; sigma=1 flag invariance broken {flag_problems}x, scale invariance broken {scale_problems}x")


def test_criterion_7_format_stability(tmp_path):
    config_bytes = (GOLDEN / "config.json").read_bytes()
    trace_bytes = (GOLDEN / "trace.jsonl").read_bytes()
    ledger_bytes = (GOLDEN / "ledger.json").read_bytes()
    report_bytes = (GOLDEN / "report.json").read_bytes()
    checks = {}
    cfg = SimConfig.from_json(config_bytes)
    checks["config round-trip"] = cfg.to_json().encode() == config_bytes
    trace, ledger = simulate(cfg)
    checks["trace regenerated"] = trace == trace_bytes
    checks["ledger regenerated"] = ledger.to_json().encode() == ledger_bytes
    parsed = parse_trace(trace_bytes)
    checks["trace round-trip"] = dump_records(parsed.records) == trace_bytes
    checks["ledger round-trip"] = GroundTruthLedger.from_json(ledger_bytes).to_json().encode() == ledger_bytes
    params = ModelParams(cfg.smt_sigma, cfg.gamma_remote)
    result = run(parsed.topology, parsed.registry, parsed.measurements, params, 5_000_000)
    checks["report regenerated"] = dump_report(report_dict(result, 5_000_000, params)).encode() == report_bytes
    checks["report round-trip"] = dump_report(json.loads(report_bytes)).encode() == report_bytes
    out = tmp_path / "r.json"
    cli.main(["attribute", "--trace", str(GOLDEN / "trace.jsonl"), "--window-ns", "5000000", "--out", str(out)])
    checks["report via cli"] = out.read_bytes() == report_bytes
    failed = [k for k, v in checks.items() if not v]
    _verdict(7, "format stability", not failed, f"{len(checks) - len(failed)}/{len(checks)} byte-identical; failed: {failed}")
