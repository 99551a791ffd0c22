"""End-to-end attribution over a tiled time span and the report format."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .attribution import (
    AttributionReport,
    Diagnostics,
    ModelParams,
    attribute_window,
    compute_window,
    conservation_errors,
)
from .errors import ConservationError, MissingSampleError
from .ingestion import energy_readings_from, idle_power_from
from .intervals import SubInterval, build_intervals, split_smt, tile_windows
from .model import AppRegistry, Measurement, MetricName, Topology

log = logging.getLogger(__name__)

REPORT_FORMAT = "metrion.report/1"
DEFAULT_WINDOW_NS = 100_000_000


@dataclass
class RunResult:
    reports: list[AttributionReport]
    partial_last: bool
    conservation: list[str] = field(default_factory=list)

    def thread_active(self) -> dict[tuple[str, str], float]:
        """Run-total attributed active joules per (thread, component)."""
        return _run_totals((r.per_thread for r in self.reports), "active")

    def application_active(self) -> dict[tuple[str, str], float]:
        return _run_totals((r.per_application for r in self.reports), "active")

    def application_totals(self) -> dict[str, float]:
        parts: dict[str, list[float]] = {}
        for r in self.reports:
            for app, comps in r.per_application.items():
                parts.setdefault(app, []).extend(x for s in comps.values() for x in s)
        return {app: math.fsum(v) for app, v in sorted(parts.items())}


def _run_totals(tables: Iterable[Mapping[str, Mapping[str, Any]]], which: str) -> dict[tuple[str, str], float]:
    parts: dict[tuple[str, str], list[float]] = {}
    for table in tables:
        for owner, comps in table.items():
            for cid, share in comps.items():
                value = share.active_j if which == "active" else share.idle_j
                parts.setdefault((owner, cid), []).append(value)
    return {k: math.fsum(v) for k, v in sorted(parts.items())}


def attribution_span(measurements: Sequence[Measurement]) -> tuple[int, int]:
    """Time range covered by both calibration and energy readings of every component."""
    readings = energy_readings_from(measurements)
    if not readings:
        raise MissingSampleError("no energy readings")
    calibrated_until: dict[str, int] = {}
    for m in measurements:
        if m.metric_id == MetricName.POWER_IDLE_W.value:
            calibrated_until[m.physical_entity_id] = max(calibrated_until.get(m.physical_entity_id, 0), m.t_stop)
    start = max(max(calibrated_until.get(cid, s[0][0]), s[0][0]) for cid, s in readings.items())
    stop = min(s[-1][0] for s in readings.values())
    if start >= stop:
        raise MissingSampleError(f"no time span is covered by every component's readings ({start} >= {stop})")
    return start, stop


def window_boundaries(start: int, stop: int, window_ns: int) -> list[int]:
    if window_ns <= 0:
        raise ValueError("window length must be positive")
    edges = list(range(start, stop, window_ns))
    edges.append(stop)
    return edges


def _attribute_one(args: tuple) -> AttributionReport:
    subs, readings, idle, a, b, topology, registry, params = args
    diag = Diagnostics()
    window = compute_window(readings, idle, a, b, diag)
    return attribute_window(subs, window, topology, registry, params, diag)


def run(
    topology: Topology,
    registry: AppRegistry,
    measurements: Sequence[Measurement],
    params: ModelParams | None = None,
    window_ns: int = DEFAULT_WINDOW_NS,
    jobs: int = 1,
    span: tuple[int, int] | None = None,
) -> RunResult:
    """Attribute every window of the covered span; the last window may be shorter."""
    params = params or ModelParams()
    measurements = list(measurements)
    start, stop = span or attribution_span(measurements)
    edges = window_boundaries(start, stop, window_ns)
    idle = idle_power_from(measurements)
    readings = energy_readings_from(measurements)
    intervals = build_intervals(measurements, topology)
    subs = split_smt(intervals, topology)
    tiles = tile_windows(subs, edges)
    tasks = [
        (tiles[i], readings, idle, edges[i], edges[i + 1], topology, registry, params) for i in range(len(tiles))
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_attribute_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        reports = [_attribute_one(t) for t in tasks]
    problems = []
    for i, r in enumerate(reports):
        problems.extend(f"window {i}: {p}" for p in conservation_errors(r))
        if r.diagnostics.clamps:
            log.warning("window %d: active energy clamped at zero on %s", i, sorted(r.diagnostics.clamps))
    partial = (stop - start) % window_ns != 0
    return RunResult(reports, partial, problems)


def run_checked(*args: Any, **kwargs: Any) -> RunResult:
    result = run(*args, **kwargs)
    if result.conservation:
        raise ConservationError("; ".join(result.conservation[:5]))
    return result


def _num(x: float, raw: bool) -> float:
    if raw or x == 0 or not math.isfinite(x):
        return x
    return float(f"{x:.6g}")


def _shares(table: Mapping[str, Mapping[str, Any]], raw: bool) -> dict[str, Any]:
    return {
        owner: {
            cid: {"active_j": _num(s.active_j, raw), "idle_j": _num(s.idle_j, raw), "total_j": _num(s.total_j, raw)}
            for cid, s in sorted(comps.items())
        }
        for owner, comps in sorted(table.items())
    }


def report_dict(result: RunResult, window_ns: int, params: ModelParams, raw: bool = False) -> dict[str, Any]:
    windows = []
    for i, r in enumerate(result.reports):
        w = r.window
        d = r.diagnostics
        windows.append(
            {
                "index": i,
                "t_start": w.t_start,
                "t_stop": w.t_stop,
                "partial": result.partial_last and i == len(result.reports) - 1,
                "components": {
                    cid: {"total_j": _num(e.total_j, raw), "idle_j": _num(e.idle_j, raw), "active_j": _num(e.active_j, raw)}
                    for cid, e in sorted(w.component_energy.items())
                },
                "threads": _shares(r.per_thread, raw),
                "applications": _shares(r.per_application, raw),
                "diagnostics": {
                    "clamped": {k: _num(v, raw) for k, v in sorted(d.clamps.items())},
                    "unattributed_active_j": {k: _num(v, raw) for k, v in sorted(d.unattributed_active.items())},
                    "unattributed_idle_j": {k: _num(v, raw) for k, v in sorted(d.unattributed_idle.items())},
                },
            }
        )
    app_active = result.application_active()
    return {
        "format": REPORT_FORMAT,
        "window_ns": window_ns,
        "params": {"smt_sigma": params.smt_sigma, "gamma_remote": params.gamma_remote},
        "windows": windows,
        "totals": {
            "applications": {
                app: {
                    "total_j": _num(total, raw),
                    "active_j": {cid: _num(j, raw) for (a, cid), j in app_active.items() if a == app},
                }
                for app, total in result.application_totals().items()
            },
        },
    }


def dump_report(report: Mapping[str, Any]) -> str:
    return json.dumps(report, indent=1, sort_keys=False, ensure_ascii=False, allow_nan=False) + "\n"


def report_application_active(report: Mapping[str, Any]) -> dict[tuple[str, str], float]:
    """Run-total active joules per (application, component) read back from a report."""
    return {
        (app, cid): float(j)
        for app, entry in report["totals"]["applications"].items()
        for cid, j in entry["active_j"].items()
    }


def sub_intervals(measurements: Sequence[Measurement], topology: Topology) -> list[SubInterval]:
    return split_smt(build_intervals(measurements, topology), topology)
