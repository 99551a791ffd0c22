from __future__ import annotations

import pytest

from metrion.attribution import ModelParams
from metrion.ingestion import parse_trace
from metrion.pipeline import attribution_span, report_dict, run, window_boundaries
from metrion.simulator import SimConfig, ThreadSpec, simulate

MS = 1_000_000


def _parsed(duration_ns=25 * MS):
    cfg = SimConfig(
        sockets=1, cores_per_socket=2, duration_ns=duration_ns, calibration_ns=5 * MS, sample_period_ns=MS,
        threads=[ThreadSpec("a", "x"), ThreadSpec("b", "y", duty_cycle=0.5, dram_read_rate=1e7)],
    )
    return parse_trace(simulate(cfg)[0])


def test_span_starts_after_calibration_and_ends_at_last_reading():
    parsed = _parsed()
    assert attribution_span(parsed.measurements) == (5 * MS, 30 * MS)


def test_window_boundaries():
    assert window_boundaries(0, 25, 10) == [0, 10, 20, 25]
    assert window_boundaries(0, 20, 10) == [0, 10, 20]
    with pytest.raises(ValueError):
        window_boundaries(0, 10, 0)


def test_last_window_flagged_partial():
    parsed = _parsed()
    result = run(parsed.topology, parsed.registry, parsed.measurements, window_ns=10 * MS)
    assert [(r.window.t_start, r.window.t_stop) for r in result.reports][-1] == (25 * MS, 30 * MS)
    assert result.partial_last
    report = report_dict(result, 10 * MS, ModelParams())
    assert [w["partial"] for w in report["windows"]] == [False, False, True]
    exact = run(parsed.topology, parsed.registry, parsed.measurements, window_ns=5 * MS)
    assert not exact.partial_last and len(exact.reports) == 5


def test_explicit_span_and_conservation():
    parsed = _parsed()
    result = run(parsed.topology, parsed.registry, parsed.measurements, window_ns=4 * MS, span=(10 * MS, 18 * MS))
    assert len(result.reports) == 2 and result.conservation == []
