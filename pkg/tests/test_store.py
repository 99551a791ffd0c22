from __future__ import annotations

import random
import threading

import pytest

from metrion.errors import InvalidMeasurementError, StorageError
from metrion.ingestion import parse_trace
from metrion.model import Measurement, MetricName, build_topology
from metrion.simulator import SimConfig, ThreadSpec, simulate
from metrion.store import MeasurementStore

UCC = MetricName.UCC_DELTA.value
TOPO = build_topology(1, 2, 1)


def _three():
    return [
        Measurement("cpu0", UCC, "t1", 0, 10, 5),
        Measurement("cpu1", UCC, "t2", 5, 15, 6),
        Measurement("pkg0", MetricName.ENERGY_TOTAL_J.value, None, 20, 20, 1.5),
    ]


def _intersects(m, t0, t1):
    if m.t_start == m.t_stop:
        return t0 <= m.t_start < t1
    return m.t_start < t1 and m.t_stop > t0


def test_append_and_query_all():
    store = MeasurementStore.memory(TOPO)
    assert store.append(_three()) == 3
    assert len(store.query_window(0, 100)) == 3


def test_same_batch_twice_is_idempotent():
    store = MeasurementStore.memory(TOPO)
    store.append(_three())
    assert store.append(_three()) == 0
    assert len(store.query_window(0, 100)) == 3


def test_empty_store_and_bad_range():
    store = MeasurementStore.memory()
    assert store.query_window(0, 10) == []
    assert store.span() is None
    with pytest.raises(ValueError):
        store.query_window(10, 5)


def test_boundary_spanning_measurement_is_included():
    store = MeasurementStore.memory(TOPO)
    store.append(_three())
    assert [m.logical_entity_id for m in store.query_window(8, 9)] == ["t1", "t2"]
    assert store.query_window(15, 20) == []
    assert len(store.query_window(20, 21)) == 1


def test_filters():
    store = MeasurementStore.memory(TOPO)
    store.append(_three())
    assert [m.physical_entity_id for m in store.query_window(0, 100, metric=UCC)] == ["cpu0", "cpu1"]
    assert len(store.query_window(0, 100, logical_entity_id="t2")) == 1
    assert len(store.query_window(0, 100, metric=UCC, physical_entity_id="cpu1")) == 1
    assert len(store.query_window(0, 100, predicate=lambda m: m.value > 5)) == 1


def test_invalid_batch_is_rejected_whole():
    store = MeasurementStore.memory(TOPO)
    bad = _three() + [Measurement("cpu0", UCC, "t1", 10, 0, 1)]
    with pytest.raises(InvalidMeasurementError) as info:
        store.append(bad)
    assert info.value.index == 3
    assert len(store) == 0


def test_persistence_and_corruption(tmp_path):
    path = tmp_path / "m.log"
    with MeasurementStore.open(path, TOPO) as store:
        store.append(_three())
        store.set_meta("topology", TOPO.to_dict())
        before = store.all()
    with MeasurementStore.open(path) as again:
        assert again.topology == TOPO
        assert again.all() == before
        assert again.append(_three()) == 0
    with open(path, "ab") as fh:
        fh.write(b'{"batch": "x", "rows": [')
    with pytest.raises(StorageError):
        MeasurementStore.open(path)


def test_range_queries_match_linear_scan():
    cfg = SimConfig(
        sockets=2, cores_per_socket=2, smt_factor=2, duration_ns=20_000_000, calibration_ns=1_000_000,
        sample_period_ns=100_000, quantum_ns=(2_000, 8_000),
        threads=[ThreadSpec(f"t{i}", "app", duty_cycle=0.8, dram_read_rate=3e7, locality=0.5) for i in range(10)],
    )
    parsed = parse_trace(simulate(cfg)[0])
    items = parsed.measurements
    assert len(items) >= 100_000
    store = MeasurementStore.memory(parsed.topology)
    store.append(items)
    lo = min(m.t_start for m in items)
    hi = max(m.t_stop for m in items) + 1
    rng = random.Random(0)
    ranges = [(lo + (hi - lo) * k // 10, lo + (hi - lo) * (k + 1) // 10) for k in range(10)]
    ranges += [tuple(sorted(rng.sample(range(lo, hi), 2))) for _ in range(20)]
    for t0, t1 in ranges:
        expected = sorted((m for m in items if _intersects(m, t0, t1)), key=repr)
        assert sorted(store.query_window(t0, t1), key=repr) == expected
    t0, t1 = ranges[3]
    expected = [m for m in items if _intersects(m, t0, t1) and m.metric_id == UCC and m.physical_entity_id == "cpu2"]
    assert sorted(store.query_window(t0, t1, metric=UCC, physical_entity_id="cpu2"), key=repr) == sorted(expected, key=repr)


def test_concurrent_appends_are_all_kept():
    store = MeasurementStore.memory(TOPO)

    def worker(k):
        store.append([Measurement("cpu0", UCC, f"t{k}", k * 10 + i, k * 10 + i + 1, i) for i in range(10)])

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(store.query_window(0, 1000)) == 80


def test_corrupt_complete_line_is_storage_error(tmp_path):
    path = tmp_path / "m.log"
    path.write_bytes(b"not json\n")
    with pytest.raises(StorageError):
        MeasurementStore.open(path)
