"""Trace files (JSON lines, conventionally ``*.trace.jsonl``) and the data-source interface.

A trace is UTF-8 text with one JSON object per line. The ``type`` field picks
the record variant; see FORMAT.md for field-by-field documentation. Parsing
validates every record against the data model and turns it into
``Measurement`` values.
"""

from __future__ import annotations

import io
import json
import math
import os
from abc import ABC, abstractmethod
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Any, Iterable, Iterator, Mapping

from .errors import (
    CounterRegressionError,
    MetrionError,
    TraceParseError,
    TraceSemanticError,
    TraceVersionError,
)
from .model import (
    AppRegistry,
    EntityKind,
    LogicalEntity,
    LogicalKind,
    Measurement,
    MetricName,
    Topology,
    validate_topology,
)

NS_PER_S = 1_000_000_000


class RecordType(str, Enum):
    TOPOLOGY = "TOPOLOGY"
    IDLE_CALIBRATION = "IDLE_CALIBRATION"
    ENERGY_SAMPLE = "ENERGY_SAMPLE"
    SCHED_INTERVAL = "SCHED_INTERVAL"
    APP_REGISTRY = "APP_REGISTRY"


# canonical field order per record type; also the exact allowed field set
FIELDS: dict[RecordType, tuple[str, ...]] = {
    RecordType.TOPOLOGY: ("smt_factor", "entities"),
    RecordType.APP_REGISTRY: ("id", "kind", "parent_id", "name"),
    RecordType.IDLE_CALIBRATION: ("component_id", "t_start", "t_stop", "energy_start_j", "energy_stop_j"),
    RecordType.ENERGY_SAMPLE: ("component_id", "t", "energy_j"),
    RecordType.SCHED_INTERVAL: ("thread_id", "core_id", "t_in", "t_out", "ucc", "aperf", "mperf", "dram_reads"),
}


@dataclass(frozen=True)
class TraceRecord:
    record_type: RecordType
    payload: Mapping[str, Any]
    line: int = 0

    def to_json(self) -> str:
        body: dict[str, Any] = {"type": self.record_type.value}
        for name in FIELDS[self.record_type]:
            body[name] = self.payload[name]
        return json.dumps(body, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


@dataclass(frozen=True)
class DataSourceDescriptor:
    name: str
    provided_metrics: frozenset[MetricName]
    provided_entity_kinds: frozenset[EntityKind]

    def __post_init__(self) -> None:
        if not self.provided_metrics:
            raise ValueError(f"data source {self.name!r} provides no metrics")


class DataSource(ABC):
    """A backend that yields topology, registry and measurements.

    Live collectors implement the same three methods as the trace reader.
    """

    descriptor: DataSourceDescriptor

    @abstractmethod
    def topology(self) -> Topology: ...

    @abstractmethod
    def registry(self) -> AppRegistry: ...

    @abstractmethod
    def measurements(self) -> Iterator[Measurement]: ...


@dataclass
class ParsedTrace:
    topology: Topology
    measurements: list[Measurement]
    registry: AppRegistry
    records: list[TraceRecord] = field(default_factory=list)
    # source line of each measurement, parallel to ``measurements``
    lines: list[int] = field(default_factory=list)

    def idle_power(self) -> dict[str, float]:
        return idle_power_from(self.measurements)

    def energy_readings(self) -> dict[str, list[tuple[int, float]]]:
        return energy_readings_from(self.measurements)


def compute_idle_power(pre_reading: float, post_reading: float, duration: float) -> float:
    """Average idle power in watts from two cumulative readings ``duration`` seconds apart."""
    if not duration > 0:
        raise ValueError(f"calibration duration must be positive, got {duration}")
    if post_reading < pre_reading:
        raise CounterRegressionError(f"calibration reading fell from {pre_reading} J to {post_reading} J")
    return (post_reading - pre_reading) / duration


def idle_power_from(measurements: Iterable[Measurement]) -> dict[str, float]:
    """Idle watts per component; the latest calibration wins."""
    latest: dict[str, Measurement] = {}
    for m in measurements:
        if m.metric_id == MetricName.POWER_IDLE_W.value:
            prev = latest.get(m.physical_entity_id)
            if prev is None or m.t_stop >= prev.t_stop:
                latest[m.physical_entity_id] = m
    return {cid: float(m.value) for cid, m in latest.items()}


def energy_readings_from(measurements: Iterable[Measurement]) -> dict[str, list[tuple[int, float]]]:
    """Cumulative ``(t, joules)`` readings per component, sorted by time."""
    out: dict[str, list[tuple[int, float]]] = defaultdict(list)
    for m in measurements:
        if m.metric_id == MetricName.ENERGY_TOTAL_J.value and m.t_start == m.t_stop:
            out[m.physical_entity_id].append((m.t_start, float(m.value)))
    for samples in out.values():
        samples.sort(key=lambda s: s[0])
    return dict(out)


def _lines(source: bytes | str | IO) -> Iterator[str]:
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        source = io.StringIO(source)
    for raw in source:
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        yield raw


def _int(rec: Mapping[str, Any], key: str, line: int, minimum: int = 0) -> int:
    v = rec[key]
    if not isinstance(v, int) or isinstance(v, bool):
        raise TraceParseError(line, f"{key} must be an integer, got {v!r}")
    if v < minimum:
        raise TraceSemanticError(line, f"{key} must be >= {minimum}, got {v}")
    return v


def _float(rec: Mapping[str, Any], key: str, line: int) -> float:
    v = rec[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise TraceParseError(line, f"{key} must be a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v) or v < 0:
        raise TraceSemanticError(line, f"{key} must be finite and non-negative, got {v}")
    return v


def _str(rec: Mapping[str, Any], key: str, line: int, nullable: bool = False) -> str | None:
    v = rec[key]
    if v is None and nullable:
        return None
    if not isinstance(v, str):
        raise TraceParseError(line, f"{key} must be a string, got {v!r}")
    return v


def decode_record(text: str, line: int) -> TraceRecord:
    """Decode one line into a record, checking its shape but not its semantics."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TraceParseError(line, f"invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise TraceParseError(line, "record must be a JSON object")
    kind = obj.pop("type", None)
    if not isinstance(kind, str):
        raise TraceParseError(line, "missing record type")
    try:
        rtype = RecordType(kind)
    except ValueError:
        raise TraceVersionError(line, f"unknown record type {kind!r}") from None
    expected = FIELDS[rtype]
    missing = [f for f in expected if f not in obj]
    extra = sorted(set(obj) - set(expected))
    if missing:
        raise TraceParseError(line, f"{kind} record missing field(s) {missing}")
    if extra:
        raise TraceParseError(line, f"{kind} record has unknown field(s) {extra}")
    return TraceRecord(rtype, obj, line)


class _Builder:
    """Applies records in order, enforcing cross-record invariants."""

    def __init__(self) -> None:
        self.topology: Topology | None = None
        self.registry = AppRegistry()
        self.measurements: list[Measurement] = []
        self.lines: list[int] = []
        self.seen_sample = False
        self.calibrated: set[str] = set()
        self.last_reading: dict[str, tuple[int, float]] = {}

    def emit(self, m: Measurement, line: int) -> None:
        self.measurements.append(m)
        self.lines.append(line)

    def reading(self, cid: str, t: int, value: float, line: int) -> None:
        prev = self.last_reading.get(cid)
        if prev is not None:
            if t <= prev[0]:
                raise TraceSemanticError(line, f"{cid}: energy reading at t={t} is not after t={prev[0]}")
            if value < prev[1]:
                raise TraceSemanticError(
                    line, f"{cid}: cumulative energy regressed from {prev[1]} J to {value} J"
                )
        self.last_reading[cid] = (t, value)
        self.emit(Measurement(cid, MetricName.ENERGY_TOTAL_J.value, None, t, t, value), line)

    def sensed(self, cid: str, line: int):
        assert self.topology is not None
        if cid not in self.topology:
            raise TraceSemanticError(line, f"unknown component {cid!r}")
        comp = self.topology.get(cid)
        if comp.kind not in (EntityKind.CPU_PACKAGE, EntityKind.DRAM_NODE):
            raise TraceSemanticError(line, f"{cid} is a {comp.kind.value}; energy needs a package or DRAM node")
        return comp

    def apply(self, rec: TraceRecord) -> None:
        line, p = rec.line, rec.payload
        if self.topology is None:
            if rec.record_type is not RecordType.TOPOLOGY:
                raise TraceSemanticError(line, "first record must be TOPOLOGY")
            try:
                topo = Topology.from_dict(p)
            except MetrionError as exc:
                raise TraceParseError(line, str(exc)) from None
            result = validate_topology(topo)
            if not result.ok:
                v = result.violations[0]
                raise TraceSemanticError(line, f"invalid topology: {v.entity_id}: {v.message}")
            self.topology = topo
            return
        handler = getattr(self, f"_on_{rec.record_type.value.lower()}")
        handler(line, p)

    def _on_topology(self, line: int, p: Mapping[str, Any]) -> None:
        raise TraceSemanticError(line, "duplicate TOPOLOGY record")

    def _on_app_registry(self, line: int, p: Mapping[str, Any]) -> None:
        eid = _str(p, "id", line)
        try:
            kind = LogicalKind(p["kind"])
        except ValueError:
            raise TraceParseError(line, f"bad logical entity kind {p['kind']!r}") from None
        parent = _str(p, "parent_id", line, nullable=True)
        name = _str(p, "name", line)
        if eid in self.registry:
            raise TraceSemanticError(line, f"duplicate logical entity {eid!r}")
        if kind is LogicalKind.APPLICATION and parent is not None:
            raise TraceSemanticError(line, f"application {eid!r} cannot have a parent")
        if kind is LogicalKind.THREAD:
            if parent is None or parent not in self.registry or self.registry.get(parent).kind is not LogicalKind.APPLICATION:
                raise TraceSemanticError(line, f"thread {eid!r} needs a previously registered parent application")
        self.registry.add(LogicalEntity(eid, kind, parent, name))

    def _on_idle_calibration(self, line: int, p: Mapping[str, Any]) -> None:
        if self.seen_sample:
            raise TraceSemanticError(line, "IDLE_CALIBRATION after the first ENERGY_SAMPLE")
        cid = _str(p, "component_id", line)
        self.sensed(cid, line)
        if cid in self.calibrated:
            raise TraceSemanticError(line, f"{cid} calibrated twice")
        t0, t1 = _int(p, "t_start", line), _int(p, "t_stop", line)
        if t1 <= t0:
            raise TraceSemanticError(line, "calibration needs t_start < t_stop")
        pre, post = _float(p, "energy_start_j", line), _float(p, "energy_stop_j", line)
        try:
            watts = compute_idle_power(pre, post, (t1 - t0) / NS_PER_S)
        except CounterRegressionError as exc:
            raise TraceSemanticError(line, str(exc)) from None
        self.calibrated.add(cid)
        self.reading(cid, t0, pre, line)
        self.emit(Measurement(cid, MetricName.POWER_IDLE_W.value, None, t0, t1, watts), line)
        self.reading(cid, t1, post, line)

    def _on_energy_sample(self, line: int, p: Mapping[str, Any]) -> None:
        self.seen_sample = True
        cid = _str(p, "component_id", line)
        self.sensed(cid, line)
        self.reading(cid, _int(p, "t", line), _float(p, "energy_j", line), line)

    def _on_sched_interval(self, line: int, p: Mapping[str, Any]) -> None:
        assert self.topology is not None
        tid = _str(p, "thread_id", line)
        if not self.registry.is_thread(tid):
            raise TraceSemanticError(line, f"thread {tid!r} is not registered (APP_REGISTRY must come first)")
        core_id = _str(p, "core_id", line)
        if core_id not in self.topology or self.topology.get(core_id).kind is not EntityKind.LOGICAL_CORE:
            raise TraceSemanticError(line, f"{core_id!r} is not a logical core")
        t_in, t_out = _int(p, "t_in", line), _int(p, "t_out", line)
        if t_out < t_in:
            raise TraceSemanticError(line, "t_out before t_in")
        counters = [
            (MetricName.UCC_DELTA, _int(p, "ucc", line)),
            (MetricName.APERF_DELTA, _int(p, "aperf", line)),
            (MetricName.MPERF_DELTA, _int(p, "mperf", line)),
        ]
        for metric, value in counters:
            self.emit(Measurement(core_id, metric.value, tid, t_in, t_out, value), line)
        reads = p["dram_reads"]
        if not isinstance(reads, dict):
            raise TraceParseError(line, "dram_reads must be an object")
        socket = self.topology.get(core_id).socket_index
        for node, count in reads.items():
            if node not in self.topology or self.topology.get(node).kind is not EntityKind.DRAM_NODE:
                raise TraceSemanticError(line, f"DRAM reads against unknown node {node!r}")
            if not isinstance(count, int) or isinstance(count, bool) or count < 0:
                raise TraceParseError(line, f"DRAM read count for {node} must be a non-negative integer")
            local = self.topology.get(node).socket_index == socket
            metric = MetricName.DRAM_READS_LOCAL if local else MetricName.DRAM_READS_REMOTE
            self.emit(Measurement(node, metric.value, tid, t_in, t_out, count), line)


def parse_trace(source: bytes | str | IO) -> ParsedTrace:
    """Parse a whole trace. Measurements come back sorted by ``t_start`` (stable)."""
    builder = _Builder()
    records: list[TraceRecord] = []
    for n, text in enumerate(_lines(source), start=1):
        if not text.strip():
            continue
        rec = decode_record(text, n)
        builder.apply(rec)
        records.append(rec)
    if builder.topology is None:
        raise TraceSemanticError(0, "trace has no TOPOLOGY record")
    order = sorted(range(len(builder.measurements)), key=lambda i: builder.measurements[i].t_start)
    return ParsedTrace(
        builder.topology,
        [builder.measurements[i] for i in order],
        builder.registry,
        records,
        [builder.lines[i] for i in order],
    )


def read_trace(path: str | os.PathLike) -> ParsedTrace:
    with open(path, "rb") as fh:
        return parse_trace(fh)


def dump_records(records: Iterable[TraceRecord]) -> bytes:
    return "".join(r.to_json() + "\n" for r in records).encode("utf-8")


def records_from_pidm(
    topology: Topology, registry: AppRegistry, measurements: Iterable[Measurement]
) -> list[TraceRecord]:
    """Rebuild trace records from data-model values.

    Calibration readings are the ENERGY_TOTAL_J points at either end of a
    POWER_IDLE_W span; all other points become ENERGY_SAMPLE records.
    """
    measurements = list(measurements)
    out = [TraceRecord(RecordType.TOPOLOGY, topology.to_dict())]
    for e in registry:
        out.append(
            TraceRecord(
                RecordType.APP_REGISTRY,
                {"id": e.id, "kind": e.kind.value, "parent_id": e.parent_id, "name": e.name},
            )
        )

    points: dict[tuple[str, int], list[float]] = defaultdict(list)
    for m in measurements:
        if m.metric_id == MetricName.ENERGY_TOTAL_J.value and m.t_start == m.t_stop:
            points[(m.physical_entity_id, m.t_start)].append(float(m.value))

    def take(cid: str, t: int) -> float:
        bucket = points.get((cid, t))
        if not bucket:
            raise TraceSemanticError(0, f"calibration of {cid} lacks an energy reading at t={t}")
        return bucket.pop(0)

    for m in sorted(
        (m for m in measurements if m.metric_id == MetricName.POWER_IDLE_W.value),
        key=lambda m: (m.t_start, m.physical_entity_id),
    ):
        cid = m.physical_entity_id
        out.append(
            TraceRecord(
                RecordType.IDLE_CALIBRATION,
                {
                    "component_id": cid,
                    "t_start": m.t_start,
                    "t_stop": m.t_stop,
                    "energy_start_j": take(cid, m.t_start),
                    "energy_stop_j": take(cid, m.t_stop),
                },
            )
        )

    timed: list[tuple[int, int, TraceRecord]] = []
    for (cid, t), values in points.items():
        for v in values:
            timed.append((t, 0, TraceRecord(RecordType.ENERGY_SAMPLE, {"component_id": cid, "t": t, "energy_j": v})))

    core_fields = {
        MetricName.UCC_DELTA.value: "ucc",
        MetricName.APERF_DELTA.value: "aperf",
        MetricName.MPERF_DELTA.value: "mperf",
    }
    spans: dict[tuple[str, int, int], dict[str, Any]] = {}
    for m in measurements:
        name = core_fields.get(m.metric_id)
        if name is None:
            continue
        key = (m.logical_entity_id, m.t_start, m.t_stop)
        rec = spans.setdefault(
            key,
            {
                "thread_id": m.logical_entity_id,
                "core_id": m.physical_entity_id,
                "t_in": m.t_start,
                "t_out": m.t_stop,
                "ucc": 0,
                "aperf": 0,
                "mperf": 0,
                "dram_reads": {},
            },
        )
        rec[name] = int(m.value)
    for m in measurements:
        if m.metric_id in (MetricName.DRAM_READS_LOCAL.value, MetricName.DRAM_READS_REMOTE.value):
            spans[(m.logical_entity_id, m.t_start, m.t_stop)]["dram_reads"][m.physical_entity_id] = int(m.value)
    for rec in spans.values():
        rec["dram_reads"] = dict(sorted(rec["dram_reads"].items()))
        timed.append((rec["t_in"], 1, TraceRecord(RecordType.SCHED_INTERVAL, rec)))

    timed.sort(key=lambda x: (x[0], x[1]))
    out.extend(r for _, _, r in timed)
    return out


class TraceFileSource(DataSource):
    """Replays a recorded trace file."""

    descriptor = DataSourceDescriptor(
        name="trace-file",
        provided_metrics=frozenset(MetricName),
        provided_entity_kinds=frozenset(
            (EntityKind.CPU_PACKAGE, EntityKind.LOGICAL_CORE, EntityKind.DRAM_NODE)
        ),
    )

    def __init__(self, path: str | os.PathLike):
        self.path = path
        self._parsed: ParsedTrace | None = None

    def _load(self) -> ParsedTrace:
        if self._parsed is None:
            self._parsed = read_trace(self.path)
        return self._parsed

    def topology(self) -> Topology:
        return self._load().topology

    def registry(self) -> AppRegistry:
        return self._load().registry

    def measurements(self) -> Iterator[Measurement]:
        return iter(self._load().measurements)
