"""Platform-independent data model and machine topology.

Everything here is immutable once built. ``Topology`` indexes its entities on
construction so lookups by id, kind and socket are O(1).
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping

from .errors import EntityKindError, TopologyError, UnknownEntityError


class EntityKind(str, Enum):
    CPU_PACKAGE = "CpuPackage"
    LOGICAL_CORE = "LogicalCore"
    DRAM_NODE = "DramNode"
    # reserved; validate_topology rejects it
    GPU = "Gpu"


class LogicalKind(str, Enum):
    APPLICATION = "Application"
    THREAD = "Thread"


class MetricName(str, Enum):
    UCC_DELTA = "UCC_DELTA"
    APERF_DELTA = "APERF_DELTA"
    MPERF_DELTA = "MPERF_DELTA"
    DRAM_READS_LOCAL = "DRAM_READS_LOCAL"
    DRAM_READS_REMOTE = "DRAM_READS_REMOTE"
    ENERGY_TOTAL_J = "ENERGY_TOTAL_J"
    POWER_IDLE_W = "POWER_IDLE_W"


CORE_COUNTERS = (MetricName.UCC_DELTA, MetricName.APERF_DELTA, MetricName.MPERF_DELTA)
DRAM_COUNTERS = (MetricName.DRAM_READS_LOCAL, MetricName.DRAM_READS_REMOTE)
COUNTER_METRICS = frozenset(CORE_COUNTERS + DRAM_COUNTERS)


@dataclass(frozen=True)
class Metric:
    id: str
    name: MetricName
    unit: str


def _unit_for(name: MetricName) -> str:
    if name is MetricName.ENERGY_TOTAL_J:
        return "joule"
    if name is MetricName.POWER_IDLE_W:
        return "watt"
    return "count"


# Metric ids coincide with their names; the mapping is fixed.
METRICS: dict[str, Metric] = {m.value: Metric(m.value, m, _unit_for(m)) for m in MetricName}


@dataclass(frozen=True)
class PhysicalEntity:
    id: str
    kind: EntityKind
    parent_id: str | None = None
    socket_index: int = 0
    physical_core_index: int | None = None
    smt_sibling_ids: tuple[str, ...] = ()
    metadata: Mapping[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "parent_id": self.parent_id,
            "socket_index": self.socket_index,
            "physical_core_index": self.physical_core_index,
            "smt_sibling_ids": list(self.smt_sibling_ids),
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> PhysicalEntity:
        _reject_unknown(raw, _ENTITY_FIELDS, "entity")
        try:
            kind = EntityKind(raw["kind"])
        except (KeyError, ValueError) as exc:
            raise TopologyError(f"bad entity kind in {raw!r}") from exc
        pci = raw.get("physical_core_index")
        if pci is not None and (not isinstance(pci, int) or isinstance(pci, bool)):
            raise TopologyError(f"entity {raw.get('id')!r}: physical_core_index must be an integer")
        siblings = raw.get("smt_sibling_ids") or []
        if not isinstance(siblings, list) or not all(isinstance(s, str) for s in siblings):
            raise TopologyError(f"entity {raw.get('id')!r}: smt_sibling_ids must be a list of ids")
        parent = raw.get("parent_id")
        if parent is not None and not isinstance(parent, str):
            raise TopologyError(f"entity {raw.get('id')!r}: parent_id must be a string or null")
        metadata = raw.get("metadata") or {}
        if not isinstance(metadata, Mapping) or not all(isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()):
            raise TopologyError(f"entity {raw.get('id')!r}: metadata must map strings to strings")
        return cls(
            id=_require_str(raw, "id"),
            kind=kind,
            parent_id=parent,
            socket_index=_require_int(raw, "socket_index", default=0),
            physical_core_index=pci,
            smt_sibling_ids=tuple(siblings),
            metadata=dict(metadata),
        )


_ENTITY_FIELDS = frozenset(
    ("id", "kind", "parent_id", "socket_index", "physical_core_index", "smt_sibling_ids", "metadata")
)


@dataclass(frozen=True)
class LogicalEntity:
    id: str
    kind: LogicalKind
    parent_id: str | None = None
    name: str = ""


@dataclass(frozen=True, slots=True)
class Measurement:
    physical_entity_id: str
    metric_id: str
    logical_entity_id: str | None
    t_start: int
    t_stop: int
    value: float


class Topology:
    """Immutable set of physical entities with id/kind/socket indexes."""

    def __init__(self, entities: Iterable[PhysicalEntity], smt_factor: int = 1):
        self._entities = tuple(entities)
        self._smt_factor = smt_factor
        self._by_id: dict[str, PhysicalEntity] = {}
        by_kind: dict[EntityKind, list[PhysicalEntity]] = defaultdict(list)
        by_socket: dict[int, list[PhysicalEntity]] = defaultdict(list)
        for e in self._entities:
            # first definition wins; duplicates are reported by validate_topology
            self._by_id.setdefault(e.id, e)
            by_kind[e.kind].append(e)
            by_socket[e.socket_index].append(e)
        self._by_kind = {k: tuple(v) for k, v in by_kind.items()}
        self._by_socket = {k: tuple(v) for k, v in by_socket.items()}

    @property
    def entities(self) -> tuple[PhysicalEntity, ...]:
        return self._entities

    @property
    def smt_factor(self) -> int:
        return self._smt_factor

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Topology):
            return NotImplemented
        return self._smt_factor == other._smt_factor and self._entities == other._entities

    def __repr__(self) -> str:
        counts = {k.value: len(v) for k, v in self._by_kind.items()}
        return f"Topology(smt_factor={self._smt_factor}, {counts})"

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._by_id

    def get(self, entity_id: str) -> PhysicalEntity:
        try:
            return self._by_id[entity_id]
        except KeyError:
            raise UnknownEntityError(f"unknown physical entity {entity_id!r}") from None

    def by_kind(self, kind: EntityKind) -> tuple[PhysicalEntity, ...]:
        return self._by_kind.get(kind, ())

    def by_socket(self, socket_index: int) -> tuple[PhysicalEntity, ...]:
        return self._by_socket.get(socket_index, ())

    @property
    def packages(self) -> tuple[PhysicalEntity, ...]:
        return self.by_kind(EntityKind.CPU_PACKAGE)

    @property
    def cores(self) -> tuple[PhysicalEntity, ...]:
        return self.by_kind(EntityKind.LOGICAL_CORE)

    @property
    def dram_nodes(self) -> tuple[PhysicalEntity, ...]:
        return self.by_kind(EntityKind.DRAM_NODE)

    def package_for_socket(self, socket_index: int) -> PhysicalEntity:
        for e in self.by_socket(socket_index):
            if e.kind is EntityKind.CPU_PACKAGE:
                return e
        raise UnknownEntityError(f"no CPU package on socket {socket_index}")

    def dram_for_socket(self, socket_index: int) -> PhysicalEntity:
        for e in self.by_socket(socket_index):
            if e.kind is EntityKind.DRAM_NODE:
                return e
        raise UnknownEntityError(f"no DRAM node on socket {socket_index}")

    def components(self) -> tuple[PhysicalEntity, ...]:
        """Sensed components: every CPU package and DRAM node."""
        return self.packages + self.dram_nodes

    def to_dict(self) -> dict[str, Any]:
        return {"smt_factor": self._smt_factor, "entities": [e.to_dict() for e in self._entities]}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> Topology:
        _reject_unknown(raw, frozenset(("smt_factor", "entities")), "topology")
        smt = raw.get("smt_factor")
        if not isinstance(smt, int) or isinstance(smt, bool):
            raise TopologyError("smt_factor must be an integer")
        entities = raw.get("entities")
        if not isinstance(entities, list):
            raise TopologyError("entities must be a list")
        return cls((PhysicalEntity.from_dict(e) for e in entities), smt)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str | bytes) -> Topology:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Violation:
    entity_id: str | None
    message: str


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_topology(topology: Topology) -> ValidationResult:
    out: list[Violation] = []

    def bad(eid: str | None, msg: str) -> None:
        out.append(Violation(eid, msg))

    if topology.smt_factor < 1:
        bad(None, f"smt_factor must be >= 1, got {topology.smt_factor}")

    seen: set[str] = set()
    for e in topology.entities:
        if e.id in seen:
            bad(e.id, "duplicate entity id")
        seen.add(e.id)
        if e.socket_index < 0:
            bad(e.id, "negative socket_index")

    for e in topology.entities:
        if e.kind is EntityKind.GPU:
            bad(e.id, "GPU entities are reserved and not supported")
        elif e.kind in (EntityKind.CPU_PACKAGE, EntityKind.DRAM_NODE):
            if e.parent_id is not None:
                bad(e.id, f"{e.kind.value} must not have a parent")
            if e.smt_sibling_ids:
                bad(e.id, f"{e.kind.value} cannot have SMT siblings")
        elif e.kind is EntityKind.LOGICAL_CORE:
            _check_core(topology, e, bad)

    package_sockets: dict[int, int] = defaultdict(int)
    for p in topology.packages:
        package_sockets[p.socket_index] += 1
    for s, n in package_sockets.items():
        if n > 1:
            bad(None, f"socket {s} has {n} CPU packages")
    dram_sockets: dict[int, int] = defaultdict(int)
    for d in topology.dram_nodes:
        dram_sockets[d.socket_index] += 1
        if package_sockets.get(d.socket_index, 0) != 1:
            bad(d.id, f"DRAM node socket {d.socket_index} matches no unique CPU package")
    for s, n in dram_sockets.items():
        if n > 1:
            bad(None, f"socket {s} has {n} DRAM nodes")
    return ValidationResult(tuple(out))


def _check_core(topology: Topology, e: PhysicalEntity, bad) -> None:
    parent = topology._by_id.get(e.parent_id) if e.parent_id is not None else None
    if parent is None:
        bad(e.id, f"logical core parent {e.parent_id!r} is not a known CPU package")
    elif parent.kind is not EntityKind.CPU_PACKAGE:
        bad(e.id, f"logical core parent {parent.id} is a {parent.kind.value}")
    elif parent.socket_index != e.socket_index:
        bad(e.id, "logical core socket_index differs from its package")
    if e.physical_core_index is None or e.physical_core_index < 0:
        bad(e.id, "logical core needs a non-negative physical_core_index")
    if len(e.smt_sibling_ids) != len(set(e.smt_sibling_ids)):
        bad(e.id, "duplicate SMT sibling")
    if len(e.smt_sibling_ids) + 1 > topology.smt_factor:
        bad(e.id, f"{len(e.smt_sibling_ids) + 1} hardware threads exceed smt_factor {topology.smt_factor}")
    for sid in e.smt_sibling_ids:
        if sid == e.id:
            bad(e.id, "irreflexive siblingship")
            continue
        sib = topology._by_id.get(sid)
        if sib is None:
            bad(e.id, f"unknown SMT sibling {sid}")
            continue
        if sib.kind is not EntityKind.LOGICAL_CORE:
            bad(e.id, f"SMT sibling {sid} is not a logical core")
            continue
        if e.id not in sib.smt_sibling_ids:
            bad(e.id, f"symmetric siblingship: {sid} does not list {e.id}")
        if sib.physical_core_index != e.physical_core_index or sib.parent_id != e.parent_id:
            bad(e.id, f"SMT sibling {sid} is on a different physical core")
    if e.parent_id is not None and e.physical_core_index is not None:
        expected = {
            c.id
            for c in topology.cores
            if c.id != e.id and c.parent_id == e.parent_id and c.physical_core_index == e.physical_core_index
        }
        if expected - set(e.smt_sibling_ids):
            bad(e.id, f"logical cores {sorted(expected - set(e.smt_sibling_ids))} share its physical core but are not listed as siblings")


def resolve_location(core_id: str, topology: Topology) -> tuple[str, int]:
    """Return ``(package_id, socket_index)`` for a logical core."""
    core = topology.get(core_id)
    if core.kind is not EntityKind.LOGICAL_CORE:
        raise EntityKindError(f"{core_id!r} is a {core.kind.value}, not a LogicalCore")
    package = topology.get(core.parent_id)
    return package.id, package.socket_index


def build_topology(sockets: int, cores_per_socket: int, smt_factor: int = 1) -> Topology:
    """Regular machine: ``sockets`` packages, one DRAM node each.

    Logical cores are numbered the way Linux enumerates them: all first
    hardware threads of every socket, then all second hardware threads.
    """
    if sockets < 1 or cores_per_socket < 1 or smt_factor < 1:
        raise TopologyError("sockets, cores_per_socket and smt_factor must all be >= 1")
    entities: list[PhysicalEntity] = []
    n_phys = sockets * cores_per_socket
    for s in range(sockets):
        entities.append(PhysicalEntity(f"pkg{s}", EntityKind.CPU_PACKAGE, socket_index=s))
    for s in range(sockets):
        for c in range(cores_per_socket):
            ids = [f"cpu{h * n_phys + s * cores_per_socket + c}" for h in range(smt_factor)]
            for cid in ids:
                entities.append(
                    PhysicalEntity(
                        cid,
                        EntityKind.LOGICAL_CORE,
                        parent_id=f"pkg{s}",
                        socket_index=s,
                        physical_core_index=c,
                        smt_sibling_ids=tuple(i for i in ids if i != cid),
                    )
                )
    for s in range(sockets):
        entities.append(PhysicalEntity(f"dram{s}", EntityKind.DRAM_NODE, socket_index=s))
    return Topology(entities, smt_factor)


class AppRegistry:
    """Applications and their threads, keyed by id."""

    def __init__(self, entities: Iterable[LogicalEntity] = ()):
        self._entities: dict[str, LogicalEntity] = {}
        for e in entities:
            self.add(e)

    def add(self, entity: LogicalEntity) -> None:
        if entity.id in self._entities:
            raise ValueError(f"duplicate logical entity id {entity.id!r}")
        self._entities[entity.id] = entity

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._entities

    def __iter__(self):
        return iter(self._entities.values())

    def __len__(self) -> int:
        return len(self._entities)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AppRegistry):
            return NotImplemented
        return list(self) == list(other)

    def get(self, entity_id: str) -> LogicalEntity:
        try:
            return self._entities[entity_id]
        except KeyError:
            raise UnknownEntityError(f"unknown logical entity {entity_id!r}") from None

    @property
    def applications(self) -> list[LogicalEntity]:
        return [e for e in self._entities.values() if e.kind is LogicalKind.APPLICATION]

    @property
    def threads(self) -> list[LogicalEntity]:
        return [e for e in self._entities.values() if e.kind is LogicalKind.THREAD]

    def is_thread(self, entity_id: str) -> bool:
        e = self._entities.get(entity_id)
        return e is not None and e.kind is LogicalKind.THREAD

    def application_of(self, thread_id: str) -> str | None:
        t = self._entities.get(thread_id)
        if t is None or t.kind is not LogicalKind.THREAD or t.parent_id is None:
            return None
        app = self._entities.get(t.parent_id)
        if app is None or app.kind is not LogicalKind.APPLICATION:
            return None
        return app.id

    def to_list(self) -> list[dict[str, Any]]:
        return [{"id": e.id, "kind": e.kind.value, "parent_id": e.parent_id, "name": e.name} for e in self]

    @classmethod
    def from_list(cls, raw: Iterable[Mapping[str, Any]]) -> AppRegistry:
        return cls(LogicalEntity(r["id"], LogicalKind(r["kind"]), r.get("parent_id"), r.get("name", "")) for r in raw)


def validate_measurement(
    m: Measurement, topology: Topology, registry: AppRegistry | None = None
) -> list[str]:
    """Return the invariant violations of a single measurement (empty if valid)."""
    problems: list[str] = []
    metric = METRICS.get(m.metric_id)
    if metric is None:
        return [f"unknown metric {m.metric_id!r}"]
    if not (isinstance(m.t_start, int) and isinstance(m.t_stop, int)):
        problems.append("timestamps must be integer nanoseconds")
    elif m.t_start > m.t_stop:
        problems.append(f"t_start {m.t_start} > t_stop {m.t_stop}")
    if not isinstance(m.value, (int, float)) or not math.isfinite(m.value) or m.value < 0:
        problems.append(f"value must be finite and non-negative, got {m.value!r}")
    elif metric.name in COUNTER_METRICS and float(m.value) != int(m.value):
        problems.append("counter values must be integral")
    entity = topology._by_id.get(m.physical_entity_id)
    if entity is None:
        problems.append(f"unknown physical entity {m.physical_entity_id!r}")
        return problems

    name = metric.name
    if name in (MetricName.ENERGY_TOTAL_J, MetricName.POWER_IDLE_W):
        if entity.kind not in (EntityKind.CPU_PACKAGE, EntityKind.DRAM_NODE):
            problems.append(f"{name.value} must reference a CPU package or DRAM node")
        if m.logical_entity_id is not None:
            problems.append(f"{name.value} must not carry a logical entity")
        return problems

    wanted = EntityKind.LOGICAL_CORE if name in CORE_COUNTERS else EntityKind.DRAM_NODE
    if entity.kind is not wanted:
        problems.append(f"{name.value} must reference a {wanted.value}")
    if m.logical_entity_id is None:
        problems.append(f"{name.value} must reference a thread")
    elif registry is not None and not registry.is_thread(m.logical_entity_id):
        problems.append(f"{m.logical_entity_id!r} is not a registered thread")
    return problems


def _reject_unknown(raw: Mapping[str, Any], allowed: frozenset[str], what: str) -> None:
    if not isinstance(raw, Mapping):
        raise TopologyError(f"{what} must be a JSON object")
    extra = set(raw) - allowed
    if extra:
        raise TopologyError(f"unknown {what} field(s): {sorted(extra)}")


def _require_str(raw: Mapping[str, Any], key: str) -> str:
    v = raw.get(key)
    if not isinstance(v, str):
        raise TopologyError(f"field {key!r} must be a string")
    return v


def _require_int(raw: Mapping[str, Any], key: str, default: int | None = None) -> int:
    v = raw.get(key, default)
    if not isinstance(v, int) or isinstance(v, bool):
        raise TopologyError(f"field {key!r} must be an integer")
    return v
