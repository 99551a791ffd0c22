"""Synthetic workloads with a ground-truth energy ledger.

The simulator schedules threads on a generated machine, derives counter
deltas for every execution interval, and charges each thread the energy its
work truly costs. Sensor streams are the exact sum of that energy plus idle
power, with optional relative noise applied per sample period.

In ``default`` mode the true power model is the attribution model's own work
model, so noiseless attribution should recover the ledger up to integer
rounding of counters. ``adversarial`` mode adds energy the counters cannot
see (uncore load driven by reads, DRAM writes).
"""

from __future__ import annotations

import heapq
import json
import math
import random
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .errors import KeyMismatchError, SimConfigError
from .ingestion import RecordType, TraceRecord, dump_records
from .model import EntityKind, Topology, build_topology

NS_PER_S = 1_000_000_000
LEDGER_FORMAT = "metrion-ledger/1"

Profile = list[tuple[int, float]]


@dataclass
class ThreadSpec:
    id: str
    app: str
    cpu_intensity: float | list = 1.0
    frequency: float | list = 1.0
    dram_read_rate: float = 0.0
    locality: float = 1.0
    duty_cycle: float = 1.0
    affinity: list[str] | None = None
    dram_write_rate: float = 0.0


@dataclass
class SimConfig:
    name: str = "workload"
    seed: int = 0
    sockets: int = 1
    cores_per_socket: int = 2
    smt_factor: int = 1
    duration_ns: int = 1_000_000_000
    calibration_ns: int = 60_000_000_000
    sample_period_ns: int = 10_000_000
    quantum_ns: tuple[int, int] = (1_000_000, 4_000_000)
    ref_hz: float = 2.1e9
    cpu_watts_per_core: float = 5.0
    dram_joules_per_read: float = 1.5e-8
    idle_watts: dict[str, float] = field(default_factory=lambda: {"package": 20.0, "dram": 2.0})
    noise_rel_std: float = 0.0
    mode: str = "default"
    uncore_joules_per_read: float = 0.0
    dram_joules_per_write: float = 0.0
    smt_sigma: float = 1.15
    gamma_remote: float = 9.67
    threads: list[ThreadSpec] = field(default_factory=list)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> SimConfig:
        if not isinstance(raw, Mapping):
            raise SimConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        extra = set(raw) - known
        if extra:
            raise SimConfigError(f"unknown config field(s): {sorted(extra)}")
        kwargs = dict(raw)
        threads = []
        for t in kwargs.pop("threads", []):
            if not isinstance(t, Mapping):
                raise SimConfigError("each thread spec must be an object")
            extra = set(t) - set(ThreadSpec.__dataclass_fields__)
            if extra:
                raise SimConfigError(f"unknown thread field(s): {sorted(extra)}")
            try:
                threads.append(ThreadSpec(**t))
            except TypeError as exc:
                raise SimConfigError(str(exc)) from None
        if "quantum_ns" in kwargs:
            q = kwargs["quantum_ns"]
            if not isinstance(q, (list, tuple)) or len(q) != 2:
                raise SimConfigError("quantum_ns must be [min, max]")
            kwargs["quantum_ns"] = tuple(q)
        cfg = cls(**kwargs, threads=threads)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str | bytes) -> SimConfig:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SimConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["quantum_ns"] = list(self.quantum_ns)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    def topology(self) -> Topology:
        return build_topology(self.sockets, self.cores_per_socket, self.smt_factor)

    def validate(self) -> None:
        def need(cond: bool, msg: str) -> None:
            if not cond:
                raise SimConfigError(msg)

        def integer(v: Any) -> bool:
            return isinstance(v, int) and not isinstance(v, bool)

        def number(v: Any) -> bool:
            return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)

        need(isinstance(self.name, str), "name must be a string")
        need(integer(self.seed), "seed must be an integer")
        for key in ("sockets", "cores_per_socket", "smt_factor", "duration_ns", "calibration_ns", "sample_period_ns"):
            need(integer(getattr(self, key)) and getattr(self, key) >= 1, f"{key} must be a positive integer")
        qmin, qmax = self.quantum_ns
        need(integer(qmin) and integer(qmax) and 1 <= qmin <= qmax, "quantum_ns must be 1 <= min <= max")
        for key in ("ref_hz", "cpu_watts_per_core", "dram_joules_per_read", "noise_rel_std",
                    "uncore_joules_per_read", "dram_joules_per_write"):
            need(number(getattr(self, key)) and getattr(self, key) >= 0, f"{key} must be non-negative")
        need(self.ref_hz > 0, "ref_hz must be positive")
        need(self.mode in ("default", "adversarial"), f"unknown mode {self.mode!r}")
        need(number(self.smt_sigma) and self.smt_sigma >= 1, "smt_sigma must be >= 1")
        need(number(self.gamma_remote) and self.gamma_remote >= 1, "gamma_remote must be >= 1")
        need(isinstance(self.idle_watts, Mapping), "idle_watts must be an object")
        topo = self.topology()
        for key, w in self.idle_watts.items():
            need(key in ("package", "dram") or key in topo, f"idle_watts key {key!r} names no component")
            need(number(w) and w >= 0, f"idle_watts[{key!r}] must be non-negative")
        need(bool(self.threads), "at least one thread is required")
        seen: set[str] = set()
        for t in self.threads:
            need(isinstance(t.id, str) and t.id not in seen, f"thread id {t.id!r} missing or duplicated")
            seen.add(t.id)
            need(isinstance(t.app, str) and bool(t.app), f"thread {t.id}: app must be a non-empty string")
            need(number(t.dram_read_rate) and t.dram_read_rate >= 0, f"thread {t.id}: dram_read_rate must be >= 0")
            need(number(t.dram_write_rate) and t.dram_write_rate >= 0, f"thread {t.id}: dram_write_rate must be >= 0")
            need(number(t.locality) and 0 <= t.locality <= 1, f"thread {t.id}: locality must be in [0, 1]")
            need(number(t.duty_cycle) and 0 < t.duty_cycle <= 1, f"thread {t.id}: duty_cycle must be in (0, 1]")
            for label, prof, lo, hi in (("cpu_intensity", t.cpu_intensity, 0.0, 1.0), ("frequency", t.frequency, 1e-9, 10.0)):
                try:
                    points = _profile(prof)
                except (TypeError, ValueError) as exc:
                    raise SimConfigError(f"thread {t.id}: bad {label} profile ({exc})") from None
                need(all(lo <= v <= hi for _, v in points), f"thread {t.id}: {label} values must lie in [{lo}, {hi}]")
            if t.affinity is not None:
                need(isinstance(t.affinity, list) and bool(t.affinity), f"thread {t.id}: affinity must be a non-empty list")
                for c in t.affinity:
                    need(c in topo and topo.get(c).kind is EntityKind.LOGICAL_CORE,
                         f"thread {t.id}: affinity names unknown core {c!r}")
        if self.thread_ids_clash_with_apps():
            raise SimConfigError("thread ids and application ids must be distinct")

    def thread_ids_clash_with_apps(self) -> bool:
        return bool({t.id for t in self.threads} & {t.app for t in self.threads})

    def idle_watts_for(self, comp_id: str, kind: EntityKind) -> float:
        if comp_id in self.idle_watts:
            return float(self.idle_watts[comp_id])
        key = "package" if kind is EntityKind.CPU_PACKAGE else "dram"
        return float(self.idle_watts.get(key, 0.0))


def _profile(spec: float | Sequence) -> Profile:
    """Piecewise-constant profile as sorted ``(offset_ns, value)`` starting at 0."""
    if isinstance(spec, bool):
        raise TypeError("booleans are not numbers")
    if isinstance(spec, (int, float)):
        return [(0, float(spec))]
    points = [(int(o), float(v)) for o, v in spec]
    if not points or points[0][0] != 0:
        raise ValueError("profile must start at offset 0")
    if any(b[0] <= a[0] for a, b in zip(points, points[1:])):
        raise ValueError("profile offsets must increase")
    return points


def _value_at(profile: Profile, offset: int) -> float:
    v = profile[0][1]
    for o, x in profile:
        if o > offset:
            break
        v = x
    return v


def _next_change(profile: Profile, offset: int) -> int | None:
    for o, _ in profile:
        if o > offset:
            return o
    return None


@dataclass(frozen=True)
class ScheduledSpan:
    thread_id: str
    core_id: str
    t_in: int
    t_out: int
    ucc: int
    aperf: int
    mperf: int
    dram_reads: Mapping[str, int]
    writes: float


@dataclass
class GroundTruthLedger:
    """True energy per window; the oracle for accuracy evaluation."""

    workload: str
    seed: int
    mode: str
    applications: dict[str, list[str]]
    components: dict[str, dict[str, Any]]
    windows: list[dict[str, Any]]
    schedule: list[tuple[str, str, int, int]] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": LEDGER_FORMAT,
            "workload": self.workload,
            "seed": self.seed,
            "mode": self.mode,
            "applications": self.applications,
            "components": self.components,
            "windows": self.windows,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str | bytes) -> GroundTruthLedger:
        raw = json.loads(text)
        if raw.get("format") != LEDGER_FORMAT:
            raise ValueError(f"not a ledger (format {raw.get('format')!r})")
        return cls(raw["workload"], raw["seed"], raw["mode"], raw["applications"], raw["components"], raw["windows"])

    def thread_of_app(self) -> dict[str, str]:
        return {t: app for app, threads in self.applications.items() for t in threads}

    def thread_active(self) -> dict[tuple[str, str], float]:
        """Run-total true active joules per (thread, component)."""
        parts: dict[tuple[str, str], list[float]] = defaultdict(list)
        for w in self.windows:
            for tid, comps in w["threads"].items():
                for cid, j in comps.items():
                    parts[(tid, cid)].append(j)
        return {k: math.fsum(v) for k, v in sorted(parts.items())}

    def application_active(self) -> dict[tuple[str, str], float]:
        owner = self.thread_of_app()
        parts: dict[tuple[str, str], list[float]] = defaultdict(list)
        for (tid, cid), j in self.thread_active().items():
            parts[(owner[tid], cid)].append(j)
        return {k: math.fsum(v) for k, v in sorted(parts.items())}


def _match_dedicated(threads: Sequence[ThreadSpec], cores: Sequence[str]) -> dict[str, str]:
    """Assign every always-running thread its own core, or fail."""
    owner: dict[str, str] = {}

    def allowed(t: ThreadSpec) -> list[str]:
        return list(t.affinity) if t.affinity is not None else list(cores)

    def augment(t: ThreadSpec, seen: set[str]) -> bool:
        for c in allowed(t):
            if c in seen:
                continue
            seen.add(c)
            if c not in owner or augment(by_id[owner[c]], seen):
                owner[c] = t.id
                return True
        return False

    by_id = {t.id: t for t in threads}
    for t in threads:
        if not augment(t, set()):
            raise SimConfigError(
                f"oversubscribed: always-running thread {t.id} cannot get a logical core of its own"
            )
    return {tid: c for c, tid in owner.items()}


class _Sim:
    def __init__(self, cfg: SimConfig):
        cfg.validate()
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.topo = cfg.topology()
        self.t0 = cfg.calibration_ns
        self.t_end = cfg.calibration_ns + cfg.duration_ns
        self.core_ids = [c.id for c in sorted(self.topo.cores, key=lambda c: int(c.id[3:]))]
        self.intensity = {t.id: _profile(t.cpu_intensity) for t in cfg.threads}
        self.freq = {t.id: _profile(t.frequency) for t in cfg.threads}

    def _quantum_end(self, tid: str, t: int) -> int:
        qmin, qmax = self.cfg.quantum_ns
        end = min(t + self.rng.randint(qmin, qmax), self.t_end)
        for prof in (self.intensity[tid], self.freq[tid]):
            nxt = _next_change(prof, t - self.t0)
            if nxt is not None:
                end = min(end, self.t0 + nxt)
        return end

    def schedule(self) -> list[tuple[str, str, int, int]]:
        cfg = self.cfg
        dedicated = [t for t in cfg.threads if t.duty_cycle >= 1.0]
        pinned = _match_dedicated(dedicated, self.core_ids)
        spans: list[tuple[str, str, int, int]] = []
        for t in dedicated:
            now = self.t0
            while now < self.t_end:
                end = self._quantum_end(t.id, now)
                spans.append((t.id, pinned[t.id], now, end))
                now = end

        shared = [t for t in cfg.threads if t.duty_cycle < 1.0]
        taken = set(pinned.values())
        free = [c for c in self.core_ids if c not in taken]
        for t in shared:
            allowed = t.affinity if t.affinity is not None else free
            if not any(c in free for c in allowed):
                raise SimConfigError(f"oversubscribed: thread {t.id} has no core left to run on")
        allowed_on = {
            c: [t for t in shared if c in (t.affinity if t.affinity is not None else free)] for c in free
        }
        ready = {t.id: self.t0 + int(self.rng.random() * (1 - t.duty_cycle) * cfg.quantum_ns[1]) for t in shared}
        busy_until = {t.id: self.t0 for t in shared}
        heap = [(self.t0, i, c) for i, c in enumerate(free)]
        heapq.heapify(heap)
        while heap:
            now, i, core = heapq.heappop(heap)
            if now >= self.t_end:
                continue
            candidates = allowed_on[core]
            eligible = [t for t in candidates if ready[t.id] <= now and busy_until[t.id] <= now]
            if eligible:
                t = eligible[self.rng.randrange(len(eligible))]
                end = self._quantum_end(t.id, now)
                spans.append((t.id, core, now, end))
                busy_until[t.id] = end
                sleep = (end - now) * (1 - t.duty_cycle) / t.duty_cycle
                ready[t.id] = end + int(sleep * self.rng.uniform(0.5, 1.5))
                heapq.heappush(heap, (end, i, core))
            elif candidates:
                wake = min(max(ready[t.id], busy_until[t.id]) for t in candidates)
                heapq.heappush(heap, (wake, i, core))
        spans.sort(key=lambda s: (s[2], s[1]))
        return spans

    def counters(self, spans: Iterable[tuple[str, str, int, int]]) -> list[ScheduledSpan]:
        cfg = self.cfg
        specs = {t.id: t for t in cfg.threads}
        out = []
        for tid, core, a, b in spans:
            spec = specs[tid]
            dur = b - a
            u = _value_at(self.intensity[tid], a - self.t0)
            r = _value_at(self.freq[tid], a - self.t0)
            mperf = round(dur * cfg.ref_hz / NS_PER_S)
            aperf = round(mperf * r)
            ucc = round(mperf * r * u)
            socket = self.topo.get(core).socket_index
            total_reads = round(spec.dram_read_rate * dur / NS_PER_S)
            reads: dict[str, int] = {}
            if cfg.sockets == 1:
                local, remote = total_reads, 0
            else:
                local = round(total_reads * spec.locality)
                remote = total_reads - local
            if local:
                reads[self.topo.dram_for_socket(socket).id] = local
            if remote:
                reads[self.topo.dram_for_socket((socket + 1) % cfg.sockets).id] = remote
            writes = spec.dram_write_rate * dur / NS_PER_S
            out.append(ScheduledSpan(tid, core, a, b, ucc, aperf, mperf, dict(sorted(reads.items())), writes))
        return out

    def smt_segments(self, spans: Sequence[ScheduledSpan]) -> list[tuple[ScheduledSpan, int, int, bool]]:
        """Cut every span where the number of busy hardware threads on its physical core changes."""
        groups: dict[tuple[str, int], list[ScheduledSpan]] = defaultdict(list)
        for s in spans:
            core = self.topo.get(s.core_id)
            groups[(core.parent_id, core.physical_core_index)].append(s)
        segments = []
        for members in groups.values():
            events = sorted({s.t_in for s in members} | {s.t_out for s in members})
            members.sort(key=lambda s: s.t_in)
            running: list[ScheduledSpan] = []
            j = 0
            for a, b in zip(events, events[1:]):
                running = [s for s in running if s.t_out > a]
                while j < len(members) and members[j].t_in <= a:
                    if members[j].t_out > a:
                        running.append(members[j])
                    j += 1
                co = len(running) >= 2
                for s in running:
                    segments.append((s, a, b, co))
        return segments

    def run(self) -> tuple[bytes, GroundTruthLedger]:
        cfg = self.cfg
        plan = self.schedule()
        spans = self.counters(plan)
        period = cfg.sample_period_ns
        edges = list(range(self.t0, self.t_end, period)) + [self.t_end]
        n_win = len(edges) - 1
        k_cpu = cfg.cpu_watts_per_core / cfg.ref_hz

        # active[w][cid][tid] -> list of joule pieces
        active: list[dict[str, dict[str, list[float]]]] = [defaultdict(lambda: defaultdict(list)) for _ in range(n_win)]

        def charge(cid: str, tid: str, joules_per_ns: float, a: int, b: int) -> None:
            if joules_per_ns == 0:
                return
            w = (a - self.t0) // period
            while a < b:
                stop = min(b, edges[w + 1])
                active[w][cid][tid].append(joules_per_ns * (stop - a))
                a = stop
                w += 1

        for s, a, b, co in self.smt_segments(spans):
            dur = s.t_out - s.t_in
            core = self.topo.get(s.core_id)
            sigma = cfg.smt_sigma if co else 1.0
            ratio = s.aperf / s.mperf if s.mperf else 1.0
            charge(core.parent_id, s.thread_id, k_cpu * s.ucc * ratio * sigma / dur, a, b)
        for s in spans:
            dur = s.t_out - s.t_in
            socket = self.topo.get(s.core_id).socket_index
            for node, n in s.dram_reads.items():
                local = self.topo.get(node).socket_index == socket
                gamma = 1.0 if local else cfg.gamma_remote
                charge(node, s.thread_id, cfg.dram_joules_per_read * n * gamma / dur, s.t_in, s.t_out)
            if cfg.mode == "adversarial":
                reads = sum(s.dram_reads.values())
                pkg = self.topo.get(s.core_id).parent_id
                charge(pkg, s.thread_id, cfg.uncore_joules_per_read * reads / dur, s.t_in, s.t_out)
                node = self.topo.dram_for_socket(socket).id
                charge(node, s.thread_id, cfg.dram_joules_per_write * s.writes / dur, s.t_in, s.t_out)

        components = [c for c in self.topo.components()]
        idle_w = {c.id: cfg.idle_watts_for(c.id, c.kind) for c in components}
        records = self._header_records()
        cumulative = {c.id: 0.0 for c in components}
        # calibration: idle only, noise drawn once per sample period
        cal_periods = -(-cfg.calibration_ns // period)
        for c in components:
            true_j = idle_w[c.id] * cfg.calibration_ns / NS_PER_S
            noise = math.fsum(
                self._noise(idle_w[c.id] * min(period, cfg.calibration_ns - k * period) / NS_PER_S)
                for k in range(cal_periods)
            )
            start = cumulative[c.id]
            cumulative[c.id] = start + max(0.0, true_j + noise)
            records.append(
                TraceRecord(
                    RecordType.IDLE_CALIBRATION,
                    {
                        "component_id": c.id,
                        "t_start": 0,
                        "t_stop": self.t0,
                        "energy_start_j": start,
                        "energy_stop_j": cumulative[c.id],
                    },
                )
            )

        windows = []
        timed: list[tuple[int, int, str, TraceRecord]] = []
        for w in range(n_win):
            a, b = edges[w], edges[w + 1]
            entry: dict[str, Any] = {"t_start": a, "t_stop": b, "components": {}, "threads": {}}
            for c in components:
                per_thread = {tid: math.fsum(v) for tid, v in sorted(active[w][c.id].items())}
                act = math.fsum(per_thread.values())
                idle = idle_w[c.id] * (b - a) / NS_PER_S
                noise = self._noise(idle + act)
                emitted = max(0.0, idle + act + noise)
                before = cumulative[c.id]
                cumulative[c.id] = before + emitted
                entry["components"][c.id] = {
                    "active_j": act,
                    "idle_j": idle,
                    "noise_j": emitted - (idle + act),
                    "sensor_j": cumulative[c.id] - before,
                }
                for tid, j in per_thread.items():
                    entry["threads"].setdefault(tid, {})[c.id] = j
                timed.append(
                    (b, 0, c.id, TraceRecord(RecordType.ENERGY_SAMPLE, {"component_id": c.id, "t": b, "energy_j": cumulative[c.id]}))
                )
            entry["threads"] = dict(sorted(entry["threads"].items()))
            windows.append(entry)

        for s in spans:
            timed.append(
                (
                    s.t_in,
                    1,
                    s.core_id,
                    TraceRecord(
                        RecordType.SCHED_INTERVAL,
                        {
                            "thread_id": s.thread_id,
                            "core_id": s.core_id,
                            "t_in": s.t_in,
                            "t_out": s.t_out,
                            "ucc": s.ucc,
                            "aperf": s.aperf,
                            "mperf": s.mperf,
                            "dram_reads": dict(s.dram_reads),
                        },
                    ),
                )
            )
        timed.sort(key=lambda x: (x[0], x[1], x[2]))
        records.extend(r for *_, r in timed)

        apps: dict[str, list[str]] = {}
        for t in cfg.threads:
            apps.setdefault(t.app, []).append(t.id)
        ledger = GroundTruthLedger(
            workload=cfg.name,
            seed=cfg.seed,
            mode=cfg.mode,
            applications=apps,
            components={
                c.id: {"kind": c.kind.value, "socket": c.socket_index, "idle_w": idle_w[c.id]} for c in components
            },
            windows=windows,
            schedule=[(s.thread_id, s.core_id, s.t_in, s.t_out) for s in spans],
        )
        return dump_records(records), ledger

    def _noise(self, joules: float) -> float:
        if self.cfg.noise_rel_std == 0:
            return 0.0
        return joules * self.rng.gauss(0.0, self.cfg.noise_rel_std)

    def _header_records(self) -> list[TraceRecord]:
        records = [TraceRecord(RecordType.TOPOLOGY, self.topo.to_dict())]
        seen: list[str] = []
        for t in self.cfg.threads:
            if t.app not in seen:
                seen.append(t.app)
        for app in seen:
            records.append(
                TraceRecord(RecordType.APP_REGISTRY, {"id": app, "kind": "Application", "parent_id": None, "name": app})
            )
        for t in self.cfg.threads:
            records.append(
                TraceRecord(RecordType.APP_REGISTRY, {"id": t.id, "kind": "Thread", "parent_id": t.app, "name": t.id})
            )
        return records


def simulate(config: SimConfig) -> tuple[bytes, GroundTruthLedger]:
    """Generate a trace and its ground-truth ledger. Deterministic for a fixed seed."""
    return _Sim(config).run()


def mape(
    attributed: Mapping[Any, float],
    truth: Mapping[Any, float],
    excluded: list | None = None,
) -> float:
    """Mean absolute percentage error over keys whose truth is non-zero.

    Keys with zero truth are skipped and appended to ``excluded``. Returns NaN
    when no key is usable.
    """
    if set(attributed) != set(truth):
        missing = sorted(map(str, set(truth) ^ set(attributed)))
        raise KeyMismatchError(f"key sets differ: {missing[:5]}")
    errors = []
    for key in sorted(truth, key=str):
        t = truth[key]
        if t == 0:
            if excluded is not None:
                excluded.append(key)
            continue
        errors.append(abs(attributed[key] - t) / abs(t) * 100.0)
    if not errors:
        return math.nan
    return math.fsum(errors) / len(errors)


def archetype(kind: str, seed: int = 0, noise: float = 0.0, **overrides: Any) -> SimConfig:
    """Two-socket SMT machine running a CPU-heavy, DRAM-heavy or combined workload."""
    cpu_app = [
        ThreadSpec(f"cpu.t{i}", "cpu_stress", cpu_intensity=0.95, frequency=[[0, 1.3], [400_000_000, 1.0]],
                   dram_read_rate=4e6, locality=0.9, duty_cycle=0.9 if i % 2 else 1.0)
        for i in range(8)
    ]
    mem_app = [
        ThreadSpec(f"mem.t{i}", "mem_stress", cpu_intensity=[[0, 0.35], [300_000_000, 0.5]], frequency=0.9,
                   dram_read_rate=1.2e8, locality=0.7, duty_cycle=0.8, dram_write_rate=4e7)
        for i in range(8)
    ]
    threads = {"cpu": cpu_app, "memory": mem_app, "combined": cpu_app[:4] + mem_app[:4]}[kind]
    base = dict(
        name=kind,
        seed=seed,
        sockets=2,
        cores_per_socket=4,
        smt_factor=2,
        duration_ns=1_000_000_000,
        noise_rel_std=noise,
        threads=threads,
        uncore_joules_per_read=4e-9,
        dram_joules_per_write=1.5e-8,
    )
    base.update(overrides)
    cfg = SimConfig(**base)
    cfg.validate()
    return cfg
