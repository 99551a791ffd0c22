"""Measurement store with windowed range queries.

Two backends share one in-process index: an in-memory one for tests and a
single-file append log (one JSON line per batch, fsynced) for everything else.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
from abc import ABC, abstractmethod
from bisect import bisect_left
from collections import defaultdict
from typing import Any, Callable, Iterable, Iterator

from .errors import InvalidMeasurementError, StorageError
from .model import METRICS, COUNTER_METRICS, Measurement, Topology, validate_measurement


def _row(m: Measurement) -> list[Any]:
    return [m.physical_entity_id, m.metric_id, m.logical_entity_id, m.t_start, m.t_stop, m.value]


def _sort_key(m: Measurement) -> tuple:
    return (m.t_start, m.t_stop, m.metric_id, m.physical_entity_id, m.logical_entity_id or "", m.value)


def _intersects(m: Measurement, t0: int, t1: int) -> bool:
    if m.t_start == m.t_stop:
        return t0 <= m.t_start < t1
    return m.t_start < t1 and m.t_stop > t0


class StorageBackend(ABC):
    @abstractmethod
    def replay(self) -> Iterator[dict[str, Any]]: ...

    @abstractmethod
    def write(self, entry: dict[str, Any]) -> None: ...

    def close(self) -> None:
        pass


class MemoryBackend(StorageBackend):
    def __init__(self) -> None:
        self.entries: list[dict[str, Any]] = []

    def replay(self) -> Iterator[dict[str, Any]]:
        return iter(self.entries)

    def write(self, entry: dict[str, Any]) -> None:
        self.entries.append(entry)


class AppendLogBackend(StorageBackend):
    def __init__(self, path: str | os.PathLike):
        self.path = os.fspath(path)
        try:
            self._fh = open(self.path, "a+b")
        except OSError as exc:
            raise StorageError(f"cannot open store {self.path}: {exc}") from exc

    def replay(self) -> Iterator[dict[str, Any]]:
        self._fh.seek(0)
        for n, line in enumerate(self._fh, start=1):
            if not line.endswith(b"\n"):
                raise StorageError(f"{self.path}:{n}: truncated entry")
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise StorageError(f"{self.path}:{n}: corrupt entry ({exc.msg})") from None

    def write(self, entry: dict[str, Any]) -> None:
        data = (json.dumps(entry, separators=(",", ":"), ensure_ascii=False) + "\n").encode("utf-8")
        try:
            self._fh.seek(0, os.SEEK_END)
            self._fh.write(data)
            self._fh.flush()
            os.fsync(self._fh.fileno())
        except OSError as exc:
            raise StorageError(f"write to {self.path} failed: {exc}") from exc

    def close(self) -> None:
        self._fh.close()


class _Series:
    """Measurements sharing an index key, kept sorted lazily."""

    __slots__ = ("items", "starts", "max_len", "dirty")

    def __init__(self) -> None:
        self.items: list[Measurement] = []
        self.starts: list[int] = []
        self.max_len = 0
        self.dirty = False

    def add(self, m: Measurement) -> None:
        self.items.append(m)
        self.max_len = max(self.max_len, m.t_stop - m.t_start)
        self.dirty = True

    def window(self, t0: int, t1: int) -> Iterator[Measurement]:
        if self.dirty:
            self.items.sort(key=_sort_key)
            self.starts = [m.t_start for m in self.items]
            self.dirty = False
        lo = bisect_left(self.starts, t0 - self.max_len)
        hi = bisect_left(self.starts, t1)
        for m in self.items[lo:hi]:
            if _intersects(m, t0, t1):
                yield m


class MeasurementStore:
    """Indexed by (metric, physical entity, time) and (logical entity, time)."""

    def __init__(self, backend: StorageBackend | None = None, topology: Topology | None = None):
        self._backend = backend or MemoryBackend()
        self._lock = threading.RLock()
        self._by_metric_entity: dict[tuple[str, str], _Series] = defaultdict(_Series)
        self._by_logical: dict[str, _Series] = defaultdict(_Series)
        self._batches: set[str] = set()
        self._meta: dict[str, Any] = {}
        self._count = 0
        self.topology = topology
        for entry in self._backend.replay():
            if "meta" in entry:
                self._meta[entry["meta"]] = entry["value"]
            else:
                self._batches.add(entry["batch"])
                self._index(Measurement(*row) for row in entry["rows"])
        if self.topology is None and "topology" in self._meta:
            self.topology = Topology.from_dict(self._meta["topology"])

    @classmethod
    def memory(cls, topology: Topology | None = None) -> MeasurementStore:
        return cls(MemoryBackend(), topology)

    @classmethod
    def open(cls, path: str | os.PathLike, topology: Topology | None = None) -> MeasurementStore:
        return cls(AppendLogBackend(path), topology)

    def __enter__(self) -> MeasurementStore:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        self._backend.close()

    def __len__(self) -> int:
        return self._count

    def _index(self, measurements: Iterable[Measurement]) -> None:
        for m in measurements:
            self._by_metric_entity[(m.metric_id, m.physical_entity_id)].add(m)
            if m.logical_entity_id is not None:
                self._by_logical[m.logical_entity_id].add(m)
            self._count += 1

    def _check(self, i: int, m: Measurement) -> None:
        if not isinstance(m, Measurement):
            raise InvalidMeasurementError(i, f"not a Measurement: {m!r}")
        if self.topology is not None:
            problems = validate_measurement(m, self.topology)
        else:
            problems = []
            if m.metric_id not in METRICS:
                problems.append(f"unknown metric {m.metric_id!r}")
            if not (isinstance(m.t_start, int) and isinstance(m.t_stop, int)) or m.t_start > m.t_stop:
                problems.append("bad time span")
            if not isinstance(m.value, (int, float)) or not math.isfinite(m.value) or m.value < 0:
                problems.append("value must be finite and non-negative")
            elif METRICS.get(m.metric_id) and METRICS[m.metric_id].name in COUNTER_METRICS and m.value != int(m.value):
                problems.append("counter values must be integral")
        if problems:
            raise InvalidMeasurementError(i, "; ".join(problems))

    def append(self, measurements: Iterable[Measurement]) -> int:
        """Store a batch; returns how many were added (0 for a repeated identical batch)."""
        batch = list(measurements)
        for i, m in enumerate(batch):
            self._check(i, m)
        rows = [_row(m) for m in batch]
        digest = hashlib.sha256(
            json.dumps(rows, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
        ).hexdigest()
        with self._lock:
            if digest in self._batches:
                return 0
            self._backend.write({"batch": digest, "rows": rows})
            self._batches.add(digest)
            self._index(batch)
        return len(batch)

    def set_meta(self, key: str, value: Any) -> None:
        with self._lock:
            if self._meta.get(key) == value:
                return
            self._backend.write({"meta": key, "value": value})
            self._meta[key] = value
            if key == "topology":
                self.topology = Topology.from_dict(value)

    def get_meta(self, key: str, default: Any = None) -> Any:
        return self._meta.get(key, default)

    def query_window(
        self,
        t_start: int,
        t_stop: int,
        metric: str | None = None,
        physical_entity_id: str | None = None,
        logical_entity_id: str | None = None,
        predicate: Callable[[Measurement], bool] | None = None,
    ) -> list[Measurement]:
        """Measurements intersecting ``[t_start, t_stop)``, sorted by start time."""
        if t_start >= t_stop:
            raise ValueError(f"inverted or empty range [{t_start}, {t_stop})")
        with self._lock:
            if metric is not None and physical_entity_id is not None:
                series = [self._by_metric_entity.get((metric, physical_entity_id))]
            elif logical_entity_id is not None:
                series = [self._by_logical.get(logical_entity_id)]
            else:
                series = [
                    s
                    for (mid, pid), s in self._by_metric_entity.items()
                    if (metric is None or mid == metric)
                    and (physical_entity_id is None or pid == physical_entity_id)
                ]
            found = [
                m
                for s in series
                if s is not None
                for m in s.window(t_start, t_stop)
                if (metric is None or m.metric_id == metric)
                and (physical_entity_id is None or m.physical_entity_id == physical_entity_id)
                and (logical_entity_id is None or m.logical_entity_id == logical_entity_id)
                and (predicate is None or predicate(m))
            ]
        found.sort(key=_sort_key)
        return found

    def all(self) -> list[Measurement]:
        with self._lock:
            found = [m for s in self._by_metric_entity.values() for m in s.items]
        found.sort(key=_sort_key)
        return found

    def span(self) -> tuple[int, int] | None:
        """Earliest start and latest stop over all stored measurements."""
        with self._lock:
            items = [m for s in self._by_metric_entity.values() for m in s.items]
        if not items:
            return None
        return min(m.t_start for m in items), max(m.t_stop for m in items)
