"""Execution intervals and SMT-aware sub-interval splitting.

Intervals are half-open ``[t_in, t_out)`` in integer nanoseconds. Whenever an
interval is cut into pieces its counters are prorated by duration with floor
division, and the remainder goes to the last piece, so every counter is
conserved exactly.
"""

from __future__ import annotations

import logging
from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import (
    DuplicateMeasurementError,
    IntervalConflictError,
    OrphanMeasurementError,
)
from .model import DRAM_COUNTERS, EntityKind, Measurement, MetricName, Topology

log = logging.getLogger(__name__)

_CORE_FIELD = {
    MetricName.UCC_DELTA.value: "ucc_delta",
    MetricName.APERF_DELTA.value: "aperf_delta",
    MetricName.MPERF_DELTA.value: "mperf_delta",
}
_DRAM_METRICS = frozenset(m.value for m in DRAM_COUNTERS)


@dataclass(frozen=True, slots=True)
class ExecutionInterval:
    thread_id: str
    core_id: str
    t_in: int
    t_out: int
    ucc_delta: int = 0
    aperf_delta: int = 0
    mperf_delta: int = 0
    dram_reads: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.t_in >= self.t_out:
            raise ValueError(f"empty execution interval [{self.t_in}, {self.t_out})")

    @property
    def duration(self) -> int:
        return self.t_out - self.t_in


@dataclass(frozen=True, slots=True)
class SubInterval:
    parent: ExecutionInterval
    t_start: int
    t_stop: int
    smt_active: bool
    ucc_delta: int
    aperf_delta: int
    mperf_delta: int
    dram_reads: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.t_start >= self.t_stop:
            raise ValueError(f"empty sub-interval [{self.t_start}, {self.t_stop})")

    @property
    def thread_id(self) -> str:
        return self.parent.thread_id

    @property
    def core_id(self) -> str:
        return self.parent.core_id

    @property
    def duration(self) -> int:
        return self.t_stop - self.t_start


def duration(sub: SubInterval | ExecutionInterval) -> int:
    """Length in nanoseconds."""
    return sub.duration


def prorate(total: int, weights: Sequence[int]) -> list[int]:
    """Split ``total`` proportionally to ``weights``; the last share absorbs the remainder.

    >>> prorate(10, [1, 1, 1])
    [3, 3, 4]
    >>> prorate(7, [5])
    [7]
    """
    whole = sum(weights)
    shares = [total * w // whole for w in weights[:-1]]
    shares.append(total - sum(shares))
    return shares


def _cut(
    parent: ExecutionInterval,
    t_start: int,
    t_stop: int,
    counters: tuple[int, int, int],
    reads: Mapping[str, int],
    points: Sequence[int],
    flags: Sequence[bool],
) -> list[SubInterval]:
    """Cut ``[t_start, t_stop)`` at sorted interior ``points``, prorating counters."""
    edges = [t_start, *points, t_stop]
    spans = [edges[i + 1] - edges[i] for i in range(len(edges) - 1)]
    ucc, aperf, mperf = (prorate(c, spans) for c in counters)
    per_node = {node: prorate(n, spans) for node, n in reads.items()}
    return [
        SubInterval(
            parent,
            edges[i],
            edges[i + 1],
            flags[i],
            ucc[i],
            aperf[i],
            mperf[i],
            {node: shares[i] for node, shares in per_node.items()},
        )
        for i in range(len(spans))
    ]


def build_intervals(measurements: Iterable[Measurement], topology: Topology) -> list[ExecutionInterval]:
    """Assemble one interval per (thread, core, span) from per-thread counter measurements.

    Core counters (UCC/APERF/MPERF on a logical core) define a scheduling span.
    DRAM read counts are matched to the span by (thread, t_start, t_stop),
    which is unambiguous because a thread runs on one core at a time.
    """
    spans: dict[tuple[str, str, int, int], dict[str, int]] = {}
    dram: list[Measurement] = []
    dropped: set[tuple[str, int, int]] = set()
    for m in measurements:
        if m.metric_id in _CORE_FIELD:
            if m.t_start == m.t_stop:
                dropped.add((m.logical_entity_id, m.t_start, m.t_stop))
                continue
            key = (m.logical_entity_id, m.physical_entity_id, m.t_start, m.t_stop)
            counters = spans.setdefault(key, {})
            name = _CORE_FIELD[m.metric_id]
            if name in counters:
                raise DuplicateMeasurementError(f"duplicate {m.metric_id} for {key}")
            counters[name] = int(m.value)
        elif m.metric_id in _DRAM_METRICS:
            dram.append(m)
    if dropped:
        log.warning("dropped %d zero-duration scheduling span(s)", len(dropped))

    by_thread_span: dict[tuple[str, int, int], tuple[str, str, int, int]] = {}
    for key in spans:
        short = (key[0], key[2], key[3])
        if short in by_thread_span:
            a, b = by_thread_span[short], key
            raise IntervalConflictError(_stub(*a), _stub(*b))
        by_thread_span[short] = key

    reads: dict[tuple[str, str, int, int], dict[str, int]] = defaultdict(dict)
    for m in dram:
        short = (m.logical_entity_id, m.t_start, m.t_stop)
        key = by_thread_span.get(short)
        if key is None:
            if short in dropped:
                continue
            raise OrphanMeasurementError(
                f"{m.metric_id} for thread {m.logical_entity_id} over [{m.t_start},{m.t_stop}) "
                "has no matching scheduling span"
            )
        node_reads = reads[key]
        if m.physical_entity_id in node_reads:
            raise DuplicateMeasurementError(f"duplicate DRAM reads on {m.physical_entity_id} for {key}")
        node_reads[m.physical_entity_id] = int(m.value)

    intervals = [
        ExecutionInterval(
            thread_id=key[0],
            core_id=key[1],
            t_in=key[2],
            t_out=key[3],
            ucc_delta=c.get("ucc_delta", 0),
            aperf_delta=c.get("aperf_delta", 0),
            mperf_delta=c.get("mperf_delta", 0),
            dram_reads=dict(sorted(reads.get(key, {}).items())),
        )
        for key, c in spans.items()
    ]
    for iv in intervals:
        if topology.get(iv.core_id).kind is not EntityKind.LOGICAL_CORE:
            raise OrphanMeasurementError(f"core counters recorded on non-core {iv.core_id}")
    intervals.sort(key=lambda iv: (iv.core_id, iv.t_in))
    check_no_overlap(intervals)
    return intervals


def _stub(thread: str, core: str, t_in: int, t_out: int) -> ExecutionInterval:
    return ExecutionInterval(thread, core, t_in, t_out)


def check_no_overlap(intervals: Iterable[ExecutionInterval]) -> None:
    """Raise if two intervals share a core, or one thread is in two places, at once."""
    by_core: dict[str, list[ExecutionInterval]] = defaultdict(list)
    by_thread: dict[str, list[ExecutionInterval]] = defaultdict(list)
    for iv in intervals:
        by_core[iv.core_id].append(iv)
        by_thread[iv.thread_id].append(iv)
    for group in (*by_core.values(), *by_thread.values()):
        group.sort(key=lambda iv: (iv.t_in, iv.t_out))
        for prev, cur in zip(group, group[1:]):
            if cur.t_in < prev.t_out:
                raise IntervalConflictError(prev, cur)


def split_smt(intervals: Iterable[ExecutionInterval], topology: Topology) -> list[SubInterval]:
    """Split every interval wherever the occupancy of one of its SMT siblings changes.

    A piece is ``smt_active`` when at least one sibling logical core runs some
    thread throughout it. Output is ordered by (core_id, t_start, thread_id).
    """
    by_core: dict[str, list[ExecutionInterval]] = defaultdict(list)
    for iv in intervals:
        by_core[iv.core_id].append(iv)
    for group in by_core.values():
        group.sort(key=lambda iv: iv.t_in)
    outs = {core: [iv.t_out for iv in group] for core, group in by_core.items()}

    subs: list[SubInterval] = []
    for core_id, group in by_core.items():
        siblings = [s for s in topology.get(core_id).smt_sibling_ids if s in by_core]
        for iv in group:
            busy = _sibling_busy(iv.t_in, iv.t_out, siblings, by_core, outs)
            points, flags = _split_points(iv.t_in, iv.t_out, busy)
            subs.extend(
                _cut(
                    iv,
                    iv.t_in,
                    iv.t_out,
                    (iv.ucc_delta, iv.aperf_delta, iv.mperf_delta),
                    iv.dram_reads,
                    points,
                    flags,
                )
            )
    subs.sort(key=lambda s: (s.core_id, s.t_start, s.thread_id))
    return subs


def _sibling_busy(
    lo: int,
    hi: int,
    siblings: Sequence[str],
    by_core: Mapping[str, Sequence[ExecutionInterval]],
    outs: Mapping[str, Sequence[int]],
) -> list[tuple[int, int]]:
    """Merged busy spans of ``siblings`` clipped to ``[lo, hi)``."""
    spans: list[tuple[int, int]] = []
    for sib in siblings:
        group = by_core[sib]
        # per-core intervals are sorted and disjoint, so t_out is sorted too
        i = bisect_right(outs[sib], lo)
        while i < len(group) and group[i].t_in < hi:
            a, b = max(group[i].t_in, lo), min(group[i].t_out, hi)
            if a < b:
                spans.append((a, b))
            i += 1
    if not spans:
        return spans
    spans.sort()
    merged = [spans[0]]
    for a, b in spans[1:]:
        if a <= merged[-1][1]:
            if b > merged[-1][1]:
                merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    return merged


def _split_points(lo: int, hi: int, busy: Sequence[tuple[int, int]]) -> tuple[list[int], list[bool]]:
    if not busy:
        return [], [False]
    points: list[int] = []
    flags: list[bool] = []
    cursor = lo
    for a, b in busy:
        if a > cursor:
            flags.append(False)
            points.append(a)
        flags.append(True)
        if b < hi:
            points.append(b)
        cursor = b
    if cursor < hi:
        flags.append(False)
    return points, flags


def tile_windows(subs: Iterable[SubInterval], boundaries: Sequence[int]) -> list[list[SubInterval]]:
    """Distribute sub-intervals over windows ``[boundaries[i], boundaries[i+1])``.

    Sub-intervals straddling a boundary are cut there with the same exact
    proration as SMT splitting; pieces outside every window are discarded.
    """
    if len(boundaries) < 2:
        return []
    first, last = boundaries[0], boundaries[-1]
    windows: list[list[SubInterval]] = [[] for _ in range(len(boundaries) - 1)]
    for sub in subs:
        if sub.t_stop <= first or sub.t_start >= last:
            continue
        lo = bisect_right(boundaries, sub.t_start)
        hi = bisect_right(boundaries, sub.t_stop - 1)
        if lo == hi:
            windows[lo - 1].append(sub)
            continue
        points = list(boundaries[lo:hi])
        pieces = _cut(
            sub.parent,
            sub.t_start,
            sub.t_stop,
            (sub.ucc_delta, sub.aperf_delta, sub.mperf_delta),
            sub.dram_reads,
            points,
            [sub.smt_active] * (len(points) + 1),
        )
        for piece in pieces:
            if piece.t_start < first or piece.t_start >= last:
                continue
            windows[bisect_right(boundaries, piece.t_start) - 1].append(piece)
    return windows
