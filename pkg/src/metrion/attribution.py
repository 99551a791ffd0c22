"""Energy attribution: work functions, active/idle distribution and roll-up.

Per component and window, active energy is split by each sub-interval's share
of the component's total work; CPU idle energy by share of time spent on the
package; DRAM idle energy equally among the threads that read from the node.
All sums go through ``math.fsum`` so results do not depend on input order.
"""

from __future__ import annotations

import logging
import math
from bisect import bisect_left
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

from .errors import (
    CounterRegressionError,
    DegenerateCounterError,
    EntityKindError,
    MissingSampleError,
    OrphanThreadError,
    UnknownComponentError,
)
from .intervals import ExecutionInterval, SubInterval
from .model import AppRegistry, EntityKind, PhysicalEntity, Topology

log = logging.getLogger(__name__)

# residual energy below this is rounding noise, not untracked activity
RESIDUAL_EPS_J = 1e-9
NS_PER_S = 1_000_000_000


@dataclass(frozen=True)
class ModelParams:
    smt_sigma: float = 1.15
    gamma_remote: float = 9.67
    gamma_local: float = 1.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.smt_sigma) or self.smt_sigma < 1:
            raise ValueError(f"smt_sigma must be >= 1, got {self.smt_sigma}")
        if self.gamma_local != 1.0:
            raise ValueError("gamma_local is fixed at 1.0")
        if not math.isfinite(self.gamma_remote) or self.gamma_remote < self.gamma_local:
            raise ValueError(f"gamma_remote must be >= {self.gamma_local}, got {self.gamma_remote}")


class ComponentEnergy(NamedTuple):
    total_j: float
    idle_j: float
    active_j: float


class EnergyShare(NamedTuple):
    active_j: float
    idle_j: float

    @property
    def total_j(self) -> float:
        return self.active_j + self.idle_j


@dataclass(frozen=True)
class Window:
    t_start: int
    t_stop: int
    component_energy: Mapping[str, ComponentEnergy]

    def __post_init__(self) -> None:
        if self.t_start >= self.t_stop:
            raise ValueError(f"empty window [{self.t_start}, {self.t_stop})")

    @property
    def duration_s(self) -> float:
        return (self.t_stop - self.t_start) / NS_PER_S


@dataclass
class Diagnostics:
    """Non-fatal findings collected while attributing one window."""

    clamps: dict[str, float] = field(default_factory=dict)
    unattributed_active: dict[str, float] = field(default_factory=dict)
    unattributed_idle: dict[str, float] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return bool(self.clamps or self.unattributed_active or self.unattributed_idle)


@dataclass(frozen=True)
class AttributionReport:
    window: Window
    per_thread: Mapping[str, Mapping[str, EnergyShare]]
    per_application: Mapping[str, Mapping[str, EnergyShare]]
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def application_total(self, app_id: str) -> float:
        """Active plus idle energy of an application summed over components."""
        shares = self.per_application.get(app_id, {})
        return math.fsum(x for s in shares.values() for x in s)


def frequency_ratio(aperf: int, mperf: int) -> float:
    if mperf == 0:
        if aperf > 0:
            raise DegenerateCounterError(f"APERF delta {aperf} with zero MPERF delta")
        # core halted throughout: UCC is zero too, so the ratio does not matter
        return 1.0
    return aperf / mperf


def cpu_work(sub: SubInterval, package: PhysicalEntity, topology: Topology, params: ModelParams) -> float:
    """UCC delta scaled by frequency ratio, SMT factor and package location."""
    if package.kind is not EntityKind.CPU_PACKAGE:
        raise EntityKindError(f"{package.id} is a {package.kind.value}, not a CpuPackage")
    location = 1 if topology.get(sub.core_id).parent_id == package.id else 0
    if not location:
        return 0.0
    sigma = params.smt_sigma if sub.smt_active else 1.0
    # the ratio is an average over the whole execution interval; prorated
    # per-piece counters would only add rounding noise to it
    ratio = frequency_ratio(sub.parent.aperf_delta, sub.parent.mperf_delta)
    return sub.ucc_delta * ratio * sigma * location


def dram_work(
    interval: SubInterval | ExecutionInterval,
    dram: PhysicalEntity,
    topology: Topology,
    params: ModelParams,
) -> float:
    """DRAM reads served by ``dram``, weighted by NUMA locality."""
    if dram.kind is not EntityKind.DRAM_NODE:
        raise EntityKindError(f"{dram.id} is a {dram.kind.value}, not a DramNode")
    for node in interval.dram_reads:
        if node not in topology or topology.get(node).kind is not EntityKind.DRAM_NODE:
            raise UnknownComponentError(f"DRAM reads recorded against unknown node {node!r}")
    reads = interval.dram_reads.get(dram.id, 0)
    if not reads:
        return 0.0
    local = topology.get(interval.core_id).socket_index == dram.socket_index
    return reads * (params.gamma_local if local else params.gamma_remote)


def _component_work(
    sub: SubInterval, comp: PhysicalEntity, topology: Topology, params: ModelParams
) -> float:
    if comp.kind is EntityKind.CPU_PACKAGE:
        return cpu_work(sub, comp, topology, params)
    if comp.kind is EntityKind.DRAM_NODE:
        return dram_work(sub, comp, topology, params)
    raise EntityKindError(f"{comp.id} ({comp.kind.value}) is not an energy-sensed component")


def _check_inside(subs: Sequence[SubInterval], window: Window) -> None:
    for s in subs:
        if s.t_start < window.t_start or s.t_stop > window.t_stop:
            raise ValueError(
                f"sub-interval [{s.t_start},{s.t_stop}) of {s.thread_id} lies outside "
                f"window [{window.t_start},{window.t_stop})"
            )


def attribute_active(
    subs: Iterable[SubInterval],
    window: Window,
    topology: Topology,
    params: ModelParams,
    diagnostics: Diagnostics | None = None,
) -> dict[tuple[str, str], float]:
    """Active joules per (thread, component).

    Components on which no work was recorded attribute nothing; their active
    energy is reported in ``diagnostics.unattributed_active``.
    """
    subs = list(subs)
    _check_inside(subs, window)
    out: dict[tuple[str, str], float] = {}
    for cid, energy in window.component_energy.items():
        comp = topology.get(cid)
        work = [(s, _component_work(s, comp, topology, params)) for s in subs]
        work = [(s, w) for s, w in work if w > 0]
        total = math.fsum(w for _, w in work)
        if total == 0:
            if energy.active_j > RESIDUAL_EPS_J:
                log.warning("%.6g J active energy on %s has no recorded work", energy.active_j, cid)
                if diagnostics is not None:
                    diagnostics.unattributed_active[cid] = energy.active_j
            continue
        parts: dict[str, list[float]] = defaultdict(list)
        for s, w in work:
            parts[s.thread_id].append(w / total * energy.active_j)
        for tid, values in parts.items():
            out[(tid, cid)] = math.fsum(values)
    return out


def attribute_idle(
    subs: Iterable[SubInterval],
    window: Window,
    topology: Topology,
    diagnostics: Diagnostics | None = None,
) -> dict[tuple[str, str], float]:
    """Idle joules per (thread, component)."""
    subs = list(subs)
    _check_inside(subs, window)
    out: dict[tuple[str, str], float] = {}
    for cid, energy in window.component_energy.items():
        comp = topology.get(cid)
        if comp.kind is EntityKind.CPU_PACKAGE:
            # Σ δ·L over the package, in exact integer nanoseconds
            timed = [
                (s, s.duration)
                for s in subs
                if topology.get(s.core_id).parent_id == cid
            ]
            total = sum(d for _, d in timed)
            if total == 0:
                _idle_residual(cid, energy, diagnostics)
                continue
            parts: dict[str, list[float]] = defaultdict(list)
            for s, d in timed:
                parts[s.thread_id].append(d / total * energy.idle_j)
            for tid, values in parts.items():
                out[(tid, cid)] = math.fsum(values)
        elif comp.kind is EntityKind.DRAM_NODE:
            active = sorted({s.thread_id for s in subs if s.dram_reads.get(cid, 0) > 0})
            if not active:
                _idle_residual(cid, energy, diagnostics)
                continue
            n = len(active)
            for tid in active:
                out[(tid, cid)] = energy.idle_j / n
        else:
            raise EntityKindError(f"{cid} ({comp.kind.value}) is not an energy-sensed component")
    return out


def _idle_residual(cid: str, energy: ComponentEnergy, diagnostics: Diagnostics | None) -> None:
    if energy.idle_j > RESIDUAL_EPS_J and diagnostics is not None:
        diagnostics.unattributed_idle[cid] = energy.idle_j


def aggregate(
    active: Mapping[tuple[str, str], float],
    idle: Mapping[tuple[str, str], float],
    registry: AppRegistry,
    window: Window,
    diagnostics: Diagnostics | None = None,
) -> AttributionReport:
    """Roll per-thread entries up to applications."""
    per_thread: dict[str, dict[str, EnergyShare]] = {}
    for tid, cid in sorted(set(active) | set(idle)):
        per_thread.setdefault(tid, {})[cid] = EnergyShare(
            active.get((tid, cid), 0.0), idle.get((tid, cid), 0.0)
        )

    grouped: dict[str, dict[str, list[EnergyShare]]] = {}
    for tid, comps in per_thread.items():
        app = registry.application_of(tid)
        if app is None:
            raise OrphanThreadError(f"thread {tid!r} has no parent application")
        for cid, share in comps.items():
            grouped.setdefault(app, {}).setdefault(cid, []).append(share)
    per_app = {
        app: {
            cid: EnergyShare(math.fsum(s.active_j for s in shares), math.fsum(s.idle_j for s in shares))
            for cid, shares in sorted(comps.items())
        }
        for app, comps in sorted(grouped.items())
    }
    return AttributionReport(window, per_thread, per_app, diagnostics or Diagnostics())


def check_monotone(samples: Sequence[tuple[int, float]], component: str = "") -> None:
    for (t0, v0), (t1, v1) in zip(samples, samples[1:]):
        if t1 < t0:
            raise CounterRegressionError(f"{component}: samples out of time order at t={t1}")
        if v1 < v0:
            raise CounterRegressionError(
                f"{component}: cumulative energy went from {v0} J at t={t0} to {v1} J at t={t1}"
            )


def reading_at(samples: Sequence[tuple[int, float]], t: int, component: str = "") -> float:
    """Cumulative reading at ``t``, interpolated linearly between bracketing samples."""
    i = bisect_left(samples, t, key=lambda s: s[0])
    if i < len(samples) and samples[i][0] == t:
        return samples[i][1]
    if i == 0 or i == len(samples):
        raise MissingSampleError(f"{component}: no energy samples bracket t={t}")
    (t0, v0), (t1, v1) = samples[i - 1], samples[i]
    return v0 + (v1 - v0) * ((t - t0) / (t1 - t0))


def compute_window(
    total_readings: Mapping[str, Sequence[tuple[int, float]]],
    idle_power: Mapping[str, float],
    t_start: int,
    t_stop: int,
    diagnostics: Diagnostics | None = None,
) -> Window:
    """Total, idle and active energy per component over ``[t_start, t_stop)``.

    ``total_readings`` holds cumulative ``(t_ns, joules)`` samples per
    component, sorted by time.
    """
    if t_start >= t_stop:
        raise ValueError(f"empty window [{t_start}, {t_stop})")
    energy: dict[str, ComponentEnergy] = {}
    for cid, samples in total_readings.items():
        check_monotone(samples, cid)
        if cid not in idle_power:
            raise MissingSampleError(f"{cid}: no idle power calibration")
        total = reading_at(samples, t_stop, cid) - reading_at(samples, t_start, cid)
        idle = idle_power[cid] * ((t_stop - t_start) / NS_PER_S)
        raw = total - idle
        if raw <= 0 and idle > 0:
            # idle calibration meets or exceeds the measured total
            if diagnostics is not None:
                diagnostics.clamps[cid] = raw
        energy[cid] = ComponentEnergy(total, idle, max(0.0, raw))
    return Window(t_start, t_stop, energy)


def attribute_window(
    subs: Sequence[SubInterval],
    window: Window,
    topology: Topology,
    registry: AppRegistry,
    params: ModelParams,
    diagnostics: Diagnostics | None = None,
) -> AttributionReport:
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    active = attribute_active(subs, window, topology, params, diagnostics)
    idle = attribute_idle(subs, window, topology, diagnostics)
    return aggregate(active, idle, registry, window, diagnostics)


def conservation_errors(report: AttributionReport, rel_tol: float = 1e-9) -> list[str]:
    """Components whose attributed energy does not add back up to the window's."""
    problems: list[str] = []
    diag = report.diagnostics
    for cid, energy in report.window.component_energy.items():
        shares = [c[cid] for c in report.per_thread.values() if cid in c]
        for label, expected, got, residual in (
            ("active", energy.active_j, [s.active_j for s in shares], diag.unattributed_active),
            ("idle", energy.idle_j, [s.idle_j for s in shares], diag.unattributed_idle),
        ):
            attributed = math.fsum(got)
            if cid in residual:
                if attributed != 0.0:
                    problems.append(f"{cid} {label}: residual reported but {attributed} J attributed")
                continue
            if not got:
                if expected > RESIDUAL_EPS_J:
                    problems.append(f"{cid} {label}: {expected} J neither attributed nor reported")
                continue
            if not math.isclose(attributed, expected, rel_tol=rel_tol, abs_tol=RESIDUAL_EPS_J):
                problems.append(f"{cid} {label}: attributed {attributed} J != window {expected} J")
    return problems
