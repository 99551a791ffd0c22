"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class MetrionError(Exception):
    """Base class for all errors raised by this package."""


class UnknownEntityError(MetrionError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class EntityKindError(MetrionError, ValueError):
    pass


class TopologyError(MetrionError, ValueError):
    pass


class IntervalConflictError(MetrionError, ValueError):
    """Two execution intervals claim the same logical core at the same time."""

    def __init__(self, first, second):
        self.first = first
        self.second = second
        super().__init__(
            f"intervals overlap on core {first.core_id}: "
            f"{first.thread_id}@[{first.t_in},{first.t_out}) and "
            f"{second.thread_id}@[{second.t_in},{second.t_out})"
        )


class OrphanMeasurementError(MetrionError, ValueError):
    pass


class DuplicateMeasurementError(MetrionError, ValueError):
    pass


class DegenerateCounterError(MetrionError, ValueError):
    pass


class UnknownComponentError(MetrionError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class OrphanThreadError(MetrionError, ValueError):
    pass


class CounterRegressionError(MetrionError, ValueError):
    pass


class MissingSampleError(MetrionError, ValueError):
    pass


class TraceParseError(MetrionError, ValueError):
    """Malformed line in a trace file."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class TraceSemanticError(TraceParseError):
    """Well-formed record that violates a data-model invariant."""


class TraceVersionError(TraceParseError):
    """Record type this reader does not know about."""


class StorageError(MetrionError, OSError):
    pass


class InvalidMeasurementError(MetrionError, ValueError):
    def __init__(self, index: int, message: str):
        self.index = index
        super().__init__(f"measurement #{index}: {message}")


class SimConfigError(MetrionError, ValueError):
    pass


class KeyMismatchError(MetrionError, ValueError):
    pass


class ConservationError(MetrionError, AssertionError):
    pass
