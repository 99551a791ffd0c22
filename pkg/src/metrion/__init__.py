"""Attribute CPU package and DRAM energy to threads and applications."""

from __future__ import annotations

from .attribution import AttributionReport, ModelParams, attribute_window, compute_window
from .ingestion import parse_trace, read_trace
from .intervals import build_intervals, split_smt, tile_windows
from .model import AppRegistry, Measurement, Topology, build_topology
from .pipeline import run
from .simulator import SimConfig, simulate
from .store import MeasurementStore

__version__ = "0.1.0"

__all__ = [
    "AppRegistry",
    "AttributionReport",
    "Measurement",
    "MeasurementStore",
    "ModelParams",
    "SimConfig",
    "Topology",
    "attribute_window",
    "build_intervals",
    "build_topology",
    "compute_window",
    "parse_trace",
    "read_trace",
    "run",
    "simulate",
    "split_smt",
    "tile_windows",
]
