"""``metrion`` command line: simulate, ingest, attribute, report, evaluate.

Exit codes: 0 on success, 2 for bad input, 3 when attributed energy fails
to add back up to the measured window energy.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import statistics
import sys
import tempfile
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .attribution import ModelParams
from .errors import ConservationError, KeyMismatchError, MetrionError
from .ingestion import ParsedTrace, read_trace
from .model import AppRegistry, Topology
from .pipeline import DEFAULT_WINDOW_NS, dump_report, report_application_active, report_dict, run
from .simulator import GroundTruthLedger, SimConfig, mape, simulate
from .store import MeasurementStore

log = logging.getLogger("metrion")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONSERVATION = 3


class InputError(Exception):
    pass


def _write_atomic(files: dict[Path, bytes]) -> None:
    """Write all files or none of them."""
    staged: list[tuple[str, Path]] = []
    try:
        for path, data in files.items():
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            staged.append((tmp, path))
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
        for tmp, path in staged:
            os.replace(tmp, path)
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        _write_atomic({path: text.encode("utf-8")})


def _load_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"{args.config}: {exc}") from None
    cfg = SimConfig.from_json(text)
    if args.seed is not None:
        cfg.seed = args.seed
    trace, ledger = simulate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / f"{cfg.name}.trace.jsonl"
    ledger_path = out / f"{cfg.name}.ledger.json"
    _write_atomic({trace_path: trace, ledger_path: ledger.to_json().encode("utf-8")})
    print(trace_path)
    print(ledger_path)
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    total = 0
    with MeasurementStore.open(args.store) as store:
        for path in args.trace:
            parsed = read_trace(path)
            topo = parsed.topology.to_dict()
            if store.get_meta("topology") not in (None, topo):
                raise InputError(f"{path}: topology differs from the one already in {args.store}")
            store.set_meta("topology", topo)
            known = AppRegistry.from_list(store.get_meta("registry", []))
            for e in parsed.registry:
                if e.id in known and known.get(e.id) != e:
                    raise InputError(f"{path}: logical entity {e.id!r} conflicts with the stored one")
                if e.id not in known:
                    known.add(e)
            store.set_meta("registry", known.to_list())
            added = store.append(parsed.measurements)
            log.info("%s: %d measurement(s) added", path, added)
            total += added
    print(f"{total} measurement(s) stored in {args.store}")
    return EXIT_OK


def _load_inputs(args: argparse.Namespace) -> tuple[Topology, AppRegistry, list]:
    if bool(args.trace) == bool(args.store):
        raise InputError("give exactly one of --trace or --store")
    if args.trace:
        parsed: ParsedTrace = read_trace(args.trace)
        return parsed.topology, parsed.registry, parsed.measurements
    if not Path(args.store).exists():
        raise InputError(f"{args.store}: no such store")
    with MeasurementStore.open(args.store) as store:
        if store.topology is None:
            raise InputError(f"{args.store}: store has no topology")
        return store.topology, AppRegistry.from_list(store.get_meta("registry", [])), store.all()


def cmd_attribute(args: argparse.Namespace) -> int:
    if args.window_ns <= 0:
        raise InputError("--window-ns must be positive")
    if args.jobs < 1:
        raise InputError("--jobs must be at least 1")
    try:
        params = ModelParams(smt_sigma=args.sigma, gamma_remote=args.gamma_remote)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    topology, registry, measurements = _load_inputs(args)
    result = run(topology, registry, measurements, params, args.window_ns, args.jobs)
    if result.conservation:
        for p in result.conservation[:10]:
            log.error("conservation: %s", p)
        raise ConservationError(f"{len(result.conservation)} conservation failure(s)")
    _emit(dump_report(report_dict(result, args.window_ns, params, raw=args.raw)), args.out)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    report = _load_json(args.report)
    if not isinstance(report, dict) or report.get("format") != "metrion.report/1":
        raise InputError(f"{args.report}: not a report")
    windows = report["windows"]
    lines = [
        f"windows: {len(windows)} x {report['window_ns']} ns"
        + (" (last partial)" if windows and windows[-1]["partial"] else ""),
        f"params: smt_sigma={report['params']['smt_sigma']} gamma_remote={report['params']['gamma_remote']}",
        "",
        f"{'application':<24}{'component':<12}{'active J':>14}",
    ]
    for app, entry in report["totals"]["applications"].items():
        for cid, j in entry["active_j"].items():
            lines.append(f"{app:<24}{cid:<12}{j:>14.6g}")
        lines.append(f"{app:<24}{'total':<12}{entry['total_j']:>14.6g}")
    clamped = sum(bool(w["diagnostics"]["clamped"]) for w in windows)
    residual = sum(
        bool(w["diagnostics"]["unattributed_active_j"] or w["diagnostics"]["unattributed_idle_j"]) for w in windows
    )
    lines += ["", f"windows with clamped active energy: {clamped}", f"windows with unattributed energy: {residual}"]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _workload_errors(report: dict, ledger: GroundTruthLedger) -> dict[str, float]:
    attributed = report_application_active(report)
    truth = ledger.application_active()
    apps = set(ledger.applications)
    comps = set(ledger.components)
    stray = {k for k in attributed if k[0] not in apps or k[1] not in comps}
    if stray:
        raise KeyMismatchError(f"report keys unknown to the ledger: {sorted(stray)[:5]}")
    keys = [(a, c) for a in sorted(apps) for c in sorted(comps)]
    per_comp: dict[str, float] = {}
    for comp in sorted(comps):
        ks = [k for k in keys if k[1] == comp]
        value = mape({k: attributed.get(k, 0.0) for k in ks}, {k: truth.get(k, 0.0) for k in ks})
        if not math.isnan(value):
            per_comp[comp] = value
    full = mape({k: attributed.get(k, 0.0) for k in keys}, {k: truth.get(k, 0.0) for k in keys})
    per_comp["all"] = full
    return per_comp


def cmd_evaluate(args: argparse.Namespace) -> int:
    if len(args.report) != len(args.ledger):
        raise InputError("--report and --ledger must be given the same number of times")
    rows: dict[str, dict[str, float]] = {}
    for rpath, lpath in zip(args.report, args.ledger):
        report = _load_json(rpath)
        try:
            ledger = GroundTruthLedger.from_json(Path(lpath).read_text(encoding="utf-8"))
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"{lpath}: {exc}") from None
        name = ledger.workload
        while name in rows:
            name += "'"
        rows[name] = _workload_errors(report, ledger)
    columns = sorted({c for r in rows.values() for c in r if c != "all"}) + ["all"]
    spread = {}
    for col in columns:
        values = [r[col] for r in rows.values() if col in r and not math.isnan(r[col])]
        if not values:
            continue
        mean = statistics.fmean(values)
        std = statistics.pstdev(values) if len(values) > 1 else 0.0
        spread[col] = {"mean": mean, "std": std, "cv": std / mean if mean else 0.0}
    summary = {"mape_percent": rows, "across_workloads": spread}
    if args.out:
        _emit(json.dumps(summary, indent=1, allow_nan=False) + "\n", args.out)
    width = max(12, *(len(n) + 2 for n in rows))
    lines = ["MAPE %".ljust(width) + "".join(f"{c:>12}" for c in columns)]
    for name, r in rows.items():
        lines.append(name.ljust(width) + "".join(f"{r[c]:>12.4f}" if c in r else f"{'-':>12}" for c in columns))
    for stat in ("mean", "std", "cv"):
        lines.append(
            stat.ljust(width) + "".join(f"{spread[c][stat]:>12.4f}" if c in spread else f"{'-':>12}" for c in columns)
        )
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metrion", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"metrion {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic trace and its ground-truth ledger")
    p.add_argument("--config", required=True, help="SimConfig JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config's seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="load traces into a measurement store")
    p.add_argument("--trace", required=True, action="append", help="trace file (repeatable)")
    p.add_argument("--store", required=True, help="store file (created if missing)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("attribute", help="attribute energy and write a JSON report")
    p.add_argument("--trace", help="trace file")
    p.add_argument("--store", help="measurement store to read instead of a trace")
    p.add_argument("--window-ns", type=int, default=DEFAULT_WINDOW_NS, help="window length (default 100 ms)")
    p.add_argument("--sigma", type=float, default=ModelParams.smt_sigma, help="SMT energy factor")
    p.add_argument("--gamma-remote", type=float, default=ModelParams.gamma_remote, help="remote DRAM read weight")
    p.add_argument("--jobs", type=int, default=1, help="windows attributed in parallel")
    p.add_argument("--raw", action="store_true", help="full float precision instead of 6 significant digits")
    p.add_argument("--out", help="report file (default stdout)")
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("report", help="summarise a report as a table")
    p.add_argument("--report", required=True)
    p.add_argument("--out", help="destination (default stdout)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("evaluate", help="MAPE of reports against ground-truth ledgers")
    p.add_argument("--report", required=True, action="append", help="report file (repeatable, paired with --ledger)")
    p.add_argument("--ledger", required=True, action="append", help="ledger file (repeatable)")
    p.add_argument("--out", help="also write the summary as JSON")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("METRION_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConservationError as exc:
        print(f"metrion: conservation check failed: {exc}", file=sys.stderr)
        return EXIT_CONSERVATION
    except (InputError, MetrionError, ValueError, OSError) as exc:
        print(f"metrion: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
