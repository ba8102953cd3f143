"""Command-line entry point: ``dttest simulate|emit|test|report``.

Data goes to files (or stdout for ``report``); progress goes to stderr.
Exit codes: 0 success, 1 failing verdicts (``test`` only), 2 config/IO error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import socket
import sys
import time

from . import __version__
from .config import load_config, oracle_config_from_dict, twin_config_from_dict
from .emulator import PlantEmulator, faults_from_list, schedule_from_dict
from .exceptions import TwinTestError
from .furnace import Holding, Normal, new_simulation, train_layout
from .oracle import ConformanceOracle, Verdict
from .snapshot import SnapshotAssembler
from .stats import DeviationStats, write_histogram_csv
from .telemetry import open_source, parse_source_spec

log = logging.getLogger("dttest")

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


class UsageError(TwinTestError):
    pass


def _parse_mode(text, reversal_default):
    kind, _, rest = text.partition(":")
    parts = [float(p) for p in rest.split(":") if p]
    if kind == "normal" and len(parts) == 1:
        return Normal(parts[0])
    if kind == "holding" and len(parts) in (1, 2):
        return Holding(parts[0], parts[1] if len(parts) == 2 else reversal_default)
    raise UsageError(f"bad --mode {text!r}; use normal:<speed> or holding:<speed>[:<interval>]")


def _parse_powers(text, zones):
    try:
        values = [float(p) for p in text.split(",")]
    except ValueError:
        raise UsageError(f"bad --powers {text!r}") from None
    if len(values) == 1:
        values = values * zones
    return values


def _clean(obj):
    """Replace NaN with None so the output stays valid JSON."""
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _write_json(path, obj):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


# -- simulate -------------------------------------------------------------


def cmd_simulate(args):
    cfg = load_config(args.config) if args.config else {}
    twin = twin_config_from_dict(cfg)
    layout = twin.layout
    mode = _parse_mode(args.mode, twin.reversal_interval)
    powers = _parse_powers(args.powers, layout.zones)
    heads = train_layout(twin.bars, args.head)
    sim = new_simulation(layout, twin.thermal, list(zip(twin.bars, heads)), mode, powers, dt=twin.dt)
    n = int(round(args.duration / twin.dt))
    os.makedirs(args.out, exist_ok=True)
    sensors_path = os.path.join(args.out, "sensors.csv")
    exits_path = os.path.join(args.out, "exits.csv")
    with open(sensors_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "head", *layout.sensor_keys])
        for _ in range(n):
            sim.advance()
            w.writerow([repr(round(sim.clock, 9)), repr(sim.head_position()), *map(repr, sim.sensor_array().tolist())])
    with open(exits_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "head_temp"])
        for t, temp in sim.exit_log:
            w.writerow([repr(round(t, 9)), repr(temp)])
    log.info("simulated %d steps -> %s", n, args.out)
    return EXIT_OK


# -- emit -----------------------------------------------------------------


def _load_faults(args, cfg):
    items = cfg.get("faults", [])
    if args.faults:
        try:
            with open(args.faults, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot load faults from {args.faults}: {exc}") from None
        items = data.get("faults", []) if isinstance(data, dict) else data
    return faults_from_list(items)


def _schedule(args, cfg):
    scenario = dict(cfg.get("scenario", {}))
    if args.duration is not None:
        scenario["duration"] = args.duration
    if "duration" not in scenario:
        raise UsageError("no duration: pass --duration or set scenario.duration")
    return schedule_from_dict(scenario)


def _serve(lines, port, host="127.0.0.1"):
    with socket.create_server((host, port)) as srv:
        log.info("waiting for a consumer on %s:%d", host, port)
        conn, addr = srv.accept()
        with conn:
            log.info("streaming %d records to %s", len(lines), addr)
            conn.sendall("".join(line + "\n" for line in lines).encode("utf-8"))


def cmd_emit(args):
    cfg = load_config(args.config) if args.config else {}
    twin = twin_config_from_dict(cfg)
    schedule = _schedule(args, cfg)
    faults = _load_faults(args, cfg)
    emission = PlantEmulator(twin, schedule, faults, seed=args.seed).emit()
    lines = emission.lines()
    if args.serve:
        kind, _, port = args.serve.partition(":")
        if kind != "tcp":
            raise UsageError("--serve expects tcp:<port>")
        _serve(lines, int(port))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            emission.write(fh)
    if not args.serve and not args.out:
        sys.stdout.write("".join(line + "\n" for line in lines))
    log.info("emitted %d records (%d dropped)", len(lines), emission.dropped)
    return EXIT_OK


# -- test -----------------------------------------------------------------


def cmd_test(args):
    cfg = load_config(args.config) if args.config else {}
    twin = twin_config_from_dict(cfg)
    oracle_cfg = cfg.get("oracle", {})
    if args.oracle_config:
        data = load_config(args.oracle_config)
        oracle_cfg = data.get("oracle", data)
    oracle = ConformanceOracle.from_configs(twin, oracle_config_from_dict(oracle_cfg))
    kind, location, factor = parse_source_spec(args.source)
    source = open_source(kind, location, layout=twin.layout, speedup=factor)
    os.makedirs(args.out, exist_ok=True)
    verdict_path = os.path.join(args.out, "verdicts.jsonl")
    summary_path = os.path.join(args.out, "summary.json")
    stats = DeviationStats()
    assembler = SnapshotAssembler.for_layout(twin.layout)
    last_flush = time.monotonic()
    try:
        with open(verdict_path, "w", encoding="utf-8") as out:
            for i, verdict in enumerate(oracle.run_stream(source, assembler, sink=stats), start=1):
                out.write(verdict.to_json())
                out.write("\n")
                if time.monotonic() - last_flush > 1.0:
                    out.flush()
                    _write_json(summary_path, _test_summary(oracle, stats, source, partial=True))
                    log.info("%d verdicts, %d failed, %d skipped", i, stats.failed, stats.skipped)
                    last_flush = time.monotonic()
    finally:
        source.close()
    summary = _test_summary(oracle, stats, source)
    _write_json(summary_path, summary)
    if "io_error" in summary:
        log.error("stream ended early: %s", summary["io_error"])
        return EXIT_ERROR
    log.info(
        "done: %d passed, %d failed, %d skipped, %d parse errors",
        stats.passed,
        stats.failed,
        stats.skipped,
        source.error_count,
    )
    if stats.failed:
        worst = sorted(stats.field_failures.items(), key=lambda kv: -kv[1])[:5]
        log.info("most frequently failing fields: %s", ", ".join(f"{k} ({v})" for k, v in worst))
    return EXIT_FAIL if stats.failed else EXIT_OK


def _test_summary(oracle, stats, source, partial=False):
    out = dict(getattr(oracle, "summary_", {}))
    out.update(
        {
            "passed": stats.passed,
            "failed": stats.failed,
            "skipped": stats.skipped,
            "skip_reasons": dict(sorted(stats.skip_reasons.items())),
            "pass_rate": stats.pass_rate if stats.evaluated else None,
            "failing_fields": {k: v for k, v in sorted(stats.field_failures.items()) if v},
            "records": source.record_count,
            "parse_errors": source.error_count,
            "partial": partial,
        }
    )
    return out


# -- report ---------------------------------------------------------------


def cmd_report(args):
    stats = DeviationStats()
    n = 0
    try:
        with open(args.verdict_log, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    stats.add(Verdict.from_dict(json.loads(line)))
                except (ValueError, KeyError, TypeError) as exc:
                    raise UsageError(f"{args.verdict_log}:{lineno}: corrupt verdict ({exc})") from None
                n += 1
    except OSError as exc:
        raise UsageError(f"cannot read {args.verdict_log}: {exc}") from None
    if n == 0:
        raise UsageError(f"{args.verdict_log} holds no verdicts")
    os.makedirs(args.out, exist_ok=True)
    for name, hist in sorted(stats.histograms.items()):
        write_histogram_csv(hist, os.path.join(args.out, f"{name}.csv"))
    summary = stats.summary()
    _write_json(os.path.join(args.out, "summary.json"), summary)
    json.dump(_clean(summary), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    for name, field_summary in summary["fields"].items():
        if name != "position":
            log.info("%s: P(-4 <= err <= 5) = %.4f", name, field_summary["prob_between_-4_5"])
    return EXIT_OK


# -- entry ----------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="dttest", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the twin standalone and log sensors and exits")
    s.add_argument("--config")
    s.add_argument("--duration", type=float, required=True)
    s.add_argument("--powers", default="500,500,400,400,300", help="kW per zone, comma separated")
    s.add_argument("--mode", default="normal:50", help="normal:<speed> or holding:<speed>[:<interval>]")
    s.add_argument("--head", type=float, default=0.0, help="initial head position of the train (mm)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("emit", help="generate plant telemetry")
    e.add_argument("--config")
    e.add_argument("--faults")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--duration", type=float)
    e.add_argument("--out")
    e.add_argument("--serve", help="tcp:<port>")
    e.set_defaults(func=cmd_emit)

    t = sub.add_parser("test", help="test the twin against a telemetry source")
    t.add_argument("--config")
    t.add_argument("--oracle-config")
    t.add_argument("--source", required=True, help="file:<path> | tcp:<host:port> | paced:<path>:<factor>")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_test)

    r = sub.add_parser("report", help="histograms and summary from a verdict log")
    r.add_argument("verdict_log")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (TwinTestError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
