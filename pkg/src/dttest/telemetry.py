"""Telemetry wire format, parser and record sources.

One record per line, a flat JSON object with exactly three keys::

    {"ts": 100.0, "tag": "temp.z1.s3", "value": 851.2}

Canonical tags are ``power.z{zone}``, ``temp.z{zone}.s{index}``,
``pos.head``, ``pos.back``, ``speed`` and ``mode.holding``.
"""

from __future__ import annotations

import json
import logging
import math
import re
import socket
import time
from dataclasses import dataclass

from .exceptions import TelemetryParseError

log = logging.getLogger(__name__)

POWER, TEMP, HEAD, BACK, SPEED, HOLDING = "power", "temp", "head", "back", "speed", "holding"

_TAG_RE = re.compile(r"^(?:power\.z(\d+)|temp\.z(\d+)\.s(\d+)|pos\.head|pos\.back|speed|mode\.holding)$")


@dataclass(frozen=True)
class Tag:
    kind: str
    zone: int = 0
    index: int = 0

    def render(self):
        if self.kind == POWER:
            return f"power.z{self.zone}"
        if self.kind == TEMP:
            return f"temp.z{self.zone}.s{self.index}"
        return {HEAD: "pos.head", BACK: "pos.back", SPEED: "speed", HOLDING: "mode.holding"}[self.kind]

    @property
    def sensor_key(self):
        return f"z{self.zone}.s{self.index}" if self.kind == TEMP else None

    def __str__(self):
        return self.render()

    @classmethod
    def parse(cls, text):
        m = _TAG_RE.match(text)
        if m is None:
            raise TelemetryParseError("unknown-tag", f"unrecognised tag {text!r}")
        if m.group(1) is not None:
            return cls(POWER, int(m.group(1)))
        if m.group(2) is not None:
            return cls(TEMP, int(m.group(2)), int(m.group(3)))
        return {"pos.head": HEAD_TAG, "pos.back": BACK_TAG, "speed": SPEED_TAG, "mode.holding": HOLDING_TAG}[text]


HEAD_TAG = Tag(HEAD)
BACK_TAG = Tag(BACK)
SPEED_TAG = Tag(SPEED)
HOLDING_TAG = Tag(HOLDING)


def power_tag(zone):
    return Tag(POWER, zone)


def temp_tag(zone, index):
    return Tag(TEMP, zone, index)


def tags_for_layout(layout):
    """Every tag a line with this layout can publish, in canonical order."""
    tags = [power_tag(z) for z in range(1, layout.zones + 1)]
    tags += [temp_tag(s.zone, s.index_in_zone) for s in layout.sensors]
    return tags + [SPEED_TAG, HOLDING_TAG, BACK_TAG, HEAD_TAG]


@dataclass(frozen=True)
class TelemetryRecord:
    ts: float
    tag: Tag
    value: float

    def render(self):
        return render_record(self)


def render_record(record):
    # repr() of a float round-trips exactly
    return f'{{"ts": {float(record.ts)!r}, "tag": "{record.tag.render()}", "value": {float(record.value)!r}}}'


class TelemetryParser:
    """Parses wire lines, optionally restricted to the tags of one layout."""

    def __init__(self, layout=None):
        self.layout = layout
        self._known = None
        if layout is not None:
            self._known = {t.render(): t for t in tags_for_layout(layout)}

    def _tag(self, text):
        if self._known is not None:
            tag = self._known.get(text)
            if tag is None:
                raise TelemetryParseError("unknown-tag", f"tag {text!r} not published by this layout")
            return tag
        return Tag.parse(text)

    def parse(self, line, line_number=None):
        try:
            obj = json.loads(line)
        except ValueError as exc:
            raise TelemetryParseError("malformed-line", str(exc), line_number) from None
        if not isinstance(obj, dict):
            raise TelemetryParseError("malformed-line", "not an object", line_number)
        try:
            ts, tag_text, value = obj["ts"], obj["tag"], obj["value"]
        except KeyError as exc:
            raise TelemetryParseError("missing-field", f"missing {exc.args[0]!r}", line_number) from None
        if not isinstance(tag_text, str):
            raise TelemetryParseError("unknown-tag", "tag must be a string", line_number)
        try:
            tag = self._tag(tag_text)
        except TelemetryParseError as exc:
            exc.line_number = line_number
            raise
        for name, v in (("ts", ts), ("value", value)):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise TelemetryParseError("malformed-line", f"{name} is not a number", line_number)
            if not math.isfinite(v):
                raise TelemetryParseError("non-finite-value", f"{name}={v!r}", line_number)
        if tag.kind == HOLDING and value not in (0, 1):
            raise TelemetryParseError("malformed-line", f"holding indicator must be 0 or 1, got {value!r}", line_number)
        return TelemetryRecord(float(ts), tag, float(value))


def parse_record(line, layout=None):
    return TelemetryParser(layout).parse(line)


class RecordSource:
    """Iterator over records with skip-and-count handling of bad lines.

    ``errors`` keeps the parse errors seen so far (with line numbers);
    ``error_count`` and ``record_count`` are running totals.
    """

    def __init__(self, lines, layout=None, max_kept_errors=1000):
        self._lines = lines
        self._parser = TelemetryParser(layout)
        self.errors = []
        self.error_count = 0
        self.record_count = 0
        self.max_kept_errors = max_kept_errors

    def __iter__(self):
        parse = self._parser.parse
        for lineno, line in enumerate(self._lines, start=1):
            if not line.strip():
                continue
            try:
                rec = parse(line, lineno)
            except TelemetryParseError as exc:
                self.error_count += 1
                if len(self.errors) < self.max_kept_errors:
                    self.errors.append(exc)
                log.debug("skipping %s", exc)
                continue
            self.record_count += 1
            yield rec

    def close(self):
        close = getattr(self._lines, "close", None)
        if close is not None:
            close()


def _paced(records, speedup, clock=time.monotonic, sleep=time.sleep):
    start_wall = None
    start_ts = None
    for rec in records:
        if start_wall is None:
            start_wall, start_ts = clock(), rec.ts
        else:
            due = start_wall + (rec.ts - start_ts) / speedup
            delay = due - clock()
            if delay > 0:
                sleep(delay)
        yield rec


class PacedSource(RecordSource):
    """File replay that sleeps to honour record timestamps, ``speedup`` times faster."""

    def __init__(self, lines, speedup=1.0, layout=None):
        super().__init__(lines, layout)
        if not speedup > 0:
            raise ValueError("speedup must be > 0")
        self.speedup = float(speedup)

    def __iter__(self):
        return _paced(super().__iter__(), self.speedup)


def _socket_lines(host, port, timeout):
    # the producer may still be starting up: retry until the timeout
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            break
        except ConnectionRefusedError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.05)
    sock.settimeout(None)
    with sock, sock.makefile("r", encoding="utf-8", newline="\n") as fh:
        yield from fh


def open_source(kind, location, layout=None, speedup=1.0, timeout=10.0):
    """Open a record source.

    ``kind`` is ``file``, ``paced`` or ``tcp``; ``location`` is a path or
    ``host:port``.  I/O failures raise :class:`OSError` immediately for files
    and on first iteration for sockets.
    """
    if kind == "file":
        return RecordSource(open(location, encoding="utf-8"), layout)
    if kind == "paced":
        return PacedSource(open(location, encoding="utf-8"), speedup, layout)
    if kind == "tcp":
        host, _, port = str(location).rpartition(":")
        return RecordSource(_socket_lines(host or "127.0.0.1", int(port), timeout), layout)
    raise ValueError(f"unknown source kind {kind!r}")


def parse_source_spec(spec):
    """Split ``file:<path>``, ``tcp:<host:port>`` or ``paced:<path>:<factor>``."""
    kind, sep, rest = spec.partition(":")
    if not sep or not rest:
        raise ValueError(f"bad source spec {spec!r}")
    if kind == "paced":
        path, sep, factor = rest.rpartition(":")
        if not sep:
            raise ValueError("paced source needs paced:<path>:<factor>")
        return kind, path, float(factor)
    if kind in ("file", "tcp"):
        return kind, rest, 1.0
    raise ValueError(f"unknown source kind {kind!r}")


def write_records(records, fh):
    n = 0
    for rec in records:
        fh.write(render_record(rec))
        fh.write("\n")
        n += 1
    return n
