"""Snapshots of the line state and the streaming assembler that builds them."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import IncompleteSnapshotError
from .telemetry import BACK, HEAD, HOLDING, POWER, SPEED, TEMP

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Snapshot:
    """Powers (kW, per zone), temps (°C, per sensor), back/head (mm), speed (mm/s), ts (s)."""

    powers: tuple
    temps: tuple
    back: float
    head: float
    speed: float
    holding: bool
    ts: float
    temp_ts: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "powers", tuple(float(p) for p in self.powers))
        object.__setattr__(self, "temps", tuple(float(t) for t in self.temps))
        if self.temp_ts is not None:
            object.__setattr__(self, "temp_ts", tuple(float(t) for t in self.temp_ts))

    def reading_ages(self):
        """Seconds since each temperature was last updated, or ``None`` if unknown."""
        if self.temp_ts is None:
            return None
        return tuple(self.ts - t for t in self.temp_ts)

    def check_complete(self, n_zones=None, n_sensors=None):
        values = (*self.powers, *self.temps, self.back, self.head, self.speed, self.ts)
        if any(v is None or not math.isfinite(v) for v in values):
            raise IncompleteSnapshotError("snapshot has missing or non-finite fields")
        if n_zones is not None and len(self.powers) != n_zones:
            raise IncompleteSnapshotError(f"expected {n_zones} powers, got {len(self.powers)}")
        if n_sensors is not None and len(self.temps) != n_sensors:
            raise IncompleteSnapshotError(f"expected {n_sensors} temperatures, got {len(self.temps)}")
        return self

    @property
    def position(self):
        return (self.back, self.head)

    def to_dict(self):
        return {
            "ts": self.ts,
            "pwr": list(self.powers),
            "temp": list(self.temps),
            "pos": [self.back, self.head],
            "speed": self.speed,
            "holding": int(self.holding),
            **({"temp_ts": list(self.temp_ts)} if self.temp_ts is not None else {}),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        try:
            back, head = d["pos"]
            return cls(d["pwr"], d["temp"], back, head, d["speed"], bool(d.get("holding", 0)), d["ts"], d.get("temp_ts"))
        except (KeyError, TypeError, ValueError) as exc:
            raise IncompleteSnapshotError(f"bad snapshot object: {exc}") from None

    @classmethod
    def from_json(cls, line):
        return cls.from_dict(json.loads(line))


class SnapshotAssembler(TransformerMixin, BaseEstimator):
    """Builds complete snapshots out of a lossy, unordered tag stream.

    Non-position tags overwrite the value being built.  A snapshot is
    emitted once both ``pos.back`` and ``pos.head`` have been refreshed since
    the previous snapshot and every other field has been seen at least once.
    After emission only the position freshness is cleared; temperatures,
    powers and speed carry over into the next snapshot.  Each snapshot also
    records when every temperature was last updated (``temp_ts``).

    Parameters
    ----------
    n_zones : int
    sensor_keys : sequence of str
        Sensor ids such as ``"z2.s2"``, in snapshot order.
    """

    def __init__(self, n_zones=5, sensor_keys=None):
        self.n_zones = n_zones
        self.sensor_keys = sensor_keys

    @classmethod
    def for_layout(cls, layout):
        return cls(n_zones=layout.zones, sensor_keys=tuple(layout.sensor_keys))

    def _init_state(self):
        keys = list(self.sensor_keys or ())
        self.sensor_index_ = {k: i for i, k in enumerate(keys)}
        self._powers = [math.nan] * self.n_zones
        self._temps = [math.nan] * len(keys)
        self._temp_ts = [math.nan] * len(keys)
        self._power_seen = [False] * self.n_zones
        self._temp_seen = [False] * len(keys)
        self._n_missing = self.n_zones + len(keys) + 2
        self._speed = math.nan
        self._holding = None
        self._back = math.nan
        self._head = math.nan
        self._back_fresh = False
        self._head_fresh = False
        self.completed_count_ = 0
        self.discarded_count_ = 0

    def reset(self):
        self._init_state()
        return self

    def fit(self, X=None, y=None):
        self._init_state()
        return self

    def _ensure(self):
        if not hasattr(self, "_powers"):
            self._init_state()

    @property
    def warm(self):
        self._ensure()
        return self._n_missing == 0

    def ingest(self, record):
        """Feed one record; returns the completed :class:`Snapshot` or ``None``."""
        self._ensure()
        tag = record.tag
        kind = tag.kind
        if kind == TEMP:
            i = self.sensor_index_.get(tag.sensor_key)
            if i is None:
                return None
            self._temps[i] = record.value
            self._temp_ts[i] = record.ts
            if not self._temp_seen[i]:
                self._temp_seen[i] = True
                self._n_missing -= 1
            return None
        if kind == HEAD:
            self._head = record.value
            self._head_fresh = True
        elif kind == BACK:
            self._back = record.value
            self._back_fresh = True
        elif kind == POWER:
            z = tag.zone - 1
            if not 0 <= z < self.n_zones:
                return None
            self._powers[z] = record.value
            if not self._power_seen[z]:
                self._power_seen[z] = True
                self._n_missing -= 1
            return None
        elif kind == SPEED:
            if self._speed != self._speed:
                self._n_missing -= 1
            self._speed = record.value
            return None
        elif kind == HOLDING:
            if self._holding is None:
                self._n_missing -= 1
            self._holding = bool(record.value)
            return None
        if not (self._head_fresh and self._back_fresh and self._n_missing == 0):
            return None
        self._head_fresh = self._back_fresh = False
        if not self._back < self._head:
            self.discarded_count_ += 1
            log.warning("discarding snapshot at ts=%s: back %s >= head %s", record.ts, self._back, self._head)
            return None
        self.completed_count_ += 1
        return Snapshot(
            tuple(self._powers), tuple(self._temps), self._back, self._head, self._speed, self._holding, record.ts,
            tuple(self._temp_ts),
        )

    def transform(self, X):
        """Map an iterable of records to the list of snapshots they complete."""
        out = []
        for rec in X:
            snap = self.ingest(rec)
            if snap is not None:
                out.append(snap)
        return out

    def iter_snapshots(self, records):
        for rec in records:
            snap = self.ingest(rec)
            if snap is not None:
                yield snap
