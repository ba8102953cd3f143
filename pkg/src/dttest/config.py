"""Configuration objects and the shared JSON config file format.

A config file is one JSON object.  Every section is optional and falls
back to the defaults below::

    {
      "furnace": {"zones": 5, "coils_per_zone": 4, "coil_length": 400,
                  "gap": 100, "origin": 0, "shear_distance": 600,
                  "ambient_temp": 25},
      "thermal": {"heating_efficiency": 0.75, "emissivity": 0.8},
      "bars": [{"length": 10000, "diameter": 60, "density": 7850,
                "specific_heat": 490, "segment_resolution": 50}],
      "holding_reversal_interval": 10,
      "dt": 0.1,
      "oracle": {"temp_tolerance": 5, "position_tolerance": 2, ...},
      "scenario": {...},
      "faults": [...]
    }

``furnace`` may instead list ``coils`` (zone, index_in_zone, start_pos,
end_pos) and ``sensors`` (zone, index_in_zone, position) explicitly, with
``line_end``.  A bar may give ``mass`` (kg) instead of ``density``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .exceptions import ConfigError, TwinTestError
from .furnace import BarSpec, CoilConfig, FurnaceLayout, SensorConfig, ThermalParams, default_layout


@dataclass(frozen=True)
class TwinConfig:
    """Everything needed to build the twin: geometry, physics and the bar train."""

    layout: FurnaceLayout = field(default_factory=default_layout)
    thermal: ThermalParams = field(default_factory=ThermalParams)
    bars: tuple = (BarSpec(10000.0, 60.0),)
    reversal_interval: float = 10.0
    dt: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "bars", tuple(self.bars))
        if not self.bars:
            raise ConfigError("at least one bar is required")

    @property
    def train_length(self):
        return sum(b.length for b in self.bars)


@dataclass(frozen=True)
class OracleConfig:
    """Pass/fail thresholds and time handling for the oracle.

    ``max_time_skew`` (s), when set, skips pairs whose position-derived
    simulation time disagrees with the timestamp delta by more than this.
    ``max_reading_age`` (s), when set, leaves out of a verdict any
    temperature whose last update is older than this at the second
    snapshot (a lost record leaves the previous reading in place).
    ``seeding`` is ``"carry"`` (keep the twin's own thermal state between
    pairs) or ``"snapshot"`` (re-seed temperatures from every snapshot).
    """

    temp_tolerance: float = 5.0
    position_tolerance: float = 2.0
    min_speed: float = 0.5
    max_gap: float = 60.0
    dt_step: float = 0.1
    max_time_skew: float | None = None
    seeding: str = "carry"
    train_tolerance: float = 1.0
    max_reading_age: float | None = None

    def __post_init__(self):
        for name in ("temp_tolerance", "position_tolerance", "max_gap", "dt_step", "train_tolerance"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"oracle.{name} must be > 0")
        if not self.min_speed >= 0:
            raise ConfigError("oracle.min_speed must be >= 0")
        if self.max_time_skew is not None and not self.max_time_skew > 0:
            raise ConfigError("oracle.max_time_skew must be > 0")
        if self.max_reading_age is not None and not self.max_reading_age >= 0:
            raise ConfigError("oracle.max_reading_age must be >= 0")
        if self.seeding not in ("carry", "snapshot"):
            raise ConfigError("oracle.seeding must be 'carry' or 'snapshot'")


def _layout_from(d):
    d = dict(d or {})
    if "coils" in d:
        try:
            coils = [CoilConfig(**c) for c in d["coils"]]
            sensors = [SensorConfig(**s) for s in d.get("sensors", [])]
            return FurnaceLayout(
                zones=d["zones"],
                coils_per_zone=d["coils_per_zone"],
                coils=coils,
                sensors=sensors,
                line_end=d["line_end"],
                ambient_temp=d.get("ambient_temp", 25.0),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad explicit furnace layout: {exc}") from None
    allowed = {"zones", "coils_per_zone", "coil_length", "gap", "origin", "shear_distance", "ambient_temp"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown furnace keys: {sorted(unknown)}")
    return default_layout(**d)


def _bar_from(d):
    d = dict(d)
    try:
        if "mass" in d:
            mass = d.pop("mass")
            return BarSpec.from_mass(d.pop("length"), d.pop("diameter"), mass, **d)
        return BarSpec(**d)
    except TypeError as exc:
        raise ConfigError(f"bad bar entry: {exc}") from None


def twin_config_from_dict(d):
    try:
        thermal = dict(d.get("thermal", {}))
        if "heating_efficiency" in thermal and isinstance(thermal["heating_efficiency"], list):
            thermal["heating_efficiency"] = tuple(thermal["heating_efficiency"])
        kwargs = {"layout": _layout_from(d.get("furnace")), "thermal": ThermalParams(**thermal)}
        if "bars" in d:
            kwargs["bars"] = tuple(_bar_from(b) for b in d["bars"])
        if "holding_reversal_interval" in d:
            kwargs["reversal_interval"] = float(d["holding_reversal_interval"])
        if "dt" in d:
            kwargs["dt"] = float(d["dt"])
        return TwinConfig(**kwargs)
    except ConfigError:
        raise
    except (TwinTestError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def oracle_config_from_dict(d):
    d = dict(d or {})
    names = {f.name for f in fields(OracleConfig)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown oracle keys: {sorted(unknown)}")
    try:
        return OracleConfig(**d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path):
    """Read a config file into a plain dict (raises :class:`ConfigError`)."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def twin_config_to_dict(cfg):
    lay = cfg.layout
    return {
        "furnace": {
            "zones": lay.zones,
            "coils_per_zone": lay.coils_per_zone,
            "coils": [asdict(c) for c in lay.coils],
            "sensors": [asdict(s) for s in lay.sensors],
            "line_end": lay.line_end,
            "ambient_temp": lay.ambient_temp,
        },
        "thermal": {
            "heating_efficiency": list(cfg.thermal.heating_efficiency),
            "emissivity": cfg.thermal.emissivity,
        },
        "bars": [asdict(b) for b in cfg.bars],
        "holding_reversal_interval": cfg.reversal_interval,
        "dt": cfg.dt,
    }
