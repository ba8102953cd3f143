"""Discrete-event thermal model of a multi-zone induction heating line.

Bars travel along a one-dimensional line coordinate (mm).  Each bar is cut
into equal segments with a lumped temperature.  Every step applies, in
order: movement, heating under the coils plus radiative cooling, sensor
read-out, and removal of bars whose tail has passed the end of the line.
"""

from __future__ import annotations

import copy
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._validation import check_finite, check_fraction, check_positive, check_powers
from .exceptions import InvalidGeometryError, InvalidParameterError

STEFAN_BOLTZMANN = 5.670374419e-8
KELVIN = 273.15


def sensor_key(zone, index):
    return f"z{zone}.s{index}"


@dataclass(frozen=True)
class BarSpec:
    """Geometry and material of one bar. Lengths in mm, SI otherwise."""

    length: float
    diameter: float
    density: float = 7850.0
    specific_heat: float = 490.0
    segment_resolution: float = 50.0

    def __post_init__(self):
        check_positive("length", self.length)
        check_positive("diameter", self.diameter)
        check_positive("density", self.density)
        check_positive("specific_heat", self.specific_heat)
        check_positive("segment_resolution", self.segment_resolution)
        if self.segment_resolution > self.length:
            raise InvalidParameterError("segment_resolution must not exceed length")

    @classmethod
    def from_mass(cls, length, diameter, mass, specific_heat=490.0, segment_resolution=50.0):
        """Build a spec from total bar mass (kg), back-solving the density."""
        check_positive("mass", mass)
        volume = math.pi * (diameter * 1e-3 / 2) ** 2 * (length * 1e-3)
        return cls(length, diameter, mass / volume, specific_heat, segment_resolution)

    @cached_property
    def n_segments(self):
        return max(1, math.ceil(self.length / self.segment_resolution - 1e-12))

    @cached_property
    def segment_length(self):
        return self.length / self.n_segments

    @cached_property
    def segment_mass(self):
        radius = self.diameter * 1e-3 / 2
        return self.density * math.pi * radius**2 * self.segment_length * 1e-3

    @cached_property
    def segment_area(self):
        # lateral surface only
        return math.pi * self.diameter * 1e-3 * self.segment_length * 1e-3

    @cached_property
    def segment_heat_capacity(self):
        return self.segment_mass * self.specific_heat

    @cached_property
    def edge_offsets(self):
        """Segment edges measured from the tail (mm), read-only."""
        out = self.segment_length * np.arange(self.n_segments + 1)
        out.flags.writeable = False
        return out


@dataclass(frozen=True)
class CoilConfig:
    zone: int
    index_in_zone: int
    start_pos: float
    end_pos: float

    @property
    def length(self):
        return self.end_pos - self.start_pos


@dataclass(frozen=True)
class SensorConfig:
    zone: int
    index_in_zone: int
    position: float

    @property
    def key(self):
        return sensor_key(self.zone, self.index_in_zone)


@dataclass(frozen=True)
class FurnaceLayout:
    zones: int
    coils_per_zone: int
    coils: tuple
    sensors: tuple
    line_end: float
    ambient_temp: float = 25.0

    def __post_init__(self):
        object.__setattr__(self, "coils", tuple(self.coils))
        object.__setattr__(self, "sensors", tuple(sorted(self.sensors, key=lambda s: (s.zone, s.index_in_zone))))
        if self.zones < 1 or self.coils_per_zone < 1:
            raise InvalidParameterError("zones and coils_per_zone must be >= 1")
        if len(self.coils) != self.zones * self.coils_per_zone:
            raise InvalidGeometryError(
                f"expected {self.zones * self.coils_per_zone} coils, got {len(self.coils)}"
            )
        prev_end = -math.inf
        for coil in self.coils:
            if not coil.start_pos < coil.end_pos:
                raise InvalidGeometryError(f"coil {coil} has start >= end")
            if coil.start_pos < prev_end:
                raise InvalidGeometryError("coils must be sorted and non-overlapping")
            if not (1 <= coil.zone <= self.zones and 1 <= coil.index_in_zone <= self.coils_per_zone):
                raise InvalidGeometryError(f"coil {coil} outside zone grid")
            prev_end = coil.end_pos
        keys = [s.key for s in self.sensors]
        if len(set(keys)) != len(keys):
            raise InvalidGeometryError("duplicate sensor identifiers")
        for s in self.sensors:
            if not 1 <= s.zone <= self.zones:
                raise InvalidGeometryError(f"sensor {s.key} outside zone range")
            if not self._in_gap(s.position):
                raise InvalidGeometryError(f"sensor {s.key} at {s.position} is not inside an inter-coil gap")
        if self.line_end < self.coils[-1].end_pos:
            raise InvalidGeometryError("line_end lies before the last coil")
        check_finite("ambient_temp", self.ambient_temp)

    def _in_gap(self, x):
        for left, right in zip(self.coils, self.coils[1:]):
            if left.end_pos < x < right.start_pos:
                return True
        return False

    @property
    def sensor_keys(self):
        return [s.key for s in self.sensors]

    @property
    def sensor_positions(self):
        return np.array([s.position for s in self.sensors], dtype=float)

    @property
    def furnace_span(self):
        return self.coils[0].start_pos, self.coils[-1].end_pos


def default_layout(
    zones=5,
    coils_per_zone=4,
    coil_length=400.0,
    gap=100.0,
    origin=0.0,
    shear_distance=600.0,
    ambient_temp=25.0,
):
    """Evenly spaced coils with one pyrometer in each gap inside a zone.

    The default is 5 zones of 4 coils, giving 3 sensors per zone.
    """
    coils = []
    sensors = []
    pitch = coil_length + gap
    for z in range(1, zones + 1):
        for j in range(1, coils_per_zone + 1):
            start = origin + ((z - 1) * coils_per_zone + (j - 1)) * pitch
            coils.append(CoilConfig(z, j, start, start + coil_length))
            if j < coils_per_zone:
                sensors.append(SensorConfig(z, j, start + coil_length + gap / 2))
    return FurnaceLayout(
        zones=zones,
        coils_per_zone=coils_per_zone,
        coils=coils,
        sensors=sensors,
        line_end=coils[-1].end_pos + shear_distance,
        ambient_temp=ambient_temp,
    )


@dataclass(frozen=True)
class ThermalParams:
    heating_efficiency: tuple = (0.75,)
    emissivity: float = 0.8
    stefan_boltzmann: float = STEFAN_BOLTZMANN

    def __post_init__(self):
        eff = self.heating_efficiency
        if np.isscalar(eff):
            eff = (float(eff),)
        object.__setattr__(self, "heating_efficiency", tuple(float(e) for e in eff))
        for e in self.heating_efficiency:
            check_fraction("heating_efficiency", e, allow_zero=False)
        check_fraction("emissivity", self.emissivity)

    def efficiency_for(self, n_zones):
        eff = self.heating_efficiency
        if len(eff) == 1:
            return np.full(n_zones, eff[0])
        if len(eff) != n_zones:
            raise InvalidParameterError(f"need {n_zones} heating efficiencies, got {len(eff)}")
        return np.asarray(eff, dtype=float)


@dataclass(frozen=True)
class Normal:
    """Production mode: constant forward speed (mm/s).

    A speed of zero is accepted and models a stopped conveyor.
    """

    speed: float

    def __post_init__(self):
        check_positive("speed", self.speed, strict=False)


@dataclass(frozen=True)
class Holding:
    """Warm holding: bars oscillate at ``speed``, reversing every ``reversal_interval`` s."""

    speed: float
    reversal_interval: float
    direction: int = 1

    def __post_init__(self):
        check_positive("speed", self.speed)
        check_positive("reversal_interval", self.reversal_interval)
        if self.direction not in (1, -1):
            raise InvalidParameterError("direction must be +1 or -1")


@dataclass
class BarState:
    spec: BarSpec
    head_pos: float
    segment_temps: np.ndarray
    # set by the twin once the bar sits outside the coils at ambient
    settled: bool = field(default=False, compare=False, repr=False)

    @property
    def tail_pos(self):
        return self.head_pos - self.spec.length

    def segment_centers(self):
        seg = self.spec.segment_length
        return self.tail_pos + seg * (np.arange(self.spec.n_segments) + 0.5)


@dataclass(frozen=True)
class BarExit:
    time: float
    head_temp: float
    spec: BarSpec


class Simulation:
    """Mutable state of the twin: clock, bars, zone powers, mode and logs.

    Bars are kept front-of-line first.  Use :func:`new_simulation` or
    :func:`seed_from_snapshot` rather than calling the constructor directly.
    """

    def __init__(self, layout, thermal, mode, powers, dt=0.1, record_history=True):
        self.layout = layout
        self.thermal = thermal
        self.dt = check_positive("dt", dt)
        self.record_history = record_history
        self.clock = 0.0
        self.bars = []
        self.mode = None
        self.zone_powers = None
        self.exit_log = []
        self.temp_history = []
        self.sensor_history = []
        self._eff = thermal.efficiency_for(layout.zones)
        self._sensor_x = layout.sensor_positions
        self._by_position = np.argsort(self._sensor_x, kind="stable")
        self._xs_sorted_arr = self._sensor_x[self._by_position]
        self._xs_sorted = self._xs_sorted_arr.tolist()
        self._by_position_list = self._by_position.tolist()
        self._sensor_keys = layout.sensor_keys
        self._sensor_arr = np.full(len(self._sensor_keys), float(layout.ambient_temp))
        self._coil_zone = np.array([c.zone - 1 for c in layout.coils])
        self._coil_len = np.array([c.length for c in layout.coils])
        self._span = layout.furnace_span
        self._breaks = np.array([[c.start_pos, c.end_pos] for c in layout.coils]).reshape(-1)
        self.set_zone_powers(powers)
        self.set_mode(mode)

    # -- configuration -------------------------------------------------

    def set_zone_powers(self, powers):
        self.zone_powers = check_powers(powers, self.layout.zones)
        # cumulative delivered power (W) along the line, piecewise linear in x
        coil_watts = self._eff[self._coil_zone] * self.zone_powers[self._coil_zone] * 1e3 / self.layout.coils_per_zone
        density = coil_watts / self._coil_len
        cum = np.zeros(self._breaks.shape[0])
        cum[1::2] = np.cumsum(coil_watts)
        cum[2::2] = cum[1:-1:2]
        self._cum_power = cum
        self._coil_density = density
        return self

    def set_mode(self, mode):
        if not isinstance(mode, (Normal, Holding)):
            raise InvalidParameterError(f"unknown operating mode {mode!r}")
        self.mode = mode
        self._leg_elapsed = 0.0
        self._direction = mode.direction if isinstance(mode, Holding) else 1
        return self

    @property
    def direction(self):
        return self._direction

    def add_bar(self, spec, head_pos, temps=None):
        """Insert a bar, keeping the front-first order and the no-overlap rule."""
        if temps is None:
            temps = np.full(spec.n_segments, float(self.layout.ambient_temp))
        else:
            temps = np.array(temps, dtype=float)
            if temps.shape != (spec.n_segments,):
                raise InvalidParameterError(f"expected {spec.n_segments} segment temperatures")
            if not np.all(np.isfinite(temps)) or np.any(temps <= -KELVIN):
                raise InvalidParameterError("segment temperatures must be finite and above absolute zero")
        bar = BarState(spec, float(head_pos), temps)
        bars = sorted(self.bars + [bar], key=lambda b: -b.head_pos)
        for front, back in zip(bars, bars[1:]):
            if front.tail_pos < back.head_pos:
                raise InvalidGeometryError("bars overlap")
        self.bars = bars
        return bar

    # -- step components -----------------------------------------------

    def movement_update(self, dt):
        return self._move(check_positive("dt", dt))

    def _move(self, dt):
        mode = self.mode
        if isinstance(mode, Normal):
            shift = mode.speed * dt
        else:
            shift = 0.0
            remaining = dt
            while remaining > 0:
                left_in_leg = mode.reversal_interval - self._leg_elapsed
                if remaining < left_in_leg:
                    shift += self._direction * mode.speed * remaining
                    self._leg_elapsed += remaining
                    remaining = 0.0
                else:
                    shift += self._direction * mode.speed * left_in_leg
                    remaining -= left_in_leg
                    self._leg_elapsed = 0.0
                    self._direction = -self._direction
        for bar in self.bars:
            bar.head_pos += shift
        return shift

    def delivered_power(self, bar):
        """Per-segment heating power (W) for ``bar`` at its current position."""
        cum = np.interp(bar.tail_pos + bar.spec.edge_offsets, self._breaks, self._cum_power)
        return cum[1:] - cum[:-1]

    def temperature_update(self, dt):
        self._heat_and_cool(check_positive("dt", dt))

    def _heat_and_cool(self, dt):
        amb = float(self.layout.ambient_temp)
        amb4 = (amb + KELVIN) ** 4
        eps_sigma = self.thermal.emissivity * self.thermal.stefan_boltzmann
        lo, hi = self._span
        for bar in self.bars:
            spec = bar.spec
            scale = dt / spec.segment_heat_capacity
            temps = bar.segment_temps
            heated = bar.head_pos > lo and bar.tail_pos < hi
            if heated:
                bar.settled = False
                temps += self.delivered_power(bar) * scale
            elif bar.settled:
                continue
            elif temps.min() == amb == temps.max():
                # outside the coils and already at ambient: nothing changes
                bar.settled = True
                continue
            if eps_sigma > 0:
                t4 = temps + KELVIN
                t4 *= t4
                t4 *= t4
                t4 -= amb4
                t4 *= eps_sigma * spec.segment_area * scale
                cooled = temps - t4
                if temps.min() >= amb:
                    np.maximum(cooled, amb, out=temps)
                else:
                    temps[:] = np.where(temps >= amb, np.maximum(cooled, amb), np.minimum(cooled, amb))

    def _covered_ranges(self):
        """``(bar, lo, hi)`` slices into the position-sorted sensor list."""
        xs = self._xs_sorted
        out = []
        next_free = 0
        # rear bars first so a shared boundary goes to the tail-side bar
        for bar in reversed(self.bars):
            lo = max(bisect_left(xs, bar.tail_pos), next_free)
            hi = bisect_right(xs, bar.head_pos)
            if lo < hi:
                out.append((bar, lo, hi))
                next_free = hi
        return out

    def sensor_update(self):
        values = self._sensor_arr
        xs = self._xs_sorted
        by_position = self._by_position_list
        for bar, lo, hi in self._covered_ranges():
            temps = bar.segment_temps
            tail = bar.tail_pos
            seg = bar.spec.segment_length
            last = bar.spec.n_segments - 1
            for j in range(lo, hi):
                # a sensor on a segment boundary reads the tail-side segment
                idx = min(max(math.ceil((xs[j] - tail) / seg) - 1, 0), last)
                values[by_position[j]] = temps[idx]
        if self.record_history:
            self.sensor_history.append((self.clock, values.tolist()))

    @property
    def sensor_values(self):
        """Current reading of every pyrometer, keyed by sensor id (°C)."""
        return dict(zip(self._sensor_keys, self._sensor_arr.tolist()))

    @sensor_values.setter
    def sensor_values(self, mapping):
        self._sensor_arr = np.array([float(mapping[k]) for k in self._sensor_keys])

    def sensor_array(self):
        return self._sensor_arr.copy()

    def covered_sensors(self):
        """Keys of sensors with some bar segment underneath them right now."""
        pos = sorted(int(i) for _, lo, hi in self._covered_ranges() for i in self._by_position[lo:hi])
        return [self._sensor_keys[i] for i in pos]

    def handle_exits(self):
        exits = []
        kept = []
        for bar in self.bars:
            if bar.tail_pos > self.layout.line_end:
                head_temp = float(bar.segment_temps[-1])
                self.exit_log.append((self.clock, head_temp))
                exits.append(BarExit(self.clock, head_temp, bar.spec))
            else:
                kept.append(bar)
        self.bars = kept
        return exits

    # -- driving -------------------------------------------------------

    def advance(self, dt=None):
        """One step of length ``dt`` (defaults to the configured quantum)."""
        dt = self.dt if dt is None else check_positive("dt", dt)
        self._move(dt)
        self._heat_and_cool(dt)
        self.clock += dt
        self.sensor_update()
        exits = self.handle_exits()
        if self.record_history:
            self.temp_history.append((self.clock, [b.segment_temps.copy() for b in self.bars]))
        return exits

    def run(self, duration, dt=None):
        """Advance by ``duration`` seconds in whole quanta plus one residual step."""
        dt = self.dt if dt is None else dt
        duration = check_positive("duration", duration, strict=False)
        n = int(math.floor(duration / dt + 1e-9))
        exits = []
        for _ in range(n):
            exits.extend(self.advance(dt))
        residual = duration - n * dt
        if residual > 1e-9 * dt:
            exits.extend(self.advance(residual))
        return exits

    def head_position(self):
        return self.bars[0].head_pos if self.bars else math.nan

    def back_position(self):
        return self.bars[-1].tail_pos if self.bars else math.nan

    def total_enthalpy(self):
        """Sum of m*c_p*T over all segments (J, relative to 0 °C)."""
        return float(sum(b.spec.segment_heat_capacity * b.segment_temps.sum() for b in self.bars))

    def copy(self):
        return copy.deepcopy(self)

    def __eq__(self, other):
        if not isinstance(other, Simulation):
            return NotImplemented
        return (
            self.clock == other.clock
            and self.mode == other.mode
            and np.array_equal(self.zone_powers, other.zone_powers)
            and self.sensor_values == other.sensor_values
            and len(self.bars) == len(other.bars)
            and all(
                a.spec == b.spec and a.head_pos == b.head_pos and np.array_equal(a.segment_temps, b.segment_temps)
                for a, b in zip(self.bars, other.bars)
            )
            and self.exit_log == other.exit_log
        )

    __hash__ = None


def new_simulation(layout, thermal, bars, mode, powers, dt=0.1, record_history=True):
    """Build a fresh simulation; ``bars`` is a list of ``(BarSpec, head_pos)``."""
    sim = Simulation(layout, thermal, mode, powers, dt=dt, record_history=record_history)
    for spec, head in bars:
        sim.add_bar(spec, head)
    return sim


def train_layout(bar_specs, head_pos):
    """Head positions for bars placed nose to tail, front bar first."""
    heads = []
    head = float(head_pos)
    for spec in bar_specs:
        heads.append(head)
        head -= spec.length
    return heads


def mode_from_snapshot(speed, holding, reversal_interval):
    """Movement rule implied by a snapshot's signed speed and holding flag."""
    if speed < 0:
        return Holding(-speed, reversal_interval, direction=-1)
    if holding and speed > 0:
        return Holding(speed, reversal_interval, direction=1)
    return Normal(speed)


def seed_from_snapshot(
    layout,
    thermal,
    bar_specs,
    snapshot,
    reversal_interval=30.0,
    dt=0.1,
    position_tolerance=1.0,
    record_history=False,
):
    """Initialise a simulation from one snapshot of the real line.

    The bar train (``bar_specs``, front bar first) is placed nose to tail
    with its head at the snapshot head position.  Segment temperatures are
    interpolated from the snapshot's sensor readings.
    """
    from .exceptions import IncompleteSnapshotError, InconsistentPositionsError

    temps = np.asarray(snapshot.temps, dtype=float)
    powers = np.asarray(snapshot.powers, dtype=float)
    scalars = (snapshot.back, snapshot.head, snapshot.speed, snapshot.ts)
    if (
        temps.shape != (len(layout.sensors),)
        or powers.shape != (layout.zones,)
        or not (np.all(np.isfinite(temps)) and np.all(np.isfinite(powers)))
        or any(v is None or not math.isfinite(v) for v in scalars)
    ):
        raise IncompleteSnapshotError("snapshot does not match the layout or has missing fields")
    bar_specs = list(bar_specs)
    train = sum(s.length for s in bar_specs)
    if abs((snapshot.head - snapshot.back) - train) > position_tolerance:
        raise InconsistentPositionsError(
            f"head - back = {snapshot.head - snapshot.back} mm but configured train length is {train} mm"
        )
    mode = mode_from_snapshot(snapshot.speed, snapshot.holding, reversal_interval)
    sim = Simulation(layout, thermal, mode, powers, dt=dt, record_history=record_history)
    lo, hi = layout.furnace_span
    xs = layout.sensor_positions
    order = np.argsort(xs)
    for spec, head in zip(bar_specs, train_layout(bar_specs, snapshot.head)):
        bar = sim.add_bar(spec, head)
        centers = bar.segment_centers()
        seeded = np.interp(centers, xs[order], temps[order])
        inside = (centers >= lo) & (centers <= hi)
        bar.segment_temps[:] = np.where(inside, seeded, layout.ambient_temp)
    sim.sensor_values = dict(zip(layout.sensor_keys, temps.tolist()))
    sim.clock = float(snapshot.ts)
    return sim
