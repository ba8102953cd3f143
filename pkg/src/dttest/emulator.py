"""Plant emulator: a stand-in for the real heating line and its telemetry.

The emulator integrates its own copy of the line physics (it does not call
into :mod:`dttest.furnace`) and publishes tag updates in the telemetry wire
format.  Faults can be injected into the physics (power steps, axial
conduction) or into what the sensors report (bias, noise, dropped records,
per-tag update periods).
"""

from __future__ import annotations

import fnmatch
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidScheduleError
from .furnace import KELVIN, STEFAN_BOLTZMANN
from .telemetry import (
    BACK_TAG,
    HEAD_TAG,
    HOLDING_TAG,
    SPEED_TAG,
    TelemetryRecord,
    power_tag,
    render_record,
    temp_tag,
)

log = logging.getLogger(__name__)


# -- fault catalogue ------------------------------------------------------


@dataclass(frozen=True)
class SensorBias:
    sensor: str
    offset: float


@dataclass(frozen=True)
class PowerStep:
    zone: int
    from_kw: float
    to_kw: float
    at: float


@dataclass(frozen=True)
class AxialConduction:
    diffusivity: float  # mm²/s

    def __post_init__(self):
        if not self.diffusivity >= 0:
            raise InvalidScheduleError("diffusivity must be >= 0")


@dataclass(frozen=True)
class MeasurementNoise:
    sigma: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise InvalidScheduleError("noise sigma must be >= 0")


@dataclass(frozen=True)
class TelemetryLoss:
    drop_prob: float

    def __post_init__(self):
        if not 0 <= self.drop_prob <= 1:
            raise InvalidScheduleError("drop_prob must lie in [0, 1]")


@dataclass(frozen=True)
class UpdateJitter:
    """Override the update period/phase of every tag matching ``tag`` (glob)."""

    tag: str
    period: float
    phase: float = 0.0

    def __post_init__(self):
        if not self.period > 0:
            raise InvalidScheduleError("update period must be > 0")


FAULT_TYPES = {
    "sensor_bias": SensorBias,
    "power_step": PowerStep,
    "axial_conduction": AxialConduction,
    "measurement_noise": MeasurementNoise,
    "telemetry_loss": TelemetryLoss,
    "update_jitter": UpdateJitter,
}


def faults_from_list(items):
    """Build fault objects from ``[{"type": "sensor_bias", ...}, ...]``."""
    out = []
    for item in items or ():
        item = dict(item)
        kind = item.pop("type", None)
        cls = FAULT_TYPES.get(kind)
        if cls is None:
            raise InvalidScheduleError(f"unknown fault type {kind!r}")
        if cls is PowerStep:
            item.setdefault("from_kw", item.pop("from", math.nan))
            item.setdefault("to_kw", item.pop("to", math.nan))
        try:
            out.append(cls(**item))
        except TypeError as exc:
            raise InvalidScheduleError(f"bad {kind} fault: {exc}") from None
    return out


# -- scenario -------------------------------------------------------------


@dataclass(frozen=True)
class ModeChange:
    at: float
    holding: bool
    speed: float
    reversal_interval: float = 10.0


@dataclass(frozen=True)
class PowerChange:
    at: float
    powers: tuple


DEFAULT_PERIODS = {"pos": 1.0, "temp": 1.0, "power": 5.0, "speed": 5.0, "holding": 5.0}


@dataclass(frozen=True)
class EmitSchedule:
    """Run length, per-group update periods (s) and the scenario timeline.

    Mode and power changes take effect at their ``at`` time and are also
    published at that instant, in addition to the periodic updates.
    """

    duration: float
    head_start: float = 0.0
    modes: tuple = (ModeChange(0.0, False, 10.0),)
    powers: tuple = (PowerChange(0.0, (500.0, 500.0, 400.0, 400.0, 300.0)),)
    periods: dict = field(default_factory=lambda: dict(DEFAULT_PERIODS))

    def __post_init__(self):
        if not self.duration > 0:
            raise InvalidScheduleError("duration must be > 0")
        for k, v in self.periods.items():
            if k not in DEFAULT_PERIODS:
                raise InvalidScheduleError(f"unknown tag group {k!r}")
            if not v > 0:
                raise InvalidScheduleError(f"period for {k} must be > 0")
        if not self.modes or self.modes[0].at != 0:
            raise InvalidScheduleError("the mode programme must start at t=0")
        if not self.powers or self.powers[0].at != 0:
            raise InvalidScheduleError("the power programme must start at t=0")


def schedule_from_dict(d):
    d = dict(d)
    try:
        modes = tuple(
            ModeChange(
                float(m["at"]),
                m.get("mode", "normal") == "holding",
                float(m["speed"]),
                float(m.get("reversal_interval", 10.0)),
            )
            for m in d.pop("modes", [{"at": 0, "mode": "normal", "speed": 10.0}])
        )
        powers = tuple(PowerChange(float(p["at"]), tuple(p["powers"])) for p in d.pop("powers", []))
        periods = dict(DEFAULT_PERIODS)
        periods.update(d.pop("periods", {}))
        kwargs = {"modes": modes, "periods": periods}
        if powers:
            kwargs["powers"] = powers
        return EmitSchedule(duration=float(d.pop("duration")), head_start=float(d.pop("head_start", 0.0)), **kwargs)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidScheduleError(f"bad scenario: {exc}") from None


# -- emulator -------------------------------------------------------------


def _steps(value, dt, what):
    n = round(value / dt)
    if n < 0 or abs(n * dt - value) > 1e-9 * max(1.0, abs(value)):
        raise InvalidScheduleError(f"{what} = {value} is not a whole number of {dt} s steps")
    return int(n)


@dataclass
class Emission:
    """Result of one emulator run."""

    records: list
    truth: list
    dropped: int = 0

    def lines(self):
        return [render_record(r) for r in self.records]

    def write(self, fh):
        for r in self.records:
            fh.write(render_record(r))
            fh.write("\n")
        return len(self.records)


def ground_truth_log(emission):
    """Per-step true state: ``(t, head, back, {sensor: true °C})`` tuples."""
    return emission.truth


class PlantEmulator:
    """Reference plant driven by a scenario, with optional fault injection.

    Parameters
    ----------
    twin : TwinConfig
        Geometry, thermal constants and bar train (shared with the twin).
    schedule : EmitSchedule
    faults : list of fault objects
    seed : int
        Seeds every random draw (noise and record loss).
    log_truth : bool
        Keep the per-step ground-truth log.
    """

    def __init__(self, twin, schedule, faults=(), seed=0, log_truth=False):
        self.twin = twin
        self.schedule = schedule
        self.faults = list(faults)
        self.seed = seed
        self.log_truth = log_truth
        self._validate()

    def _validate(self):
        dt = self.twin.dt
        sched = self.schedule
        layout = self.twin.layout
        keys = set(layout.sensor_keys)
        for f in self.faults:
            if isinstance(f, SensorBias) and f.sensor not in keys:
                raise InvalidScheduleError(f"unknown sensor {f.sensor!r} in SensorBias")
            if isinstance(f, PowerStep):
                if not 1 <= f.zone <= layout.zones:
                    raise InvalidScheduleError(f"PowerStep zone {f.zone} out of range")
                if not f.to_kw >= 0:
                    raise InvalidScheduleError("PowerStep target power must be >= 0")
                _steps(f.at, dt, "PowerStep.at")
            if isinstance(f, UpdateJitter):
                _steps(f.period, dt, "UpdateJitter.period")
                _steps(f.phase, dt, "UpdateJitter.phase")
            if isinstance(f, AxialConduction):
                for spec in self.twin.bars:
                    r = f.diffusivity * dt / spec.segment_length**2
                    if r >= 0.5:
                        raise InvalidScheduleError(f"axial conduction unstable: alpha*dt/l^2 = {r:.3g} >= 0.5")
        _steps(sched.duration, dt, "duration")
        for p in sched.periods.values():
            _steps(p, dt, "update period")
        for m in sched.modes:
            _steps(m.at, dt, "mode change time")
            if m.holding:
                _steps(m.reversal_interval, dt, "reversal_interval")
                if not m.speed > 0:
                    raise InvalidScheduleError("holding speed must be > 0")
            elif not m.speed >= 0:
                raise InvalidScheduleError("normal speed must be >= 0")
        for p in sched.powers:
            _steps(p.at, dt, "power change time")
            if len(p.powers) != layout.zones or any(not (x >= 0) for x in p.powers):
                raise InvalidScheduleError(f"power change at {p.at} needs {layout.zones} non-negative values")

    # -- tag timing ----------------------------------------------------

    def _tag_timing(self):
        """``[(tag, group, period_steps, phase_steps)]`` in publication order."""
        layout = self.twin.layout
        dt = self.twin.dt
        groups = (
            [(power_tag(z), "power") for z in range(1, layout.zones + 1)]
            + [(SPEED_TAG, "speed"), (HOLDING_TAG, "holding")]
            + [(temp_tag(s.zone, s.index_in_zone), "temp") for s in layout.sensors]
            + [(BACK_TAG, "pos"), (HEAD_TAG, "pos")]
        )
        out = []
        for tag, group in groups:
            period, phase = self.schedule.periods[group], 0.0
            name = tag.render()
            for f in self.faults:
                if isinstance(f, UpdateJitter) and (fnmatch.fnmatchcase(name, f.tag) or f.tag == group):
                    period, phase = f.period, f.phase
            out.append((tag, group, _steps(period, dt, "period"), _steps(phase, dt, "phase")))
        return out

    # -- main loop -----------------------------------------------------

    def emit(self):
        twin = self.twin
        layout = twin.layout
        dt = twin.dt
        amb = float(layout.ambient_temp)
        amb_k4 = (amb + KELVIN) ** 4
        eps_sigma = twin.thermal.emissivity * STEFAN_BOLTZMANN
        rng = np.random.default_rng(self.seed)

        n_total = _steps(self.schedule.duration, dt, "duration")
        mode_at = {_steps(m.at, dt, "mode"): m for m in self.schedule.modes}
        power_at = {_steps(p.at, dt, "power"): np.array(p.powers, float) for p in self.schedule.powers}
        steps_at = {}
        for f in self.faults:
            if isinstance(f, PowerStep):
                steps_at.setdefault(_steps(f.at, dt, "PowerStep"), []).append(f)
        conduction = sum(f.diffusivity for f in self.faults if isinstance(f, AxialConduction))
        noise = math.sqrt(sum(f.sigma**2 for f in self.faults if isinstance(f, MeasurementNoise)))
        drop = 1.0 - math.prod(1.0 - f.drop_prob for f in self.faults if isinstance(f, TelemetryLoss))
        bias = {}
        for f in self.faults:
            if isinstance(f, SensorBias):
                bias[f.sensor] = bias.get(f.sensor, 0.0) + f.offset

        # bar train, front first
        specs = list(twin.bars)
        heads = []
        h = self.schedule.head_start
        for s in specs:
            heads.append(h)
            h -= s.length
        heads = np.array(heads, float)
        temps = [np.full(s.n_segments, amb) for s in specs]
        alive = [True] * len(specs)
        settled = [False] * len(specs)

        coil_start = np.array([c.start_pos for c in layout.coils])
        coil_end = np.array([c.end_pos for c in layout.coils])
        coil_zone = np.array([c.zone - 1 for c in layout.coils])
        eff = twin.thermal.efficiency_for(layout.zones)
        sensor_keys = layout.sensor_keys
        sensor_x = layout.sensor_positions
        sensor_index = {key: j for j, key in enumerate(sensor_keys)}
        sensor_val = np.full(len(sensor_keys), amb)
        bias_vec = np.array([bias.get(k, 0.0) for k in sensor_keys])

        timing = self._tag_timing()
        steps = np.arange(n_total + 1)
        any_due = np.zeros(n_total + 1, dtype=bool)
        for _, _, period, phase in timing:
            any_due |= (steps >= phase) & ((steps - phase) % period == 0)
        records = []
        truth = []
        dropped = 0

        powers = power_at[0].copy()
        mode = mode_at[0]
        direction = 1
        leg_steps = 0
        steps_in_leg = 0
        velocity = 0.0
        last_published = {}

        def publish(t, tag, value):
            nonlocal dropped
            if drop > 0 and rng.random() < drop:
                dropped += 1
                return
            records.append(TelemetryRecord(t, tag, value))

        for k in range(n_total + 1):
            t = k * dt
            changed = set()
            if k in mode_at:
                mode = mode_at[k]
                direction = 1
                steps_in_leg = 0
                leg_steps = _steps(mode.reversal_interval, dt, "reversal") if mode.holding else 0
                changed.update(("speed", "holding"))
            if k in power_at:
                powers = power_at[k].copy()
                changed.add("power")
            for f in steps_at.get(k, ()):
                if not math.isnan(f.from_kw) and powers[f.zone - 1] != f.from_kw:
                    log.warning("PowerStep zone %d: expected %s kW, line is at %s kW", f.zone, f.from_kw, powers[f.zone - 1])
                powers[f.zone - 1] = f.to_kw
                changed.add("power")
            if mode.holding and leg_steps and steps_in_leg == leg_steps:
                direction = -direction
                steps_in_leg = 0
                changed.add("speed")
            velocity = mode.speed * direction

            # publish the state at time t
            for tag, group, period, phase in timing if (any_due[k] or changed) else ():
                due = k >= phase and (k - phase) % period == 0
                if group == "power":
                    value = float(powers[tag.zone - 1])
                elif group == "speed":
                    value = float(velocity)
                elif group == "holding":
                    value = 1.0 if mode.holding else 0.0
                elif group == "temp":
                    if not due:
                        continue
                    j = sensor_index[tag.sensor_key]
                    value = float(sensor_val[j] + bias_vec[j])
                    if noise > 0:
                        value += float(rng.normal(0.0, noise))
                    publish(t, tag, value)
                    continue
                else:
                    live = [i for i, a in enumerate(alive) if a]
                    if not live:
                        continue
                    if tag is HEAD_TAG:
                        value = float(heads[live[0]])
                    else:
                        value = float(heads[live[-1]] - specs[live[-1]].length)
                if due or (group in changed and last_published.get(tag) != value):
                    publish(t, tag, value)
                    last_published[tag] = value
            if self.log_truth:
                live = [i for i, a in enumerate(alive) if a]
                truth.append(
                    (
                        t,
                        float(heads[live[0]]) if live else math.nan,
                        float(heads[live[-1]] - specs[live[-1]].length) if live else math.nan,
                        dict(zip(sensor_keys, sensor_val.tolist())),
                    )
                )
            if k == n_total:
                break

            # one physics step over [t, t + dt]
            heads += velocity * dt
            if mode.holding:
                steps_in_leg += 1
            coil_watts = eff[coil_zone] * powers[coil_zone] * 1000.0 / layout.coils_per_zone
            coil_len = coil_end - coil_start
            first_coil, last_coil = coil_start[0], coil_end[-1]
            for i, spec in enumerate(specs):
                if not alive[i]:
                    continue
                tt = temps[i]
                outside = heads[i] <= first_coil or heads[i] - spec.length >= last_coil
                if outside and conduction == 0:
                    if settled[i]:
                        continue
                    if tt.min() == amb == tt.max():
                        settled[i] = True
                        continue
                settled[i] = False
                seg = spec.segment_length
                mc = spec.segment_mass * spec.specific_heat
                if not outside:
                    lo = heads[i] - spec.length + seg * np.arange(spec.n_segments)
                    hi = lo + seg
                    # only segments that reach into the coil span can pick up power
                    inside = np.flatnonzero((hi > first_coil) & (lo < last_coil))
                    lo, hi = lo[inside], hi[inside]
                    overlap = np.minimum(hi[None, :], coil_end[:, None]) - np.maximum(lo[None, :], coil_start[:, None])
                    overlap = np.clip(overlap, 0.0, None)
                    tt[inside] += (coil_watts / coil_len) @ overlap * dt / mc
                if conduction > 0 and tt.shape[0] > 1:
                    padded = np.concatenate((tt[:1], tt, tt[-1:]))
                    tt += conduction * dt / seg**2 * (padded[2:] - 2 * tt + padded[:-2])
                if eps_sigma > 0:
                    loss = eps_sigma * spec.segment_area * ((tt + KELVIN) ** 4 - amb_k4) * dt / mc
                    new = tt - loss
                    tt[:] = np.where(tt >= amb, np.maximum(new, amb), np.minimum(new, amb))
            # pyrometers: tail-side bar and segment win on shared boundaries
            head_list = heads.tolist()
            rear_first = [i for i in range(len(specs) - 1, -1, -1) if alive[i]]
            for j, x in enumerate(sensor_x.tolist()):
                for i in rear_first:
                    tail = head_list[i] - specs[i].length
                    if tail <= x <= head_list[i]:
                        idx = min(max(math.ceil((x - tail) / specs[i].segment_length) - 1, 0), specs[i].n_segments - 1)
                        sensor_val[j] = temps[i][idx]
                        break
            for i, spec in enumerate(specs):
                if alive[i] and heads[i] - spec.length > layout.line_end:
                    alive[i] = False
        return Emission(records, truth, dropped)


def emit(twin, schedule, faults=(), seed=0, log_truth=False):
    """Run the emulator once and return its :class:`Emission`."""
    return PlantEmulator(twin, schedule, faults, seed, log_truth).emit()
