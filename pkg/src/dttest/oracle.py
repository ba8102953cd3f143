"""Snapshot-pair test oracle for the twin.

For each consecutive pair of snapshots the twin is placed in the state of
the first one, run for the time the bar needed to travel between the two
head positions, and its head position and pyrometer readings are compared
with the second snapshot.  Errors are simulated minus observed.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_snapshots
from .config import OracleConfig, TwinConfig
from .exceptions import TwinTestError
from .furnace import mode_from_snapshot, seed_from_snapshot
from .snapshot import Snapshot, SnapshotAssembler

log = logging.getLogger(__name__)

MOTION_INCONSISTENT = "motion-inconsistent"
GAP_TOO_LARGE = "gap-too-large"
CLOCK_MISMATCH = "clock-mismatch"
SEED_FAILED = "seed-failed"
NON_MONOTONE_TS = "non-monotone-ts"
POSITION_INCOHERENT = "position-incoherent"

POSITION_FIELD = "position"


@dataclass
class Verdict:
    pair_ts: tuple
    t_simulation: float = math.nan
    position_error: float = math.nan
    sensor_errors: dict = field(default_factory=dict)
    passed: bool = False
    failing_fields: tuple = ()
    skipped: str | None = None
    holding: bool = False

    def field_errors(self):
        """``(field, error)`` pairs for every evaluated field."""
        out = [(POSITION_FIELD, self.position_error)]
        out.extend(self.sensor_errors.items())
        return out

    def to_dict(self):
        d = {
            "ts1": self.pair_ts[0],
            "ts2": self.pair_ts[1],
            "t_sim": None if math.isnan(self.t_simulation) else self.t_simulation,
            "pos_err": None if math.isnan(self.position_error) else self.position_error,
        }
        for key, err in self.sensor_errors.items():
            d[f"err.temp.{key}"] = err
        d["passed"] = self.passed
        d["failing"] = list(self.failing_fields)
        d["skipped"] = self.skipped
        d["holding"] = int(self.holding)
        return d

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        sensor_errors = {k[len("err.temp."):]: float(v) for k, v in d.items() if k.startswith("err.temp.")}
        t_sim = d.get("t_sim")
        pos = d.get("pos_err")
        return cls(
            pair_ts=(float(d["ts1"]), float(d["ts2"])),
            t_simulation=math.nan if t_sim is None else float(t_sim),
            position_error=math.nan if pos is None else float(pos),
            sensor_errors=sensor_errors,
            passed=bool(d["passed"]),
            failing_fields=tuple(d.get("failing", ())),
            skipped=d.get("skipped"),
            holding=bool(d.get("holding", 0)),
        )


def simulation_time(snap1, snap2, config=None):
    """Seconds the twin must run to carry the head from ``snap1`` to ``snap2``.

    Returns ``(t, None)`` or ``(nan, skip_reason)``.
    """
    config = config or OracleConfig()
    dts = snap2.ts - snap1.ts
    if dts < 0:
        return math.nan, NON_MONOTONE_TS
    if abs(snap1.speed) >= config.min_speed and snap1.speed != 0:
        t = (snap2.head - snap1.head) / snap1.speed
        if t <= 0:
            return math.nan, MOTION_INCONSISTENT
    else:
        t = dts
    if t > config.max_gap:
        return math.nan, GAP_TOO_LARGE
    if config.max_time_skew is not None and abs(t - dts) > config.max_time_skew:
        return math.nan, CLOCK_MISMATCH
    return t, None


def _run_for(sim, t, dt_step):
    n = int(math.floor(t / dt_step + 1e-9))
    for _ in range(n):
        sim.advance(dt_step)
    residual = t - n * dt_step
    if residual > 1e-9 * dt_step:
        sim.advance(residual)


def _anchor(sim, twin, snap, config):
    """Re-place a carried twin at ``snap``'s position, powers and motion.

    Returns False when the twin's bar train no longer matches the snapshot.
    """
    if not sim.bars:
        return False
    carried = sum(bar.spec.length for bar in sim.bars)
    if abs((snap.head - snap.back) - carried) > config.train_tolerance:
        return False
    shift = snap.head - sim.bars[0].head_pos
    for bar in sim.bars:
        bar.head_pos += shift
    if tuple(sim.zone_powers.tolist()) != snap.powers:
        sim.set_zone_powers(snap.powers)
    sim.set_mode(mode_from_snapshot(snap.speed, snap.holding, twin.reversal_interval))
    sim.clock = snap.ts
    return True


def _remaining_bars(twin, snap, config):
    """Rear part of the configured train that matches the snapshot span.

    Bars leave the line front first, so once some have exited the span
    ``head - back`` matches a suffix of the train.
    """
    span = snap.head - snap.back
    for k in range(len(twin.bars)):
        rest = twin.bars[k:]
        if abs(span - sum(b.length for b in rest)) <= config.train_tolerance:
            return rest
    return None


def _seed(twin, snap, config):
    return seed_from_snapshot(
        twin.layout,
        twin.thermal,
        _remaining_bars(twin, snap, config) or twin.bars,
        snap,
        reversal_interval=twin.reversal_interval,
        dt=config.dt_step,
        position_tolerance=config.train_tolerance,
        record_history=False,
    )


def compare(sim, snap2, config, pair_ts, t_sim, holding=False):
    """Build the verdict for a twin that has been run up to ``snap2``."""
    pos_err = sim.head_position() - snap2.head
    keys = sim.layout.sensor_keys
    observed = dict(zip(keys, snap2.temps))
    live = sim.covered_sensors()
    ages = snap2.reading_ages()
    if config.max_reading_age is not None and ages is not None:
        fresh = {k for k, age in zip(keys, ages) if age <= config.max_reading_age + 1e-9}
        live = [k for k in live if k in fresh]
    simulated = sim.sensor_values
    sensor_errors = {k: simulated[k] - observed[k] for k in live}
    failing = []
    if not abs(pos_err) <= config.position_tolerance:
        failing.append(POSITION_FIELD)
    failing.extend(k for k, e in sensor_errors.items() if not abs(e) <= config.temp_tolerance)
    return Verdict(
        pair_ts=pair_ts,
        t_simulation=t_sim,
        position_error=pos_err,
        sensor_errors=sensor_errors,
        passed=not failing,
        failing_fields=tuple(failing),
        holding=holding,
    )


def evaluate_pair(snap1, snap2, twin=None, config=None, sim=None):
    """Test the twin on one snapshot pair.

    With ``sim=None`` the twin is seeded from ``snap1``.  A carried
    simulation may be passed instead; it is re-anchored to ``snap1`` and
    advanced in place.  Returns ``(verdict, sim)``; ``sim`` is ``None`` when
    the pair was skipped before the twin could be placed.
    """
    twin = twin or TwinConfig()
    config = config or OracleConfig()
    pair_ts = (snap1.ts, snap2.ts)
    t_sim, skip = simulation_time(snap1, snap2, config)
    coherent1 = _remaining_bars(twin, snap1, config) is not None
    if skip is None and not (coherent1 and _remaining_bars(twin, snap2, config) is not None):
        # head and back come from different updates (lost records)
        skip = POSITION_INCOHERENT
    if sim is not None and not coherent1:
        # positions unusable: keep the carried twin, take only the powers
        sim.set_zone_powers(snap1.powers)
        sim.clock = snap1.ts
    elif sim is None or not _anchor(sim, twin, snap1, config):
        if not coherent1:
            return Verdict(pair_ts, skipped=POSITION_INCOHERENT, holding=snap1.holding), None
        try:
            sim = _seed(twin, snap1, config)
        except TwinTestError as exc:
            log.debug("seed failed at ts=%s: %s", snap1.ts, exc)
            return Verdict(pair_ts, skipped=SEED_FAILED, holding=snap1.holding), None
    if skip is not None:
        # keep a carried twin roughly in step with the line
        dts = snap2.ts - snap1.ts
        if skip != GAP_TOO_LARGE and dts > 0:
            _run_for(sim, dts, config.dt_step)
        return Verdict(pair_ts, skipped=skip, holding=snap1.holding), sim
    _run_for(sim, t_sim, config.dt_step)
    return compare(sim, snap2, config, pair_ts, t_sim, snap1.holding), sim


def snapshot_from_simulation(sim, holding=None):
    """Observe a simulation the way the real line's telemetry would."""
    mode = sim.mode
    speed = getattr(mode, "speed", 0.0) * sim.direction
    if holding is None:
        holding = type(mode).__name__ == "Holding"
    return Snapshot(
        powers=tuple(sim.zone_powers.tolist()),
        temps=tuple(sim.sensor_array().tolist()),
        back=sim.back_position(),
        head=sim.head_position(),
        speed=speed,
        holding=bool(holding),
        ts=sim.clock,
    )


class ConformanceOracle(BaseEstimator):
    """Online conformance test of the twin against a snapshot stream.

    ``fit`` evaluates every consecutive pair of a snapshot sequence and
    keeps the verdicts; ``predict`` returns per-pair labels (1 pass, 0 fail,
    -1 skipped); ``score`` is the pass rate over non-skipped pairs.

    Parameters
    ----------
    twin : TwinConfig
    temp_tolerance, position_tolerance, min_speed, max_gap, dt_step,
    max_time_skew, seeding, train_tolerance, max_reading_age
        See :class:`~dttest.config.OracleConfig`.
    """

    def __init__(
        self,
        twin=None,
        temp_tolerance=5.0,
        position_tolerance=2.0,
        min_speed=0.5,
        max_gap=60.0,
        dt_step=0.1,
        max_time_skew=None,
        seeding="carry",
        train_tolerance=1.0,
        max_reading_age=None,
    ):
        self.twin = twin
        self.temp_tolerance = temp_tolerance
        self.position_tolerance = position_tolerance
        self.min_speed = min_speed
        self.max_gap = max_gap
        self.dt_step = dt_step
        self.max_time_skew = max_time_skew
        self.seeding = seeding
        self.train_tolerance = train_tolerance
        self.max_reading_age = max_reading_age

    @classmethod
    def from_configs(cls, twin, config):
        return cls(twin=twin, **config.__dict__)

    @property
    def config(self):
        return OracleConfig(
            temp_tolerance=self.temp_tolerance,
            position_tolerance=self.position_tolerance,
            min_speed=self.min_speed,
            max_gap=self.max_gap,
            dt_step=self.dt_step,
            max_time_skew=self.max_time_skew,
            seeding=self.seeding,
            train_tolerance=self.train_tolerance,
            max_reading_age=self.max_reading_age,
        )

    def _twin(self):
        return self.twin if self.twin is not None else TwinConfig()

    def evaluate_pair(self, snap1, snap2):
        verdict, _ = evaluate_pair(snap1, snap2, self._twin(), self.config)
        return verdict

    def iter_verdicts(self, snapshots, sink=None):
        """Rotate Dataset1/Dataset2 over a snapshot iterable, yielding verdicts."""
        twin, config = self._twin(), self.config
        carry = config.seeding == "carry"
        sim = None
        dataset1 = None
        for dataset2 in snapshots:
            if dataset1 is not None:
                verdict, sim_after = evaluate_pair(dataset1, dataset2, twin, config, sim if carry else None)
                sim = sim_after if carry else None
                if sink is not None:
                    sink(verdict)
                yield verdict
            dataset1 = dataset2

    def fit(self, X, y=None):
        snaps = check_snapshots(X, min_count=1)
        self.config  # validates parameters
        self.verdicts_ = list(self.iter_verdicts(snaps))
        self.summary_ = summarize(self.verdicts_, n_snapshots=len(snaps))
        return self

    def predict(self, X):
        snaps = check_snapshots(X, min_count=1)
        verdicts = list(self.iter_verdicts(snaps))
        return np.array([-1 if v.skipped else int(v.passed) for v in verdicts], dtype=int)

    def score(self, X, y=None):
        labels = self.predict(X)
        evaluated = labels[labels >= 0]
        return float(evaluated.mean()) if evaluated.size else math.nan

    def run_stream(self, records, assembler=None, sink=None):
        """Assemble snapshots from ``records`` and test them as they complete.

        Yields verdicts; ``self.summary_`` is refreshed when the stream ends
        (including when it ends on an I/O error, recorded under
        ``"io_error"``).
        """
        twin = self._twin()
        if assembler is None:
            assembler = SnapshotAssembler.for_layout(twin.layout)
        assembler.reset()
        verdicts_summary = _RunningSummary()
        io_error = None

        def snapshots():
            nonlocal io_error
            try:
                yield from assembler.iter_snapshots(records)
            except OSError as exc:
                io_error = str(exc)
                log.error("telemetry source failed: %s", exc)

        for verdict in self.iter_verdicts(snapshots(), sink=sink):
            verdicts_summary.add(verdict)
            yield verdict
        self.summary_ = verdicts_summary.result(assembler.completed_count_)
        self.summary_["discarded_snapshots"] = assembler.discarded_count_
        if io_error is not None:
            self.summary_["io_error"] = io_error


class _RunningSummary:
    def __init__(self):
        self.passed = self.failed = self.skipped = 0
        self.skip_reasons = {}

    def add(self, v):
        if v.skipped:
            self.skipped += 1
            self.skip_reasons[v.skipped] = self.skip_reasons.get(v.skipped, 0) + 1
        elif v.passed:
            self.passed += 1
        else:
            self.failed += 1

    def result(self, n_snapshots):
        evaluated = self.passed + self.failed
        return {
            "snapshots": n_snapshots,
            "verdicts": evaluated + self.skipped,
            "passed": self.passed,
            "failed": self.failed,
            "skipped": self.skipped,
            "skip_reasons": dict(sorted(self.skip_reasons.items())),
            "pass_rate": self.passed / evaluated if evaluated else None,
            "warm_up_only": n_snapshots < 2,
        }


def summarize(verdicts, n_snapshots):
    s = _RunningSummary()
    for v in verdicts:
        s.add(v)
    return s.result(n_snapshots)
