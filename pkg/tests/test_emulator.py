import io
import math
from collections import Counter

import numpy as np
import pytest

from dttest.config import TwinConfig
from dttest.emulator import (
    AxialConduction,
    EmitSchedule,
    MeasurementNoise,
    ModeChange,
    PowerChange,
    PowerStep,
    SensorBias,
    TelemetryLoss,
    UpdateJitter,
    emit,
    faults_from_list,
    ground_truth_log,
    schedule_from_dict,
)
from dttest.exceptions import InvalidScheduleError
from dttest.furnace import BarSpec
from dttest.snapshot import SnapshotAssembler
from dttest.telemetry import RecordSource

TWIN = TwinConfig(bars=(BarSpec(10000.0, 60.0),))
COVERING = EmitSchedule(duration=60.0, head_start=10000.0)


def temps_by_sensor(emission, key):
    tag = "temp." + key
    return [(r.ts, r.value) for r in emission.records if r.tag.render() == tag]


def truth_at(emission, key):
    return {round(t, 6): vals[key] for t, _, _, vals in ground_truth_log(emission)}


def test_tag_counts_follow_periods():
    em = emit(TWIN, COVERING)
    counts = Counter(r.tag.render() for r in em.records)
    assert counts["temp.z1.s1"] == 61
    assert counts["pos.head"] == 61
    assert counts["power.z1"] == 13
    assert counts["speed"] == 13
    src = RecordSource(em.lines(), TWIN.layout)
    snaps = SnapshotAssembler.for_layout(TWIN.layout).transform(src)
    assert src.error_count == 0
    assert len(snaps) == 61


def test_publication_order_within_a_tick():
    em = emit(TWIN, COVERING)
    first = [r.tag.render() for r in em.records if r.ts == 0.0]
    assert first[:5] == ["power.z1", "power.z2", "power.z3", "power.z4", "power.z5"]
    assert first[-2:] == ["pos.back", "pos.head"]


def test_same_seed_same_bytes():
    faults = [MeasurementNoise(0.5), TelemetryLoss(0.1)]
    a, b = io.StringIO(), io.StringIO()
    emit(TWIN, COVERING, faults, seed=7).write(a)
    emit(TWIN, COVERING, faults, seed=7).write(b)
    assert a.getvalue() == b.getvalue()
    c = io.StringIO()
    emit(TWIN, COVERING, faults, seed=8).write(c)
    assert c.getvalue() != a.getvalue()


def test_no_faults_equals_truth():
    em = emit(TWIN, COVERING, log_truth=True)
    truth = truth_at(em, "z2.s2")
    for ts, value in temps_by_sensor(em, "z2.s2"):
        assert value == truth[round(ts, 6)]


def test_bias_is_exact_offset():
    em = emit(TWIN, COVERING, [SensorBias("z2.s2", 20.0)], log_truth=True)
    truth = truth_at(em, "z2.s2")
    for ts, value in temps_by_sensor(em, "z2.s2"):
        assert value - truth[round(ts, 6)] == pytest.approx(20.0, abs=1e-9)
    other = truth_at(em, "z2.s3")
    assert all(v == other[round(t, 6)] for t, v in temps_by_sensor(em, "z2.s3"))


def test_noise_mean_within_clt_bound():
    sigma = 2.0
    sched = EmitSchedule(duration=800.0, head_start=10000.0, modes=(ModeChange(0.0, False, 0.0),))
    em = emit(TWIN, sched, [MeasurementNoise(sigma)], seed=5, log_truth=True)
    truth = {round(t, 6): vals for t, _, _, vals in ground_truth_log(em)}
    diffs = np.array(
        [r.value - truth[round(r.ts, 6)][r.tag.sensor_key] for r in em.records if r.tag.kind == "temp"]
    )
    assert diffs.size >= 10_000
    assert abs(diffs.mean()) <= 3 * sigma / math.sqrt(diffs.size)


def test_loss_only_drops():
    clean = emit(TWIN, COVERING, seed=3)
    lossy = emit(TWIN, COVERING, [TelemetryLoss(0.3)], seed=3)
    kept = set(lossy.lines())
    assert kept <= set(clean.lines())
    assert len(kept) + lossy.dropped == len(clean.records)
    assert 0.2 < lossy.dropped / len(clean.records) < 0.4


def test_power_step_changes_published_power():
    em = emit(TWIN, COVERING, [PowerStep(3, 400.0, 600.0, 30.5)])
    z3 = [(r.ts, r.value) for r in em.records if r.tag.render() == "power.z3"]
    assert (30.5, 600.0) in z3
    assert all(v == 400.0 for t, v in z3 if t < 30.5)


def test_mode_change_published_immediately():
    sched = EmitSchedule(
        duration=40.0,
        head_start=10000.0,
        modes=(ModeChange(0.0, False, 10.0), ModeChange(12.3, True, 5.0, 10.0)),
    )
    em = emit(TWIN, sched)
    speeds = [(r.ts, r.value) for r in em.records if r.tag.render() == "speed"]
    assert (12.3, 5.0) in speeds
    assert (22.3, -5.0) in speeds


def test_holding_triangle_wave():
    sched = EmitSchedule(duration=40.0, head_start=10000.0, modes=(ModeChange(0.0, True, 5.0, 10.0),))
    em = emit(TWIN, sched, log_truth=True)
    heads = {round(t, 6): h for t, h, _, _ in ground_truth_log(em)}
    assert heads[10.0] == pytest.approx(10050.0)
    assert heads[20.0] == pytest.approx(10000.0, abs=1e-9)
    assert heads[40.0] == pytest.approx(10000.0, abs=1e-9)


def test_conduction_smooths_profile():
    plain = emit(TWIN, COVERING, log_truth=True)
    smooth = emit(TWIN, COVERING, [AxialConduction(50.0)], log_truth=True)
    a = truth_at(plain, "z1.s1")[60.0]
    b = truth_at(smooth, "z1.s1")[60.0]
    assert a != b


def test_conduction_stability_checked():
    with pytest.raises(InvalidScheduleError):
        emit(TWIN, COVERING, [AxialConduction(1e5)])


def test_update_jitter_changes_period():
    em = emit(TWIN, COVERING, [UpdateJitter("temp.z1.*", 2.0, 1.0)])
    stamps = [t for t, _ in temps_by_sensor(em, "z1.s1")]
    assert stamps[:3] == [1.0, 3.0, 5.0]
    assert len(temps_by_sensor(em, "z2.s1")) == 61


def test_schedule_validation():
    with pytest.raises(InvalidScheduleError):
        EmitSchedule(duration=0.0)
    with pytest.raises(InvalidScheduleError):
        emit(TWIN, EmitSchedule(duration=10.05))
    with pytest.raises(InvalidScheduleError):
        emit(TWIN, COVERING, [SensorBias("z9.s9", 1.0)])
    with pytest.raises(InvalidScheduleError):
        EmitSchedule(duration=10.0, powers=(PowerChange(1.0, (0,) * 5),))


def test_faults_and_schedule_from_dicts():
    faults = faults_from_list(
        [
            {"type": "sensor_bias", "sensor": "z2.s2", "offset": 20},
            {"type": "power_step", "zone": 3, "from": 400, "to": 600, "at": 150.5},
        ]
    )
    assert faults == [SensorBias("z2.s2", 20), PowerStep(3, 400, 600, 150.5)]
    with pytest.raises(InvalidScheduleError):
        faults_from_list([{"type": "gremlins"}])
    sched = schedule_from_dict(
        {
            "duration": 30,
            "modes": [{"at": 0, "mode": "holding", "speed": 5, "reversal_interval": 10}],
            "powers": [{"at": 0, "powers": [1, 2, 3, 4, 5]}],
            "periods": {"temp": 2},
        }
    )
    assert sched.modes[0].holding
    assert sched.periods["temp"] == 2
    assert sched.powers[0].powers == (1, 2, 3, 4, 5)
