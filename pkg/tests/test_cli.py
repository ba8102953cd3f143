import csv
import json
import socket
import threading

import pytest

from dttest.cli import main
from dttest.oracle import Verdict

SCENARIO = {
    "bars": [{"length": 10000, "diameter": 60}],
    "scenario": {
        "duration": 30,
        "head_start": 10000,
        "modes": [{"at": 0, "mode": "normal", "speed": 10}, {"at": 15, "mode": "holding", "speed": 5}],
    },
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SCENARIO))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_simulate_row_count(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--duration", "60", "--out", str(out)]) == 0
    rows = read_csv(out / "sensors.csv")
    assert len(rows) == 601
    assert rows[0][:3] == ["time", "head", "z1.s1"]
    assert len(rows[0]) == 17
    assert read_csv(out / "exits.csv")[0] == ["time", "head_temp"]


def test_simulate_deterministic(tmp_path):
    args = ["simulate", "--duration", "5", "--mode", "holding:5:2", "--head", "5000"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "sensors.csv").read_bytes() == (tmp_path / "b" / "sensors.csv").read_bytes()


def test_simulate_zero_power_cools(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--duration", "5", "--powers", "0", "--mode", "normal:0",
                 "--head", "9000", "--out", str(out)]) == 0
    rows = read_csv(out / "sensors.csv")[1:]
    for col in range(2, len(rows[0])):
        values = [float(r[col]) for r in rows]
        assert all(b <= a for a, b in zip(values, values[1:]))


def test_simulate_bad_mode(tmp_path):
    assert main(["simulate", "--duration", "5", "--mode", "warp:9", "--out", str(tmp_path)]) == 2


def test_emit_deterministic_and_parseable(tmp_path, config):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["emit", "--config", config, "--seed", "7", "--out", str(a)]) == 0
    assert main(["emit", "--config", config, "--seed", "7", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    out = tmp_path / "run"
    assert main(["test", "--config", config, "--source", f"file:{a}", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["parse_errors"] == 0
    assert summary["pass_rate"] == 1.0
    assert summary["partial"] is False


def test_emit_to_stdout(capsys, config):
    assert main(["emit", "--config", config, "--duration", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert json.loads(lines[0])["tag"] == "power.z1"


def test_bias_run_fails_and_names_sensor(tmp_path, config):
    faults = tmp_path / "faults.json"
    faults.write_text(json.dumps([{"type": "sensor_bias", "sensor": "z2.s2", "offset": 20}]))
    tele = tmp_path / "t.jsonl"
    assert main(["emit", "--config", config, "--faults", str(faults), "--out", str(tele)]) == 0
    out = tmp_path / "run"
    assert main(["test", "--config", config, "--source", f"file:{tele}", "--out", str(out)]) == 1
    summary = json.loads((out / "summary.json").read_text())
    assert "z2.s2" in summary["failing_fields"]
    verdicts = [json.loads(line) for line in (out / "verdicts.jsonl").read_text().splitlines()]
    assert len(verdicts) == 30


def test_missing_source_exits_2(tmp_path):
    assert main(["test", "--source", f"file:{tmp_path}/nope.jsonl", "--out", str(tmp_path / "o")]) == 2


def test_bad_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["emit", "--config", str(bad), "--duration", "5"]) == 2


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_serve_and_consume_over_tcp(tmp_path, config):
    port = _free_port()
    server = threading.Thread(target=main, args=(["emit", "--config", config, "--serve", f"tcp:{port}"],))
    server.start()
    out = tmp_path / "run"
    rc = main(["test", "--config", config, "--source", f"tcp:127.0.0.1:{port}", "--out", str(out)])
    server.join(timeout=10)
    assert rc == 0
    assert json.loads((out / "summary.json").read_text())["passed"] == 30


def test_report_outputs(tmp_path, capsys):
    log = tmp_path / "verdicts.jsonl"
    verdicts = [
        Verdict((0.0, 1.0), 1.0, 0.0, {"z1.s1": -2.0, "z1.s2": 6.0}, False, ("z1.s2",)),
        Verdict((1.0, 2.0), 1.0, 0.1, {"z1.s1": 0.5, "z1.s2": 1.0}, True, ()),
        Verdict((2.0, 3.0), skipped="gap-too-large"),
    ]
    log.write_text("".join(v.to_json() + "\n" for v in verdicts))
    out = tmp_path / "rep"
    assert main(["report", str(log), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["position.csv", "summary.json", "z1.s1.csv", "z1.s2.csv"]
    summary = json.loads(capsys.readouterr().out)
    assert summary["pass_rate"] == 0.5
    assert summary["skipped"] == 1
    assert summary["fields"]["z1.s2"]["prob_between_-4_5"] == 0.5


def test_report_rejects_corrupt_log(tmp_path):
    log = tmp_path / "v.jsonl"
    log.write_text("garbage\n")
    assert main(["report", str(log), "--out", str(tmp_path / "r")]) == 2
