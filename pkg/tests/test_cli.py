import base64
import json
import subprocess
import sys
from pathlib import Path

from spacehsm.cli import main

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def test_run_writes_outputs(tmp_path, capsys):
    ev, met, logs = tmp_path / "ev.ndjson", tmp_path / "m.json", tmp_path / "log.ndjson"
    rc = main(["run", str(SCENARIOS / "throughput.yaml"), "--events-out", str(ev),
               "--metrics-out", str(met), "--log-export", str(logs)])
    assert rc == 0
    metrics = json.loads(met.read_text())
    assert metrics["certs_logged"] == 29
    assert all(json.loads(line)["kind"] for line in ev.read_text().splitlines())
    assert json.loads(logs.read_text().splitlines()[0])["kind"] == "header"


def test_run_prints_metrics_and_seed_override(capsys):
    assert main(["run", str(SCENARIOS / "forge_suppress.yaml"), "--seed", "5"]) == 0
    assert json.loads(capsys.readouterr().out)["alarms"] == 1


def test_config_error_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("duration_s: -5\n")
    assert main(["run", str(bad)]) == 1
    assert "duration_s" in capsys.readouterr().err
    assert main(["capacity", str(tmp_path / "missing.yaml")]) == 1


def test_capacity(capsys):
    assert main(["capacity", str(SCENARIOS / "honest.yaml")]) == 0
    assert capsys.readouterr().out.strip() == "29"


def test_verify_against_export(tmp_path, capsys):
    logs = tmp_path / "log.ndjson"
    assert main(["run", str(SCENARIOS / "key_theft_reset.yaml"), "--log-export", str(logs),
                 "--metrics-out", str(tmp_path / "m.json")]) == 0
    entry = json.loads(logs.read_text().splitlines()[1])
    cert = tmp_path / "cert.b64"
    cert.write_text(entry["cert"] + "\n")
    capsys.readouterr()
    assert main(["verify", str(logs), str(cert)]) == 0
    assert "frozen" in capsys.readouterr().out  # pre-reset certificate
    raw = bytearray(base64.b64decode(entry["cert"]))
    raw[40] ^= 1
    cert.write_text(base64.b64encode(bytes(raw)).decode())
    assert main(["verify", str(logs), str(cert)]) == 2
    cert.write_text("not base64!!")
    assert main(["verify", str(logs), str(cert)]) == 2


def test_invariant_violation_exit_2(tmp_path, monkeypatch):
    from spacehsm import sim

    original = sim.Engine._check_invariants

    def broken(self):
        original(self)
        self.metrics.invariant_violations.append("synthetic")

    monkeypatch.setattr(sim.Engine, "_check_invariants", broken)
    assert main(["run", str(SCENARIOS / "throughput.yaml"), "--metrics-out", str(tmp_path / "m")]) == 2


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "spacehsm.cli", "capacity",
                          str(SCENARIOS / "throughput.yaml")], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == "29"
