import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from timeless_semiclassics.cli import main, run, validate_config
from timeless_semiclassics.errors import ValidationError


def _write(tmp_path, doc, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def _doc(command, parameters, model=None):
    doc = {"schema_version": 1, "command": command, "parameters": parameters}
    if model is not None:
        doc["model"] = model
    return doc


RING = {"kind": "ring", "hbar": 1.0}


def test_hartle_run_writes_results_and_manifest(tmp_path):
    cfg = _write(tmp_path, _doc("hartle", {"c": [0.5**0.5, 0.5**0.5], "N": 2, "n": 1}))
    assert main(["hartle", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
    res = json.loads((tmp_path / "out" / "results.json").read_text())
    assert res["result"]["norm_sq"] == pytest.approx(0.125)
    assert res["result"]["saturated"] is True
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert "finished" in manifest and "finished" not in res


def test_empty_command_is_a_validation_error(tmp_path, capsys):
    cfg = _write(tmp_path, {"schema_version": 1, "command": "", "parameters": {}})
    code = main(["run", "--config", cfg, "--out", str(tmp_path)])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "validation"
    assert "command: missing or empty" in err["fields"]
    assert json.loads((tmp_path / "error.json").read_text()) == err


def test_every_bad_field_is_reported():
    doc = _doc("kernel", {"qi": [0.0], "bogus": 1, "extra": 2})
    doc["colour"] = "red"
    doc["schema_version"] = 7
    with pytest.raises(ValidationError) as info:
        validate_config(doc)
    fields = info.value.details["fields"]
    for needle in ("unknown key: colour", "schema_version", "parameters.bogus", "parameters.extra", "parameters.qf", "model"):
        assert any(needle in f for f in fields), needle


def test_mismatched_invocation_is_rejected():
    with pytest.raises(ValidationError):
        validate_config(_doc("hartle", {"c": [1.0], "N": 1}), command="kernel")


def test_unreadable_config(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2


def test_bad_model_parameter(tmp_path):
    cfg = _write(tmp_path, _doc("kernel", {"qi": [0.0], "qf": [1.0]}, {"kind": "ring", "hbar": -1.0}))
    assert main(["kernel", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_interference_scan_table(tmp_path):
    run(_doc("interference-scan", {"n_points": 8}, RING), str(tmp_path))
    with open(tmp_path / "table.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["schema_version", "theta_f", "S1", "S2", "vanvleck1", "vanvleck2", "intensity"]
    assert len(rows) == 9
    at_pi = [r for r in rows[1:] if float(r[1]) == pytest.approx(np.pi)][0]
    assert float(at_pi[-1]) == pytest.approx(4.0, rel=1e-9)


def test_scan_rejects_non_ring_models(tmp_path):
    with pytest.raises(ValidationError):
        run(_doc("interference-scan", {}, {"kind": "plane"}), str(tmp_path))


def test_repeated_runs_are_byte_identical(tmp_path, monkeypatch):
    doc = _doc("interference-scan", {"n_points": 6}, RING)
    run(doc, str(tmp_path / "a"))
    monkeypatch.setenv("TSC_THREADS", "3")
    run(doc, str(tmp_path / "b"))
    for name in ("results.json", "table.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_bad_thread_count(tmp_path, monkeypatch):
    monkeypatch.setenv("TSC_THREADS", "many")
    with pytest.raises(ValidationError):
        run(_doc("interference-scan", {"n_points": 4}, RING), str(tmp_path))


def test_hbar_override(tmp_path):
    doc = _doc("kernel", {"qi": [0.0], "qf": [1.0]}, RING)
    res = run(doc, str(tmp_path), hbar=0.25)
    assert res["model"]["hbar"] == 0.25
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["resolved"]["hbar_override"] == 0.25
    assert manifest["config"]["model"]["hbar"] == 1.0


def test_gravity_geodesic_command(tmp_path):
    doc = _doc("gravity-geodesic", {"g0": np.eye(3).tolist(), "h": (0.3 * np.eye(3)).tolist(), "times": [0.0, 0.5]})
    res = run(doc, str(tmp_path))
    assert res["result"]["max_ode_error"] < 1e-10
    assert (tmp_path / "table.csv").exists()


def test_minimal_pec_command(tmp_path):
    res = run(_doc("minimal-pec", {"start": [0, 0], "end": [3, 4], "epsilon": 1e-6}, {"kind": "plane"}), str(tmp_path))
    assert res["result"]["order"] == 1


def test_records_command_reports_the_certificate(tmp_path):
    model = {"kind": "ring", "hbar": 0.1}
    res = run(_doc("records", {"start": [0.0], "record": [1.5], "end": [3.14159]}, model), str(tmp_path))
    assert res["result"]["certificate"]["contained_in_all"] is False
    assert "factorization" not in res["result"]


def test_runtime_errors_exit_with_three(tmp_path):
    doc = _doc("oracle-compare", {"hbars": [1e-4]}, RING)
    assert main(["run", "--config", _write(tmp_path, doc), "--out", str(tmp_path)]) == 3
    assert json.loads((tmp_path / "error.json").read_text())["error"] == "budget"


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, _doc("hartle", {"c": [1.0], "N": 3}))
    proc = subprocess.run(
        [sys.executable, "-m", "timeless_semiclassics.cli", "run", "--config", cfg, "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads((tmp_path / "results.json").read_text())["result"]["norm_sq"] == 0.0
