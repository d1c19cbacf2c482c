import json
import subprocess
import sys

import pytest

from receptosim.cli import main


def test_run_writes_outputs(tmp_path, capsys):
    assert main(["run", "fig4", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "events_1.log").exists()
    assert "reactions=2" in capsys.readouterr().out


def test_run_uses_environment_default(tmp_path, monkeypatch):
    monkeypatch.setenv("RECEPTOSIM_OUT", str(tmp_path))
    src = tmp_path / "short.toml"
    src.write_text('schema = 1\nname = "short"\nt_end = 3.0\n')
    assert main(["run", str(src)]) == 0
    assert (tmp_path / "short" / "fill.csv").exists()


def test_config_error_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("schema = 1\nt_end = -1.0\n")
    assert main(["run", str(bad)]) == 2
    assert "t_end" in capsys.readouterr().err


def test_runtime_error_exits_3(tmp_path):
    bad = tmp_path / "closed.toml"
    bad.write_text(
        "schema = 1\nt_end = 1.0\n[pump]\nintervals = [[0.0, 1.0, 1e-8]]\n[network]\n"
        'nodes = [{id = 0, position = [0, 0], kind = "inlet"}, {id = 1, position = [1, 0]}]\n'
        "segments = [{id = 0, endpoints = [0, 1], length = 1.0, filled_fraction = 1.0}]\n"
    )
    assert main(["run", str(bad)]) == 3


def test_calibrate_with_targets_file(tmp_path):
    targets = tmp_path / "targets.toml"
    targets.write_text("slope = -0.018\nresolution = 0.3\nT_inf = 0.25\n")
    assert main(["calibrate", "--targets", str(targets), "--out", str(tmp_path / "cal")]) == 0
    report = json.loads((tmp_path / "cal" / "calibration.json").read_text())
    assert report["targets"]["resolution_mm"] == 0.3


def test_calibrate_bad_targets(tmp_path):
    targets = tmp_path / "targets.json"
    targets.write_text('{"slope": "steep"}')
    assert main(["calibrate", "--targets", str(targets), "--out", str(tmp_path)]) == 2
    targets.write_text('{"slope": 0.0}')
    assert main(["calibrate", "--targets", str(targets), "--out", str(tmp_path)]) == 1


def test_validate_filter_and_report(tmp_path, capsys):
    report = tmp_path / "report.json"
    assert main(["validate", "--filter", "AC05", "--report", str(report)]) == 0
    data = json.loads(report.read_text())
    assert [c["id"] for c in data] == ["AC05"]
    assert {"measured", "expected", "tolerance"} <= set(data[0])
    assert "PASS AC05" in capsys.readouterr().out


def test_validate_injected_fault_names_controller_criteria(capsys):
    assert main(["validate", "--filter", "AC0", "--set", "rate_threshold=0"]) == 1
    out = capsys.readouterr().out
    assert "FAIL AC06" in out and "FAIL AC07" in out and "FAIL AC09" in out
    assert "PASS AC05" in out


def test_validate_unknown_prefix():
    assert main(["validate", "--filter", "ZZ"]) == 2


def test_plot_all_series(tmp_path):
    assert main(["run", "fig4", "--out", str(tmp_path)]) == 0
    for which in ("transmittance", "impedance", "events", "fill"):
        assert main(["plot", str(tmp_path), "--which", which]) == 0
        assert (tmp_path / f"plot_{which}.png").stat().st_size > 0


def test_plot_unknown_series_is_argument_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["plot", str(tmp_path), "--which", "spectrum"])
    assert exc.value.code == 2


def test_plot_empty_run(tmp_path):
    src = tmp_path / "empty.toml"
    src.write_text("schema = 1\nt_end = 0.0\n")
    assert main(["run", str(src), "--out", str(tmp_path / "run")]) == 0
    assert main(["plot", str(tmp_path / "run"), "--which", "impedance", "--which", "events"]) == 0
    assert (tmp_path / "run" / "plot_events.png").exists()


def test_console_script_module_entry():
    res = subprocess.run([sys.executable, "-m", "receptosim.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "validate" in res.stdout
