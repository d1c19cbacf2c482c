import copy
import filecmp
import json

import pytest

from receptosim.errors import CalibrationError, ConfigError
from receptosim.scenario import (
    calibrate,
    load_scenario,
    run,
    scenario_from_dict,
    tomllib,
    write_outputs,
)
from receptosim import scenario as scenario_mod
from importlib import resources

BASE = tomllib.loads((resources.files(scenario_mod.__package__) / "scenarios" / "fig4.toml").read_text())


def small(**changes):
    doc = copy.deepcopy(BASE)
    doc.update(changes)
    return doc


def test_fig4_causal_chain(fig4_output):
    s = fig4_output.summary
    chain = [s["fill_complete_s"], s["synthesis_onset_s"], s["first_polaron_response_s"],
             s["first_red_blink_s"]["1"], s["first_flap_s"]]
    assert all(a < b for a, b in zip(chain, chain[1:]))
    assert s["reaction_count"] >= 1
    assert s["flap_energy_J"] == pytest.approx(6.6 * 5 * s["reaction_count"])


def test_fig4_wing_receptor_never_flaps(fig4_output):
    assert not [e for e in fig4_output.events[2] if e.kind == "flap"]


def test_fig4_controller_ticks_on_exact_grid(fig4_output):
    leds = [e.t for e in fig4_output.events[1] if e.kind == "led" and e.pattern != "rapid10"]
    assert leds[0] == pytest.approx(1.4)
    assert all(abs(t / 1.4 - round(t / 1.4)) < 1e-9 for t in leds)
    assert len(leds) == int(300 / 1.4)


def test_fig4_series_share_clock(fig4_output):
    for name, (_, rows) in fig4_output.series.items():
        ts = [r[0] for r in rows]
        assert ts == sorted(ts), name


def test_ablation_gives_flat_readout_and_no_reaction():
    out = run(load_scenario("fig4").without_source("synthesis"))
    assert out.summary["reaction_count"] == 0
    codes = [r[2] for r in out.series["impedance"][1] if r[1] == 1]
    assert max(codes) - min(codes) <= 1


def test_runs_are_byte_identical(tmp_path, fig4_output):
    write_outputs(fig4_output, tmp_path / "a")
    write_outputs(run(load_scenario("fig4")), tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "events_1.log" in names and "summary.json" in names
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert not mismatch and not errors


def test_zero_duration_run_is_empty(tmp_path):
    out = run(scenario_from_dict(small(t_end=0.0)))
    assert all(not rows for _, rows in out.series.values())
    assert all(not evs for evs in out.events.values())
    write_outputs(out, tmp_path)
    assert (tmp_path / "fill.csv").read_text().count("\n") == 1


def test_csv_uses_six_significant_digits(tmp_path, fig4_output):
    write_outputs(fig4_output, tmp_path)
    header, first = (tmp_path / "fill.csv").read_text().splitlines()[:2]
    assert header == "t,filled_volume_ml,injected_ml,overflow_ml,fill_fraction"
    assert all(len(v.replace(".", "").replace("-", "").lstrip("0")) <= 6 for v in first.split(",") if "e" not in v)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["scenario"] == "fig4"


@pytest.mark.parametrize(
    "changes, path",
    [
        ({"schema": 2}, "schema"),
        ({"t_end": "long"}, "t_end"),
        ({"dt_fluid": 0.15}, "dt_fluid"),
        ({"pump": {"intervals": [[0.0, 1.0]]}}, "pump.intervals[0]"),
        ({"sources": [{"id": 1, "label": "synthesis"}]}, "sources[0].calibrated_irradiance"),
        ({"masks": [{"polygons": [[[0, 0], [1, 0], [1, 1]]], "blur_sigma": -1.0}]}, "masks[0]"),
        ({"receptors": [{"id": 1, "location": [0, 0], "region": [99999]}]}, "receptors[0].region"),
        ({"receptors": [{"id": 1, "location": [0, 0], "controller": {"rate_threshold": 0.0}}]},
         "receptors[0].controller.rate_threshold"),
        ({"network": {"nodes": [{"id": 0, "position": [0, 0], "kind": "inlet"}],
                      "segments": [{"id": 0, "endpoints": [0, 5], "length": 1.0}]}}, "network"),
    ],
)
def test_config_errors_carry_field_path(changes, path):
    with pytest.raises(ConfigError) as exc:
        scenario_from_dict(small(**changes))
    assert exc.value.path == path


def test_missing_scenario_file():
    with pytest.raises(ConfigError):
        load_scenario("no_such_scenario")


def test_scenario_file_roundtrip(tmp_path):
    path = tmp_path / "s.toml"
    path.write_text((resources.files(scenario_mod.__package__) / "scenarios" / "fig4.toml").read_text())
    sc = load_scenario(path)
    assert sc.name == "fig4" and len(sc.receptors) == 2
    path.write_text("schema = [")
    with pytest.raises(ConfigError):
        load_scenario(path)


def test_custom_network_scenario():
    net = {
        "nodes": [{"id": 0, "position": [0, 0], "kind": "inlet"}, {"id": 1, "position": [10, 0], "kind": "terminal"}],
        "segments": [{"id": 0, "endpoints": [0, 1], "length": 10.0}],
        "zones": [{"id": 0, "attached_node": 1, "footprint_area": 25.0, "center": [10, 0]}],
    }
    doc = small(network=net, t_end=20.0, receptors=[{"id": 1, "location": [10, 0], "region_radius": 2.0}])
    out = run(scenario_from_dict(doc))
    assert out.summary["fill_complete_s"] is not None


def test_calibration_report(tmp_path):
    report = calibrate({"slope": -0.018, "resolution": 0.3, "T_inf": 0.25}, tmp_path)
    assert abs(report["residuals"]["slope_rel"]) <= 0.01
    assert abs(report["residuals"]["edge_width_rel"]) <= 0.02
    assert report["closed_form_k_p_times_I_ref"] == pytest.approx(0.024)
    assert report["optical_blur_sigma_mm"] == pytest.approx(0.117, abs=1e-3)
    saved = json.loads((tmp_path / "calibration.json").read_text())
    assert saved["k_p"] == report["k_p"]


def test_calibration_rejects_non_negative_slope():
    with pytest.raises(CalibrationError):
        calibrate({"slope": 0.0})
