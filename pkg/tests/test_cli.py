import json
import os

import pytest
from click.testing import CliRunner

from backend.Common.engineUtils import BUNDLED_CASE, CASES_DIR
from backend.Common.errors import InputError
from backend.cli import cli
from backend.Models.wams_channel import DELAY_PRESETS
from backend.unified_engine import get_command, parse_grid, run_job


@pytest.fixture
def runner():
    return CliRunner()


def manifest(out):
    with open(os.path.join(out, "manifest.json"), encoding="utf-8") as f:
        return json.load(f)


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def test_powerflow_writes_outputs_and_stable_hash(runner, tmp_path):
    first, second = str(tmp_path / "a"), str(tmp_path / "b")
    for out in (first, second):
        result = runner.invoke(cli, ["--no-progress", "powerflow", "--out", out])
        assert result.exit_code == 0, result.output
    assert {"powerflow.json", "powerflow.txt", "manifest.json"} <= set(os.listdir(first))
    assert manifest(first)["config_hash"] == manifest(second)["config_hash"]
    assert manifest(first)["inputs"] == ["two_area.json"]
    with open(os.path.join(first, "powerflow.json"), encoding="utf-8") as f:
        payload = json.load(f)
    assert payload["max_mismatch"] <= 1e-8
    assert len(payload["buses"]) == 13


def test_tolerance_is_recorded(runner, tmp_path):
    out = str(tmp_path)
    result = runner.invoke(cli, ["--no-progress", "powerflow", "--tol", "1e-10", "--out", out])
    assert result.exit_code == 0, result.output
    assert manifest(out)["params"]["tol"] == 1e-10
    plain = str(tmp_path / "plain")
    runner.invoke(cli, ["--no-progress", "powerflow", "--out", plain])
    assert manifest(out)["config_hash"] != manifest(plain)["config_hash"]


def test_malformed_json_reports_line(runner, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "name": "broken",\n  buses: []\n}\n', encoding="utf-8")
    result = runner.invoke(cli, ["powerflow", "--case", str(bad), "--out", str(tmp_path / "out")])
    assert result.exit_code == 1
    assert "line 3" in result.output


def test_schema_violation_names_the_field(runner, tmp_path):
    case = tmp_path / "case.json"
    case.write_text(json.dumps({"buses": [{"id": 1, "kind": "swing"}]}), encoding="utf-8")
    result = runner.invoke(cli, ["powerflow", "--case", str(case), "--out", str(tmp_path / "out")])
    assert result.exit_code == 1
    assert "buses.0.kind" in result.output


def test_missing_file_is_input_error(runner, tmp_path):
    result = runner.invoke(cli, ["simulate", str(tmp_path / "nope.json"), "--out", str(tmp_path / "out")])
    assert result.exit_code == 1
    assert "File not found" in result.output


def test_unknown_unit_lists_available(runner, tmp_path):
    result = runner.invoke(cli, ["bode", "--unit", "9", "--out", str(tmp_path)])
    assert result.exit_code == 1
    assert "Available" in result.output


def test_invalid_grid_is_input_error(runner, tmp_path):
    result = runner.invoke(cli, ["sweep", "--grid", "1:0.1:0", "--out", str(tmp_path)])
    assert result.exit_code == 1


def test_grid_parsing():
    assert parse_grid("0:0.25:1") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert parse_grid("0.1, 0.7") == [0.1, 0.7]
    assert parse_grid([0, 1]) == [0.0, 1.0]
    with pytest.raises(InputError):
        parse_grid("a:b:c")


def test_unknown_command():
    with pytest.raises(InputError, match="Available"):
        get_command("eigs")


def test_delay_count_must_match_sensor_count(runner, tmp_path):
    with open(BUNDLED_CASE, encoding="utf-8") as f:
        data = json.load(f)
    data.pop("wams", None)
    bare = tmp_path / "no_sensors.json"
    bare.write_text(json.dumps(data), encoding="utf-8")
    for case_args in (["--case", str(bare)], []):
        result = runner.invoke(cli, ["bode", *case_args, "--unit", "1", "--delay", "0.1", "--delay", "0.2",
                                     "--points", "20", "--out", str(tmp_path / "out")])
        assert result.exit_code == 1
        assert "one per sensor" in result.output


@pytest.mark.slow
def test_preset_delays_write_one_response_each(tmp_path):
    result = run_job("bode", {"unit": 1, "beta1": 1.0, "beta2": 0.5, "preset_delays": True, "points": 40},
                     str(tmp_path))
    names = {os.path.basename(p) for p in result["outputs"]}
    assert {f"response_tau_{tau:g}.csv" for tau in DELAY_PRESETS} <= names
    assert read_bytes(tmp_path / "response_tau_0.csv") == read_bytes(tmp_path / "response.csv")
    presets = result["summary"]["presets"]
    assert presets["0"]["deviation_below_0p2hz"]["gain_db"] == 0.0
    assert presets["1.25"]["deviation_below_0p2hz"]["phase_deg"] > 0.0


@pytest.mark.slow
def test_equal_weights_make_delay_irrelevant(runner, tmp_path):
    paths = {}
    for delay in ("0", "1.25"):
        out = str(tmp_path / f"d{delay}")
        result = runner.invoke(cli, ["--no-progress", "bode", "--unit", "1", "--beta1", "0.5", "--beta2", "0.5",
                                     "--delay", delay, "--points", "60", "--out", out])
        assert result.exit_code == 0, result.output
        paths[delay] = os.path.join(out, "response.csv")
    assert read_bytes(paths["0"]) == read_bytes(paths["1.25"])
    assert os.path.exists(os.path.join(tmp_path, "d1.25", "response_nodelay.csv"))


@pytest.mark.slow
def test_simulate_is_reproducible(runner, tmp_path):
    scenario = os.path.join(CASES_DIR, "trip_g3.json")
    outs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        result = runner.invoke(cli, ["--no-progress", "simulate", scenario, "--t-end", "2", "--seed", "3",
                                     "--record", "omega1-omega3", "--out", out])
        assert result.exit_code == 0, result.output
        outs.append(out)
    first, second = (read_bytes(os.path.join(o, "record.csv")) for o in outs)
    assert first == second
    header = first.split(b"\n", 1)[0].decode()
    assert "omega1-omega3" in header.split(",")
    assert "omega2-omega4" in header.split(",")
    assert manifest(outs[0])["seed"] == 3
    assert manifest(outs[0])["inputs"] == ["trip_g3.json", "two_area.json"]
