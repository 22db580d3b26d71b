import csv
import json

import numpy as np
import pytest
import yaml

from multiuav.cli import main
from multiuav.io import (ScenarioFileError, build_scenario, db_to_linear, dbm_to_watts,
                         load_scenario, read_run, save_scenario)
from multiuav.model import Scenario, ScenarioError

BASE = {
    "num_uavs": 1,
    "period": 10.0,
    "num_slots": 10,
    "discretization_threshold": 2.0,
    "subslot_factor": 10,
    "noise_power_dbm": -110,
    "ref_gain_db": -60,
    "user_positions": [[-150.0, 0.0], [150.0, 50.0]],
}


def write_yaml(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return path


@pytest.fixture
def scenario_file(tmp_path):
    return write_yaml(tmp_path / "scenario.yaml", BASE)


def test_db_conversions_are_exact():
    assert dbm_to_watts(-110) == pytest.approx(1e-14, rel=1e-15)
    assert db_to_linear(-60) == pytest.approx(1e-6, rel=1e-15)
    spec = build_scenario(dict(BASE))
    assert spec.scenario.noise_power == pytest.approx(1e-14, rel=1e-15)
    assert spec.scenario.ref_channel_gain == pytest.approx(1e-6, rel=1e-15)


def test_scenario_round_trip(tmp_path):
    sc = Scenario([[1.25, -3.5], [400.0, 1e-3]], num_uavs=2, period=33.3, num_slots=68,
                  max_power=0.07, subslot_factor=17)
    path = tmp_path / "rt.yaml"
    save_scenario(sc, path)
    back = load_scenario(path).scenario
    for name in Scenario.__dataclass_fields__:
        a, b = getattr(sc, name), getattr(back, name)
        if isinstance(a, np.ndarray):
            assert np.array_equal(a, b)
        elif isinstance(a, int):
            assert a == b and type(a) is type(b)
        else:
            assert b == pytest.approx(a, rel=1e-12)


def test_generated_users_and_auto_slots():
    doc = {k: v for k, v in BASE.items() if k not in ("user_positions", "num_slots")}
    doc["num_uavs"] = 2
    doc["user_generation"] = {"count": 5, "region": [[-1000, 1000], [-1000, 1000]], "seed": 7}
    spec = build_scenario(doc)
    assert spec.seed == 7 and spec.auto_slots
    assert spec.scenario.num_users == 5
    assert np.all(np.abs(spec.scenario.user_positions) <= 1000)
    assert spec.scenario.num_slots % 2 == 0
    again = build_scenario(doc)
    assert np.array_equal(again.scenario.user_positions, spec.scenario.user_positions)
    other = build_scenario(doc, {"seed": 8})
    assert not np.array_equal(other.scenario.user_positions, spec.scenario.user_positions)


@pytest.mark.parametrize("bad, field", [
    ({"altitude": -5}, "altitude"),
    ({"bogus_field": 1}, "bogus_field"),
    ({"user_generation": {"count": 2, "region": [[0, 1], [0, 1]], "seed": 0}}, "user_positions"),
    ({"max_power": "lots"}, "max_power"),
])
def test_bad_documents_name_the_field(bad, field):
    with pytest.raises((ScenarioError, ScenarioFileError)) as info:
        build_scenario({**BASE, **bad})
    assert field in str(info.value)


def test_solve_then_validate(tmp_path, scenario_file, capsys):
    out = tmp_path / "run"
    assert main(["solve", "--scenario", str(scenario_file), "--scheme", "joint",
                 "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["scheme"] == "joint" and summary["converged"]
    assert summary["eta"] <= np.log2(1001) / 2
    for name in ("trajectory.csv", "power.csv", "schedule.csv", "trace.csv"):
        assert (out / name).exists()
    assert not list(tmp_path.glob(".run*"))  # no temp leftovers
    capsys.readouterr()
    assert main(["validate", "--scenario", str(scenario_file), "--run", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_single_user_hover_summary(tmp_path):
    path = write_yaml(tmp_path / "one.yaml", {"num_uavs": 1, "period": 20.0, "num_slots": 40,
                                              "subslot_factor": 10,
                                              "user_positions": [[0.0, 0.0]]})
    assert main(["solve", "--scenario", str(path), "--out", str(tmp_path / "r")]) == 0
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert summary["eta"] <= 9.9672 + 1e-4


def test_static_summaries_identical_across_periods(tmp_path, scenario_file):
    etas = []
    for period in (5.0, 10.0):
        out = tmp_path / f"s{period}"
        assert main(["solve", "--scenario", str(scenario_file), "--scheme", "static_uav",
                     "--period", str(period), "--out", str(out)]) == 0
        etas.append(json.loads((out / "summary.json").read_text())["eta"])
    assert etas[0] == etas[1]


def test_invalid_altitude_exit_code(tmp_path, capsys):
    path = write_yaml(tmp_path / "bad.yaml", {**BASE, "altitude": -5})
    assert main(["solve", "--scenario", str(path), "--out", str(tmp_path / "r")]) == 2
    assert "altitude" in capsys.readouterr().err
    assert not (tmp_path / "r").exists()


def test_parse_error_exit_code(tmp_path, capsys):
    path = tmp_path / "broken.yaml"
    path.write_text("num_uavs: 1\nuser_positions: [[0, 0]\n")
    assert main(["solve", "--scenario", str(path), "--out", str(tmp_path / "r")]) == 4
    assert "broken.yaml:" in capsys.readouterr().err
    assert main(["solve", "--scenario", str(tmp_path / "missing.yaml"),
                 "--out", str(tmp_path / "r")]) == 4


def _solved(tmp_path, scenario_file):
    out = tmp_path / "run"
    assert main(["solve", "--scenario", str(scenario_file), "--scheme", "circular_full_power",
                 "--out", str(out)]) == 0
    return out


def _edit_csv(path, fn):
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    fn(rows)
    with path.open("w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def test_validate_flags_edited_waypoint(tmp_path, scenario_file, capsys):
    out = _solved(tmp_path, scenario_file)

    def push(rows):
        row = next(r for r in rows[1:] if r[0] == "0" and r[1] == "4")
        row[3] = repr(float(row[3]) + 500.0)

    _edit_csv(out / "trajectory.csv", push)
    capsys.readouterr()
    assert main(["validate", "--scenario", str(scenario_file), "--run", str(out)]) == 2
    lines = capsys.readouterr().out.splitlines()
    fails = [line for line in lines if line.startswith("FAIL")]
    assert len(fails) == 1 and fails[0].startswith("FAIL speed")
    assert "(0, 4)" in fails[0]


def test_validate_flags_power_above_max(tmp_path, scenario_file, capsys):
    out = _solved(tmp_path, scenario_file)

    def boost(rows):
        rows[3][2] = "0.2"

    _edit_csv(out / "power.csv", boost)
    capsys.readouterr()
    assert main(["validate", "--scenario", str(scenario_file), "--run", str(out)]) == 2
    fails = [l for l in capsys.readouterr().out.splitlines() if l.startswith("FAIL")]
    assert [f.split(":")[0] for f in fails] == ["FAIL power_box"]


def test_validate_rejects_inconsistent_run(tmp_path, scenario_file):
    out = _solved(tmp_path, scenario_file)
    (out / "power.csv").write_text("uav,slot,power_w\n0,0,0.1\n")
    with pytest.raises(ScenarioFileError):
        read_run(out, load_scenario(scenario_file).scenario)
    assert main(["validate", "--scenario", str(scenario_file), "--run", str(out)]) == 4


def test_sweep_table(tmp_path, scenario_file):
    out = tmp_path / "sweep"
    code = main(["sweep", "--scenario", str(scenario_file), "--param", "period",
                 "--values", "5,10", "--schemes", "joint,static_uav", "--out", str(out)])
    assert code == 0
    with (out / "sweep.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["scheme"], float(r["value"])) for r in rows] == [
        ("joint", 5.0), ("joint", 10.0), ("static_uav", 5.0), ("static_uav", 10.0)]
    assert all(r["status"] == "converged" for r in rows)
    joint = [float(r["eta"]) for r in rows if r["scheme"] == "joint"]
    static = [float(r["eta"]) for r in rows if r["scheme"] == "static_uav"]
    assert joint[1] >= joint[0] - 1e-9
    assert static[0] == static[1]


def test_sweep_rejects_unsorted_values(tmp_path, scenario_file):
    assert main(["sweep", "--scenario", str(scenario_file), "--param", "period",
                 "--values", "10,5", "--out", str(tmp_path / "s")]) == 4


def test_solve_is_deterministic(tmp_path, scenario_file):
    outs = []
    for name in ("a", "b"):
        assert main(["solve", "--scenario", str(scenario_file), "--out",
                     str(tmp_path / name)]) == 0
        s = json.loads((tmp_path / name / "summary.json").read_text())
        s.pop("block_times_s")
        outs.append(s)
    assert outs[0] == outs[1]
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == \
        (tmp_path / "b" / "trajectory.csv").read_bytes()
