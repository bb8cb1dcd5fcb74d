import json
import shutil

import pytest

from emla_design.cli import EXIT_IO, EXIT_OK, EXIT_VALIDATION, main, run
from emla_design.emla_drive import read_map_csv
from emla_design.pipeline import read_csv


@pytest.fixture
def workdir(tmp_path, data_dir):
    for f in data_dir.glob("*.json"):
        shutil.copy(f, tmp_path / f.name)
    return tmp_path


def scenario_path(workdir, name="scenario_desk.json"):
    return str(workdir / name)


def test_effmap(workdir):
    code, art = run(["effmap", "--scenario", scenario_path(workdir), "--out", str(workdir / "out")])
    assert code == EXIT_OK
    assert len(art.maps) == 3
    for p in art.maps:
        emap = read_map_csv(p)
        assert emap.values.shape == (41, 41)
    manifest = json.loads((workdir / "out" / "artifacts.json").read_text())
    assert manifest["result"] == "effmap.json"


def test_simulate_is_byte_identical(workdir):
    outs = []
    for tag in ("a", "b"):
        out = workdir / tag
        assert main(["simulate", "--scenario", scenario_path(workdir), "--out", str(out)]) == EXIT_OK
        outs.append(out)
    for name in ("series.csv", "simulation.json", "artifacts.json", "run.log"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    header, rows = read_csv(outs[0] / "series.csv")
    assert header[0] == "t" and "lift_f_x" in header and rows.shape[0] == 13
    summary = json.loads((outs[0] / "simulation.json").read_text())["simulation"]
    assert summary["constraint_violation"] < 1e-8


def test_validate_passes(workdir, capsys):
    assert main(["validate", "--scenario", scenario_path(workdir), "--out", str(workdir / "v")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS  stroke_limits" in out


def test_validate_rejects_non_positive_length(workdir, capsys):
    robot = json.loads((workdir / "robot_planar_crane.json").read_text())
    robot["joints"][1]["closed_chain"]["L"] = 0.0
    (workdir / "robot_planar_crane.json").write_text(json.dumps(robot))
    code = main(["validate", "--scenario", scenario_path(workdir), "--out", str(workdir / "v")])
    assert code == EXIT_VALIDATION
    captured = capsys.readouterr()
    err = json.loads(captured.err.strip().splitlines()[-1])
    assert err["exit_code"] == EXIT_VALIDATION
    assert "link_length_bounds" in err["constraints"]
    assert "FAIL  robot_description" in captured.out


def test_missing_file(workdir, capsys):
    code = main(["simulate", "--scenario", str(workdir / "nope.json"), "--out", str(workdir / "o")])
    assert code == EXIT_IO
    assert json.loads(capsys.readouterr().err)["error"] == "io_error"


def test_unreachable_reference(workdir, capsys):
    sc = json.loads((workdir / "scenario_desk.json").read_text())
    sc["trajectory"]["center"] = [-3.2, 30.0]
    (workdir / "far.json").write_text(json.dumps(sc))
    code = main(["simulate", "--scenario", str(workdir / "far.json"), "--out", str(workdir / "o")])
    assert code == EXIT_VALIDATION
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "reachability" and err["times"][0] == 0.0


def test_optimize_short_run_round_trips(workdir):
    out = workdir / "opt"
    code, art = run(["optimize", "--scenario", scenario_path(workdir), "--out", str(out), "--max-iter", "2"])
    assert code == EXIT_OK
    for p in art.all_paths():
        assert p.exists()
    result = json.loads((out / "result.json").read_text())
    assert json.loads(json.dumps(result)) == result
    assert result["iterations"] <= 2
    assert len(result["objective_trace"]) == result["iterations"] + 1
    assert result["objective_trace"][-1] <= result["objective_trace"][0]
    header, rows = read_csv(out / "trace.csv")
    assert header == ["iteration", "objective", "violation"]
    assert rows[:, 1].tolist() == result["objective_trace"]
    assert "wall_time_s" in json.loads((out / "timing.json").read_text())
