# End-to-end tests for the racegear command line.
# Commands run through typer's CliRunner on tiny tracks; exit codes and output files are checked.

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from typer.testing import CliRunner

from racegear import __version__
from racegear.cli import app
from racegear.track import write_track_csv

runner = CliRunner()


def _circle_track(tmp_path: Path) -> Path:
    # 80 m of constant radius 100 m: 8 steps at 10 m.
    path = tmp_path / "circle.csv"
    arc = np.linspace(0.0, 80.0, 9)
    write_track_csv(path, arc, np.full(arc.size, 0.01))
    return path


def _optimize(tmp_path: Path, out: Path, *extra: str):
    return runner.invoke(app, [
        "optimize", "--out", str(out), "--track", str(_circle_track(tmp_path)),
        "--step", "10", *extra,
    ])


def test_version() -> None:
    result = runner.invoke(app, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.stdout


def test_track_command_writes_the_bundled_circuit(tmp_path: Path) -> None:
    out = tmp_path / "track.csv"
    result = runner.invoke(app, ["track", "--out", str(out)])
    assert result.exit_code == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "arc_length,curvature"
    assert len(lines) == 4232 + 2


def test_diagnose_runs_the_solver_self_test() -> None:
    result = runner.invoke(app, ["diagnose"])
    assert result.exit_code == 0
    assert "self-test: OK" in result.stdout


def test_validate_rejects_bad_arguments(tmp_path: Path) -> None:
    result = runner.invoke(app, ["validate", "--steps", "12,x", "--out", str(tmp_path)])
    assert result.exit_code == 2
    result = runner.invoke(app, ["validate", "--section", "oval", "--out", str(tmp_path)])
    assert result.exit_code == 2


def test_optimize_input_errors(tmp_path: Path) -> None:
    result = runner.invoke(app, ["optimize", "--out", str(tmp_path / "a"),
                                 "--track", str(tmp_path / "missing.csv")])
    assert result.exit_code == 1

    bad = tmp_path / "bad.toml"
    bad.write_text("[vehicle]\nwings = 2\n", encoding="utf-8")
    result = _optimize(tmp_path, tmp_path / "b", "--config", str(bad))
    assert result.exit_code == 1

    result = _optimize(tmp_path, tmp_path / "c", "--step", "0")
    assert result.exit_code == 2


def test_optimize_fgt_writes_the_run(tmp_path: Path) -> None:
    out = tmp_path / "fgt"
    result = _optimize(tmp_path, out)
    assert result.exit_code == 0, result.output
    for name in ("trajectory.csv", "summary.json", "manifest.json"):
        assert (out / name).is_file()
    assert not (out / "gear_map.csv").exists()

    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["lap_time"] == pytest.approx(1.6, rel=1e-5)
    assert summary["transmission"] == "fgt"
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "optimize"
    assert manifest["track_name"] == "circle"


def test_battery_limit_lands_in_the_manifest(tmp_path: Path) -> None:
    out = tmp_path / "limited"
    result = _optimize(tmp_path, out, "--battery-limit", "5e6")
    assert result.exit_code == 0
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["snapshot"]["powertrain"]["battery_consumption_limit"] == 5e6


def test_rerun_reproduces_the_trajectory(tmp_path: Path) -> None:
    first = tmp_path / "first"
    assert _optimize(tmp_path, first).exit_code == 0
    second = tmp_path / "second"
    result = runner.invoke(app, ["rerun", str(first / "manifest.json"), "--out", str(second)])
    assert result.exit_code == 0
    assert (second / "trajectory.csv").read_bytes() == (first / "trajectory.csv").read_bytes()
    manifest = json.loads((second / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "rerun"


def test_mgt_run_writes_trace_gear_map_and_hamiltonian(tmp_path: Path) -> None:
    out = tmp_path / "mgt2"
    result = _optimize(tmp_path, out, "--trans", "mgt2", "--dump-hamiltonian")
    assert result.exit_code in (0, 3)
    for name in ("trace.csv", "gear_map.csv", "hamiltonian.csv"):
        assert (out / name).is_file()
    header = (out / "hamiltonian.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "step,h_gear_1,h_gear_2,gear"


def test_compare_against_the_fgt_run(tmp_path: Path) -> None:
    fgt = tmp_path / "fgt"
    cvt = tmp_path / "cvt"
    assert _optimize(tmp_path, fgt).exit_code == 0
    assert _optimize(tmp_path, cvt, "--trans", "cvt").exit_code == 0

    report_dir = tmp_path / "report"
    result = runner.invoke(app, ["compare", str(cvt), str(fgt), "--out", str(report_dir)])
    assert result.exit_code == 0
    rows = (report_dir / "compare.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == "run,kind,lap_time,delta_s,delta_percent"
    by_run = {row.split(",")[0]: row.split(",") for row in rows[1:]}
    assert float(by_run["fgt"][3]) == 0.0
    assert by_run["cvt"][1] == "cvt"


def test_compare_rejects_incomplete_runs(tmp_path: Path) -> None:
    (tmp_path / "empty").mkdir()
    result = runner.invoke(app, ["compare", str(tmp_path / "empty"), "--out", str(tmp_path)])
    assert result.exit_code == 1


@pytest.mark.slow
def test_validate_small_section(tmp_path: Path) -> None:
    result = runner.invoke(app, ["validate", "--steps", "12", "--out", str(tmp_path)])
    assert result.exit_code in (0, 3)
    rows = (tmp_path / "validation.csv").read_text(encoding="utf-8").splitlines()
    assert len(rows) == 2
    assert rows[1].startswith("12,")
