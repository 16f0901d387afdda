import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from nozzleflow.cli import EXIT_CHECK_FAILED, EXIT_INVALID, EXIT_OK, EXIT_SOLVER_ERROR, main
from nozzleflow.dumps import read_rates_csv, write_field
from nozzleflow.geometry import Bump, build_mesh, build_profile
from nozzleflow.solvers import solve_incompressible

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "nozzleflow" / "scenarios"


def test_check_exit_codes(tmp_path, capsys):
    assert main(["check", str(SCENARIOS / "cylinder_exact.ini")]) == EXIT_OK
    assert capsys.readouterr().out.startswith("OK ")
    bad = tmp_path / "bad.ini"
    bad.write_text("[geometry]\nprofile = algebraic\na1 = -1\namplitude = 0.2\nspin = 3\n")
    assert main(["check", str(bad)]) == EXIT_INVALID
    out = capsys.readouterr().out
    assert out.startswith("INVALID") and "spin" in out
    assert main(["check", str(tmp_path / "missing.ini")]) == EXIT_INVALID


def test_run_cylinder_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", str(SCENARIOS / "cylinder_exact.ini"), "--out", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "PASS" in text and "FAIL" not in text and text.rstrip().endswith("exit 0")
    for name in ("manifest.json", "study.csv", "fields/primary.field"):
        assert (out / name).is_file()
    m = json.loads((out / "manifest.json").read_text())
    assert m["exit_status"] == 0 and m["errors"] == []
    assert all(c["passed"] for c in m["checks"])


def test_run_choked_reports_solver_error(tmp_path):
    out = tmp_path / "run"
    assert main(["run", str(SCENARIOS / "choked.ini"), "--out", str(out)]) == EXIT_SOLVER_ERROR
    m = json.loads((out / "manifest.json").read_text())
    assert m["exit_status"] == EXIT_SOLVER_ERROR
    assert m["errors"][0]["type"] == "ChokingError"


def test_failed_check_gives_exit_one(tmp_path):
    cfg = tmp_path / "strict.ini"
    text = (SCENARIOS / "cylinder_exact.ini").read_text().replace("uniform_tolerance = 1e-10", "uniform_tolerance = 1e-30")
    cfg.write_text(text)
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CHECK_FAILED


def test_runs_are_reproducible(tmp_path):
    cfg = SCENARIOS / "flat_exponential.ini"
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg), "--out", str(a)]) == EXIT_OK
    assert main(["run", str(cfg), "--out", str(b)]) == EXIT_OK
    assert (a / "rates.csv").read_bytes() == (b / "rates.csv").read_bytes()
    assert (a / "fields/primary.field").read_bytes() == (b / "fields/primary.field").read_bytes()
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    ma.pop("timing"), mb.pop("timing")
    assert ma == mb


def test_rates_command_on_two_dumps(tmp_path, capsys):
    K = 2.0
    p = build_profile("flat_beyond_K", K=K, amplitude=0.3, width=2.0, obstacle=Bump(0.2, -4.0, -2.0))
    mesh = build_mesh(p, L=16.0, n_s=8, h_z=0.25)
    ref_mesh = build_mesh(build_profile("cylinder"), L=16.0, n_s=8, h_z=0.25)
    write_field(solve_incompressible(mesh, np.pi), tmp_path / "a.field")
    write_field(solve_incompressible(ref_mesh, np.pi), tmp_path / "b.field")
    out = tmp_path / "rates.csv"
    code = main(["rates", str(tmp_path / "a.field"), str(tmp_path / "b.field"), "--T", "4", "5", "6", "7",
                 "--out", str(out)])
    assert code == EXIT_OK
    summary = capsys.readouterr().err
    assert "model=exponential" in summary
    T, _, d_inf = read_rates_csv(out)
    np.testing.assert_array_equal(T, [4.0, 5.0, 6.0, 7.0])
    assert np.all(np.diff(d_inf) < 0)
    (tmp_path / "broken.field").write_text("not a dump\n")
    assert main(["rates", str(tmp_path / "broken.field"), str(tmp_path / "b.field")]) == EXIT_INVALID


def test_console_script_and_module_entry_point(tmp_path):
    exe = shutil.which("nozzleflow")
    cmd = [exe] if exe else [sys.executable, "-m", "nozzleflow"]
    res = subprocess.run(cmd + ["check", str(SCENARIOS / "mms.ini")], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("OK")
    res = subprocess.run([sys.executable, "-m", "nozzleflow", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "rates" in res.stdout


@pytest.mark.parametrize("workers", ["1", "2"])
def test_low_mach_run_with_workers(tmp_path, monkeypatch, workers):
    monkeypatch.setenv("NOZZLEFLOW_WORKERS", workers)
    cfg = tmp_path / "lm.ini"
    text = (SCENARIOS / "low_mach.ini").read_text()
    cfg.write_text(text.replace("n_s = 16", "n_s = 8"))
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = (tmp_path / "o" / "study.csv").read_text()
    assert "low_mach" in rows
