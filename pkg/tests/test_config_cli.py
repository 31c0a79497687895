import csv
import json
from pathlib import Path

import numpy as np
import pytest

from clsprint import cli
from clsprint.config import ConfigError, load_config, parse_config, quantity
from clsprint.grid import FieldSet, Grid
from clsprint.io import read_vtk_scalars, write_vtk
from clsprint.sweep import SweepPlan, resolve_workers, run_mesh_convergence, run_single, run_sweep

BLOB = """
[run]
name = "blob"
duration = "0.05 s"
sample_interval = "0.025 s"

[grid]
target_cell_size = "0.0625 m"

[benchmark]
kind = "translating_blob"
epsilon_f = 0.5
"""

POISEUILLE = """
[run]
name = "channel"
duration = "1 ms"
sample_interval = "1 ms"

[grid]
target_cell_size = "0.125 mm"

[benchmark]
kind = "plane_poiseuille"
width = "1 mm"
length = "2 mm"
rate = "8 mm^2/s"
mu = "1000 Pa*s"
"""


def _write(tmp_path, text, name="case.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_quantity_conversion():
    assert quantity("0.4 mm", "length") == pytest.approx(4e-4)
    assert quantity("20 mm/s", "speed") == pytest.approx(0.02)
    assert quantity("1000 Pa*s", "viscosity") == 1000.0
    assert quantity("1 g/cm^3", "density") == pytest.approx(1000.0)


@pytest.mark.parametrize("value", [0.4, "0.4", True, "fast"])
def test_unitless_rejected(value):
    with pytest.raises(ConfigError):
        quantity(value, "length", "scenario.D")


def test_wrong_dimension_rejected():
    with pytest.raises(ConfigError, match="not a length"):
        quantity("2 s", "length")


def test_parse_deposition_defaults():
    cfg = parse_config({"grid": {"target_cell_size": "0.04 mm"},
                        "scenario": {"delta_z": "0.32 mm", "v_bar_x": "20 mm/s"},
                        "levelset": {"gamma": "0.02 m/s", "epsilon_f": 1.0}})
    assert cfg.case == "deposition"
    assert cfg.scenario.delta_z == pytest.approx(3.2e-4)
    assert cfg.gamma == pytest.approx(0.02) and cfg.epsilon_f == 1.0
    assert cfg.flow.gravity == (0.0, -9.81)


@pytest.mark.parametrize("data", [
    {"grid": {"target_cell_size": 0.04}, "benchmark": {"kind": "zalesak"}},
    {"grid": {"target_cell_size": "0.04 m"}, "benchmark": {"kind": "zalesak"}, "levelset": {"epsilon": "0 m"}},
    {"grid": {"target_cell_size": "0.04 m"}, "benchmark": {"kind": "nope"}},
    {"grid": {"target_cell_size": "0.04 m"}, "benchmark": {"kind": "zalesak"}, "extra": {}},
    {"grid": {"target_cell_size": "0.04 m"}, "scenario": {"D": "0.4"}},
    {"benchmark": {"kind": "zalesak"}},
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        parse_config(data)


def test_cli_exit_code_on_bad_config(tmp_path, capsys):
    path = _write(tmp_path, BLOB.replace('"0.0625 m"', "0.0625"))
    assert cli.main(["run", str(path)]) == cli.EXIT_CONFIG
    assert "units" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "missing.toml")]) == cli.EXIT_CONFIG


def test_cli_tables(capsys):
    assert cli.main(["tables"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "DIFF" not in out
    assert "0.0258" in out and "0.0276" in out
    assert cli.main(["tables", "--format", "csv"]) == cli.EXIT_OK
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert len(rows) == 17
    assert all(float(r["abs_diff"]) <= 0.02 for r in rows)


def test_run_writes_artifacts(tmp_path, capsys):
    path = _write(tmp_path, BLOB)
    out = tmp_path / "out"
    assert cli.main(["run", str(path), "--output", str(out)]) == cli.EXIT_OK
    d = out / "blob"
    for name in ("diagnostics.csv", "summary.json", "steps.csv", "timing.json", "fields_0000.vtk"):
        assert (d / name).exists(), name
    header = (d / "diagnostics.csv").read_text().splitlines()[0]
    assert header == "time,A_s,A_f,delta_A_pct,P_max,ink_volume,W,H,WH_ratio"
    summary = json.loads((d / "summary.json").read_text())
    assert abs(summary["oracle"]["phi_sum_rel_drift"]) < 1e-12


def test_runs_are_deterministic(tmp_path):
    cfg = load_config(_write(tmp_path, BLOB))
    a = run_single(cfg, tmp_path / "a")
    b = run_single(cfg, tmp_path / "b")
    for name in ("diagnostics.csv", "summary.json", "steps.csv", "fields_0000.vtk"):
        assert (a.directory / name).read_bytes() == (b.directory / name).read_bytes()


def test_output_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("CLSPRINT_OUTPUT_DIR", str(tmp_path / "env"))
    cfg = load_config(_write(tmp_path, BLOB))
    out = run_single(cfg)
    assert out.directory == tmp_path / "env" / "blob"


def test_workers_env_override(monkeypatch):
    assert resolve_workers(3) == 3
    monkeypatch.setenv("CLSPRINT_WORKERS", "2")
    assert resolve_workers(5) == 2
    monkeypatch.setenv("CLSPRINT_WORKERS", "many")
    with pytest.raises(ConfigError):
        resolve_workers(1)


def test_sweep_validation(tmp_path):
    cfg = load_config(_write(tmp_path, BLOB))
    with pytest.raises(ConfigError):
        SweepPlan(cfg, gamma_list=[])
    with pytest.raises(ConfigError):
        SweepPlan(cfg)
    with pytest.raises(ConfigError):
        SweepPlan(cfg, speed_ratio_list=[1.0])


def test_sweep_independent_of_worker_count(tmp_path):
    cfg = load_config(_write(tmp_path, BLOB))
    serial = run_sweep(SweepPlan(cfg, epsilon_f_list=[0.5, 1.0]), tmp_path / "s1")
    parallel = run_sweep(SweepPlan(cfg, epsilon_f_list=[1.0, 0.5], workers=2), tmp_path / "s2")
    by_f = {r["epsilon_f"]: r for r in parallel}
    for row in serial:
        assert row["status"] == "ok"
        assert row["A_s"] == by_f[row["epsilon_f"]]["A_s"]
    assert (tmp_path / "s1" / "sweep.csv").exists()


def test_cli_sweep(tmp_path, capsys):
    path = _write(tmp_path, BLOB + '\n[sweep]\ngamma_list = ["0.5 m/s", "1 m/s"]\n')
    assert cli.main(["sweep", str(path), "--output", str(tmp_path / "o")]) == cli.EXIT_OK
    assert "2 points" in capsys.readouterr().out
    bad = _write(tmp_path, BLOB + "\n[sweep]\ngamma_list = []\n", "bad.toml")
    assert cli.main(["sweep", str(bad)]) == cli.EXIT_CONFIG


def test_convergence_needs_three_levels(tmp_path):
    cfg = load_config(_write(tmp_path, POISEUILLE))
    with pytest.raises(ConfigError):
        run_mesh_convergence(cfg, [1e-4, 5e-5], directory=tmp_path)


def test_poiseuille_convergence_table(tmp_path):
    cfg = load_config(_write(tmp_path, POISEUILLE))
    rows = run_mesh_convergence(cfg, [1e-3 / 8, 1e-3 / 16, 1e-3 / 32], directory=tmp_path / "c")
    errs = [r["P_max_rel_error"] for r in rows]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 0.05
    assert (tmp_path / "c" / "convergence.csv").exists()


def test_cli_converge(tmp_path, capsys):
    path = _write(tmp_path, POISEUILLE)
    code = cli.main(["converge", str(path), "--grids", "0.25 mm", "0.125 mm", "0.0625 mm",
                     "--output", str(tmp_path / "c")])
    assert code == cli.EXIT_OK
    assert capsys.readouterr().out.count("level") == 3
    assert cli.main(["converge", str(path), "--grids", "0.25 mm", "0.125 mm"]) == cli.EXIT_CONFIG


def test_levelset_failure_exit_code(tmp_path, monkeypatch, capsys):
    import clsprint.simulation as simulation
    from clsprint.levelset import LevelSetInstability

    def explode(*args, **kwargs):
        raise LevelSetInstability("phi left the window")

    monkeypatch.setattr(simulation, "advance_levelset", explode)
    path = _write(tmp_path, BLOB)
    assert cli.main(["run", str(path), "--output", str(tmp_path / "o")]) == cli.EXIT_LEVELSET
    assert (tmp_path / "o" / "blob" / "fields_failed.vtk").exists()
    failure = json.loads((tmp_path / "o" / "blob" / "failure.json").read_text())
    assert "window" in failure["error"]


def test_solver_failure_exit_code(tmp_path, capsys):
    text = POISEUILLE + '\n[flow]\nmode = "navier_stokes"\nmax_iters = 1\n'
    path = _write(tmp_path, text)
    assert cli.main(["run", str(path), "--output", str(tmp_path / "o")]) == cli.EXIT_SOLVER
    assert "SolverDivergence" in capsys.readouterr().err


def test_vtk_roundtrip(tmp_path):
    g = Grid((4, 3), (0.5, 0.25))
    f = FieldSet.zeros(g, np.arange(12.0).reshape(4, 3) / 12)
    f.p[...] = np.arange(12.0).reshape(4, 3)
    write_vtk(tmp_path / "x.vtk", g, f)
    dims, scalars = read_vtk_scalars(tmp_path / "x.vtk")
    assert dims == (4, 3)
    assert np.allclose(scalars["phi"], f.phi) and np.array_equal(scalars["p"], f.p)
