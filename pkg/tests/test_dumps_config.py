import json
from pathlib import Path

import numpy as np
import pytest

from nozzleflow.config import load_config, parse_config
from nozzleflow.dumps import (
    canonical_hash,
    read_field,
    read_grid,
    read_rates_csv,
    read_tabulated_force,
    write_field,
    write_grid,
    write_manifest,
    write_rates_csv,
    write_study_csv,
    write_tabulated_force,
)
from nozzleflow.errors import ConfigError, FormatError
from nozzleflow.force_field import ForceField
from nozzleflow.gas_model import GasModel
from nozzleflow.geometry import Bump, build_mesh, build_profile
from nozzleflow.solvers import solve_compressible

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "nozzleflow" / "scenarios"


@pytest.fixture(scope="module")
def state():
    p = build_profile("algebraic", K=0.0, a1=2.0, amplitude=0.2, obstacle=Bump(0.3, -2.0, -0.5))
    mesh = build_mesh(p, L=5.0, n_s=4, h_z=0.25)
    return solve_compressible(mesh, GasModel(epsilon=0.1), ForceField("radial_static", amplitude=0.1), np.pi)


def test_field_round_trip_is_bitwise(state, tmp_path):
    path = tmp_path / "a.field"
    write_field(state, path)
    d = read_field(path, state.mesh)
    np.testing.assert_array_equal(d.potential, state.potential)
    np.testing.assert_array_equal(d.velocity, state.velocity)
    np.testing.assert_array_equal(d.rho, state.density)
    np.testing.assert_array_equal(d.mach, state.mach)
    np.testing.assert_array_equal(d.pressure, state.pressure)
    np.testing.assert_array_equal(d.mesh.nodes, state.mesh.nodes)
    assert float(d.footer["achieved_flux"]) == state.achieved_flux
    assert d.footer["truncation_active"] == "false"
    # writing the read-back data again gives the same bytes
    write_field(state, tmp_path / "b.field")
    assert path.read_bytes() == (tmp_path / "b.field").read_bytes()


def test_truncated_field_names_the_block(state, tmp_path):
    path = tmp_path / "a.field"
    write_field(state, path)
    lines = path.read_text().split("\n")
    cut = lines.index("[end rho]") - 3
    path.write_text("\n".join(lines[:cut]) + "\n")
    with pytest.raises(FormatError, match="'rho'"):
        read_field(path)
    path.write_text("nozzleflow-grid 1\n")
    with pytest.raises(FormatError, match="first line"):
        read_field(path)


def test_field_against_other_mesh_is_refused(tmp_path):
    p = build_profile("cylinder")
    coarse = build_mesh(p, L=5.0, n_s=4, h_z=0.25)
    fine = build_mesh(p, L=5.0, n_s=8, h_z=0.25)
    st = solve_compressible(coarse, GasModel(epsilon=0.1), None, np.pi)
    write_field(st, tmp_path / "c.field")
    with pytest.raises(FormatError, match="mesh mismatch"):
        read_field(tmp_path / "c.field", fine)


def test_grid_round_trip(state, tmp_path):
    write_grid(state.mesh, tmp_path / "m.grid")
    mesh = read_grid(tmp_path / "m.grid", state.mesh)
    np.testing.assert_array_equal(mesh.nodes, state.mesh.nodes)
    assert (mesh.n_s, mesh.n_z, mesh.symmetry) == (state.mesh.n_s, state.mesh.n_z, state.mesh.symmetry)


def test_tabulated_force_round_trip(state, tmp_path):
    mesh = state.mesh
    vals = np.sin(mesh.nodes[:, 1]) * mesh.nodes[:, 0] ** 2
    write_tabulated_force(mesh, vals, tmp_path / "f.force")
    f = read_tabulated_force(tmp_path / "f.force", mesh)
    np.testing.assert_array_equal(f.table["values"], vals)
    with pytest.raises(FormatError):
        write_tabulated_force(mesh, vals[:-1], tmp_path / "g.force")


def test_csv_tables(tmp_path):
    T = [4.0, 5.0, 6.0]
    write_rates_csv(tmp_path / "rates.csv", T, [0.1, 0.01, 1e-3], [0.2, 0.02, 2e-3])
    t, l2, linf = read_rates_csv(tmp_path / "rates.csv")
    np.testing.assert_array_equal(t, T)
    np.testing.assert_array_equal(linf, [0.2, 0.02, 2e-3])
    write_study_csv(tmp_path / "study.csv", [("low_mach", "epsilon", 0.1, "max_mach", 0.12)])
    assert (tmp_path / "study.csv").read_text().splitlines()[0] == "study,parameter_name,parameter,metric,value"


def test_manifest_and_hash(tmp_path):
    m = {"b": np.float64(1.5), "a": [np.int64(2), True], "c": np.array([1.0, 2.0])}
    write_manifest(tmp_path / "m.json", m)
    assert json.loads((tmp_path / "m.json").read_text()) == {"a": [2, True], "b": 1.5, "c": [1.0, 2.0]}
    assert canonical_hash({"x": 1, "y": 2}) == canonical_hash({"y": 2, "x": 1})
    assert canonical_hash({"x": 1}) != canonical_hash({"x": 2})


def test_minimal_config_uses_defaults():
    cfg = parse_config("[geometry]\nprofile = cylinder\n")
    sc = cfg.scenario
    assert sc.L == 10.0 and sc.n_s == 8 and sc.h_z == 0.25
    assert sc.gas.gamma == 1.4 and sc.gas.epsilon == 0.1
    assert sc.m0 == pytest.approx(np.pi)
    assert cfg.analyses == ["conservation", "bernoulli"]


def test_config_names_violated_bound():
    with pytest.raises(ConfigError, match="a1 > 0"):
        parse_config("[geometry]\nprofile = algebraic\na1 = -1\namplitude = 0.2\n")


def test_config_low_mach_needs_eps_list():
    with pytest.raises(ConfigError, match="at least 3"):
        parse_config("[gas]\neps_list = 0.1\n[study]\nanalyses = low_mach\n")


def test_config_unknown_key_reports_line():
    with pytest.raises(ConfigError, match=r"unknown key geometry.radius \(line 3\)"):
        parse_config("[geometry]\nprofile = cylinder\nradius = 2\n")


def test_config_reports_all_violations():
    text = "[geometry]\nn_s = 2\nh_z = 0\n[flow]\nm0 = -1\n[solver]\ndamping = 3\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    v = exc.value.violations
    assert len(v) >= 4
    joined = " ".join(v)
    for word in ("n_s", "h_z", "m0", "damping"):
        assert word in joined


def test_bundled_scenarios_validate():
    files = sorted(SCENARIOS.glob("*.ini"))
    assert len(files) >= 10
    for f in files:
        assert load_config(f).scenario.name == f.stem
