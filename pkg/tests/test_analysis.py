import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nozzleflow.analysis import (
    FloorWarning,
    Scenario,
    bernoulli_and_pressure,
    far_field_rate,
    fit_rate,
    flux_deviation,
    loglog_slope,
    low_mach_study,
    mass_flux,
    truncation_study,
    uniqueness_probe,
    window_deviation,
    worker_count,
)
from nozzleflow.errors import InsufficientDataError, RangeError
from nozzleflow.force_field import ForceField
from nozzleflow.gas_model import GasModel
from nozzleflow.geometry import Bump, build_mesh, build_profile
from nozzleflow.solvers import solve_compressible, solve_incompressible

CYL = build_profile("cylinder")
BUMP = build_profile("cylinder", obstacle=Bump(0.3, -1.0, 1.0))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(1e-3, 1e3), st.floats(-5.0, 5.0))
def test_fit_rate_recovers_exponential(rate, C, T0):
    T = T0 + np.arange(6.0)
    r, c, r2 = fit_rate(T, C * np.exp(-rate * T), "exponential")
    assert r == pytest.approx(rate, rel=1e-9, abs=1e-9)
    assert c == pytest.approx(C, rel=1e-7)
    assert r2 == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 4.0), st.floats(1e-3, 1e3), st.floats(-2.0, 3.0))
def test_fit_rate_recovers_power_law(rate, C, origin):
    T = origin + np.array([2.0, 3.0, 5.0, 8.0, 13.0])
    r, c, _ = fit_rate(T, C * (T - origin) ** -rate, "algebraic", origin)
    assert r == pytest.approx(rate, rel=1e-9)
    assert c == pytest.approx(C, rel=1e-8)


def test_fit_rate_refuses_bad_input():
    with pytest.raises(InsufficientDataError):
        fit_rate([1.0, 2.0], [1.0, 0.5], "exponential")
    with pytest.raises(InsufficientDataError):
        fit_rate([1.0, 1.0, 2.0], [1.0, 0.9, 0.5], "exponential")
    with pytest.raises(ValueError, match="positive"):
        fit_rate([1.0, 2.0, 3.0], [1.0, 0.0, 0.5], "exponential")
    with pytest.raises(ValueError, match="model"):
        fit_rate([1.0, 2.0, 3.0], [1.0, 0.5, 0.2], "logistic")


def test_loglog_slope():
    x = np.array([0.2, 0.1, 0.05, 0.025])
    fit = loglog_slope(x, 3.0 * x**2)
    assert fit.slope == pytest.approx(2.0, rel=1e-12) and fit.halfwidth < 1e-10
    with pytest.raises(InsufficientDataError):
        loglog_slope([0.1, 0.1, 0.05], [1.0, 1.0, 0.5])


def test_cylinder_far_field_is_at_the_floor():
    st_ = solve_incompressible(build_mesh(CYL, L=10.0, n_s=6, h_z=0.25), np.pi)
    with pytest.warns(FloorWarning), pytest.raises(InsufficientDataError):
        far_field_rate(st_, 1.0, [2.0, 3.0, 4.0, 5.0], "exponential", min_T=0.0)


def test_far_field_window_guards():
    st_ = solve_incompressible(build_mesh(BUMP, L=6.0, n_s=4, h_z=0.25), np.pi)
    with pytest.raises(RangeError, match="start"):
        far_field_rate(st_, 1.0, [0.0, 1.0, 2.0], "exponential")
    with pytest.raises(ValueError, match="increasing"):
        far_field_rate(st_, 1.0, [3.0, 2.0, 4.0], "exponential")
    with pytest.raises(RangeError, match="inside"):
        window_deviation(st_, 1.0, 5.5)


def test_window_deviation_same_grid_reference_is_zero():
    st_ = solve_incompressible(build_mesh(BUMP, L=6.0, n_s=4, h_z=0.25), np.pi)
    assert window_deviation(st_, st_, 2.0) == (0.0, 0.0)
    d_inf, d_l2 = window_deviation(st_, (0.0, 1.0), 2.0)
    assert d_inf > 0.0 and d_l2 > 0.0


def test_mass_flux():
    mesh = build_mesh(BUMP, L=6.0, n_s=8, h_z=0.25)
    st_ = solve_compressible(mesh, GasModel(epsilon=0.1), None, np.pi)
    assert mass_flux(st_, mesh.L) == st_.achieved_flux
    assert mass_flux(st_, -2.3) == pytest.approx(np.pi, rel=1e-8)
    assert flux_deviation(st_) < 1e-8
    with pytest.raises(RangeError):
        mass_flux(st_, 6.5)


def test_bernoulli_and_pressure():
    mesh = build_mesh(CYL, L=4.0, n_s=4, h_z=0.25)
    p, res = bernoulli_and_pressure(solve_incompressible(mesh, np.pi))
    assert res == 0.0 and np.abs(p).max() < 1e-10
    bump = build_mesh(BUMP, L=6.0, n_s=8, h_z=0.25)
    gas = GasModel(epsilon=0.1)
    force = ForceField("radial_static", amplitude=0.1)
    st_ = solve_compressible(bump, gas, force, np.pi)
    p, res = bernoulli_and_pressure(st_)
    assert res < 1e-10
    wall = np.flatnonzero(bump.cell_transverse == bump.n_s - 1)
    speed = np.hypot(*st_.velocity[wall].T)
    assert np.argmin(p[wall]) == np.argmax(speed)


def test_low_mach_study_refuses_bad_lists():
    sc = Scenario(BUMP, L=6.0, n_s=4)
    with pytest.raises(InsufficientDataError):
        low_mach_study(sc, [0.1, 0.05], (-1.0, 1.0))
    with pytest.raises(ValueError, match="positive"):
        low_mach_study(sc, [0.1, 0.0, 0.05], (-1.0, 1.0))


def test_truncation_study_guards_and_cylinder():
    sc = Scenario(CYL, L=4.0, n_s=4, gas=GasModel(epsilon=0.1))
    with pytest.raises(ValueError, match="quarter"):
        truncation_study(sc, [4.0, 8.0, 16.0], (-1.5, 1.5))
    with pytest.raises(ValueError, match="increasing"):
        truncation_study(sc, [4.0, 4.0, 16.0], (-0.5, 0.5))
    rep = truncation_study(sc, [4.0, 6.0, 8.0], (-0.5, 0.5))
    assert all(r["delta"] < 1e-9 for r in rep.records)
    # a cylinder has nothing to truncate: the final delta is at the floor
    assert not rep.checks["final delta above solver floor"]


def test_uniqueness_same_init_is_exact():
    sc = Scenario(BUMP, L=6.0, n_s=4, gas=GasModel(epsilon=0.2))
    assert uniqueness_probe(sc, "incompressible", "incompressible") == 0.0
    assert uniqueness_probe(sc, "incompressible", "scaled") < 1e-7
    with pytest.raises(ValueError, match="initialization"):
        uniqueness_probe(sc, "incompressible", "random")


def test_worker_count_env(monkeypatch):
    monkeypatch.delenv("NOZZLEFLOW_WORKERS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("NOZZLEFLOW_WORKERS", "3")
    assert worker_count() == 3
    for bad in ("0", "two"):
        monkeypatch.setenv("NOZZLEFLOW_WORKERS", bad)
        with pytest.raises(ValueError, match="NOZZLEFLOW_WORKERS"):
            worker_count()


def test_studies_do_not_depend_on_worker_count():
    sc = Scenario(BUMP, L=6.0, n_s=4, force=ForceField("radial_static", amplitude=0.1))
    a = low_mach_study(sc, [0.2, 0.1, 0.05], (-1.0, 1.0), workers=1)
    b = low_mach_study(sc, [0.2, 0.1, 0.05], (-1.0, 1.0), workers=2)
    assert a.records == b.records
    assert a.fits["velocity_deviation"].slope == b.fits["velocity_deviation"].slope
