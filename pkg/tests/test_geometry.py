import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nozzleflow.errors import MeshError, ProfileError, RangeError
from nozzleflow.geometry import (
    AXISYMMETRIC,
    PLANAR,
    Bump,
    NozzleProfile,
    algebraic_tail,
    build_mesh,
    build_profile,
    section_area,
)


def test_cylinder_profile():
    p = build_profile("cylinder")
    z = np.linspace(-50, 50, 101)
    np.testing.assert_array_equal(p.f1(z), 1.0)
    np.testing.assert_array_equal(p.f2(z), 0.0)


def test_algebraic_profile_value_downstream():
    p = build_profile("algebraic", K=5.0, a1=2.0, amplitude=0.2)
    assert abs(p.f1(10.0) - 1.0) == pytest.approx(0.2 * 6.0**-2, rel=1e-14)
    assert abs(p.f1(10.0) - 1.0) == pytest.approx(0.00556, abs=5e-6)


def test_bump_profile():
    p = build_profile("cylinder", obstacle=Bump(0.3, -1.0, 1.0))
    assert p.f2(-1.0) == 0.0 and p.f2(1.0) == pytest.approx(0.0, abs=1e-16)
    z = np.linspace(-1, 1, 2001)
    assert p.f2(z).max() == pytest.approx(0.3, rel=1e-12)
    assert (p.f1(z) - p.f2(z)).min() >= 0.7 - 1e-12


def test_flat_beyond_K_is_exactly_one_downstream():
    p = build_profile("flat_beyond_K", K=2.0, amplitude=0.3, width=2.0)
    z = np.linspace(2.0, 40.0, 500)
    np.testing.assert_array_equal(p.f1(z), 1.0)
    assert p.f1(-10.0) == pytest.approx(1.3)


def test_profile_errors_name_the_bound():
    with pytest.raises(ProfileError, match="a1 > 0"):
        build_profile("algebraic", a1=-1.0, amplitude=0.2)
    with pytest.raises(ProfileError, match="f1 >= 1/2"):
        build_profile("algebraic", a1=2.0, amplitude=-0.8)
    with pytest.raises(ProfileError, match="f1 - f2"):
        build_profile("cylinder", obstacle=Bump(0.99, -1.0, 1.0))
    with pytest.raises(ProfileError):
        build_profile("spiral")


def test_algebraic_tail_is_c2_at_joins():
    for a in (0.5, 1.5, 2.0, 3.0):
        for xi in (-1.0, 0.0):
            for k in range(3):
                lo = algebraic_tail(xi - 1e-9, a, k)
                hi = algebraic_tail(xi + 1e-9, a, k)
                assert lo == pytest.approx(hi, abs=1e-6)


def test_algebraic_tail_derivatives_by_finite_differences():
    xi = np.linspace(-1.8, 20.0, 301)
    h = 1e-6
    for a in (1.5, 2.0):
        for k in (1, 2):
            fd = (algebraic_tail(xi + h, a, k - 1) - algebraic_tail(xi - h, a, k - 1)) / (2 * h)
            np.testing.assert_allclose(fd, algebraic_tail(xi, a, k), atol=1e-6)


def test_algebraic_envelope_bound():
    p = build_profile("algebraic", K=2.0, a1=2.0, amplitude=0.2)
    C = p.envelope_constant()
    z = np.linspace(p.K + 1e-9, 200.0, 4000)
    total = sum(np.abs(z**k * p.f1(z, k) - (1.0 if k == 0 else 0.0)) for k in range(3))
    assert np.all(total <= C * z**-2.0 * (1 + 1e-12))
    # centred second differences stay under the same envelope for z > K + 1
    zz = np.linspace(p.K + 1.0, 60.0, 400)
    h = 1e-3
    d2 = (p.f1(zz + h) - 2 * p.f1(zz) + p.f1(zz - h)) / h**2
    assert np.all(np.abs(zz**2 * d2) <= C * zz**-2.0)


def test_mesh_node_counts_and_affine_jacobians():
    mesh = build_mesh(build_profile("cylinder"), L=10.0, n_s=4, h_z=0.5)
    assert mesh.shape == (41, 5)
    assert mesh.n_nodes == 205 and mesh.n_cells == 160
    from nozzleflow.fem import discretize

    det = discretize(mesh).W / mesh.weight(discretize(mesh).gp[..., 0])
    np.testing.assert_allclose(det, det.flat[0], rtol=1e-14)
    assert det.min() > 0.0


def test_mesh_node_map():
    p = build_profile("algebraic", K=0.0, a1=2.0, amplitude=0.2, obstacle=Bump(0.3, -2.0, 0.0))
    mesh = build_mesh(p, L=8.0, n_s=6, h_z=0.25)
    assert mesh.min_jacobian > 0.0
    for j in (0, 20, 28, 40, 64):
        z = mesh.z_stations[j]
        r = mesh.nodes[mesh.station_nodes(j), 0]
        np.testing.assert_allclose(r, p.f2(z) + mesh.s * (p.f1(z) - p.f2(z)), rtol=0, atol=1e-15)
        assert np.all(mesh.nodes[mesh.station_nodes(j), 1] == z)


def test_bump_band_cells_are_annular():
    p = build_profile("cylinder", obstacle=Bump(0.3, -1.0, 1.0))
    mesh = build_mesh(p, L=6.0, n_s=8, h_z=0.25)
    j = mesh.station_index(0.0)
    assert mesh.nodes[mesh.station_nodes(j)[0], 0] == pytest.approx(0.3)


def test_boundary_tags_complete_and_disjoint():
    p = build_profile("cylinder", obstacle=Bump(0.3, -1.0, 1.0))
    mesh = build_mesh(p, L=6.0, n_s=4, h_z=0.5)
    tags = mesh.boundary_tags
    allnodes = np.concatenate(list(tags.values()))
    assert len(allnodes) == len(np.unique(allnodes))
    j, i = np.divmod(allnodes, mesh.n_s + 1)
    on_boundary = (j == 0) | (j == mesh.n_z) | (i == 0) | (i == mesh.n_s)
    assert on_boundary.all()
    expected = 2 * (mesh.n_s + 1) + 2 * (mesh.n_z - 1)
    assert len(allnodes) == expected
    assert len(tags["obstacle_wall"]) > 0 and len(tags["axis"]) > 0


def test_mesh_errors():
    p = build_profile("cylinder", obstacle=Bump(0.3, -1.0, 1.0))
    with pytest.raises(MeshError, match="L must exceed"):
        build_mesh(p, L=2.5, n_s=4, h_z=0.5)
    with pytest.raises(MeshError, match="n_s"):
        build_mesh(build_profile("cylinder"), L=5.0, n_s=3, h_z=0.5)
    with pytest.raises(MeshError, match="h_z"):
        build_mesh(build_profile("cylinder"), L=5.0, n_s=4, h_z=0.0)


def test_section_areas():
    cyl = build_mesh(build_profile("cylinder"), L=4.0, n_s=4, h_z=0.5)
    for t in (-4.0, -1.3, 0.0, 4.0):
        assert section_area(cyl, t) == pytest.approx(np.pi, rel=1e-14)
    planar = build_mesh(build_profile("cylinder"), L=4.0, n_s=4, h_z=0.5, symmetry=PLANAR)
    assert section_area(planar, 1.0) == pytest.approx(1.0, rel=1e-14)
    bump = build_mesh(build_profile("cylinder", obstacle=Bump(0.3, -1.0, 1.0)), L=4.0, n_s=8, h_z=0.25)
    assert section_area(bump, 0.0) == pytest.approx(np.pi * (1 - 0.09), rel=1e-13)
    assert section_area(bump, 0.0) == pytest.approx(2.8588, abs=5e-5)
    with pytest.raises(RangeError):
        section_area(cyl, 4.5)


def test_section_area_refinement_consistency():
    p = build_profile("algebraic", K=0.0, a1=2.0, amplitude=0.2)
    coarse = build_mesh(p, L=4.0, n_s=4, h_z=0.5)
    fine = build_mesh(p, L=4.0, n_s=8, h_z=0.25)
    for t in (-4.0, -2.0, 0.5, 3.0):
        assert section_area(coarse, t) == pytest.approx(section_area(fine, t), rel=1e-12)
        assert section_area(fine, t) == pytest.approx(np.pi * p.f1(t) ** 2, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(-0.3, 0.4), st.floats(-3.0, 3.0))
def test_algebraic_profiles_give_valid_meshes(a1, amplitude, K):
    try:
        p = build_profile("algebraic", K=K, a1=a1, amplitude=amplitude)
    except ProfileError as exc:
        # only the f1 >= 1/2 bound may reject these parameters
        assert "f1 >= 1/2" in str(exc)
        z = np.linspace(K - 5, K + 5, 2001)
        assert (1.0 + amplitude * algebraic_tail(z - K, a1)).min() < 0.5
        return
    mesh = build_mesh(p, L=6.0, n_s=4, h_z=0.5)
    assert mesh.min_jacobian > 0.0
    assert p.bound >= 1.0


def test_profile_params_round_trip():
    p = build_profile("algebraic", K=1.0, a1=1.5, amplitude=0.1, obstacle=Bump(0.2, -3.0, -1.0))
    q = NozzleProfile.from_params({k: str(v) for k, v in p.params().items()})
    z = np.linspace(-10, 10, 101)
    np.testing.assert_array_equal(p.f1(z), q.f1(z))
    np.testing.assert_array_equal(p.f2(z), q.f2(z))


def test_symmetry_constants():
    assert AXISYMMETRIC == "axisymmetric" and PLANAR == "planar"
