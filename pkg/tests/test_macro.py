import warnings

import numpy as np
import pytest

from beoltherm.macro import (
    BEOL,
    FEOL,
    SILICON,
    SILICON_K,
    BoundarySpec,
    CircularPatch,
    Convection,
    DirichletPatch,
    MacroError,
    MacroModel,
    PatchFlux,
    UniformFlux,
    assemble_macro,
    build_macro_mesh,
    graded_layers,
    microbump_patches,
    sample_plane,
    solve_macro,
)

H = 4.0  # W/(K mm^2)
PHI = 0.1256  # W/mm^2


def _small_mesh(**kw):
    kw.setdefault("elements_xy", (8, 8))
    return build_macro_mesh(**kw)


def _film(phi=PHI, h=H, t_amb=40.0, flux=None):
    return BoundarySpec(flux or UniformFlux(phi), Convection(h, t_amb))


def _beol_tensor(kxx=22.0, kyy=32.0, kzz=2.5):
    return np.diag([kxx, kyy, kzz])


def test_default_mesh_counts_and_interfaces():
    mesh = build_macro_mesh()
    g = mesh.grid
    assert len(mesh.region_layers(BEOL)) >= 2 and len(mesh.region_layers(FEOL)) >= 2
    n_si = len(mesh.region_layers(SILICON))
    # smallest n with dz_feol * (1.5^n - 1) / 0.5 >= 773.5, dz_feol = 0.75
    expected = int(np.ceil(np.log(1 + 773.5 * 0.5 / 0.75) / np.log(1.5)))
    assert n_si == expected and n_si <= 25
    assert g.nx * g.ny * g.nz <= 99_999
    assert mesh.interfaces == (4.3, 5.8)
    assert 4.3 in g.zs and 5.8 in g.zs and g.zs[-1] == 4.3 + 1.5 + 773.5
    assert np.allclose(np.diff(g.xs), 2.0) and np.allclose(np.diff(g.ys), 2.0)
    # silicon layers grow by the grading ratio
    dz = np.diff(g.zs)[mesh.region_layers(SILICON)]
    np.testing.assert_allclose(dz[1:-1] / dz[:-2], 1.5, rtol=1e-12)


def test_ratio_one_gives_uniform_spacing():
    np.testing.assert_allclose(graded_layers(10.0, 1.0, layers=4), 2.5)
    mesh = _small_mesh(grading=1.0, silicon_layers=5)
    dz = np.diff(mesh.grid.zs)[mesh.region_layers(SILICON)]
    np.testing.assert_allclose(dz, 773.5 / 5, rtol=1e-12)


def test_inexact_grading_warns_and_fits():
    with pytest.warns(UserWarning, match="last layer adjusted"):
        h = graded_layers(10.0, 2.0, first=1.0)
    assert h.sum() == pytest.approx(10.0)
    with pytest.raises(ValueError):
        graded_layers(1.0, 0.5, layers=3)


def test_three_element_smoke_case():
    mesh = build_macro_mesh(elements_xy=(1, 1), beol_layers=1, feol_layers=1, silicon_layers=1)
    assert mesh.grid.n_elements == 3
    field = solve_macro(MacroModel.isotropic(mesh), _film())
    assert field.report.converged and field.balance_error <= 1e-6


def test_interface_conformity_for_odd_thicknesses():
    mesh = build_macro_mesh((10.0, 7.0), (0.37, 1.13, 51.3), elements_xy=(3, 2), beol_layers=3, feol_layers=5)
    g = mesh.grid
    assert g.zs[3] == 0.37 and g.zs[8] == 0.37 + 1.13
    assert g.zs[-1] == 0.37 + 1.13 + 51.3


def _series_solution(mesh, phi, h, t_amb, kappas):
    """Exact 1D temperatures at every node plane for a uniform bottom flux."""
    phi_um = phi * 1e-6
    zs = mesh.grid.zs
    k_layer = np.array([kappas[r] for r in mesh.layer_region]) * 1e-6
    drop = phi_um * np.diff(zs) / k_layer
    t_top = t_amb + phi / h
    return t_top + np.concatenate([np.cumsum(drop[::-1])[::-1], [0.0]])


def test_uniform_flux_matches_series_resistance():
    mesh = _small_mesh()
    model = MacroModel.from_columns(mesh, _beol_tensor())
    field = solve_macro(model, _film())
    exact = _series_solution(mesh, PHI, H, 40.0, {BEOL: 2.5, FEOL: SILICON_K, SILICON: SILICON_K})
    T = field.nodal_grid()
    for k, value in enumerate(exact):
        assert np.ptp(T[:, :, k]) <= 1e-8
        assert T[0, 0, k] == pytest.approx(value, rel=1e-9)


def test_zero_flux_gives_ambient():
    field = solve_macro(MacroModel.isotropic(_small_mesh()), _film(phi=0.0))
    np.testing.assert_allclose(field.values, 40.0, rtol=0, atol=1e-12)
    assert field.power_in == 0.0 and field.balance_error == 0.0


def test_unanchored_system_raises():
    mesh = _small_mesh()
    with pytest.raises(MacroError, match="not anchored"):
        assemble_macro(MacroModel.isotropic(mesh), BoundarySpec(UniformFlux(PHI), Convection(0.0, 40.0)))
    with pytest.raises(MacroError, match="not anchored"):
        assemble_macro(MacroModel.isotropic(mesh), BoundarySpec(UniformFlux(PHI)))


def test_boundary_validation():
    mesh = _small_mesh()
    outside = PatchFlux((CircularPatch((95.0, 50.0), 20.0),), 1.0)
    with pytest.raises(ValueError, match="outside the footprint"):
        assemble_macro(MacroModel.isotropic(mesh), _film(flux=outside))
    with pytest.raises(ValueError, match=">= 0"):
        assemble_macro(MacroModel.isotropic(mesh), _film(h=-1.0))


def test_patch_power_and_maximum_principle():
    mesh = build_macro_mesh(elements_xy=(50, 50))
    model = MacroModel.from_columns(mesh, _beol_tensor())
    field = solve_macro(model, _film(flux=PatchFlux(microbump_patches(), 1.0)))
    # four 10 um radius circles at 1 W/mm^2
    assert field.power_in == pytest.approx(4 * np.pi * (10e-3) ** 2, rel=0.01)
    assert field.balance_error <= 1e-6
    assert field.values.min() >= 40.0 - 1e-9


def test_linearity_and_superposition():
    mesh = _small_mesh(elements_xy=(10, 10))
    model = MacroModel.from_columns(mesh, _beol_tensor())
    a = PatchFlux((CircularPatch((30.0, 30.0), 20.0),), 1.0)
    b = PatchFlux((CircularPatch((70.0, 60.0), 20.0),), 1.0)
    both = PatchFlux(a.patches + b.patches, 1.0)
    rise = lambda bc: solve_macro(model, bc, tol=1e-12).values - 40.0  # noqa: E731
    ra, rb, rab = rise(_film(flux=a)), rise(_film(flux=b)), rise(_film(flux=both))
    np.testing.assert_allclose(rab, ra + rb, rtol=0, atol=1e-9 * rab.max())
    double = rise(_film(phi=2 * PHI))
    np.testing.assert_allclose(double, 2 * rise(_film()), rtol=1e-9)


def test_reduced_beol_kzz_heats_the_bottom():
    mesh = _small_mesh(elements_xy=(10, 10))
    bc = _film(flux=PatchFlux(microbump_patches(), 1.0))
    base = solve_macro(MacroModel.from_columns(mesh, _beol_tensor()), bc)
    soft = solve_macro(MacroModel.from_columns(mesh, _beol_tensor(kzz=0.25)), bc)
    bb0 = sample_plane(base, 0.0, (21, 21)).values
    bb1 = sample_plane(soft, 0.0, (21, 21)).values
    assert np.all(bb1 > bb0)


def test_dirichlet_top_surface_carries_the_power():
    mesh = _small_mesh()
    bc = BoundarySpec(UniformFlux(PHI), None, (DirichletPatch("top", 25.0),))
    field = solve_macro(MacroModel.isotropic(mesh), bc)
    T = field.nodal_grid()
    np.testing.assert_allclose(T[:, :, -1], 25.0, atol=1e-12)
    drop = PHI * (4.3 + 1.5 + 773.5) / SILICON_K
    np.testing.assert_allclose(T[:, :, 0], 25.0 + drop, rtol=1e-9)
    assert field.power_dirichlet == pytest.approx(field.power_in, rel=1e-8)
    assert field.power_convected == 0.0


def test_dirichlet_patch_with_film():
    mesh = _small_mesh(elements_xy=(10, 10))
    bc = BoundarySpec(None, Convection(H, 40.0), (DirichletPatch("bottom", 60.0, CircularPatch((50.0, 50.0), 30.0)),))
    field = solve_macro(MacroModel.isotropic(mesh), bc)
    assert field.balance_error <= 1e-6
    assert field.power_dirichlet < 0  # heat enters through the held patch
    assert 40.0 - 1e-9 <= field.values.min() and field.values.max() <= 60.0 + 1e-9


def test_body_load_refinement_converges_monotonically():
    # uniform silicon block with a body load: T is quadratic in z, so the
    # interpolated mid-block value converges under z-refinement
    q = 1e-12  # W/um^3
    L = 4.3 + 1.5 + 773.5
    z = 0.37 * L
    kum = SILICON_K * 1e-6
    exact = 40.0 + (PHI * 1e-6 + q * L) / (H * 1e-6) + (PHI * 1e-6 * (L - z) + 0.5 * q * (L**2 - z**2)) / kum
    errors = []
    for n in (4, 8, 16, 32):
        mesh = build_macro_mesh(elements_xy=(2, 2), grading=1.0, silicon_layers=n)
        model = MacroModel.isotropic(mesh)
        model.body_load = q
        field = solve_macro(model, _film(), tol=1e-12)
        assert field.balance_error <= 1e-6
        errors.append(abs(sample_plane(field, z, (3, 3)).values.mean() - exact))
    assert all(b < a for a, b in zip(errors, errors[1:]))
    assert errors[-1] < 0.3 * errors[0] / 16


def test_sample_plane_rules():
    mesh = _small_mesh()
    field = solve_macro(MacroModel.from_columns(mesh, _beol_tensor()), _film(flux=PatchFlux(microbump_patches(), 1.0)))
    k = 3
    s = sample_plane(field, float(mesh.grid.zs[k]))
    np.testing.assert_array_equal(s.values, field.nodal_grid()[:, :, k])
    assert list(s.rows())[1] == (s.x[1], s.y[0], s.values[1, 0])
    with pytest.raises(ValueError, match="outside the domain"):
        sample_plane(field, -0.1)
    flat = solve_macro(MacroModel.isotropic(mesh), _film(phi=0.0))
    assert np.ptp(sample_plane(flat, 100.0, (7, 5)).values) == 0.0


def test_sample_plane_linear_field_at_interface():
    mesh = _small_mesh()
    field = solve_macro(MacroModel.from_columns(mesh, _beol_tensor()), _film())
    exact = _series_solution(mesh, PHI, H, 40.0, {BEOL: 2.5, FEOL: SILICON_K, SILICON: SILICON_K})
    z = 0.5 * (mesh.grid.zs[0] + mesh.grid.zs[1])
    img = sample_plane(field, z, (11, 11)).values
    np.testing.assert_allclose(img, 0.5 * (exact[0] + exact[1]), rtol=1e-9)
    img = sample_plane(field, mesh.interfaces[0], (11, 11)).values
    np.testing.assert_allclose(img, exact[len(mesh.region_layers(BEOL))], rtol=1e-9)


def test_non_spd_beol_tensor_rejected():
    with pytest.raises(ValueError, match="positive definite"):
        MacroModel.from_columns(_small_mesh(), np.diag([1.0, 1.0, -1.0]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        MacroModel.from_columns(_small_mesh(), _beol_tensor())
