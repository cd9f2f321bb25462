import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from bmvd.drift import smooth_bump
from bmvd.experiments import symmetry_defect
from bmvd.geometry import STAR, DomainError, DomainSpec, Leg, ModelParams, polar_point
from bmvd.radial_pde import (KernelTable, SpectralPropagator, boundary_flux, build_grid,
                             chapman_kolmogorov_residual, domain_grid, flux_at_star, kernel_to_E, solve_kernel)

SYM = ModelParams(0.25, 2 * math.pi * 0.25)  # eta = 0


@pytest.fixture(scope="module")
def table():
    prm = ModelParams(0.25, 1.0)
    grid = build_grid(5.0, 5.0, prm, h=5e-3)
    return solve_kernel(0.0, 0.5, grid, times=[0.05, 0.1, 0.25, 0.5])


def test_mass_and_positivity(table):
    np.testing.assert_allclose(table.mass(), 1.0, atol=1e-6)
    assert table.values.min() >= -1e-12


def test_operator_symmetric_in_speed_measure(params):
    grid = build_grid(2.0, 3.0, params, h=1e-2, growth=1.02, h_max=0.05)
    assert symmetry_defect(grid) <= 1e-13


def test_flux_at_star_small(table):
    for t in (0.1, 0.25, 0.5):
        assert abs(flux_at_star(table, t)) < 1e-3


def test_flux_symmetric_case_vanishes_at_second_order():
    # eta = 0 with the source at a*: the kernel is even, so the flux is pure
    # truncation error of the one-sided differences
    flux = []
    for h in (1e-2, 5e-3, 2.5e-3):
        grid = build_grid(3.0, 3.0, SYM, h=h, curvature=False)
        tab = solve_kernel(0.0, 0.2, grid, times=[0.2])
        flux.append(abs(flux_at_star(tab, 0.2)))
    assert flux[0] / flux[1] > 3.5 and flux[1] / flux[2] > 3.5
    assert flux[2] < 1e-4


def test_gaussian_oracle_in_flat_symmetric_case():
    # eta = 0 and frozen plane density: plain Brownian motion with m~ = p dy
    grid = build_grid(4.0, 4.0, SYM, h=5e-3, curvature=False)
    t = 0.3
    tab = solve_kernel(-0.4, t, grid, times=[t])
    y = grid.y
    gauss = np.exp(-(y + 0.4) ** 2 / (2 * t)) / math.sqrt(2 * math.pi * t) / SYM.p
    assert np.max(np.abs(tab.at(t) - gauss)) < 2e-4


def test_absorbing_boundary_loses_mass(params):
    D = DomainSpec(0.5, 0.75)
    grid = domain_grid(D, params, h=5e-3)
    tab = solve_kernel(STAR, 0.3, grid, domain=D, times=[0.1, 0.3])
    m = tab.mass()
    assert m[1] < m[0] < 1.0
    assert boundary_flux(tab, 0.3, "right") < 0
    assert boundary_flux(tab, 0.3, "left") < 0


def test_domain_grid_mismatch_rejected(params):
    D = DomainSpec(0.5, 0.75)
    with pytest.raises(DomainError):
        solve_kernel(0.0, 0.1, build_grid(1.0, 1.0, params, h=1e-2), domain=D)


def test_chapman_kolmogorov_and_refinement(params):
    res = []
    for h in (1e-2, 5e-3):
        grid = build_grid(5.0, 5.0, params, h=h)
        tab = solve_kernel(0.0, 0.5, grid, times=[0.25, 0.5])
        res.append(chapman_kolmogorov_residual(tab, 0.25, 0.5, n_targets=11))
    assert res[1] < 5e-4
    assert res[0] / res[1] >= 3.0


def test_chapman_kolmogorov_guards(table):
    other = solve_kernel(0.0, 0.5, build_grid(5.0, 5.0, ModelParams(0.2, 1.0), h=5e-3), times=[0.25, 0.5])
    with pytest.raises(DomainError):
        chapman_kolmogorov_residual(table, 0.25, 0.5, other=other)
    drifted = solve_kernel(0.0, 0.5, table.grid, drift=smooth_bump(), times=[0.25, 0.5])
    with pytest.raises(DomainError):
        chapman_kolmogorov_residual(drifted, 0.25, 0.5)


def test_kernel_to_E_integrates_to_one(table, params):
    # integrate the m_p density over E: leg with weight p, plane in polar form
    t = 0.25
    r = np.linspace(1e-4, 5.0, 20001)
    leg = np.array([kernel_to_E(table, Leg(v), t) for v in r[::10]])
    plane = np.array([kernel_to_E(table, polar_point(v, 0.3, params), t) for v in r[::10]])
    rr = r[::10]
    total = (params.p * trapezoid(leg, rr) + trapezoid(plane * 2 * math.pi * (rr + params.eps), rr))
    assert total == pytest.approx(1.0, abs=2e-4)
    assert kernel_to_E(table, STAR, t) > 0


def test_kernel_to_E_plane_source_guard(params):
    grid = build_grid(2.0, 2.0, params, h=2e-2)
    tab = solve_kernel(0.5, 0.1, grid, times=[0.1])
    with pytest.raises(DomainError):
        kernel_to_E(tab, polar_point(0.3, 0.0, params), 0.1)
    assert kernel_to_E(tab, Leg(0.1), 0.1) > 0


def test_spectral_propagator_matches_crank_nicolson(params):
    grid = build_grid(3.0, 3.0, params, h=1e-2)
    prop = SpectralPropagator(grid)
    cn = solve_kernel(-0.3, 0.4, grid, times=[0.4], dt_factor=0.25)
    sp = prop.to_table(-0.3, [0.4])
    assert np.sum(np.abs(cn.at(0.4) - sp.at(0.4)) * grid.w) < 1e-4


def test_csv_roundtrip(tmp_path, table):
    path = tmp_path / "k.csv"
    table.to_csv(path)
    back = KernelTable.from_csv(path, table.params)
    np.testing.assert_array_equal(back.values, table.values)
    np.testing.assert_array_equal(back.times, table.times)


def test_bad_inputs(params):
    with pytest.raises(DomainError):
        build_grid(1.0, 1.0, params, h=0.5)
    grid = build_grid(1.0, 1.0, params, h=1e-2)
    with pytest.raises(DomainError):
        solve_kernel(0.0, -1.0, grid)
    with pytest.raises(DomainError):
        solve_kernel(0.0, 0.1, grid, times=[0.2])
