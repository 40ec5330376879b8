from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from spraycoal.cases import build_case
from spraycoal.errors import ConfigError, FlowReversalError
from spraycoal.harness import run_case
from spraycoal.multifluid import (MultifluidOptions, MultifluidRhs, _mf_sources, build_sections,
                                  coalescence_sources, direct_rectangle_integral, initial_section_state,
                                  precompute_coalescence, precompute_evap_drag, reconstruct_ndf,
                                  section_mass_roundtrip, solve_multifluid)
from spraycoal.physics import FOUR_PI_3, DragLaw, EvaporationLaw

RHO = 649.4
seeds = st.integers(min_value=0, max_value=2**32 - 1).map(np.random.default_rng)


@pytest.fixture(scope="module")
def coal_grid():
    grid = build_sections(12, 60e-6, "uniform_radius", RHO)
    return grid, precompute_coalescence(grid)


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------
def test_uniform_radius_boundaries():
    grid = build_sections(10, 35e-6)
    np.testing.assert_allclose(grid.r_bounds, 3.5e-6 * np.arange(11), rtol=0, atol=1e-18)


def test_single_section_spans_everything():
    grid = build_sections(1, 35e-6)
    assert grid.N == 1
    np.testing.assert_allclose(grid.v_bounds, [0.0, FOUR_PI_3 * 35e-6**3])


@pytest.mark.parametrize("N, r_max", [(0, 35e-6), (5, 0.0), (5, -1e-6)])
def test_bad_grid_is_rejected(N, r_max):
    with pytest.raises(ConfigError):
        build_sections(N, r_max)


def test_optimal12_refines_small_radii():
    grid = build_sections(12, 35e-6, "optimal12")
    widths = np.diff(grid.r_bounds)
    np.testing.assert_allclose(widths[:8], 17.5e-6 / 8)
    np.testing.assert_allclose(widths[8:], 17.5e-6 / 4)
    with pytest.raises(ConfigError):
        build_sections(10, 35e-6, "optimal12")


@pytest.mark.parametrize("spacing", ["uniform_radius", "geometric"])
@pytest.mark.parametrize("N", [1, 3, 17])
def test_shapes_carry_unit_mass(spacing, N):
    grid = build_sections(N, 50e-6, spacing, RHO)
    for j in range(N):
        a, b = grid.r_bounds[j], grid.r_bounds[j + 1]
        mass, _ = quad(lambda r: RHO * FOUR_PI_3 * r**3 * float(grid.g(j, np.array([r]))[0]), a, b,
                       epsabs=0, epsrel=1e-12)
        assert mass == pytest.approx(1.0, rel=1e-10)


def test_last_section_mean_radius_at_its_centre():
    grid = build_sections(6, 60e-6)
    a, b = grid.r_bounds[-2:]
    g = lambda r: float(grid.g(5, np.array([r]))[0])  # noqa: E731
    num, _ = quad(lambda r: r * g(r), a, b, epsrel=1e-12)
    den, _ = quad(g, a, b, epsrel=1e-12)
    assert num / den == pytest.approx(0.5 * (a + b), rel=1e-9)


# ---------------------------------------------------------------------------
# evaporation and drag coefficients
# ---------------------------------------------------------------------------
def test_no_evaporation_gives_zero_coefficients():
    c = precompute_evap_drag(build_sections(8, 35e-6), EvaporationLaw.none(), 1.566e-7)
    assert not c.E1.any() and not c.E2.any()


def test_linear_law_loses_mass_at_the_evaporation_rate():
    c = precompute_evap_drag(build_sections(8, 35e-6), EvaporationLaw.linear(7.1262), 1.566e-7)
    np.testing.assert_allclose(c.E2, 7.1262, rtol=1e-12)


def test_nonlinear_coefficients_against_adaptive_quadrature():
    grid = build_sections(6, 35e-6)
    Es = 1.99e-7
    c = precompute_evap_drag(grid, EvaporationLaw.nonlinear(Es), 1.566e-7)
    for j in range(grid.N):
        a, b = grid.r_bounds[j], grid.r_bounds[j + 1]
        g = lambda r: float(grid.g(j, np.array([r]))[0])  # noqa: E731
        # R_v = -(Es / 2) r
        E2, _ = quad(lambda r: RHO * 0.5 * Es * r * g(r), a, b, epsabs=0, epsrel=1e-13)
        assert c.E2[j] == pytest.approx(E2, rel=1e-8)
        # mass flux through the lower boundary: rho v(a) |R_v(a)| kappa(a), kappa = g / (4 pi a^2)
        E1 = RHO * FOUR_PI_3 * a**3 * 0.5 * Es * a * g(a) / (4 * np.pi * a * a) if a > 0 else 0.0
        assert c.E1[j] == pytest.approx(E1, rel=1e-12, abs=1e-300)


def test_drag_volume_lies_inside_its_section():
    grid = build_sections(9, 45e-6, "geometric")
    c = precompute_evap_drag(grid, EvaporationLaw.none(), 1.566e-7)
    vb = grid.v_bounds
    assert np.all(c.v_u > vb[:-1]) and np.all(c.v_u < vb[1:])


# ---------------------------------------------------------------------------
# coalescence tables
# ---------------------------------------------------------------------------
def test_single_section_has_no_appearance_strips():
    tables = precompute_coalescence(build_sections(1, 35e-6))
    assert tables.strip_count().tolist() == [0]


def test_disappearance_integrals_against_direct_quadrature(coal_grid):
    grid, tables = coal_grid
    for j, k in [(3, 1), (7, 2), (11, 10), (5, 9)]:
        assert tables.Q[j, k] == pytest.approx(direct_rectangle_integral(grid, j, k), rel=1e-8)


@given(seeds)
def test_coalescence_conserves_mass_and_momentum(coal_grid, rng):
    _, tables = coal_grid
    m = rng.uniform(0.0, 1.0, 12) * (rng.uniform(size=12) < 0.8)
    u = rng.uniform(0.5, 5.0, 12)
    Cm, Cmu = coalescence_sources(m, u, tables)
    assert abs(Cm.sum()) <= 1e-8 * np.abs(Cm).sum() + 1e-300
    assert abs(Cmu.sum()) <= 1e-8 * np.abs(Cmu).sum() + 1e-300


def test_equal_velocities_do_not_coalesce(coal_grid):
    _, tables = coal_grid
    Cm, Cmu = coalescence_sources(np.ones(12), np.full(12, 2.0), tables)
    assert not Cm.any() and not Cmu.any()


def test_merged_peaks_land_in_the_section_of_the_summed_volume():
    grid = build_sections(40, 40e-6)
    tables = precompute_coalescence(grid)
    m = np.zeros(40)
    u = np.full(40, 2.0)
    small, big = grid.locate([10e-6, 30e-6])
    m[small] = m[big] = 1.0
    u[small] = 1.0
    Cm, _ = coalescence_sources(m, u, tables)
    gained = np.nonzero(Cm > 0)[0]
    # sections are 1 um wide: 10 um + 30 um droplets merge into radii around 30.37 um
    merged = grid.locate(np.cbrt(10e-6**3 + 30e-6**3))
    assert merged in gained
    assert set(gained) <= set(range(big, big + 3))


# ---------------------------------------------------------------------------
# sources and the march
# ---------------------------------------------------------------------------
def test_dirac_peaks_go_to_their_sections():
    case = build_case("bi_lin_nocoal")
    grid = build_sections(30, 35e-6)
    m, u = initial_section_state(grid, case)
    full = np.nonzero(m)[0]
    assert full.tolist() == sorted(grid.locate([10e-6, 30e-6]).tolist())
    assert m.sum() == pytest.approx(case.init.m0_inj, rel=1e-12)
    # 27 times more small droplets, so the two peaks carry equal mass
    assert m[full[1]] == pytest.approx(m[full[0]], rel=1e-12)
    np.testing.assert_array_equal(u, case.gas.V0)


@given(seeds)
def test_evaporation_cascade_telescopes(rng):
    grid = build_sections(10, 35e-6)
    c = precompute_evap_drag(grid, EvaporationLaw.nonlinear(), 1.566e-7)
    m = rng.uniform(0.0, 1.0, 10)
    u = rng.uniform(0.5, 5.0, 10)
    empty = np.zeros(0, dtype=np.int64)
    Sm, _ = _mf_sources(m, u, c.E1, c.E2, np.zeros((10, 10)), empty, empty, empty, np.zeros(0), np.zeros(0))
    assert Sm.sum() == pytest.approx(-c.E1[0] * m[0] - np.sum(c.E2 * m), rel=1e-12)


def test_free_flight_keeps_the_area_weighted_flux():
    case = replace(build_case("mono_noevap_nocoal"), drag=DragLaw(0.0))
    z = np.linspace(case.z0, case.z_end, 9)
    res = solve_multifluid(case, MultifluidOptions(N=10, rtol=1e-9), z)
    flux = res.m * res.u * (res.z[:, None] / case.z0) ** 2
    np.testing.assert_allclose(flux, np.broadcast_to(flux[0], flux.shape), rtol=1e-6)
    np.testing.assert_allclose(res.u, case.gas.V0, rtol=1e-9)


def test_mass_budget_matches_evaporation_losses():
    case = build_case("mono_nonlin_nocoal")
    z = np.linspace(case.z0, 0.2, 2001)
    res = solve_multifluid(case, MultifluidOptions(N=12, rtol=1e-9), z)
    c = res.coeffs
    area = (res.z / case.z0) ** 2
    flux = np.sum(res.m * res.u, axis=1) * area
    loss = (c.E1[0] * res.m[:, 0] + res.m @ c.E2) * area
    dflux = np.gradient(flux, res.z)
    inner = slice(5, -5)
    np.testing.assert_allclose(dflux[inner], -loss[inner], rtol=2e-3, atol=2e-3 * np.max(loss))


def test_reversed_section_velocity_aborts():
    case = build_case("mono_lin_nocoal")
    grid = build_sections(4, 35e-6)
    rhs = MultifluidRhs(grid, precompute_evap_drag(grid, case.evap, case.drag.alpha), None, case, 1e-20)
    with pytest.raises(FlowReversalError):
        rhs(case.z0, np.array([1.0, 1.0, 1.0, 1.0, 2.0, -0.1, 2.0, 2.0]))


# ---------------------------------------------------------------------------
# reconstruction
# ---------------------------------------------------------------------------
def test_single_constant_section_reconstructs_flat():
    grid = build_sections(1, 35e-6, last_section="constant")
    rec = reconstruct_ndf(np.array([1.0]), grid)
    np.testing.assert_allclose(rec.number_per_radius, 3.0 / (RHO * np.pi * 35e-6**4), rtol=1e-10)


def test_empty_section_reconstructs_to_zero():
    grid = build_sections(5, 35e-6)
    rec = reconstruct_ndf(np.array([1.0, 0.0, 2.0, 0.0, 1.0]), grid)
    assert not rec.number_per_radius[np.isin(rec.section, [1, 3])].any()


@given(seeds)
def test_reconstruction_round_trip(rng):
    grid = build_sections(7, 40e-6)
    m = rng.uniform(0.0, 5.0, 7)
    np.testing.assert_allclose(section_mass_roundtrip(m, grid), m, rtol=1e-10)


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------
def _successive_gaps(case_id, Ns):
    m1 = [run_case(case_id, "multifluid", MultifluidOptions(N=N), n_points=60).series.m1 for N in Ns]
    return np.array([np.max(np.abs(a - b)) / np.max(b) for a, b in zip(m1, m1[1:])])


def test_smooth_case_converges_at_least_first_order():
    gaps = _successive_gaps("mono_lin_coal", (50, 100, 200, 400))
    # measured ratios are about 2.9; first order means at least 2 (20% slack)
    assert np.all(gaps[:-1] / gaps[1:] >= 1.6)


@pytest.mark.xfail(strict=True, reason="Dirac peaks deposited whole into one section make the gap "
                   "between successive grids irregular; measured ratios 1.97, 1.20")
def test_bimodal_case_halves_its_error_per_doubling():
    gaps = _successive_gaps("bi_lin_coal", (62, 125, 250, 500))
    np.testing.assert_allclose(gaps[:-1] / gaps[1:], 2.0, rtol=0.2)
