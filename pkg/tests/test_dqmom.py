from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import linalg
from scipy.integrate import quad, solve_ivp

from spraycoal.cases import build_case
from spraycoal.dqmom import (DqmomOptions, MomentSet, QuadratureState, assemble_coalescence_system,
                             coalescence_rhs, condition_probe, evaporative_flux_sources, general_source_moments,
                             initial_state, moment_matching_residual, perturb_coincident_abscissas,
                             solve_coalescence, solve_dqmom, total_sources)
from spraycoal.errors import ConfigError, IllConditionedError, SingularSystemError
from spraycoal.linsolve import solve_with_refinement
from spraycoal.physics import (FOUR_PI_3, CoalescenceModel, DragLaw, EvaporationLaw, collision_frequency,
                               volume_from_radius)

ON = CoalescenceModel(1.0)


def random_state(rng, N, r_max=60e-6):
    # radii at least 5% apart, as quadrature nodes are; near-coincident pairs are covered separately
    r = np.cumprod(rng.uniform(1.05, 1.8, N))
    r = 3e-6 + (r_max - 3e-6) * r / r[-1] * rng.uniform(0.5, 1.0)
    return QuadratureState(rng.uniform(1e9, 1e11, N), volume_from_radius(r), rng.uniform(0.5, 5.0, N))


states = st.integers(min_value=0, max_value=2**32 - 1).map(np.random.default_rng)


def test_moment_sets():
    th = MomentSet.build("thirds", 3)
    np.testing.assert_allclose(th.k, [0, 1 / 3, 2 / 3, 1, 4 / 3, 5 / 3, 1 / 3, 1, 5 / 3])
    np.testing.assert_array_equal(th.m, [0] * 6 + [1] * 3)
    it = MomentSet.build("integer", 2)
    np.testing.assert_allclose(it.k, [0, 1 / 3, 2 / 3, 1, 1, 2])
    with pytest.raises(ConfigError):
        MomentSet.build("halves", 2)


def test_flux_round_trip(rng):
    s = random_state(rng, 5)
    back = QuadratureState.from_fluxes(s.fluxes())
    for a, b in ((s.w_star, back.w_star), (s.v, back.v), (s.xi, back.xi)):
        np.testing.assert_allclose(a, b, rtol=1e-14)


def brute_force_p(state, k, m, z, z0):
    total = 0.0
    for n in range(state.N):
        for q in range(state.N):
            B = collision_frequency(ON, abs(state.xi[n] - state.xi[q]), state.v[n], state.v[q])
            vv = state.v[n] + state.v[q]
            u = (state.v[n] * state.xi[n] + state.v[q] * state.xi[q]) / vv
            total += state.w_star[n] * state.w_star[q] * B * (
                vv**k * u**m - state.v[n] ** k * state.xi[n] ** m - state.v[q] ** k * state.xi[q] ** m)
    return 0.5 * (z0 / z) ** 2 * total


def test_coalescence_moments_match_brute_force(rng):
    for _ in range(5):
        s = random_state(rng, 3)
        mset = MomentSet.build("thirds", 3)
        P = coalescence_rhs(s, mset, 0.17, 0.10, ON)
        for i, (k, m) in enumerate(zip(mset.k, mset.m)):
            assert P[i] == pytest.approx(brute_force_p(s, k, int(m), 0.17, 0.10), rel=1e-12)
        assert P[0] < 0.0


def test_equal_velocities_give_no_coalescence():
    s = QuadratureState(np.array([1e10, 1e9]), volume_from_radius(np.array([10e-6, 30e-6])), np.array([2.0, 2.0]))
    assert not np.any(coalescence_rhs(s, MomentSet.build("thirds", 2), 0.1, 0.1, ON))


@given(states, st.integers(min_value=2, max_value=7))
def test_pure_coalescence_conserves_mass_and_momentum(gen, N):
    s = random_state(gen, N)
    mset = MomentSet.build("thirds", N)
    P = coalescence_rhs(s, mset, 0.12, 0.10, ON)
    W = s.w_star[:, None] * s.w_star[None, :] * collision_frequency(
        ON, np.abs(s.xi[:, None] - s.xi[None, :]), s.v[:, None], s.v[None, :])
    gain_mass = 0.5 * np.sum(W * (s.v[:, None] + s.v[None, :]))
    gain_mom = 0.5 * np.sum(W * (s.v * s.xi)[:, None] + W * (s.v * s.xi)[None, :])
    i10 = np.nonzero((mset.k == 1) & (mset.m == 0))[0][0]
    i11 = np.nonzero((mset.k == 1) & (mset.m == 1))[0][0]
    assert abs(P[i10]) <= 1e-12 * gain_mass
    assert abs(P[i11]) <= 1e-12 * gain_mom
    # the solved sources carry the same conservation: sum b* = 0, sum c* = 0
    a, b, c = _solve_or_ill_conditioned(s, mset)
    if a is None:
        return
    assert abs(b.sum()) <= 1e-10 * np.abs(b).sum()
    assert abs(c.sum()) <= 1e-10 * np.abs(c).sum()


def _solve_or_ill_conditioned(s, mset):
    """Solved sources, or ``(None,) * 3`` when the solver refuses a badly conditioned state.

    With random node velocities the scaled matrix for N >= 5 can reach
    condition numbers near 1e12 and beyond, where no double-precision vector
    meets the 1e-12 residual target; the solver must then raise with the
    condition estimate instead of returning an inaccurate answer.
    """
    try:
        return solve_coalescence(s, mset, 0.12, 0.10, ON)
    except IllConditionedError as exc:
        assert exc.condition > 1e10 and exc.residual > 1e-12
        return None, None, None


@given(states, st.integers(min_value=1, max_value=6))
def test_solved_sources_match_every_moment(gen, N):
    s = random_state(gen, N)
    mset = MomentSet.build("thirds", N)
    P = coalescence_rhs(s, mset, 0.1, 0.1, ON)
    if not np.any(P):
        return
    sysm = assemble_coalescence_system(s, mset, P)
    try:
        x, _ = solve_with_refinement(sysm.matrix, sysm.rhs)
    except IllConditionedError as exc:
        assert exc.condition > 1e10
        return
    assert moment_matching_residual(sysm, x) <= 1e-10


def test_dense_oracle_agreement(rng):
    s = random_state(rng, 3)
    mset = MomentSet.build("thirds", 3)
    P = coalescence_rhs(s, mset, 0.1, 0.1, ON)
    sysm = assemble_coalescence_system(s, mset, P, scaled=False)
    assert np.isfinite(np.linalg.cond(sysm.matrix))
    lu = linalg.lu_factor(sysm.matrix)
    oracle = linalg.lu_solve(lu, sysm.rhs)
    a, b, c = solve_coalescence(s, mset, 0.1, 0.1, ON)
    np.testing.assert_allclose(np.concatenate([a, b, c]), oracle, rtol=1e-10,
                               atol=1e-10 * np.abs(oracle).max())


@pytest.mark.parametrize("N", [2, 3, 5])
def test_block_route_matches_dense_route(rng, N):
    s = random_state(rng, N)
    mset = MomentSet.build("thirds", N)
    dense = np.concatenate(solve_coalescence(s, mset, 0.1, 0.1, ON, route="dense"))
    block = np.concatenate(solve_coalescence(s, mset, 0.1, 0.1, ON, route="block"))
    np.testing.assert_allclose(block, dense, rtol=1e-8, atol=1e-9 * np.abs(dense).max())


def test_single_node_system_is_solvable():
    s = QuadratureState(np.array([1e10]), np.array([volume_from_radius(10e-6)]), np.array([3.0]))
    sysm = assemble_coalescence_system(s, MomentSet.build("thirds", 1), np.ones(3))
    assert np.linalg.matrix_rank(sysm.matrix) == 3


def test_coincident_abscissas_are_singular():
    v = volume_from_radius(10e-6)
    s = QuadratureState(np.array([1e10, 1e9]), np.array([v, v]), np.array([1.0, 2.0]))
    with pytest.raises(SingularSystemError) as info:
        assemble_coalescence_system(s, MomentSet.build("thirds", 2), np.ones(6))
    assert set(info.value.pair) == {0, 1}


def test_near_coincident_nodes_report_ill_conditioning():
    r = np.array([48.885e-6, 49.053e-6])
    s = QuadratureState(np.array([5.2e10, 2.9e10]), volume_from_radius(r), np.array([0.74, 2.23]))
    with pytest.raises(IllConditionedError) as info:
        solve_coalescence(s, MomentSet.build("thirds", 2), 0.12, 0.10, ON)
    assert info.value.condition > 1e8


def test_scaling_tames_grown_states():
    N = 6
    r = np.geomspace(5e-6, 200e-6, N)
    s = QuadratureState(np.geomspace(1e11, 1e6, N), volume_from_radius(r), np.linspace(1.0, 3.0, N))
    raw, scaled = condition_probe(s, MomentSet.build("thirds", N))
    assert raw > 1e14 and scaled < raw * 1e-20
    a, b, c = solve_coalescence(s, MomentSet.build("thirds", N), 0.2, 0.1, ON)
    assert np.all(np.isfinite(np.concatenate([a, b, c])))


def test_linear_evaporation_has_no_flux():
    s = QuadratureState(np.array([1e10, 1e9, 1e8]), volume_from_radius(np.array([5e-6, 15e-6, 30e-6])),
                        np.array([3.0, 4.0, 5.0]))
    ev = evaporative_flux_sources(s, EvaporationLaw.linear(7.1262))
    assert not np.any(ev.E)
    assert ev.psi == 0.0 and not np.any(ev.a) and not np.any(ev.b_star) and not np.any(ev.c_star)


def test_nonlinear_two_node_flux_by_hand():
    w = np.array([1.0, 1.0])
    v = np.array([1e-15, 8e-15])
    law = EvaporationLaw.nonlinear()
    s = QuadratureState(w, v, np.array([2.0, 2.0]))
    ev = evaporative_flux_sources(s, law)
    # hand solution of {b1 + b2 = 0, w2 v2 b1 - w1 v1 b2 = E}
    E = w[0] * w[1] * (v[0] * (-0.5 * law.rate * np.cbrt(v[1] / FOUR_PI_3))
                       - v[1] * (-0.5 * law.rate * np.cbrt(v[0] / FOUR_PI_3)))
    assert ev.E[0] == pytest.approx(E, rel=1e-12) and E > 0
    b1 = E / (w[1] * v[1] + w[0] * v[0])
    np.testing.assert_allclose(ev.b_star, [b1, -b1], rtol=1e-12)
    # positive E pushes mass from the large node to the small one... b1 > 0 here
    assert abs(ev.b_star.sum()) < 1e-12 * abs(b1)
    assert ev.psi >= 0.0


@given(states, st.integers(min_value=2, max_value=6))
def test_nonlinear_law_gives_positive_numerators_and_flux(gen, N):
    s = random_state(gen, N)
    ev = evaporative_flux_sources(s, EvaporationLaw.nonlinear())
    assert np.all(ev.E > 0)
    assert ev.psi >= 0.0
    if ev.clamped:
        assert not np.any(ev.a) and not np.any(ev.b_star) and not np.any(ev.c_star)


def test_extinct_pair_falls_back_to_zero_row():
    s = QuadratureState(np.array([0.0, 0.0, 1e9]), volume_from_radius(np.array([5e-6, 10e-6, 20e-6])),
                        np.array([2.0, 2.0, 2.0]))
    ev = evaporative_flux_sources(s, EvaporationLaw.nonlinear())
    assert np.all(np.isfinite(ev.b_star))


def test_unsorted_abscissas_are_rejected():
    s = QuadratureState(np.ones(2), np.array([2e-15, 1e-15]), np.ones(2))
    with pytest.raises(ConfigError):
        evaporative_flux_sources(s, EvaporationLaw.nonlinear())


def test_total_sources_limits():
    case = replace(build_case("mono_noevap_nocoal"), drag=DragLaw(0.0))
    s = initial_state(case, DqmomOptions(N=3))
    src = total_sources(s, 0.15, case, MomentSet.build("thirds", 3))
    assert not np.any(src.a) and not np.any(src.b) and not np.any(src.c)

    case = build_case("mono_lin_nocoal")
    src = total_sources(s, 0.15, case, MomentSet.build("thirds", 3))
    assert not np.any(src.a) and src.psi == 0.0

    case = replace(build_case("mono_noevap_coal"), drag=DragLaw(0.0))
    s2 = QuadratureState(s.w_star, s.v, np.array([5.0, 4.0, 3.0]))
    src = total_sources(s2, 0.15, case, MomentSet.build("thirds", 3))
    assert abs(src.c.sum()) <= 1e-10 * np.abs(src.c).sum()


def test_perturbation():
    s = QuadratureState(np.array([1.0, 2.0]), np.array([1e-15, 2e-15]), np.ones(2))
    assert perturb_coincident_abscissas(s) is s
    v = 3e-15
    d = QuadratureState(np.array([1e10, 3e10]), np.array([v, v]), np.ones(2))
    p = perturb_coincident_abscissas(d, 1e-6)
    assert abs(p.v[1] - p.v[0]) == pytest.approx(2e-6 * v, rel=1e-9)
    assert np.sum(p.w_star * p.v) == pytest.approx(np.sum(d.w_star * d.v), rel=1e-14)


def test_bimodal_with_surplus_nodes_integrates():
    case = build_case("bi_lin_coal", z_end=0.10)
    res = solve_dqmom(case, DqmomOptions(N=4), np.linspace(0.05, 0.10, 6))
    assert res.status == "completed"
    assert np.all(np.isfinite(res.v))


def test_general_source_moments():
    rng = np.random.default_rng(5)
    w = rng.uniform(1e9, 1e10, 3)
    v = volume_from_radius(rng.uniform(5e-6, 30e-6, 3))
    u = rng.uniform(0.5, 4.0, (3, 3))
    scale = np.sum(w) ** 2 * np.max(v) * 1e-9 * 10
    for klmp in [(1, 0, 0, 0), (1, 1, 0, 0), (1, 0, 1, 0), (1, 0, 0, 1)]:
        assert abs(general_source_moments(w, v, u, klmp)) <= 1e-12 * scale
    # number: psi plus the pairwise loss
    loss = 0.0
    for n in range(3):
        for q in range(3):
            loss -= 0.5 * w[n] * w[q] * collision_frequency(ON, np.linalg.norm(u[n] - u[q]), v[n], v[q])
    assert general_source_moments(w, v, u, (0, 0, 0, 0), psi=7.0) == pytest.approx(7.0 + loss, rel=1e-12)


def test_frozen_nodes_without_sources():
    case = replace(build_case("mono_noevap_nocoal"), drag=DragLaw(0.0))
    z = np.linspace(case.z0, case.z_end, 9)
    res = solve_dqmom(case, DqmomOptions(N=4), z)
    for arr in (res.w_star, res.v, res.xi):
        np.testing.assert_allclose(arr, np.broadcast_to(arr[0], arr.shape), rtol=1e-10)


def test_strong_drag_locks_nodes_to_gas():
    case = build_case("mono_noevap_nocoal", z_end=0.15, drag_alpha=1.566e-3)
    z = np.array([0.10, 0.15])
    res = solve_dqmom(case, DqmomOptions(N=3), z)
    V = case.gas.axial(0.15)
    np.testing.assert_allclose(res.xi[-1], V, rtol=0.01)
    # w = w* (z0/z)^2 stays at its injected value
    np.testing.assert_allclose(res.weights(case.z0)[-1], res.w_star[0], rtol=0.02)


def test_single_node_linear_evaporation_closed_form():
    case = build_case("mono_lin_nocoal")
    z = np.linspace(case.z0, case.z_end, 11)
    opts = DqmomOptions(N=1, rtol=1e-8)
    res = solve_dqmom(case, opts, z)
    v0 = res.v[0, 0]
    # independent oracle: integrate the node's (xi, v) along z with scipy
    alpha, Ev = case.drag.alpha, case.evap.rate

    def f(zz, y):
        xi, v = y
        r2 = np.cbrt(v / FOUR_PI_3) ** 2
        return [alpha / r2 * (case.gas.axial(zz) - xi) / xi, -Ev * v / xi]
    sol = solve_ivp(f, (case.z0, case.z_end), [5.0, v0], rtol=1e-11, atol=[1e-12, 1e-30], t_eval=z, method="LSODA")
    np.testing.assert_allclose(res.xi[:, 0], sol.y[0], rtol=3e-6)
    np.testing.assert_allclose(res.v[:, 0], sol.y[1], rtol=3e-6)
    # and dv/v = -Ev dz / xi along that velocity
    xi_of_z = lambda zz: np.interp(zz, sol.t, sol.y[0])  # noqa: E731
    integral = quad(lambda zz: Ev / xi_of_z(zz), case.z0, case.z_end, limit=200)[0]
    assert res.v[-1, 0] == pytest.approx(v0 * np.exp(-integral), rel=2e-3)


def _final_mass(case, N, moment_set):
    res = solve_dqmom(case, DqmomOptions(N=N, moment_set=moment_set), np.array([case.z0, case.z_end]))
    return np.nansum(res.weights(case.z0)[-1] * res.v[-1])


def test_moment_sets_agree_with_two_nodes():
    case = build_case("mono_lin_coal")
    assert _final_mass(case, 2, "integer") == pytest.approx(_final_mass(case, 2, "thirds"), rel=0.01)


@pytest.mark.xfail(strict=True, reason="with four nodes the integer set ends 6.5% above the thirds set; "
                   "against the parcel reference the thirds set is the closer one (1.8% vs 5.0%)")
def test_moment_sets_agree_with_four_nodes():
    case = build_case("mono_lin_coal")
    assert _final_mass(case, 4, "integer") == pytest.approx(_final_mass(case, 4, "thirds"), rel=0.01)


def test_integer_set_matches_its_own_moments():
    rng = np.random.default_rng(11)
    for N in (2, 3, 4):
        s = random_state(rng, N)
        mset = MomentSet.build("integer", N)
        P = coalescence_rhs(s, mset, 0.1, 0.1, ON)
        sysm = assemble_coalescence_system(s, mset, P)
        x, _ = solve_with_refinement(sysm.matrix, sysm.rhs)
        assert moment_matching_residual(sysm, x) <= 1e-10


def test_tighter_rtol_barely_moves_the_solution():
    case = build_case("mono_lin_nocoal")
    z = np.array([case.z0, case.z_end])
    m = lambda r: np.nansum(r.weights(case.z0)[-1] * r.v[-1])  # noqa: E731
    a = m(solve_dqmom(case, DqmomOptions(rtol=1e-4), z))
    b = m(solve_dqmom(case, DqmomOptions(rtol=5e-5), z))
    assert a == pytest.approx(b, rel=1e-4)


def test_options_validation():
    with pytest.raises(ConfigError):
        DqmomOptions(N=0)
    with pytest.raises(ConfigError):
        DqmomOptions(flux_model="bogus")
    with pytest.raises(ConfigError):
        DqmomOptions(moment_set="halves")


def test_runs_are_bit_identical():
    case = build_case("mono_nonlin_coal", z_end=0.15)
    z = np.linspace(case.z0, case.z_end, 5)
    a = solve_dqmom(case, DqmomOptions(N=3), z)
    b = solve_dqmom(case, DqmomOptions(N=3), z)
    assert np.array_equal(a.v, b.v, equal_nan=True) and np.array_equal(a.w_star, b.w_star)
