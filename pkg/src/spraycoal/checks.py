"""Quick invariant checks run by ``spraycoal validate``.

Each check returns ``(passed, detail)``.  They use small randomised states
drawn from a seeded generator, so a run is reproducible.
"""
from __future__ import annotations

from dataclasses import replace
from typing import Callable

import numpy as np

from .cases import build_case
from .dqmom import DqmomOptions, MomentSet, QuadratureState, _pair_kernel, coalescence_rhs, solve_dqmom
from .lagrangian import CellGrid, DsmcConfig, collision_step, run_to_steady_state
from .multifluid import build_sections, coalescence_sources, precompute_coalescence
from .physics import FOUR_PI_3, CoalescenceModel, DragLaw, EvaporationLaw, build_initial_distribution
from .quadrature import moments_from_ndf, qmom_invert

Check = Callable[[np.random.Generator], tuple[bool, str]]


def dqmom_coalescence_conservation(rng: np.random.Generator) -> tuple[bool, str]:
    worst = 0.0
    for N in (2, 4, 6):
        mset = MomentSet.build("thirds", N)
        idx0 = int(np.nonzero((mset.k == 1.0) & (mset.m == 0))[0][0])
        idx1 = int(np.nonzero((mset.k == 1.0) & (mset.m == 1))[0][0])
        for _ in range(20):
            st = QuadratureState(rng.uniform(1e9, 1e11, N), FOUR_PI_3 * rng.uniform(5e-6, 60e-6, N) ** 3,
                                 rng.uniform(0.5, 5.0, N))
            coal = CoalescenceModel(1.0)
            P = coalescence_rhs(st, mset, 0.1, 0.1, coal)
            # magnitude of the gain terms alone
            W = st.w_star[:, None] * st.w_star[None, :] * _pair_kernel(st, coal)
            vv = st.v[:, None] + st.v[None, :]
            vu = st.v * st.xi
            g0 = 0.5 * float(np.sum(W * vv))
            g1 = 0.5 * float(np.sum(W * (vu[:, None] + vu[None, :])))
            worst = max(worst, abs(P[idx0]) / g0, abs(P[idx1]) / g1)
    return worst < 1e-12, f"max |P*(1,0)|, |P*(1,1)| relative to the gain terms: {worst:.2e}"


def multifluid_coalescence_conservation(rng: np.random.Generator) -> tuple[bool, str]:
    grid = build_sections(20, 60e-6, "uniform_radius", 649.4)
    tables = precompute_coalescence(grid)
    worst = 0.0
    for _ in range(20):
        m = rng.uniform(0.0, 1.0, grid.N)
        u = rng.uniform(0.5, 5.0, grid.N)
        Cm, Cmu = coalescence_sources(m, u, tables)
        worst = max(worst, abs(Cm.sum()) / np.abs(Cm).sum(), abs(Cmu.sum()) / np.abs(Cmu).sum())
    return worst < 1e-8, f"max |sum C| / sum |C| = {worst:.2e}"


def lagrangian_collision_conservation(rng: np.random.Generator) -> tuple[bool, str]:
    grid = CellGrid.build(0.1, 0.3, 10)
    worst = 0.0
    for _ in range(10):
        P = 400
        n = rng.uniform(1e5, 1e8, P)
        z = rng.uniform(0.1, 0.3, P)
        u = rng.uniform(0.5, 5.0, P)
        r = rng.uniform(5e-6, 40e-6, P)
        mass0 = np.sum(n * r**3)
        mom0 = np.sum(n * r**3 * u)
        collision_step(n, z, u, r, grid, 1e-3, rng)
        worst = max(worst, abs(np.sum(n * r**3) / mass0 - 1), abs(np.sum(n * r**3 * u) / mom0 - 1))
    return worst < 1e-12, f"max relative change of sum n v, sum n v u: {worst:.2e}"


def qmom_round_trip(rng: np.random.Generator) -> tuple[bool, str]:
    worst = 0.0
    for kind in ("monomodal", "bimodal"):
        ndf = build_initial_distribution(kind)
        for N in range(1, 9):
            if kind == "bimodal" and N > 2:
                break
            mv = moments_from_ndf(ndf, "radius", 2 * N)
            nodes = qmom_invert(mv, N)
            back = nodes.moments(2 * N)
            worst = max(worst, float(np.max(np.abs(back / mv.values - 1.0))))
    return worst < 1e-10, f"max relative moment error: {worst:.2e}"


def frozen_nodes(rng: np.random.Generator) -> tuple[bool, str]:
    case = replace(build_case("mono_noevap_nocoal"), drag=DragLaw(0.0), evap=EvaporationLaw.none())
    z = np.linspace(case.z0, case.z_end, 11)
    res = solve_dqmom(case, DqmomOptions(N=3), z)
    dev = max(float(np.max(np.abs(res.v / res.v[0] - 1))), float(np.max(np.abs(res.xi / res.xi[0] - 1))),
              float(np.max(np.abs(res.w_star / res.w_star[0] - 1))))
    return dev < 1e-6, f"max relative drift of (v, w*, xi): {dev:.2e}"


def lagrangian_determinism(seed: int) -> Check:
    def check(rng: np.random.Generator) -> tuple[bool, str]:
        case = build_case("mono_lin_coal", z_end=0.12)
        cfg = DsmcConfig(seed=seed, injection_rate=20_000, averaging_window=2e-3, n_batches=2,
                         fill_transits=1.0, steady_tol=0.2, n_cells=20)
        a = run_to_steady_state(case, cfg)
        b = run_to_steady_state(case, cfg)
        same = np.array_equal(a.m1, b.m1) and np.array_equal(a.ud, b.ud, equal_nan=True)
        return same, f"repeat with seed {seed} {'identical' if same else 'differs'}"
    return check


def all_checks(seed: int | None) -> list[tuple[str, Check]]:
    checks: list[tuple[str, Check]] = [
        ("dqmom coalescence conserves mass and momentum", dqmom_coalescence_conservation),
        ("sectional coalescence conserves mass and momentum", multifluid_coalescence_conservation),
        ("qmom inversion reproduces its moments", qmom_round_trip),
        ("nodes stay frozen without drag, evaporation or coalescence", frozen_nodes),
    ]
    if seed is not None:
        checks += [
            ("parcel collisions conserve mass and momentum", lagrangian_collision_conservation),
            ("parcel runs repeat bit for bit", lagrangian_determinism(seed)),
        ]
    return checks
