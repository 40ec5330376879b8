"""Direct quadrature method of moments for the reduced nozzle system.

Each node ``n`` carries a scaled weight ``w*_n = w_n (z/z0)^2``, a droplet
volume ``v_n`` and an axial velocity ``xi_n``.  Along the nozzle axis the
transported quantities are the conserved fluxes

    F1 = w* xi,   F2 = w* v xi,   F3 = w* v xi^2,

whose z-derivatives are the source terms ``a``, ``b`` and ``c``.  Sources
split into

* coalescence: a moment-matching linear system for ``(a, b*, c*)`` whose
  right-hand side is the closed-form double sum over node pairs,
* evaporative flux at zero size: ratio constraints that keep
  ``v_n / v_{n+1}``, ``w_n / w_{n+1}`` and ``xi_n / xi_{n+1}`` frozen under
  evaporation, closed by one extra moment for ``a = alpha w``,
* explicit evaporation and drag terms added to ``b`` and ``c``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import ConfigError, FlowReversalError, IllConditionedError, SingularSystemError
from .integrator import Event, OdeProblem, default_atol, integrate
from .linsolve import RESIDUAL_TARGET, condition_estimate, solve_vandermonde, solve_with_refinement
from .physics import (FOUR_PI_3, CoalescenceModel, EvaporationLaw, InitialDistribution, SprayCase,
                      evaporation_rate, radius_from_volume)
from .quadrature import QuadratureNodes, moments_from_ndf, qmom_invert, table1_initial_conditions

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# state and moment sets
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class QuadratureState:
    w_star: np.ndarray
    v: np.ndarray
    xi: np.ndarray

    @property
    def N(self) -> int:
        return len(self.v)

    def fluxes(self) -> np.ndarray:
        f1 = self.w_star * self.xi
        return np.concatenate([f1, f1 * self.v, f1 * self.v * self.xi])

    @classmethod
    def from_fluxes(cls, y: np.ndarray) -> "QuadratureState":
        N = len(y) // 3
        f1, f2, f3 = y[:N], y[N:2 * N], y[2 * N:]
        v = f2 / f1
        xi = f3 / f2
        return cls(f1 / xi, v, xi)

    def weights(self, z: float, z0: float) -> np.ndarray:
        return self.w_star * (z0 / z) ** 2


@dataclass(frozen=True)
class MomentSet:
    """Exponent pairs ``(k, m)``: ``2N`` pure size moments then ``N`` with ``m = 1``."""

    k: np.ndarray
    m: np.ndarray
    preset: str

    @classmethod
    def build(cls, preset: str, N: int) -> "MomentSet":
        i2 = np.arange(1, 2 * N + 1)
        i1 = np.arange(1, N + 1)
        k0 = (i2 - 1) / 3.0
        if preset == "thirds":
            k1 = (2 * i1 - 1) / 3.0
        elif preset == "integer":
            k1 = i1.astype(float)
        else:
            raise ConfigError(f"unknown moment set {preset!r} (expected 'thirds' or 'integer')")
        return cls(np.concatenate([k0, k1]), np.concatenate([np.zeros(2 * N), np.ones(N)]), preset)

    @property
    def N(self) -> int:
        return len(self.k) // 3


# ---------------------------------------------------------------------------
# coalescence
# ---------------------------------------------------------------------------
def _pair_kernel(state: QuadratureState, coal: CoalescenceModel) -> np.ndarray:
    r = radius_from_volume(state.v)
    s = r[:, None] + r[None, :]
    du = np.abs(state.xi[:, None] - state.xi[None, :])
    return coal.efficiency * np.pi * s * s * du


def coalescence_rhs(state: QuadratureState, mset: MomentSet, z: float, z0: float,
                    coal: CoalescenceModel) -> np.ndarray:
    """Coalescence source moments ``P*(k, m)`` including the ``(z0/z)^2`` dilution."""
    if not coal.on:
        return np.zeros(len(mset.k))
    v, xi, w = state.v, state.xi, state.w_star
    B = _pair_kernel(state, coal)
    W = w[:, None] * w[None, :] * B
    vv = v[:, None] + v[None, :]
    mom = v[:, None] * xi[:, None] + v[None, :] * xi[None, :]
    out = np.empty(len(mset.k))
    for i, (k, m) in enumerate(zip(mset.k, mset.m)):
        if m == 0:
            gain = vv ** k
            own = v ** k
        else:
            gain = vv ** (k - 1.0) * mom
            own = v ** (k - 1.0) * v * xi
        bracket = gain - own[:, None] - own[None, :]
        out[i] = 0.5 * np.sum(W * bracket)
    return out * (z0 / z) ** 2


@dataclass(frozen=True)
class LinearSystem:
    """Scaled moment-matching system ``A x = rhs``.

    Unknowns are ``x = (a / w_s, b* / (v_s w_s), c* / (v_s u_s w_s))``;
    rows are divided by ``v_s^k u_s^m w_s``.
    """

    matrix: np.ndarray
    rhs: np.ndarray
    v_s: float
    u_s: float
    w_s: float

    def unscale(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        N = len(x) // 3
        return (x[:N] * self.w_s, x[N:2 * N] * self.v_s * self.w_s,
                x[2 * N:] * self.v_s * self.u_s * self.w_s)


def _check_distinct(v: np.ndarray, rel: float = 1e-13) -> None:
    order = np.argsort(v)
    vs = v[order]
    gaps = np.diff(vs)
    bad = np.nonzero(gaps <= rel * vs.max())[0]
    if bad.size:
        i, j = int(order[bad[0]]), int(order[bad[0] + 1])
        raise SingularSystemError(f"coincident volume abscissas at nodes {i} and {j} "
                                  f"(v = {v[i]:.6e}, {v[j]:.6e})", pair=(i, j))


def assemble_coalescence_system(state: QuadratureState, mset: MomentSet, rhs: np.ndarray,
                                scaled: bool = True) -> LinearSystem:
    """Moment-matching matrix and right-hand side for the coalescence sources."""
    _check_distinct(state.v)
    if scaled:
        v_s = float(np.max(state.v))
        u_s = float(np.max(np.abs(state.xi)))
        w_s = float(np.sum(state.w_star))
    else:
        v_s = u_s = w_s = 1.0
    vh = state.v / v_s
    uh = state.xi / u_s
    N = state.N
    n_rows = len(mset.k)
    A = np.zeros((n_rows, 3 * N))
    b = np.empty(n_rows)
    for i, (k, m) in enumerate(zip(mset.k, mset.m)):
        vk = vh ** k
        vk1 = vh ** (k - 1.0)
        um = uh ** m
        A[i, :N] = (1.0 - k) * vk * um
        A[i, N:2 * N] = (k - m) * vk1 * um
        if m:
            A[i, 2 * N:] = m * vk1 * uh ** (m - 1.0)
        b[i] = rhs[i] / (v_s ** k * u_s ** m * w_s)
    return LinearSystem(A, b, v_s, u_s, w_s)


def moment_matching_residual(system: LinearSystem, x: np.ndarray) -> float:
    """Largest row residual relative to the magnitude of that row's terms."""
    A = system.matrix.astype(np.longdouble)
    terms = A * x.astype(np.longdouble)[None, :]
    r = np.sum(terms, axis=1) - system.rhs.astype(np.longdouble)
    mag = np.sum(np.abs(terms), axis=1) + np.abs(system.rhs.astype(np.longdouble))
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(mag > 0, np.abs(r) / mag, 0.0)
    return float(np.max(rel))


def solve_coalescence(state: QuadratureState, mset: MomentSet, z: float, z0: float,
                      coal: CoalescenceModel, scaled: bool = True, route: str = "dense"
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coalescence contributions ``(a, b*, c*)`` for the current state.

    ``route='dense'`` factorises the full system with refinement;
    ``route='block'`` solves the ``2N`` size block first and then the
    velocity rows as a Vandermonde system.
    """
    N = state.N
    P = coalescence_rhs(state, mset, z, z0, coal)
    if not np.any(P):
        zero = np.zeros(N)
        return zero, zero.copy(), zero.copy()
    sysm = assemble_coalescence_system(state, mset, P, scaled=scaled)
    if route == "dense":
        x, _ = solve_with_refinement(sysm.matrix, sysm.rhs)
    elif route == "block":
        x = _solve_block(sysm, state, mset)
    else:
        raise ConfigError(f"unknown linear-solve route {route!r}")
    return sysm.unscale(x)


def _solve_block(sysm: LinearSystem, state: QuadratureState, mset: MomentSet) -> np.ndarray:
    N = state.N
    A, b = sysm.matrix, sysm.rhs
    size_rows = np.nonzero(mset.m == 0)[0]
    vel_rows = np.nonzero(mset.m == 1)[0]
    ab, _ = solve_with_refinement(A[np.ix_(size_rows, np.arange(2 * N))], b[size_rows])
    q = b[vel_rows] - A[np.ix_(vel_rows, np.arange(2 * N))] @ ab
    e = mset.k[vel_rows] - 1.0
    d = np.diff(e)
    if not np.allclose(d, d[0] if d.size else 0.0):
        raise ConfigError("velocity rows do not form a Vandermonde family")
    vh = state.v / sysm.v_s
    step = d[0] if d.size else 1.0
    nodes = vh ** step
    y = solve_vandermonde(nodes, q)
    c = y / vh ** e[0]
    x = np.concatenate([ab, c])
    # one extended-precision refinement pass on the velocity block
    Dm = A[np.ix_(vel_rows, np.arange(2 * N, 3 * N))]
    r = np.asarray(q.astype(np.longdouble) - Dm.astype(np.longdouble) @ c.astype(np.longdouble), dtype=float)
    x[2 * N:] += solve_vandermonde(nodes, r) / vh ** e[0]
    return x


# ---------------------------------------------------------------------------
# evaporative flux at zero size
# ---------------------------------------------------------------------------
ALPHA_CLOSURES: dict[str, tuple[int, int]] = {
    "mass": (2, 0),            # k=2 size moment: depends on b* only (default)
    "mass_momentum": (2, 1),   # k=2 with one velocity power
    "momentum_sq": (2, 2),     # k=2 with squared velocity
    "number_momentum": (0, 1),  # k=0 with one velocity power; involves u_f
}


@dataclass(frozen=True)
class EvapFlux:
    a: np.ndarray
    b_star: np.ndarray
    c_star: np.ndarray
    psi: float
    E: np.ndarray
    alpha: float
    clamped: bool


def ratio_numerators(evap: EvaporationLaw, w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``E_n = w_n w_{n+1} [v_n R(v_{n+1}) - v_{n+1} R(v_n)]`` for adjacent nodes.

    Written as ``w w v v [R/v (v_{n+1}) - R/v (v_n)]`` so that the linear law,
    whose specific rate is a constant, gives exact zeros.
    """
    s = evap.specific_rate(v)
    return w[:-1] * w[1:] * v[:-1] * v[1:] * (s[1:] - s[:-1])


def _ratio_system(coef: np.ndarray, rhs_pairs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``sum x = 0`` and ``coef_{n+1} x_n - coef_n x_{n+1} = rhs_n``."""
    N = len(coef)
    M = np.zeros((N, N))
    r = np.zeros(N)
    M[0, :] = 1.0
    for n in range(N - 1):
        row = n + 1
        M[row, n] = coef[n + 1]
        M[row, n + 1] = -coef[n]
        r[row] = rhs_pairs[n]
        if coef[n + 1] == 0.0 and coef[n] == 0.0:
            # both nodes extinct: drop the pair, pin this source to zero
            M[row, :] = 0.0
            M[row, n + 1] = 1.0
            r[row] = 0.0
    return M, r


def evaporative_flux_sources(state: QuadratureState, evap: EvaporationLaw, closure: str = "mass",
                             u_f: float = 0.0, w: np.ndarray | None = None) -> EvapFlux:
    """Evaporation contribution from the ratio constraints.

    ``w`` defaults to ``state.w_star``; nodes must be sorted by volume.
    """
    N = state.N
    w = state.w_star if w is None else w
    v, xi = state.v, state.xi
    zero = np.zeros(N)
    if not evap.active or N < 2:
        return EvapFlux(zero, zero.copy(), zero.copy(), 0.0, np.zeros(max(N - 1, 0)), 0.0, False)
    if np.any(np.diff(v) < 0):
        raise ConfigError("evaporative-flux constraints need volume abscissas sorted ascending")
    E = ratio_numerators(evap, w, v)
    if not np.any(E):
        return EvapFlux(zero, zero.copy(), zero.copy(), 0.0, E, 0.0, False)
    w_s = float(np.sum(w))
    v_s = float(np.max(v))
    u_s = float(np.max(np.abs(xi)))
    wh, vh, uh = w / w_s, v / v_s, xi / u_s
    Eh = E / (w_s * w_s * v_s * v_s)
    M, r = _ratio_system(wh * vh, Eh)
    bh, _ = solve_with_refinement(M, r)
    M, r = _ratio_system(wh * vh * uh, uh[:-1] * uh[1:] * Eh)
    ch, _ = solve_with_refinement(M, r)
    b_star = bh * w_s * v_s
    c_star = ch * w_s * v_s * u_s
    try:
        k, l = ALPHA_CLOSURES[closure]
    except KeyError:
        raise ConfigError(f"unknown alpha closure {closure!r}; choose from {sorted(ALPHA_CLOSURES)}") from None
    num = np.sum((k - l) * v ** (k - 1.0) * xi ** l * b_star)
    if l:
        num += np.sum(l * v ** (k - 1.0) * xi ** (l - 1.0) * c_star)
    den = np.sum(((k - 1.0) * v ** k * xi ** l + (u_f ** l if k == 0 else 0.0)) * w)
    alpha = float(num / den)
    a = alpha * w
    psi = float(-np.sum(a))
    if psi < 0.0:
        return EvapFlux(zero, zero.copy(), zero.copy(), 0.0, E, alpha, True)
    return EvapFlux(a, b_star, c_star, psi, E, alpha, False)


# ---------------------------------------------------------------------------
# totals and right-hand side
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SourceTerms:
    a: np.ndarray
    b_star: np.ndarray
    c_star: np.ndarray
    b: np.ndarray
    c: np.ndarray
    psi: float
    evap_clamped: bool = False


@dataclass(frozen=True)
class DqmomOptions:
    N: int = 4
    moment_set: str = "thirds"
    flux_model: Literal["ratio", "zero"] = "ratio"
    alpha_closure: str = "mass"
    init: str = "qmom_radius"
    rtol: float = 1e-4
    atol_floor_rel: float = 1e-6
    method: str = "bdf"
    rel_eps: float = 1e-6
    split_spread: float = 0.2
    extinction_ratio: float = 1e-6
    linear_route: str = "dense"

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ConfigError("DQMOM needs at least one node")
        if self.flux_model not in ("ratio", "zero"):
            raise ConfigError(f"flux_model must be 'ratio' or 'zero', got {self.flux_model!r}")
        if self.alpha_closure not in ALPHA_CLOSURES:
            raise ConfigError(f"unknown alpha closure {self.alpha_closure!r}")
        MomentSet.build(self.moment_set, 1)
        if not 0.0 <= self.split_spread < 1.0:
            raise ConfigError("split_spread must lie in [0, 1)")


def total_sources(state: QuadratureState, z: float, case: SprayCase, mset: MomentSet,
                  options: DqmomOptions = DqmomOptions()) -> SourceTerms:
    """Sum evaporative-flux and coalescence solutions, then add explicit terms."""
    N = state.N
    a = np.zeros(N)
    bs = np.zeros(N)
    cs = np.zeros(N)
    psi = 0.0
    clamped = False
    V = case.gas.axial(z)
    if options.flux_model == "ratio" and case.evap.active and N > 1:
        ev = evaporative_flux_sources(state, case.evap, options.alpha_closure, u_f=V)
        a += ev.a
        bs += ev.b_star
        cs += ev.c_star
        psi = ev.psi
        clamped = ev.clamped
    if case.coal.on and N > 1:
        ac, bc, cc = solve_coalescence(state, mset, z, case.z0, case.coal, route=options.linear_route)
        a += ac
        bs += bc
        cs += cc
    Rv = evaporation_rate(case.evap, state.v)
    drag = case.drag.alpha * (FOUR_PI_3 / np.maximum(state.v, 1e-300)) ** (2.0 / 3.0) * (V - state.xi)
    b = bs + state.w_star * Rv
    c = cs + state.w_star * state.xi * Rv + state.w_star * state.v * drag
    return SourceTerms(a, bs, cs, b, c, psi, clamped)


class DqmomRhs:
    """Callable ``(z, fluxes) -> d fluxes / dz`` for one node configuration."""

    def __init__(self, case: SprayCase, mset: MomentSet, options: DqmomOptions):
        self.case = case
        self.mset = mset
        self.options = options

    def sources(self, z: float, y: np.ndarray) -> tuple[QuadratureState, SourceTerms]:
        st = QuadratureState.from_fluxes(y)
        if np.any(st.xi <= 0.0) or not np.all(np.isfinite(st.xi)):
            raise FlowReversalError(f"non-positive node velocity at z={z:.6e}: {st.xi}")
        # trial Newton iterates may overflow; the integrator rejects non-finite output
        with np.errstate(over="ignore", invalid="ignore"):
            return st, total_sources(st, z, self.case, self.mset, self.options)

    def __call__(self, z: float, y: np.ndarray) -> np.ndarray:
        _, src = self.sources(z, y)
        return np.concatenate([src.a, src.b, src.c])


def dqmom_rhs(z: float, state: QuadratureState, case: SprayCase, mset: MomentSet,
              options: DqmomOptions = DqmomOptions()) -> np.ndarray:
    """Derivatives of ``(w* xi, w* v xi, w* v xi^2)`` at ``z``."""
    return DqmomRhs(case, mset, options)(z, state.fluxes())


# ---------------------------------------------------------------------------
# general (3D velocity) source moments, used to check conservation properties
# ---------------------------------------------------------------------------
def general_source_moments(weights: np.ndarray, volumes: np.ndarray, velocities: np.ndarray,
                           klmp: tuple[float, int, int, int], psi: float = 0.0,
                           u_f: np.ndarray = np.zeros(3), evap: EvaporationLaw = EvaporationLaw.none(),
                           drag_force: np.ndarray | None = None,
                           coal: CoalescenceModel = CoalescenceModel(1.0)) -> float:
    """Complete source moment ``P(k, l, m, p)`` for nodes with 3-component velocities.

    ``drag_force`` is an ``(N, 3)`` array of accelerations ``F(v_n, u_n)``.
    """
    k, l, m, p = klmp
    w = np.asarray(weights, dtype=float)
    v = np.asarray(volumes, dtype=float)
    u = np.asarray(velocities, dtype=float)
    pw = np.array([l, m, p], dtype=float)
    mono = np.prod(u ** pw[None, :], axis=1)
    total = psi * float(np.prod(np.asarray(u_f, dtype=float) ** pw)) if k == 0 else 0.0
    if evap.active and k != 0:
        total += float(np.sum(k * w * v ** (k - 1.0) * mono * evaporation_rate(evap, v)))
    if drag_force is not None:
        for j, e in enumerate(pw):
            if e:
                total += float(np.sum(w * v ** k * mono * e / u[:, j] * drag_force[:, j]))
    if coal.on:
        r = radius_from_volume(v)
        du = np.linalg.norm(u[:, None, :] - u[None, :, :], axis=2)
        B = coal.efficiency * np.pi * (r[:, None] + r[None, :]) ** 2 * du
        vv = v[:, None] + v[None, :]
        um = (v[:, None, None] * u[:, None, :] + v[None, :, None] * u[None, :, :]) / vv[:, :, None]
        gain = vv ** k * np.prod(um ** pw[None, None, :], axis=2)
        own = v ** k * mono
        total += 0.5 * float(np.sum(w[:, None] * w[None, :] * B * (gain - own[:, None] - own[None, :])))
    return total


# ---------------------------------------------------------------------------
# initial conditions
# ---------------------------------------------------------------------------
def perturb_coincident_abscissas(state: QuadratureState, rel_eps: float = 1e-6) -> QuadratureState:
    """Spread clusters of (nearly) equal volume abscissas multiplicatively.

    A cluster of ``c`` nodes closer than ``rel_eps * v_s`` receives factors
    ``1 + rel_eps (2 i - c + 1)``; the cluster weights are then rescaled by a
    common factor so that its mass ``sum w* v`` is unchanged.
    """
    v = state.v.astype(float).copy()
    w = state.w_star.astype(float).copy()
    order = np.argsort(v, kind="stable")
    v_s = v.max()
    clusters: list[list[int]] = []
    for idx in order:
        if clusters and abs(v[idx] - v[clusters[-1][-1]]) < rel_eps * v_s:
            clusters[-1].append(int(idx))
        else:
            clusters.append([int(idx)])
    changed = False
    for cl in clusters:
        c = len(cl)
        if c < 2:
            continue
        changed = True
        idx = np.array(cl)
        mass_old = np.sum(w[idx] * v[idx])
        factors = 1.0 + rel_eps * (2.0 * np.arange(c) - c + 1.0)
        v[idx] = v[idx] * factors
        w[idx] = w[idx] * (mass_old / np.sum(w[idx] * v[idx]))
    if not changed:
        return state
    return QuadratureState(w, v, state.xi.copy())


def initial_nodes(init: InitialDistribution, option: str, N: int) -> QuadratureNodes:
    """Weights and abscissas at injection for an initialisation option.

    ``qmom_radius`` / ``qmom_volume`` invert the first ``2N`` moments in that
    basis; ``table1:<name>`` loads a tabulated node set.
    """
    if option.startswith("table1:"):
        nodes = table1_initial_conditions(option.split(":", 1)[1], init.m0_inj, init.rho)
        if nodes.N != N:
            raise ConfigError(f"tabulated set {option} has {nodes.N} nodes, N={N} requested")
        return nodes
    if option not in ("qmom_radius", "qmom_volume"):
        raise ConfigError(f"unknown DQMOM initialisation {option!r}")
    basis = "radius" if option == "qmom_radius" else "volume"
    return qmom_invert(moments_from_ndf(init, basis, 2 * N), N)


def split_surplus_nodes(w: np.ndarray, v: np.ndarray, N: int, spread: float
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Turn ``len(w) < N`` nodes into ``N`` by splitting each into copies.

    Copies are distributed as evenly as possible over the available nodes
    and spread in volume by factors ``1 + spread (2 i - c + 1)``; the factors
    average to one, so number and mass are both unchanged.
    """
    M = len(w)
    if M >= N:
        return w, v
    copies = np.full(M, N // M)
    copies[: N % M] += 1
    w_out = np.repeat(w / copies, copies)
    factors = np.concatenate([1.0 + spread * (2.0 * np.arange(c) - c + 1.0) for c in copies])
    if np.any(factors <= 0.0):
        raise ConfigError(f"split_spread={spread} produces non-positive volumes for {N} nodes")
    return w_out, np.repeat(v, copies) * factors


def initial_state(case: SprayCase, options: DqmomOptions) -> QuadratureState:
    nodes = initial_nodes(case.init, options.init, options.N)
    w, v = split_surplus_nodes(nodes.weights, nodes.volumes(), options.N, options.split_spread)
    xi = np.full(len(w), case.gas.V0)
    st = QuadratureState(w.astype(float), v.astype(float), xi)
    return perturb_coincident_abscissas(st, options.rel_eps)


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------
@dataclass
class DqmomResult:
    z: np.ndarray
    w_star: np.ndarray
    v: np.ndarray
    xi: np.ndarray
    psi: np.ndarray
    status: str
    z_final: float
    extinctions: list[tuple[float, int]] = field(default_factory=list)
    n_steps: int = 0
    nfev: int = 0
    z_steps: np.ndarray = field(default_factory=lambda: np.zeros(0))  # accepted step positions

    def weights(self, z0: float) -> np.ndarray:
        return self.w_star * (z0 / self.z[:, None]) ** 2


def solve_dqmom(case: SprayCase, options: DqmomOptions, z_eval: np.ndarray,
                state0: QuadratureState | None = None) -> DqmomResult:
    """March the DQMOM system from ``z0`` to ``case.z_end``.

    Node extinction (volume below ``extinction_ratio`` of its injected value)
    stops the march; the node is removed and the march restarts with one node
    fewer.  The march also stops once 99.9% of the injected liquid mass flux
    has evaporated.  Outputs for extinct nodes are zero weight and NaN volume
    and velocity.
    """
    st = initial_state(case, options) if state0 is None else state0
    N0 = st.N
    ids = list(range(N0))
    v_inj = st.v.copy()
    z_eval = np.asarray(z_eval, dtype=float)
    W = np.zeros((len(z_eval), N0))
    Vv = np.full((len(z_eval), N0), np.nan)
    X = np.full((len(z_eval), N0), np.nan)
    PSI = np.zeros(len(z_eval))
    filled = np.zeros(len(z_eval), dtype=bool)
    z_start = case.z0
    y = st.fluxes()
    mass_flux0 = float(np.sum(y[N0:2 * N0]))
    extinctions: list[tuple[float, int]] = []
    status = "completed"
    n_steps = nfev = 0
    z_steps: list[float] = []
    atol_full = default_atol(y, options.rtol, options.atol_floor_rel, np.repeat(np.arange(3), N0))
    while True:
        N = len(ids)
        mset = MomentSet.build(options.moment_set, N)
        rhs = DqmomRhs(case, mset, options)
        sel = np.concatenate([np.array(ids) + j * N0 for j in range(3)])
        atol = atol_full[sel]
        events = []
        for n in range(N):
            vref = v_inj[ids[n]] * options.extinction_ratio

            def g(z, yy, n=n, vref=vref, N=N):
                return yy[N + n] / yy[n] - vref
            events.append(Event(g, True, -1.0, f"extinction:{ids[n]}"))
        mask = (z_eval >= z_start) & ~filled
        prob = OdeProblem(rhs, (z_start, case.z_end), y, rtol=options.rtol, atol=atol,
                          z_eval=z_eval[mask], events=events, method=options.method)
        if case.evap.active:
            prob.mass = lambda yy, N=N: float(np.sum(yy[N:2 * N]))
            prob.mass_reference = mass_flux0
        sol = integrate(prob)
        n_steps += sol.n_steps
        nfev += sol.nfev
        z_steps.extend(sol.z_steps[1:] if z_steps else sol.z_steps)
        idx = np.nonzero(mask)[0][: len(sol.z)]
        for row, zz, yy in zip(idx, sol.z, sol.y):
            s = QuadratureState.from_fluxes(yy)
            W[row, ids] = s.w_star
            Vv[row, ids] = s.v
            X[row, ids] = s.xi
            try:
                PSI[row] = rhs.sources(zz, yy)[1].psi
            except Exception:  # diagnostics only
                PSI[row] = np.nan
            filled[row] = True
        if sol.status == "event" and sol.event_name.startswith("extinction"):
            gone = int(sol.event_name.split(":")[1])
            extinctions.append((sol.z_final, gone))
            log.info("node %d extinct at z=%.5f m", gone, sol.z_final)
            keep = [i for i, nid in enumerate(ids) if nid != gone]
            yy = sol.y_final
            y = np.concatenate([yy[:N][keep], yy[N:2 * N][keep], yy[2 * N:][keep]])
            ids = [ids[i] for i in keep]
            z_start = sol.z_final
            if not ids:
                status = "extinct"
                break
            continue
        status = sol.status
        z_final = sol.z_final
        break
    else:  # pragma: no cover
        z_final = z_start
    if status == "extinct":
        z_final = z_start
    valid = filled
    if status in ("cutoff", "extinct"):
        # past the cutoff the liquid is gone: report empty nodes
        valid = filled | (z_eval > z_final)
    return DqmomResult(z_eval[valid], W[valid], Vv[valid], X[valid], PSI[valid], status, z_final,
                       extinctions, n_steps, nfev, np.array(z_steps))


def condition_probe(state: QuadratureState, mset: MomentSet) -> tuple[float, float]:
    """Condition numbers of the unscaled and scaled coalescence matrices."""
    dummy = np.ones(len(mset.k))
    raw = assemble_coalescence_system(state, mset, dummy, scaled=False)
    sc = assemble_coalescence_system(state, mset, dummy, scaled=True)
    return condition_estimate(raw.matrix), condition_estimate(sc.matrix)


__all__ = [
    "QuadratureState", "MomentSet", "LinearSystem", "SourceTerms", "EvapFlux", "DqmomOptions",
    "DqmomResult", "DqmomRhs", "coalescence_rhs", "assemble_coalescence_system", "solve_coalescence",
    "moment_matching_residual", "evaporative_flux_sources", "ratio_numerators", "total_sources",
    "dqmom_rhs", "general_source_moments", "perturb_coincident_abscissas", "initial_state",
    "initial_nodes", "solve_dqmom", "condition_probe", "RESIDUAL_TARGET", "IllConditionedError",
]
