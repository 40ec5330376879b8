"""Eulerian multi-fluid (sectional) solver for the nozzle problem.

Droplet volume is cut into sections ``[v^(j-1), v^(j))``.  Each section
carries a mass density ``m_j`` and one axial velocity ``u_j``; inside a
section the number density has a presumed shape ``kappa_j`` normalised to
unit liquid mass.  Everything that depends only on the shapes (evaporation
fluxes, mean drag, collision integrals) is tabulated once per grid.

All shapes are handled through the number density per unit *radius*,
``g_j(r) = 4 pi r^2 kappa_j(v(r))``, because both supported shapes and the
collision cross-section are simple in ``r``:

* ``constant``: ``g_j = c_j`` (constant in radius);
* ``exponential``: ``g_j = c_j r^2 exp(-sigma_j (r^2 - a_j^2))``, i.e.
  ``kappa_j`` decays exponentially in droplet surface.  ``sigma_j`` puts the
  number-mean radius of the section at its geometric centre.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import jit
from scipy import optimize

from .errors import ConfigError, FlowReversalError
from .integrator import Event, OdeProblem, integrate
from .physics import FOUR_PI_3, EvaporationLaw, SprayCase, evaporation_rate, volume_from_radius

log = logging.getLogger(__name__)

CUTOFF_FRACTION = 0.999
SPACINGS = ("uniform_radius", "geometric", "optimal12")
SHAPE_CONSTANT = 0
SHAPE_EXPONENTIAL = 1

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_GL64_NODES, _GL64_WEIGHTS = np.polynomial.legendre.leggauss(64)


# ---------------------------------------------------------------------------
# grid and presumed shapes
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SectionGrid:
    """Section boundaries (radius, m) and the presumed shape of each section."""

    r_bounds: np.ndarray
    shape: np.ndarray
    coef: np.ndarray
    sigma: np.ndarray
    rho: float

    @property
    def N(self) -> int:
        return len(self.r_bounds) - 1

    @property
    def v_bounds(self) -> np.ndarray:
        return volume_from_radius(self.r_bounds)

    def g(self, j: int, r):
        """Number density per unit radius and unit section mass in section ``j``."""
        return _g_eval(np.asarray(r, dtype=float), self.shape[j], self.coef[j], self.sigma[j],
                       self.r_bounds[j])

    def section_integral(self, j: int, fn, n: int = 64) -> float:
        """``int g_j(r) fn(r) dr`` over section ``j`` by Gauss-Legendre."""
        x, w = (_GL64_NODES, _GL64_WEIGHTS) if n == 64 else np.polynomial.legendre.leggauss(n)
        a, b = self.r_bounds[j], self.r_bounds[j + 1]
        r = 0.5 * (b - a) * x + 0.5 * (a + b)
        return float(0.5 * (b - a) * np.sum(w * self.g(j, r) * fn(r)))

    def locate(self, r) -> np.ndarray:
        """Index of the section containing radius ``r`` (``r_{j} <= r < r_{j+1}``)."""
        idx = np.searchsorted(self.r_bounds, np.asarray(r, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.N - 1)


def _g_eval(r, shape, coef, sigma, a):
    if shape == SHAPE_CONSTANT:
        return np.full_like(r, coef)
    return coef * r * r * np.exp(-sigma * (r * r - a * a))


def _mean_radius_exponential(a: float, b: float, sigma: float) -> float:
    r = 0.5 * (b - a) * _GL64_NODES + 0.5 * (a + b)
    wt = _GL64_WEIGHTS * r * r * np.exp(-sigma * (r * r - a * a))
    return float(np.sum(wt * r) / np.sum(wt))


def _exponential_decay(a: float, b: float) -> float:
    """Surface decay rate putting the number-mean radius at ``(a + b) / 2``."""
    target = 0.5 * (a + b)
    if _mean_radius_exponential(a, b, 0.0) <= target:
        return 0.0
    hi = 1.0 / (b * b)
    while _mean_radius_exponential(a, b, hi) > target:
        hi *= 4.0
    return float(optimize.brentq(lambda s: _mean_radius_exponential(a, b, s) - target, 0.0, hi,
                                 xtol=1e-14 * hi))


def _radius_bounds(N: int, r_max: float, spacing: str) -> np.ndarray:
    if spacing == "uniform_radius":
        return np.linspace(0.0, r_max, N + 1)
    if spacing == "geometric":
        # first boundary at r_max / 100, then a constant ratio up to r_max
        inner = np.geomspace(r_max * 1e-2, r_max, N) if N > 1 else np.array([r_max])
        return np.concatenate([[0.0], inner])
    if spacing == "optimal12":
        if N != 12:
            raise ConfigError("spacing 'optimal12' is a fixed 12-section layout")
        half = 0.5 * r_max
        return np.concatenate([np.linspace(0.0, half, 9), np.linspace(half, r_max, 5)[1:]])
    raise ConfigError(f"unknown section spacing {spacing!r}; choose from {SPACINGS}")


def build_sections(N: int, r_max: float, spacing: str = "uniform_radius", rho: float = 649.4,
                   last_section: str = "exponential") -> SectionGrid:
    """Build ``N`` sections on ``[0, r_max]`` with normalised presumed shapes.

    Sections ``1 .. N-1`` are constant in radius; the last one is
    exponentially decreasing in surface unless ``last_section='constant'``.
    """
    if N < 1:
        raise ConfigError("number of sections must be at least 1")
    if not r_max > 0.0:
        raise ConfigError("r_max must be positive")
    if last_section not in ("exponential", "constant"):
        raise ConfigError("last_section must be 'exponential' or 'constant'")
    rb = _radius_bounds(N, r_max, spacing)
    if np.any(np.diff(rb) <= 0.0):
        raise ConfigError("section boundaries must be strictly increasing")
    shape = np.zeros(N, dtype=np.int64)
    coef = np.zeros(N)
    sigma = np.zeros(N)
    for j in range(N):
        a, b = rb[j], rb[j + 1]
        if j == N - 1 and last_section == "exponential":
            shape[j] = SHAPE_EXPONENTIAL
            sigma[j] = _exponential_decay(a, b)
        # normalise: int rho v(r) g(r) dr = 1
        r = 0.5 * (b - a) * _GL64_NODES + 0.5 * (a + b)
        unit = _g_eval(r, shape[j], 1.0, sigma[j], a)
        coef[j] = 1.0 / (0.5 * (b - a) * np.sum(_GL64_WEIGHTS * rho * FOUR_PI_3 * r**3 * unit))
    return SectionGrid(rb, shape, coef, sigma, float(rho))


# ---------------------------------------------------------------------------
# evaporation and drag coefficients
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class EvapDragCoefficients:
    E1: np.ndarray          # 1/s, mass leaving through the lower boundary
    E2: np.ndarray          # 1/s, mass lost by shrinking inside the section
    drag_rate: np.ndarray   # 1/s, alpha / r_u^2
    v_u: np.ndarray         # m^3, mean drag volume
    number_per_mass: np.ndarray
    v23_per_mass: np.ndarray


def precompute_evap_drag(grid: SectionGrid, evap: EvaporationLaw, alpha: float) -> EvapDragCoefficients:
    N = grid.N
    E1 = np.zeros(N)
    E2 = np.zeros(N)
    v_u = np.zeros(N)
    npm = np.zeros(N)
    v23 = np.zeros(N)
    rho = grid.rho
    for j in range(N):
        a = grid.r_bounds[j]
        if evap.active:
            ga = float(grid.g(j, np.array([a]))[0])
            E1[j] = -rho * (a / 3.0) * ga * float(evaporation_rate(evap, volume_from_radius(a)))
            E2[j] = -grid.section_integral(j, lambda r: rho * evaporation_rate(evap, volume_from_radius(r)))
        num = grid.section_integral(j, volume_from_radius)
        den = grid.section_integral(j, lambda r: np.cbrt(volume_from_radius(r)))
        v_u[j] = (num / den) ** 1.5
        npm[j] = grid.section_integral(j, np.ones_like)
        v23[j] = grid.section_integral(j, lambda r: volume_from_radius(r) ** (2.0 / 3.0))
    r_u = np.cbrt(v_u / FOUR_PI_3)
    return EvapDragCoefficients(np.abs(E1), E2, alpha / r_u**2, v_u, npm, v23)


# ---------------------------------------------------------------------------
# coalescence tables
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CoalescenceTables:
    """Collision integrals with the relative-velocity factor stripped.

    ``Q[j, k]`` is the disappearance integral of section ``j`` mass through
    collisions with section ``k``.  Appearance is stored piecewise: piece
    ``p`` is the part of rectangle ``(k_p, l_p)`` (``k_p > l_p``) whose
    merged volume lands in section ``j_p``; ``q_big``/``q_small`` are the
    mass contributions of the ``k_p`` and ``l_p`` partners.
    """

    Q: np.ndarray
    piece_j: np.ndarray
    piece_k: np.ndarray
    piece_l: np.ndarray
    q_big: np.ndarray
    q_small: np.ndarray

    @property
    def n_pieces(self) -> int:
        return len(self.piece_j)

    def strip_count(self) -> np.ndarray:
        """Number of appearance pieces feeding each section."""
        return np.bincount(self.piece_j, minlength=self.Q.shape[0])


@jit(nopython=True, cache=True)
def _g_scalar(r, shape, coef, sigma, a):
    if shape == 0:
        return coef
    return coef * r * r * np.exp(-sigma * (r * r - a * a))


@jit(nopython=True, cache=True)
def _piece_integral(ak, bk, al, bl, R3lo, R3hi, top, shk, cok, sik, shl, col, sil, rho, xg, wg):
    """Integrate the (k, l) rectangle restricted to ``R3lo <= r_k^3 + r_l^3 < R3hi``."""
    bp = np.empty(6)
    nb = 0
    bp[nb] = al
    nb += 1
    bp[nb] = bl
    nb += 1
    for s in range(2):
        if s == 1 and top:
            continue
        R3 = R3lo if s == 0 else R3hi
        for c in (ak, bk):
            t = R3 - c * c * c
            if t > 0.0:
                x = t ** (1.0 / 3.0)
                if al < x < bl:
                    bp[nb] = x
                    nb += 1
    pts = np.sort(bp[:nb])
    qd = 0.0
    qs = 0.0
    ng = xg.shape[0]
    pref = rho * 4.0 * np.pi / 3.0 * np.pi
    for iv in range(nb - 1):
        p, q = pts[iv], pts[iv + 1]
        if q <= p:
            continue
        hw = 0.5 * (q - p)
        mid = 0.5 * (q + p)
        for i in range(ng):
            rs = mid + hw * xg[i]
            rs3 = rs * rs * rs
            lo = ak
            t = R3lo - rs3
            if t > 0.0:
                lo = max(ak, t ** (1.0 / 3.0))
            hi = bk
            if not top:
                t = R3hi - rs3
                if t <= 0.0:
                    continue
                hi = min(bk, t ** (1.0 / 3.0))
            if hi <= lo:
                continue
            gl = _g_scalar(rs, shl, col, sil, al)
            hw2 = 0.5 * (hi - lo)
            mid2 = 0.5 * (hi + lo)
            sd = 0.0
            ss = 0.0
            for m in range(ng):
                rd = mid2 + hw2 * xg[m]
                f = wg[m] * (rd + rs) ** 2 * _g_scalar(rd, shk, cok, sik, ak)
                sd += f * rd * rd * rd
                ss += f
            qd += wg[i] * hw * hw2 * gl * sd
            qs += wg[i] * hw * hw2 * gl * ss * rs3
    return pref * qd, pref * qs


@jit(nopython=True, cache=True)
def _strip_range(rb3, k, l, N):
    smin = rb3[k] + rb3[l]
    smax = rb3[k + 1] + rb3[l + 1]
    jlo = np.searchsorted(rb3, smin, side="right") - 1
    jhi = np.searchsorted(rb3, smax, side="left") - 1
    if jlo > N - 1:
        jlo = N - 1
    if jhi > N - 1:
        jhi = N - 1
    if jhi < jlo:
        jhi = jlo
    return jlo, jhi


@jit(nopython=True, cache=True)
def _build_pieces(rb, shape, coef, sigma, rho, xg, wg):
    N = rb.shape[0] - 1
    rb3 = rb * rb * rb
    count = 0
    for k in range(N):
        for l in range(k):
            jlo, jhi = _strip_range(rb3, k, l, N)
            count += jhi - jlo + 1
    pj = np.empty(count, dtype=np.int64)
    pk = np.empty(count, dtype=np.int64)
    pl = np.empty(count, dtype=np.int64)
    qd = np.empty(count)
    qs = np.empty(count)
    p = 0
    for k in range(N):
        for l in range(k):
            jlo, jhi = _strip_range(rb3, k, l, N)
            for j in range(jlo, jhi + 1):
                top = j == N - 1
                R3hi = rb3[j + 1]
                d, s = _piece_integral(rb[k], rb[k + 1], rb[l], rb[l + 1], rb3[j], R3hi, top,
                                       shape[k], coef[k], sigma[k], shape[l], coef[l], sigma[l],
                                       rho, xg, wg)
                pj[p] = j
                pk[p] = k
                pl[p] = l
                qd[p] = d
                qs[p] = s
                p += 1
    return pj, pk, pl, qd, qs


def precompute_coalescence(grid: SectionGrid, efficiency: float = 1.0) -> CoalescenceTables:
    """Tabulate disappearance and appearance integrals for ``grid``.

    Merged droplets larger than the last boundary are kept in the last
    section, so the tables conserve mass and momentum exactly.
    """
    N = grid.N
    pj, pk, pl, qd, qs = _build_pieces(grid.r_bounds.astype(float), grid.shape, grid.coef,
                                       grid.sigma, grid.rho, _GL_NODES, _GL_WEIGHTS)
    keep = (qd > 0.0) | (qs > 0.0)
    pj, pk, pl, qd, qs = pj[keep], pk[keep], pl[keep], efficiency * qd[keep], efficiency * qs[keep]
    Q = np.zeros((N, N))
    np.add.at(Q, (pk, pl), qd)
    np.add.at(Q, (pl, pk), qs)
    log.debug("coalescence tables: %d sections, %d appearance pieces", N, len(pj))
    return CoalescenceTables(Q, pj, pk, pl, qd, qs)


def direct_rectangle_integral(grid: SectionGrid, j: int, k: int, n: int = 24) -> float:
    """Tensor-product quadrature of the disappearance integral over ``L_jk``."""
    x, w = np.polynomial.legendre.leggauss(n)
    aj, bj = grid.r_bounds[j], grid.r_bounds[j + 1]
    ak, bk = grid.r_bounds[k], grid.r_bounds[k + 1]
    rj = 0.5 * (bj - aj) * x + 0.5 * (aj + bj)
    rk = 0.5 * (bk - ak) * x + 0.5 * (ak + bk)
    RJ, RK = np.meshgrid(rj, rk, indexing="ij")
    f = grid.rho * FOUR_PI_3 * RJ**3 * np.pi * (RJ + RK) ** 2 * grid.g(j, RJ) * grid.g(k, RK)
    return float(0.25 * (bj - aj) * (bk - ak) * np.einsum("i,j,ij->", w, w, f))


def coalescence_sources(m: np.ndarray, u: np.ndarray, tables: CoalescenceTables
                        ) -> tuple[np.ndarray, np.ndarray]:
    """``(C_m, C_mu)`` for section masses ``m`` and velocities ``u``."""
    N = len(m)
    V = np.abs(u[:, None] - u[None, :])
    loss = (tables.Q * V) @ m
    rate = m[tables.piece_k] * m[tables.piece_l] * np.abs(u[tables.piece_k] - u[tables.piece_l])
    Cm = -m * loss + np.bincount(tables.piece_j, rate * (tables.q_big + tables.q_small), N)
    Cmu = -m * u * loss + np.bincount(
        tables.piece_j, rate * (u[tables.piece_k] * tables.q_big + u[tables.piece_l] * tables.q_small), N)
    return Cm, Cmu


# ---------------------------------------------------------------------------
# right-hand side in primitive variables
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class MultifluidOptions:
    N: int | None = None
    r_max: float | None = None
    spacing: str | None = None
    last_section: str = "exponential"
    rtol: float = 1e-4
    atol_floor_rel: float = 1e-8
    mass_floor_rel: float = 1e-14
    method: str = "bdf"


@dataclass
class MultifluidRhs:
    """``d(m, u)/dz`` for all sections, with an analytic Jacobian.

    The section equations are used in the equivalent primitive form::

        du/dz = F (V - u) / u + A / (m u)
        dm/dz = (S_m - 2 m u / z - m du/dz) / u

    where ``A = S_mu - u S_m`` without the drag term.  ``A`` only contains
    appearance and cascade transfers, so for an empty section it relaxes
    the velocity towards that of the incoming mass.  ``m`` in the
    denominator is floored at ``m_floor``.
    """

    grid: SectionGrid
    coeffs: EvapDragCoefficients
    tables: CoalescenceTables | None
    case: SprayCase
    m_floor: float

    def __post_init__(self) -> None:
        N = self.grid.N
        self.N = N
        t = self.tables
        if t is None:
            self._pj = self._pk = self._pl = np.zeros(0, dtype=np.int64)
            self._qd = self._qs = np.zeros(0)
            self._Q = np.zeros((N, N))
        else:
            self._pj, self._pk, self._pl = t.piece_j, t.piece_k, t.piece_l
            self._qd, self._qs, self._Q = t.q_big, t.q_small, t.Q

    def split(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return y[: self.N], y[self.N:]

    def __call__(self, z: float, y: np.ndarray) -> np.ndarray:
        m, u = self.split(y)
        if np.any(u <= 0.0) or not np.all(np.isfinite(u)):
            raise FlowReversalError(f"non-positive section velocity at z={z:.6e}")
        return _mf_rhs(z, m, u, self.case.gas.axial(z), self.coeffs.E1, self.coeffs.E2,
                       self.coeffs.drag_rate, self._Q, self._pj, self._pk, self._pl, self._qd,
                       self._qs, self.m_floor)

    def jacobian(self, z: float, y: np.ndarray) -> np.ndarray:
        m, u = self.split(y)
        if np.any(u <= 0.0):
            raise FlowReversalError(f"non-positive section velocity at z={z:.6e}")
        return _mf_jac(z, m, u, self.case.gas.axial(z), self.coeffs.E1, self.coeffs.E2,
                       self.coeffs.drag_rate, self._Q, self._pj, self._pk, self._pl, self._qd,
                       self._qs, self.m_floor)


@jit(nopython=True, cache=True)
def _mf_sources(m, u, E1, E2, Q, pj, pk, pl, qd, qs):
    """Return ``S_m`` (mass source) and ``A = S_mu - u S_m`` without drag."""
    N = m.shape[0]
    Sm = np.zeros(N)
    A = np.zeros(N)
    for j in range(N):
        Sm[j] = -(E1[j] + E2[j]) * m[j]
        if j + 1 < N:
            Sm[j] += E1[j + 1] * m[j + 1]
            A[j] += E1[j + 1] * m[j + 1] * (u[j + 1] - u[j])
        loss = 0.0
        for k in range(N):
            if Q[j, k] != 0.0:
                loss += Q[j, k] * abs(u[j] - u[k]) * m[k]
        Sm[j] -= m[j] * loss
    for p in range(pj.shape[0]):
        j, k, l = pj[p], pk[p], pl[p]
        rate = m[k] * m[l] * abs(u[k] - u[l])
        Sm[j] += rate * (qd[p] + qs[p])
        A[j] += rate * (qd[p] * (u[k] - u[j]) + qs[p] * (u[l] - u[j]))
    return Sm, A


@jit(nopython=True, cache=True)
def _mf_rhs(z, m, u, V, E1, E2, F, Q, pj, pk, pl, qd, qs, m_floor):
    N = m.shape[0]
    Sm, A = _mf_sources(m, u, E1, E2, Q, pj, pk, pl, qd, qs)
    out = np.empty(2 * N)
    for j in range(N):
        mt = max(m[j], m_floor)
        du = F[j] * (V - u[j]) / u[j] + A[j] / (mt * u[j])
        out[N + j] = du
        out[j] = (Sm[j] - 2.0 * m[j] * u[j] / z - m[j] * du) / u[j]
    return out


@jit(nopython=True, cache=True)
def _mf_jac(z, m, u, V, E1, E2, F, Q, pj, pk, pl, qd, qs, m_floor):
    N = m.shape[0]
    Sm, A = _mf_sources(m, u, E1, E2, Q, pj, pk, pl, qd, qs)
    # derivatives of Sm and A with respect to (m, u): N x 2N
    dS = np.zeros((N, 2 * N))
    dA = np.zeros((N, 2 * N))
    for j in range(N):
        dS[j, j] -= E1[j] + E2[j]
        if j + 1 < N:
            dS[j, j + 1] += E1[j + 1]
            dA[j, j + 1] += E1[j + 1] * (u[j + 1] - u[j])
            dA[j, N + j + 1] += E1[j + 1] * m[j + 1]
            dA[j, N + j] -= E1[j + 1] * m[j + 1]
        loss = 0.0
        for k in range(N):
            q = Q[j, k]
            if q == 0.0:
                continue
            d = u[j] - u[k]
            s = 1.0 if d > 0.0 else (-1.0 if d < 0.0 else 0.0)
            loss += q * abs(d) * m[k]
            dS[j, k] -= m[j] * q * abs(d)
            dS[j, N + j] -= m[j] * q * m[k] * s
            dS[j, N + k] += m[j] * q * m[k] * s
        dS[j, j] -= loss
    for p in range(pj.shape[0]):
        j, k, l = pj[p], pk[p], pl[p]
        d = u[k] - u[l]
        ad = abs(d)
        s = 1.0 if d > 0.0 else (-1.0 if d < 0.0 else 0.0)
        qq = qd[p] + qs[p]
        rate = m[k] * m[l] * ad
        h = qd[p] * (u[k] - u[j]) + qs[p] * (u[l] - u[j])
        dS[j, k] += m[l] * ad * qq
        dS[j, l] += m[k] * ad * qq
        dS[j, N + k] += m[k] * m[l] * s * qq
        dS[j, N + l] -= m[k] * m[l] * s * qq
        dA[j, k] += m[l] * ad * h
        dA[j, l] += m[k] * ad * h
        dA[j, N + k] += m[k] * m[l] * s * h + rate * qd[p]
        dA[j, N + l] += -m[k] * m[l] * s * h + rate * qs[p]
        dA[j, N + j] -= rate * qq
    J = np.zeros((2 * N, 2 * N))
    for j in range(N):
        floored = m[j] < m_floor
        mt = m_floor if floored else m[j]
        uj = u[j]
        du = F[j] * (V - uj) / uj + A[j] / (mt * uj)
        # row for du_j/dz
        for c in range(2 * N):
            J[N + j, c] = dA[j, c] / (mt * uj)
        if not floored:
            J[N + j, j] -= A[j] / (mt * mt * uj)
        J[N + j, N + j] += -F[j] * V / (uj * uj) - A[j] / (mt * uj * uj)
        # row for dm_j/dz = (Sm - 2 m u / z - m du) / u
        for c in range(2 * N):
            J[j, c] = (dS[j, c] - m[j] * J[N + j, c]) / uj
        J[j, j] += (-2.0 * uj / z - du) / uj
        num = Sm[j] - 2.0 * m[j] * uj / z - m[j] * du
        J[j, N + j] += (-2.0 * m[j] / z) / uj - num / (uj * uj)
    return J


# ---------------------------------------------------------------------------
# initial data, reconstruction and the march
# ---------------------------------------------------------------------------
def initial_section_state(grid: SectionGrid, case: SprayCase) -> tuple[np.ndarray, np.ndarray]:
    """Section masses at injection and the injection velocity in every section.

    Dirac peaks deposit their whole mass in the containing section.
    """
    init = case.init
    N = grid.N
    if init.kind == "bimodal":
        m = np.zeros(N)
        masses = init.rho * init.weights * volume_from_radius(init.radii)
        np.add.at(m, grid.locate(init.radii), masses)
    else:
        rb = grid.r_bounds
        m = np.asarray(init.mass_in_radius_interval(rb[:-1], rb[1:]), dtype=float)
        # mass beyond the last boundary (if any) goes into the last section
        m[-1] += init.m0_inj - float(np.sum(m))
        m = np.maximum(m, 0.0)
    u = np.full(N, case.gas.V0)
    return m, u


@dataclass(frozen=True)
class NdfReconstruction:
    r: np.ndarray
    number_per_radius: np.ndarray
    mass_per_radius: np.ndarray
    section: np.ndarray


def reconstruct_ndf(m: np.ndarray, grid: SectionGrid, points_per_section: int = 16) -> NdfReconstruction:
    """Tabulate ``n(r) = m_j g_j(r)`` and the mass density per radius on each section."""
    rs, ns, ms, sec = [], [], [], []
    for j in range(grid.N):
        a, b = grid.r_bounds[j], grid.r_bounds[j + 1]
        r = np.linspace(a, b, points_per_section)
        n = m[j] * grid.g(j, r)
        rs.append(r)
        ns.append(n)
        ms.append(grid.rho * volume_from_radius(r) * n)
        sec.append(np.full(points_per_section, j))
    return NdfReconstruction(np.concatenate(rs), np.concatenate(ns), np.concatenate(ms),
                             np.concatenate(sec))


def section_mass_roundtrip(m: np.ndarray, grid: SectionGrid) -> np.ndarray:
    """``int rho v m_j kappa_j dv`` per section by direct quadrature."""
    return np.array([m[j] * grid.section_integral(j, lambda r: grid.rho * volume_from_radius(r))
                     for j in range(grid.N)])


@dataclass
class MultifluidResult:
    z: np.ndarray
    m: np.ndarray
    u: np.ndarray
    status: str
    z_final: float
    grid: SectionGrid
    coeffs: EvapDragCoefficients
    n_steps: int = 0
    nfev: int = 0
    njev: int = 0
    timings: dict = field(default_factory=dict)


def resolve_layout(case: SprayCase, options: MultifluidOptions) -> tuple[int, float, str]:
    from .cases import SECTION_DEFAULTS
    N0, r0, s0 = SECTION_DEFAULTS.get(case.name, (30, 35e-6, "uniform_radius"))
    N = options.N if options.N is not None else N0
    r_max = options.r_max if options.r_max is not None else r0
    spacing = options.spacing if options.spacing is not None else s0
    if spacing == "optimal12" and N != 12:
        spacing = "uniform_radius"
    return N, r_max, spacing


def solve_multifluid(case: SprayCase, options: MultifluidOptions, z_eval: np.ndarray,
                     tables: CoalescenceTables | None = None) -> MultifluidResult:
    """March the sectional system from injection to ``case.z_end``.

    Stops early once 99.9 % of the injected liquid mass flux has evaporated.
    Pre-built ``tables`` can be passed to reuse them across runs.
    """
    import time

    N, r_max, spacing = resolve_layout(case, options)
    t0 = time.perf_counter()
    grid = build_sections(N, r_max, spacing, case.rho, options.last_section)
    coeffs = precompute_evap_drag(grid, case.evap, case.drag.alpha)
    if case.coal.on and tables is None:
        tables = precompute_coalescence(grid, case.coal.efficiency)
    if not case.coal.on:
        tables = None
    t1 = time.perf_counter()
    m0, u0 = initial_section_state(grid, case)
    total = float(np.sum(m0))
    rhs = MultifluidRhs(grid, coeffs, tables, case, options.mass_floor_rel * total)
    y0 = np.concatenate([m0, u0])
    z0 = case.z0
    atol = np.concatenate([np.full(N, options.rtol * options.atol_floor_rel * total),
                           np.full(N, options.rtol * 1e-3 * case.gas.V0)])
    atol[:N] = np.maximum(atol[:N], options.rtol * 1e-3 * m0)
    events = []
    if case.evap.active:
        # liquid mass flux through the nozzle section, relative to injection
        target = (1.0 - CUTOFF_FRACTION) * float(np.sum(m0 * u0))
        events.append(Event(lambda z, y: float(np.sum(y[:N] * y[N:])) * (z / z0) ** 2 - target,
                            True, -1.0, "mass_cutoff"))
    prob = OdeProblem(rhs, (z0, case.z_end), y0, rtol=options.rtol, atol=atol, z_eval=z_eval,
                      method=options.method, jac=rhs.jacobian, events=events)
    sol = integrate(prob)
    t2 = time.perf_counter()
    z_out = np.asarray(z_eval, dtype=float)
    m = np.zeros((len(z_out), N))
    u = np.full((len(z_out), N), np.nan)
    m[: len(sol.z)] = sol.y[:, :N]
    u[: len(sol.z)] = sol.y[:, N:]
    # past the cutoff the liquid is gone; rows beyond it report empty sections
    keep = np.arange(len(z_out)) < len(sol.z)
    if sol.status == "cutoff":
        keep |= z_out > sol.z_final
    return MultifluidResult(z_out[keep], m[keep], u[keep], sol.status, sol.z_final, grid, coeffs, sol.n_steps,
                            sol.nfev, sol.njev, {"tables": t1 - t0, "march": t2 - t1})

