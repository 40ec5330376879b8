"""Stochastic parcel (DSMC) reference solver for the nozzle spray.

Parcels carry ``n`` identical droplets.  Each time step:

1. new parcels enter at ``z0`` with the gas velocity;
2. velocity, size and position are advanced with the exact exponential
   relaxation of the linear drag law and the exact evaporation law;
3. parcels past ``z_end`` leave the domain;
4. inside each cell, parcels are shuffled and paired, and each pair
   coalesces ``nu ~ Poisson(lambda_12)`` times;
5. every ``sample_every`` steps, per-cell sums are accumulated for the
   time averages.

Parcel state is stored as ``(n, z, u, r)``; droplet volumes are formed on
demand, which avoids a cube root per parcel and step.  All five stages run
inside one compiled kernel; the Python driver handles the fill phase, the
steady-state check and the averaging batches.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import jit

from .cases import FULL_SCALE_RATES
from .errors import ConfigError, SolverError
from .physics import FOUR_PI_3, SprayCase

log = logging.getLogger(__name__)

GOLDEN = 0.5 * (math.sqrt(5.0) - 1.0)
N_CELLS = 130
DESK_SCALE = 0.1
MIN_PARCELS_PER_CELL = 20
QUANTILE_TABLE_SIZE = 8192
EVAP_CODES = {"none": 0, "linear": 1, "nonlinear": 2}


# ---------------------------------------------------------------------------
# configuration and geometry
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Parcel:
    """One numerical particle: ``n`` droplets of volume ``v`` at ``(z, u)``."""

    n: float
    z: float
    u: float
    v: float

    def __post_init__(self) -> None:
        if not (self.n > 0.0 and self.v > 0.0):
            raise ConfigError("parcel weight and volume must be positive")

    @property
    def r(self) -> float:
        return (self.v / FOUR_PI_3) ** (1.0 / 3.0)


@dataclass(frozen=True)
class DsmcConfig:
    """Run parameters.  ``injection_rate=None`` resolves from the case table.

    ``injection_scale`` multiplies the published parcel rate.  At reduced
    scale the averaging window is doubled.
    """

    dt: float = 1e-6
    injection_rate: float | None = None
    injection_scale: float = DESK_SCALE
    seed: int = 20070101
    n_cells: int = N_CELLS
    averaging_window: float | None = None
    window_transits: float = 1.0
    n_batches: int = 8
    sample_every: int = 20
    fill_transits: float = 1.0
    steady_chunk_transits: float = 0.25
    steady_tol: float = 0.005
    max_steady_chunks: int = 12
    stations: tuple[float, ...] = ()
    r_hist_max: float = 100e-6
    n_r_bins: int = 100
    n_u_bins: int = 240
    capacity: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.dt <= 1e-6:
            raise ConfigError("dt must lie in (0, 1e-6] s")
        if self.injection_rate is not None and not self.injection_rate > 0.0:
            raise ConfigError("injection_rate must be positive")
        if not self.injection_scale > 0.0:
            raise ConfigError("injection_scale must be positive")
        if self.n_cells < 1 or self.n_batches < 2 or self.sample_every < 1:
            raise ConfigError("n_cells >= 1, n_batches >= 2 and sample_every >= 1 required")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.averaging_window is not None and not self.averaging_window > 0.0:
            raise ConfigError("averaging_window must be positive")

    def rate_for(self, case: SprayCase) -> float:
        if self.injection_rate is not None:
            return float(self.injection_rate)
        if case.name not in FULL_SCALE_RATES:
            raise ConfigError(f"no published parcel rate for case {case.name!r}; set injection_rate")
        return FULL_SCALE_RATES[case.name] * self.injection_scale

    def window_for(self, transit: float) -> float:
        if self.averaging_window is not None:
            return float(self.averaging_window)
        factor = 2.0 if self.injection_scale < 1.0 else 1.0
        return factor * self.window_transits * transit


@dataclass(frozen=True)
class CellGrid:
    """Cells uniform in ``z^(3/10)``; volumes for a unit inlet cross-section."""

    bounds: np.ndarray
    z0: float

    @classmethod
    def build(cls, z0: float, z_end: float, n_cells: int = N_CELLS) -> "CellGrid":
        if not z_end > z0 > 0.0:
            raise ConfigError("need 0 < z0 < z_end")
        s = np.linspace(z0**0.3, z_end**0.3, n_cells + 1)
        b = s ** (1.0 / 0.3)
        b[0], b[-1] = z0, z_end
        return cls(b, z0)

    @property
    def n(self) -> int:
        return len(self.bounds) - 1

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bounds[1:] + self.bounds[:-1])

    @property
    def volumes(self) -> np.ndarray:
        """``int (z / z0)^2 dz`` over each cell (unit inlet area)."""
        b = self.bounds
        return (b[1:] ** 3 - b[:-1] ** 3) / (3.0 * self.z0**2)

    def locate(self, z) -> np.ndarray:
        return np.clip(np.searchsorted(self.bounds, z, side="right") - 1, 0, self.n - 1)


def gas_transit_time(case: SprayCase) -> float:
    """Time for a gas particle to go from ``z0`` to ``z_end``."""
    z0 = case.gas.z0
    return (case.z_end**3 - z0**3) / (3.0 * z0**2 * case.gas.V0)


def parcel_liquid_volume(case: SprayCase, rate: float) -> float:
    """Liquid volume per parcel so that ``rate`` parcels/s carry the inlet flux."""
    return case.init.m0_inj / case.rho * case.gas.V0 / rate


# ---------------------------------------------------------------------------
# compiled building blocks
# ---------------------------------------------------------------------------
@jit(nopython=True, cache=True)
def _transport(z, u, r, dt, z0, V0, alpha, evap_code, evap_rate, lin_factor):
    """Exact update of one parcel; ``r <= 0`` on return means evaporated."""
    Vg = z0 * z0 * V0 / (z * z)
    if alpha > 0.0:
        e = math.exp(-dt * alpha / (r * r))
        u = u * e + Vg * (1.0 - e)
    if evap_code == 1:
        # v <- v exp(-Ev dt)  <=>  r <- r exp(-Ev dt / 3)
        r = r * lin_factor
    elif evap_code == 2:
        s = 4.0 * np.pi * r * r - evap_rate * dt
        r = math.sqrt(s / (4.0 * np.pi)) if s > 0.0 else 0.0
    return z + dt * u, u, r


@jit(nopython=True, cache=True)
def _poisson_small(rng, lam):
    """Poisson variate; sequential inversion of one uniform for small ``lam``."""
    if lam > 30.0:
        return rng.poisson(lam)
    U = rng.random()
    p = math.exp(-lam)
    F = p
    k = 0
    while U > F:
        k += 1
        p *= lam / k
        F += p
        if p < 1e-17 * F:
            break
    return k


@jit(nopython=True, cache=True)
def _coalesce(n1, r1, u1, n2, r2, u2, nu):
    """Apply ``nu`` coalescences of parcel-1 droplets onto parcel 2 (``n1 >= n2``).

    Returns ``(n1, r2, u2, capped)``.  When ``nu n2 > n1`` only ``n1 / n2``
    events are realised, which keeps droplet mass exact.
    """
    capped = False
    nu_eff = float(nu)
    n1_new = n1 - nu_eff * n2
    if n1_new <= 0.0:
        capped = n1_new < 0.0
        nu_eff = n1 / n2
        n1_new = 0.0
    v1 = 4.0 * np.pi / 3.0 * r1 * r1 * r1
    v2 = 4.0 * np.pi / 3.0 * r2 * r2 * r2
    add = nu_eff * v1
    u2_new = (v2 * u2 + add * u1) / (v2 + add)
    r2_new = ((v2 + add) / (4.0 * np.pi / 3.0)) ** (1.0 / 3.0)
    return n1_new, r2_new, u2_new, capped


@jit(nopython=True, cache=True)
def _bin_cells(pz, count, bounds, cell_of, order, starts):
    nc = bounds.shape[0] - 1
    for c in range(nc + 1):
        starts[c] = 0
    for i in range(count):
        c = np.searchsorted(bounds, pz[i], side="right") - 1
        if c < 0:
            c = 0
        elif c > nc - 1:
            c = nc - 1
        cell_of[i] = c
        starts[c + 1] += 1
    for c in range(nc):
        starts[c + 1] += starts[c]
    fill = starts[:nc].copy()
    for i in range(count):
        c = cell_of[i]
        order[fill[c]] = i
        fill[c] += 1


@jit(nopython=True, cache=True)
def _collide(pn, pz, pu, pr, count, bounds, cell_vol, dt, rng, cell_of, order, starts, counters):
    """One collision step over all cells (binning, shuffle, pairing, events)."""
    _bin_cells(pz, count, bounds, cell_of, order, starts)
    nc = bounds.shape[0] - 1
    for c in range(nc):
        a = starts[c]
        NJ = starts[c + 1] - a
        if NJ < 2:
            continue
        for i in range(NJ - 1, 0, -1):
            j = rng.integers(0, i + 1)
            tmp = order[a + i]
            order[a + i] = order[a + j]
            order[a + j] = tmp
        pref = np.pi * (NJ - 1) * dt / cell_vol[c]
        for p in range(NJ // 2):
            i1 = order[a + 2 * p]
            i2 = order[a + 2 * p + 1]
            if pn[i1] < pn[i2]:
                i1, i2 = i2, i1
            du = abs(pu[i1] - pu[i2])
            counters[0] += 1
            if du == 0.0:
                continue
            rs = pr[i1] + pr[i2]
            nu = _poisson_small(rng, pref * pn[i1] * rs * rs * du)
            if nu == 0:
                continue
            counters[1] += 1
            n1, r2, u2, capped = _coalesce(pn[i1], pr[i1], pu[i1], pn[i2], pr[i2], pu[i2], nu)
            if capped:
                counters[2] += 1
            pn[i1] = n1
            pr[i2] = r2
            pu[i2] = u2


@jit(nopython=True, cache=True)
def _advance(pn, pz, pu, pr, count, nsteps, dt, z0, z_end, V0, alpha, evap_code, evap_rate,
             coal_on, rng, inj_rate, inj_state, parcel_volume, r_table, bounds, cell_vol,
             sample_every, stats, hist, station_cells, r_hist_max, u_hist_max,
             counters, cell_of, order, starts, flux):
    """Run ``nsteps`` steps and return the new parcel count (-1 on overflow).

    ``inj_state = [accumulator, parcels injected, stratification offset]``.
    Each step is sampled with probability ``1 / sample_every`` (only when
    ``stats`` has rows); ``stats[c]`` accumulates
    ``(sum n, sum n v, sum n v (u - V), sum n v^(2/3), parcels)``.
    ``flux`` accumulates injected, outflow and evaporated liquid volume.
    """
    cap = pn.shape[0]
    K = r_table.shape[0]
    nc = bounds.shape[0] - 1
    nst = station_cells.shape[0]
    nrb = hist.shape[1]
    nub = hist.shape[2]
    c43 = 4.0 * np.pi / 3.0
    c23 = c43 ** (2.0 / 3.0)
    lin_factor = math.exp(-evap_rate * dt / 3.0) if evap_code == 1 else 1.0
    for it in range(nsteps):
        # injection: fixed count via a fractional accumulator, radii from
        # golden-ratio stratified mass quantiles
        inj_state[0] += inj_rate * dt
        while inj_state[0] >= 1.0:
            inj_state[0] -= 1.0
            if count >= cap:
                return -1
            q = inj_state[2] + inj_state[1] * 0.6180339887498949
            q = q - math.floor(q)
            inj_state[1] += 1.0
            r = r_table[min(int(q * K), K - 1)]
            pr[count] = r
            pn[count] = parcel_volume / (c43 * r * r * r)
            pu[count] = V0
            pz[count] = z0 + rng.random() * dt * V0
            flux[0] += parcel_volume
            count += 1
        # transport and retirement, compacting in place
        k = 0
        for i in range(count):
            r_old = pr[i]
            zn, un, rn = _transport(pz[i], pu[i], r_old, dt, z0, V0, alpha, evap_code, evap_rate,
                                    lin_factor)
            if rn <= 0.0:
                flux[2] += pn[i] * c43 * r_old * r_old * r_old
                continue
            flux[2] += pn[i] * c43 * (r_old * r_old * r_old - rn * rn * rn)
            if zn >= z_end:
                flux[1] += pn[i] * c43 * rn * rn * rn
                continue
            pn[k] = pn[i]
            pz[k] = zn
            pu[k] = un
            pr[k] = rn
            k += 1
        count = k
        if coal_on:
            _collide(pn, pz, pu, pr, count, bounds, cell_vol, dt, rng, cell_of, order, starts, counters)
            k = 0
            for i in range(count):
                if pn[i] > 0.0:
                    pn[k] = pn[i]
                    pz[k] = pz[i]
                    pu[k] = pu[i]
                    pr[k] = pr[i]
                    k += 1
            count = k
        # sampling instants are random so that they cannot lock onto the
        # periodic injection
        if stats.shape[0] > 0 and rng.random() * sample_every < 1.0:
            counters[3] += 1
            for i in range(count):
                c = np.searchsorted(bounds, pz[i], side="right") - 1
                if c < 0 or c >= nc:
                    continue
                Vg = z0 * z0 * V0 / (pz[i] * pz[i])
                r = pr[i]
                w = pn[i] * c43 * r * r * r
                stats[c, 0] += pn[i]
                stats[c, 1] += w
                stats[c, 2] += w * (pu[i] - Vg)
                stats[c, 3] += pn[i] * c23 * r * r
                stats[c, 4] += 1.0
                for s in range(nst):
                    if station_cells[s] == c:
                        ib = int(r / r_hist_max * nrb)
                        jb = int(pu[i] / u_hist_max * nub)
                        if 0 <= ib < nrb and 0 <= jb < nub:
                            hist[s, ib, jb] += w
    return count


# ---------------------------------------------------------------------------
# single-operation wrappers
# ---------------------------------------------------------------------------
def transport_step(parcel: Parcel, dt: float, case: SprayCase) -> Parcel | None:
    """Advance one parcel by ``dt``; ``None`` when it evaporates completely."""
    if not dt > 0.0:
        raise ConfigError("dt must be positive")
    lin = math.exp(-case.evap.rate * dt / 3.0) if case.evap.kind == "linear" else 1.0
    z, u, r = _transport(parcel.z, parcel.u, parcel.r, dt, case.gas.z0, case.gas.V0, case.drag.alpha,
                         EVAP_CODES[case.evap.kind], case.evap.rate, lin)
    if r <= 0.0:
        return None
    return Parcel(parcel.n, z, u, FOUR_PI_3 * r**3)


@dataclass
class CollisionStats:
    pairs: int
    events: int
    capped: int


def collision_step(n: np.ndarray, z: np.ndarray, u: np.ndarray, r: np.ndarray, grid: CellGrid,
                   dt: float, rng: np.random.Generator) -> CollisionStats:
    """One collision step on parcel arrays, modified in place.

    Parcels whose weight drops to zero stay in the arrays with ``n = 0``.
    """
    count = len(n)
    cell_of = np.zeros(count, dtype=np.int64)
    order = np.zeros(count, dtype=np.int64)
    starts = np.zeros(grid.n + 1, dtype=np.int64)
    counters = np.zeros(4, dtype=np.int64)
    _collide(n, z, u, r, count, grid.bounds, grid.volumes, dt, rng, cell_of, order, starts, counters)
    return CollisionStats(int(counters[0]), int(counters[1]), int(counters[2]))


def mass_quantile_table(case: SprayCase, K: int = QUANTILE_TABLE_SIZE) -> np.ndarray:
    """Radii at the mid-points of ``K`` equal slices of the injected mass."""
    q = (np.arange(K) + 0.5) / K
    return np.asarray(case.init.mass_quantile(q), dtype=float)


def inject_parcels(case: SprayCase, count: int, rate: float, offset: float = 0.0,
                   start: int = 0) -> list[Parcel]:
    """The ``count`` parcels injected after ``start`` earlier ones.

    Every parcel carries the same liquid volume; radii follow the injected
    mass distribution through stratified quantiles ``frac(offset + k g)``
    with ``g`` the golden-ratio conjugate.
    """
    if not rate > 0.0:
        raise ConfigError("injection rate must be positive")
    table = mass_quantile_table(case)
    vp = parcel_liquid_volume(case, rate)
    out = []
    for k in range(start, start + count):
        q = (offset + k * GOLDEN) % 1.0
        r = table[min(int(q * len(table)), len(table) - 1)]
        v = FOUR_PI_3 * r**3
        out.append(Parcel(vp / v, case.gas.z0, case.gas.V0, v))
    return out


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------
@dataclass
class LagrangianResult:
    """Time-averaged cell statistics (SI units) plus batch-means noise bands."""

    z: np.ndarray
    m0: np.ndarray
    m1: np.ndarray
    ud: np.ndarray
    r32: np.ndarray
    m0_noise: np.ndarray
    m1_noise: np.ndarray
    ud_noise: np.ndarray
    parcels_per_cell: np.ndarray
    grid: CellGrid
    stations: np.ndarray
    station_cells: np.ndarray
    hist: np.ndarray
    r_edges: np.ndarray
    u_edges: np.ndarray
    injection_rate: float
    parcel_volume: float
    seed: int
    t_end: float
    steady_drift: float
    n_samples: int = 0
    collision_pairs: int = 0
    collision_events: int = 0
    collision_capped: int = 0
    mass_balance: dict = field(default_factory=dict)

    @property
    def capped_fraction(self) -> float:
        """Share of coalescing pairs where ``nu n2 > n1`` had to be limited."""
        return self.collision_capped / self.collision_events if self.collision_events else 0.0


def _cell_stats(stats: np.ndarray, n_samples, grid: CellGrid, rho: float):
    vol = grid.volumes
    with np.errstate(invalid="ignore", divide="ignore"):
        m0 = stats[..., 0] / (n_samples * vol)
        m1 = rho * stats[..., 1] / (n_samples * vol)
        ud = np.where(stats[..., 1] > 0, stats[..., 2] / stats[..., 1], np.nan)
        r32 = np.where(stats[..., 3] > 0, stats[..., 1] / stats[..., 3] / FOUR_PI_3 ** (1.0 / 3.0), np.nan)
    return m0, m1, ud, r32


class _State:
    """Parcel storage plus the compiled-kernel work arrays."""

    def __init__(self, case: SprayCase, config: DsmcConfig, grid: CellGrid, rate: float, cap: int):
        self.case, self.config, self.grid, self.rate, self.cap = case, config, grid, rate, cap
        self.pn, self.pz, self.pu, self.pr = (np.zeros(cap) for _ in range(4))
        self.cell_of = np.zeros(cap, dtype=np.int64)
        self.order = np.zeros(cap, dtype=np.int64)
        self.starts = np.zeros(grid.n + 1, dtype=np.int64)
        self.counters = np.zeros(4, dtype=np.int64)
        self.flux = np.zeros(3)
        self.rng = np.random.Generator(np.random.PCG64(config.seed))
        self.inj_state = np.array([0.0, 0.0, self.rng.random()])
        self.r_table = mass_quantile_table(case)
        self.parcel_volume = parcel_liquid_volume(case, rate)
        self.count = 0
        self.step = 0
        self.u_hist_max = 1.2 * case.gas.V0
        self.no_stats = np.zeros((0, grid.n, 5))
        self.no_hist = np.zeros((0, 1, 1))
        self.no_stations = np.zeros(0, dtype=np.int64)

    def advance(self, nsteps: int, stats=None, hist=None, station_cells=None) -> None:
        c, cfg = self.case, self.config
        new = _advance(self.pn, self.pz, self.pu, self.pr, self.count, nsteps, cfg.dt, c.z0, c.z_end,
                       c.gas.V0, c.drag.alpha, EVAP_CODES[c.evap.kind], c.evap.rate, c.coal.on,
                       self.rng, self.rate, self.inj_state, self.parcel_volume, self.r_table,
                       self.grid.bounds, self.grid.volumes, cfg.sample_every,
                       self.no_stats if stats is None else stats,
                       self.no_hist if hist is None else hist,
                       self.no_stations if station_cells is None else station_cells,
                       cfg.r_hist_max, self.u_hist_max, self.counters, self.cell_of, self.order,
                       self.starts, self.flux)
        if new < 0:
            raise SolverError(f"parcel storage ({self.cap}) exhausted; raise DsmcConfig.capacity")
        self.count = new
        self.step += nsteps

    def inventory(self) -> float:
        r = self.pr[: self.count]
        return float(np.sum(self.pn[: self.count] * FOUR_PI_3 * r**3))


def run_to_steady_state(case: SprayCase, config: DsmcConfig = DsmcConfig()) -> LagrangianResult:
    """Fill the nozzle, wait for a steady liquid inventory, then time-average.

    Raises
    ------
    ConfigError
        CFL violation ``V0 dt / dz_min >= 0.5``.
    SolverError
        Parcel storage overflow or no steady state within the chunk budget.
    """
    grid = CellGrid.build(case.z0, case.z_end, config.n_cells)
    cfl = case.gas.V0 * config.dt / float(np.min(np.diff(grid.bounds)))
    if cfl >= 0.5:
        raise ConfigError(f"CFL number {cfl:.3f} >= 0.5: reduce dt or the cell count")
    rate = config.rate_for(case)
    transit = gas_transit_time(case)
    cap = config.capacity or int(rate * transit * 4.0) + 10_000
    st = _State(case, config, grid, rate, cap)

    st.advance(int(round(config.fill_transits * transit / config.dt)))
    n_sub = max(1, int(round(config.steady_chunk_transits * transit / config.dt)) // 4)
    prev = np.inf
    drift = np.inf
    for _ in range(config.max_steady_chunks):
        vals = []
        for _sub in range(4):
            st.advance(n_sub)
            vals.append(st.inventory())
        cur = float(np.mean(vals))
        drift = abs(cur - prev) / max(cur, 1e-300) if np.isfinite(prev) else np.inf
        prev = cur
        if drift < config.steady_tol:
            break
    else:
        raise SolverError(f"no steady liquid inventory after {config.max_steady_chunks} chunks "
                          f"(last drift {drift:.3%})")
    log.info("%s: steady at t=%.4f s (drift %.2e), %d parcels", case.name, st.step * config.dt,
             drift, st.count)

    n_win = int(round(config.window_for(transit) / config.dt))
    per_batch = max(config.sample_every, n_win // config.n_batches)
    B = config.n_batches
    stations = np.asarray(config.stations, dtype=float)
    station_cells = grid.locate(stations).astype(np.int64)
    hist = np.zeros((len(stations), config.n_r_bins, config.n_u_bins))
    stats = np.zeros((B, grid.n, 5))
    samples = np.zeros(B, dtype=np.int64)
    st.counters[:] = 0
    flux0 = st.flux.copy()
    for b in range(B):
        before = st.counters[3]
        st.advance(per_batch, stats[b], hist, station_cells)
        samples[b] = st.counters[3] - before
    total = stats.sum(axis=0)
    ns = int(samples.sum())
    m0, m1, ud, r32 = _cell_stats(total, ns, grid, case.rho)
    bm0, bm1, bud, _ = _cell_stats(stats, samples[:, None], grid, case.rho)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        m0_noise, m1_noise, ud_noise = (np.nanstd(x, axis=0, ddof=1) / np.sqrt(B) for x in (bm0, bm1, bud))
    ppc = total[:, 4] / max(ns, 1)
    occupied = m1 > 1e-3 * np.nanmax(m1)
    if np.any(ppc[occupied] < MIN_PARCELS_PER_CELL):
        log.warning("occupied cells with fewer than %d parcels (min %.1f): statistics are noisy",
                    MIN_PARCELS_PER_CELL, float(np.min(ppc[occupied])))
    dflux = st.flux - flux0
    res = LagrangianResult(
        grid.centers, m0, m1, ud, r32, m0_noise, m1_noise, ud_noise, ppc, grid, stations,
        station_cells, hist, np.linspace(0.0, config.r_hist_max, config.n_r_bins + 1),
        np.linspace(0.0, st.u_hist_max, config.n_u_bins + 1), rate, st.parcel_volume, config.seed,
        st.step * config.dt, drift, ns, int(st.counters[0]), int(st.counters[1]), int(st.counters[2]),
        {"injected": float(dflux[0]), "outflow": float(dflux[1]), "evaporated": float(dflux[2]),
         "inventory": st.inventory()})
    if res.capped_fraction > 0.01:
        log.warning("%.2f%% of coalescence events hit the nu n2 <= n1 limit", 100 * res.capped_fraction)
    return res
