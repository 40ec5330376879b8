"""Diagnostics, runs and cross-method comparison for the nozzle test cases.

Every method is reduced to the same per-station quantities: number density
``m0`` (1/cm^3), mass density ``m1`` (mg/cm^3), mass-weighted velocity lag
``u_d`` (m/s) and Sauter radius ``r32`` (um).  Lagrangian runs report cell
averages on their own grid; comparisons against them project the Eulerian
curves onto the same cells before differencing.
"""
from __future__ import annotations

import configparser
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import __version__
from .cases import build_case, parse_case_id
from .dqmom import DqmomOptions, DqmomResult, solve_dqmom
from .errors import ConfigError
from .lagrangian import DsmcConfig, LagrangianResult, run_to_steady_state
from .multifluid import (MultifluidOptions, MultifluidResult, build_sections, precompute_coalescence,
                         reconstruct_ndf, resolve_layout, solve_multifluid)
from .physics import FOUR_PI_3, SprayCase

log = logging.getLogger(__name__)

METHODS = ("dqmom", "multifluid", "lagrangian")
DIAG_HEADER = ("z_cm", "m0_per_cm3", "m1_mg_per_cm3", "ud_m_per_s", "r32_um")
SNAP_HEADER = ("r_um", "mass_density", "uz_m_per_s")
SNAP_HEADER_P50 = SNAP_HEADER + ("p50_lo", "p50_hi")
NOISE_HEADER = ("z_cm", "m0_noise", "m1_noise", "ud_noise")
DEFAULT_STATIONS = {"mono": (0.16, 0.22), "bi": (0.11,)}
#: Monte Carlo band half-width, in batch-means standard errors
NOISE_SIGMAS = 2.0

PER_M3_TO_PER_CM3 = 1e-6
KG_M3_TO_MG_CM3 = 1.0
CBRT_3_OVER_4PI = (1.0 / FOUR_PI_3) ** (1.0 / 3.0)


def fmt(x: float) -> str:
    """Nine significant digits in scientific notation; blank for absent values."""
    if x is None or not np.isfinite(x):
        return ""
    return f"{x:.8e}"


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DiagnosticRecord:
    """Moments at one station, output units.  Absent quantities are ``None``."""

    z: float
    m0: float
    m1: float
    u_d: float | None
    r32: float | None


def node_diagnostics(z: float, w, v, xi, V: float, rho: float) -> DiagnosticRecord:
    """Moments of a weighted point set (number densities ``w``, volumes ``v``).

    The mass-weighted lag is ``sum w v (xi - V) / sum w v`` and the Sauter
    radius ``(3 / 4 pi)^(1/3) sum w v / sum w v^(2/3)``.
    """
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    xi = np.asarray(xi, dtype=float)
    live = w > 0.0
    w, v, xi = w[live], v[live], xi[live]
    wv = float(np.sum(w * v))
    m0 = float(np.sum(w))
    if wv <= 0.0:
        return DiagnosticRecord(100.0 * z, m0 * PER_M3_TO_PER_CM3, 0.0, None, None)
    ud = float(np.sum(w * v * (xi - V))) / wv
    r32 = CBRT_3_OVER_4PI * wv / float(np.sum(w * v ** (2.0 / 3.0)))
    return DiagnosticRecord(100.0 * z, m0 * PER_M3_TO_PER_CM3, rho * wv * KG_M3_TO_MG_CM3, ud, 1e6 * r32)


@dataclass
class DiagnosticSeries:
    """Diagnostics along ``z``; absent ``u_d`` / ``r32`` are stored as NaN.

    ``cell_bounds`` (cm) marks cell-averaged data; the ``*_noise`` arrays are
    batch-means standard errors of the cell averages.
    """

    method: str
    case_id: str
    z: np.ndarray
    m0: np.ndarray
    m1: np.ndarray
    u_d: np.ndarray
    r32: np.ndarray
    cell_bounds: np.ndarray | None = None
    m0_noise: np.ndarray | None = None
    m1_noise: np.ndarray | None = None
    ud_noise: np.ndarray | None = None

    @classmethod
    def from_records(cls, method: str, case_id: str, records: list[DiagnosticRecord]) -> "DiagnosticSeries":
        arr = lambda name: np.array([np.nan if getattr(r, name) is None else getattr(r, name)  # noqa: E731
                                     for r in records], dtype=float)
        return cls(method, case_id, arr("z"), arr("m0"), arr("m1"), arr("u_d"), arr("r32"))

    def records(self) -> list[DiagnosticRecord]:
        opt = lambda x: None if not np.isfinite(x) else float(x)  # noqa: E731
        return [DiagnosticRecord(float(z), float(a), float(b), opt(c), opt(d))
                for z, a, b, c, d in zip(self.z, self.m0, self.m1, self.u_d, self.r32)]

    @property
    def noisy(self) -> bool:
        return self.m1_noise is not None

    def band(self, quantity: str) -> np.ndarray:
        """Monte Carlo band half-width for ``m1`` or ``u_d`` (zero when exact)."""
        noise = {"m1": self.m1_noise, "u_d": self.ud_noise, "m0": self.m0_noise}[quantity]
        if noise is None:
            return np.zeros_like(self.z)
        return NOISE_SIGMAS * np.nan_to_num(noise)


def _node_series(method, case, z, w, v, xi) -> DiagnosticSeries:
    V = case.gas.axial(z)
    recs = [node_diagnostics(z[i], w[i], v[i], xi[i], V[i], case.rho) for i in range(len(z))]
    return DiagnosticSeries.from_records(method, case.name, recs)


def dqmom_diagnostics(res: DqmomResult, case: SprayCase) -> DiagnosticSeries:
    w = res.weights(case.z0)
    return _node_series("dqmom", case, res.z, w, np.nan_to_num(res.v), np.nan_to_num(res.xi))


def multifluid_diagnostics(res: MultifluidResult, case: SprayCase) -> DiagnosticSeries:
    """Section sums: ``sum m_j`` and the per-mass number and ``v^(2/3)`` integrals."""
    c = res.coeffs
    m = res.m
    u = np.nan_to_num(res.u)
    V = case.gas.axial(res.z)
    m1 = m.sum(axis=1)
    m0 = m @ c.number_per_mass
    with np.errstate(invalid="ignore", divide="ignore"):
        ud = np.where(m1 > 0, np.sum(m * (u - V[:, None]), axis=1) / m1, np.nan)
        r32 = np.where(m1 > 0, CBRT_3_OVER_4PI * (m1 / case.rho) / (m @ c.v23_per_mass), np.nan)
    return DiagnosticSeries("multifluid", case.name, 100.0 * res.z, m0 * PER_M3_TO_PER_CM3,
                            m1 * KG_M3_TO_MG_CM3, ud, 1e6 * r32)


def lagrangian_diagnostics(res: LagrangianResult, case: SprayCase) -> DiagnosticSeries:
    return DiagnosticSeries("lagrangian", case.name, 100.0 * res.z, res.m0 * PER_M3_TO_PER_CM3,
                            res.m1 * KG_M3_TO_MG_CM3, res.ud, 1e6 * res.r32,
                            cell_bounds=100.0 * res.grid.bounds,
                            m0_noise=res.m0_noise * PER_M3_TO_PER_CM3,
                            m1_noise=res.m1_noise * KG_M3_TO_MG_CM3, ud_noise=res.ud_noise)


def compute_diagnostics(result, case: SprayCase) -> DiagnosticSeries:
    """Dispatch on the solver result type."""
    if isinstance(result, DqmomResult):
        return dqmom_diagnostics(result, case)
    if isinstance(result, MultifluidResult):
        return multifluid_diagnostics(result, case)
    if isinstance(result, LagrangianResult):
        return lagrangian_diagnostics(result, case)
    raise TypeError(f"no diagnostics for {type(result).__name__}")


# ---------------------------------------------------------------------------
# distribution snapshots
# ---------------------------------------------------------------------------
@dataclass
class DistributionSnapshot:
    """Mass distribution and conditional velocity at one station.

    ``kind='nodes'``: ``mass_density`` is the mass of each point (mg/cm^3).
    ``kind='density'`` / ``'histogram'``: mass per unit radius (mg/cm^3/um);
    histogram rows sit at bin centres of width ``dr``.
    """

    z: float
    kind: str
    r: np.ndarray
    mass_density: np.ndarray
    uz: np.ndarray
    p50_lo: np.ndarray | None = None
    p50_hi: np.ndarray | None = None
    dr: float = 0.0
    section: np.ndarray | None = None

    def total_mass(self) -> float:
        if self.kind == "nodes":
            return float(np.sum(self.mass_density))
        if self.kind == "histogram":
            return float(np.sum(self.mass_density) * self.dr)
        total = 0.0
        for j in np.unique(self.section):
            sel = self.section == j
            total += float(np.trapezoid(self.mass_density[sel], self.r[sel]))
        return total


def dqmom_snapshot(res: DqmomResult, case: SprayCase, i: int) -> DistributionSnapshot:
    w = res.weights(case.z0)[i]
    live = w > 0
    v = res.v[i][live]
    r = np.cbrt(v / FOUR_PI_3)
    order = np.argsort(r)
    return DistributionSnapshot(100.0 * res.z[i], "nodes", 1e6 * r[order],
                                (case.rho * w[live] * v)[order] * KG_M3_TO_MG_CM3, res.xi[i][live][order])


def multifluid_snapshot(res: MultifluidResult, i: int, points_per_section: int = 16) -> DistributionSnapshot:
    rec = reconstruct_ndf(res.m[i], res.grid, points_per_section)
    # mass per metre of radius -> per micrometre
    return DistributionSnapshot(100.0 * res.z[i], "density", 1e6 * rec.r, 1e-6 * rec.mass_per_radius,
                                res.u[i][rec.section], section=rec.section)


def _weighted_quantile(cdf_x: np.ndarray, weights: np.ndarray, q: float) -> float:
    c = np.cumsum(weights)
    c = c / c[-1]
    return float(np.interp(q, np.concatenate([[0.0], c]), cdf_x))


def lagrangian_snapshot(res: LagrangianResult, case: SprayCase, s: int) -> DistributionSnapshot:
    """Histogram rows with mass, mean velocity and the central 50% velocity interval."""
    h = res.hist[s]
    vol = res.grid.volumes[res.station_cells[s]]
    dr_um = 1e6 * (res.r_edges[1] - res.r_edges[0])
    mass = case.rho * h.sum(axis=1) / (max(res.n_samples, 1) * vol) / dr_um
    u_c = 0.5 * (res.u_edges[1:] + res.u_edges[:-1])
    rows = np.nonzero(h.sum(axis=1) > 0)[0]
    uz, lo, hi = [], [], []
    for b in rows:
        wts = h[b]
        uz.append(float(np.sum(wts * u_c) / np.sum(wts)))
        lo.append(_weighted_quantile(res.u_edges, wts, 0.25))
        hi.append(_weighted_quantile(res.u_edges, wts, 0.75))
    r_c = 0.5 * (res.r_edges[1:] + res.r_edges[:-1])
    return DistributionSnapshot(100.0 * res.grid.centers[res.station_cells[s]], "histogram",
                                1e6 * r_c[rows], mass[rows] * KG_M3_TO_MG_CM3, np.array(uz),
                                np.array(lo), np.array(hi), dr=dr_um)


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------
@dataclass
class RunOutput:
    case_id: str
    method: str
    series: DiagnosticSeries
    snapshots: list[DistributionSnapshot]
    options: object
    result: object
    meta: dict = field(default_factory=dict)


def default_options(method: str):
    if method == "dqmom":
        return DqmomOptions()
    if method == "multifluid":
        return MultifluidOptions()
    if method == "lagrangian":
        return DsmcConfig()
    raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")


def run_case(case_id: str, method: str, options=None, n_points: int = 200,
             stations: tuple[float, ...] | None = None, case: SprayCase | None = None) -> RunOutput:
    """Solve one case with one method and reduce it to diagnostics and snapshots.

    ``stations`` are axial positions in metres; defaults depend on the
    injected distribution.  Lagrangian diagnostics live on the cell centres.
    """
    dist, _, _ = parse_case_id(case_id)
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    if n_points < 2:
        raise ConfigError("n_points must be at least 2")
    case = build_case(case_id) if case is None else case
    options = default_options(method) if options is None else options
    stations = DEFAULT_STATIONS[dist] if stations is None else tuple(stations)
    stations = tuple(s for s in stations if case.z0 <= s <= case.z_end)
    meta = {"case_id": case_id, "method": method, "n_points": n_points,
            "stations_m": ",".join(repr(s) for s in stations)}
    if method == "lagrangian":
        from dataclasses import replace
        options = replace(options, stations=stations)
        res = run_to_steady_state(case, options)
        series = lagrangian_diagnostics(res, case)
        snaps = [lagrangian_snapshot(res, case, s) for s in range(len(stations))]
        meta.update({"seed": options.seed, "injection_rate": res.injection_rate,
                     "t_end": res.t_end, "steady_drift": res.steady_drift,
                     "collision_capped_fraction": res.capped_fraction})
        return RunOutput(case_id, method, series, snaps, options, res, meta)

    z_grid = np.linspace(case.z0, case.z_end, n_points)
    z_all = np.union1d(z_grid, np.asarray(stations, dtype=float))
    on_grid = np.isin(z_all, z_grid)
    if method == "dqmom":
        res = solve_dqmom(case, options, z_all)
        full = dqmom_diagnostics(res, case)
        snaps = [dqmom_snapshot(res, case, int(np.searchsorted(res.z, s))) for s in stations
                 if np.searchsorted(res.z, s) < len(res.z)]
        meta.update({"status": res.status, "z_final": res.z_final,
                     "extinctions": ";".join(f"{z!r}:{k}" for z, k in res.extinctions)})
    else:
        res = solve_multifluid(case, options, z_all)
        full = multifluid_diagnostics(res, case)
        snaps = [multifluid_snapshot(res, int(np.searchsorted(res.z, s))) for s in stations
                 if np.searchsorted(res.z, s) < len(res.z)]
        N, r_max, spacing = resolve_layout(case, options)
        meta.update({"status": res.status, "z_final": res.z_final, "sections": N,
                     "r_max": r_max, "spacing": spacing})
    keep = on_grid[: len(full.z)]
    series = DiagnosticSeries(method, case_id, full.z[keep], full.m0[keep], full.m1[keep],
                              full.u_d[keep], full.r32[keep])
    return RunOutput(case_id, method, series, snaps, options, res, meta)


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------
_GL4_X, _GL4_W = np.polynomial.legendre.leggauss(4)


def _pchip(z: np.ndarray, y: np.ndarray):
    ok = np.isfinite(y)
    return PchipInterpolator(z[ok], y[ok], extrapolate=True)


def resample(series: DiagnosticSeries, ref: DiagnosticSeries) -> DiagnosticSeries:
    """Candidate values on the reference stations.

    Against cell-averaged references the candidate is averaged over each
    cell with the nozzle area weight ``z^2`` (mass-weighted for ``u_d``, and
    ``r32`` formed from the averaged ``m1`` and ``m1 / r32``); otherwise it
    is interpolated with a monotone cubic.
    """
    z = series.z
    m1 = np.nan_to_num(series.m1)
    flux_ud = m1 * np.nan_to_num(series.u_d)
    with np.errstate(invalid="ignore", divide="ignore"):
        surf = np.where(m1 > 0, m1 / series.r32, 0.0)
    f_m0, f_m1, f_mu, f_s = (_pchip(z, q) for q in (series.m0, m1, flux_ud, np.nan_to_num(surf)))
    if ref.cell_bounds is None:
        zr = ref.z
        a0, a1, amu, asf = f_m0(zr), f_m1(zr), f_mu(zr), f_s(zr)
    else:
        b = ref.cell_bounds
        lo, hi = b[:-1, None], b[1:, None]
        zq = 0.5 * (hi - lo) * _GL4_X[None, :] + 0.5 * (hi + lo)
        wq = _GL4_W[None, :] * zq**2
        avg = lambda f: np.sum(wq * f(zq), axis=1) / np.sum(wq, axis=1)  # noqa: E731
        a0, a1, amu, asf = avg(f_m0), avg(f_m1), avg(f_mu), avg(f_s)
    # beyond the candidate's last live station everything is zero
    a1 = np.maximum(a1, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        ud = np.where(a1 > 0, amu / a1, np.nan)
        r32 = np.where((a1 > 0) & (asf > 0), a1 / asf, np.nan)
    return DiagnosticSeries(series.method, series.case_id, ref.z.copy(), a0, a1, ud, r32)


def _same_grid(a: DiagnosticSeries, b: DiagnosticSeries) -> bool:
    return a.cell_bounds is None and len(a.z) == len(b.z) and np.allclose(a.z, b.z, rtol=0, atol=1e-12)


@dataclass
class ErrorColumns:
    """Per-station errors of one candidate against the reference."""

    name: str
    resampled: bool
    d_m1: np.ndarray
    d_ud: np.ndarray
    rel_m1: np.ndarray          # d_m1 / m1_ref(z)
    rel_ud: np.ndarray          # d_ud / |u_d,ref(z)|
    norm_m1: np.ndarray         # d_m1 / max m1_ref
    norm_ud: np.ndarray         # d_ud / max |u_d,ref|
    excess_m1: np.ndarray       # (|d_m1| - band) / max m1_ref, floored at 0
    excess_ud: np.ndarray

    def summary(self) -> dict:
        def stats(x):
            x = np.abs(x[np.isfinite(x)])
            return (float(np.max(x)), float(np.mean(x))) if x.size else (0.0, 0.0)
        out = {}
        for key in ("norm_m1", "norm_ud", "excess_m1", "excess_ud", "rel_m1", "rel_ud"):
            mx, mean = stats(getattr(self, key))
            out[f"max_{key}"] = mx
            out[f"mean_{key}"] = mean
        return out


@dataclass
class ComparisonReport:
    reference: str
    z: np.ndarray
    ref_m1: np.ndarray
    ref_ud: np.ndarray
    band_m1: np.ndarray
    band_ud: np.ndarray
    columns: dict[str, ErrorColumns]
    sweep: list[dict] = field(default_factory=list)

    def summary_rows(self) -> list[dict]:
        return [{"candidate": k, "resampled": c.resampled, **c.summary()} for k, c in self.columns.items()]


def compare(reference: DiagnosticSeries, candidates: dict[str, DiagnosticSeries]) -> ComparisonReport:
    """Errors of every candidate against ``reference`` on the reference stations.

    Normalised errors divide by the largest reference value; the ``excess``
    columns first subtract the reference noise band.
    """
    ref = reference
    if reference.case_id and any(c.case_id and c.case_id != ref.case_id for c in candidates.values()):
        raise ConfigError("compared runs belong to different cases")
    band_m1, band_ud = ref.band("m1"), ref.band("u_d")
    live = np.nan_to_num(ref.m1) > 0
    s_m1 = float(np.nanmax(ref.m1)) if np.any(live) else 1.0
    s_ud = float(np.nanmax(np.abs(ref.u_d))) if np.any(np.isfinite(ref.u_d)) else 1.0
    s_ud = s_ud if s_ud > 0 else 1.0
    cols = {}
    for name, cand in candidates.items():
        resampled = not _same_grid(cand, ref)
        c = resample(cand, ref) if resampled else cand
        if resampled:
            log.info("%s resampled onto the %s stations", name, ref.method)
        d_m1 = np.nan_to_num(c.m1) - np.nan_to_num(ref.m1)
        d_ud = np.where(live, c.u_d - ref.u_d, np.nan)
        with np.errstate(invalid="ignore", divide="ignore"):
            rel_m1 = np.where(live, d_m1 / ref.m1, np.nan)
            rel_ud = np.where(live, d_ud / np.abs(ref.u_d), np.nan)
        cols[name] = ErrorColumns(name, resampled, d_m1, d_ud, rel_m1, rel_ud, d_m1 / s_m1, d_ud / s_ud,
                                  np.maximum(np.abs(d_m1) - band_m1, 0.0) / s_m1,
                                  np.where(live, np.maximum(np.abs(d_ud) - band_ud, 0.0) / s_ud, np.nan))
    return ComparisonReport(ref.method, ref.z, ref.m1, ref.u_d, band_m1, band_ud, cols)


def dqmom_sweep(case_id: str, reference: DiagnosticSeries, Ns=(2, 4, 6, 8), base: DqmomOptions | None = None,
                n_points: int = 200) -> tuple[list[dict], dict[int, DiagnosticSeries]]:
    """Errors of DQMOM with ``N`` nodes against ``reference`` for every ``N``."""
    from dataclasses import replace
    base = DqmomOptions() if base is None else base
    rows, runs = [], {}
    for N in Ns:
        out = run_case(case_id, "dqmom", replace(base, N=N), n_points=n_points, stations=())
        runs[N] = out.series
        col = compare(reference, {f"dqmom_N{N}": out.series}).columns[f"dqmom_N{N}"]
        rows.append({"N": N, **col.summary()})
    return rows, runs


def spurious_coalescence_fraction(case_id: str = "bi_lin_coal", N: int = 500, r_max: float = 200e-6,
                                  n_z: int = 401) -> float:
    """Mass produced by collisions among small-mode sections, per injected mass.

    Two-population runs should coalesce only small-with-large droplets.  The
    small/large split is the geometric mean of the two peak radii obtained
    without coalescence; collisions whose partner sections both lie wholly
    below that split create spurious mass.  The production rate is
    integrated along the nozzle (area weight ``(z/z0)^2``) and divided by the
    injected mass flux ``m0 V0``.
    """
    case = build_case(case_id)
    dist, evap, coal = parse_case_id(case_id)
    if dist != "bi" or not coal:
        raise ConfigError("spurious coalescence is defined for two-population coalescing cases")
    zz = np.linspace(case.z0, case.z_end, n_z)
    peaks = solve_dqmom(build_case(f"bi_{evap}_nocoal"), DqmomOptions(N=2, flux_model="zero"), zz)
    r_peaks = np.cbrt(peaks.v / FOUR_PI_3)
    r_split = np.sqrt(r_peaks[:, 0] * r_peaks[:, 1])
    grid = build_sections(N, r_max, "uniform_radius", case.rho)
    tables = precompute_coalescence(grid, case.coal.efficiency)
    res = solve_multifluid(case, MultifluidOptions(N=N, r_max=r_max, spacing="uniform_radius"), zz, tables=tables)
    r_up = grid.r_bounds[1:]
    k, l = tables.piece_k, tables.piece_l
    q = tables.q_big + tables.q_small
    prod = np.zeros(len(res.z))
    for i, (m, u) in enumerate(zip(res.m, np.nan_to_num(res.u))):
        sel = (r_up[k] <= r_split[i]) & (r_up[l] <= r_split[i])
        prod[i] = np.sum((m[k] * m[l] * np.abs(u[k] - u[l]) * q)[sel])
    prod *= (res.z / case.z0) ** 2
    return float(np.trapezoid(prod, res.z) / (case.init.m0_inj * case.gas.V0))


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------
def write_diagnostics(path: Path, series: DiagnosticSeries) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(DIAG_HEADER)
        for row in zip(series.z, series.m0, series.m1, series.u_d, series.r32):
            wr.writerow([fmt(x) for x in row])


def read_diagnostics(path: Path, method: str = "", case_id: str = "") -> DiagnosticSeries:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = tuple(next(rd))
        if header != DIAG_HEADER:
            raise ConfigError(f"{path}: unexpected header {','.join(header)}")
        rows = [[float(x) if x else np.nan for x in row] for row in rd]
    a = np.array(rows, dtype=float).reshape(-1, len(DIAG_HEADER))
    return DiagnosticSeries(method, case_id, *(a[:, i] for i in range(len(DIAG_HEADER))))


def write_noise(path: Path, series: DiagnosticSeries) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(NOISE_HEADER)
        for row in zip(series.z, series.m0_noise, series.m1_noise, series.ud_noise):
            wr.writerow([fmt(x) for x in row])
    with open(path.with_name("cells.csv"), "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(("z_lo_cm", "z_hi_cm"))
        for lo, hi in zip(series.cell_bounds[:-1], series.cell_bounds[1:]):
            wr.writerow((fmt(lo), fmt(hi)))


def write_snapshot(path: Path, snap: DistributionSnapshot) -> None:
    has_p50 = snap.p50_lo is not None
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(SNAP_HEADER_P50 if has_p50 else SNAP_HEADER)
        cols = [snap.r, snap.mass_density, snap.uz] + ([snap.p50_lo, snap.p50_hi] if has_p50 else [])
        for row in zip(*cols):
            wr.writerow([fmt(x) for x in row])


def _flatten(obj) -> dict:
    from dataclasses import asdict, is_dataclass
    if is_dataclass(obj):
        return {k: (",".join(map(repr, v)) if isinstance(v, tuple) else v) for k, v in asdict(obj).items()}
    return dict(obj or {})


def write_meta(path: Path, out: RunOutput, extra: dict | None = None) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["run"] = {k: str(v) for k, v in {**out.meta, "version": __version__, **(extra or {})}.items()}
    cp[out.method] = {k: str(v) for k, v in _flatten(out.options).items()}
    with open(path, "w") as fh:
        cp.write(fh)


def write_run(directory: Path, out: RunOutput, extra_meta: dict | None = None) -> Path:
    """Write diagnostics, snapshots and ``meta`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_diagnostics(directory / "diagnostics.csv", out.series)
    if out.series.noisy:
        write_noise(directory / "noise.csv", out.series)
    for snap in out.snapshots:
        write_snapshot(directory / f"snapshot_z{snap.z:.2f}cm.csv", snap)
    write_meta(directory / "meta", out, extra_meta)
    return directory


def read_meta(directory: Path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if not cp.read(Path(directory) / "meta"):
        raise ConfigError(f"{directory}: no meta file")
    return cp


def load_run(directory: Path) -> DiagnosticSeries:
    """Diagnostics of a written run, with noise and cells when present."""
    directory = Path(directory)
    meta = read_meta(directory)
    s = read_diagnostics(directory / "diagnostics.csv", meta["run"]["method"], meta["run"]["case_id"])
    noise = directory / "noise.csv"
    if noise.exists():
        with open(noise, newline="") as fh:
            rd = csv.reader(fh)
            next(rd)
            a = np.array([[float(x) if x else np.nan for x in row] for row in rd], dtype=float)
        s.m0_noise, s.m1_noise, s.ud_noise = a[:, 1], a[:, 2], a[:, 3]
        with open(directory / "cells.csv", newline="") as fh:
            rd = csv.reader(fh)
            next(rd)
            c = np.array([[float(x) for x in row] for row in rd], dtype=float)
        s.cell_bounds = np.concatenate([c[:, 0], c[-1:, 1]])
    return s


def write_report(path: Path, report: ComparisonReport) -> None:
    """Per-station error columns followed by a summary file alongside."""
    names = list(report.columns)
    header = ["z_cm", "m1_ref", "ud_ref", "band_m1", "band_ud"]
    for n in names:
        header += [f"{n}_d_m1", f"{n}_rel_m1", f"{n}_norm_m1", f"{n}_d_ud", f"{n}_rel_ud", f"{n}_norm_ud"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for i, z in enumerate(report.z):
            row = [z, report.ref_m1[i], report.ref_ud[i], report.band_m1[i], report.band_ud[i]]
            for n in names:
                c = report.columns[n]
                row += [c.d_m1[i], c.rel_m1[i], c.norm_m1[i], c.d_ud[i], c.rel_ud[i], c.norm_ud[i]]
            wr.writerow([fmt(x) for x in row])
    rows = report.summary_rows() + [{"candidate": f"sweep_N{r['N']}", "resampled": False,
                                     **{k: v for k, v in r.items() if k != "N"}} for r in report.sweep]
    if rows:
        keys = list(rows[0])
        with open(path.with_name(path.stem + "_summary.csv"), "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(keys)
            for r in rows:
                wr.writerow([fmt(r[k]) if isinstance(r[k], float) else r[k] for k in keys])


def relaxation_ordering(report: ComparisonReport, slower: str, faster: str) -> tuple[float, float]:
    """Mean signed velocity-lag differences of two candidates against the reference.

    Slower relaxation keeps droplets ahead of the decelerating gas for
    longer, so the slower method should show a positive mean and the faster
    one a negative mean.
    """
    a = report.columns[slower].d_ud
    b = report.columns[faster].d_ud
    return float(np.nanmean(a)), float(np.nanmean(b))



def number_density_steps(series: DiagnosticSeries, count: int = 2, min_separation_cm: float = 1.0) -> np.ndarray:
    """Axial positions (cm) of the ``count`` sharpest drops in ``m0 z^2``.

    Each drop is located at the midpoint of the interval where the
    area-scaled number density falls the most; later picks must lie at
    least ``min_separation_cm`` from earlier ones.
    """
    z = series.z
    q = np.nan_to_num(series.m0) * z**2
    drop = -np.diff(q) / max(float(np.max(q)), 1e-300)
    mid = 0.5 * (z[1:] + z[:-1])
    picks: list[float] = []
    for i in np.argsort(drop)[::-1]:
        if drop[i] <= 0:
            break
        if all(abs(mid[i] - p) >= min_separation_cm for p in picks):
            picks.append(float(mid[i]))
        if len(picks) == count:
            break
    return np.sort(np.array(picks))
