"""Physical models shared by every solver.

Everything here is expressed in SI units (m, s, kg).  Conversions to the
laboratory units used in output files (cm, um, mg/cm^3) live in
:mod:`spraycoal.units`.

The module defines the self-similar nozzle gas field, the Stokes-type drag
law, the evaporation laws, the geometric coalescence kernel and the two
injected droplet distributions (a smooth monomodal one and a bimodal pair of
Dirac peaks).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import optimize, special

from .errors import ConfigError, DomainError

FOUR_PI_3 = 4.0 * np.pi / 3.0

#: drag coefficient alpha (m^2/s); 1/tau = alpha / r^2
ALPHA_DRAG = 1.566e-7
#: surface regression rate of the nonlinear (d^2-type) law (m^2/s)
ES_NONLINEAR = 1.99e-7
#: linear volume evaporation rates (1/s)
EV_MONOMODAL = 7.1262
EV_BIMODAL = 14.2524
#: liquid (heptane) density, kg/m^3; used only for number <-> mass conversion
RHO_LIQUID = 649.4
#: injected liquid mass density, kg/m^3 (3.609 mg/cm^3)
M0_INJECTED = 3.609
V0_GAS = 5.0
Z0_MONOMODAL = 0.10
Z0_BIMODAL = 0.05


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------
def volume_from_radius(r):
    """Sphere volume ``4 pi r^3 / 3``."""
    return FOUR_PI_3 * np.asarray(r, dtype=float) ** 3


def radius_from_volume(v):
    """Sphere radius ``(3 v / 4 pi)^(1/3)``; uses ``cbrt`` for exact round trips."""
    return np.cbrt(np.asarray(v, dtype=float) / FOUR_PI_3)


def surface_from_radius(r):
    return 4.0 * np.pi * np.asarray(r, dtype=float) ** 2


# ---------------------------------------------------------------------------
# gas field
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class GasField:
    """Decelerating self-similar nozzle flow ``V(z) = z0^2 V0 / z^2``."""

    z0: float
    V0: float = V0_GAS

    def __post_init__(self) -> None:
        if not (self.z0 > 0.0 and self.V0 > 0.0):
            raise ConfigError(f"gas field needs z0 > 0 and V0 > 0, got z0={self.z0}, V0={self.V0}")

    def axial(self, z):
        """Axial gas velocity; no domain check (hot path)."""
        return self.z0 * self.z0 * self.V0 / (np.asarray(z, dtype=float) ** 2)


def gas_velocity(gas: GasField, z):
    """Return ``(V, U)``: axial velocity and reduced radial velocity ``V/z``.

    Raises
    ------
    DomainError
        If any ``z`` lies upstream of the nozzle entrance.
    """
    za = np.asarray(z, dtype=float)
    if np.any(za < gas.z0 * (1.0 - 1e-14)):
        raise DomainError(f"z={z} lies upstream of the nozzle entrance z0={gas.z0}")
    V = gas.axial(za)
    U = V / za
    if np.ndim(z) == 0:
        return float(V), float(U)
    return V, U


# ---------------------------------------------------------------------------
# drag
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DragLaw:
    alpha: float = ALPHA_DRAG

    def rate(self, v):
        """Relaxation rate ``1/tau = alpha (4 pi / 3 v)^(2/3) = alpha / r^2``."""
        r = radius_from_volume(v)
        return self.alpha / (r * r)


def drag_accel(drag: DragLaw, v, xi, V_gas):
    """Drag acceleration ``alpha (4 pi/(3 v))^(2/3) (V_gas - xi)``."""
    va = np.asarray(v, dtype=float)
    if np.any(va <= 0.0):
        raise DomainError("drag needs strictly positive droplet volumes")
    out = drag.rate(va) * (np.asarray(V_gas, dtype=float) - np.asarray(xi, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# evaporation
# ---------------------------------------------------------------------------
EvapKind = Literal["none", "linear", "nonlinear"]


@dataclass(frozen=True)
class EvaporationLaw:
    """Droplet volume loss law ``dv/dt = R_v(v)``.

    ``kind='linear'`` uses ``R_v = -Ev v`` with ``rate = Ev`` (1/s);
    ``kind='nonlinear'`` uses a constant surface regression ``ds/dt = -Es``
    with ``rate = Es`` (m^2/s), i.e. ``R_v = -(Es/2)(3 v / 4 pi)^(1/3)``.
    """

    kind: EvapKind = "none"
    rate: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("none", "linear", "nonlinear"):
            raise ConfigError(f"unknown evaporation law {self.kind!r}")
        if self.kind != "none" and not self.rate > 0.0:
            raise ConfigError(f"evaporation rate must be positive, got {self.rate}")

    @classmethod
    def none(cls) -> "EvaporationLaw":
        return cls("none", 0.0)

    @classmethod
    def linear(cls, Ev: float) -> "EvaporationLaw":
        return cls("linear", Ev)

    @classmethod
    def nonlinear(cls, Es: float = ES_NONLINEAR) -> "EvaporationLaw":
        return cls("nonlinear", Es)

    @property
    def active(self) -> bool:
        return self.kind != "none"

    def specific_rate(self, v):
        """``R_v(v) / v`` (1/s).

        For the linear law this is the constant ``-Ev`` evaluated without any
        arithmetic on ``v``, so ratio-type combinations cancel exactly.
        """
        va = np.asarray(v, dtype=float)
        if self.kind == "linear":
            return np.full_like(va, -self.rate)
        if self.kind == "nonlinear":
            return -0.5 * self.rate / (FOUR_PI_3 ** (1.0 / 3.0)) / np.cbrt(va * va)
        return np.zeros_like(va)


def evaporation_rate(evap: EvaporationLaw, v):
    """Volume rate of change ``R_v(v)`` (m^3/s, non-positive)."""
    va = np.asarray(v, dtype=float)
    if evap.kind == "linear":
        out = -evap.rate * va
    elif evap.kind == "nonlinear":
        out = -0.5 * evap.rate * radius_from_volume(np.maximum(va, 0.0))
    else:
        out = np.zeros_like(va)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# coalescence
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CoalescenceModel:
    """Collision efficiency restricted to 0 (off) or 1 (on)."""

    efficiency: float = 0.0

    def __post_init__(self) -> None:
        if self.efficiency not in (0.0, 1.0):
            raise ConfigError("coalescence efficiency must be 0 or 1")

    @property
    def on(self) -> bool:
        return self.efficiency > 0.0


def beta_kernel(v, v_star):
    """Geometric cross section ``pi (r + r*)^2`` (m^2)."""
    va, vb = np.asarray(v, dtype=float), np.asarray(v_star, dtype=float)
    if np.any(va <= 0.0) or np.any(vb <= 0.0):
        raise DomainError("collision cross section needs strictly positive volumes")
    s = radius_from_volume(va) + radius_from_volume(vb)
    out = np.pi * s * s
    return float(out) if np.ndim(out) == 0 else out


def collision_frequency(coal: CoalescenceModel, du, v, v_star):
    """``B = E_coal beta(v, v*) |du|`` (m^3/s)."""
    dua = np.asarray(du, dtype=float)
    if np.any(dua < 0.0):
        raise DomainError("relative velocity magnitude must be non-negative")
    out = coal.efficiency * beta_kernel(v, v_star) * dua
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# injected distributions
# ---------------------------------------------------------------------------
MONO_R_MAX = 35e-6
MONO_MEAN = 12e-6
MONO_STD = 5e-6
MONO_SAUTER = 15.6e-6
BI_R_SMALL = 10e-6
BI_R_LARGE = 30e-6
N_TABULATION = 512


@dataclass(frozen=True)
class InitialDistribution:
    """Injected droplet size distribution, normalised to a liquid mass density.

    For ``kind='monomodal'`` the number density in radius is a scaled beta
    density ``n(r) = N_tot * Beta(r / r_max; a, b) / r_max`` on ``[0, r_max]``,
    stored both analytically (exact moments via beta functions) and as a
    ``N_TABULATION``-point table.  For ``kind='bimodal'`` it is a sum of Dirac
    peaks with ``radii`` and number ``weights``.
    """

    kind: Literal["monomodal", "bimodal"]
    m0_inj: float
    rho: float
    radii: np.ndarray = field(default_factory=lambda: np.empty(0))
    weights: np.ndarray = field(default_factory=lambda: np.empty(0))
    beta_a: float = 0.0
    beta_b: float = 0.0
    r_max: float = 0.0
    number_total: float = 0.0
    r_table: np.ndarray = field(default_factory=lambda: np.empty(0))
    n_table: np.ndarray = field(default_factory=lambda: np.empty(0))

    # -- moments ---------------------------------------------------------
    def radius_moment(self, k: float) -> float:
        """Unnormalised moment ``int r^k n(r) dr`` (SI units)."""
        if self.kind == "bimodal":
            return float(np.sum(self.weights * self.radii**k))
        a, b = self.beta_a, self.beta_b
        ratio = np.exp(special.betaln(a + k, b) - special.betaln(a, b))
        return float(self.number_total * self.r_max**k * ratio)

    def volume_moment(self, k: float) -> float:
        """``int v^k n dv`` computed from the radius moment of order 3k."""
        return FOUR_PI_3**k * self.radius_moment(3.0 * k)

    @property
    def number_density(self) -> float:
        return self.radius_moment(0.0)

    @property
    def mass_density(self) -> float:
        return self.rho * self.volume_moment(1.0)

    def mean_radius(self) -> float:
        return self.radius_moment(1.0) / self.radius_moment(0.0)

    def std_radius(self) -> float:
        m = self.mean_radius()
        return float(np.sqrt(self.radius_moment(2.0) / self.radius_moment(0.0) - m * m))

    def sauter_radius(self) -> float:
        return self.radius_moment(3.0) / self.radius_moment(2.0)

    # -- mass distribution ----------------------------------------------
    def mass_in_radius_interval(self, r_lo, r_hi):
        """Liquid mass density carried by droplets with ``r_lo <= r < r_hi``."""
        r_lo = np.asarray(r_lo, dtype=float)
        r_hi = np.asarray(r_hi, dtype=float)
        if self.kind == "bimodal":
            out = np.zeros(np.broadcast(r_lo, r_hi).shape)
            for r, w in zip(self.radii, self.weights):
                inside = (r_lo <= r) & (r < r_hi)
                out = out + np.where(inside, self.rho * FOUR_PI_3 * r**3 * w, 0.0)
            return out
        x_lo = np.clip(r_lo / self.r_max, 0.0, 1.0)
        x_hi = np.clip(r_hi / self.r_max, 0.0, 1.0)
        a3 = self.beta_a + 3.0
        frac = special.betainc(a3, self.beta_b, x_hi) - special.betainc(a3, self.beta_b, x_lo)
        return self.m0_inj * frac

    def mass_quantile(self, q):
        """Radius below which a fraction ``q`` of the liquid mass lies."""
        qa = np.asarray(q, dtype=float)
        if self.kind == "bimodal":
            masses = self.rho * FOUR_PI_3 * self.radii**3 * self.weights
            cdf = np.cumsum(masses) / masses.sum()
            idx = np.searchsorted(cdf, qa, side="right")
            return self.radii[np.minimum(idx, len(self.radii) - 1)]
        return self.r_max * special.betaincinv(self.beta_a + 3.0, self.beta_b, qa)

    def mass_density_per_radius(self, r):
        """``rho v(r) n(r)`` (kg/m^3 per m of radius); monomodal only."""
        if self.kind != "monomodal":
            raise DomainError("bimodal distribution has no pointwise density")
        x = np.clip(np.asarray(r, dtype=float) / self.r_max, 0.0, 1.0)
        a, b = self.beta_a, self.beta_b
        pdf = np.exp((a - 1) * np.log(np.maximum(x, 1e-300)) + (b - 1) * np.log(np.maximum(1 - x, 1e-300))
                     - special.betaln(a, b)) / self.r_max
        return self.rho * volume_from_radius(r) * self.number_total * pdf


def _beta_params_for(mean: float, std: float, r_max: float) -> tuple[float, float]:
    mu = mean / r_max
    var = (std / r_max) ** 2
    common = mu * (1.0 - mu) / var - 1.0
    if common <= 0.0:
        raise ConfigError("mean/std pair is not representable by a beta density on [0, r_max]")
    return mu * common, (1.0 - mu) * common


def build_initial_distribution(kind: str, m0_inj: float = M0_INJECTED, rho: float = RHO_LIQUID,
                               sauter_tolerance: float = 0.02) -> InitialDistribution:
    """Construct the injected distribution normalised to ``m0_inj`` (kg/m^3).

    Parameters
    ----------
    kind : {"monomodal", "bimodal"}
    m0_inj : float
        Liquid mass density at injection.
    rho : float
        Liquid density.
    sauter_tolerance : float
        Relative tolerance on the monomodal Sauter radius; a mismatch larger
        than this is treated as an inconsistent set of targets.
    """
    if not m0_inj > 0.0:
        raise ConfigError(f"m0_inj must be positive, got {m0_inj}")
    if kind == "bimodal":
        radii = np.array([BI_R_SMALL, BI_R_LARGE])
        weights = 0.5 * m0_inj / (rho * volume_from_radius(radii))
        return InitialDistribution("bimodal", m0_inj, rho, radii=radii, weights=weights)
    if kind != "monomodal":
        raise ConfigError(f"unknown initial distribution {kind!r}")

    a, b = _beta_params_for(MONO_MEAN, MONO_STD, MONO_R_MAX)
    m3_unit = MONO_R_MAX**3 * np.exp(special.betaln(a + 3, b) - special.betaln(a, b))
    n_tot = m0_inj / (rho * FOUR_PI_3 * m3_unit)
    r_tab = np.linspace(0.0, MONO_R_MAX, N_TABULATION)
    x = r_tab / MONO_R_MAX
    with np.errstate(divide="ignore"):
        pdf = np.exp((a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - special.betaln(a, b)) / MONO_R_MAX
    pdf[~np.isfinite(pdf)] = 0.0
    dist = InitialDistribution("monomodal", m0_inj, rho, beta_a=a, beta_b=b, r_max=MONO_R_MAX,
                               number_total=n_tot, r_table=r_tab, n_table=n_tot * pdf)
    if abs(dist.sauter_radius() / MONO_SAUTER - 1.0) > sauter_tolerance:
        raise ConfigError(
            f"monomodal targets inconsistent: Sauter radius {dist.sauter_radius():.4e} m "
            f"misses {MONO_SAUTER:.4e} m by more than {sauter_tolerance:.0%}")
    return dist


def solve_beta_for_sauter(target_sauter: float, mean: float = MONO_MEAN, r_max: float = MONO_R_MAX):
    """Standard deviation of a beta density with given mean hitting a Sauter radius.

    Diagnostic helper used to quantify how far the three published summary
    statistics are from being mutually exact.
    """
    def mismatch(std):
        a, b = _beta_params_for(mean, std, r_max)
        return r_max * np.exp(special.betaln(a + 3, b) - special.betaln(a + 2, b)) - target_sauter

    return optimize.brentq(mismatch, 0.5e-6, 9e-6)


# ---------------------------------------------------------------------------
# full case description
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SprayCase:
    name: str
    gas: GasField
    evap: EvaporationLaw
    drag: DragLaw
    coal: CoalescenceModel
    init: InitialDistribution
    z_end: float
    rho: float = RHO_LIQUID

    @property
    def z0(self) -> float:
        return self.gas.z0
