"""Moment vectors, Gaussian quadrature inversion and tabulated initial nodes.

The inversion uses the Wheeler (modified Chebyshev) recurrence to build the
Jacobi matrix of the orthogonal polynomials of the measure; its eigenvalues
are the abscissas and the squared first eigenvector components (times the
total weight) are the weights.  Moments are non-dimensionalised by the mean
abscissa before the recurrence so that no power overflows or underflows.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import linalg

from .errors import ConfigError, RealizabilityError
from .physics import FOUR_PI_3, InitialDistribution, volume_from_radius

log = logging.getLogger(__name__)

Basis = Literal["volume", "radius"]

#: a Hankel ratio whose numerator cancels to this fraction of its terms is
#: rounding noise: the measure has no further support points
DEGENERACY_TOL = 1e-9


@dataclass(frozen=True)
class MomentVector:
    """Integer-order moments ``<x^k>``, ``k = 0 .. len(values) - 1``."""

    values: np.ndarray
    basis: Basis

    def __post_init__(self) -> None:
        if self.basis not in ("volume", "radius"):
            raise ConfigError(f"unknown moment basis {self.basis!r}")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class QuadratureNodes:
    """Weighted Dirac nodes.  ``abscissas`` are radii (m) or volumes (m^3)."""

    weights: np.ndarray
    abscissas: np.ndarray
    basis: Basis
    degenerate: bool = False

    @property
    def N(self) -> int:
        return len(self.weights)

    def moments(self, count: int) -> np.ndarray:
        k = np.arange(count)[:, None]
        return np.sum(self.weights[None, :] * self.abscissas[None, :] ** k, axis=1)

    def volumes(self) -> np.ndarray:
        if self.basis == "volume":
            return self.abscissas.copy()
        return volume_from_radius(self.abscissas)

    def radii(self) -> np.ndarray:
        if self.basis == "radius":
            return self.abscissas.copy()
        return np.cbrt(self.abscissas / FOUR_PI_3)

    def to_volume(self) -> "QuadratureNodes":
        return QuadratureNodes(self.weights.copy(), self.volumes(), "volume", self.degenerate)

    def mass_density(self, rho: float) -> float:
        return float(rho * np.sum(self.weights * self.volumes()))


def moments_from_ndf(ndf: InitialDistribution, basis: Basis, count: int) -> MomentVector:
    """Moments ``k = 0 .. count-1`` of the injected number density.

    Dirac mixtures are summed exactly; the beta-type monomodal density uses
    its closed-form beta-function moments, which are what any sufficiently
    fine quadrature of the tabulation converges to.
    """
    if count < 2:
        raise ConfigError("need at least two moments")
    if basis == "radius":
        vals = [ndf.radius_moment(float(k)) for k in range(count)]
    elif basis == "volume":
        vals = [ndf.volume_moment(float(k)) for k in range(count)]
    else:
        raise ConfigError(f"unknown moment basis {basis!r}")
    return MomentVector(np.array(vals), basis)


def _jacobi_recurrence(mom: np.ndarray, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Wheeler recurrence on scaled moments; returns ``(a, b)`` with ``b[0] = m0``."""
    n2 = 2 * N
    sigma = np.zeros((N + 1, n2))
    sigma[1, :] = mom[:n2]
    a = np.zeros(N)
    b = np.zeros(N)
    a[0] = mom[1] / mom[0]
    b[0] = mom[0]
    for k in range(1, N):
        for l in range(k, n2 - k):
            sigma[k + 1, l] = sigma[k, l + 1] - a[k - 1] * sigma[k, l] - b[k - 1] * sigma[k - 1, l]
        terms = abs(sigma[k, k + 1]) + abs(a[k - 1] * sigma[k, k]) + abs(b[k - 1] * sigma[k - 1, k])
        b[k] = sigma[k + 1, k] / sigma[k, k - 1]
        if not abs(sigma[k + 1, k]) > DEGENERACY_TOL * terms or not np.isfinite(b[k]):
            log.info("moment vector supports only %d distinct nodes (b_%d = %.2e)", k, k, b[k])
            return a[:k], b[:k]
        if b[k] < 0.0:
            raise RealizabilityError(
                f"moment sequence not realizable: Hankel determinant ratio of order {k + 1} "
                f"is negative (b_{k} = {b[k]:.3e})")
        a[k] = sigma[k + 1, k + 1] / sigma[k + 1, k] - sigma[k, k] / sigma[k, k - 1]
    return a, b


def qmom_invert(moments: MomentVector, N: int) -> QuadratureNodes:
    """Gaussian quadrature with ``N`` nodes matching the first ``2N`` moments.

    Returns fewer than ``N`` nodes (flagged ``degenerate=True``) when the
    moments belong to a measure with fewer support points; callers that need
    exactly ``N`` distinct nodes split and perturb them.

    Raises
    ------
    RealizabilityError
        On a zero or negative total weight or a negative Hankel ratio.
    """
    m = np.asarray(moments.values, dtype=float)
    if N < 1 or len(m) < 2 * N:
        raise ConfigError(f"need {2 * N} moments for {N} nodes, got {len(m)}")
    if not m[0] > 0.0:
        raise RealizabilityError("moment sequence not realizable: zeroth moment must be positive")
    if N == 1 or m[1] <= 0.0:
        if m[1] <= 0.0:
            raise RealizabilityError("moment sequence not realizable: first moment must be positive "
                                     "for a measure on the positive axis")
        return QuadratureNodes(np.array([m[0]]), np.array([m[1] / m[0]]), moments.basis)
    scale = m[1] / m[0]
    scaled = m[: 2 * N] / scale ** np.arange(2 * N)
    a, b = _jacobi_recurrence(scaled, N)
    n_eff = len(a)
    if n_eff == 1:
        x = np.array([a[0]])
        w = np.array([scaled[0]])
    else:
        x, vecs = linalg.eigh_tridiagonal(a, np.sqrt(b[1:]))
        w = scaled[0] * vecs[0, :] ** 2
    order = np.argsort(x)
    x, w = x[order], w[order]
    if np.any(x <= 0.0):
        raise RealizabilityError("moment sequence not realizable on the positive axis: "
                                 f"non-positive abscissa {x.min():.3e}")
    return QuadratureNodes(w, x * scale, moments.basis, degenerate=n_eff < N)


def merge_coincident(nodes: QuadratureNodes, rtol: float = 1e-8) -> QuadratureNodes:
    """Merge nodes whose abscissas agree to ``rtol`` (weights added, mean abscissa kept)."""
    w, x = [], []
    for wi, xi in zip(nodes.weights, nodes.abscissas):
        if x and abs(xi - x[-1]) <= rtol * max(abs(xi), abs(x[-1])):
            tot = w[-1] + wi
            x[-1] = (w[-1] * x[-1] + wi * xi) / tot if tot > 0 else x[-1]
            w[-1] = tot
        else:
            w.append(wi)
            x.append(xi)
    return QuadratureNodes(np.array(w), np.array(x), nodes.basis, nodes.degenerate)


# ---------------------------------------------------------------------------
# tabulated QMOM initial conditions
# ---------------------------------------------------------------------------
_TABLE1: dict[str, tuple[list[float], list[float]]] = {
    "vol_N4": ([0.7323, 0.2545, 1.288e-2, 2.279e-4],
               [9.9955, 18.5282, 27.5630, 36.0142]),
    "rad_N4": ([0.1845, 0.5397, 0.2635, 1.212e-2],
               [4.4079, 11.0409, 18.2840, 28.3910]),
    "rad_N6": ([8.5573e-2, 0.2779, 5.5339e-2, 4.9778e-3, 3.1137e-4, 1.6671e-5],
               [3.3423, 7.5262, 12.9743, 18.8823, 26.3693, 34.7171]),
    "rad_N8": ([4.6445e-2, 0.1488, 0.3089, 0.3438, 0.12931, 2.0905e-2, 1.6982e-3, 6.5627e-5],
               [2.8465, 5.5373, 9.6916, 14.2697, 19.2986, 25.2866, 31.5808, 37.5149]),
}

TABLE1_CASES = tuple(_TABLE1)


def table1_raw(case: str) -> tuple[np.ndarray, np.ndarray]:
    """Published normalised weights ``w/N0`` and radii in micrometres, verbatim."""
    if case not in _TABLE1:
        raise ConfigError(f"unknown tabulated node set {case!r}; choose from {TABLE1_CASES}")
    w, r = _TABLE1[case]
    return np.array(w), np.array(r)


def table1_initial_conditions(case: str, m0_inj: float, rho: float) -> QuadratureNodes:
    """Tabulated radius-basis nodes with weights rescaled to carry ``m0_inj``."""
    w_norm, r_um = table1_raw(case)
    r = r_um * 1e-6
    n0 = m0_inj / (rho * np.sum(w_norm * volume_from_radius(r)))
    return QuadratureNodes(w_norm * n0, r, "radius")
