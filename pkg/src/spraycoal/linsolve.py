"""Dense linear solves with residual-based iterative refinement.

Residuals are accumulated in ``numpy.longdouble`` (80-bit extended on x86),
which is what lets refinement recover digits lost to ill-conditioning of the
moment-matching matrices.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import IllConditionedError, SingularSystemError

RESIDUAL_TARGET = 1e-12
MAX_REFINEMENTS = 3


@dataclass(frozen=True)
class SolveInfo:
    residual: float
    refinements: int
    raw_residual: float


def relative_residual(A: np.ndarray, x: np.ndarray, b: np.ndarray) -> float:
    """``||A x - b|| / ||b||`` evaluated in extended precision (2-norm)."""
    Al = A.astype(np.longdouble)
    r = b.astype(np.longdouble) - Al @ x.astype(np.longdouble)
    nb = np.sqrt(np.sum(b.astype(np.longdouble) ** 2))
    if nb == 0:
        return float(np.sqrt(np.sum(r**2)))
    return float(np.sqrt(np.sum(r**2)) / nb)


def solve_with_refinement(A: np.ndarray, b: np.ndarray, *, max_refine: int = MAX_REFINEMENTS,
                          tol: float = RESIDUAL_TARGET, raise_on_failure: bool = True
                          ) -> tuple[np.ndarray, SolveInfo]:
    """LU solve followed by up to ``max_refine`` refinement passes.

    Each pass computes ``r = b - A x`` in extended precision, solves
    ``A d = r`` with the existing factorisation and updates ``x += d``.
    Passes stop as soon as the relative residual is at or below ``tol``.

    Raises
    ------
    SingularSystemError
        Exactly singular matrix.
    IllConditionedError
        Residual still above ``tol`` after ``max_refine`` passes (only when
        ``raise_on_failure``); carries a 1-norm condition estimate.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros_like(b), SolveInfo(0.0, 0, 0.0)
    try:
        with warnings.catch_warnings():
            # an exactly singular pivot is reported below as SingularSystemError
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            lu, piv = linalg.lu_factor(A, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:  # pragma: no cover - defensive
        raise SingularSystemError(f"factorisation failed: {exc}") from exc
    if np.any(np.diag(lu) == 0.0):
        raise SingularSystemError("matrix is exactly singular")
    x = linalg.lu_solve((lu, piv), b)
    res = relative_residual(A, x, b)
    raw = res
    passes = 0
    Al = A.astype(np.longdouble)
    bl = b.astype(np.longdouble)
    while res > tol and passes < max_refine:
        r = np.asarray(bl - Al @ x.astype(np.longdouble), dtype=float)
        x = x + linalg.lu_solve((lu, piv), r)
        passes += 1
        res = relative_residual(A, x, b)
    if res > tol and raise_on_failure:
        cond = condition_estimate(A)
        raise IllConditionedError(
            f"relative residual {res:.3e} above {tol:.1e} after {passes} refinements "
            f"(condition estimate {cond:.3e})", condition=cond, residual=res)
    return x, SolveInfo(res, passes, raw)


def condition_estimate(A: np.ndarray) -> float:
    """2-norm condition number (exact via SVD; systems here are tiny)."""
    with np.errstate(all="ignore"):
        return float(np.linalg.cond(A))


def solve_vandermonde(x: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve ``sum_i x_i^k w_i = q_k`` for ``k = 0 .. N-1`` in O(N^2).

    Uses the master-polynomial construction of the inverse Vandermonde
    matrix (coefficients of ``prod (t - x_j)`` and synthetic division).
    """
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    n = len(x)
    if n == 1:
        return q / 1.0
    if len(np.unique(x)) < n:
        raise SingularSystemError("Vandermonde nodes are not distinct")
    # coefficients c of P(t) = t^n + c[n-1] t^(n-1) + ... + c[0]
    c = np.zeros(n)
    c[n - 1] = -x[0]
    for i in range(1, n):
        xx = -x[i]
        for j in range(n - 1 - i, n - 1):
            c[j] += xx * c[j + 1]
        c[n - 1] += xx
    w = np.zeros(n)
    for i in range(n):
        xx = x[i]
        t = 1.0
        b = 1.0
        s = q[n - 1]
        for k in range(n - 1, 0, -1):
            b = c[k] + xx * b
            s += q[k - 1] * b
            t = xx * t + b
        w[i] = s / t
    return w
