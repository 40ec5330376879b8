"""Adaptive ODE integration for the steady marches in z.

Two integrators share one contract (:func:`integrate`):

``bdf``
    Variable-order (1..5), variable-step backward differentiation formulas in
    the quasi-constant step (Nordsieck-like backward-difference) form.  The
    corrector is a simplified Newton iteration on ``I - c J`` with a dense
    finite-difference Jacobian that is only refreshed when Newton stalls.
``rk45``
    Dormand-Prince 5(4) with its free 4th-order continuous extension; meant
    for non-stiff cross-checks.

Both honour per-component absolute tolerances, produce dense output at query
points, locate events by root finding on the dense output, and can stop
when a user-supplied liquid-mass measure falls below a cutoff.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, optimize

from .errors import ConfigError, FlowReversalError, IllConditionedError, StiffnessError

#: right-hand-side failures that a smaller step may avoid (trial iterates off the trajectory)
RECOVERABLE = (FlowReversalError, IllConditionedError)

log = logging.getLogger(__name__)

Rhs = Callable[[float, np.ndarray], np.ndarray]

DEFAULT_RTOL = 1e-4
ATOL_FLOOR = 1e-30


@dataclass
class Event:
    """Scalar event function; the integration records or stops at its roots."""

    fn: Callable[[float, np.ndarray], float]
    terminal: bool = True
    direction: float = 0.0
    name: str = ""


@dataclass
class OdeProblem:
    rhs: Rhs
    z_span: tuple[float, float]
    y0: np.ndarray
    rtol: float = DEFAULT_RTOL
    atol: np.ndarray | float | None = None
    z_eval: np.ndarray | None = None
    mass: Callable[[np.ndarray], float] | None = None
    cutoff_fraction: float = 0.999
    mass_reference: float | None = None
    events: Sequence[Event] = ()
    method: str = "bdf"
    max_step: float = np.inf
    first_step: float | None = None
    jac: Callable[[float, np.ndarray], np.ndarray] | None = None
    atol_floor_rel: float = 1e-6
    atol_groups: np.ndarray | None = None


@dataclass
class OdeSolution:
    z: np.ndarray
    y: np.ndarray
    status: str
    z_final: float
    y_final: np.ndarray
    event_name: str = ""
    event_index: int = -1
    n_steps: int = 0
    n_rejected: int = 0
    nfev: int = 0
    njev: int = 0
    nlu: int = 0
    z_steps: list = field(default_factory=list)


def default_atol(y0: np.ndarray, rtol: float, floor_rel: float = 1e-6,
                 groups: np.ndarray | None = None) -> np.ndarray:
    """Absolute tolerance proportional to each component's initial size.

    ``atol_j = rtol * max(|y0_j|, floor_rel * max_{i in group(j)} |y0_i|)``,
    never below 1e-30.  ``groups`` labels components sharing physical units
    (for instance all weight fluxes); the relative floor keeps initially
    empty components from demanding absurd absolute accuracy.
    """
    y0 = np.abs(np.asarray(y0, dtype=float))
    if groups is None:
        groups = np.zeros(y0.shape, dtype=int)
    ref = np.zeros_like(y0)
    for g in np.unique(groups):
        sel = groups == g
        ref[sel] = floor_rel * y0[sel].max()
    return np.maximum(rtol * np.maximum(y0, ref), ATOL_FLOOR)


def _rms(x: np.ndarray) -> float:
    return float(np.linalg.norm(x) / np.sqrt(x.size))


# ---------------------------------------------------------------------------
# shared stepping driver
# ---------------------------------------------------------------------------
class _Stepper:
    t: float
    y: np.ndarray
    nfev: int
    njev: int
    nlu: int
    n_rejected: int

    def step(self) -> tuple[bool, str]:  # pragma: no cover - interface
        raise NotImplementedError

    def dense(self) -> Callable[[float], np.ndarray]:  # pragma: no cover - interface
        raise NotImplementedError


def _fd_jacobian(fun: Rhs, t: float, y: np.ndarray, f0: np.ndarray, threshold: np.ndarray) -> np.ndarray:
    n = y.size
    J = np.empty((n, n))
    sq = np.sqrt(np.finfo(float).eps)
    for j in range(n):
        h = sq * max(abs(y[j]), threshold[j])
        yj = y[j]
        y[j] = yj + h
        h = y[j] - yj
        J[:, j] = (fun(t, y) - f0) / h
        y[j] = yj
    return J


# ---------------------------------------------------------------------------
# BDF
# ---------------------------------------------------------------------------
MAX_ORDER = 5
NEWTON_MAXITER = 4
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


def _compute_R(order: int, factor: float) -> np.ndarray:
    I = np.arange(1, order + 1)[:, None]
    J = np.arange(1, order + 1)
    M = np.zeros((order + 1, order + 1))
    M[1:, 1:] = (I - 1 - factor * J) / I
    M[0] = 1.0
    return np.cumprod(M, axis=0)


def _change_D(D: np.ndarray, order: int, factor: float) -> None:
    """Rescale the backward-difference array to a step multiplied by ``factor``."""
    R = _compute_R(order, factor)
    U = _compute_R(order, 1.0)
    RU = R.dot(U)
    D[: order + 1] = RU.T.dot(D[: order + 1])


class _Bdf(_Stepper):
    def __init__(self, fun: Rhs, t0: float, y0: np.ndarray, t_bound: float, rtol: float,
                 atol: np.ndarray, max_step: float, first_step: float | None, jac):
        self.fun_raw = fun
        self.t = t0
        self.y = y0.astype(float).copy()
        self.t_bound = t_bound
        self.rtol = rtol
        self.atol = atol
        self.max_step = max_step
        self.nfev = self.njev = self.nlu = self.n_rejected = 0
        self.n = y0.size
        self.jac_fn = jac
        f0 = self.fun(t0, self.y)
        self.h_abs = first_step if first_step else _initial_step(self.fun, t0, self.y, f0, 1, rtol, atol, t_bound - t0)
        self.h_abs = min(self.h_abs, max_step, abs(t_bound - t0))
        kappa = np.zeros(MAX_ORDER + 1)
        self.gamma = np.hstack((0.0, np.cumsum(1.0 / np.arange(1, MAX_ORDER + 1))))
        self.alpha = (1.0 - kappa) * self.gamma
        self.error_const = kappa * self.gamma + 1.0 / np.arange(1, MAX_ORDER + 2)
        D = np.zeros((MAX_ORDER + 3, self.n))
        D[0] = self.y
        D[1] = f0 * self.h_abs
        self.D = D
        self.order = 1
        self.n_equal_steps = 0
        self.J = self._jac(t0, self.y, f0)
        self.current_jac = True
        self.LU = None
        self.last_abort: Exception | None = None

    def fun(self, t, y):
        self.nfev += 1
        return np.asarray(self.fun_raw(t, y), dtype=float)

    def _jac(self, t, y, f0=None):
        self.njev += 1
        if self.jac_fn is not None:
            return np.asarray(self.jac_fn(t, y), dtype=float)
        if f0 is None:
            f0 = self.fun(t, y)
        return _fd_jacobian(self.fun, t, y.copy(), f0, self.atol / self.rtol)

    def _lu(self, A):
        self.nlu += 1
        return linalg.lu_factor(A, check_finite=False)

    def _newton(self, t_new, y_predict, c, psi, LU, scale, tol):
        d = np.zeros(self.n)
        y = y_predict.copy()
        dy_norm_old = None
        converged = False
        k = 0
        for k in range(NEWTON_MAXITER):
            try:
                f = self.fun(t_new, y)
            except RECOVERABLE as exc:
                # a trial iterate left the physical domain; treat as divergence
                self.last_abort = exc
                break
            if not np.all(np.isfinite(f)):
                break
            dy = linalg.lu_solve(LU, c * f - psi - d, check_finite=False)
            dy_norm = _rms(dy / scale)
            rate = None if dy_norm_old is None else dy_norm / dy_norm_old
            if rate is not None and (rate >= 1 or rate ** (NEWTON_MAXITER - k) / (1 - rate) * dy_norm > tol):
                break
            y += dy
            d += dy
            if dy_norm == 0 or (rate is not None and rate / (1 - rate) * dy_norm < tol):
                converged = True
                break
            dy_norm_old = dy_norm
        return converged, k + 1, y, d

    def step(self) -> tuple[bool, str]:
        t = self.t
        D = self.D
        min_step = 10 * abs(np.nextafter(t, np.inf) - t)
        if self.h_abs > self.max_step:
            _change_D(D, self.order, self.max_step / self.h_abs)
            self.h_abs = self.max_step
            self.n_equal_steps = 0
        elif self.h_abs < min_step:
            _change_D(D, self.order, min_step / self.h_abs)
            self.h_abs = min_step
            self.n_equal_steps = 0
        order = self.order
        h_abs = self.h_abs
        J = self.J
        LU = self.LU
        current_jac = self.current_jac
        newton_tol = max(10 * np.finfo(float).eps / self.rtol, min(0.03, self.rtol ** 0.5))
        while True:
            if h_abs < min_step:
                if self.last_abort is not None:
                    raise self.last_abort
                return False, "required step size is below the floating-point spacing"
            t_new = t + h_abs
            if t_new - self.t_bound > 0:
                t_new = self.t_bound
                _change_D(D, order, abs(t_new - t) / h_abs)
                self.n_equal_steps = 0
                LU = None
            h = t_new - t
            h_abs = abs(h)
            y_predict = np.sum(D[: order + 1], axis=0)
            scale = self.atol + self.rtol * np.abs(y_predict)
            psi = np.dot(D[1: order + 1].T, self.gamma[1: order + 1]) / self.alpha[order]
            c = h / self.alpha[order]
            converged = False
            n_iter = 0
            y_new = y_predict
            d = None
            while not converged:
                if LU is None:
                    LU = self._lu(np.eye(self.n) - c * J)
                converged, n_iter, y_new, d = self._newton(t_new, y_predict, c, psi, LU, scale, newton_tol)
                if not converged:
                    if current_jac:
                        break
                    try:
                        J = self._jac(t_new, y_predict)
                    except RECOVERABLE as exc:
                        self.last_abort = exc
                        break
                    LU = None
                    current_jac = True
            if not converged:
                factor = 0.5
                h_abs *= factor
                _change_D(D, order, factor)
                self.n_equal_steps = 0
                LU = None
                self.n_rejected += 1
                continue
            safety = 0.9 * (2 * NEWTON_MAXITER + 1) / (2 * NEWTON_MAXITER + n_iter)
            scale = self.atol + self.rtol * np.abs(y_new)
            error = self.error_const[order] * d
            error_norm = _rms(error / scale)
            if error_norm > 1:
                factor = max(MIN_FACTOR, safety * error_norm ** (-1.0 / (order + 1)))
                h_abs *= factor
                _change_D(D, order, factor)
                self.n_equal_steps = 0
                LU = None
                self.n_rejected += 1
                continue
            break

        self.n_equal_steps += 1
        self.last_abort = None
        self.t_old = t
        self.t = t_new
        self.y = y_new
        self.h_abs = h_abs
        self.J = J
        self.LU = LU
        self.current_jac = False
        D[order + 2] = d - D[order + 1]
        D[order + 1] = d
        for i in reversed(range(order + 1)):
            D[i] += D[i + 1]
        if self.n_equal_steps < order + 1:
            return True, ""
        error_m_norm = _rms(self.error_const[order - 1] * D[order] / scale) if order > 1 else np.inf
        error_p_norm = _rms(self.error_const[order + 1] * D[order + 2] / scale) if order < MAX_ORDER else np.inf
        error_norms = np.array([error_m_norm, error_norm, error_p_norm])
        with np.errstate(divide="ignore"):
            factors = error_norms ** (-1.0 / np.arange(order, order + 3))
        delta_order = int(np.argmax(factors)) - 1
        order += delta_order
        self.order = order
        factor = min(MAX_FACTOR, safety * float(np.max(factors)))
        self.h_abs *= factor
        _change_D(D, order, factor)
        self.n_equal_steps = 0
        self.LU = None
        return True, ""

    def dense(self):
        order = self.order
        h = self.h_abs
        t = self.t
        t_shift = t - h * np.arange(order)
        denom = h * (1 + np.arange(order))
        Dc = self.D[: order + 1].copy()

        def interp(tq: float) -> np.ndarray:
            x = (tq - t_shift) / denom
            p = np.cumprod(x)
            return Dc[0] + np.dot(Dc[1:].T, p)

        return interp


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4)
# ---------------------------------------------------------------------------
_DP_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1])
_DP_A = np.array([
    [0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
])
_DP_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_DP_E = np.array([-71 / 57600, 0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
_DP_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


class _Rk45(_Stepper):
    def __init__(self, fun: Rhs, t0, y0, t_bound, rtol, atol, max_step, first_step):
        self.fun_raw = fun
        self.t = t0
        self.y = y0.astype(float).copy()
        self.t_bound = t_bound
        self.rtol, self.atol, self.max_step = rtol, atol, max_step
        self.nfev = self.njev = self.nlu = self.n_rejected = 0
        self.f = self.fun(t0, self.y)
        self.h_abs = first_step if first_step else _initial_step(self.fun, t0, self.y, self.f, 4, rtol, atol, t_bound - t0)
        self.K = np.empty((7, y0.size))

    def fun(self, t, y):
        self.nfev += 1
        return np.asarray(self.fun_raw(t, y), dtype=float)

    def step(self):
        t, y = self.t, self.y
        min_step = 10 * abs(np.nextafter(t, np.inf) - t)
        h_abs = min(self.h_abs, self.max_step)
        K = self.K
        while True:
            if h_abs < min_step:
                return False, "required step size is below the floating-point spacing"
            t_new = min(t + h_abs, self.t_bound)
            h = t_new - t
            K[0] = self.f
            for s in range(1, 6):
                dy = np.dot(K[:s].T, _DP_A[s, :s]) * h
                K[s] = self.fun(t + _DP_C[s] * h, y + dy)
            y_new = y + h * np.dot(K[:6].T, _DP_B)
            f_new = self.fun(t_new, y_new)
            K[6] = f_new
            scale = self.atol + np.maximum(np.abs(y), np.abs(y_new)) * self.rtol
            err = _rms(np.dot(K.T, _DP_E) * h / scale)
            if err <= 1.0 and np.all(np.isfinite(y_new)):
                factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, 0.9 * err ** -0.2)
                self.h_abs = h * factor
                break
            self.n_rejected += 1
            h_abs = h * max(MIN_FACTOR, 0.9 * err ** -0.2) if np.isfinite(err) else 0.5 * h
        self.t_old, self.y_old = t, y
        self.h_last = h
        self.t, self.y, self.f = t_new, y_new, f_new
        return True, ""

    def dense(self):
        Q = self.K.T.dot(_DP_P)
        t_old, y_old, h = self.t_old, self.y_old.copy(), self.h_last

        def interp(tq: float) -> np.ndarray:
            x = (tq - t_old) / h
            p = np.array([x, x * x, x ** 3, x ** 4])
            return y_old + h * Q.dot(p)

        return interp


def _initial_step(fun, t0, y0, f0, order, rtol, atol, span) -> float:
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, abs(span))
    y1 = y0 + h0 * f0
    f1 = fun(t0 + h0, y1)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (order + 1))
    return min(100 * h0, h1, abs(span))


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------
def integrate(problem: OdeProblem) -> OdeSolution:
    """Integrate ``problem`` and sample the solution at ``problem.z_eval``.

    The run ends at ``z_span[1]``, at the first terminal event, or where the
    ``mass`` measure has dropped to ``(1 - cutoff_fraction)`` of its initial
    value (or of ``mass_reference`` when given) (``status`` is ``"completed"``, ``"event"`` or ``"cutoff"``).

    Raises
    ------
    StiffnessError
        When the step size underflows; the exception carries the last
        accepted ``z`` and state.
    """
    z0, z1 = map(float, problem.z_span)
    if not z1 > z0:
        raise ConfigError("integration span must be increasing")
    y0 = np.asarray(problem.y0, dtype=float)
    atol = problem.atol
    if atol is None:
        atol = default_atol(y0, problem.rtol, problem.atol_floor_rel, problem.atol_groups)
    atol = np.broadcast_to(np.asarray(atol, dtype=float), y0.shape).copy()
    atol = np.maximum(atol, ATOL_FLOOR)
    if problem.method == "bdf":
        stepper: _Stepper = _Bdf(problem.rhs, z0, y0, z1, problem.rtol, atol, problem.max_step,
                                 problem.first_step, problem.jac)
    elif problem.method == "rk45":
        stepper = _Rk45(problem.rhs, z0, y0, z1, problem.rtol, atol, problem.max_step, problem.first_step)
    else:
        raise ConfigError(f"unknown integration method {problem.method!r}")

    events = list(problem.events)
    if problem.mass is not None:
        m_init = float(problem.mass(y0)) if problem.mass_reference is None else float(problem.mass_reference)
        target = (1.0 - problem.cutoff_fraction) * m_init
        mass_fn = problem.mass
        events.append(Event(lambda z, y: float(mass_fn(y)) - target, True, -1.0, "mass_cutoff"))
    g_old = [ev.fn(z0, y0) for ev in events]

    z_eval = np.asarray(problem.z_eval, dtype=float) if problem.z_eval is not None else None
    out_z: list[float] = []
    out_y: list[np.ndarray] = []
    if z_eval is not None:
        mask0 = z_eval <= z0
        for zq in z_eval[mask0]:
            out_z.append(float(zq))
            out_y.append(y0.copy())
        next_idx = int(np.sum(mask0))
    else:
        out_z.append(z0)
        out_y.append(y0.copy())
        next_idx = 0
    z_steps = [z0]
    status = "completed"
    ev_name, ev_idx = "", -1
    n_steps = 0
    while stepper.t < z1:
        ok, msg = stepper.step()
        if not ok:
            raise StiffnessError(f"integration failed at z={stepper.t:.6e}: {msg}", z=stepper.t,
                                 state=stepper.y.copy())
        n_steps += 1
        interp = stepper.dense()
        t_prev = z_steps[-1]
        t_new = stepper.t
        t_stop = t_new
        y_stop = stepper.y
        # events
        for i, ev in enumerate(events):
            g_new = ev.fn(t_new, stepper.y)
            g_prev = g_old[i]
            crossed = (g_prev > 0 >= g_new) if ev.direction < 0 else (
                (g_prev < 0 <= g_new) if ev.direction > 0 else (np.sign(g_prev) != np.sign(g_new) and g_prev != 0))
            if crossed and ev.terminal:
                root = optimize.brentq(lambda s: ev.fn(s, interp(s)), t_prev, t_new, xtol=1e-14 * max(1.0, abs(t_new)))
                if root <= t_stop:
                    t_stop = root
                    y_stop = interp(root)
                    status = "cutoff" if ev.name == "mass_cutoff" else "event"
                    ev_name, ev_idx = ev.name, i
            g_old[i] = g_new
        if z_eval is not None:
            while next_idx < len(z_eval) and z_eval[next_idx] <= t_stop:
                zq = float(z_eval[next_idx])
                out_z.append(zq)
                out_y.append(stepper.y.copy() if zq == t_new else interp(zq))
                next_idx += 1
        else:
            out_z.append(t_stop)
            out_y.append(np.array(y_stop, copy=True))
        z_steps.append(t_stop)
        if t_stop < t_new or status != "completed":
            stepper.t, stepper.y = t_stop, np.array(y_stop, copy=True)
            break
    y_out = np.array(out_y) if out_y else np.empty((0, y0.size))
    return OdeSolution(np.array(out_z), y_out, status, float(stepper.t), np.array(stepper.y, copy=True),
                       ev_name, ev_idx, n_steps, stepper.n_rejected, stepper.nfev, stepper.njev,
                       stepper.nlu, z_steps)
