from __future__ import annotations

import numpy as np
import pytest

from spraycoal.errors import StiffnessError
from spraycoal.integrator import Event, OdeProblem, default_atol, integrate


def _robertson(t, y):
    return np.array([-0.04 * y[0] + 1e4 * y[1] * y[2],
                     0.04 * y[0] - 1e4 * y[1] * y[2] - 3e7 * y[1] ** 2,
                     3e7 * y[1] ** 2])


@pytest.mark.parametrize("method", ["bdf", "rk45"])
def test_linear_decay(method):
    sol = integrate(OdeProblem(lambda z, y: -y, (0.0, 1.0), np.array([1.0]), method=method, atol=1e-12,
                               z_eval=np.array([0.5, 1.0])))
    assert sol.status == "completed"
    assert sol.y[-1, 0] == pytest.approx(np.exp(-1.0), rel=1e-4)
    # interior points come from the dense interpolant, where global error has accumulated
    assert sol.y[0, 0] == pytest.approx(np.exp(-0.5), rel=5e-4)


def test_robertson_stiff_benchmark():
    y0 = np.array([1.0, 0.0, 0.0])
    zs = np.array([1.0, 10.0, 40.0])
    loose = integrate(OdeProblem(_robertson, (0.0, 40.0), y0, rtol=1e-4, atol=np.array([1e-8, 1e-14, 1e-8]),
                                 z_eval=zs))
    tight = integrate(OdeProblem(_robertson, (0.0, 40.0), y0, rtol=1e-8, atol=np.array([1e-12, 1e-18, 1e-12]),
                                 z_eval=zs))
    assert loose.status == tight.status == "completed"
    np.testing.assert_allclose(loose.y, tight.y, rtol=2e-3, atol=1e-10)
    # the implicit method needs far fewer steps than the problem's stiffness would force on RK
    assert loose.n_steps < 500


def test_tightening_rtol_does_not_increase_deviation():
    rhs = lambda z, y: np.array([y[1], -(1 + z) * y[0]])
    y0 = np.array([1.0, 0.0])
    ref = integrate(OdeProblem(rhs, (0.0, 3.0), y0, rtol=1e-10, atol=1e-14, z_eval=np.array([3.0])))
    errs = []
    for rtol in (1e-3, 1e-4, 1e-5, 1e-6):
        s = integrate(OdeProblem(rhs, (0.0, 3.0), y0, rtol=rtol, z_eval=np.array([3.0])))
        errs.append(np.max(np.abs(s.y[-1] - ref.y[-1])))
    assert all(b <= a for a, b in zip(errs, errs[1:]))


def test_mass_cutoff_brackets_crossing():
    # y = exp(-z); 99.9% gone at z = ln(1000)
    sol = integrate(OdeProblem(lambda z, y: -y, (0.0, 20.0), np.array([1.0]), atol=1e-12,
                               mass=lambda y: float(y[0]), cutoff_fraction=0.999))
    assert sol.status == "cutoff"
    assert sol.y_final[0] == pytest.approx(1e-3, rel=1e-6)
    steps = np.array(sol.z_steps)
    target = np.log(1000.0)
    before = steps[steps <= target].max()
    after = steps[steps > target].min()
    assert before <= sol.z_final <= after


def test_terminal_event_location():
    ev = Event(lambda z, y: y[0] - 0.5, terminal=True, direction=-1.0, name="half")
    sol = integrate(OdeProblem(lambda z, y: -y, (0.0, 5.0), np.array([1.0]), rtol=1e-6, atol=1e-12, events=[ev]))
    assert sol.status == "event" and sol.event_name == "half"
    assert sol.y_final[0] == pytest.approx(0.5, rel=1e-9)
    assert sol.z_final == pytest.approx(np.log(2.0), rel=1e-5)


def test_default_atol_policy():
    atol = default_atol(np.array([1.0, 0.0, 1e-3]), 1e-4, floor_rel=1e-6)
    np.testing.assert_allclose(atol, [1e-4, 1e-10, 1e-7])
    assert default_atol(np.zeros(2), 1e-4).min() >= 1e-30


def test_step_size_underflow_reports_last_state():
    # blow-up at z = 1: the step size collapses approaching the singularity
    with pytest.raises(StiffnessError) as info:
        integrate(OdeProblem(lambda z, y: y**2, (0.0, 2.0), np.array([1.0])))
    assert info.value.z < 1.0 + 1e-6
    assert info.value.state is not None
