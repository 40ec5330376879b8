from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import linalg

from spraycoal.errors import IllConditionedError, SingularSystemError
from spraycoal.linsolve import (MAX_REFINEMENTS, condition_estimate, relative_residual, solve_vandermonde,
                                solve_with_refinement)


def test_identity_returns_input():
    b = np.array([1.0, -2.0, 3.5])
    x, info = solve_with_refinement(np.eye(3), b)
    np.testing.assert_array_equal(x, b)
    assert info.refinements == 0


def test_zero_rhs_short_circuits():
    x, info = solve_with_refinement(np.eye(2) * 3.0, np.zeros(2))
    assert not np.any(x) and info.residual == 0.0


def test_hilbert_like_refinement_beats_raw_solve():
    # 1 / (i + j + 1.5): a shifted Hilbert matrix, condition about 4e7
    A = 1.0 / (np.add.outer(np.arange(6), np.arange(6)) + 1.5)
    b = A @ np.ones(6)
    x, info = solve_with_refinement(A, b, tol=0.0, raise_on_failure=False)
    assert info.refinements == MAX_REFINEMENTS
    assert info.residual * 10.0 <= info.raw_residual
    np.testing.assert_allclose(x, np.ones(6), rtol=1e-8)


def test_refinement_never_leaves_the_double_precision_floor():
    A = linalg.hilbert(6)
    rng = np.random.default_rng(3)
    for _ in range(50):
        b = A @ rng.integers(-9, 10, 6).astype(float)
        x, info = solve_with_refinement(A, b, tol=0.0, raise_on_failure=False)
        assert info.residual <= max(info.raw_residual, 4 * np.finfo(float).eps)


def test_singular_matrix_raises():
    with pytest.raises(SingularSystemError):
        solve_with_refinement(np.array([[1.0, 2.0], [2.0, 4.0]]), np.array([1.0, 1.0]))


def test_ill_conditioned_failure_carries_condition():
    A = linalg.hilbert(14)
    b = A @ np.ones(14)
    with pytest.raises(IllConditionedError) as info:
        solve_with_refinement(A, b, tol=1e-30)
    assert info.value.condition > 1e15


@given(st.lists(st.floats(min_value=0.05, max_value=1.0), min_size=1, max_size=7, unique=True),
       st.lists(st.floats(min_value=-5, max_value=5), min_size=7, max_size=7))
def test_vandermonde_matches_dense_solve(x, q):
    x = np.sort(np.array(x))
    if x.size > 1 and np.min(np.diff(x)) < 0.02:
        return
    q = np.array(q[: x.size])
    V = np.vander(x, increasing=True).T  # row k holds x_i^k
    expected = np.linalg.solve(V, q)
    got = solve_vandermonde(x, q)
    scale = np.linalg.norm(expected) + np.linalg.norm(q)
    assert np.linalg.norm(got - expected) <= 1e-8 * scale * np.linalg.cond(V) ** 0.5 + 1e-12


def test_vandermonde_rejects_repeated_nodes():
    with pytest.raises(SingularSystemError):
        solve_vandermonde(np.array([1.0, 1.0]), np.array([1.0, 2.0]))


def test_condition_estimate():
    assert condition_estimate(np.diag([1.0, 1e-6])) == pytest.approx(1e6)
