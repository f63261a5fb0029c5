import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from sparsepc.pcbasis import total_order_set
from sparsepc.sampling import assemble_measurement, draw_samples, matrix_from_array
from sparsepc.solvers import (RankDeficientError, bpdn, lasso_spg, least_squares, omp,
                              project_weighted_l1, recover)


def planted(p, d, n, s, seed):
    basis = total_order_set(p, d)
    m = assemble_measurement(basis, draw_samples(d, n, seed))
    rng = np.random.default_rng(seed + 1000)
    c = np.zeros(len(basis))
    c[rng.choice(len(basis), s, replace=False)] = rng.normal(size=s)
    return m, c, m.values @ c


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# --- least squares -----------------------------------------------------------

def test_least_squares_exact(rng):
    A = rng.normal(size=(8, 3))
    x = rng.normal(size=3)
    np.testing.assert_allclose(least_squares(A, A @ x), x, rtol=1e-12)
    assert least_squares(np.zeros((4, 0)), np.ones(4)).size == 0


def test_least_squares_rank_deficient(rng):
    A = rng.normal(size=(6, 3))
    A[:, 2] = A[:, 0] - 2 * A[:, 1]
    with pytest.raises(RankDeficientError) as err:
        least_squares(A, np.ones(6))
    assert err.value.column == 2
    with pytest.raises(RankDeficientError):
        least_squares(np.ones((2, 3)), np.ones(2))


# --- OMP ---------------------------------------------------------------------

def test_omp_planted_small():
    m, c, u = planted(2, 8, 30, 4, seed=3)
    res = omp(m, u, 1e-10)
    assert res.converged
    assert set(res.support) == set(np.flatnonzero(c))
    assert rel(res.coefficients, c) <= 1e-8


def test_omp_small_supports_cannot_fit():
    # brute force: no support of size < 4 reproduces u, so the planted one is the
    # sparsest feasible solution
    m, c, u = planted(2, 4, 12, 4, seed=9)
    A = m.values
    for k in range(1, 4):
        for S in itertools.combinations(range(A.shape[1]), k):
            x, *_ = np.linalg.lstsq(A[:, S], u, rcond=None)
            assert np.linalg.norm(A[:, S] @ x - u) > 1e-6
    res = omp(m, u, 1e-10)
    assert rel(res.coefficients, c) <= 1e-8


def test_omp_zero_and_large_delta():
    m, c, u = planted(2, 3, 15, 2, seed=1)
    res = omp(m, u, np.linalg.norm(u) + 1)
    assert res.iterations == 0 and not res.coefficients.any()
    res = omp(m, np.zeros(15), 0.0)
    assert res.converged and not res.coefficients.any()


def test_omp_support_limit_reports():
    m, _, _ = planted(2, 3, 15, 2, seed=1)
    u = np.random.default_rng(0).normal(size=15)
    res = omp(m, u, 1e-12, max_support=3)
    assert not res.converged
    assert len(res.support) == 3
    assert "support limit" in res.status


def test_omp_residual_history_decreasing():
    m, c, u = planted(3, 5, 40, 6, seed=4)
    res = omp(m, u + 0.01 * np.random.default_rng(1).normal(size=40), 0.05)
    h = np.array(res.residual_history)
    assert np.all(np.diff(h) <= 1e-12)
    assert res.residual_norm <= 0.05


def test_omp_input_checks():
    m, _, u = planted(1, 2, 5, 1, seed=0)
    with pytest.raises(ValueError):
        omp(m, u[:3])
    with pytest.raises(ValueError):
        omp(m, u, -1.0)


# --- weighted l1 projection ----------------------------------------------------

def _project_reference(v, w, tau):
    # the projection keeps signs, so on the sign orthant it is a smooth QP
    s = np.sign(v)
    res = minimize(lambda z: 0.5 * np.sum((s * z - v) ** 2), np.zeros_like(v),
                   jac=lambda z: s * (s * z - v), method="SLSQP",
                   bounds=[(0, None)] * len(v),
                   constraints=[{"type": "ineq", "fun": lambda z: tau - w @ z,
                                 "jac": lambda z: -w}],
                   options={"ftol": 1e-14, "maxiter": 500})
    return s * res.x


@pytest.mark.parametrize("seed", range(5))
def test_projection_matches_qp(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=7)
    w = rng.uniform(0.5, 2.0, size=7)
    tau = 0.3 * np.sum(w * np.abs(v))
    x = project_weighted_l1(v, w, tau)
    np.testing.assert_allclose(x, _project_reference(v, w, tau), atol=1e-6)
    assert np.sum(w * np.abs(x)) == pytest.approx(tau, rel=1e-12)


def test_projection_special_cases():
    v = np.array([3.0, -4.0])
    np.testing.assert_array_equal(project_weighted_l1(v, 1.0, 10.0), v)
    np.testing.assert_array_equal(project_weighted_l1(v, 1.0, 0.0), 0.0)
    np.testing.assert_allclose(project_weighted_l1(v, 1.0, 1.0), [0.0, -1.0])
    with pytest.raises(ValueError):
        project_weighted_l1(v, 1.0, -1.0)


vectors = st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=12)


@given(vectors, st.floats(0, 20), st.integers(0, 100))
def test_projection_properties(vals, tau, seed):
    v = np.array(vals)
    w = np.random.default_rng(seed).uniform(0.2, 3.0, size=v.size)
    x = project_weighted_l1(v, w, tau)
    assert np.sum(w * np.abs(x)) <= tau * (1 + 1e-9) + 1e-12
    # idempotent and sign preserving
    np.testing.assert_allclose(project_weighted_l1(x, w, tau), x, atol=1e-9)
    assert np.all(x * v >= 0)


@given(vectors, st.floats(0.1, 5), st.integers(0, 100))
def test_projection_nonexpansive(vals, tau, seed):
    v1 = np.array(vals)
    rng = np.random.default_rng(seed)
    v2 = v1 + rng.normal(size=v1.size)
    w = rng.uniform(0.2, 3.0, size=v1.size)
    d = np.linalg.norm(project_weighted_l1(v1, w, tau) - project_weighted_l1(v2, w, tau))
    assert d <= np.linalg.norm(v1 - v2) * (1 + 1e-9) + 1e-12


# --- LASSO / BPDN ------------------------------------------------------------

def test_lasso_optimality(rng):
    A = rng.normal(size=(20, 30))
    u = rng.normal(size=20)
    m = matrix_from_array(A)
    tau = 2.0
    res = lasso_spg(m, u, tau)
    assert res.converged
    w = m.column_weights
    assert np.sum(w * np.abs(res.coefficients)) <= tau * (1 + 1e-9)
    # compare the objective with a generic constrained solver
    ref = minimize(lambda x: 0.5 * np.sum((A @ x - u) ** 2), np.zeros(30), method="SLSQP",
                   constraints=[{"type": "ineq", "fun": lambda x: tau - np.sum(w * np.abs(x))}],
                   options={"maxiter": 1000, "ftol": 1e-12})
    f = 0.5 * res.residual_norm**2
    assert f <= 0.5 * np.sum((A @ ref.x - u) ** 2) + 1e-6


def test_lasso_tau_zero_gives_zero(rng):
    A = rng.normal(size=(5, 4))
    res = lasso_spg(A, rng.normal(size=5), 0.0)
    assert not res.coefficients.any()


def test_bpdn_planted_small():
    m, c, u = planted(2, 8, 30, 4, seed=3)
    res = bpdn(m, u, 1e-10)
    assert rel(res.coefficients, c) <= 1e-4


def test_bpdn_residual_constraint_active():
    m, c, u = planted(3, 4, 30, 3, seed=5)
    noisy = u + 0.05 * np.random.default_rng(2).normal(size=30)
    delta = 0.2
    res = bpdn(m, noisy, delta)
    assert res.converged
    assert res.residual_norm <= delta * (1 + 1e-4) + 1e-12
    assert res.residual_norm >= 0.99 * delta


def test_bpdn_trivial_delta():
    m, c, u = planted(2, 3, 12, 2, seed=1)
    res = bpdn(m, u, 2 * np.linalg.norm(u))
    assert not res.coefficients.any() and res.converged


def test_bpdn_floor_reported(rng):
    # overdetermined noisy data: least-squares residual already exceeds delta
    A = rng.normal(size=(40, 3))
    u = rng.normal(size=40)
    res = bpdn(A, u, 1e-6)
    assert not res.converged
    assert res.status == "least-squares floor above delta"


def test_bpdn_smaller_l1_than_omp():
    m, c, u = planted(3, 4, 25, 4, seed=8)
    noisy = u + 0.02 * np.random.default_rng(3).normal(size=25)
    delta = 0.15
    w = m.column_weights
    b = bpdn(m, noisy, delta)
    o = omp(m, noisy, delta)
    assert np.sum(w * np.abs(b.coefficients)) <= np.sum(w * np.abs(o.coefficients)) * (1 + 1e-6)


def test_recover_dispatch():
    m, c, u = planted(2, 3, 12, 2, seed=1)
    assert recover(m, u, 1e-10, "omp").solver == "omp"
    assert recover(m, u, 1e-10, "bpdn").solver == "bpdn"
    with pytest.raises(ValueError):
        recover(m, u, 1e-10, "lars")
