import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparsepc.klfield import (CovarianceSpec, JacobiConvergenceError, KLExpansion, build_field,
                              eval_field, gauss_legendre_unit, gaussian_cov, jacobi_eigh,
                              nystrom_eig, nystrom_spectrum, positivity_margin)

FIELD_D14 = dict(mean_bar_a=0.1, sigma_a=0.03, correlation_length=0.2, d=14)


@pytest.fixture(scope="module")
def field14():
    return build_field(**FIELD_D14)


def test_gaussian_cov():
    assert gaussian_cov(0.3, 0.3, 0.2) == 1.0
    assert gaussian_cov(0.1, 0.3, 0.2) == pytest.approx(math.exp(-1), rel=1e-14)
    assert gaussian_cov(0.7, 0.2, 0.5) == gaussian_cov(0.2, 0.7, 0.5)
    with pytest.raises(ValueError):
        gaussian_cov(0.0, 0.1, 0.0)
    with pytest.raises(ValueError):
        CovarianceSpec(-1.0)


def test_gauss_legendre_unit():
    x, w = gauss_legendre_unit(10)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all((x > 0) & (x < 1))
    assert w @ x**5 == pytest.approx(1 / 6, abs=1e-14)


# --- Jacobi ------------------------------------------------------------------

@given(st.integers(1, 12), st.integers(0, 10_000))
def test_jacobi_matches_lapack(n, seed):
    B = np.random.default_rng(seed).normal(size=(n, n))
    A = B + B.T
    lam, V, _ = jacobi_eigh(A)
    np.testing.assert_allclose(np.sort(lam), np.linalg.eigvalsh(A), atol=1e-12 * np.abs(A).max())
    np.testing.assert_allclose(V.T @ V, np.eye(n), atol=1e-12)
    np.testing.assert_allclose(A @ V, V * lam, atol=1e-11 * max(1, np.abs(A).max()))


def test_jacobi_diagonal_and_zero():
    lam, V, sweeps = jacobi_eigh(np.diag([3.0, 1.0, 2.0]))
    assert sweeps == 0
    np.testing.assert_array_equal(lam, [3.0, 1.0, 2.0])
    lam, _, _ = jacobi_eigh(np.zeros((3, 3)))
    np.testing.assert_array_equal(lam, 0.0)


def test_jacobi_repeated_eigenvalues():
    Q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(6, 6)))
    A = Q @ np.diag([1, 1, 1, 2, 2, 5.0]) @ Q.T
    lam, V, _ = jacobi_eigh(A)
    np.testing.assert_allclose(np.sort(lam), [1, 1, 1, 2, 2, 5], atol=1e-13)


def test_jacobi_sweep_limit():
    B = np.random.default_rng(1).normal(size=(20, 20))
    with pytest.raises(JacobiConvergenceError):
        jacobi_eigh(B + B.T, max_sweeps=1)
    with pytest.raises(ValueError):
        jacobi_eigh(np.ones((2, 3)))


# --- Nystrom spectrum -----------------------------------------------------------

def test_trace_equals_one():
    spec = nystrom_spectrum(CovarianceSpec(0.2), 200)
    assert abs(spec.eigenvalues.sum() - 1.0) <= 1e-8


def test_eigenvalues_descending_nonnegative():
    kl = nystrom_eig(CovarianceSpec(0.2), 200, 30)
    lam = kl.all_eigenvalues
    assert np.all(np.diff(lam) <= 0)
    assert lam.min() >= 0
    big = lam[lam > 1e-12]
    assert np.all(np.diff(big) < 0)


def test_top14_capture():
    kl = nystrom_eig(CovarianceSpec(0.2), 200, 14)
    assert kl.eigenvalues.sum() >= 0.99 * kl.all_eigenvalues.sum()


def test_quadrature_orthonormality():
    kl = nystrom_eig(CovarianceSpec(0.2), 200, 14)
    G = kl.phi_nodes.T @ (kl.weights[:, None] * kl.phi_nodes)
    assert np.max(np.abs(G - np.eye(14))) < 1e-8


def test_sign_convention():
    kl = nystrom_eig(CovarianceSpec(0.2), 200, 14)
    integrals = kl.weights @ kl.phi_nodes
    for i in range(14):
        if abs(integrals[i]) > 1e-10:
            assert integrals[i] > 0
        else:
            assert kl.phi_nodes[0, i] >= 0


def test_mercer_reconstruction():
    spec = nystrom_spectrum(CovarianceSpec(0.5), 40)
    K = (spec.phi_nodes * spec.eigenvalues) @ spec.phi_nodes.T
    rng = np.random.default_rng(3)
    a, b = rng.integers(0, 40, size=(2, 100))
    ref = gaussian_cov(spec.nodes[a], spec.nodes[b], 0.5)
    assert np.max(np.abs(K[a, b] - ref)) < 1e-6


def test_refinement_stability():
    lo = nystrom_eig(CovarianceSpec(0.2), 200, 14).eigenvalues
    hi = nystrom_eig(CovarianceSpec(0.2), 400, 14).eigenvalues
    np.testing.assert_allclose(lo, hi, rtol=1e-6)


def test_nystrom_extension_reproduces_nodes():
    kl = nystrom_eig(CovarianceSpec(0.2), 200, 10)
    np.testing.assert_allclose(kl.eigenfunctions(kl.nodes), kl.phi_nodes, atol=1e-8)


def test_too_many_modes():
    with pytest.raises(ValueError):
        nystrom_eig(CovarianceSpec(0.2), 10, 11)


# --- field -------------------------------------------------------------------

def test_field_affine_in_y(field14):
    rng = np.random.default_rng(5)
    y = rng.uniform(-1, 1, 14)
    assert eval_field(field14, 0.3, np.zeros(14)) == pytest.approx(0.1, abs=1e-15)
    a1 = eval_field(field14, 0.3, y) - 0.1
    a2 = eval_field(field14, 0.3, 2 * y) - 0.1
    assert a2 == pytest.approx(2 * a1, rel=1e-12)


def test_field_errors(field14):
    with pytest.raises(ValueError):
        eval_field(field14, 1.5, np.zeros(14))
    with pytest.raises(ValueError):
        eval_field(field14, 0.5, np.zeros(3))


def test_d14_field_positive(field14):
    margin = positivity_margin(field14)
    assert margin > 0
    rng = np.random.default_rng(7)
    x = np.linspace(0, 1, 1000)
    Y = rng.uniform(-1, 1, (1000, 14))
    vals = field14.field(x, Y)
    assert vals.min() > 0
    assert vals.min() >= margin - 1e-12


def test_margin_no_noise():
    kl = build_field(0.1, 0.0, 0.2, 5)
    assert positivity_margin(kl) == pytest.approx(0.1)


def test_json_roundtrip(tmp_path, field14):
    field14.to_json(tmp_path / "kl.json")
    back = KLExpansion.from_json(tmp_path / "kl.json")
    x = np.linspace(0, 1, 7)
    Y = np.random.default_rng(0).uniform(-1, 1, (3, 14))
    np.testing.assert_allclose(back.field(x, Y), field14.field(x, Y), rtol=1e-14)
