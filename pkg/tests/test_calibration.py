import numpy as np
import pytest

from hdcal import SingularSystem
from hdcal.calibration import (
    build_design,
    calibrated_covariance,
    conditional_mean,
    robust_cho_factor,
    spd_solve,
)
from hdcal.covariance import LogContrastNuisance, contrast_matrix, to_logcontrast_nuisance

from conftest import random_spd


def _nuisance(rng, q, s2, structure="shared"):
    return LogContrastNuisance(rng.standard_normal(q), random_spd(rng, q, cond=5.0) + 0.5 * np.eye(q),
                               s2, error_structure=structure)


@pytest.mark.parametrize("structure", ["shared", "independent"])
def test_conditional_mean_matches_explicit_inverse(rng, structure):
    nu = _nuisance(rng, 4, 0.7, structure)
    v = rng.standard_normal((6, 4))
    S, E = nu.sigma_ztilde, nu.error_covariance()
    expect = nu.mu_ztilde + (v - nu.mu_ztilde) @ np.linalg.inv(S + E) @ S
    np.testing.assert_allclose(conditional_mean(v, nu), expect, atol=1e-12)
    np.testing.assert_allclose(calibrated_covariance(nu), S @ np.linalg.inv(S + E) @ S, atol=1e-12)


def test_independent_structure_uses_two_sigma_identity(rng):
    nu = _nuisance(rng, 3, 0.4, "independent")
    S = nu.sigma_ztilde
    expect = S @ np.linalg.solve(S + 0.8 * np.eye(3), S)
    np.testing.assert_allclose(calibrated_covariance(nu), expect, atol=1e-12)


def test_single_row_and_stack_agree(rng):
    nu = _nuisance(rng, 5, 0.3)
    v = rng.standard_normal((3, 5))
    stacked = conditional_mean(v, nu)
    for i in range(3):
        np.testing.assert_allclose(conditional_mean(v[i], nu), stacked[i], atol=1e-13)


def test_zero_error_is_identity(rng):
    nu = _nuisance(rng, 4, 0.0)
    v = rng.standard_normal((5, 4))
    np.testing.assert_array_equal(conditional_mean(v, nu), v)
    np.testing.assert_array_equal(calibrated_covariance(nu), nu.sigma_ztilde)


def test_scalar_shrinkage_factor():
    nu = LogContrastNuisance(np.array([1.0]), np.array([[3.0]]), 0.5, error_structure="independent")
    # 1 + 3 / (3 + 1) * (5 - 1)
    np.testing.assert_allclose(conditional_mean(np.array([[5.0]]), nu), [[4.0]])
    np.testing.assert_allclose(calibrated_covariance(nu), [[9.0 / 4.0]])


def test_shared_calibration_is_conditional_expectation_under_lognormal_errors():
    # simulate the multiplicative model itself and regress true on observed log-ratios
    gen = np.random.default_rng(3)
    p, n, s2 = 4, 200_000, 0.6
    sx = 0.5 * np.eye(p) + 0.2
    mu = np.array([0.5, 0.0, -0.3, 0.2])
    logx = gen.multivariate_normal(mu, sx, size=n)
    logu = gen.normal(-s2 / 2, np.sqrt(s2), size=(n, p))
    B = contrast_matrix(p)
    z = logx @ B.T
    v = (logx + logu) @ B.T
    nu = to_logcontrast_nuisance(mu, sx, s2)
    m = conditional_mean(v, nu)
    # residual z - m is uncorrelated with v and has mean zero
    resid = z - m
    assert np.abs(resid.mean(axis=0)).max() < 0.01
    cross = (resid - resid.mean(0)).T @ (v - v.mean(0)) / n
    assert np.abs(cross).max() < 0.01
    np.testing.assert_allclose(np.cov(m, rowvar=False), calibrated_covariance(nu), atol=0.01)


def test_build_design_centers_and_freezes(rng):
    nu = _nuisance(rng, 3, 0.2)
    d = build_design(rng.standard_normal((8, 3)) + 4, nu)
    assert np.abs(d.m_matrix.mean(axis=0)).max() < 1e-12
    assert d.n == 8
    np.testing.assert_allclose(d.omega_hat, d.m_matrix.T @ d.m_matrix / 8)
    with pytest.raises(ValueError):
        d.m_matrix[0, 0] = 1.0


def test_build_design_repairs_estimated_covariance():
    s = np.diag([1.0, 1e-9])
    nu = LogContrastNuisance(np.zeros(2), s, 1.0, mode="estimated")
    d = build_design(np.zeros((3, 2)), nu)
    assert np.linalg.eigvalsh(d.sigma).min() >= 1e-8 - 1e-15


def test_robust_cholesky_jitters_singular_psd():
    a = np.ones((3, 3))
    x = spd_solve(a, np.ones(3))
    assert np.all(np.isfinite(x))


def test_robust_cholesky_rejects_indefinite():
    with pytest.raises(SingularSystem):
        robust_cho_factor(np.diag([1.0, -1.0]))
