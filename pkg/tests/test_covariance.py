import numpy as np
import pytest

from hdcal import DegenerateResidual, InvalidInput
from hdcal.covariance import (
    LogContrastNuisance,
    contrast_matrix,
    logcontrast_error_covariance,
    nodewise_covariance,
    nodewise_regressions,
    psd_repair,
    repaired,
    sample_covariance,
    shrinkage_covariance,
    shrinkage_intensity,
    to_logcontrast_nuisance,
)


def ar1(p, rho):
    i = np.arange(p)
    return rho ** np.abs(i[:, None] - i[None, :])


def test_psd_repair_leaves_pd_input_alone():
    m = np.array([[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_array_equal(psd_repair(m), m)


def test_psd_repair_clips_negative_eigenvalue():
    m = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3, -1
    out = psd_repair(m, floor=0.0)
    np.testing.assert_allclose(out, 1.5 * np.ones((2, 2)), atol=1e-12)
    assert np.linalg.eigvalsh(psd_repair(m)).min() >= 1e-8 - 1e-15


def test_psd_repair_beats_random_psd_candidates(rng):
    a = rng.standard_normal((6, 6))
    a = (a + a.T) / 2
    best = np.linalg.norm(a - psd_repair(a, 0.0))
    for _ in range(200):
        b = rng.standard_normal((6, 6))
        b = b @ b.T * rng.uniform(0.01, 1)
        assert np.linalg.norm(a - b) >= best - 1e-12


def test_contrast_matrix_maps_logs_to_ratios(rng):
    x = rng.uniform(1, 3, size=5)
    for ref in (None, 0, 2):
        B = contrast_matrix(5, ref)
        r = 4 if ref is None else ref
        keep = [j for j in range(5) if j != r]
        np.testing.assert_allclose(B @ np.log(x), np.log(x[keep] / x[r]))


def test_nuisance_equals_congruence_transform(rng):
    p = 6
    a = rng.standard_normal((p, p))
    sx = a @ a.T + np.eye(p)
    mu = rng.standard_normal(p)
    for ref in (None, 1):
        nu = to_logcontrast_nuisance(mu, sx, 0.3, ref)
        B = contrast_matrix(p, ref)
        np.testing.assert_allclose(nu.sigma_ztilde, B @ sx @ B.T, atol=1e-12)
        np.testing.assert_allclose(nu.mu_ztilde, B @ mu, atol=1e-12)


def test_nuisance_validation():
    with pytest.raises(InvalidInput):
        LogContrastNuisance(np.zeros(2), np.eye(3), 0.1)
    with pytest.raises(InvalidInput):
        LogContrastNuisance(np.zeros(2), np.array([[1.0, 0.3], [0.0, 1.0]]), 0.1)
    with pytest.raises(InvalidInput):
        LogContrastNuisance(np.zeros(2), np.eye(2), -0.1)
    with pytest.raises(InvalidInput):
        LogContrastNuisance(np.zeros(2), np.eye(2), 0.1, error_structure="diagonal")


def test_error_covariance_structures():
    shared = LogContrastNuisance(np.zeros(3), np.eye(3), 0.5)
    indep = LogContrastNuisance(np.zeros(3), np.eye(3), 0.5, error_structure="independent")
    np.testing.assert_allclose(shared.error_covariance(), 0.5 * (np.eye(3) + 1))
    np.testing.assert_allclose(indep.error_covariance(), np.eye(3))
    np.testing.assert_allclose(logcontrast_error_covariance(3, 0.5), shared.error_covariance())


def _ss_intensity_loop(x):
    """Textbook per-pair computation of the correlation shrinkage intensity."""
    n, p = x.shape
    xs = (x - x.mean(0)) / x.std(0, ddof=1)
    num = den = 0.0
    for i in range(p):
        for j in range(p):
            if i == j:
                continue
            w = xs[:, i] * xs[:, j]
            wbar = w.mean()
            r = n / (n - 1) * wbar
            num += n / (n - 1) ** 3 * ((w - wbar) ** 2).sum()
            den += r ** 2
    return min(1.0, max(0.0, num / den))


@pytest.mark.parametrize("n,p,rho", [(20, 5, 0.6), (50, 12, 0.2), (15, 30, 0.4)])
def test_shrinkage_intensity_matches_loop_oracle(rng, n, p, rho):
    x = rng.multivariate_normal(np.zeros(p), ar1(p, rho), size=n)
    lam, r, sd = shrinkage_intensity(x)
    assert lam == pytest.approx(_ss_intensity_loop(x), rel=1e-10)
    np.testing.assert_allclose(r, np.corrcoef(x, rowvar=False), atol=1e-12)
    np.testing.assert_allclose(sd, x.std(0, ddof=1))


def test_shrinkage_covariance_structure(rng):
    x = rng.multivariate_normal(np.zeros(4), ar1(4, 0.5), size=30)
    est = shrinkage_covariance(x, 0.2)
    lam = est.shrinkage_intensity
    s = sample_covariance(x)
    np.testing.assert_allclose(np.diag(est.matrix), np.diag(s) - 0.2)
    off = ~np.eye(4, dtype=bool)
    np.testing.assert_allclose(est.matrix[off], (1 - lam) * s[off], atol=1e-12)
    assert est.method == "shrinkage" and not est.psd_repaired


def test_shrinkage_intensity_near_zero_for_strong_correlation(rng):
    x = rng.multivariate_normal(np.zeros(3), ar1(3, 0.9), size=2000)
    assert shrinkage_intensity(x)[0] < 0.01


def test_shrinkage_needs_three_rows():
    with pytest.raises(InvalidInput):
        shrinkage_covariance(np.ones((2, 3)), 0.0)


def test_nodewise_ols_limit_is_sample_covariance(rng):
    # with a vanishing penalty each node-wise fit is least squares, and
    # C^-1 T^2 reproduces the (divisor n) sample covariance
    x = rng.multivariate_normal(np.zeros(5), ar1(5, 0.4), size=400)
    est = nodewise_covariance(x, 0.0, lambda_tilde=1e-10)
    np.testing.assert_allclose(est.matrix, sample_covariance(x, ddof=0), atol=1e-6)
    est2 = nodewise_covariance(x, 0.3, lambda_tilde=1e-10)
    np.testing.assert_allclose(est2.matrix, sample_covariance(x, ddof=0) - 0.3 * np.eye(5), atol=1e-6)


def test_nodewise_recovers_sparse_precision_population(rng):
    p = 8
    x = rng.multivariate_normal(np.zeros(p), ar1(p, 0.3), size=4000)
    est = nodewise_covariance(x, 0.0)
    assert np.abs(est.matrix - ar1(p, 0.3)).max() < 0.12


def test_nodewise_constant_column_is_degenerate(rng):
    x = rng.standard_normal((20, 3))
    x[:, 1] = 2.0
    with pytest.raises(DegenerateResidual):
        nodewise_covariance(x, 0.0)


def test_nodewise_rejects_nonpositive_penalty(rng):
    with pytest.raises(InvalidInput):
        nodewise_regressions(rng.standard_normal((10, 3)), 0.0)


def test_repaired_marks_flag():
    est = shrinkage_covariance(np.random.default_rng(0).standard_normal((5, 8)), 2.0)
    rep = repaired(est)
    assert rep.psd_repaired
    assert np.linalg.eigvalsh(rep.matrix).min() >= 1e-8 - 1e-12
