import numpy as np
import pytest

import hdcal.montecarlo as mc
from hdcal import InvalidInput, ScenarioUnstable
from hdcal.composition import close
from hdcal.montecarlo import (
    METHODS,
    SimulationScenario,
    default_alpha,
    estimate_nuisance,
    generate_dataset,
    run_replicate,
    run_scenario,
    summarize,
)


def _small(**kw):
    base = dict(n=40, p=12, n_mc=6, seed=3, cv_folds=3)
    base.update(kw)
    return SimulationScenario(**base)


def test_default_alpha_and_mu_rule():
    sc = SimulationScenario(p=100)
    assert sc.alpha_true[:8] == (1.0, -0.8, 1.5, 0.6, -0.9, 1.2, 0.4, 0.0)
    assert sc.s0 == 7 and len(sc.alpha_true) == 99
    np.testing.assert_allclose(sc.mu_x[:5], np.log(50.0))
    assert not sc.mu_x[5:].any()
    assert default_alpha(4) == (1.0, -0.8, 1.5)


@pytest.mark.parametrize("field, value", [
    ("rho", 1.0), ("sigma_u_sq", -0.1), ("nuisance_mode", "magic"),
    ("cov_estimator", "ledoit"), ("error_structure", "weird"), ("n_mc", 0),
    ("alpha_true", (1.0, 2.0)), ("mu_x_rule", "last5"), ("delasso_decorrelation", "x"),
])
def test_scenario_validation(field, value):
    with pytest.raises(InvalidInput):
        _small(**{field: value})


def test_ar1_covariance():
    sc = _small(rho=0.5)
    assert sc.sigma_x[0, 3] == pytest.approx(0.125)
    np.testing.assert_allclose(np.diag(sc.sigma_x), 1.0)


def test_dataset_zero_rho_uncorrelated():
    sc = SimulationScenario(n=2000, p=6, rho=0.0, seed=1)
    ds = generate_dataset(sc, 0)
    c = np.corrcoef(ds.log_x, rowvar=False)
    off = c[~np.eye(6, dtype=bool)]
    assert np.abs(off).max() < 4 / np.sqrt(2000)


def test_dataset_without_error_is_exact():
    ds = generate_dataset(_small(sigma_u_sq=0.0), 2)
    x = np.exp(ds.log_x)
    for w in ds.replicates:
        np.testing.assert_array_equal(w, x)


def test_dataset_shapes_and_determinism():
    sc = _small(n_replicate_obs=3)
    a, b = generate_dataset(sc, 4), generate_dataset(sc, 4)
    c = generate_dataset(sc, 5)
    assert len(a.replicates) == 4 and a.W.shape == (40, 12)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.W, b.W)
    assert not np.array_equal(a.y, c.y)
    np.testing.assert_array_equal(a.W, a.replicates[0])


def test_response_follows_log_contrast_model():
    sc = _small(sigma_eps=0.0)
    ds = generate_dataset(sc, 0)
    zt = np.log(close(np.exp(ds.log_x)).values)
    zt = zt[:, :-1] - zt[:, -1:]
    np.testing.assert_allclose(ds.y, zt @ np.asarray(sc.alpha_true), atol=1e-10)


def test_estimate_nuisance_outputs():
    sc = _small(n=80, sigma_u_sq=0.5)
    ds = generate_dataset(sc, 0)
    for est in ("shrinkage", "nodewise"):
        nuis, s2, mu, cov = estimate_nuisance(ds.W, ds.replicates, est)
        assert nuis.mode == "estimated"
        assert 0.2 < s2 < 0.8
        assert mu.shape == (12,) and cov.psd_repaired
        assert np.linalg.eigvalsh(cov.matrix).min() > 0
    with pytest.raises(InvalidInput):
        estimate_nuisance(ds.W, ds.replicates, "bogus")


def test_run_replicate_methods():
    out = run_replicate(_small(), 0)
    assert set(out) == set(METHODS)
    assert out["lasso"][1] is None and out["cocolasso"][1] is None
    for name in ("debiased_lasso", "proposed"):
        est, se = out[name]
        assert est.shape == se.shape == (11,)
        assert np.all(se > 0)


def test_summarize_identities(rng):
    alpha = np.array([1.0, 0.0, -0.5])
    est = alpha + 0.3 * rng.standard_normal((50, 3)) + 0.1
    ses = np.full((50, 3), 0.3)
    s = summarize(alpha, est, ses)
    n = len(est)
    np.testing.assert_allclose(s.rmse ** 2, s.bias ** 2 + s.empirical_sd ** 2 * (n - 1) / n,
                               atol=1e-10)
    assert np.all(s.rmse >= np.abs(s.bias))
    assert np.all((0 <= s.coverage_rate) & (s.coverage_rate <= 1))
    np.testing.assert_allclose(s.mean_model_se, 0.3)
    assert summarize(alpha, est).coverage_rate is None


def test_summarize_coverage_counts():
    alpha = np.zeros(1)
    est = np.array([[0.0], [1.0], [3.0], [-1.9]])
    s = summarize(alpha, est, np.ones((4, 1)))
    assert s.coverage_rate[0] == 0.75


def test_run_scenario_deterministic_and_parallel_invariant():
    sc = _small(n_mc=4)
    a = run_scenario(sc)
    b = run_scenario(sc)
    c = run_scenario(sc, threads=2)
    assert a.n_mc_completed == 4 and a.n_failed == 0
    for name in METHODS:
        for x, y, z in zip(a.draws[name], b.draws[name], c.draws[name]):
            if x is None:
                continue
            np.testing.assert_array_equal(x, y)
            np.testing.assert_array_equal(x, z)
    assert a.rows() == b.rows() == c.rows()
    assert len(a.rows()) == 4 * 11


def test_run_scenario_rmse_identity():
    tab = run_scenario(_small(n_mc=5))
    for name in METHODS:
        est, _ = tab.draws[name]
        s = tab.methods[name]
        k = len(est)
        np.testing.assert_allclose(s.rmse ** 2,
                                   s.bias ** 2 + s.empirical_sd ** 2 * (k - 1) / k, atol=1e-10)


def _flaky(bad):
    real = mc.run_replicate

    def run(sc, idx):
        if idx in bad:
            raise mc.InvalidInput(f"synthetic failure {idx}")
        return real(sc, idx)
    return run


def test_failures_are_recorded(monkeypatch):
    monkeypatch.setattr(mc, "run_replicate", _flaky({7}))
    tab = run_scenario(_small(n_mc=20))
    assert tab.n_failed == 1 and tab.n_mc_completed == 19
    assert tab.failures[0][0] == 7 and "synthetic failure" in tab.failures[0][1]


def test_too_many_failures_raise(monkeypatch):
    monkeypatch.setattr(mc, "run_replicate", _flaky({0, 1}))
    with pytest.raises(ScenarioUnstable):
        run_scenario(_small(n_mc=20))


def test_progress_callback():
    seen = []
    run_scenario(_small(n_mc=3), progress=lambda k, total: seen.append((k, total)))
    assert seen == [(1, 3), (2, 3), (3, 3)]


@pytest.mark.slow
def test_attenuation_pattern():
    sc = SimulationScenario(n=100, p=40, n_mc=25, seed=2)
    tab = run_scenario(sc)
    alpha = np.asarray(sc.alpha_true)
    nz = alpha != 0
    lasso = tab.methods["lasso"].bias
    assert np.all(np.sign(lasso[nz]) == -np.sign(alpha[nz]))
