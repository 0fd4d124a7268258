"""Monte Carlo harness: simulate log-contrast data with lognormal contamination,
run the four estimators and summarise bias, RMSE, standard error and coverage.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ._errors import HdcalError, InvalidInput, ScenarioUnstable
from .composition import close, log_contrast
from .covariance import (
    ERROR_STRUCTURES,
    nodewise_covariance,
    psd_repair,
    shrinkage_covariance,
    to_logcontrast_nuisance,
)
from .error_model import estimate_mu_x, estimate_sigma_u, make_rng, simulate_contamination
from .inference import fit_debiased_lasso, fit_proposed
from .lasso import CvConfig, cocolasso_cv, cocolasso_fit, cross_validate_lambda

log = logging.getLogger(__name__)

METHODS = ("lasso", "cocolasso", "debiased_lasso", "proposed")
DEFAULT_ALPHA = (1.0, -0.8, 1.5, 0.6, -0.9, 1.2, 0.4)
MAX_FAILURE_RATE = 0.05


def default_alpha(p: int) -> tuple:
    a = np.zeros(p - 1)
    k = min(len(DEFAULT_ALPHA), p - 1)
    a[:k] = DEFAULT_ALPHA[:k]
    return tuple(float(x) for x in a)


@dataclass(frozen=True)
class SimulationScenario:
    n: int = 100
    p: int = 100
    rho: float = 0.2
    sigma_u_sq: float = 1.0
    sigma_eps: float = 0.5
    alpha_true: tuple = ()
    mu_x_rule: str = "first5"
    n_replicate_obs: int = 3
    nuisance_mode: str = "oracle"
    cov_estimator: str = "shrinkage"
    error_structure: str = "shared"
    delasso_decorrelation: str = "nodewise"
    n_mc: int = 200
    seed: int = 0
    cv_folds: int = 5
    level: float = 0.95

    def __post_init__(self):
        if self.n < 2 or self.p < 2:
            raise InvalidInput("n and p must be at least 2")
        if not -1 < self.rho < 1:
            raise InvalidInput(f"rho must lie in (-1, 1), got {self.rho}")
        if self.sigma_u_sq < 0 or self.sigma_eps < 0:
            raise InvalidInput("variances must be non-negative")
        if self.nuisance_mode not in ("oracle", "estimated"):
            raise InvalidInput(f"unknown nuisance_mode {self.nuisance_mode!r}")
        if self.cov_estimator not in ("shrinkage", "nodewise"):
            raise InvalidInput(f"unknown cov_estimator {self.cov_estimator!r}")
        if self.error_structure not in ERROR_STRUCTURES:
            raise InvalidInput(f"unknown error_structure {self.error_structure!r}")
        if self.delasso_decorrelation not in ("sample", "nodewise"):
            raise InvalidInput(f"unknown delasso_decorrelation {self.delasso_decorrelation!r}")
        if self.mu_x_rule not in ("first5", "zero"):
            raise InvalidInput(f"unknown mu_x_rule {self.mu_x_rule!r}")
        if self.n_mc < 1:
            raise InvalidInput("n_mc must be positive")
        if self.nuisance_mode == "estimated" and self.n_replicate_obs < 1:
            raise InvalidInput("estimated nuisances need at least one extra replicate")
        alpha = tuple(float(a) for a in self.alpha_true) or default_alpha(self.p)
        if len(alpha) != self.p - 1:
            raise InvalidInput(f"alpha_true has length {len(alpha)}, expected p-1 = {self.p - 1}")
        object.__setattr__(self, "alpha_true", alpha)

    @property
    def s0(self) -> int:
        return int(np.count_nonzero(self.alpha_true))

    @property
    def mu_x(self) -> np.ndarray:
        mu = np.zeros(self.p)
        if self.mu_x_rule == "first5":
            mu[:5] = np.log(self.p / 2)
        return mu

    @property
    def sigma_x(self) -> np.ndarray:
        idx = np.arange(self.p)
        return self.rho ** np.abs(idx[:, None] - idx[None, :])


@dataclass
class Dataset:
    y: np.ndarray
    W: np.ndarray
    replicates: list
    log_x: np.ndarray
    z_tilde: np.ndarray


def generate_dataset(scenario: SimulationScenario, replicate_index: int) -> Dataset:
    """Draw one data set; fully determined by ``(scenario.seed, replicate_index)``.

    ``replicates`` holds ``W`` itself followed by ``n_replicate_obs`` more
    contaminated copies of the same true counts.
    """
    sc = scenario
    rng = make_rng((sc.seed, replicate_index))
    chol = np.linalg.cholesky(sc.sigma_x)
    log_x = sc.mu_x + rng.standard_normal((sc.n, sc.p)) @ chol.T
    x = np.exp(log_x)
    z_tilde = log_contrast(close(x)).values
    y = z_tilde @ np.asarray(sc.alpha_true) + sc.sigma_eps * rng.standard_normal(sc.n)
    reps = [simulate_contamination(x, sc.sigma_u_sq, rng).values
            for _ in range(1 + sc.n_replicate_obs)]
    return Dataset(y, reps[0], reps, log_x, z_tilde)


def estimate_nuisance(W, replicates, cov_estimator="shrinkage", reference_index=None,
                      sigma_u_mask=None, floor=1e-8, error_structure="shared"):
    """sigma_u^2 from replicates, mu_x from W, Sigma_x by the chosen estimator.

    Returns ``(nuisance, sigma_u_sq, mu_x, CovarianceEstimate)``.
    """
    reps = replicates if sigma_u_mask is None else [np.asarray(r)[:, sigma_u_mask] for r in replicates]
    s2 = estimate_sigma_u(reps)
    mu = estimate_mu_x(W, s2)
    logw = np.log(np.asarray(W, dtype=float))
    if cov_estimator == "shrinkage":
        est = shrinkage_covariance(logw, s2)
    elif cov_estimator == "nodewise":
        est = nodewise_covariance(logw, s2)
    else:
        raise InvalidInput(f"unknown covariance estimator {cov_estimator!r}")
    sx = psd_repair(est.matrix, floor)
    est = replace(est, matrix=sx, psd_repaired=True)
    nuis = to_logcontrast_nuisance(mu, sx, s2, reference_index, mode="estimated",
                                  error_structure=error_structure)
    return nuis, s2, mu, est


def run_replicate(scenario: SimulationScenario, replicate_index: int) -> dict:
    """All four fits on one simulated data set.

    Returns ``{method: (estimate, se or None)}``.
    """
    sc = scenario
    data = generate_dataset(sc, replicate_index)
    v = log_contrast(close(data.W)).values
    y = data.y
    cv = CvConfig(folds=sc.cv_folds, seed=(sc.seed * 1_000_003 + replicate_index) % 2**63)

    if sc.nuisance_mode == "oracle":
        nuis = to_logcontrast_nuisance(sc.mu_x, sc.sigma_x, sc.sigma_u_sq,
                                       error_structure=sc.error_structure)
    else:
        nuis = estimate_nuisance(data.W, data.replicates, sc.cov_estimator,
                                 error_structure=sc.error_structure)[0]

    lam_naive, _ = cross_validate_lambda(v, y, cv)
    delasso = fit_debiased_lasso(v, y, cv, lam=lam_naive, decorrelation=sc.delasso_decorrelation)
    lam_coco, _ = cocolasso_cv(v, y, nuis.sigma_u_sq, cv)
    coco = cocolasso_fit(v, y, nuis.sigma_u_sq, lam_coco)
    prop = fit_proposed(v, y, nuis, cv)
    return {
        "lasso": (delasso.alpha_tilde, None),
        "cocolasso": (coco.coefficients, None),
        "debiased_lasso": (delasso.alpha_hat, delasso.se),
        "proposed": (prop.alpha_hat, prop.se),
    }


def _safe_replicate(args):
    sc, idx = args
    try:
        return idx, run_replicate(sc, idx), None
    except HdcalError as exc:
        return idx, None, f"{type(exc).__name__}: {exc}"


@dataclass
class MethodSummary:
    bias: np.ndarray
    rmse: np.ndarray
    mean_model_se: np.ndarray | None
    empirical_sd: np.ndarray
    coverage_rate: np.ndarray | None


@dataclass
class SummaryTable:
    alpha_true: np.ndarray
    methods: dict
    n_mc_completed: int
    n_failed: int = 0
    failures: list = field(default_factory=list)
    draws: dict = field(default_factory=dict, repr=False)

    def rows(self):
        """Flat records, one per (method, coefficient)."""
        out = []
        for name in METHODS:
            s = self.methods.get(name)
            if s is None:
                continue
            for j, a in enumerate(self.alpha_true):
                out.append({
                    "method": name,
                    "index": j + 1,
                    "alpha_true": float(a),
                    "bias": float(s.bias[j]),
                    "rmse": float(s.rmse[j]),
                    "se": None if s.mean_model_se is None else float(s.mean_model_se[j]),
                    "empirical_sd": float(s.empirical_sd[j]),
                    "coverage": None if s.coverage_rate is None else float(s.coverage_rate[j]),
                })
        return out


def summarize(alpha_true, estimates, ses=None, level=0.95) -> MethodSummary:
    """Bias, RMSE, mean model SE, empirical SD and CI coverage over replicates."""
    from .inference import normal_quantile

    est = np.asarray(estimates, dtype=float)
    alpha = np.asarray(alpha_true, dtype=float)
    err = est - alpha
    bias = err.mean(axis=0)
    rmse = np.sqrt((err ** 2).mean(axis=0))
    sd = est.std(axis=0, ddof=1) if len(est) > 1 else np.zeros(alpha.size)
    if ses is None:
        return MethodSummary(bias, rmse, None, sd, None)
    se = np.asarray(ses, dtype=float)
    half = normal_quantile(1 - (1 - level) / 2) * se
    cover = (np.abs(err) <= half).mean(axis=0)
    return MethodSummary(bias, rmse, se.mean(axis=0), sd, cover)


def _limit_blas_threads():
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(1)
    except ImportError:  # pragma: no cover
        pass


def run_scenario(scenario: SimulationScenario, threads: int | None = None,
                 progress=None) -> SummaryTable:
    """Run ``n_mc`` replicates and summarise each method.

    Replicates are independent, so ``threads > 1`` fans them out over worker
    processes; results are reduced in replicate order, so the table does not
    depend on scheduling. More than 5% failed replicates raises
    ``ScenarioUnstable``.
    """
    sc = scenario
    jobs = [(sc, i) for i in range(sc.n_mc)]
    threads = threads or 1
    results = [None] * sc.n_mc
    if threads > 1:
        with ProcessPoolExecutor(threads, initializer=_limit_blas_threads) as ex:
            for k, res in enumerate(ex.map(_safe_replicate, jobs, chunksize=1)):
                results[res[0]] = res
                if progress:
                    progress(k + 1, sc.n_mc)
    else:
        for k, job in enumerate(jobs):
            results[k] = _safe_replicate(job)
            if progress:
                progress(k + 1, sc.n_mc)

    failures = [(i, msg) for i, out, msg in results if out is None]
    if len(failures) > MAX_FAILURE_RATE * sc.n_mc:
        raise ScenarioUnstable(len(failures), sc.n_mc)
    for i, msg in failures:
        log.warning("replicate %d failed: %s", i, msg)
    good = [out for _, out, _ in results if out is not None]
    alpha = np.asarray(sc.alpha_true)
    methods, draws = {}, {}
    for name in METHODS:
        est = np.array([g[name][0] for g in good])
        ses = None if good[0][name][1] is None else np.array([g[name][1] for g in good])
        methods[name] = summarize(alpha, est, ses, sc.level)
        draws[name] = (est, ses)
    return SummaryTable(alpha, methods, len(good), len(failures), failures, draws)


def scenario_dict(sc: SimulationScenario) -> dict:
    d = asdict(sc)
    d["alpha_true"] = list(d["alpha_true"])
    return d
