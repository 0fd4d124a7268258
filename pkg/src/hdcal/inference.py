"""Debiased calibration estimator, standard errors, intervals and tests."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri

from ._errors import InvalidInput, SingularSystem
from .calibration import CalibratedDesign, build_design, spd_solve
from .composition import _as_array
from .covariance import PSD_FLOOR, LogContrastNuisance, nodewise_regressions, psd_repair, symmetrize
from .lasso import CvConfig, cross_validate_lambda, lasso_fit, LassoProblem, scaled_lasso


@dataclass(frozen=True)
class DebiasedEstimate:
    alpha_hat: np.ndarray
    alpha_tilde: np.ndarray
    se: np.ndarray
    sigma_hat: float
    omega_hat: np.ndarray
    method: str  # "proposed" or "debiased_lasso"
    lam: float = float("nan")
    sigma: np.ndarray | None = field(default=None, repr=False)
    n: int = 0


@dataclass(frozen=True)
class CoefficientInference:
    index: int
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float
    level: float = 0.95


def normal_cdf(x):
    return ndtr(x)


def normal_quantile(q):
    return ndtri(q)


def scaled_lasso_lambda(n: int, q: int) -> float:
    """Universal penalty ``10 sqrt(2 log q / n)`` used for the noise level."""
    return 10.0 * np.sqrt(2.0 * np.log(max(q, 2)) / n)


def universal_lambda(n: int, q: int) -> float:
    """``sqrt(2 log q / n)``, the usual scaled-Lasso penalty."""
    return float(np.sqrt(2.0 * np.log(q) / n))


def quantile_lambda(n: int, q: int) -> float:
    """Quantile-based scaled-Lasso penalty ``sqrt(2/n) L(k/q)``.

    ``L(t)`` is the standard normal upper quantile and ``k`` solves
    ``k = L(k/q)**4 + 2 L(k/q)**2``. Smaller than :func:`universal_lambda`,
    so the noise level is less inflated by shrinkage bias.
    """
    if q < 2:
        raise InvalidInput("quantile penalty needs q >= 2")
    up = lambda t: ndtri(1.0 - t)  # noqa: E731
    k = brentq(lambda k: k - up(k / q) ** 4 - 2.0 * up(k / q) ** 2, 1e-12, q / 2.0)
    return float(np.sqrt(2.0 / n) * up(k / q))


def theory_lambda(sigma: float, n: int, q: int) -> float:
    return 8.0 * sigma * np.sqrt(np.log(max(q, 2)) / n)


def inv_sqrt_psd(sigma: np.ndarray, floor: float = PSD_FLOOR) -> np.ndarray:
    """Symmetric inverse square root; eigenvalues below ``floor`` are an error."""
    w, v = np.linalg.eigh(symmetrize(np.asarray(sigma, dtype=float)))
    if w[0] < 0.5 * floor:
        raise SingularSystem(f"covariance eigenvalue {w[0]:.3g} below floor {floor:g}")
    w = np.maximum(w, floor)
    return symmetrize((v / np.sqrt(w)) @ v.T)


def debias(design: CalibratedDesign, response, alpha_tilde) -> np.ndarray:
    """One-step correction ``a + Sigma^-1 M'(y - M a) / n``."""
    m = design.m_matrix
    y = _as_array(response)
    a = np.asarray(alpha_tilde, dtype=float)
    r = y - m @ a
    return a + spd_solve(design.sigma, m.T @ r / m.shape[0])


def standard_errors(design: CalibratedDesign, sigma_hat: float,
                    floor: float = PSD_FLOOR) -> np.ndarray:
    """``sigma_hat * sqrt(diag(S^-1/2 Omega S^-1/2) / n)``."""
    if not sigma_hat > 0:
        raise InvalidInput("sigma_hat must be positive")
    root = inv_sqrt_psd(design.sigma, floor)
    k = root @ design.omega_hat @ root
    return sigma_hat * np.sqrt(np.clip(np.diag(k), 0.0, None) / design.n)


def coefficient_inference(est: DebiasedEstimate, level: float = 0.95) -> list[CoefficientInference]:
    """Wald intervals and two-sided normal p-values, one record per coefficient."""
    if not 0 < level < 1:
        raise InvalidInput(f"level must lie in (0, 1), got {level}")
    a = np.asarray(est.alpha_hat, dtype=float)
    se = np.asarray(est.se, dtype=float)
    half = normal_quantile(1 - (1 - level) / 2) * se
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(a == 0, 0.0, np.abs(a) / se)
    p = np.clip(2.0 - 2.0 * normal_cdf(z), 0.0, 1.0)
    return [CoefficientInference(j, float(a[j]), float(se[j]), float(a[j] - half[j]),
                                 float(a[j] + half[j]), float(p[j]), level)
            for j in range(a.size)]


def _select_lambda(m, y, cv, lam, sigma_hat):
    if lam == "cv":
        return cross_validate_lambda(m, y, cv)[0]
    if lam == "theory":
        return theory_lambda(sigma_hat, *m.shape)
    return float(lam)


def _lasso_stage(m, y, cv, lam, noise_lambda):
    n, q = m.shape
    sl = scaled_lasso(m, y, scaled_lasso_lambda(n, q) if noise_lambda is None else noise_lambda)
    lam_star = _select_lambda(m, y, cv, lam, sl.sigma_hat)
    tilde = lasso_fit(LassoProblem(m, y, lam_star)).coefficients
    return sl.sigma_hat, lam_star, tilde


def _zero_fit(design: CalibratedDesign, method: str) -> DebiasedEstimate:
    q = design.m_matrix.shape[1]
    zero = np.zeros(q)
    return DebiasedEstimate(zero, zero.copy(), zero.copy(), 0.0, design.omega_hat, method,
                            float("nan"), design.sigma, design.n)


def _fit(design: CalibratedDesign, y: np.ndarray, cv: CvConfig, lam, method: str,
         noise_lambda: float | None = None) -> DebiasedEstimate:
    if not np.any(y):
        return _zero_fit(design, method)
    sigma_hat, lam_star, tilde = _lasso_stage(design.m_matrix, y, cv, lam, noise_lambda)
    hat = debias(design, y, tilde)
    se = standard_errors(design, sigma_hat)
    return DebiasedEstimate(hat, tilde, se, sigma_hat, design.omega_hat, method,
                            lam_star, design.sigma, design.n)


def fit_proposed(v_logcontrasts, response, nuisance: LogContrastNuisance,
                 cv: CvConfig = CvConfig(), lam="cv") -> DebiasedEstimate:
    """Calibrate, Lasso, scaled-Lasso noise level, debias, standard errors.

    ``lam`` is ``"cv"`` (default), ``"theory"`` for ``8 sigma_hat sqrt(log q / n)``,
    or a number.
    """
    y = _as_array(response)
    y = y - y.mean()
    design = build_design(v_logcontrasts, nuisance)
    return _fit(design, y, cv, lam, "proposed")


def fit_debiased_lasso(v_logcontrasts, response, cv: CvConfig = CvConfig(), lam="cv",
                       floor: float = PSD_FLOOR, noise_lambda="universal",
                       decorrelation: str = "sample") -> DebiasedEstimate:
    """Debiased Lasso on the raw log-ratios, ignoring measurement error.

    ``decorrelation="sample"`` debiases with the PSD-repaired sample
    covariance of the centered log-ratios, exactly like ``fit_proposed`` does
    with its population covariance. When ``q`` is close to ``n`` this is
    close to least squares and very noisy. ``"nodewise"`` uses the node-wise
    Lasso precision ``Theta = T^-2 C`` instead, with
    ``se_j = sigma_hat sqrt((Theta Omega Theta')_jj / n)``.

    The noise level comes from a scaled Lasso whose penalty is
    ``sqrt(2 log q / n)`` by default; pass ``"calibration"`` for the larger
    penalty used by ``fit_proposed``, ``"quantile"`` for :func:`quantile_lambda`,
    or a number.
    """
    if decorrelation not in ("sample", "nodewise"):
        raise InvalidInput(f"unknown decorrelation {decorrelation!r}")
    v = _as_array(v_logcontrasts)
    y = _as_array(response)
    y = y - y.mean()
    vc = v - v.mean(axis=0)
    vc.setflags(write=False)
    n, q = vc.shape
    sigma = psd_repair(vc.T @ vc / n, floor)
    sigma.setflags(write=False)
    placeholder = LogContrastNuisance(np.zeros(q), sigma, 0.0, mode="none")
    design = CalibratedDesign(vc, sigma, placeholder, True)
    if noise_lambda == "universal":
        noise_lambda = universal_lambda(n, q)
    elif noise_lambda == "calibration":
        noise_lambda = scaled_lasso_lambda(n, q)
    elif noise_lambda == "quantile":
        noise_lambda = quantile_lambda(n, q)
    else:
        noise_lambda = float(noise_lambda)
    if decorrelation == "sample":
        return _fit(design, y, cv, lam, "debiased_lasso", noise_lambda)

    if not np.any(y):
        return _zero_fit(design, "debiased_lasso")
    sigma_hat, lam_star, tilde = _lasso_stage(vc, y, cv, lam, noise_lambda)
    C, tau2 = nodewise_regressions(vc)
    theta = C / tau2[:, None]
    hat = tilde + theta @ (vc.T @ (y - vc @ tilde)) / n
    omega = design.omega_hat
    var = np.einsum("ij,jk,ik->i", theta, omega, theta)
    se = sigma_hat * np.sqrt(np.clip(var, 0.0, None) / n)
    return DebiasedEstimate(hat, tilde, se, sigma_hat, omega, "debiased_lasso",
                            lam_star, sigma, n)
