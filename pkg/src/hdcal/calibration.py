"""Regression-calibration design: conditional means of the true log-ratios."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ._errors import SingularSystem
from .covariance import PSD_FLOOR, LogContrastNuisance, psd_repair, symmetrize

_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


def robust_cho_factor(a: np.ndarray):
    """Cholesky factor with diagonal jitter escalating from 1e-10 to 1e-6."""
    a = symmetrize(np.asarray(a, dtype=float))
    scale = max(1.0, float(np.abs(np.diag(a)).max(initial=0.0)))
    eye = np.eye(a.shape[0])
    for jit in _JITTERS:
        try:
            return cho_factor(a + jit * scale * eye, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError):
            continue
    raise SingularSystem("matrix is not positive definite even after jitter")


def spd_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return cho_solve(robust_cho_factor(a), b)


@dataclass(frozen=True)
class CalibratedDesign:
    """Calibrated design ``M(V)`` with the population covariance of its rows."""

    m_matrix: np.ndarray
    sigma: np.ndarray
    nuisance: LogContrastNuisance
    centered: bool = True

    @property
    def n(self) -> int:
        return self.m_matrix.shape[0]

    @property
    def omega_hat(self) -> np.ndarray:
        """Empirical second-moment matrix ``M'M / n``."""
        m = self.m_matrix
        return m.T @ m / m.shape[0]


def _shrinker(nuisance: LogContrastNuisance):
    s = nuisance.sigma_ztilde
    return s, robust_cho_factor(s + nuisance.error_covariance())


def conditional_mean(v_logcontrast, nuisance: LogContrastNuisance) -> np.ndarray:
    """``mu + S (S + E)^-1 (v - mu)`` for one row or a stack of rows.

    ``E`` is ``nuisance.error_covariance()``: ``2 s2 I`` for independent
    log-ratio errors, ``s2 (I + 11')`` when they share the reference error.
    """
    v = np.asarray(getattr(v_logcontrast, "values", v_logcontrast), dtype=float)
    if nuisance.sigma_u_sq == 0:
        return v.copy()
    s, fac = _shrinker(nuisance)
    mu = nuisance.mu_ztilde
    d = (v - mu).T
    # S (S + E)^-1 d, using symmetry of both factors
    return mu + (s @ cho_solve(fac, d)).T


def calibrated_covariance(nuisance: LogContrastNuisance) -> np.ndarray:
    """Covariance of the conditional mean: ``S (S + E)^-1 S``."""
    s = nuisance.sigma_ztilde
    if nuisance.sigma_u_sq == 0:
        return s.copy()
    s, fac = _shrinker(nuisance)
    return symmetrize(s @ cho_solve(fac, s))


def build_design(v_logcontrasts, nuisance: LogContrastNuisance, center: bool = True,
                 floor: float = PSD_FLOOR) -> CalibratedDesign:
    """Calibrate every row of the observed log-ratios and center the columns.

    With estimated nuisances the covariance of the calibrated rows can be
    numerically singular, so it is eigenvalue-clipped at ``floor``.
    """
    m = conditional_mean(v_logcontrasts, nuisance)
    if m.ndim == 1:
        m = m[None, :]
    if center:
        m = m - m.mean(axis=0)
    m.setflags(write=False)
    sigma = calibrated_covariance(nuisance)
    if nuisance.mode != "oracle":
        sigma = psd_repair(sigma, floor)
    sigma.setflags(write=False)
    return CalibratedDesign(m, sigma, nuisance, center)
