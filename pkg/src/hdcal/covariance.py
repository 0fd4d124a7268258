"""Covariance estimators for the latent log-abundances and their log-ratio image."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._errors import DegenerateResidual, InvalidInput, SingularSystem

PSD_FLOOR = 1e-8
ERROR_STRUCTURES = ("shared", "independent")


@dataclass(frozen=True)
class CovarianceEstimate:
    matrix: np.ndarray
    method: str  # "nodewise", "shrinkage" or "oracle"
    psd_repaired: bool = False
    shrinkage_intensity: float | None = None


@dataclass(frozen=True)
class LogContrastNuisance:
    """Mean and covariance of the true log-ratios plus the error variance.

    ``error_structure`` picks the covariance assumed for the log-ratio errors
    ``log(u_j / u_ref)``. ``"shared"`` keeps the covariance ``s2 (I + 11')``
    induced by the common reference error; ``"independent"`` treats them as
    uncorrelated with variance ``2 s2``.
    """

    mu_ztilde: np.ndarray
    sigma_ztilde: np.ndarray
    sigma_u_sq: float
    mode: str = "oracle"
    error_structure: str = "shared"

    def __post_init__(self):
        mu = np.array(self.mu_ztilde, dtype=float)
        s = np.array(self.sigma_ztilde, dtype=float)
        if s.shape != (mu.size, mu.size):
            raise InvalidInput(f"sigma_ztilde shape {s.shape} does not match mu length {mu.size}")
        if np.abs(s - s.T).max(initial=0.0) > 1e-8 * max(1.0, np.abs(s).max(initial=0.0)):
            raise InvalidInput("sigma_ztilde is not symmetric")
        if self.sigma_u_sq < 0:
            raise InvalidInput("sigma_u_sq must be >= 0")
        if self.error_structure not in ERROR_STRUCTURES:
            raise InvalidInput(f"error_structure must be one of {ERROR_STRUCTURES}")
        s = (s + s.T) / 2
        mu.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "mu_ztilde", mu)
        object.__setattr__(self, "sigma_ztilde", s)

    def error_covariance(self) -> np.ndarray:
        q = self.mu_ztilde.size
        if self.error_structure == "independent":
            return 2.0 * self.sigma_u_sq * np.eye(q)
        return logcontrast_error_covariance(q, self.sigma_u_sq)


def logcontrast_error_covariance(q: int, sigma_u_sq: float) -> np.ndarray:
    """Covariance of the log-ratio errors ``log(u_j / u_ref)``.

    The shared denominator makes every pair covary by ``sigma_u_sq``;
    each variance is ``2 sigma_u_sq``.
    """
    return sigma_u_sq * (np.eye(q) + np.ones((q, q)))


def symmetrize(a: np.ndarray) -> np.ndarray:
    return (a + a.T) / 2


def psd_repair(m, floor: float = PSD_FLOOR) -> np.ndarray:
    """Clip eigenvalues below ``floor`` and reassemble.

    With ``floor = 0`` this is the Frobenius-nearest PSD matrix.
    """
    m = symmetrize(np.asarray(m, dtype=float))
    w, v = np.linalg.eigh(m)
    if w[0] >= floor:
        return m
    return symmetrize((v * np.maximum(w, floor)) @ v.T)


def contrast_matrix(p: int, reference_index: int | None = None) -> np.ndarray:
    """(p-1) x p matrix B with ``B @ log x`` equal to the log-ratios."""
    ref = p - 1 if reference_index is None else reference_index % p
    B = np.delete(np.eye(p), ref, axis=0)
    B[:, ref] = -1.0
    return B


def to_logcontrast_nuisance(mu_x, sigma_x, sigma_u_sq: float,
                            reference_index: int | None = None,
                            mode: str = "oracle",
                            error_structure: str = "shared") -> LogContrastNuisance:
    """Push (mu_x, Sigma_x) through the log-ratio map against ``reference_index``."""
    mu_x = np.asarray(mu_x, dtype=float)
    sigma_x = np.asarray(sigma_x, dtype=float)
    p = mu_x.size
    if sigma_x.shape != (p, p):
        raise InvalidInput(f"sigma_x shape {sigma_x.shape} does not match mu_x length {p}")
    ref = p - 1 if reference_index is None else reference_index % p
    keep = np.delete(np.arange(p), ref)
    mu = mu_x[keep] - mu_x[ref]
    s = (sigma_x[np.ix_(keep, keep)] - sigma_x[keep, ref][:, None]
         - sigma_x[ref, keep][None, :] + sigma_x[ref, ref])
    return LogContrastNuisance(mu, symmetrize(s), float(sigma_u_sq), mode, error_structure)


def sample_covariance(x, ddof: int = 1) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    xc = x - x.mean(axis=0)
    return xc.T @ xc / (x.shape[0] - ddof)


def shrinkage_intensity(x) -> tuple[float, np.ndarray, np.ndarray]:
    """Schafer-Strimmer correlation shrinkage toward the identity.

    Returns ``(lambda_star, correlation, std)`` for the unbiased sample
    moments of ``x``. Constant columns get zero variance and no correlation.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    sd = np.sqrt((xc ** 2).sum(axis=0) / (n - 1))
    ok = sd > 0
    xs = np.zeros_like(xc)
    xs[:, ok] = xc[:, ok] / sd[ok]
    r = xs.T @ xs / (n - 1)
    # empirical variance of each r_ij from the products w_kij = xs_ki xs_kj
    s2 = (xs ** 2).T @ (xs ** 2)
    var_r = n / (n - 1) ** 3 * (s2 - (n - 1) ** 2 / n * r ** 2)
    off = ~np.eye(x.shape[1], dtype=bool)
    denom = (r[off] ** 2).sum()
    lam = 1.0 if denom == 0 else float(np.clip(var_r[off].sum() / denom, 0.0, 1.0))
    return lam, r, sd


def shrinkage_covariance(logW, sigma_u_sq: float) -> CovarianceEstimate:
    """Shrunken covariance of ``log W`` with ``sigma_u_sq I`` removed.

    Off-diagonal correlations are pulled toward zero by the analytic
    intensity; variances stay at their sample values.
    """
    x = np.asarray(logW, dtype=float)
    if x.shape[0] < 3:
        raise InvalidInput("shrinkage covariance needs at least 3 rows")
    lam, r, sd = shrinkage_intensity(x)
    r_sh = (1.0 - lam) * r
    np.fill_diagonal(r_sh, 1.0)
    cov = r_sh * np.outer(sd, sd) - sigma_u_sq * np.eye(x.shape[1])
    return CovarianceEstimate(symmetrize(cov), "shrinkage", False, lam)


def default_nodewise_lambda(x) -> np.ndarray:
    """Per-column penalty ``sqrt(2 log p / n) * sd_j``."""
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    return np.sqrt(2 * np.log(p) / n) * x.std(axis=0)


def nodewise_regressions(x, lambda_tilde=None) -> tuple[np.ndarray, np.ndarray]:
    """Lasso-regress every column of ``x`` on the others.

    Returns ``(C, tau2)``: ``C`` has unit diagonal and ``-gamma_j`` off the
    diagonal of row ``j``; ``tau2[j]`` is ``G_jj - G_j,-j gamma_j`` with ``G``
    the Gram matrix of the centered columns over ``n``.
    """
    from .lasso import solve_gram

    x = np.asarray(x, dtype=float)
    n, p = x.shape
    xc = x - x.mean(axis=0)
    flat = np.flatnonzero(~np.any(xc, axis=0))
    if flat.size:
        raise DegenerateResidual(int(flat[0]), 0.0)
    lam = default_nodewise_lambda(xc) if lambda_tilde is None else np.broadcast_to(
        np.asarray(lambda_tilde, dtype=float), (p,))
    if np.any(lam <= 0):
        raise InvalidInput("node-wise penalty must be positive")
    G_full = xc.T @ xc / n
    C = np.eye(p)
    tau2 = np.empty(p)
    for j in range(p):
        rest = np.delete(np.arange(p), j)
        G = np.ascontiguousarray(G_full[np.ix_(rest, rest)])
        c = np.ascontiguousarray(G_full[rest, j])
        gamma, _, _, _ = solve_gram(G, c, lam[j])
        C[j, rest] = -gamma
        # (1/n)(x_j - X_-j gamma)' x_j
        tau2[j] = G_full[j, j] - c @ gamma
        if not tau2[j] > 0:
            raise DegenerateResidual(j, tau2[j])
    return C, tau2


def nodewise_covariance(logW, sigma_u_sq: float, lambda_tilde=None) -> CovarianceEstimate:
    """Covariance from Lasso regressions of each column on all the others.

    Columns are centered first. ``lambda_tilde`` may be a scalar or one value
    per column; by default each column gets ``sqrt(2 log p / n)`` times its
    standard deviation. The assembled ``C^-1 T^2`` is symmetrized.
    """
    C, tau2 = nodewise_regressions(logW, lambda_tilde)
    p = C.shape[0]
    try:
        cov = np.linalg.solve(C, np.diag(tau2))
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("node-wise coefficient matrix is singular") from exc
    if not np.all(np.isfinite(cov)):
        raise SingularSystem("node-wise coefficient matrix is singular")
    cov = symmetrize(cov) - sigma_u_sq * np.eye(p)
    return CovarianceEstimate(cov, "nodewise", False)


def repaired(est: CovarianceEstimate, floor: float = PSD_FLOOR) -> CovarianceEstimate:
    """Return ``est`` with its matrix projected onto the PSD cone."""
    return CovarianceEstimate(psd_repair(est.matrix, floor), est.method, True,
                              est.shrinkage_intensity)
