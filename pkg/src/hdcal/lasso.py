"""Penalised least squares: Lasso, cross-validated penalty, scaled Lasso, CoCoLasso.

Every solver works on the Gram form ``0.5 a'Ga - c'a + lam |a|_1`` and hands
the inner loop to the coordinate-descent kernel chosen in ``_kernels``.
No intercepts anywhere; callers center their data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._errors import InvalidInput, NotConverged
from ._kernels import cd_gram, cd_gram_path
from .covariance import logcontrast_error_covariance, psd_repair
from .error_model import make_rng

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 100_000


@dataclass(frozen=True)
class LassoProblem:
    design: np.ndarray
    response: np.ndarray
    lam: float

    def __post_init__(self):
        x = np.asarray(self.design, dtype=float)
        y = np.asarray(self.response, dtype=float)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise InvalidInput(f"design {x.shape} and response {y.shape} do not conform")
        if not self.lam > 0:
            raise InvalidInput(f"lambda must be positive, got {self.lam}")
        object.__setattr__(self, "design", x)
        object.__setattr__(self, "response", y)


@dataclass(frozen=True)
class LassoSolution:
    coefficients: np.ndarray
    objective: float
    iterations: int
    converged: bool
    kkt_violation: float
    lam: float = float("nan")


@dataclass(frozen=True)
class ScaledLassoSolution:
    coefficients: np.ndarray
    sigma_hat: float
    lambda_tilde: float
    outer_iterations: int = 0


@dataclass(frozen=True)
class CvConfig:
    """K-fold settings. An empty ``lambda_grid`` means "build the default grid"."""

    folds: int = 5
    lambda_grid: tuple = ()
    seed: int = 0
    n_lambda: int = 50
    lambda_min_ratio: float = 1e-3

    def __post_init__(self):
        if self.folds < 2:
            raise InvalidInput(f"need at least 2 folds, got {self.folds}")
        grid = tuple(float(v) for v in self.lambda_grid)
        if any(b > a for a, b in zip(grid, grid[1:])):
            raise InvalidInput("lambda grid must be in descending order")
        if any(v <= 0 for v in grid):
            raise InvalidInput("lambda grid entries must be positive")
        object.__setattr__(self, "lambda_grid", grid)


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def gram(design, response):
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    n = x.shape[0]
    return np.ascontiguousarray(x.T @ x / n), np.ascontiguousarray(x.T @ y / n)


def kkt_violation(G, c, coef, lam) -> float:
    """Largest breach of the Lasso optimality conditions in Gram form."""
    g = G @ coef - c
    v = np.where(coef != 0, np.abs(g + lam * np.sign(coef)), np.abs(g) - lam)
    return float(max(v.max(initial=0.0), 0.0))


def lambda_max(design, response) -> float:
    """Smallest penalty at which the all-zero vector is optimal."""
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    return float(np.max(np.abs(x.T @ y)) / x.shape[0])


def default_lambda_grid(lmax: float, n_lambda: int = 50, ratio: float = 1e-3) -> np.ndarray:
    if lmax <= 0:
        lmax = 1.0
    return np.geomspace(lmax, lmax * ratio, n_lambda)


def solve_gram(G, c, lam, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, alpha0=None):
    """Run the kernel on ``(G, c)``; returns ``(coef, iterations, converged, kkt)``."""
    a = np.zeros(len(c)) if alpha0 is None else np.array(alpha0, dtype=float)
    it, conv, kkt = cd_gram(np.ascontiguousarray(G, dtype=float),
                            np.ascontiguousarray(c, dtype=float), float(lam), a, tol, max_iter)
    return a, int(it), bool(conv), float(kkt)


def lasso_fit(problem: LassoProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
              alpha0=None) -> LassoSolution:
    """Cyclic coordinate descent for ``(1/2n)|y - Xa|^2 + lam |a|_1``.

    Hitting ``max_iter`` is reported through ``converged=False``, not raised.
    """
    if tol <= 0:
        raise InvalidInput("tol must be positive")
    G, c = gram(problem.design, problem.response)
    a, it, conv, kkt = solve_gram(G, c, problem.lam, tol, max_iter, alpha0)
    resid = problem.response - problem.design @ a
    obj = 0.5 * resid @ resid / len(resid) + problem.lam * np.abs(a).sum()
    return LassoSolution(a, float(obj), it, conv, kkt, float(problem.lam))


def lasso_path(design, response, lambdas, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    G, c = gram(design, response)
    coefs, _, _ = cd_gram_path(G, c, np.ascontiguousarray(lambdas, dtype=float), tol, max_iter)
    return coefs


def fold_ids(n: int, folds: int, seed) -> np.ndarray:
    """Balanced fold labels in a seed-determined random order."""
    if n < folds:
        raise InvalidInput(f"n={n} is smaller than the number of folds {folds}")
    perm = make_rng(seed).permutation(n)
    ids = np.empty(n, dtype=int)
    ids[perm] = np.arange(n) % folds
    return ids


def _pick(grid, curve):
    # np.argmin keeps the first minimiser, i.e. the largest penalty on ties
    return float(grid[int(np.argmin(curve))])


def cross_validate_lambda(design, response, cfg: CvConfig = CvConfig(), tol=DEFAULT_TOL):
    """K-fold mean held-out squared error over a descending penalty grid.

    Training folds are re-centered and the held-out fold is centered with the
    training means. Returns ``(lambda_star, cv_curve)``.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    grid = np.array(cfg.lambda_grid) if cfg.lambda_grid else default_lambda_grid(
        lambda_max(x - x.mean(0), y - y.mean()), cfg.n_lambda, cfg.lambda_min_ratio)
    if len(grid) == 1:
        return float(grid[0]), [float("nan")]
    ids = fold_ids(len(y), cfg.folds, cfg.seed)
    sse = np.zeros(len(grid))
    for k in range(cfg.folds):
        tr, te = ids != k, ids == k
        mx, my = x[tr].mean(0), y[tr].mean()
        coefs = lasso_path(x[tr] - mx, y[tr] - my, grid, tol)
        pred = (x[te] - mx) @ coefs.T
        sse += (((y[te] - my)[:, None] - pred) ** 2).sum(axis=0)
    curve = sse / len(y)
    return _pick(grid, curve), curve.tolist()


def scaled_lasso(design, response, lambda_tilde: float, tol: float = 1e-8,
                 max_outer: int = 500) -> ScaledLassoSolution:
    """Joint estimate of coefficients and noise level.

    Alternates a Lasso at penalty ``sigma * lambda_tilde`` with
    ``sigma^2 = |y - Xa|^2 / n`` until sigma moves by less than ``tol``.
    """
    if not lambda_tilde > 0:
        raise InvalidInput("lambda_tilde must be positive")
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    n = len(y)
    G, c = gram(x, y)
    a = np.zeros(x.shape[1])
    sigma = np.sqrt(y @ y / n)
    if sigma == 0:
        raise InvalidInput("response is identically zero; noise level undefined")
    for it in range(1, max_outer + 1):
        a, _, _, _ = solve_gram(G, c, sigma * lambda_tilde, tol=min(DEFAULT_TOL, tol * 10),
                                alpha0=a)
        r = y - x @ a
        new = np.sqrt(r @ r / n)
        if abs(new - sigma) < tol:
            return ScaledLassoSolution(a, float(new), float(lambda_tilde), it)
        sigma = new
        if sigma == 0:
            raise NotConverged("scaled Lasso drove the residual to zero")
    raise NotConverged(f"scaled Lasso did not settle within {max_outer} outer iterations")


def _coco_moments(v, y, sigma_u_sq, floor):
    n, q = v.shape
    vc = v - v.mean(0)
    yc = y - y.mean()
    cov = vc.T @ vc / n - logcontrast_error_covariance(q, sigma_u_sq)
    G = psd_repair(cov, floor) if sigma_u_sq > 0 else vc.T @ vc / n
    return np.ascontiguousarray(G), vc.T @ yc / n


def cocolasso_fit(v_logcontrasts, response, sigma_u_sq: float, lambda_star: float,
                  tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                  floor: float = 0.0) -> LassoSolution:
    """Lasso on the error-corrected, PSD-projected covariance of the log-ratios."""
    if not lambda_star > 0:
        raise InvalidInput("lambda_star must be positive")
    v = np.asarray(getattr(v_logcontrasts, "values", v_logcontrasts), dtype=float)
    y = np.asarray(getattr(response, "values", response), dtype=float)
    G, c = _coco_moments(v, y, sigma_u_sq, floor)
    a, it, conv, kkt = solve_gram(G, c, lambda_star, tol, max_iter)
    obj = 0.5 * a @ G @ a - c @ a + lambda_star * np.abs(a).sum()
    return LassoSolution(a, float(obj), it, conv, kkt, float(lambda_star))


def _truncated_path(G, c, grid, tol, max_iter):
    """Warm-started path that stops at the first penalty failing to converge.

    A projected covariance is only semi-definite, so below some penalty the
    surrogate objective can be unbounded and coordinate descent runs away.
    """
    G = np.ascontiguousarray(G)
    c = np.ascontiguousarray(c)
    coefs = np.zeros((len(grid), len(c)))
    ok = np.zeros(len(grid), dtype=bool)
    a = np.zeros(len(c))
    for k, lam in enumerate(grid):
        a, _, conv, _ = solve_gram(G, c, lam, tol, max_iter, a)
        if not conv:
            break
        coefs[k] = a
        ok[k] = True
    return coefs, ok


def cocolasso_cv(v_logcontrasts, response, sigma_u_sq: float, cfg: CvConfig = CvConfig(),
                 tol=DEFAULT_TOL, floor: float = 0.0, path_max_iter: int = 300):
    """K-fold choice of the CoCoLasso penalty using the corrected held-out loss.

    The held-out loss is ``a'G_te a - 2 c_te'a`` with ``G_te`` the corrected,
    projected covariance of the held-out fold. Penalties at which a training
    path stops converging within ``path_max_iter`` sweeps score ``inf``.
    """
    v = np.asarray(getattr(v_logcontrasts, "values", v_logcontrasts), dtype=float)
    y = np.asarray(getattr(response, "values", response), dtype=float)
    _, c_full = _coco_moments(v, y, sigma_u_sq, floor)
    grid = np.array(cfg.lambda_grid) if cfg.lambda_grid else default_lambda_grid(
        float(np.abs(c_full).max()), cfg.n_lambda, cfg.lambda_min_ratio)
    if len(grid) == 1:
        return float(grid[0]), [float("nan")]
    ids = fold_ids(len(y), cfg.folds, cfg.seed)
    loss = np.zeros(len(grid))
    for k in range(cfg.folds):
        tr, te = ids != k, ids == k
        G_tr, c_tr = _coco_moments(v[tr], y[tr], sigma_u_sq, floor)
        G_te, c_te = _coco_moments(v[te], y[te], sigma_u_sq, floor)
        coefs, ok = _truncated_path(G_tr, c_tr, grid, tol, path_max_iter)
        fold_loss = np.einsum("kq,qr,kr->k", coefs, G_te, coefs) - 2 * coefs @ c_te
        loss += te.sum() * np.where(ok, fold_loss, np.inf)
    curve = loss / len(y)
    return _pick(grid, curve), curve.tolist()
