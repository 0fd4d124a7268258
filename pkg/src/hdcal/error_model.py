"""Multiplicative lognormal measurement error: simulation and moment estimators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._errors import InsufficientReplicates, InvalidInput
from .composition import CountMatrix, _as_array, _check_positive


@dataclass(frozen=True)
class ErrorModelParams:
    """sigma_u_sq with the latent log-normal parameters of the true counts."""

    sigma_u_sq: float
    mu_x: np.ndarray
    sigma_x: np.ndarray

    def __post_init__(self):
        if self.sigma_u_sq < 0:
            raise InvalidInput(f"sigma_u_sq must be >= 0, got {self.sigma_u_sq}")
        mu = np.array(self.mu_x, dtype=float)
        sx = np.array(self.sigma_x, dtype=float)
        if sx.shape != (mu.size, mu.size):
            raise InvalidInput(f"sigma_x shape {sx.shape} does not match mu_x length {mu.size}")
        if not np.allclose(sx, sx.T, atol=1e-10, rtol=0):
            raise InvalidInput("sigma_x is not symmetric")
        mu.setflags(write=False)
        sx.setflags(write=False)
        object.__setattr__(self, "mu_x", mu)
        object.__setattr__(self, "sigma_x", sx)

    @property
    def mu_w(self) -> np.ndarray:
        return self.mu_x - 0.5 * self.sigma_u_sq

    @property
    def sigma_w(self) -> np.ndarray:
        return self.sigma_x + self.sigma_u_sq * np.eye(self.mu_x.size)


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator from an int seed or a tuple of ints (seed, stream, ...)."""
    if isinstance(seed, np.random.Generator):
        return seed
    entropy = list(seed) if isinstance(seed, (tuple, list)) else int(seed)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def simulate_contamination(truth, sigma_u_sq: float, rng_seed) -> CountMatrix:
    """Multiply each entry by an independent lognormal factor with mean one.

    The log factor is N(-sigma_u_sq / 2, sigma_u_sq). ``rng_seed`` may be an
    int, a tuple of ints, or a ``numpy.random.Generator``.
    """
    if sigma_u_sq < 0:
        raise InvalidInput(f"sigma_u_sq must be >= 0, got {sigma_u_sq}")
    x = _as_array(truth)
    if sigma_u_sq == 0:
        return CountMatrix(x.copy())
    rng = make_rng(rng_seed)
    g = rng.normal(-0.5 * sigma_u_sq, np.sqrt(sigma_u_sq), size=x.shape)
    return CountMatrix(x * np.exp(g))


def estimate_sigma_u(replicates: Sequence) -> float:
    """Pooled within-cell variance of log counts across R >= 2 replicates.

    Solves the replicate estimating equation: the grand mean over all
    (subject, component) cells of the unbiased (divisor R-1) sample variance
    of ``log w_ij^(r)``.
    """
    reps = [_as_array(r) for r in replicates]
    if len(reps) < 2:
        raise InsufficientReplicates(f"need at least 2 replicates, got {len(reps)}")
    shape = reps[0].shape
    for k, r in enumerate(reps):
        if r.shape != shape:
            raise InvalidInput(f"replicate {k} has shape {r.shape}, expected {shape}")
        _check_positive(r, f"replicate {k}")
    logs = np.log(np.stack(reps))
    # shifting by the first replicate keeps identical replicates at exactly 0
    return float(np.var(logs - logs[0], axis=0, ddof=1).mean())


def estimate_mu_x(observed, sigma_u_sq: float) -> np.ndarray:
    """Column means of ``log W`` shifted up by ``sigma_u_sq / 2``."""
    w = _as_array(observed)
    _check_positive(w, "count")
    return np.log(w).mean(axis=0) + 0.5 * sigma_u_sq
