"""Containers and transforms for counts, compositions and log-ratio designs.

All containers are frozen dataclasses holding read-only numpy arrays, so they
can be shared freely between threads and processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._errors import InvalidInput

SUM_TOL = 1e-12
MEAN_TOL = 1e-10


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_positive(values: np.ndarray, what: str) -> None:
    bad = np.argwhere(~(values > 0))
    if bad.size:
        i, j = bad[0]
        raise InvalidInput(
            f"{what} entry at row {i}, column {j} is {values[i, j]!r}; "
            "all entries must be strictly positive (impute zeros first)"
        )


@dataclass(frozen=True)
class CountMatrix:
    """Strictly positive n x p abundances (true ``X`` or contaminated ``W``)."""

    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 2:
            raise InvalidInput(f"count matrix must be 2-d, got shape {v.shape}")
        if v.shape[0] < 2 or v.shape[1] < 2:
            raise InvalidInput(f"need n >= 2 and p >= 2, got shape {v.shape}")
        _check_positive(v, "count")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CompositionMatrix:
    """Row-closed compositions: positive rows summing to one."""

    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 2:
            raise InvalidInput(f"composition matrix must be 2-d, got shape {v.shape}")
        _check_positive(v, "composition")
        dev = np.abs(v.sum(axis=1) - 1.0)
        if dev.size and dev.max() > SUM_TOL:
            i = int(dev.argmax())
            raise InvalidInput(f"row {i} sums to {v[i].sum()!r}, not 1")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LogContrastMatrix:
    """n x (p-1) additive log-ratios against one reference component.

    ``reference_index`` is zero-based here; the CLI translates names and
    one-based indices.
    """

    values: np.ndarray
    reference_index: int
    centered: bool = False

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 2:
            raise InvalidInput(f"log-contrast matrix must be 2-d, got shape {v.shape}")
        if self.centered and np.abs(v.mean(axis=0)).max(initial=0.0) > MEAN_TOL:
            raise InvalidInput("matrix flagged centered but column means are not zero")
        object.__setattr__(self, "values", v)

    @property
    def p(self) -> int:
        return self.values.shape[1] + 1


@dataclass(frozen=True)
class ResponseVector:
    values: np.ndarray
    centered: bool = False

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 1:
            raise InvalidInput(f"response must be 1-d, got shape {v.shape}")
        if self.centered and v.size and abs(v.mean()) > MEAN_TOL:
            raise InvalidInput("response flagged centered but its mean is not zero")
        object.__setattr__(self, "values", v)


def _as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=float)


def close(counts) -> CompositionMatrix:
    """Normalise each row of a positive count matrix to sum to one."""
    w = _as_array(counts)
    if w.ndim == 1:
        w = w[None, :]
    _check_positive(w, "count")
    z = w / w.sum(axis=1, keepdims=True)
    # a second pass removes the last ulp of drift in the row sums
    z = z / z.sum(axis=1, keepdims=True)
    return CompositionMatrix(z)


def _resolve_reference(reference_index, p: int) -> int:
    if reference_index is None:
        return p - 1
    if isinstance(reference_index, bool) or int(reference_index) != reference_index:
        raise InvalidInput(f"reference index must be an integer, got {reference_index!r}")
    r = int(reference_index)
    if r < 0:
        r += p
    if not 0 <= r < p:
        raise InvalidInput(f"reference index {reference_index} out of range for p={p}")
    return r


def log_ratios(values: np.ndarray, reference_index: int | None = None) -> np.ndarray:
    """Raw array version of :func:`log_contrast`; accepts counts or compositions."""
    v = np.asarray(values, dtype=float)
    ref = _resolve_reference(reference_index, v.shape[1])
    logv = np.log(v)
    return np.delete(logv, ref, axis=1) - logv[:, [ref]]


def log_contrast(comp, reference_index: int | None = None) -> LogContrastMatrix:
    """Log-ratios ``log(z_ij / z_i,ref)`` for every non-reference column.

    ``reference_index`` defaults to the last column. Because the transform is
    scale free, raw counts give the same result as their closure.
    """
    v = _as_array(comp)
    if v.ndim == 1:
        v = v[None, :]
    ref = _resolve_reference(reference_index, v.shape[1])
    _check_positive(v, "composition")
    return LogContrastMatrix(log_ratios(v, ref), reference_index=ref)


def inverse_log_contrast(design: LogContrastMatrix) -> CompositionMatrix:
    """Map uncentered log-ratios back to the composition they came from."""
    ref = design.reference_index
    expo = np.exp(design.values)
    full = np.insert(expo, ref, 1.0, axis=1)
    return close(full)


def center(design, response=None):
    """Column-center a design (and optionally a response).

    Returns ``(LogContrastMatrix, ResponseVector)`` when a response is given,
    otherwise just the centered design.
    """
    if isinstance(design, LogContrastMatrix):
        x = design.values
        ref = design.reference_index
    else:
        x = np.asarray(design, dtype=float)
        ref = x.shape[1]
    xc = x - x.mean(axis=0)
    out = LogContrastMatrix(xc, reference_index=ref, centered=True)
    if response is None:
        return out
    y = _as_array(response)
    return out, ResponseVector(y - y.mean(), centered=True)
