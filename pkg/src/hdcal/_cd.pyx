# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled coordinate-descent kernels on a Gram matrix.

Minimises ``0.5 a'Ga - c'a + lam * |a|_1`` by cyclic coordinate descent,
keeping the gradient residual ``r = c - G a`` up to date. Plain least squares
uses ``G = X'X/n`` and ``c = X'y/n``; the corrected-covariance comparator
passes its own surrogate ``G``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_lapack cimport dposv

cnp.import_array()


DEF POLISH_EVERY = 4
DEF MAX_STEPS = 60


cdef inline double _soft(double z, double t) nogil:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


cdef void _residual(const double[:, ::1] G, const double[::1] c,
                    const double[::1] a, double[::1] r) noexcept nogil:
    cdef Py_ssize_t q = c.shape[0], i, k
    cdef double s
    for i in range(q):
        r[i] = c[i]
    for k in range(q):
        if a[k] != 0.0:
            for i in range(q):
                r[i] -= G[k, i] * a[k]


cdef double _kkt(const double[::1] r, const double[::1] a, double lam) noexcept nogil:
    cdef Py_ssize_t q = r.shape[0], j
    cdef double worst = 0.0, v
    for j in range(q):
        # gradient of the smooth part is -r[j]
        if a[j] > 0.0:
            v = fabs(-r[j] + lam)
        elif a[j] < 0.0:
            v = fabs(-r[j] - lam)
        else:
            v = fabs(r[j]) - lam
        if v > worst:
            worst = v
    return worst


cdef int _polish(const double[:, ::1] G, const double[::1] c, double lam,
                 double[::1] a, double[::1] r, double tol) noexcept nogil:
    """Primal active-set steps started from the coordinate-descent iterate.

    On a working set ``A`` with signs ``s`` the problem is the quadratic
    ``0.5 a'Ga - c'a + lam s'a`` whose minimiser solves
    ``G_AA x = c_A - lam s_A``. Each step moves toward ``x`` until the first
    sign change (that coordinate leaves ``A``) or reaches ``x`` and admits the
    worst KKT violator. Every step lowers the objective. Returns 1 once the
    optimality conditions hold within ``tol``, else 0 with ``a`` and ``r``
    describing the last iterate.
    """
    cdef Py_ssize_t q = c.shape[0], j, k, i
    cdef int m, nrhs = 1, info = 0, ok = 0, hit, step_no, worst_j
    cdef char uplo = b'L'
    cdef double t, step, worst, v
    cdef int *idx = <int *> malloc(q * sizeof(int))
    cdef double *sgn = <double *> malloc(q * sizeof(double))
    cdef double *A = <double *> malloc(q * q * sizeof(double))
    cdef double *b = <double *> malloc(q * sizeof(double))
    for j in range(q):
        sgn[j] = 1.0 if a[j] > 0.0 else (-1.0 if a[j] < 0.0 else 0.0)
    for step_no in range(MAX_STEPS):
        m = 0
        for j in range(q):
            if sgn[j] != 0.0:
                idx[m] = j
                m += 1
        if m > 0:
            for k in range(m):
                b[k] = c[idx[k]] - lam * sgn[idx[k]]
                for i in range(m):
                    A[k * m + i] = G[idx[k], idx[i]]
            dposv(&uplo, &m, &nrhs, A, &m, b, &m, &info)
            if info != 0:
                break
            step = 1.0
            hit = -1
            for k in range(m):
                j = idx[k]
                if b[k] * sgn[j] <= 0.0:
                    t = a[j] / (a[j] - b[k]) if a[j] != b[k] else 0.0
                    if t < step:
                        step = t
                        hit = k
            for k in range(m):
                j = idx[k]
                a[j] = a[j] + step * (b[k] - a[j])
            if hit >= 0:
                a[idx[hit]] = 0.0
                sgn[idx[hit]] = 0.0
                continue
        _residual(G, c, a, r)
        worst = tol
        worst_j = -1
        for j in range(q):
            if sgn[j] == 0.0:
                v = fabs(r[j]) - lam
                if v > worst:
                    worst = v
                    worst_j = j
        if worst_j < 0:
            ok = _kkt(r, a, lam) <= tol
            break
        sgn[worst_j] = 1.0 if r[worst_j] > 0.0 else -1.0
    _residual(G, c, a, r)
    free(idx)
    free(sgn)
    free(A)
    free(b)
    return ok


cdef (long, int, double) _solve(const double[:, ::1] G, const double[::1] c, double lam,
                                double[::1] a, double[::1] r, double tol,
                                long max_iter) noexcept nogil:
    cdef Py_ssize_t q = c.shape[0], j, i
    cdef long it = 0
    cdef double old, new, delta, change, gjj
    cdef int converged = 0
    _residual(G, c, a, r)
    # a warm start usually carries the right support already
    if _polish(G, c, lam, a, r, tol):
        return 0, 1, _kkt(r, a, lam)
    while it < max_iter:
        it += 1
        change = 0.0
        for j in range(q):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = a[j]
            new = _soft(r[j] + gjj * old, lam) / gjj
            if new != old:
                delta = new - old
                a[j] = new
                for i in range(q):
                    r[i] -= G[j, i] * delta
                if fabs(delta) > change:
                    change = fabs(delta)
        if change < tol:
            _residual(G, c, a, r)
            if _kkt(r, a, lam) <= 10.0 * tol:
                converged = 1
                break
        if it % POLISH_EVERY == 0 and _polish(G, c, lam, a, r, tol):
            converged = 1
            break
    _residual(G, c, a, r)
    return it, converged, _kkt(r, a, lam)


def cd_gram(double[:, ::1] G, double[::1] c, double lam, double[::1] alpha,
            double tol=1e-7, long max_iter=100000):
    """Solve one penalised problem in place on ``alpha``.

    Returns ``(iterations, converged, kkt_violation)``.
    """
    cdef double[::1] r = np.empty(c.shape[0])
    cdef long it
    cdef int conv
    cdef double kkt
    with nogil:
        it, conv, kkt = _solve(G, c, lam, alpha, r, tol, max_iter)
    return it, bool(conv), kkt


def cd_gram_path(double[:, ::1] G, double[::1] c, double[::1] lambdas,
                 double tol=1e-7, long max_iter=100000, alpha0=None):
    """Warm-started solutions along a sequence of penalties.

    Returns ``(coefs, iterations, converged)`` with one row per penalty.
    """
    cdef Py_ssize_t q = c.shape[0], m = lambdas.shape[0], k, j
    out = np.zeros((m, q))
    iters = np.zeros(m, dtype=np.int64)
    conv = np.zeros(m, dtype=bool)
    cdef double[:, ::1] ov = out
    cdef long[::1] iv = iters
    cdef cnp.npy_bool[::1] cv = conv
    cdef double[::1] a = np.zeros(q) if alpha0 is None else np.array(alpha0, dtype=float)
    cdef double[::1] r = np.empty(q)
    cdef long it
    cdef int cc
    cdef double kkt
    with nogil:
        for k in range(m):
            it, cc, kkt = _solve(G, c, lambdas[k], a, r, tol, max_iter)
            iv[k] = it
            cv[k] = cc
            for j in range(q):
                ov[k, j] = a[j]
    return out, iters, conv
