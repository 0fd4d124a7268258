"""Pure numpy fallback for the coordinate-descent kernels in ``_cd.pyx``.

Same algorithm, same arguments, same return values; roughly two orders of
magnitude slower on p ~ 300 problems.
"""

import numpy as np


def _kkt(r, a, lam):
    v = np.where(a > 0, np.abs(-r + lam), np.where(a < 0, np.abs(-r - lam), np.abs(r) - lam))
    return float(v.max(initial=0.0))


POLISH_EVERY = 4
MAX_STEPS = 60


def _polish(G, c, lam, a, tol):
    """Primal active-set steps; see ``_polish`` in ``_cd.pyx`` for the contract."""
    sgn = np.sign(a)
    for _ in range(MAX_STEPS):
        act = np.flatnonzero(sgn)
        if act.size:
            try:
                L = np.linalg.cholesky(G[np.ix_(act, act)])
            except np.linalg.LinAlgError:
                break
            x = np.linalg.solve(L.T, np.linalg.solve(L, c[act] - lam * sgn[act]))
            cross = np.flatnonzero(x * sgn[act] <= 0)
            step, hit = 1.0, -1
            for k in cross:
                j = act[k]
                t = a[j] / (a[j] - x[k]) if a[j] != x[k] else 0.0
                if t < step:
                    step, hit = t, k
            a[act] += step * (x - a[act])
            if hit >= 0:
                a[act[hit]] = 0.0
                sgn[act[hit]] = 0.0
                continue
        r = c - G @ a
        viol = np.where(sgn == 0, np.abs(r) - lam, -np.inf)
        j = int(np.argmax(viol))
        if viol[j] <= tol:
            return _kkt(r, a, lam) <= tol
        sgn[j] = 1.0 if r[j] > 0 else -1.0
    return False


def _solve(G, c, lam, a, tol, max_iter):
    q = c.shape[0]
    diag = np.diag(G).copy()
    if a.any() and _polish(G, c, lam, a, tol):
        return 0, True, _kkt(c - G @ a, a, lam)
    r = c - G @ a
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        change = 0.0
        for j in range(q):
            gjj = diag[j]
            if gjj <= 0.0:
                continue
            old = a[j]
            z = r[j] + gjj * old
            new = (z - lam if z > lam else z + lam if z < -lam else 0.0) / gjj
            if new != old:
                delta = new - old
                a[j] = new
                r -= G[j] * delta
                change = max(change, abs(delta))
        if change < tol:
            r = c - G @ a
            if _kkt(r, a, lam) <= 10.0 * tol:
                converged = True
                break
        if it % POLISH_EVERY == 0:
            if _polish(G, c, lam, a, tol):
                converged = True
                break
            r = c - G @ a
    r = c - G @ a
    return it, converged, _kkt(r, a, lam)


def cd_gram(G, c, lam, alpha, tol=1e-7, max_iter=100000):
    return _solve(np.asarray(G), np.asarray(c), float(lam), alpha, tol, max_iter)


def cd_gram_path(G, c, lambdas, tol=1e-7, max_iter=100000, alpha0=None):
    G = np.asarray(G)
    c = np.asarray(c)
    q = c.shape[0]
    a = np.zeros(q) if alpha0 is None else np.array(alpha0, dtype=float)
    out = np.zeros((len(lambdas), q))
    iters = np.zeros(len(lambdas), dtype=np.int64)
    conv = np.zeros(len(lambdas), dtype=bool)
    for k, lam in enumerate(lambdas):
        iters[k], conv[k], _ = _solve(G, c, float(lam), a, tol, max_iter)
        out[k] = a
    return out, iters, conv
