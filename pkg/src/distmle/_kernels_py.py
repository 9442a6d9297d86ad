"""Reference (pure Python / numpy) implementations of the hot kernels.

``_kernels.pyx`` mirrors these routines line for line; the two are
selected between in :mod:`distmle.kernels`.
"""

import math

import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)
_TWO_PI = 2.0 * math.pi


def _ell(c, s, m1, m2, a, b):
    ac = a * c
    bs = b * s
    return ac * m1 + bs * m2 - 0.5 * (ac * ac + bs * bs)


def _polish(x0, h, m1, m2, a, b, max_iter):
    """Safeguarded Newton on the score, started from grid point ``x0``."""
    k = b * b - a * a

    def d1(x):
        c = math.cos(x)
        s = math.sin(x)
        return -a * s * m1 + b * c * m2 - k * s * c

    lo = x0 - h
    hi = x0 + h
    bracketed = d1(lo) >= 0.0 and d1(hi) <= 0.0
    x = x0
    for _ in range(max_iter):
        c = math.cos(x)
        s = math.sin(x)
        g = -a * s * m1 + b * c * m2 - k * s * c
        if g == 0.0:
            break
        if bracketed:
            if g > 0.0:
                lo = x
            else:
                hi = x
        H = -a * c * m1 - b * s * m2 - k * (c * c - s * s)
        xn = x - g / H if H < 0.0 else math.nan
        if bracketed:
            if not (lo < xn < hi):
                xn = 0.5 * (lo + hi)
        elif xn != xn or abs(xn - x0) > h:
            break
        if xn == x:
            break
        dx = abs(xn - x)
        x = xn
        if dx <= 1e-15 * (1.0 + abs(x)):
            break
        if bracketed and hi - lo <= 4e-16 * (1.0 + abs(x)):
            break
    f0 = _ell(math.cos(x0), math.sin(x0), m1, m2, a, b)
    fx = _ell(math.cos(x), math.sin(x), m1, m2, a, b)
    if not fx >= f0 - 1e-12 * (1.0 + abs(f0)):
        x, fx = x0, f0
    if x <= -math.pi:
        x += _TWO_PI
    elif x > math.pi:
        x -= _TWO_PI
    return x, fx


def ellipse_argmax(mu, a, b, grid_cos, grid_sin, grid_theta, max_iter=100):
    """Maximise ``eta(t).mu - |eta(t)|^2 / 2`` over t for each row of ``mu``.

    ``eta(t) = (a cos t, b sin t)``. Each row is searched on the supplied
    grid (first maximiser wins ties) and polished by bracketed Newton.
    Returns ``(theta, value)`` arrays.
    """
    mu = np.ascontiguousarray(mu, dtype=float)
    r = mu.shape[0]
    G = grid_theta.shape[0]
    h = _TWO_PI / G
    ac = a * grid_cos
    bs = b * grid_sin
    quad = 0.5 * (ac * ac + bs * bs)
    vals = mu[:, 0:1] * ac + mu[:, 1:2] * bs - quad
    best = np.argmax(vals, axis=1)
    theta = np.empty(r)
    value = np.empty(r)
    for i in range(r):
        theta[i], value[i] = _polish(
            float(grid_theta[best[i]]), h, float(mu[i, 0]), float(mu[i, 1]), a, b, max_iter
        )
    return theta, value


def mixture_log_density(X, means, chols, log_weights):
    """``out[i, k] = log w_k + log N(x_i; mean_k, L_k L_k^T)`` for lower ``L_k``."""
    X = np.ascontiguousarray(X, dtype=float)
    n, p = X.shape
    K = means.shape[0]
    out = np.empty((n, K))
    for k in range(K):
        L = chols[k]
        diff = X - means[k]
        # forward substitution, row by row of L
        z = np.empty_like(diff)
        for j in range(p):
            acc = diff[:, j].copy()
            for t in range(j):
                acc -= L[j, t] * z[:, t]
            z[:, j] = acc / L[j, j]
        half_logdet = float(np.sum(np.log(np.diag(L))))
        out[:, k] = log_weights[k] - 0.5 * np.sum(z * z, axis=1) - half_logdet - 0.5 * p * _LOG_2PI
    return out


def logsumexp_rows(M):
    """Row-wise log-sum-exp with a max shift; all ``-inf`` rows give ``-inf``."""
    M = np.asarray(M, dtype=float)
    mx = np.max(M, axis=1)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.sum(np.exp(M - safe[:, None]), axis=1))
