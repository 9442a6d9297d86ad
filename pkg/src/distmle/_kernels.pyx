# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the routines in ``_kernels_py.py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, log, exp, fabs, sqrt, M_PI, NAN, INFINITY

cnp.import_array()

cdef double _LOG_2PI = log(2.0 * M_PI)
cdef double _TWO_PI = 2.0 * M_PI


cdef inline double _ell(double c, double s, double m1, double m2, double a, double b) nogil:
    cdef double ac = a * c
    cdef double bs = b * s
    return ac * m1 + bs * m2 - 0.5 * (ac * ac + bs * bs)


cdef inline double _d1(double x, double m1, double m2, double a, double b, double k) nogil:
    cdef double c = cos(x)
    cdef double s = sin(x)
    return -a * s * m1 + b * c * m2 - k * s * c


cdef void _polish(double x0, double h, double m1, double m2, double a, double b,
                  int max_iter, double* out_x, double* out_f) nogil:
    cdef double k = b * b - a * a
    cdef double lo = x0 - h
    cdef double hi = x0 + h
    cdef bint bracketed = _d1(lo, m1, m2, a, b, k) >= 0.0 and _d1(hi, m1, m2, a, b, k) <= 0.0
    cdef double x = x0
    cdef double c, s, g, H, xn, dx, f0, fx
    cdef int it
    for it in range(max_iter):
        c = cos(x)
        s = sin(x)
        g = -a * s * m1 + b * c * m2 - k * s * c
        if g == 0.0:
            break
        if bracketed:
            if g > 0.0:
                lo = x
            else:
                hi = x
        H = -a * c * m1 - b * s * m2 - k * (c * c - s * s)
        if H < 0.0:
            xn = x - g / H
        else:
            xn = NAN
        if bracketed:
            if not (lo < xn and xn < hi):
                xn = 0.5 * (lo + hi)
        elif xn != xn or fabs(xn - x0) > h:
            break
        if xn == x:
            break
        dx = fabs(xn - x)
        x = xn
        if dx <= 1e-15 * (1.0 + fabs(x)):
            break
        if bracketed and hi - lo <= 4e-16 * (1.0 + fabs(x)):
            break
    f0 = _ell(cos(x0), sin(x0), m1, m2, a, b)
    fx = _ell(cos(x), sin(x), m1, m2, a, b)
    if not (fx >= f0 - 1e-12 * (1.0 + fabs(f0))):
        x = x0
        fx = f0
    if x <= -M_PI:
        x += _TWO_PI
    elif x > M_PI:
        x -= _TWO_PI
    out_x[0] = x
    out_f[0] = fx


def ellipse_argmax(mu, double a, double b, grid_cos, grid_sin, grid_theta, int max_iter=100):
    cdef const double[:, ::1] m = np.ascontiguousarray(mu, dtype=np.float64)
    cdef const double[::1] gc = np.ascontiguousarray(grid_cos, dtype=np.float64)
    cdef const double[::1] gs = np.ascontiguousarray(grid_sin, dtype=np.float64)
    cdef const double[::1] gt = np.ascontiguousarray(grid_theta, dtype=np.float64)
    cdef Py_ssize_t r = m.shape[0]
    cdef Py_ssize_t G = gt.shape[0]
    cdef double h = _TWO_PI / G
    theta_arr = np.empty(r, dtype=np.float64)
    value_arr = np.empty(r, dtype=np.float64)
    cdef double[::1] theta = theta_arr
    cdef double[::1] value = value_arr
    cdef Py_ssize_t i, j, best
    cdef double m1, m2, ac, bs, v, bestv
    with nogil:
        for i in range(r):
            m1 = m[i, 0]
            m2 = m[i, 1]
            best = 0
            bestv = -INFINITY
            for j in range(G):
                ac = a * gc[j]
                bs = b * gs[j]
                v = (m1 * ac + m2 * bs) - 0.5 * (ac * ac + bs * bs)
                if v > bestv:
                    bestv = v
                    best = j
            _polish(gt[best], h, m1, m2, a, b, max_iter, &theta[i], &value[i])
    return theta_arr, value_arr


def mixture_log_density(X, means, chols, log_weights):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] mu = np.ascontiguousarray(means, dtype=np.float64)
    cdef const double[:, :, ::1] L = np.ascontiguousarray(chols, dtype=np.float64)
    cdef const double[::1] lw = np.ascontiguousarray(log_weights, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t p = x.shape[1]
    cdef Py_ssize_t K = mu.shape[0]
    out_arr = np.empty((n, K), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    z_arr = np.empty(p, dtype=np.float64)
    cdef double[::1] z = z_arr
    consts_arr = np.empty(K, dtype=np.float64)
    cdef double[::1] consts = consts_arr
    cdef Py_ssize_t i, j, t, k
    cdef double acc, sq, half_logdet
    for k in range(K):
        half_logdet = 0.0
        for j in range(p):
            half_logdet += log(L[k, j, j])
        consts[k] = lw[k] - half_logdet - 0.5 * p * _LOG_2PI
    with nogil:
        for i in range(n):
            for k in range(K):
                sq = 0.0
                for j in range(p):
                    acc = x[i, j] - mu[k, j]
                    for t in range(j):
                        acc = acc - L[k, j, t] * z[t]
                    z[j] = acc / L[k, j, j]
                    sq += z[j] * z[j]
                out[i, k] = consts[k] - 0.5 * sq
    return out_arr


def logsumexp_rows(M):
    cdef const double[:, ::1] m = np.ascontiguousarray(M, dtype=np.float64)
    cdef Py_ssize_t n = m.shape[0]
    cdef Py_ssize_t K = m.shape[1]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, k
    cdef double mx, acc
    with nogil:
        for i in range(n):
            mx = -INFINITY
            for k in range(K):
                if m[i, k] > mx:
                    mx = m[i, k]
            if mx == -INFINITY or mx != mx:
                out[i] = mx
                continue
            acc = 0.0
            for k in range(K):
                acc += exp(m[i, k] - mx)
            out[i] = mx + log(acc)
    return out_arr
