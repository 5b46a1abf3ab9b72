# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Same contracts as ``_pykernels``."""

from libc.math cimport sqrt, acos, sin, cos, atan2, M_PI

import numpy as np


cdef double _mp_cdf(double x, double beta) nogil:
    cdef double sb = sqrt(beta)
    cdef double lo = (1.0 - sb) * (1.0 - sb)
    cdef double hi = (1.0 + sb) * (1.0 + sb)
    cdef double m, h, c, theta, val, k
    if x <= lo:
        return 0.0
    if x >= hi:
        return 1.0
    m = 1.0 + beta
    h = 2.0 * sb
    c = (m - x) / h
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    theta = acos(c)
    val = h * sin(theta) + m * theta
    if beta < 1.0:
        k = (1.0 + sb) / (1.0 - sb)
        val -= 2.0 * (1.0 - beta) * atan2(k * sin(0.5 * theta), cos(0.5 * theta))
    val = val / (2.0 * M_PI * beta)
    if val < 0.0:
        return 0.0
    if val > 1.0:
        return 1.0
    return val


def mp_cdf(double x, double beta):
    return _mp_cdf(x, beta)


def mp_quantile(double beta, qs):
    q_arr = np.ascontiguousarray(qs, dtype=np.float64)
    shape = q_arr.shape
    cdef double[::1] q = q_arr.ravel()
    out_arr = np.empty(q.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, it
    cdef double sb = sqrt(beta)
    cdef double lo0 = (1.0 - sb) * (1.0 - sb)
    cdef double hi0 = (1.0 + sb) * (1.0 + sb)
    cdef double lo, hi, mid
    with nogil:
        for i in range(q.shape[0]):
            if q[i] <= 0.0:
                out[i] = lo0
                continue
            if q[i] >= 1.0:
                out[i] = hi0
                continue
            lo = lo0
            hi = hi0
            for it in range(200):
                mid = 0.5 * (lo + hi)
                if _mp_cdf(mid, beta) < q[i]:
                    lo = mid
                else:
                    hi = mid
                if hi - lo < 1e-14:
                    break
            out[i] = 0.5 * (lo + hi)
    return out_arr.reshape(shape)


def var1_simulate(psi, innov, x0):
    cdef double[:, ::1] P = np.ascontiguousarray(psi, dtype=np.float64)
    cdef double[:, ::1] E = np.ascontiguousarray(innov, dtype=np.float64)
    cdef double[::1] x = np.array(x0, dtype=np.float64)
    cdef Py_ssize_t n = E.shape[0], r = E.shape[1]
    out_arr = np.empty((n, r), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t t, i, j
    cdef double acc
    with nogil:
        for t in range(n):
            for i in range(r):
                acc = E[t, i]
                if t == 0:
                    for j in range(r):
                        acc = acc + P[i, j] * x[j]
                else:
                    for j in range(r):
                        acc = acc + P[i, j] * out[t - 1, j]
                out[t, i] = acc
    return out_arr
