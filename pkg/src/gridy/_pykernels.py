"""Pure-Python/numpy implementations of the hot kernels.

Mirrors ``_ckernels.pyx`` one-for-one; used when the compiled extension is
unavailable or ``GRIDY_PURE_PYTHON`` is set.
"""

import math

import numpy as np


def mp_cdf(x, beta):
    """Marchenko-Pastur CDF (closed form) at scalar ``x`` for ratio ``beta``."""
    sb = math.sqrt(beta)
    lo = (1.0 - sb) ** 2
    hi = (1.0 + sb) ** 2
    if x <= lo:
        return 0.0
    if x >= hi:
        return 1.0
    m = 1.0 + beta
    h = 2.0 * sb
    c = min(1.0, max(-1.0, (m - x) / h))
    theta = math.acos(c)
    val = h * math.sin(theta) + m * theta
    if beta < 1.0:
        k = (1.0 + sb) / (1.0 - sb)
        val -= 2.0 * (1.0 - beta) * math.atan2(k * math.sin(0.5 * theta), math.cos(0.5 * theta))
    return min(1.0, max(0.0, val / (2.0 * math.pi * beta)))


def mp_quantile(beta, qs):
    """Quantiles of the Marchenko-Pastur law by bisection on the CDF."""
    qs = np.asarray(qs, dtype=float)
    out = np.empty(qs.shape)
    sb = math.sqrt(beta)
    lo0 = (1.0 - sb) ** 2
    hi0 = (1.0 + sb) ** 2
    flat_q = qs.ravel()
    flat_out = out.ravel()
    for i, q in enumerate(flat_q):
        if q <= 0.0:
            flat_out[i] = lo0
            continue
        if q >= 1.0:
            flat_out[i] = hi0
            continue
        lo, hi = lo0, hi0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mp_cdf(mid, beta) < q:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-14:
                break
        flat_out[i] = 0.5 * (lo + hi)
    return flat_out.reshape(qs.shape)


def var1_simulate(psi, innov, x0):
    """Run x_t = psi @ x_{t-1} + innov_t for every row of ``innov``."""
    psi = np.asarray(psi, dtype=float)
    innov = np.asarray(innov, dtype=float)
    n, r = innov.shape
    out = np.empty((n, r))
    prev = np.asarray(x0, dtype=float)
    for t in range(n):
        prev = psi @ prev + innov[t]
        out[t] = prev
    return out
