"""Small linear-algebra helpers shared across stages."""

import numpy as np


def random_orthonormal(n, k, rng):
    """Haar-distributed ``n x k`` matrix with orthonormal columns.

    QR of a standard Gaussian matrix with the sign of each column fixed so
    that ``R`` has a positive diagonal.
    """
    if k == 0:
        return np.zeros((n, 0))
    q, r = np.linalg.qr(rng.standard_normal((n, k)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def random_orthonormal_complement(basis, k, rng):
    """Random ``n x k`` orthonormal matrix orthogonal to ``span(basis)``.

    ``basis`` must have orthonormal columns. Gaussian draws are projected
    onto the orthogonal complement and orthonormalised.
    """
    n = basis.shape[0]
    if k == 0:
        return np.zeros((n, 0))
    if k > n - basis.shape[1]:
        raise ValueError("complement has dimension %d < %d" % (n - basis.shape[1], k))
    g = rng.standard_normal((n, k))
    g -= basis @ (basis.T @ g)
    q, r = np.linalg.qr(g)
    # second pass keeps the result orthogonal to ``basis`` at machine precision
    q -= basis @ (basis.T @ q)
    q, r2 = np.linalg.qr(q)
    signs = np.sign(np.diag(r2 @ r))
    signs[signs == 0] = 1.0
    return q * signs


def principal_angles(a, b):
    """Principal angles (radians, ascending) between two orthonormal bases."""
    if a.shape[1] == 0 or b.shape[1] == 0:
        return np.zeros(0)
    s = np.linalg.svd(a.T @ b, compute_uv=False)
    return np.sort(np.arccos(np.clip(s, -1.0, 1.0)))


def largest_principal_angle(a, b):
    """arccos of the smallest singular value of ``a' b``."""
    s = np.linalg.svd(a.T @ b, compute_uv=False)
    return float(np.arccos(np.clip(s[-1], -1.0, 1.0)))


def orth(m, tol=1e-10):
    """Orthonormal basis for the column space of ``m``."""
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    if s.size == 0:
        return u[:, :0]
    keep = s > tol * max(s[0], 1e-300)
    return u[:, keep]


def numerical_rank(m, rel_tol=1e-8):
    return numerical_rank_from(np.linalg.svd(m, compute_uv=False), rel_tol)


def numerical_rank_from(singvals, rel_tol=1e-8):
    """Number of singular values above ``rel_tol`` times the largest."""
    s = np.asarray(singvals, dtype=float)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))
