"""Simultaneous component analysis with PARAFAC2 (and INDSCAL) constraints.

Direct fitting of ``X_k ~ P_k A C_k B'`` with ``P_k'P_k = I``:
alternate per-subject orthogonal Procrustes updates of ``P_k`` with one
CP-ALS sweep over ``A``, ``C_k`` and ``B`` on the rotated slabs
``P_k' X_k`` (all ``r x d``). Every update is an exact least-squares
minimiser of its block, so the objective never increases.

The INDSCAL variant pins ``A = I`` (factor correlation fixed to identity);
``P_k`` then carries all rotation freedom.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, NumericalError
from .linalg import numerical_rank, numerical_rank_from
from .seeding import as_generator

log = logging.getLogger(__name__)


@dataclass
class ScaPf2Model:
    B: np.ndarray
    A: np.ndarray
    P: list
    C: np.ndarray  # (n_subjects, r): diagonals of C_k
    Phi: np.ndarray
    sse_trace: list = field(default_factory=list)
    kind: str = "pf2"
    converged: bool = False

    @property
    def rank(self):
        return self.B.shape[1]

    @property
    def sse(self):
        return self.sse_trace[-1] if self.sse_trace else float("nan")

    @property
    def n_iter(self):
        return len(self.sse_trace)

    def C_matrix(self, k):
        return np.diag(self.C[k])

    def factors(self, k):
        """Factor series ``F_k = P_k A C_k`` (``T_k x r``)."""
        return (self.P[k] @ self.A) * self.C[k]

    def reconstruct(self, k):
        return self.factors(k) @ self.B.T


def procrustes_rotation(M):
    """Columnwise-orthonormal ``P`` (``T x r``) maximising ``Tr(M P)`` for ``M`` (``r x T``).

    With ``M = U S V'`` the maximiser is ``V U'``. For rank-deficient ``M``
    the singular vectors LAPACK returns for zero singular values are used.
    """
    M = np.asarray(M, dtype=float)
    U, _, Vt = np.linalg.svd(M, full_matrices=False)
    return Vt.T @ U.T


def _ls_right(num, G):
    """``num @ inv(G)`` for symmetric ``G`` (least-squares when singular)."""
    return np.linalg.lstsq(G, num.T, rcond=None)[0].T


def _cp_sweep(Y, A, B, C, fix_A):
    # Y: (K, r, m) rotated slabs; model Y_k = A diag(c_k) B'
    if not fix_A:
        num = np.einsum("kij,jf,kf->if", Y, B, C)
        A = _ls_right(num, (B.T @ B) * (C.T @ C))
    num = np.einsum("kij,if,kf->jf", Y, A, C)
    B = _ls_right(num, (A.T @ A) * (C.T @ C))
    rhs = np.einsum("if,kij,jf->kf", A, Y, B)
    C = _ls_right(rhs, (A.T @ A) * (B.T @ B))
    return A, B, C


def _compress(blocks, r):
    """Exact reduction of the blocks to ``(K, q, m)`` slabs.

    Each block keeps its top-``q`` left singular vectors ``Q_k`` (``q`` common,
    at least ``r``), and the columns are projected on the span ``W`` of all
    retained rows. Optimal rotations lie in ``span(Q_k)`` and loadings in
    ``span(W)``, so the objective on the slabs differs from the original one
    by the constant discarded energy.
    """
    q = max(r, max(numerical_rank(X, 1e-12) for X in blocks))
    q = min(q, min(X.shape[0] for X in blocks), blocks[0].shape[1])
    Qs, Rs = [], []
    for X in blocks:
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
        Qs.append(U[:, :q])
        Rs.append(s[:q, None] * Vt[:q])
    R = np.stack(Rs)
    _, sw, Wt = np.linalg.svd(R.reshape(-1, R.shape[2]), full_matrices=False)
    m = max(r, numerical_rank_from(sw, 1e-12))
    W = Wt[:m].T
    Rc = R @ W
    const = float(sum(np.sum(X * X) for X in blocks) - np.sum(Rc * Rc))
    return Qs, Rc, W, max(const, 0.0)


def _initial_loadings(R, r):
    G = np.einsum("kij,kil->jl", R, R)
    w, V = np.linalg.eigh(G)
    return V[:, ::-1][:, :r].copy()


def _rotations(R, Rt, A, B, C):
    AC = A[None] * C[:, None, :]
    U, _, Vt = np.linalg.svd(AC @ B.T @ Rt, full_matrices=False)
    return Vt.transpose(0, 2, 1) @ U.transpose(0, 2, 1)


def _sse(R, P, A, B, C, const):
    fitted = P @ (A[None] * C[:, None, :]) @ B.T
    return float(np.sum((R - fitted) ** 2)) + const


def _fit_als(R, A, B, C, tol, max_iter, fix_A, const, extrapolate=True):
    """ALS with an extrapolation step of length ``it ** (1/3)``.

    The extrapolated point is re-rotated and kept only when it lowers the
    objective, so the trace stays monotone.
    """
    trace = []
    prev = None
    converged = False
    P = None
    Rt = R.transpose(0, 2, 1)
    for it in range(max_iter):
        P = _rotations(R, Rt, A, B, C)
        Y = P.transpose(0, 2, 1) @ R
        A0, B0, C0 = A, B, C
        A, B, C = _cp_sweep(Y, A, B, C, fix_A)
        sse = _sse(R, P, A, B, C, const)
        if not np.isfinite(sse) or not (np.all(np.isfinite(A)) and np.all(np.isfinite(B)) and np.all(np.isfinite(C))):
            raise NumericalError(f"non-finite values in SCA fit at iteration {it + 1}")
        if extrapolate and it >= 2:
            step = (it + 1) ** (1.0 / 3.0)
            Ae = A if fix_A else A0 + step * (A - A0)
            Be, Ce = B0 + step * (B - B0), C0 + step * (C - C0)
            Pe = _rotations(R, Rt, Ae, Be, Ce)
            sse_e = _sse(R, Pe, Ae, Be, Ce, const)
            if np.isfinite(sse_e) and sse_e < sse:
                P, A, B, C, sse = Pe, Ae, Be, Ce, sse_e
        trace.append(sse)
        if prev is not None and prev - sse <= tol * prev:
            converged = True
            break
        if sse == 0.0:
            converged = True
            break
        prev = sse
    return P, A, B, C, trace, converged


def _profiled(R, const, r, fix_A):
    """Objective with the rotations profiled out, and its gradient.

    For fixed ``A, C_k, B`` the best rotation attains the nuclear norm of
    ``A C_k B' R_k'``, so the SSE is ``|R|^2 - 2 sum_k |.|_* + sum_k |A C_k B'|^2``.
    Its gradient equals the CP gradient at the optimal rotations.
    """
    K, _, m = R.shape
    total = float(np.sum(R * R)) + const
    nA = 0 if fix_A else r * r

    def unpack(x):
        A = np.eye(r) if fix_A else x[:nA].reshape(r, r)
        B = x[nA:nA + m * r].reshape(m, r)
        C = x[nA + m * r:].reshape(K, r)
        return A, B, C

    def fun(x):
        A, B, C = unpack(x)
        Z = (A[None] * C[:, None, :]) @ B.T
        U, s, Vt = np.linalg.svd(Z @ R.transpose(0, 2, 1), full_matrices=False)
        D = 2.0 * (Z - (U @ Vt) @ R)
        grads = [] if fix_A else [np.einsum("kij,kf,jf->if", D, C, B).ravel()]
        grads.append(np.einsum("kij,if,kf->jf", D, A, C).ravel())
        grads.append(np.einsum("kij,if,jf->kf", D, A, B).ravel())
        return total - 2.0 * float(np.sum(s)) + float(np.sum(Z * Z)), np.concatenate(grads)

    def pack(A, B, C):
        parts = [] if fix_A else [A.ravel()]
        return np.concatenate(parts + [B.ravel(), C.ravel()])

    return fun, pack, unpack


def _fit_once(R, A, B, C, tol, max_iter, fix_A, const, solver="als", warmup=25):
    """ALS warm-up, then quasi-Newton on the profiled objective (``solver="hybrid"``).

    ALS crawls through flat valleys where two components are nearly
    collinear; L-BFGS on the same objective gets through them in far fewer
    iterations. Per-step decreases in such valleys are tiny, so the
    quasi-Newton phase stops at a relative decrease of ``tol * 1e-4``; the
    total iteration budget is still ``max_iter``. ``solver="als"`` runs ALS
    alone.
    """
    if solver not in ("hybrid", "als"):
        raise ConfigError(f"unknown solver {solver!r}")
    n_als = max_iter if solver == "als" else min(max_iter, warmup)
    P, A, B, C, trace, converged = _fit_als(R, A, B, C, tol, n_als, fix_A, const)
    budget = max_iter - len(trace)
    if solver == "als" or converged or budget <= 0:
        return P, A, B, C, trace, converged
    r = B.shape[1]
    fun, pack, unpack = _profiled(R, const, r, fix_A)
    extra = []
    last = []

    def record(xk):
        extra.append(fun(xk)[0])
        last[:] = [np.array(xk)]

    res = optimize.minimize(fun, pack(A, B, C), jac=True, method="L-BFGS-B", callback=record,
                            options={"maxiter": budget, "ftol": tol * 1e-4, "gtol": 1e-12, "maxcor": 20})
    if not np.all(np.isfinite(res.x)):
        raise NumericalError(f"non-finite values in SCA fit at iteration {len(trace) + len(extra)}")
    A2, B2, C2 = unpack(res.x)
    P2 = _rotations(R, R.transpose(0, 2, 1), A2, B2, C2)
    sse = _sse(R, P2, A2, B2, C2, const)
    if not sse <= trace[-1]:
        return P, A, B, C, trace, converged
    # the last callback point is the returned one; report its recomputed value
    if last and np.array_equal(last[0], res.x):
        extra[-1] = sse
    else:
        extra.append(sse)
    return P2, A2, B2, C2, trace + [float(v) for v in extra], bool(res.success)


def _canonicalise(model):
    """Unit-norm loading columns, unit-diagonal ``A'A``, largest loading entry positive."""
    B, A, C, P = model.B, model.A, model.C, model.P
    nb = np.linalg.norm(B, axis=0)
    nb[nb == 0] = 1.0
    B = B / nb
    C = C * nb
    if model.kind == "pf2":
        da = np.sqrt(np.diag(A.T @ A))
        if np.any(da == 0):
            raise NumericalError(f"degenerate component(s) {np.flatnonzero(da == 0).tolist()}: zero column in A")
        A = A / da
        C = C * da
    idx = np.argmax(np.abs(B), axis=0)
    signs = np.sign(B[idx, np.arange(B.shape[1])])
    signs[signs == 0] = 1.0
    B = B * signs
    if model.kind == "pf2":
        A = A * signs
    else:
        P = [Pk * signs for Pk in P]
    model.B, model.A, model.C, model.P = B, A, C, P
    model.Phi = _correlation(A)
    return model


def _correlation(A):
    G = A.T @ A
    dg = np.sqrt(np.diag(G))
    Phi = G / np.outer(dg, dg)
    Phi = (Phi + Phi.T) / 2
    np.fill_diagonal(Phi, 1.0)
    return Phi


def _fit(blocks, r, tol, max_iter, n_starts, rng, kind, solver="als"):
    blocks = [np.asarray(X, dtype=float) for X in blocks]
    if not blocks:
        raise ConfigError("no blocks to fit")
    d = blocks[0].shape[1]
    if any(X.shape[1] != d for X in blocks):
        raise ConfigError("blocks must share the number of variables")
    if r < 1 or r > min(min(X.shape[0] for X in blocks), d):
        raise ConfigError(f"rank {r} must lie in [1, min_k(T_k, d)]")
    if not all(np.all(np.isfinite(X)) for X in blocks):
        raise NumericalError("non-finite values in the input blocks")
    rng = as_generator(rng)
    fix_A = kind == "ind"
    K = len(blocks)
    Qs, R, W, const = _compress(blocks, r)
    m = R.shape[2]
    B0 = _initial_loadings(R, r)
    best = None
    for start in range(max(1, n_starts)):
        if start == 0:
            B = B0.copy()
        else:
            # perturbation drawn in the full space, then expressed in span(W)
            B = B0 + W.T @ (0.5 * rng.standard_normal((d, r)) / np.sqrt(d))
        A = np.eye(r)
        C = np.ones((K, r))
        P, A, B, C, trace, conv = _fit_once(R, A, B, C, tol, max_iter, fix_A, const, solver)
        log.debug("%s start %d: sse %.6g after %d iterations", kind, start, trace[-1], len(trace))
        if best is None or trace[-1] < best[4][-1]:
            best = (P, A, B, C, trace, conv)
    P, A, B, C, trace, conv = best
    P = [Qk @ Pk for Qk, Pk in zip(Qs, P)]
    model = ScaPf2Model(B=W @ B, A=A, P=P, C=C, Phi=np.eye(r), sse_trace=trace, kind=kind, converged=conv)
    return _canonicalise(model)


def fit_pf2(blocks, r, tol=1e-8, max_iter=500, n_starts=5, rng=None, solver="als"):
    """Fit the PARAFAC2-constrained model; best of ``n_starts`` kept."""
    return _fit(blocks, r, tol, max_iter, n_starts, rng, "pf2", solver)


def fit_sca_ind(blocks, r, tol=1e-8, max_iter=500, n_starts=5, rng=None, solver="als"):
    """Fit with the factor correlation pinned to identity."""
    model = _fit(blocks, r, tol, max_iter, n_starts, rng, "ind", solver)
    model.Phi = np.eye(r)
    return model


def extract_factors(model):
    """Per-subject factors ``P_k A C_k`` after rescaling ``A`` to unit-diagonal ``A'A``.

    Returns ``(factors, Phi)``; the factors are invariant under the
    rescaling.
    """
    G = model.A.T @ model.A
    dg = np.diag(G)
    bad = np.flatnonzero(dg <= 0)
    if bad.size:
        raise NumericalError(f"degenerate component(s) {bad.tolist()}: zero diagonal in A'A")
    s = np.sqrt(dg)
    A = model.A / s
    C = model.C * s
    factors = [(Pk @ A) * ck for Pk, ck in zip(model.P, C)]
    return factors, _correlation(A)


def align_to_truth(est_B, true_B):
    """Signed column permutation of ``est_B`` closest to ``true_B`` in squared error.

    Returns ``(perm, signs, aligned)`` with
    ``aligned[:, j] = signs[j] * est_B[:, perm[j]]``.
    """
    est_B = np.asarray(est_B, dtype=float)
    true_B = np.asarray(true_B, dtype=float)
    if est_B.shape != true_B.shape:
        raise ConfigError(f"shape mismatch {est_B.shape} vs {true_B.shape}")
    inner = est_B.T @ true_B
    rows, cols = linear_sum_assignment(-np.abs(inner.T))
    perm = cols[np.argsort(rows)]
    signs = np.sign(inner[perm, np.arange(inner.shape[1])])
    signs[signs == 0] = 1.0
    return perm, signs, est_B[:, perm] * signs


def alignment_matrix(perm, signs):
    """Signed permutation ``Q`` with ``est @ Q == aligned``."""
    r = len(perm)
    Q = np.zeros((r, r))
    Q[np.asarray(perm), np.arange(r)] = signs
    return Q
