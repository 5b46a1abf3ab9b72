import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridy.errors import ConfigError, NumericalError
from gridy.linalg import random_orthonormal
from gridy.metrics import column_congruence
from gridy.sca import align_to_truth, alignment_matrix, extract_factors, fit_pf2, fit_sca_ind, procrustes_rotation

from .oracles import brute_force_alignment, nuclear_norm


def test_procrustes_identity():
    np.testing.assert_allclose(procrustes_rotation(np.eye(3)), np.eye(3), atol=1e-14)


def test_procrustes_diag():
    P = procrustes_rotation(np.diag([2.0, -3.0]))
    np.testing.assert_allclose(P, np.diag([1.0, -1.0]), atol=1e-14)
    assert np.trace(np.diag([2.0, -3.0]) @ P) == pytest.approx(5.0)
    # every 2x2 orthogonal matrix: rotations and reflections
    best = max(
        np.trace(np.diag([2.0, -3.0]) @ Q)
        for t in np.linspace(0, 2 * np.pi, 3601)
        for Q in (np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]]),
                  np.array([[np.cos(t), np.sin(t)], [np.sin(t), -np.cos(t)]]))
    )
    assert best <= 5.0 + 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_procrustes_nuclear_norm(seed):
    M = np.random.default_rng(seed).standard_normal((3, 5))
    P = procrustes_rotation(M)
    assert P.shape == (5, 3)
    np.testing.assert_allclose(P.T @ P, np.eye(3), atol=1e-12)
    assert np.trace(M @ P) == pytest.approx(nuclear_norm(M), abs=1e-8)


def test_procrustes_optimal_vs_random(rng):
    M = rng.standard_normal((3, 7))
    best = np.trace(M @ procrustes_rotation(M))
    for _ in range(1000):
        Q = random_orthonormal(7, 3, rng)
        assert np.trace(M @ Q) <= best + 1e-12


TYPE1 = np.array([[1.0, -0.6, 0.3], [-0.6, 1.0, -0.6], [0.3, -0.6, 1.0]])


def _pf2_truth(rng, K=6, T=40, d=15, r=3, phi=None, noise=0.0):
    """Blocks that satisfy the PARAFAC2 constraint exactly, with subject-varying scales."""
    B = rng.uniform(0, 1, (d, r))
    phi = TYPE1[:r, :r] if phi is None else phi
    A = np.sqrt(T) * np.linalg.cholesky(phi).T
    blocks, Ps, Cs = [], [], []
    for _ in range(K):
        P = random_orthonormal(T, r, rng)
        C = rng.uniform(1, 3, r)
        X = ((P @ A) * C) @ B.T + noise * rng.standard_normal((T, d))
        blocks.append(X)
        Ps.append(P)
        Cs.append(C)
    return B, A, Ps, Cs, blocks


def _recomputed_sse(model, blocks):
    return sum(np.sum((X - model.reconstruct(k)) ** 2) for k, X in enumerate(blocks))


def test_noiseless_recovery(rng):
    B, A, Ps, Cs, blocks = _pf2_truth(rng)
    m = fit_pf2(blocks, 3, rng=1)
    total = sum(np.sum(X * X) for X in blocks)
    assert m.sse <= 1e-6 * total
    _, _, aligned = align_to_truth(m.B, B)
    for j in range(3):
        assert abs(column_congruence(B[:, j], aligned[:, j])) >= 0.999


def test_model_invariants(rng):
    *_, blocks = _pf2_truth(rng, noise=0.5)
    m = fit_pf2(blocks, 3, rng=2, max_iter=200)
    G = m.A.T @ m.A
    for P in m.P:
        np.testing.assert_allclose(P.T @ P, np.eye(3), atol=1e-8)
        np.testing.assert_allclose((P @ m.A).T @ (P @ m.A), G, atol=1e-8)
    np.testing.assert_allclose(m.Phi, m.Phi.T, atol=1e-14)
    np.testing.assert_allclose(np.diag(m.Phi), 1.0, atol=1e-12)
    assert np.linalg.eigvalsh(m.Phi)[0] >= -1e-12
    np.testing.assert_allclose(np.linalg.norm(m.B, axis=0), 1.0, atol=1e-12)
    idx = np.argmax(np.abs(m.B), axis=0)
    assert np.all(m.B[idx, np.arange(3)] > 0)
    assert m.sse == pytest.approx(_recomputed_sse(m, blocks), rel=1e-9)


@given(seed=st.integers(0, 2**32 - 1), r=st.integers(1, 3), K=st.integers(1, 4))
@settings(max_examples=15)
def test_sse_trace_non_increasing(seed, r, K):
    rng = np.random.default_rng(seed)
    blocks = [rng.standard_normal((int(rng.integers(r + 1, 20)), 6)) for _ in range(K)]
    m = fit_pf2(blocks, r, n_starts=2, max_iter=60, rng=seed)
    tr = np.array(m.sse_trace)
    assert np.all(np.diff(tr) <= 1e-10 * tr[0])


def test_rank_one_exact(rng):
    b = rng.uniform(0, 1, 10)
    blocks = [2.0 * (k + 1) * np.outer(rng.standard_normal(25), b) for k in range(4)]
    m = fit_pf2(blocks, 1, rng=0)
    tail = sum(np.sum(np.linalg.svd(X, compute_uv=False)[1:] ** 2) for X in blocks)
    total = sum(np.sum(X * X) for X in blocks)
    assert m.sse == pytest.approx(tail, abs=1e-9 * total)


def test_errors(rng):
    blocks = [rng.standard_normal((5, 8)) for _ in range(3)]
    with pytest.raises(ConfigError):
        fit_pf2(blocks, 6)
    with pytest.raises(ConfigError):
        fit_pf2(blocks, 0)
    bad = [b.copy() for b in blocks]
    bad[1][2, 3] = np.nan
    with pytest.raises((ConfigError, NumericalError)):
        fit_pf2(bad, 2)


def test_sca_ind_identity_phi(rng):
    *_, blocks = _pf2_truth(rng, phi=np.eye(3), noise=0.3)
    m = fit_sca_ind(blocks, 3, rng=0, max_iter=200)
    assert np.array_equal(m.Phi, np.eye(3))
    np.testing.assert_allclose(m.A.T @ m.A, np.eye(3), atol=1e-10)


def test_sca_ind_noiseless(rng):
    B, _, _, _, blocks = _pf2_truth(rng, phi=np.eye(3))
    m = fit_sca_ind(blocks, 3, rng=0)
    total = sum(np.sum(X * X) for X in blocks)
    assert m.sse <= 1e-6 * total
    _, _, aligned = align_to_truth(m.B, B)
    assert column_congruence(B, aligned) >= 0.999


def test_sca_ind_matches_pf2_on_identity_truth():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        B, _, _, _, blocks = _pf2_truth(rng, K=6, T=200, phi=np.eye(3), noise=0.3)
        cc = []
        for fit in (fit_pf2, fit_sca_ind):
            m = fit(blocks, 3, rng=seed)
            cc.append(column_congruence(B, align_to_truth(m.B, B)[2]))
        # the constrained model is correct here, so it is at least as good
        assert cc[1] >= cc[0] - 0.005
        assert min(cc) > 0.98


@pytest.mark.parametrize("kw", [dict(max_iter=5000), dict(solver="hybrid")])
def test_pf2_phi_near_identity_long_series(kw):
    rng = np.random.default_rng(7)
    _, _, _, _, blocks = _pf2_truth(rng, K=10, T=2000, d=20, phi=np.eye(3), noise=0.25)
    m = fit_pf2(blocks, 3, rng=0, **kw)
    off = m.Phi - np.diag(np.diag(m.Phi))
    assert np.max(np.abs(off)) <= 0.1


def test_hybrid_solver_monotone_and_consistent(rng):
    *_, blocks = _pf2_truth(rng, noise=0.3)
    m = fit_pf2(blocks, 3, rng=0, solver="hybrid")
    tr = np.array(m.sse_trace)
    assert np.all(np.diff(tr) <= 1e-10 * tr[0])
    assert m.sse == pytest.approx(_recomputed_sse(m, blocks), rel=1e-9)
    with pytest.raises(ConfigError):
        fit_pf2(blocks, 3, solver="newton")


def test_extract_factors(rng):
    *_, blocks = _pf2_truth(rng, noise=0.2)
    m = fit_pf2(blocks, 3, rng=0, max_iter=100)
    before = [m.factors(k) for k in range(len(blocks))]
    factors, Phi = extract_factors(m)
    for a, b in zip(before, factors):
        np.testing.assert_allclose(a, b, atol=1e-10)
    np.testing.assert_allclose(np.diag(Phi), 1.0, atol=1e-12)
    m.A[:, 1] = 0.0
    with pytest.raises(NumericalError, match=r"\[1\]"):
        extract_factors(m)


def test_factor_covariance_long_series():
    rng = np.random.default_rng(3)
    d, r, T = 20, 2, 5000
    phi = np.array([[1.0, -0.6], [-0.6, 1.0]])
    B = rng.uniform(0, 1, (d, r))
    blocks, Cs = [], []
    for _ in range(5):
        A = rng.standard_normal((T, r))
        # exact cross-products T * Phi: the model holds without sampling error
        w, V = np.linalg.eigh(A.T @ A)
        A = A @ (V / np.sqrt(w)) @ V.T @ np.linalg.cholesky(T * phi).T
        Ck = np.array([5.0, 6.0]) * rng.uniform(0.5, 1.5, r)
        blocks.append((A * Ck) @ B.T + 0.1 * rng.standard_normal((T, d)))
        Cs.append(Ck)
    m = fit_pf2(blocks, r, rng=0)
    perm, signs, _ = align_to_truth(m.B, B)
    Q = alignment_matrix(perm, signs)
    D = np.linalg.norm(B, axis=0)
    factors, Phi = extract_factors(m)
    C_hat = np.abs(m.C) * np.sqrt(np.diag(m.A.T @ m.A))
    for k, (F, Ck) in enumerate(zip(factors, Cs)):
        emp = (F @ Q).T @ (F @ Q) / T
        target = (D * Ck)[:, None] * phi * (D * Ck)[None, :]
        assert np.linalg.norm(emp - target) <= 0.05 * np.linalg.norm(target)
        # the fitted scales and correlation reproduce the same covariance
        own = C_hat[k][:, None] * Phi * C_hat[k][None, :] / T
        np.testing.assert_allclose(np.abs(F.T @ F / T), np.abs(own), rtol=1e-8)


def test_determinacy_across_seeds(rng):
    B, _, _, _, blocks = _pf2_truth(rng, K=5)
    a = fit_pf2(blocks, 3, rng=11)
    b = fit_pf2(blocks, 3, rng=99)
    _, _, aligned = align_to_truth(b.B, a.B)
    for j in range(3):
        assert abs(column_congruence(a.B[:, j], aligned[:, j])) >= 0.999


def test_align_examples(rng):
    B = rng.standard_normal((10, 2))
    perm, signs, aligned = align_to_truth(B[:, ::-1], B)
    assert list(perm) == [1, 0] and list(signs) == [1, 1]
    np.testing.assert_array_equal(aligned, B)
    perm, signs, _ = align_to_truth(-B, B)
    assert list(perm) == [0, 1] and list(signs) == [-1, -1]
    with pytest.raises(ConfigError):
        align_to_truth(B, B[:, :1])


@pytest.mark.parametrize("seed", range(20))
def test_align_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    true = rng.uniform(0, 1, (12, 3))
    est = true[:, rng.permutation(3)] * rng.choice([-1.0, 1.0], 3) + 0.3 * rng.standard_normal((12, 3))
    est /= np.linalg.norm(est, axis=0)
    true /= np.linalg.norm(true, axis=0)
    err, perm, signs, cand = brute_force_alignment(est, true)
    p, s, aligned = align_to_truth(est, true)
    assert np.sum((aligned - true) ** 2) == pytest.approx(err, abs=1e-12)
    np.testing.assert_array_equal(p, perm)
    np.testing.assert_array_equal(s, signs)
    np.testing.assert_allclose(est @ alignment_matrix(p, s), aligned)
