import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridy.ajive import (
    BlockSVD, random_direction_threshold, segment, select_joint_rank, stack_and_svd, truncated_svd,
    wedin_threshold,
)
from gridy.errors import ConfigError
from gridy.linalg import largest_principal_angle, numerical_rank, random_orthonormal
from gridy.simulation import SimulationConfig, gen_loadings, simulate_dataset


def test_truncated_svd_examples(rng):
    X = np.zeros((5, 3))
    X[0, 0], X[1, 1], X[2, 2] = 3, 2, 1
    np.testing.assert_allclose(truncated_svd(X, 2).S, [3, 2])
    u, v = rng.standard_normal(7), rng.standard_normal(4)
    b = truncated_svd(np.outer(u, v), 1)
    np.testing.assert_allclose((b.U * b.S) @ b.V.T, np.outer(u, v), atol=1e-12)
    Y = rng.standard_normal((50, 10))
    b = truncated_svd(Y, 10)
    np.testing.assert_allclose((b.U * b.S) @ b.V.T, Y, atol=1e-10)
    np.testing.assert_allclose(b.U.T @ b.U, np.eye(10), atol=1e-10)
    np.testing.assert_allclose(b.V.T @ b.V, np.eye(10), atol=1e-10)


def test_truncated_svd_tail_energy(rng):
    Y = rng.standard_normal((30, 12))
    s = np.linalg.svd(Y, compute_uv=False)
    b = truncated_svd(Y, 4)
    err = np.sum((Y - (b.U * b.S) @ b.V.T) ** 2)
    assert err == pytest.approx(np.sum(s[4:] ** 2))


@pytest.mark.parametrize("r", [0, 11])
def test_truncated_svd_bad_rank(rng, r):
    with pytest.raises(ConfigError):
        truncated_svd(rng.standard_normal((20, 10)), r)


def _bsvd(V):
    return BlockSVD(np.zeros((1, V.shape[1])), np.ones(V.shape[1]), V)


def test_stack_identical(rng):
    V = random_orthonormal(20, 3, rng)
    s, _ = stack_and_svd([_bsvd(V)] * 6)
    np.testing.assert_allclose(s[:3], math.sqrt(6))


def test_stack_orthogonal(rng):
    Q = random_orthonormal(20, 6, rng)
    s, _ = stack_and_svd([_bsvd(Q[:, :3]), _bsvd(Q[:, 3:])])
    np.testing.assert_allclose(s, 1.0)


def test_stack_single(rng):
    s, _ = stack_and_svd([_bsvd(random_orthonormal(20, 4, rng))])
    np.testing.assert_allclose(s, 1.0)


@given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**32 - 1))
@settings(max_examples=25)
def test_stack_bound(n, r, seed):
    rng = np.random.default_rng(seed)
    s, _ = stack_and_svd([_bsvd(random_orthonormal(12, r, rng)) for _ in range(n)])
    assert s[0] <= math.sqrt(n) + 1e-12


def test_random_direction_single_replicate():
    got = random_direction_threshold([10, 10], 30, [2, 2], M=1, rng=np.random.default_rng(4))
    rng = np.random.default_rng(4)
    J = np.vstack([random_orthonormal(30, 2, rng).T for _ in range(2)])
    assert got == pytest.approx(np.linalg.svd(J, compute_uv=False)[0])


def test_random_direction_high_dim():
    t = random_direction_threshold([5, 5], 1000, [1, 1], M=100, rng=1)
    assert 1.0 <= t < 1.05


@given(st.integers(2, 6), st.integers(1, 3), st.integers(0, 2**32 - 1))
@settings(max_examples=20)
def test_random_direction_bounds(n, r, seed):
    t = random_direction_threshold([10] * n, 15, [r] * n, M=10, rng=seed)
    assert 1.0 - 1e-12 <= t <= math.sqrt(n) + 1e-12


def test_random_direction_args():
    with pytest.raises(ConfigError):
        random_direction_threshold([5], 10, [1], M=0)


def test_wedin_zero_noise(rng):
    blocks, svds = [], []
    for _ in range(4):
        X = rng.standard_normal((30, 3)) @ rng.standard_normal((3, 12))
        blocks.append(X)
        svds.append(truncated_svd(X, 3))
    assert wedin_threshold(blocks, svds, L=20, rng=rng) == pytest.approx(4.0, abs=1e-10)


def test_wedin_saturated(rng):
    blocks, svds = [], []
    for _ in range(3):
        X = rng.standard_normal((30, 12))
        b = truncated_svd(X, 2)
        blocks.append(X)
        svds.append(BlockSVD(b.U, b.S * 1e-6, b.V))
    assert wedin_threshold(blocks, svds, L=10, rng=rng) == 0.0


def test_wedin_simulated_between_K_and_2K():
    cfg = SimulationConfig(d=50, T=100, K=4, c=2.0, seed=8)
    ds, _ = simulate_dataset(cfg)
    X = ds.centered().matrices
    svds = [truncated_svd(x, 4) for x in X]
    w = wedin_threshold(X, svds, L=50, rng=2)
    assert cfg.K < w < 2 * cfg.K


def test_select_joint_rank_examples():
    s = np.array([math.sqrt(10), math.sqrt(10), 2.0, 1.0])
    assert select_joint_rank(s, 2.5, 9.0) == 2
    assert select_joint_rank(s, 5.0, 0.0) == 0
    # the Wedin side compares squared values
    assert select_joint_rank(s, 1.5, 3.9) == 3


def _lemma_instance(rng, K=4, d=40, T=80, rJ=2, rG=2):
    Bj, B1, B2 = gen_loadings(d, rJ, rG, rng)
    blocks = []
    for k in range(2 * K):
        Bg = B1 if k < K else B2
        blocks.append(rng.standard_normal((T, rJ)) @ Bj.T + rng.standard_normal((T, rG)) @ Bg.T)
    return Bj, B1, B2, blocks


def test_noiseless_recovers_joint_span(rng):
    Bj, B1, B2, blocks = _lemma_instance(rng)
    res = segment(blocks, 4, reps=50, rng=3)
    assert res.joint_rank == 2
    assert largest_principal_angle(res.joint_basis, np.linalg.qr(Bj)[0]) < 1e-6


def test_noiseless_structure_conditions(rng):
    K = 4
    Bj, B1, B2, blocks = _lemma_instance(rng, K=K)
    res = segment(blocks, 4, reps=30, rng=3)
    for k, (J, G) in enumerate(zip(res.joint_blocks, res.group_blocks)):
        # common joint row space, orthogonal to each group part
        assert largest_principal_angle(np.linalg.svd(J)[2][:2].T, res.joint_basis) < 1e-6
        assert np.linalg.norm(J @ G.T) <= 1e-9 * np.linalg.norm(blocks[k]) ** 2
    # the group row spaces have no common direction across all subjects
    projs = []
    for G in res.group_blocks:
        V = np.linalg.svd(G)[2][:2].T
        projs.append(V @ V.T)
    assert np.linalg.eigvalsh(np.mean(projs, axis=0))[-1] < 1 - 1e-3


def test_zero_joint_rank(rng):
    blocks = [rng.standard_normal((20, 8)) for _ in range(3)]
    res = segment(blocks, 2, joint_rank=0, reps=5, rng=1)
    for X, J, G, b in zip(blocks, res.joint_blocks, res.group_blocks, res.block_svds):
        assert not np.any(J)
        np.testing.assert_allclose(G, X @ b.V @ b.V.T, atol=1e-12)


def test_joint_rank_too_large(rng):
    blocks = [rng.standard_normal((20, 8)) for _ in range(3)]
    with pytest.raises(ConfigError):
        segment(blocks, [2, 3, 3], joint_rank=3, reps=5, rng=1)


def test_zero_rank_block_rejected(rng):
    with pytest.raises(ConfigError):
        segment([rng.standard_normal((20, 8))] * 2, [0, 2], reps=5)
    with pytest.raises(ConfigError):
        segment([rng.standard_normal((20, 8))] * 2, [1, 2, 3], reps=5)


def test_override_logged(rng, caplog):
    blocks = [rng.standard_normal((20, 8)) for _ in range(3)]
    with caplog.at_level("INFO", logger="gridy"):
        res = segment(blocks, 3, joint_rank=1, reps=5, rng=1)
    assert res.joint_rank == 1
    assert "overridden" in caplog.text
    assert "selected_rank" in res.thresholds


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4), r=st.integers(1, 4), rj=st.integers(0, 4),
       T=st.integers(5, 30))
@settings(max_examples=25)
def test_identity_and_projector(seed, n, r, rj, T):
    rj = min(rj, r)
    rng = np.random.default_rng(seed)
    blocks = [rng.standard_normal((T, 9)) * 10 ** rng.uniform(-3, 3) for _ in range(n)]
    res = segment(blocks, r, joint_rank=rj, reps=3, rng=seed)
    P = res.joint_projection
    assert np.linalg.norm(P @ P - P) <= 1e-10
    assert np.linalg.norm(P - P.T) <= 1e-12
    for X, J, G, b in zip(blocks, res.joint_blocks, res.group_blocks, res.block_svds):
        resid = np.linalg.norm(J + G - X @ b.V @ b.V.T)
        assert resid <= 1e-9 * np.linalg.norm(X)
        if np.any(J):
            assert numerical_rank(J) <= rj


def test_deterministic(rng):
    blocks = [rng.standard_normal((20, 8)) for _ in range(4)]
    a = segment(blocks, 3, reps=10, rng=5)
    b = segment(blocks, 3, reps=10, rng=5, threads=3)
    assert a.thresholds == b.thresholds
    assert a.joint_rank == b.joint_rank


def test_joint_rank_decreases_with_noise():
    means = []
    for sigma in (0.5, 8.0, 40.0):
        est = []
        for rep in range(20):
            cfg = SimulationConfig(d=40, T=80, K=3, c=1.0, sigma_eps=sigma, seed=100 + rep)
            ds, _ = simulate_dataset(cfg)
            est.append(segment(ds.centered().matrices, 4, reps=30, rng=rep).joint_rank)
        means.append(np.mean(est))
    assert means[0] >= means[1] >= means[2]
    assert means[0] > means[2]
