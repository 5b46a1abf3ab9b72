"""Angle-based segmentation into joint and group-individual structures.

Each block's rank-``r_k`` right singular basis ``V_k`` is stacked row-wise;
singular values of the stack near ``sqrt(#blocks)`` mark directions shared
by every subject. The joint rank is the number of stacked singular values
clearing both the random-direction bound (singular-value scale) and the
Wedin bound (squared scale).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .linalg import random_orthonormal, random_orthonormal_complement
from .parallel import pmap
from .seeding import as_generator, split

log = logging.getLogger(__name__)


@dataclass
class BlockSVD:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def rank(self):
        return self.S.size


@dataclass
class SegmentationResult:
    joint_rank: int
    joint_basis: np.ndarray
    joint_blocks: list
    group_blocks: list
    thresholds: dict
    stacked_singvals: np.ndarray
    block_svds: list = field(default_factory=list)

    @property
    def joint_projection(self):
        return self.joint_basis @ self.joint_basis.T


def truncated_svd(X, rank):
    X = np.asarray(X, dtype=float)
    if not (1 <= rank <= min(X.shape)):
        raise ConfigError(f"rank must lie in [1, {min(X.shape)}], got {rank}")
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    return BlockSVD(U[:, :rank], s[:rank], Vt[:rank].T)


def stack_and_svd(svds):
    """Singular values and right basis of the stacked ``V_k'`` rows."""
    J = np.vstack([b.V.T for b in svds])
    _, s, Vt = np.linalg.svd(J, full_matrices=False)
    return s, Vt.T


def random_direction_threshold(T_list, d, r_list, M=100, rng=None):
    """5th percentile of the largest stacked singular value under random bases.

    ``T_list`` is accepted for symmetry with the block shapes; only the
    right bases (``d x r_k``) are replaced.
    """
    if M < 1:
        raise ConfigError("M must be >= 1")
    rng = as_generator(rng)
    draws = np.empty(M)
    for m in range(M):
        J = np.vstack([random_orthonormal(d, r, rng).T for r in r_list if r > 0])
        draws[m] = np.linalg.svd(J, compute_uv=False)[0]
    return float(np.percentile(draws, 5))


def wedin_threshold(blocks, svds, L=100, rng=None, threads=None):
    """Resampled Wedin lower bound on the squared stacked singular values.

    Noise operator norms are approximated by ``||X_k V~||_2`` and
    ``||X_k' U~||_2`` with ``V~, U~`` random orthonormal bases of matching
    size drawn from the orthogonal complements of ``V_k, U_k``. Returns the
    95th percentile of ``N - sum_k min(ratio_k, 1)^2`` over ``L`` draws.
    """
    rng = as_generator(rng)
    N = len(blocks)
    children = split(rng, L)

    def one(child):
        total = float(N)
        for X, b in zip(blocks, svds):
            smin = float(b.S[-1]) if b.rank else 0.0
            if smin <= 0.0:
                total -= 1.0
                continue
            T_k, d = X.shape
            kv = min(b.rank, d - b.rank)
            ku = min(b.rank, T_k - b.rank)
            nv = np.linalg.norm(X @ random_orthonormal_complement(b.V, kv, child), 2) if kv else 0.0
            nu = np.linalg.norm(X.T @ random_orthonormal_complement(b.U, ku, child), 2) if ku else 0.0
            total -= min(max(nv, nu) / smin, 1.0) ** 2
        return total

    draws = np.array(pmap(one, children, threads=threads))
    return float(np.percentile(draws, 95))


def select_joint_rank(stacked_singvals, rd_thresh, wedin_thresh):
    s = np.asarray(stacked_singvals, dtype=float)
    return int(np.sum((s > rd_thresh) & (s * s > wedin_thresh)))


def segment(matrices, ranks, joint_rank=None, reps=100, rng=None, threads=None):
    """Split each block into joint ``X_k P_J`` and group part ``X_k (V_k V_k' - P_J)``.

    ``ranks`` holds one initial rank per block (or a single int for all).
    When ``joint_rank`` is None it is selected from the two thresholds;
    otherwise the given value is used and thresholds are still reported.
    """
    rng = as_generator(rng)
    matrices = [np.asarray(X, dtype=float) for X in matrices]
    if np.ndim(ranks) == 0:
        ranks = [int(ranks)] * len(matrices)
    if len(ranks) != len(matrices):
        raise ConfigError("need one initial rank per block")
    if any(r < 1 for r in ranks):
        raise ConfigError("blocks with zero initial rank must be excluded before segmentation")
    d = matrices[0].shape[1]
    svds = pmap(lambda a: truncated_svd(*a), list(zip(matrices, ranks)), threads=threads)
    s_J, V_J = stack_and_svd(svds)
    rng_rd, rng_w = split(rng, 2)
    rd = random_direction_threshold([X.shape[0] for X in matrices], d, ranks, M=reps, rng=rng_rd)
    wedin = wedin_threshold(matrices, svds, L=reps, rng=rng_w, threads=threads)
    selected = select_joint_rank(s_J, rd, wedin)
    if joint_rank is None:
        joint_rank = selected
    else:
        log.info("joint rank overridden: %d (thresholds select %d)", joint_rank, selected)
    if joint_rank > min(ranks):
        raise ConfigError(f"joint rank {joint_rank} exceeds the smallest initial rank {min(ranks)}")
    basis = V_J[:, :joint_rank]
    P = basis @ basis.T
    joint, group = [], []
    for X, b in zip(matrices, svds):
        XP = X @ P
        joint.append(XP)
        group.append((X @ b.V) @ b.V.T - XP)
    return SegmentationResult(
        joint_rank=int(joint_rank),
        joint_basis=basis,
        joint_blocks=joint,
        group_blocks=group,
        thresholds={"random_direction": rd, "wedin": wedin, "selected_rank": selected},
        stacked_singvals=s_J,
        block_svds=svds,
    )
