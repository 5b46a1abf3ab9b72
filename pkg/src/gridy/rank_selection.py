"""Per-subject initial signal rank by rotational bootstrap.

Singular values are shrunk with the optimal Marchenko-Pastur hard-edge
shrinker, the shrunk spectrum is re-embedded in random orientations on top
of an imputed noise matrix, and a rank ``r`` is accepted when the 95th
percentile of the bootstrap principal angle for the rank-``r`` estimate stays
below ``xi`` times the random-direction angle bound. Subject ranks are then
combined by majority vote.
"""

from __future__ import annotations

import functools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, NumericalError
from .linalg import random_orthonormal
from .parallel import pmap
from .seeding import as_generator, split, stream

log = logging.getLogger(__name__)


@dataclass
class ShrinkageResult:
    kappa: float
    shrunk_singvals: np.ndarray
    max_rank: int
    aspect_ratio: float
    sigma_med: float


@dataclass
class BootstrapDiagnostics:
    max_rank: int
    kappa: float
    angle_pct_U: list
    angle_pct_V: list
    theta0_U: float
    theta0_V: float
    count_U: int
    count_V: int
    degenerate: bool = False

    def to_dict(self):
        return {
            "max_rank": self.max_rank,
            "kappa": self.kappa,
            "angle_pct_U": list(self.angle_pct_U),
            "angle_pct_V": list(self.angle_pct_V),
            "theta0_U": self.theta0_U,
            "theta0_V": self.theta0_V,
            "count_U": self.count_U,
            "count_V": self.count_V,
            "degenerate": self.degenerate,
        }


@dataclass
class RankReport:
    per_subject_rank: dict
    per_subject_diagnostics: dict
    xi: float
    reps: int
    voted_rank: int
    groups: dict = field(default_factory=dict)

    @property
    def direction_bounds(self):
        return {s: (d.theta0_U, d.theta0_V) for s, d in self.per_subject_diagnostics.items()}

    def to_dict(self):
        return {
            "xi": self.xi,
            "reps": self.reps,
            "voted_rank": self.voted_rank,
            "subjects": [
                {
                    "subject": s,
                    "group": self.groups.get(s),
                    "rank": int(r),
                    **self.per_subject_diagnostics[s].to_dict(),
                }
                for s, r in self.per_subject_rank.items()
            ],
        }

    @classmethod
    def from_dict(cls, obj):
        ranks, diags, groups = {}, {}, {}
        for row in obj["subjects"]:
            s = row["subject"]
            ranks[s] = int(row["rank"])
            groups[s] = row.get("group")
            diags[s] = BootstrapDiagnostics(
                **{k: row[k] for k in BootstrapDiagnostics.__dataclass_fields__ if k in row}
            )
        return cls(ranks, diags, obj["xi"], obj["reps"], int(obj["voted_rank"]), groups)


def _check_beta(beta):
    if not (0.0 < beta <= 1.0):
        raise ConfigError(f"aspect ratio beta must lie in (0, 1], got {beta}")


@functools.lru_cache(maxsize=4096)
def _mp_quantile_cached(beta, q):
    return float(kernels.mp_quantile(beta, np.array([q]))[0])


def mp_quantile(beta, q):
    """100q-th percentile of the Marchenko-Pastur law with aspect ratio ``beta``.

    Scalars are cached per ``(beta, q)``; arrays are evaluated directly.
    """
    beta = float(beta)
    _check_beta(beta)
    if np.ndim(q) == 0:
        q = float(q)
        if not (0.0 <= q <= 1.0):
            raise ConfigError(f"quantile level must lie in [0, 1], got {q}")
        return _mp_quantile_cached(beta, q)
    q = np.asarray(q, dtype=float)
    if np.any((q < 0) | (q > 1)):
        raise ConfigError("quantile levels must lie in [0, 1]")
    return kernels.mp_quantile(beta, q)


def h_star(a, beta):
    """Optimal singular value shrinker for noise-normalised singular value ``a``.

    Zero below the bulk edge ``1 + sqrt(beta)``; at the edge itself the value
    is ``beta ** 0.25``.
    """
    a = np.asarray(a, dtype=float)
    t = a * a - beta - 1.0
    disc = np.maximum(t * t - 4.0 * beta, 0.0)
    val = np.sqrt(np.maximum(t + np.sqrt(disc), 0.0) / 2.0)
    return np.where(a >= 1.0 + math.sqrt(beta), val, 0.0)


def aspect_ratio(shape):
    t, d = shape
    return min(t, d) / max(t, d)


def shrink_singular_values(singvals, beta):
    s = np.asarray(singvals, dtype=float)
    _check_beta(beta)
    sigma_med = float(np.median(s))
    if sigma_med <= 0.0:
        raise NumericalError("median singular value is zero; cannot estimate the noise scale")
    kappa = sigma_med / math.sqrt(mp_quantile(beta, 0.5))
    shrunk = kappa * h_star(s / kappa, beta)
    return ShrinkageResult(
        kappa=kappa,
        shrunk_singvals=shrunk,
        max_rank=int(np.count_nonzero(shrunk > 0)),
        aspect_ratio=float(beta),
        sigma_med=sigma_med,
    )


def impute_noise(U, s, Vt, shrink, rng, noise_scale="paper"):
    """Imputed noise: signal components replaced by random MP-scale values.

    ``U, s, Vt`` is the thin SVD of the block. The leading ``max_rank``
    components get magnitude ``kappa * MP(beta)_{u_i}`` with ``u_i`` uniform;
    ``noise_scale="sqrt"`` uses ``kappa * sqrt(MP(beta)_{u_i})`` instead,
    which matches the singular-value scale of pure noise. The remaining
    components are copied from the input.
    """
    if noise_scale not in ("paper", "sqrt"):
        raise ConfigError(f"unknown noise_scale {noise_scale!r}")
    rng = as_generator(rng)
    r = shrink.max_rank
    u = rng.uniform(0.0, 1.0, size=r)
    mags = np.array(s, dtype=float, copy=True)
    if r:
        q = kernels.mp_quantile(shrink.aspect_ratio, u)
        if noise_scale == "sqrt":
            q = np.sqrt(q)
        mags[:r] = shrink.kappa * q
    return (U * mags) @ Vt


def _pct(x, q):
    return float(np.percentile(x, q))


def rotational_bootstrap(X, L=100, xi=0.5, rng=None, noise_scale="paper", threads=None):
    """Estimate the signal rank of one block.

    Returns ``(r_hat, BootstrapDiagnostics)``. Random-direction bounds use
    ``M = L`` replications drawn alongside the bootstrap replicates.
    """
    if L < 1:
        raise ConfigError("need at least one bootstrap replication")
    if not (0.0 < xi <= 1.0):
        raise ConfigError(f"xi must lie in (0, 1], got {xi}")
    if xi > 0.5:
        warnings.warn("xi above 0.5 tends to over-estimate ranks", stacklevel=2)
    rng = as_generator(rng)
    X = np.asarray(X, dtype=float)
    T, d = X.shape
    beta = aspect_ratio(X.shape)
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    shrink = shrink_singular_values(s, beta)
    rmax = shrink.max_rank
    if rmax == 0:
        return 0, BootstrapDiagnostics(0, shrink.kappa, [], [], float("nan"), float("nan"), 0, 0, degenerate=True)

    E = impute_noise(U, s, Vt, shrink, rng, noise_scale=noise_scale)
    sig = shrink.shrunk_singvals[:rmax]
    children = split(rng, L)

    def one(child):
        Ub = random_orthonormal(T, rmax, child)
        Vb = random_orthonormal(d, rmax, child)
        Xb = (Ub * sig) @ Vb.T + E
        Uh, _, Vht = np.linalg.svd(Xb, full_matrices=False)
        GU = Ub.T @ Uh[:, :rmax]
        GV = Vb.T @ Vht[:rmax].T
        # random-direction candidates for this replicate
        Ur, Wr = random_orthonormal(T, rmax, child), random_orthonormal(T, rmax, child)
        Vr, Zr = random_orthonormal(d, rmax, child), random_orthonormal(d, rmax, child)
        RU, RV = Ur.T @ Wr, Vr.T @ Zr
        out = np.empty((4, rmax))
        for r in range(1, rmax + 1):
            for row, G in enumerate((GU, GV, RU, RV)):
                smin = np.linalg.svd(G[:, :r], compute_uv=False)[-1]
                out[row, r - 1] = math.acos(min(1.0, max(-1.0, smin)))
        return out

    res = np.stack(pmap(one, children, threads=threads))  # (L, 4, rmax)
    pct_U = np.percentile(res[:, 0, :], 95, axis=0)
    pct_V = np.percentile(res[:, 1, :], 95, axis=0)
    theta0_U = _pct(res[:, 2, :], 5)
    theta0_V = _pct(res[:, 3, :], 5)
    count_U = int(np.sum(pct_U < xi * theta0_U))
    count_V = int(np.sum(pct_V < xi * theta0_V))
    diag = BootstrapDiagnostics(
        max_rank=rmax,
        kappa=shrink.kappa,
        angle_pct_U=[float(v) for v in pct_U],
        angle_pct_V=[float(v) for v in pct_V],
        theta0_U=theta0_U,
        theta0_V=theta0_V,
        count_U=count_U,
        count_V=count_V,
    )
    return min(count_U, count_V), diag


def majority_vote(ranks):
    """Mode of ``ranks``; ties go to the smallest value."""
    ranks = [int(r) for r in ranks]
    if not ranks:
        raise ConfigError("majority vote needs at least one rank")
    values, counts = np.unique(ranks, return_counts=True)
    return int(values[np.argmax(counts)])


def select_ranks(dataset, L=100, xi=0.5, seed=0, noise_scale="paper", threads=None):
    """Run the bootstrap on every subject and vote; returns a :class:`RankReport`."""
    rng = stream(seed, "rank")
    children = split(rng, len(dataset))

    def one(args):
        block, child = args
        return rotational_bootstrap(block.values, L=L, xi=xi, rng=child, noise_scale=noise_scale, threads=1)

    results = pmap(one, list(zip(dataset.blocks, children)), threads=threads)
    ranks = {b.subject_id: r for b, (r, _) in zip(dataset.blocks, results)}
    diags = {b.subject_id: dg for b, (_, dg) in zip(dataset.blocks, results)}
    nonzero = [r for r in ranks.values() if r > 0]
    voted = majority_vote(nonzero) if nonzero else 0
    log.info("rank selection: per-subject %s, voted %d", list(ranks.values()), voted)
    return RankReport(ranks, diags, xi, L, voted, {b.subject_id: b.group for b in dataset.blocks})
