"""Data generating process for the two-group dynamic factor model.

Joint loadings occupy a random half of the variables, each group's loadings
a disjoint quarter, so the joint and group loading spaces are orthogonal by
construction. Scaled factors follow stationary VAR(1) processes whose
transitions solve ``Phi = Psi Phi Psi' + sigma_xi I`` for a fixed
correlation ``Phi``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import kernels
from .data import GroundTruth, MultiBlockDataset, TimeSeriesBlock
from .errors import ConfigError, NumericalError
from .seeding import stream

# banded correlation pattern used for correlated ("type 1") factors
_TYPE1_BAND = (1.0, -0.6, 0.3, -0.1)
DEFAULT_SIGMA_XI = {1: 0.2, 2: 0.3}


@dataclass(frozen=True)
class SimulationConfig:
    d: int = 100
    T: int = 200
    K: int = 10
    r_J: int = 2
    r_G: int = 2
    corr_type: int = 1
    c: float = 1.0
    sigma_xi: float | None = None
    sigma_eps: float = 1.0
    seed: int = 0
    burn_in: int = 200
    # oracle option: rescale each subject's scaled factors so their sample
    # cross-products equal T * Phi exactly (the model then holds without
    # sampling error in the factor covariance)
    exact_cross_products: bool = False

    def __post_init__(self):
        if self.sigma_xi is None:
            object.__setattr__(self, "sigma_xi", DEFAULT_SIGMA_XI.get(self.corr_type, 0.2))
        self.validate()

    def validate(self):
        if self.corr_type not in (1, 2):
            raise ConfigError(f"corr_type must be 1 or 2, got {self.corr_type}")
        if min(self.d, self.T, self.K) < 1 or self.r_J < 0 or self.r_G < 0:
            raise ConfigError("d, T, K must be positive and ranks non-negative")
        if self.d < 4:
            raise ConfigError("need d >= 4 so that every loading support is non-empty")
        if self.r_J + self.r_G > min(self.d, self.T):
            raise ConfigError("r_J + r_G must not exceed min(d, T)")
        if self.c <= 0 or self.sigma_eps < 0 or self.sigma_xi <= 0:
            raise ConfigError("c and sigma_xi must be positive, sigma_eps non-negative")
        for r in (self.r_J, self.r_G):
            if r:
                lam = np.linalg.eigvalsh(factor_correlation(r, self.corr_type))[0]
                if lam <= self.sigma_xi:
                    raise ConfigError(
                        f"smallest eigenvalue of Phi ({lam:.3f}) must exceed sigma_xi ({self.sigma_xi})"
                    )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        fields = cls.__dataclass_fields__
        unknown = set(obj) - set(fields)
        if unknown:
            raise ConfigError(f"unknown simulation config keys: {sorted(unknown)}")
        return cls(**obj)

    def with_(self, **kw):
        return replace(self, **kw)


def factor_correlation(r, corr_type):
    """Correlation ``Phi`` of the scaled factors (banded for type 1, identity for type 2)."""
    if corr_type == 2:
        return np.eye(r)
    if r > len(_TYPE1_BAND):
        raise ConfigError(f"type-1 correlation is only defined for r <= {len(_TYPE1_BAND)}, got {r}")
    idx = np.abs(np.subtract.outer(np.arange(r), np.arange(r)))
    return np.asarray(_TYPE1_BAND)[idx]


def solve_stationary_transition(Phi, sigma_xi):
    """Symmetric stable ``Psi`` with ``Phi = Psi Phi Psi' + sigma_xi I``.

    ``Phi`` and ``Phi - sigma_xi I`` share eigenvectors, so with
    ``Phi = Q diag(lam) Q'`` the solution is ``Q diag(sqrt((lam - s) / lam)) Q'``.
    """
    Phi = np.asarray(Phi, dtype=float)
    if sigma_xi <= 0:
        raise ConfigError("sigma_xi must be positive")
    lam, Q = np.linalg.eigh((Phi + Phi.T) / 2)
    if lam[0] <= sigma_xi:
        raise ConfigError(f"smallest eigenvalue of Phi ({lam[0]}) must exceed sigma_xi ({sigma_xi})")
    return (Q * np.sqrt((lam - sigma_xi) / lam)) @ Q.T


def gen_loadings(d, r_J, r_G, rng):
    """Disjoint-support loadings: half the rows joint, a quarter per group."""
    if d < 4:
        raise ConfigError("need d >= 4")
    perm = rng.permutation(d)
    n_joint = d // 2
    n_g1 = (d - n_joint) // 2
    rows_j = perm[:n_joint]
    rows_1 = perm[n_joint:n_joint + n_g1]
    rows_2 = perm[n_joint + n_g1:]
    B_j = np.zeros((d, r_J))
    B_1 = np.zeros((d, r_G))
    B_2 = np.zeros((d, r_G))
    B_j[rows_j] = rng.uniform(0.0, 1.0, size=(rows_j.size, r_J))
    B_1[rows_1] = rng.uniform(0.0, 1.0, size=(rows_1.size, r_G))
    B_2[rows_2] = rng.uniform(0.0, 1.0, size=(rows_2.size, r_G))
    return B_j, B_1, B_2


def scale_matrix(r, c):
    return math.sqrt(c) * np.diag(4.0 + np.arange(1, r + 1))


def _var1_path(Psi, Phi, sigma_xi, T, burn_in, rng):
    r = Psi.shape[0]
    if r == 0:
        return np.zeros((T, 0))
    x0 = rng.multivariate_normal(np.zeros(r), Phi)
    innov = math.sqrt(sigma_xi) * rng.standard_normal((burn_in + T, r))
    return kernels.var1_simulate(Psi, innov, x0)[burn_in:]


def _match_cross_product(A, Phi):
    """Linear map of ``A`` whose cross-product is exactly ``T * Phi``."""
    T = A.shape[0]
    if A.shape[1] == 0:
        return A
    lam, Q = np.linalg.eigh(A.T @ A)
    inv_sqrt = (Q / np.sqrt(lam)) @ Q.T
    lam2, Q2 = np.linalg.eigh(T * Phi)
    target = (Q2 * np.sqrt(lam2)) @ Q2.T
    return A @ inv_sqrt @ target


def simulate_dataset(config, rng=None):
    """Draw a dataset and its ground truth.

    Subjects ``s001..s{K}`` form group 1 and the next ``K`` group 2. The
    result is fully determined by ``config.seed`` unless ``rng`` is given.
    """
    cfg = config
    if rng is None:
        rng = stream(cfg.seed, "sim")
    B_j, B_1, B_2 = gen_loadings(cfg.d, cfg.r_J, cfg.r_G, rng)
    Phi_j = factor_correlation(cfg.r_J, cfg.corr_type) if cfg.r_J else np.zeros((0, 0))
    Phi_g = factor_correlation(cfg.r_G, cfg.corr_type) if cfg.r_G else np.zeros((0, 0))
    Psi_j = solve_stationary_transition(Phi_j, cfg.sigma_xi) if cfg.r_J else np.zeros((0, 0))
    Psi_g = solve_stationary_transition(Phi_g, cfg.sigma_xi) if cfg.r_G else np.zeros((0, 0))
    C_j = scale_matrix(cfg.r_J, cfg.c)
    C_g = scale_matrix(cfg.r_G, cfg.c)
    noise_sd = math.sqrt(cfg.sigma_eps)

    blocks, F_joint, F_group, groups = [], [], [], []
    width = max(3, len(str(2 * cfg.K)))
    for k in range(2 * cfg.K):
        g = 1 if k < cfg.K else 2
        A_j = _var1_path(Psi_j, Phi_j, cfg.sigma_xi, cfg.T, cfg.burn_in, rng)
        A_g = _var1_path(Psi_g, Phi_g, cfg.sigma_xi, cfg.T, cfg.burn_in, rng)
        if cfg.exact_cross_products:
            A_j = _match_cross_product(A_j, Phi_j)
            A_g = _match_cross_product(A_g, Phi_g)
        Fj = A_j @ C_j
        Fg = A_g @ C_g
        Bg = B_1 if g == 1 else B_2
        X = Fj @ B_j.T + Fg @ Bg.T + noise_sd * rng.standard_normal((cfg.T, cfg.d))
        if not np.all(np.isfinite(X)):
            raise NumericalError("simulation produced non-finite values")
        blocks.append(TimeSeriesBlock(f"s{k + 1:0{width}d}", X, g))
        F_joint.append(Fj)
        F_group.append(Fg)
        groups.append(g)

    dataset = MultiBlockDataset(tuple(blocks), tuple(f"V{i + 1}" for i in range(cfg.d)))
    truth = GroundTruth(
        B_joint=B_j,
        B_group1=B_1,
        B_group2=B_2,
        F_joint=F_joint,
        F_group=F_group,
        Psi_joint=Psi_j,
        Psi_group=Psi_g,
        C_joint=[C_j] * (2 * cfg.K),
        C_group=[C_g] * (2 * cfg.K),
        Phi_joint=Phi_j,
        Phi_group=Phi_g,
        noise_var=cfg.sigma_eps,
        groups=np.array(groups),
    )
    return dataset, truth


def snr_value(config, truth):
    """Population signal-to-noise ratio, averaged over the two groups."""
    d = truth.B_joint.shape[0]
    noise = np.linalg.norm(truth.noise_var * np.eye(d))
    if noise == 0:
        return math.inf
    Cj, Cg = truth.C_joint[0], truth.C_group[0]
    joint = truth.B_joint @ Cj @ truth.Phi_joint @ Cj @ truth.B_joint.T
    vals = []
    for g in (1, 2):
        Bg = truth.B_group(g)
        vals.append(np.linalg.norm(joint + Bg @ Cg @ truth.Phi_group @ Cg @ Bg.T) / noise)
    return float(np.mean(vals))


def write_truth(truth, path, subjects=None):
    """Dump ground-truth parameters and factor paths as JSON."""
    obj = {
        "B_joint": truth.B_joint.tolist(),
        "B_group1": truth.B_group1.tolist(),
        "B_group2": truth.B_group2.tolist(),
        "Psi_joint": truth.Psi_joint.tolist(),
        "Psi_group": truth.Psi_group.tolist(),
        "Phi_joint": truth.Phi_joint.tolist(),
        "Phi_group": truth.Phi_group.tolist(),
        "C_joint": [np.diag(c).tolist() for c in truth.C_joint],
        "C_group": [np.diag(c).tolist() for c in truth.C_group],
        "F_joint": [f.tolist() for f in truth.F_joint],
        "F_group": [f.tolist() for f in truth.F_group],
        "noise_var": truth.noise_var,
        "groups": [int(g) for g in truth.groups],
        "subjects": list(subjects) if subjects is not None else None,
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)


def read_truth(path):
    """Inverse of :func:`write_truth`; returns ``(truth, subjects)``."""
    with open(path) as fh:
        obj = json.load(fh)

    def mat(x, r):
        a = np.asarray(x, dtype=float)
        return a.reshape(-1, r) if a.size == 0 else a

    rj = len(obj["C_joint"][0]) if obj["C_joint"] else 0
    rg = len(obj["C_group"][0]) if obj["C_group"] else 0
    truth = GroundTruth(
        B_joint=mat(obj["B_joint"], rj),
        B_group1=mat(obj["B_group1"], rg),
        B_group2=mat(obj["B_group2"], rg),
        F_joint=[mat(f, rj) for f in obj["F_joint"]],
        F_group=[mat(f, rg) for f in obj["F_group"]],
        Psi_joint=mat(obj["Psi_joint"], rj),
        Psi_group=mat(obj["Psi_group"], rg),
        C_joint=[np.diag(c) for c in obj["C_joint"]],
        C_group=[np.diag(c) for c in obj["C_group"]],
        Phi_joint=mat(obj["Phi_joint"], rj),
        Phi_group=mat(obj["Phi_group"], rg),
        noise_var=float(obj["noise_var"]),
        groups=np.asarray(obj["groups"], dtype=int),
    )
    return truth, obj.get("subjects")
