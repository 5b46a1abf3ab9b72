"""Factor refitting, Yule-Walker VAR estimation and observation-level networks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError

COND_LIMIT = 1e12


@dataclass
class FactorDynamics:
    """Per-subject refitted factors and their VAR(p) fits."""

    subject: str
    group: int
    F_joint: np.ndarray
    F_group: np.ndarray
    Psi_joint: list
    Psi_group: list
    Sigma_eta_joint: np.ndarray
    Sigma_eta_group: np.ndarray
    Sigma_E: np.ndarray
    order: int = 1
    spectral_radius: dict = field(default_factory=dict)


@dataclass
class VarNetwork:
    Theta_joint: np.ndarray
    Theta_group: np.ndarray
    Sigma_zeta: np.ndarray

    @property
    def directed(self):
        return self.Theta_joint + self.Theta_group


def refit_factors(X, B_joint, B_group):
    """Least-squares factors ``X B (B'B)^-1`` for ``B = [B_joint B_group]``."""
    X = np.asarray(X, dtype=float)
    B = np.hstack([B_joint, B_group])
    if B.shape[1] == 0:
        return np.zeros((X.shape[0], 0)), np.zeros((X.shape[0], 0))
    G = B.T @ B
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NumericalError(f"stacked loadings are rank deficient (condition number {cond:.3g})")
    F = np.linalg.solve(G, B.T @ X.T).T
    rj = B_joint.shape[1]
    return F[:, :rj], F[:, rj:]


def autocovariances(F, max_lag):
    """Biased (1/T) autocovariances ``Gamma(h) = E[F_t F_{t-h}']``, h = 0..max_lag."""
    F = np.asarray(F, dtype=float)
    T = F.shape[0]
    return [F[h:].T @ F[: T - h] / T for h in range(max_lag + 1)]


def yule_walker_from_autocov(gammas, p):
    """Solve the Yule-Walker system given ``Gamma(0..p)``.

    Returns ``(Psi list, Sigma_eta)``.
    """
    r = gammas[0].shape[0]
    if r == 0:
        return [np.zeros((0, 0)) for _ in range(p)], np.zeros((0, 0))

    def gam(h):
        return gammas[h] if h >= 0 else gammas[-h].T

    # [Gamma(1) .. Gamma(p)] = [Psi_1 .. Psi_p] G, G block (i, h) = Gamma(h - i)
    G = np.block([[gam(h - i) for h in range(1, p + 1)] for i in range(1, p + 1)])
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NumericalError(f"singular autocovariance system (condition number {cond:.3g})")
    rhs = np.hstack([gammas[h] for h in range(1, p + 1)])
    coef = np.linalg.solve(G.T, rhs.T).T
    psis = [coef[:, i * r:(i + 1) * r] for i in range(p)]
    sigma = gammas[0] - sum(psis[i] @ gammas[i + 1].T for i in range(p))
    return psis, (sigma + sigma.T) / 2


def yule_walker(F, p=1, demean=True):
    F = np.asarray(F, dtype=float)
    T, r = F.shape
    if p < 1:
        raise ConfigError("VAR order must be >= 1")
    if T <= p * r:
        raise ConfigError(f"need T > p*r ({T} <= {p * r})")
    if demean:
        F = F - F.mean(axis=0)
    return yule_walker_from_autocov(autocovariances(F, p), p)


def companion_spectral_radius(psis):
    r = psis[0].shape[0] if psis else 0
    if r == 0:
        return 0.0
    p = len(psis)
    top = np.hstack(psis)
    if p == 1:
        comp = top
    else:
        comp = np.vstack([top, np.eye(r * (p - 1), r * p)])
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def _theta(B, Psi):
    if B.shape[1] == 0:
        return np.zeros((B.shape[0], B.shape[0]))
    G = B.T @ B
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NumericalError(f"singular B'B (condition number {cond:.3g})")
    return B @ Psi @ np.linalg.solve(G, B.T)


def build_network(B_joint, B_group, Psi_joint, Psi_group, Sigma_E, Sigma_eta_joint, Sigma_eta_group,
                  covariance="paper"):
    """Observation-level VAR(1): transitions ``B Psi (B'B)^-1 B'`` and noise covariance.

    ``covariance="paper"`` evaluates
    ``(Theta_J + Theta_G)(I + Sigma_E) + B_J S_J B_J' + B_G S_G B_G'``;
    ``covariance="derived"`` uses the covariance of
    ``zeta_t = B eta_t + E_t - Theta E_{t-1}``, i.e.
    ``Sigma_E + Theta Sigma_E Theta' + B_J S_J B_J' + B_G S_G B_G'``.
    Transition lists of length != 1 are rejected.
    """
    if isinstance(Psi_joint, (list, tuple)):
        if len(Psi_joint) != 1:
            raise ConfigError("network conversion needs a VAR(1) fit")
        Psi_joint = Psi_joint[0]
    if isinstance(Psi_group, (list, tuple)):
        if len(Psi_group) != 1:
            raise ConfigError("network conversion needs a VAR(1) fit")
        Psi_group = Psi_group[0]
    d = B_joint.shape[0]
    Sigma_E = np.asarray(Sigma_E, dtype=float)
    if Sigma_E.ndim == 1:
        Sigma_E = np.diag(Sigma_E)
    Th_j = _theta(B_joint, Psi_joint)
    Th_g = _theta(B_group, Psi_group)
    Th = Th_j + Th_g
    fac = B_joint @ Sigma_eta_joint @ B_joint.T + B_group @ Sigma_eta_group @ B_group.T
    if covariance == "paper":
        Sz = Th @ (np.eye(d) + Sigma_E) + fac
    elif covariance == "derived":
        Sz = Sigma_E + Th @ Sigma_E @ Th.T + fac
        Sz = (Sz + Sz.T) / 2
    else:
        raise ConfigError(f"unknown covariance mode {covariance!r}")
    return VarNetwork(Th_j, Th_g, Sz)


def residual_noise_variance(X, F_joint, F_group, B_joint, B_group):
    """Diagonal of the per-variable residual covariance after refitting."""
    resid = X - F_joint @ B_joint.T - F_group @ B_group.T
    resid = resid - resid.mean(axis=0)
    return np.mean(resid * resid, axis=0)


def fit_dynamics(subject, group, X, B_joint, B_group, p=1):
    """Refit one subject's factors and estimate both VAR(p) models."""
    Fj, Fg = refit_factors(X, B_joint, B_group)
    psi_j, s_j = yule_walker(Fj, p) if Fj.shape[1] else ([np.zeros((0, 0))] * p, np.zeros((0, 0)))
    psi_g, s_g = yule_walker(Fg, p) if Fg.shape[1] else ([np.zeros((0, 0))] * p, np.zeros((0, 0)))
    return FactorDynamics(
        subject=subject,
        group=group,
        F_joint=Fj,
        F_group=Fg,
        Psi_joint=psi_j,
        Psi_group=psi_g,
        Sigma_eta_joint=s_j,
        Sigma_eta_group=s_g,
        Sigma_E=residual_noise_variance(X, Fj, Fg, B_joint, B_group),
        order=p,
        spectral_radius={"joint": companion_spectral_radius(psi_j), "group": companion_spectral_radius(psi_g)},
    )


def r2_per_variable(X, factor):
    """R^2 of each column of ``X`` regressed (with intercept) on one factor series.

    Returns ``(r2, zero_variance_flags)``; zero-variance columns get R^2 = 0.
    """
    X = np.asarray(X, dtype=float)
    f = np.asarray(factor, dtype=float).reshape(-1)
    if X.shape[0] != f.size:
        raise ConfigError("factor length does not match the number of time points")
    Xc = X - X.mean(axis=0)
    fc = f - f.mean()
    sxx = np.sum(Xc * Xc, axis=0)
    sff = float(fc @ fc)
    flags = sxx <= 1e-300
    if sff <= 1e-300:
        return np.zeros(X.shape[1]), flags
    sxf = fc @ Xc
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(flags, 0.0, sxf * sxf / (sff * np.where(flags, 1.0, sxx)))
    return r2, flags


def group_mean(mats):
    return np.mean(np.stack(mats), axis=0)
