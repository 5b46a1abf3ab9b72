"""Evaluation measures: Tucker congruence, structure R^2 and RMSE."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def congruence(M, M_hat):
    """Tucker congruence ``<M, M_hat> / (|M| |M_hat|)`` of the vectorised inputs."""
    a = np.asarray(M, dtype=float).ravel()
    b = np.asarray(M_hat, dtype=float).ravel()
    if a.shape != b.shape:
        raise ConfigError(f"shape mismatch {np.shape(M)} vs {np.shape(M_hat)}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ConfigError("congruence is undefined for zero-norm input")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def column_congruence(M, M_hat):
    """Mean of the per-column congruence coefficients."""
    M = np.asarray(M, dtype=float)
    M_hat = np.asarray(M_hat, dtype=float)
    if M.shape != M_hat.shape:
        raise ConfigError(f"shape mismatch {M.shape} vs {M_hat.shape}")
    if M.ndim == 1:
        return congruence(M, M_hat)
    return float(np.mean([congruence(M[:, j], M_hat[:, j]) for j in range(M.shape[1])]))


def r2_structure(X_blocks, fitted_blocks):
    """Mean over subjects of ``1 - |X_k - fit_k|^2 / |X_k|^2`` (not clamped)."""
    if len(X_blocks) != len(fitted_blocks) or not X_blocks:
        raise ConfigError("need matching, non-empty block lists")
    vals = []
    for X, Fh in zip(X_blocks, fitted_blocks):
        X = np.asarray(X, dtype=float)
        Fh = np.asarray(Fh, dtype=float)
        if X.shape != Fh.shape:
            raise ConfigError(f"shape mismatch {X.shape} vs {Fh.shape}")
        nx = np.sum(X * X)
        if nx == 0:
            raise ConfigError("R^2 is undefined for a zero block")
        vals.append(1.0 - np.sum((X - Fh) ** 2) / nx)
    return float(np.mean(vals))


def rmse_structure(truth_blocks, fitted_blocks):
    """``sqrt(mean_k |truth_k - fit_k|^2 / (T_k d))``."""
    if len(truth_blocks) != len(fitted_blocks) or not truth_blocks:
        raise ConfigError("need matching, non-empty block lists")
    acc = 0.0
    for Y, Fh in zip(truth_blocks, fitted_blocks):
        Y = np.asarray(Y, dtype=float)
        Fh = np.asarray(Fh, dtype=float)
        if Y.shape != Fh.shape:
            raise ConfigError(f"shape mismatch {Y.shape} vs {Fh.shape}")
        acc += np.sum((Y - Fh) ** 2) / Y.size
    return float(np.sqrt(acc / len(truth_blocks)))
