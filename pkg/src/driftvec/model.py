"""Probabilistic core: sigmoid likelihood, transition prior, joint density.

Embeddings at one time step are stored as ``(L, d)`` arrays (one row per
vocabulary item); trajectories as ``(T, L, d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def log_sigmoid(x):
    """Numerically stable ``log(1 / (1 + exp(-x)))``, elementwise."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = -np.log1p(np.exp(-x[pos]))
    out[~pos] = x[~pos] - np.log1p(np.exp(x[~pos]))
    return out


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")


def log_likelihood(slices, t: int, U: np.ndarray, V: np.ndarray) -> float:
    """Sigmoid log-likelihood of the counts at step ``t``.

    The positive term runs over the sparse support of the positive counts;
    the negative term exploits the rank-1 structure of the negative counts:
    sum_ij n-_ij log sig(-u_i.v_j) = total * eta * P^T M P' with
    M = log sig(-U V^T).
    """
    _check_finite("U", U)
    _check_finite("V", V)
    n_plus = slices.positive[t]
    total = 0.0
    if n_plus.nnz:
        coo = n_plus.tocoo()
        x = np.einsum("nd,nd->n", U[coo.row], V[coo.col])
        total += float(coo.data @ log_sigmoid(x))
    neg_mass = slices.negative_total(t)
    if neg_mass > 0:
        M = log_sigmoid(-(U @ V.T))
        total += neg_mass * float(
            slices.word_dist[t] @ M @ slices.context_dist[t]
        )
    return total


def likelihood_gradients(slices, t: int, U: np.ndarray, V: np.ndarray):
    """Exact gradient of ``log_likelihood`` w.r.t. every word and context row.

    Returns ``(G_u, G_v)``, each ``(L, d)``.  Dense in the vocabulary; meant
    for desk-scale corpora.
    """
    _check_finite("U", U)
    _check_finite("V", V)
    S = sigmoid(-(U @ V.T))
    npd = slices.positive_dense(t)
    nm = slices.negative_dense(t)
    W = (npd + nm) * S - nm
    return W @ V, W.T @ U


@dataclass(frozen=True)
class TransitionParams:
    """One-step transition kernel: next ~ N(damping * current, variance)."""

    damping: float
    variance: float


def transition_params(sigma_t_sq: float, sigma0_sq: float) -> TransitionParams:
    if sigma_t_sq <= 0:
        raise ValueError("transition variance must be positive")
    if sigma0_sq <= 0:
        raise ValueError("overall prior variance must be positive")
    damping = 1.0 / (1.0 + sigma_t_sq / sigma0_sq)
    variance = 1.0 / (1.0 / sigma_t_sq + 1.0 / sigma0_sq)
    return TransitionParams(damping=damping, variance=variance)


def step_variance(diffusion: float, tau_a: float, tau_b: float) -> float:
    """Transition variance accumulated between consecutive time stamps."""
    if tau_b <= tau_a:
        raise ValueError(f"timestamps must increase, got {tau_a} -> {tau_b}")
    return diffusion * (tau_b - tau_a)


def prior_precision(T: int, step_vars, sigma0_sq: float):
    """Tridiagonal precision of the zero-mean trajectory prior.

    Returns ``(diag, offdiag)`` with shapes ``(T,)`` and ``(T-1,)``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    step_vars = np.asarray(step_vars, dtype=float)
    if step_vars.shape != (T - 1,):
        raise ValueError(f"expected {T - 1} step variances, got {step_vars.shape}")
    if np.any(step_vars <= 0):
        raise ValueError("step variances must be positive")
    inv0 = 0.0 if math.isinf(sigma0_sq) else 1.0 / sigma0_sq
    inv = 1.0 / step_vars
    diag = np.full(T, inv0)
    diag[:-1] += inv
    diag[1:] += inv
    off = -inv
    return diag, off


def prior_precision_dense(T, step_vars, sigma0_sq):
    diag, off = prior_precision(T, step_vars, sigma0_sq)
    Pi = np.diag(diag)
    idx = np.arange(T - 1)
    Pi[idx, idx + 1] = off
    Pi[idx + 1, idx] = off
    return Pi


def _gauss_logpdf(x, mean, var):
    return -0.5 * (np.log(2.0 * math.pi * var) + (x - mean) ** 2 / var)


def log_joint(U, V, slices, grid, sigma0_sq: float) -> float:
    """Log of the joint density of a full trajectory and all count slices.

    Diagnostics only; the trainers never evaluate this.
    """
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    _check_finite("U", U)
    _check_finite("V", V)
    T = U.shape[0]
    total = float(np.sum(_gauss_logpdf(U[0], 0.0, sigma0_sq)))
    total += float(np.sum(_gauss_logpdf(V[0], 0.0, sigma0_sq)))
    for t in range(1, T):
        kern = transition_params(grid.step_variances[t - 1], sigma0_sq)
        total += float(np.sum(_gauss_logpdf(U[t], kern.damping * U[t - 1], kern.variance)))
        total += float(np.sum(_gauss_logpdf(V[t], kern.damping * V[t - 1], kern.variance)))
    for t in range(T):
        total += log_likelihood(slices, t, U[t], V[t])
    return total
