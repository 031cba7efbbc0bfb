"""Static-model baselines: independent per-step fits with orthogonal
alignment, and warm-started sequential fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import likelihood_gradients, log_likelihood
from .optim import AdamState


@dataclass
class StaticFit:
    """Point estimates for one time step and the objective they achieve."""

    U: np.ndarray
    V: np.ndarray
    objective: float


def static_objective(slices, t, U, V, sigma0_sq):
    """Count log-likelihood plus the zero-mean Gaussian regularizer."""
    reg = -0.5 * (np.sum(U**2) + np.sum(V**2)) / sigma0_sq
    return log_likelihood(slices, t, U, V) + float(reg)


def train_static(slices, t, init_u, init_v, hyper, rng=None, n_steps=None):
    """Adam ascent on the static objective from the given initialization."""
    U = np.array(init_u, dtype=float)
    V = np.array(init_v, dtype=float)
    if U.shape != V.shape:
        raise ValueError("word and context inits must have equal shapes")
    n_steps = hyper.n_static_steps if n_steps is None else n_steps
    opts = [
        AdamState(U.shape, hyper.lr_filter, hyper.beta1, hyper.beta2_filter,
                  hyper.adam_eps)
        for _ in range(2)
    ]
    for _ in range(n_steps):
        g_u, g_v = likelihood_gradients(slices, t, U, V)
        g_u -= U / hyper.sigma0_sq
        g_v -= V / hyper.sigma0_sq
        U += opts[0].step(g_u)
        V += opts[1].step(g_v)
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
            raise FloatingPointError(f"non-finite static fit at t={t}")
    return StaticFit(U, V, static_objective(slices, t, U, V, hyper.sigma0_sq))


def procrustes_align(U_ref, U_new):
    """Orthogonal matrix R minimizing ||U_new R - U_ref|| in Frobenius norm.

    Acts on the embedding-space axis; apply the same R to the context
    matrix so inner products are preserved.
    """
    U_ref = np.asarray(U_ref, dtype=float)
    U_new = np.asarray(U_new, dtype=float)
    if U_ref.shape != U_new.shape:
        raise ValueError("shapes must match for alignment")
    W, _, Z = np.linalg.svd(U_new.T @ U_ref)
    return W @ Z


@dataclass
class StaticTrajectory:
    fits: list               # unaligned per-step fits
    rotations: list          # per-step rotations (identity for warm starts)
    U: np.ndarray            # (T, L, d) aligned word trajectories
    V: np.ndarray
    grid: object


def _static_rng(seed, t):
    return np.random.default_rng([int(seed), 0x53544154, int(t)])


def run_sgi(slices, hyper, seed, dim=None, n_steps=None):
    """Independent per-step fits, chained Procrustes alignment afterwards.

    Each step is aligned onto the previous *aligned* step, so rotations
    compose along the chain.
    """
    L, d = slices.n_words, dim if dim is not None else hyper.dim
    fits = []
    for t in range(slices.n_steps):
        rng = _static_rng(seed, t)
        init_u = hyper.init_jitter * rng.standard_normal((L, d))
        init_v = hyper.init_jitter * rng.standard_normal((L, d))
        fits.append(train_static(slices, t, init_u, init_v, hyper, n_steps=n_steps))

    rotations = [np.eye(d)]
    U = [fits[0].U]
    V = [fits[0].V]
    for t in range(1, slices.n_steps):
        R = procrustes_align(U[-1], fits[t].U)
        rotations.append(R)
        U.append(fits[t].U @ R)
        V.append(fits[t].V @ R)
    return StaticTrajectory(fits, rotations, np.stack(U), np.stack(V), slices.grid)


def run_sgp(slices, hyper, seed, dim=None, n_steps=None):
    """Sequential fits, each warm-started from the previous estimates."""
    L, d = slices.n_words, dim if dim is not None else hyper.dim
    rng = _static_rng(seed, 0)
    init_u = hyper.init_jitter * rng.standard_normal((L, d))
    init_v = hyper.init_jitter * rng.standard_normal((L, d))
    fits = []
    for t in range(slices.n_steps):
        fit = train_static(slices, t, init_u, init_v, hyper, n_steps=n_steps)
        fits.append(fit)
        init_u, init_v = fit.U, fit.V
    U = np.stack([f.U for f in fits])
    V = np.stack([f.V for f in fits])
    return StaticTrajectory(fits, [np.eye(d)] * slices.n_steps, U, V, slices.grid)
