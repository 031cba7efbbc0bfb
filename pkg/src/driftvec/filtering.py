"""Sequential variational trainer: one Gaussian factor per word and step,
conditioned on counts up to the current step only.

Variational factors are diagonal Gaussians; variances are optimized through
their logarithm so they stay positive under Adam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import log_sigmoid, sigmoid
from .optim import AdamState


@dataclass
class FilterPosterior:
    """Variational factors at one time step (means and diagonal variances)."""

    mu_u: np.ndarray
    var_u: np.ndarray
    mu_v: np.ndarray
    var_v: np.ndarray

    def __post_init__(self):
        for name in ("var_u", "var_v"):
            if np.any(getattr(self, name) <= 0):
                raise ValueError(f"{name} must be strictly positive")

    def arrays(self):
        return {
            "mu_u": self.mu_u, "var_u": self.var_u,
            "mu_v": self.mu_v, "var_v": self.var_v,
        }


def propagate_prior(mu_prev, var_prev, sigma_t_sq, sigma0_sq):
    """Closed-form one-step-ahead prior from the previous posterior.

    Diffuse the previous factor by the transition variance, then blend in
    the overall zero-mean prior.  Returns ``(mu, var)``.
    """
    if sigma_t_sq <= 0:
        raise ValueError("transition variance must be positive")
    var_prev = np.asarray(var_prev, dtype=float)
    if np.any(var_prev <= 0):
        raise ValueError("previous variances must be positive")
    widened = var_prev + sigma_t_sq
    inv0 = 0.0 if math.isinf(sigma0_sq) else 1.0 / sigma0_sq
    var = 1.0 / (1.0 / widened + inv0)
    mu = var * np.asarray(mu_prev, dtype=float) / widened
    return mu, var


def initial_prior(shape, sigma0_sq):
    return np.zeros(shape), np.full(shape, float(sigma0_sq))


def _gaussian_cross_entropy(mu, var, prior_mu, prior_var):
    """E_q[log p] for diagonal Gaussians q and p."""
    return -0.5 * float(
        np.sum(np.log(2 * math.pi * prior_var) + (var + (mu - prior_mu) ** 2) / prior_var)
    )


def _gaussian_entropy(var):
    return 0.5 * float(np.sum(np.log(2 * math.pi * math.e * var)))


def _likelihood_value_and_gamma(slices, t, U, V):
    """Sampled log-likelihood and its gradients w.r.t. every row of U and V."""
    if slices.evidence_free(t):
        z = np.zeros_like(U)
        return 0.0, z, np.zeros_like(V)
    X = U @ V.T
    npd = slices.positive_dense(t)
    nm = slices.negative_dense(t)
    value = float(np.sum(npd * log_sigmoid(X)) + np.sum(nm * log_sigmoid(-X)))
    W = (npd + nm) * sigmoid(-X) - nm
    return value, W @ V, W.T @ U


def elbo_estimate(mu_u, lv_u, mu_v, lv_v, prior, slices, t, eps_u, eps_v):
    """Single-sample ELBO with entropy and prior terms in closed form.

    ``prior`` is ``(pmu_u, pvar_u, pmu_v, pvar_v)``.  Deterministic given the
    noise draws, which makes it finite-differentiable against
    :func:`elbo_gradients` with common random numbers.
    """
    pmu_u, pvar_u, pmu_v, pvar_v = prior
    su, sv = np.exp(0.5 * lv_u), np.exp(0.5 * lv_v)
    lik, _, _ = _likelihood_value_and_gamma(
        slices, t, mu_u + su * eps_u, mu_v + sv * eps_v
    )
    return (
        lik
        + _gaussian_cross_entropy(mu_u, su**2, pmu_u, pvar_u)
        + _gaussian_cross_entropy(mu_v, sv**2, pmu_v, pvar_v)
        + _gaussian_entropy(su**2)
        + _gaussian_entropy(sv**2)
    )


def elbo_gradients(mu_u, lv_u, mu_v, lv_v, prior, slices, t, eps_u, eps_v):
    """Exact gradient of :func:`elbo_estimate` at fixed noise.

    Returns ``(value, g_mu_u, g_lv_u, g_mu_v, g_lv_v)``; the value is reused
    for convergence monitoring.
    """
    pmu_u, pvar_u, pmu_v, pvar_v = prior
    su, sv = np.exp(0.5 * lv_u), np.exp(0.5 * lv_v)
    U = mu_u + su * eps_u
    V = mu_v + sv * eps_v
    lik, gamma_u, gamma_v = _likelihood_value_and_gamma(slices, t, U, V)

    g_mu_u = gamma_u - (mu_u - pmu_u) / pvar_u
    g_mu_v = gamma_v - (mu_v - pmu_v) / pvar_v
    # d/d log-variance: reparameterized likelihood + closed-form KL pieces
    g_lv_u = gamma_u * (0.5 * su * eps_u) - 0.5 * su**2 / pvar_u + 0.5
    g_lv_v = gamma_v * (0.5 * sv * eps_v) - 0.5 * sv**2 / pvar_v + 0.5

    value = (
        lik
        + _gaussian_cross_entropy(mu_u, su**2, pmu_u, pvar_u)
        + _gaussian_cross_entropy(mu_v, sv**2, pmu_v, pvar_v)
        + _gaussian_entropy(su**2)
        + _gaussian_entropy(sv**2)
    )
    return value, g_mu_u, g_lv_u, g_mu_v, g_lv_v


def filter_step(prior, slices, t, hyper, rng, init=None, log=None):
    """Optimize the variational factors for one time step.

    ``prior`` is the propagated prior tuple; optimization starts from
    ``init`` (defaults to the prior itself).  Early-stops once the windowed
    ELBO mean improves by less than ``hyper.elbo_tol``.
    """
    pmu_u, pvar_u, pmu_v, pvar_v = prior
    if init is None:
        init = (pmu_u, pvar_u, pmu_v, pvar_v)
    mu_u = np.array(init[0], dtype=float)
    lv_u = np.log(np.array(init[1], dtype=float))
    mu_v = np.array(init[2], dtype=float)
    lv_v = np.log(np.array(init[3], dtype=float))

    opts = {
        name: AdamState(
            mu_u.shape, hyper.lr_filter, hyper.beta1, hyper.beta2_filter, hyper.adam_eps
        )
        for name in ("mu_u", "lv_u", "mu_v", "lv_v")
    }
    window = hyper.elbo_window
    history = []
    for step in range(hyper.n_filter_steps):
        eps_u = rng.standard_normal(mu_u.shape)
        eps_v = rng.standard_normal(mu_v.shape)
        value, g_mu_u, g_lv_u, g_mu_v, g_lv_v = elbo_gradients(
            mu_u, lv_u, mu_v, lv_v, prior, slices, t, eps_u, eps_v
        )
        mu_u += opts["mu_u"].step(g_mu_u)
        lv_u += opts["lv_u"].step(g_lv_u)
        mu_v += opts["mu_v"].step(g_mu_v)
        lv_v += opts["lv_v"].step(g_lv_v)
        history.append(value)
        if log is not None and step % hyper.log_every == 0:
            log(t, step, value)
        if len(history) >= 2 * window:
            recent = np.mean(history[-window:])
            earlier = np.mean(history[-2 * window : -window])
            if recent - earlier < hyper.elbo_tol:
                break
    post = FilterPosterior(mu_u, np.exp(lv_u), mu_v, np.exp(lv_v))
    if not all(np.all(np.isfinite(a)) for a in post.arrays().values()):
        raise FloatingPointError(f"non-finite filter posterior at step t={t}")
    return post, history


@dataclass
class FilterResult:
    posteriors: list
    grid: object
    U: np.ndarray = field(init=False)   # (T, L, d) posterior means
    V: np.ndarray = field(init=False)

    def __post_init__(self):
        self.U = np.stack([p.mu_u for p in self.posteriors])
        self.V = np.stack([p.mu_v for p in self.posteriors])


def step_rng(seed, t):
    """Per-time-step random stream; resuming at t reproduces the full run."""
    return np.random.default_rng([int(seed), 0x46494C54, int(t)])


def run_filter(slices, hyper, seed, dim=None, start_from=None, log=None):
    """Sequential pass over all time steps.

    ``start_from=(t0, posteriors)`` resumes after a completed step ``t0``.
    Yields deterministic output for a fixed seed.
    """
    L = slices.n_words
    d = dim if dim is not None else hyper.dim
    shape = (L, d)
    posteriors = []
    t_start = 0
    if start_from is not None:
        t_start = start_from[0] + 1
        posteriors = list(start_from[1])

    for t in range(t_start, slices.n_steps):
        if t == 0:
            pmu, pvar = initial_prior(shape, hyper.sigma0_sq)
            prior = (pmu, pvar, pmu.copy(), pvar.copy())
            rng = step_rng(seed, t)
            jitter = hyper.init_jitter
            init = (
                jitter * rng.standard_normal(shape),
                pvar,
                jitter * rng.standard_normal(shape),
                pvar.copy(),
            )
        else:
            prev = posteriors[t - 1]
            sig_sq = slices.grid.step_variances[t - 1]
            pmu_u, pvar_u = propagate_prior(prev.mu_u, prev.var_u, sig_sq, hyper.sigma0_sq)
            pmu_v, pvar_v = propagate_prior(prev.mu_v, prev.var_v, sig_sq, hyper.sigma0_sq)
            prior = (pmu_u, pvar_u, pmu_v, pvar_v)
            rng = step_rng(seed, t)
            init = None
        post, _ = filter_step(prior, slices, t, hyper, rng, init=init, log=log)
        posteriors.append(post)
    return FilterResult(posteriors, slices.grid)
