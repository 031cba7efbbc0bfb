"""Joint variational trainer over all time steps.

Each (word, dimension) factor is a length-T Gaussian whose precision is
parameterized by its upper-bidiagonal Cholesky factor B (diagonal ``nu``,
superdiagonal ``om``), so sampling, gradient estimation, and the mean
reparameterization all run in linear time and memory in T.

All kernels operate on the trailing axis of ``(..., T)`` arrays and never
materialize a T-by-T matrix.
"""

from __future__ import annotations

import numpy as np

from .model import log_sigmoid, sigmoid, prior_precision
from .optim import AdamState, mirror_ascent_update


# ---------------------------------------------------------------------------
# bidiagonal / tridiagonal kernels


def _bshape(*arrays):
    return np.broadcast_shapes(*(np.shape(a) for a in arrays))


def apply_upper_bidiag(nu, om, x):
    """B x for upper-bidiagonal B."""
    nu, om, x = np.asarray(nu), np.asarray(om), np.asarray(x)
    out = np.empty(_bshape(nu, x))
    out[...] = nu * x
    if out.shape[-1] > 1:
        out[..., :-1] += om * x[..., 1:]
    return out


def solve_upper_bidiag(nu, om, rhs):
    """Solve B x = rhs by back-substitution (linear in T)."""
    nu, om, rhs = np.asarray(nu), np.asarray(om), np.asarray(rhs)
    if np.any(nu <= 0):
        raise ValueError("Cholesky diagonal must be strictly positive")
    T = _bshape(nu, rhs)[-1]
    x = np.empty(_bshape(nu, rhs))
    x[..., T - 1] = rhs[..., -1] / nu[..., -1]
    for t in range(T - 2, -1, -1):
        x[..., t] = (rhs[..., t] - om[..., t] * x[..., t + 1]) / nu[..., t]
    return x


def solve_upper_bidiag_t(nu, om, rhs):
    """Solve B^T y = rhs by forward substitution (linear in T)."""
    nu, om, rhs = np.asarray(nu), np.asarray(om), np.asarray(rhs)
    if np.any(nu <= 0):
        raise ValueError("Cholesky diagonal must be strictly positive")
    T = _bshape(nu, rhs)[-1]
    y = np.empty(_bshape(nu, rhs))
    y[..., 0] = rhs[..., 0] / nu[..., 0]
    for t in range(1, T):
        y[..., t] = (rhs[..., t] - om[..., t - 1] * y[..., t - 1]) / nu[..., t]
    return y


def apply_tridiag(diag, off, x):
    """Symmetric tridiagonal matrix-vector product along the trailing axis."""
    diag, off, x = np.asarray(diag), np.asarray(off), np.asarray(x)
    out = np.empty(_bshape(diag, x))
    out[...] = diag * x
    if out.shape[-1] > 1:
        out[..., :-1] += off * x[..., 1:]
        out[..., 1:] += off * x[..., :-1]
    return out


def chol_tridiag(diag, off):
    """Upper-bidiagonal factor C of a tridiagonal SPD matrix, M = C^T C.

    Returns ``(c, e)`` (diagonal and superdiagonal).  Raises if the matrix
    is not positive definite.
    """
    diag = np.asarray(diag, dtype=float)
    off = np.asarray(off, dtype=float)
    T = diag.shape[-1]
    c = np.empty(T)
    e = np.empty(max(T - 1, 0))
    if diag[0] <= 0:
        raise ValueError("matrix is not positive definite")
    c[0] = np.sqrt(diag[0])
    for t in range(T - 1):
        e[t] = off[t] / c[t]
        rem = diag[t + 1] - e[t] ** 2
        if rem <= 0:
            raise ValueError("matrix is not positive definite")
        c[t + 1] = np.sqrt(rem)
    return c, e


def dense_precision(nu, om):
    """T-by-T precision B^T B from one factor's parameters (diagnostics)."""
    nu = np.asarray(nu, dtype=float)
    om = np.asarray(om, dtype=float)
    T = nu.shape[-1]
    B = np.zeros((T, T))
    B[np.arange(T), np.arange(T)] = nu
    if T > 1:
        B[np.arange(T - 1), np.arange(1, T)] = om
    return B.T @ B


# ---------------------------------------------------------------------------
# sampling, entropy, gradients


def sample_trajectory(mu, nu, om, eps):
    """Reparameterized sample u = mu + B^{-1} eps.  Returns ``(u, x)``."""
    x = solve_upper_bidiag(nu, om, eps)
    return mu + x, x


def entropy_term(nu):
    """Variational entropy up to an additive constant: -sum_t log nu_t."""
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 0):
        raise ValueError("nu must be strictly positive")
    return -np.sum(np.log(nu), axis=-1)


def grad_mu(gamma, pi_diag, pi_off, u):
    """Gradient of the sampled ELBO w.r.t. the mean trajectory."""
    return gamma - apply_tridiag(pi_diag, pi_off, u)


def grad_nu_omega(resid, nu, om, x):
    """Gradients w.r.t. the Cholesky parameters, via one bidiagonal solve.

    ``resid`` is the mean-gradient (likelihood pull minus prior pull) at the
    sample; ``x`` is the noise displacement from the same sample.
    """
    y = solve_upper_bidiag_t(nu, om, resid)
    g_nu = -y * x - 1.0 / nu
    g_om = -y[..., :-1] * x[..., 1:]
    return g_nu, g_om


# ---------------------------------------------------------------------------
# natural basis: mean trajectories optimized in prior-whitened coordinates


class NaturalBasis:
    """Change of basis mu = C^{-1} rho, with C the prior-precision factor.

    One coefficient then controls a prior-smooth global mode of the
    trajectory, so information propagates along time in a single update.
    """

    def __init__(self, pi_diag, pi_off):
        self.c, self.e = chol_tridiag(pi_diag, pi_off)

    def to_natural(self, mu):
        return apply_upper_bidiag(self.c, self.e, mu)

    def from_natural(self, rho):
        return solve_upper_bidiag(self.c, self.e, rho)

    def grad_to_natural(self, g_mu):
        """Chain rule: dL/drho = C^{-T} dL/dmu."""
        return solve_upper_bidiag_t(self.c, self.e, g_mu)


# ---------------------------------------------------------------------------
# likelihood models


class SkipGramLikelihood:
    """Count-based sigmoid likelihood evaluated on sampled trajectories."""

    def __init__(self, slices):
        self.slices = slices

    def gamma(self, u, v, rows, cols, scale_u, scale_v):
        """Likelihood pulls for the sampled rows/cols.

        ``u``: (n_rows, d, T) word samples; ``v``: (n_cols, d, T) context
        samples.  ``scale_u`` reweighs the context subsample, ``scale_v``
        the word subsample.
        """
        T = u.shape[-1]
        g_u = np.zeros_like(u)
        g_v = np.zeros_like(v)
        sl = self.slices
        for t in range(T):
            if sl.evidence_free(t):
                continue
            Ut, Vt = u[..., t], v[..., t]
            np_blk = sl.positive_block(t, rows, cols)
            nm_blk = sl.negative_block(t, rows, cols)
            W = (np_blk + nm_blk) * sigmoid(-(Ut @ Vt.T)) - nm_blk
            g_u[..., t] = scale_u * (W @ Vt)
            g_v[..., t] = scale_v * (W.T @ Ut)
        return g_u, g_v

    def value(self, u, v):
        """Full-batch log-likelihood of sampled trajectories (monitoring)."""
        sl = self.slices
        total = 0.0
        for t in range(u.shape[-1]):
            if sl.evidence_free(t):
                continue
            X = u[..., t] @ v[..., t].T
            total += float(
                np.sum(sl.positive_dense(t) * log_sigmoid(X))
                + np.sum(sl.negative_dense(t) * log_sigmoid(-X))
            )
        return total


class QuadraticLikelihood:
    """Injectable Gaussian test likelihood: log p = -0.5 sum a (u - b)^2.

    With this likelihood the optimal variational factors are available in
    closed form, which makes the trainer verifiable against a dense
    linear-Gaussian smoother.  Applies to the word side only.
    """

    def __init__(self, weight, target):
        self.weight = np.asarray(weight, dtype=float)   # (L, d, T) or broadcastable
        self.target = np.asarray(target, dtype=float)

    def gamma(self, u, v, rows, cols, scale_u, scale_v):
        g_u = self.weight[rows] * (self.target[rows] - u)
        return g_u, np.zeros_like(v)

    def value(self, u, v):
        return float(-0.5 * np.sum(self.weight * (u - self.target) ** 2))


# ---------------------------------------------------------------------------
# deterministic single-sample ELBO (for gradient verification)


def elbo_estimate(params_u, params_v, pi, likelihood, eps_u, eps_v):
    """Sampled ELBO, deterministic given the noise draws.

    ``params_* = (mu, nu, om)`` with shapes (L, d, T) / (L, d, T-1);
    ``pi = (diag, off)``.  Constant terms are dropped.
    """
    (mu_u, nu_u, om_u), (mu_v, nu_v, om_v) = params_u, params_v
    u, _ = sample_trajectory(mu_u, nu_u, om_u, eps_u)
    v, _ = sample_trajectory(mu_v, nu_v, om_v, eps_v)
    pi_diag, pi_off = pi
    prior = -0.5 * float(
        np.sum(u * apply_tridiag(pi_diag, pi_off, u))
        + np.sum(v * apply_tridiag(pi_diag, pi_off, v))
    )
    return (
        likelihood.value(u, v)
        + prior
        + float(np.sum(entropy_term(nu_u)))
        + float(np.sum(entropy_term(nu_v)))
    )


def elbo_gradients(params_u, params_v, pi, likelihood, eps_u, eps_v):
    """Exact gradients of :func:`elbo_estimate` at fixed noise, linear in T.

    Returns ``((g_mu, g_nu, g_om) for u, same for v)``.
    """
    (mu_u, nu_u, om_u), (mu_v, nu_v, om_v) = params_u, params_v
    u, x_u = sample_trajectory(mu_u, nu_u, om_u, eps_u)
    v, x_v = sample_trajectory(mu_v, nu_v, om_v, eps_v)
    pi_diag, pi_off = pi
    rows = np.arange(mu_u.shape[0])
    cols = np.arange(mu_v.shape[0])
    gamma_u, gamma_v = likelihood.gamma(u, v, rows, cols, 1.0, 1.0)
    resid_u = grad_mu(gamma_u, pi_diag, pi_off, u)
    resid_v = grad_mu(gamma_v, pi_diag, pi_off, v)
    g_nu_u, g_om_u = grad_nu_omega(resid_u, nu_u, om_u, x_u)
    g_nu_v, g_om_v = grad_nu_omega(resid_v, nu_v, om_v, x_v)
    return (resid_u, g_nu_u, g_om_u), (resid_v, g_nu_v, g_om_v)


# ---------------------------------------------------------------------------
# trainer


class SmootherState:
    """All trainable arrays plus optimizer moments; checkpointable."""

    PARAM_KEYS = ("rho_u", "nu_u", "om_u", "rho_v", "nu_v", "om_v")

    def __init__(self, L, d, pi_diag, pi_off, hyper, lr, beta2):
        T = len(pi_diag)
        c, e = chol_tridiag(pi_diag, pi_off)
        self.rho_u = np.zeros((L, d, T))
        self.rho_v = np.zeros((L, d, T))
        self.nu_u = np.broadcast_to(c, (L, d, T)).copy()
        self.nu_v = np.broadcast_to(c, (L, d, T)).copy()
        self.om_u = np.broadcast_to(e, (L, d, max(T - 1, 0))).copy()
        self.om_v = np.broadcast_to(e, (L, d, max(T - 1, 0))).copy()
        self.reset_optimizers(hyper, lr, beta2)

    def reset_optimizers(self, hyper, lr, beta2):
        self.opts = {
            key: AdamState(
                getattr(self, key).shape, lr, hyper.beta1, beta2, hyper.adam_eps
            )
            for key in self.PARAM_KEYS
        }

    def arrays(self):
        out = {key: getattr(self, key) for key in self.PARAM_KEYS}
        for key, opt in self.opts.items():
            for name, arr in opt.state_arrays().items():
                out[f"opt_{key}_{name}"] = arr
        return out

    def load_arrays(self, arrays):
        for key in self.PARAM_KEYS:
            setattr(self, key, np.array(arrays[key], dtype=float))
            self.opts[key].load_state_arrays(
                {name: arrays[f"opt_{key}_{name}"] for name in ("m", "v", "t")}
            )


class SmoothResult:
    """Converged variational parameters plus mode trajectories."""

    def __init__(self, mu_u, nu_u, om_u, mu_v, nu_v, om_v, grid):
        self.mu_u, self.nu_u, self.om_u = mu_u, nu_u, om_u
        self.mu_v, self.nu_v, self.om_v = mu_v, nu_v, om_v
        self.grid = grid
        # (T, L, d) mode trajectories for evaluation and analytics
        self.U = np.ascontiguousarray(np.moveaxis(mu_u, -1, 0))
        self.V = np.ascontiguousarray(np.moveaxis(mu_v, -1, 0))

    def arrays(self):
        return {
            "mu_u": self.mu_u, "nu_u": self.nu_u, "om_u": self.om_u,
            "mu_v": self.mu_v, "nu_v": self.nu_v, "om_v": self.om_v,
        }


def _phase_rng(seed, phase, step):
    return np.random.default_rng([int(seed), 0x534D4F4F, int(phase), int(step)])


def _train_phase(
    state, basis, pi, likelihood, hyper, seed, phase, n_steps, batch, L, d, T,
    start_step=0, log=None, checkpoint=None,
):
    pi_diag, pi_off = pi
    full = batch >= L
    for step in range(start_step, n_steps):
        rng = _phase_rng(seed, phase, step)
        if full:
            rows = np.arange(L)
            cols = np.arange(L)
            scale = 1.0
        else:
            rows = np.sort(rng.choice(L, size=batch, replace=False))
            cols = np.sort(rng.choice(L, size=batch, replace=False))
            scale = L / batch

        mu_u = basis.from_natural(state.rho_u[rows])
        mu_v = basis.from_natural(state.rho_v[cols])
        eps_u = rng.standard_normal((len(rows), d, T))
        eps_v = rng.standard_normal((len(cols), d, T))
        u, x_u = sample_trajectory(mu_u, state.nu_u[rows], state.om_u[rows], eps_u)
        v, x_v = sample_trajectory(mu_v, state.nu_v[cols], state.om_v[cols], eps_v)

        gamma_u, gamma_v = likelihood.gamma(u, v, rows, cols, scale, scale)
        resid_u = grad_mu(gamma_u, pi_diag, pi_off, u)
        resid_v = grad_mu(gamma_v, pi_diag, pi_off, v)
        g_nu_u, g_om_u = grad_nu_omega(resid_u, state.nu_u[rows], state.om_u[rows], x_u)
        g_nu_v, g_om_v = grad_nu_omega(resid_v, state.nu_v[cols], state.om_v[cols], x_v)
        g_rho_u = basis.grad_to_natural(resid_u)
        g_rho_v = basis.grad_to_natural(resid_v)

        state.rho_u[rows] += state.opts["rho_u"].step(g_rho_u, rows=rows)
        state.rho_v[cols] += state.opts["rho_v"].step(g_rho_v, rows=cols)
        if T > 1:
            state.om_u[rows] += state.opts["om_u"].step(g_om_u, rows=rows)
            state.om_v[cols] += state.opts["om_v"].step(g_om_v, rows=cols)
        state.nu_u[rows] = mirror_ascent_update(
            state.nu_u[rows], state.opts["nu_u"].step(g_nu_u, rows=rows)
        )
        state.nu_v[cols] = mirror_ascent_update(
            state.nu_v[cols], state.opts["nu_v"].step(g_nu_v, rows=cols)
        )

        for name in ("rho_u", "nu_u", "rho_v", "nu_v"):
            arr = getattr(state, name)
            if not np.all(np.isfinite(arr)):
                bad = np.argwhere(~np.isfinite(arr))[0]
                raise FloatingPointError(
                    f"non-finite {name} at phase {phase} step {step}, "
                    f"word {int(bad[0])}"
                )
        if log is not None and step % hyper.log_every == 0:
            ent = float(np.sum(entropy_term(state.nu_u[rows]))) + float(
                np.sum(entropy_term(state.nu_v[cols]))
            )
            prior = -0.5 * float(
                np.sum(u * apply_tridiag(pi_diag, pi_off, u))
                + np.sum(v * apply_tridiag(pi_diag, pi_off, v))
            )
            lik = likelihood.value(u, v) if full else float("nan")
            log(phase, step, lik + prior + ent if full else float("nan"))
        if checkpoint is not None:
            checkpoint(phase, step, state)


def run_smoother(
    slices, hyper, seed, dim=None, likelihood=None, resume=None, log=None,
    checkpoint=None,
):
    """Two-phase stochastic training of all trajectory factors.

    Phase 0 runs ``n_minibatch_steps`` with vocabulary subsampling at
    ``lr_minibatch``; phase 1 runs ``n_fullbatch_steps`` at ``lr_fullbatch``
    with the whole vocabulary.  Adam moments are reset between phases.
    ``resume=(phase, step, arrays)`` continues after a completed step.
    """
    L = slices.n_words
    d = dim if dim is not None else hyper.dim
    T = slices.n_steps
    batch = hyper.batch_size
    if batch > L:
        raise ValueError(f"batch_size {batch} exceeds vocabulary size {L}")
    if likelihood is None:
        likelihood = SkipGramLikelihood(slices)

    pi = prior_precision(T, slices.grid.step_variances, hyper.sigma0_sq)
    basis = NaturalBasis(*pi)

    state = SmootherState(L, d, pi[0], pi[1], hyper, hyper.lr_minibatch,
                          hyper.beta2_smooth)
    phases = [
        (0, hyper.n_minibatch_steps, hyper.lr_minibatch, batch),
        (1, hyper.n_fullbatch_steps, hyper.lr_fullbatch, L),
    ]
    resume_phase, resume_step = -1, -1
    if resume is not None:
        resume_phase, resume_step, arrays = resume

    for phase, n_steps, lr, phase_batch in phases:
        if resume is not None and phase < resume_phase:
            continue
        start = 0
        state.reset_optimizers(hyper, lr, hyper.beta2_smooth)
        if resume is not None and phase == resume_phase:
            state.load_arrays(arrays)
            start = resume_step + 1
        _train_phase(
            state, basis, pi, likelihood, hyper, seed, phase, n_steps,
            phase_batch, L, d, T, start_step=start, log=log,
            checkpoint=checkpoint,
        )

    mu_u = basis.from_natural(state.rho_u)
    mu_v = basis.from_natural(state.rho_v)
    return SmoothResult(mu_u, state.nu_u, state.om_u, mu_v, state.nu_v,
                        state.om_v, slices.grid)
