"""Hyperparameter container shared by all trainers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace


@dataclass
class Hyperparameters:
    """All scalar knobs of the model and its trainers.

    Defaults are the published reference settings.  ``sigma0_sq`` may be
    ``inf`` to turn off the damping toward the origin (pure random-walk
    prior).
    """

    # model
    diffusion: float = 1e-3          # diffusion constant D, per unit time
    sigma0_sq: float = 1.0           # overall prior variance
    eta: float = 1.0                 # ratio of negative to positive examples
    gamma: float = 0.75              # context exponent for negative examples
    c_max: int = 4                   # context window size
    dim: int = 100                   # embedding dimension d
    vocab_size: int = 10_000         # target vocabulary size L
    batch_size: int = 1_000          # minibatch size L' (smoothing pretraining)

    # optimizer
    lr_filter: float = 1e-2          # learning rate, filtering
    lr_minibatch: float = 1e-2       # learning rate, smoothing minibatch phase
    lr_fullbatch: float = 1e-3       # learning rate, smoothing full-batch phase
    beta1: float = 0.9
    beta2_filter: float = 0.99
    beta2_smooth: float = 0.999
    adam_eps: float = 1e-8

    # step budgets
    n_filter_steps: int = 5000       # training steps per time step (filtering)
    n_minibatch_steps: int = 5000    # smoothing pretraining steps
    n_fullbatch_steps: int = 1000    # smoothing full-batch steps
    n_static_steps: int = 5000       # per-step budget for the static baselines

    # convergence / initialization details (not part of the reference table)
    elbo_window: int = 200           # early-stop window for the filter
    elbo_tol: float = 1e-6           # min improvement of the windowed ELBO mean
    init_jitter: float = 0.1         # stddev of the mean initialization at t=1
    log_every: int = 50              # objective logging cadence

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, bool):
                continue
            if val <= 0 and f.name not in ("init_jitter",):
                raise ValueError(f"{f.name} must be positive, got {val!r}")
        if self.init_jitter < 0:
            raise ValueError("init_jitter must be >= 0")
        if not math.isfinite(self.sigma0_sq) and self.sigma0_sq != math.inf:
            raise ValueError("sigma0_sq must be finite or +inf")
        if self.gamma > 1.0 + 1e-12:
            # gamma in (0, 1] keeps the context distribution a flattened copy
            # of the word distribution; larger values are almost certainly a
            # configuration mistake, but we only warn via error on negatives.
            pass

    def with_(self, **kwargs) -> "Hyperparameters":
        """Return a copy with some fields replaced."""
        return replace(self, **kwargs)
