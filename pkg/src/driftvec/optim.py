"""Shared optimizer machinery: bias-corrected Adam and the positive-cone
mirror-ascent update.

All updates are written for gradient *ascent*: ``adam_step`` returns a step
whose sign follows the gradient, and the caller adds it to the parameter.
"""

from __future__ import annotations

import numpy as np


class AdamState:
    """Moment estimates for one parameter array.

    Supports row-subset updates (used by the smoother's minibatch phase);
    bias correction then uses a per-row step count.
    """

    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        # one counter per leading-axis row, broadcastable over the rest
        self.t = np.zeros((shape[0],) + (1,) * (len(shape) - 1)) if shape else 0.0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, grad, rows=None):
        """Advance the moments and return the ascent step (same shape as grad)."""
        grad = np.asarray(grad, dtype=float)
        if not np.all(np.isfinite(grad)):
            raise ValueError("non-finite gradient passed to Adam")
        if rows is None:
            rows = slice(None)
        self.t[rows] += 1
        self.m[rows] = self.beta1 * self.m[rows] + (1 - self.beta1) * grad
        self.v[rows] = self.beta2 * self.v[rows] + (1 - self.beta2) * grad**2
        t = self.t[rows]
        m_hat = self.m[rows] / (1 - self.beta1**t)
        v_hat = self.v[rows] / (1 - self.beta2**t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self):
        return {"m": self.m, "v": self.v, "t": self.t}

    def load_state_arrays(self, arrays):
        self.m = np.array(arrays["m"], dtype=float)
        self.v = np.array(arrays["v"], dtype=float)
        self.t = np.array(arrays["t"], dtype=float)


def adam_step(state: AdamState, grad, rows=None):
    """Functional wrapper: returns ``(state, step)``."""
    return state, state.step(grad, rows=rows)


def mirror_ascent_update(nu, step):
    """Positivity-preserving update of the Cholesky diagonal.

    ``nu' = nu*step/2 + sqrt((nu*step/2)^2 + nu^2)``; strictly positive for
    any finite step and strictly increasing in the step.
    """
    nu = np.asarray(nu, dtype=float)
    step = np.asarray(step, dtype=float)
    if np.any(nu <= 0):
        raise ValueError("nu must be strictly positive")
    if not np.all(np.isfinite(step)):
        raise ValueError("non-finite mirror-ascent step")
    half = 0.5 * nu * step
    root = np.sqrt(half**2 + nu**2)
    # rationalized form for negative steps avoids cancellation to zero
    return np.where(half >= 0, half + root, nu**2 / (root - half))
