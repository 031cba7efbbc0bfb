"""Scikit-learn style wrappers around the trainers.

Each estimator consumes a :class:`~driftvec.corpus.CountSlices` in ``fit``
and exposes mode trajectories ``U_`` and ``V_`` of shape ``(T, L, d)``.
``score`` returns the mean per-pair predictive log-likelihood under the
method's own held-out protocol.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .baselines import run_sgi, run_sgp
from .corpus import CountSlices
from .evaluation import heldout_protocol
from .filtering import run_filter
from .hyper import Hyperparameters
from .smoothing import run_smoother


def check_slices(X) -> CountSlices:
    if not isinstance(X, CountSlices):
        raise TypeError(f"expected CountSlices, got {type(X).__name__}")
    return X


class _TrajectoryEstimator(BaseEstimator):
    _method = None

    def __init__(self, hyper=None, dim=None, seed=0):
        self.hyper = hyper
        self.dim = dim
        self.seed = seed

    def _resolved_hyper(self):
        return self.hyper if self.hyper is not None else Hyperparameters()

    def _resolved_dim(self):
        return self.dim if self.dim is not None else self._resolved_hyper().dim

    def fit(self, X, y=None):
        X = check_slices(X)
        self.result_ = self._fit(X)
        self.U_ = self.result_.U
        self.V_ = self.result_.V
        self.n_steps_ = X.n_steps
        return self

    def predictive_records(self, X):
        """Per-step held-out predictive records under this method's protocol."""
        X = check_slices(X)
        return heldout_protocol(self._method, self.U_, self.V_, X)

    def score(self, X, y=None):
        records = self.predictive_records(X)
        if not records:
            raise ValueError("no evaluable steps")
        return float(np.mean([r.value for r in records]))


class SkipGramFilter(_TrajectoryEstimator):
    """Sequential variational trainer; conditions only on past counts."""

    _method = "filter"

    def _fit(self, X):
        return run_filter(X, self._resolved_hyper(), self.seed,
                          dim=self._resolved_dim())

    @property
    def posteriors_(self):
        return self.result_.posteriors


class SkipGramSmoother(_TrajectoryEstimator):
    """Joint variational trainer over all steps with time-correlated factors."""

    _method = "smooth"

    def _fit(self, X):
        return run_smoother(X, self._resolved_hyper(), self.seed,
                            dim=self._resolved_dim())


class StaticIndependent(_TrajectoryEstimator):
    """Per-step point estimates from fresh inits, Procrustes-aligned."""

    _method = "sgi"

    def _fit(self, X):
        return run_sgi(X, self._resolved_hyper(), self.seed,
                       dim=self._resolved_dim())


class StaticWarmStart(_TrajectoryEstimator):
    """Per-step point estimates warm-started from the previous step."""

    _method = "sgp"

    def _fit(self, X):
        return run_sgp(X, self._resolved_hyper(), self.seed,
                       dim=self._resolved_dim())


ESTIMATORS = {
    "filter": SkipGramFilter,
    "smooth": SkipGramSmoother,
    "sgi": StaticIndependent,
    "sgp": StaticWarmStart,
}
