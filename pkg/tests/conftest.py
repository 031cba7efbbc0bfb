import numpy as np
import pytest
import scipy.sparse as sp

from driftvec.corpus import CountSlices, TimeGrid, Vocabulary
from driftvec.hyper import Hyperparameters


def make_slices(mats, eta=1.0, gamma=0.75, timestamps=None, diffusion=1.0,
                step_variances=None):
    """CountSlices from dense positive matrices (one per step)."""
    mats = [np.asarray(m, dtype=float) for m in mats]
    L = mats[0].shape[0]
    T = len(mats)
    vocab = Vocabulary([f"w{i}" for i in range(L)])
    if timestamps is None:
        timestamps = np.arange(T, dtype=float)
    if T == 1:
        grid = TimeGrid(np.asarray(timestamps, dtype=float), np.ones(0))
    elif step_variances is not None:
        grid = TimeGrid(np.asarray(timestamps, dtype=float),
                        np.asarray(step_variances, dtype=float))
    else:
        grid = TimeGrid.from_timestamps(timestamps, diffusion)
    return CountSlices(vocab, grid, [sp.csr_matrix(m) for m in mats],
                       eta=eta, gamma=gamma)


def tiny_hyper(**kwargs):
    """Desk-scale defaults for fast tests."""
    base = dict(
        vocab_size=50,
        dim=2,
        batch_size=2,
        n_filter_steps=100,
        n_minibatch_steps=50,
        n_fullbatch_steps=50,
        n_static_steps=100,
        diffusion=0.1,
        elbo_window=30,
    )
    base.update(kwargs)
    return Hyperparameters(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
