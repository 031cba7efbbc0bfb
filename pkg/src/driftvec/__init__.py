"""Dynamic word embeddings: drifting embedding trajectories fitted to
time-stamped text by variational filtering or smoothing, with static
baselines and held-out drift analytics."""

from .corpus import (
    CountSlices,
    Document,
    TimeGrid,
    Vocabulary,
    build_count_slices,
    generate_synthetic_corpus,
)
from .estimators import (
    SkipGramFilter,
    SkipGramSmoother,
    StaticIndependent,
    StaticWarmStart,
)
from .hyper import Hyperparameters

__all__ = [
    "CountSlices",
    "Document",
    "TimeGrid",
    "Vocabulary",
    "build_count_slices",
    "generate_synthetic_corpus",
    "Hyperparameters",
    "SkipGramFilter",
    "SkipGramSmoother",
    "StaticIndependent",
    "StaticWarmStart",
]

__version__ = "0.1.0"
