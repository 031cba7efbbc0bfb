"""Corpus ingestion, vocabulary selection, and count-statistic construction.

Positive counts are built deterministically with a linearly decaying context
window: a pair of in-vocabulary tokens with ``k`` tokens strictly between
them contributes ``max(0, 1 - k / c_max)`` in both directions.  Negative
counts are never materialized; they factorize as
``total_positive * eta * P(i) * P'(j)``.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model import sigmoid


@dataclass
class Document:
    timestamp: float
    tokens: list

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("document has no tokens")
        if not np.isfinite(self.timestamp):
            raise ValueError("document timestamp must be finite")


@dataclass
class Vocabulary:
    words: list

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("vocabulary contains duplicate words")

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index


@dataclass
class TimeGrid:
    timestamps: np.ndarray       # (T,), strictly increasing
    step_variances: np.ndarray   # (T-1,), diffusion * gap

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.step_variances = np.asarray(self.step_variances, dtype=float)
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if np.any(self.step_variances <= 0):
            raise ValueError("step variances must be positive")

    @classmethod
    def from_timestamps(cls, timestamps, diffusion):
        timestamps = np.asarray(timestamps, dtype=float)
        return cls(timestamps, diffusion * np.diff(timestamps))

    def __len__(self):
        return len(self.timestamps)


def parse_timestamp(text: str) -> float:
    """Decimal year from either an ISO-8601 date or a decimal-year literal."""
    try:
        return float(text)
    except ValueError:
        pass
    try:
        day = _dt.date.fromisoformat(text)
    except ValueError:
        raise ValueError(f"unrecognized timestamp {text!r}") from None
    start = _dt.date(day.year, 1, 1)
    length = (_dt.date(day.year + 1, 1, 1) - start).days
    return day.year + (day - start).days / length


def read_corpus(path) -> list:
    """Read ``<timestamp>\\t<tokens...>`` lines into Documents (lowercased)."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                stamp_text, _, rest = line.partition("\t")
                if not rest.strip():
                    raise ValueError("no tokens")
                stamp = parse_timestamp(stamp_text)
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            docs.append(Document(stamp, rest.lower().split()))
    return docs


def bin_timestamp(stamp: float, rule: str) -> float:
    """Map a raw timestamp onto a time-grid coordinate."""
    if rule == "by-date":
        return stamp
    if rule == "by-year":
        return float(np.floor(stamp))
    if rule.startswith("fixed-width:"):
        width = float(rule.split(":", 1)[1])
        if width <= 0:
            raise ValueError("fixed-width bin size must be positive")
        return float(np.floor(stamp / width) * width)
    raise ValueError(f"unknown binning rule {rule!r}")


def assign_steps(documents, rule="by-date"):
    """Group documents into time-grid bins.

    Returns ``(binned_timestamps, doc_groups)`` where ``doc_groups[t]`` is the
    list of documents in bin ``t`` and the timestamps are sorted and distinct.
    """
    groups = {}
    for doc in documents:
        groups.setdefault(bin_timestamp(doc.timestamp, rule), []).append(doc)
    stamps = sorted(groups)
    return np.array(stamps), [groups[s] for s in stamps]


def build_vocabulary(doc_groups, max_words: int) -> Vocabulary:
    """Top words by per-step-normalized frequency summed over steps.

    Normalizing per step keeps steps with more text from dominating the
    selection.  Ties break lexicographically.  If fewer distinct words exist
    than requested, all of them are kept.
    """
    if max_words < 1:
        raise ValueError("max_words must be >= 1")
    scores = {}
    for docs in doc_groups:
        counts = {}
        total = 0
        for doc in docs:
            for tok in doc.tokens:
                counts[tok] = counts.get(tok, 0) + 1
                total += 1
        if total == 0:
            continue
        for tok, c in counts.items():
            scores[tok] = scores.get(tok, 0.0) + c / total
    ranked = sorted(scores, key=lambda w: (-scores[w], w))
    return Vocabulary(ranked[:max_words])


def build_positive_counts(documents, vocab: Vocabulary, c_max: int) -> sp.csr_matrix:
    """Sparse symmetric positive-count slice for one time step.

    Out-of-vocabulary tokens are dropped before gaps are measured, so ``k``
    counts only in-vocabulary tokens between the pair.  Pairs never cross
    document boundaries.
    """
    if c_max < 1:
        raise ValueError("c_max must be >= 1")
    L = len(vocab)
    acc = {}
    for doc in documents:
        ids = [vocab.index[t] for t in doc.tokens if t in vocab.index]
        n = len(ids)
        for p in range(n):
            # gap k = span - 1; weight hits zero at span c_max + 1
            for span in range(1, min(c_max + 1, n - p)):
                w = 1.0 - (span - 1) / c_max
                a, b = ids[p], ids[p + span]
                acc[(a, b)] = acc.get((a, b), 0.0) + w
                acc[(b, a)] = acc.get((b, a), 0.0) + w
    if not acc:
        return sp.csr_matrix((L, L))
    rows, cols = zip(*acc)
    mat = sp.coo_matrix((list(acc.values()), (rows, cols)), shape=(L, L))
    return mat.tocsr()


def build_negative_distributions(n_plus: sp.spmatrix, gamma: float):
    """Word and context distributions defining the virtual negative counts.

    Returns ``(P, P_context, total_positive)``.  A slice with no positive
    mass yields zero distributions and total 0 (evidence-free step).
    """
    total = float(n_plus.sum())
    L = n_plus.shape[0]
    if total <= 0:
        return np.zeros(L), np.zeros(L), 0.0
    P = np.asarray(n_plus.sum(axis=1), dtype=float).ravel() / total
    raised = np.where(P > 0, P, 0.0) ** gamma if gamma > 0 else (P > 0).astype(float)
    Pc = raised / raised.sum()
    return P, Pc, total


@dataclass
class CountSlices:
    """Per-time-step positive counts plus negative-sampling distributions."""

    vocab: Vocabulary
    grid: TimeGrid
    positive: list                 # T csr matrices, each (L, L)
    eta: float = 1.0
    gamma: float = 0.75
    word_dist: np.ndarray = field(default=None)
    context_dist: np.ndarray = field(default=None)
    total_positive: np.ndarray = field(default=None)

    def __post_init__(self):
        T, L = len(self.grid), len(self.vocab)
        if len(self.positive) != T:
            raise ValueError("one positive slice per time step required")
        if self.word_dist is None:
            P = np.zeros((T, L))
            Pc = np.zeros((T, L))
            tot = np.zeros(T)
            for t, mat in enumerate(self.positive):
                if mat.shape != (L, L):
                    raise ValueError(f"slice {t} has shape {mat.shape}, expected {(L, L)}")
                P[t], Pc[t], tot[t] = build_negative_distributions(mat, self.gamma)
            self.word_dist, self.context_dist, self.total_positive = P, Pc, tot
        self._dense_cache = {}

    @property
    def n_steps(self):
        return len(self.grid)

    @property
    def n_words(self):
        return len(self.vocab)

    def evidence_free(self, t) -> bool:
        return self.total_positive[t] <= 0

    def negative_total(self, t) -> float:
        return self.eta * float(self.total_positive[t])

    def negative_dense(self, t) -> np.ndarray:
        return self.negative_total(t) * np.outer(self.word_dist[t], self.context_dist[t])

    def negative_block(self, t, rows, cols) -> np.ndarray:
        return self.negative_total(t) * np.outer(
            self.word_dist[t][rows], self.context_dist[t][cols]
        )

    def positive_dense(self, t) -> np.ndarray:
        if t not in self._dense_cache:
            self._dense_cache[t] = self.positive[t].toarray()
        return self._dense_cache[t]

    def positive_block(self, t, rows, cols) -> np.ndarray:
        return self.positive_dense(t)[np.ix_(rows, cols)]

    def pair_mass(self, t) -> float:
        """Total positive plus negative mass at step t."""
        return float(self.total_positive[t]) * (1.0 + self.eta)


def build_count_slices(documents, hyper, binning="by-date", vocab=None) -> CountSlices:
    """Full pipeline: bin documents, pick the vocabulary, count pairs."""
    stamps, groups = assign_steps(documents, binning)
    if len(stamps) == 0:
        raise ValueError("corpus is empty")
    if vocab is None:
        vocab = build_vocabulary(groups, hyper.vocab_size)
    if len(vocab) == 0:
        raise ValueError("empty vocabulary")
    grid = (
        TimeGrid(stamps, np.ones(0))
        if len(stamps) == 1
        else TimeGrid.from_timestamps(stamps, hyper.diffusion)
    )
    positives = [build_positive_counts(g, vocab, hyper.c_max) for g in groups]
    return CountSlices(vocab, grid, positives, eta=hyper.eta, gamma=hyper.gamma)


def split_heldout(documents, fraction, seed, binning="by-date"):
    """Uniform per-step document split into (train, heldout)."""
    if not 0 <= fraction < 1:
        raise ValueError("held-out fraction must be in [0, 1)")
    rng = np.random.default_rng([int(seed), 0x48454C44])  # substream tag
    train, held = [], []
    _, groups = assign_steps(documents, binning)
    for docs in groups:
        mask = rng.random(len(docs)) < fraction
        for doc, held_out in zip(docs, mask):
            (held if held_out else train).append(doc)
    return train, held


def generate_synthetic_corpus(
    n_words,
    n_steps,
    dim,
    drift_rate,
    docs_per_step,
    seed,
    doc_length=10,
    plant=None,
):
    """Desk-scale synthetic corpus with known embedding trajectories.

    Latent word/context embeddings follow a Gaussian random walk with step
    scale ``drift_rate``; token sequences are sampled so that the chance of
    word ``j`` following word ``i`` grows with ``sigmoid(u_i . v_j)``.

    ``plant=(word, before, after)`` overrides the trajectory of ``word`` to
    shadow ``before`` for the first half of the run and ``after`` for the
    second half, giving a known nearest-neighbor swap at ``n_steps // 2``.
    Returns ``(documents, U_true, V_true)`` with trajectories ``(T, L, d)``.
    """
    if min(n_words, n_steps, dim, docs_per_step) < 1:
        raise ValueError("all sizes must be >= 1")
    rng = np.random.default_rng(int(seed))
    U = np.empty((n_steps, n_words, dim))
    V = np.empty((n_steps, n_words, dim))
    U[0] = rng.normal(size=(n_words, dim))
    V[0] = rng.normal(size=(n_words, dim))
    for t in range(1, n_steps):
        U[t] = U[t - 1] + drift_rate * rng.normal(size=(n_words, dim))
        V[t] = V[t - 1] + drift_rate * rng.normal(size=(n_words, dim))
    if plant is not None:
        word, before, after = plant
        half = n_steps // 2
        wob = 0.01 * rng.normal(size=(n_steps, dim))
        U[:half, word] = U[:half, before] + wob[:half]
        U[half:, word] = U[half:, after] + wob[half:]
        V[:half, word] = V[:half, before] + wob[:half]
        V[half:, word] = V[half:, after] + wob[half:]

    words = [f"w{i:04d}" for i in range(n_words)]
    docs = []
    for t in range(n_steps):
        # next-token distribution proportional to sigmoid of inner products
        weights = sigmoid(U[t] @ V[t].T)
        weights /= weights.sum(axis=1, keepdims=True)
        cum = np.cumsum(weights, axis=1)
        cum[:, -1] = 1.0
        starts = rng.integers(n_words, size=docs_per_step)
        draws = rng.random((docs_per_step, doc_length - 1))
        for s, row in zip(starts, draws):
            ids = [int(s)]
            for r in row:
                ids.append(int(np.searchsorted(cum[ids[-1]], r)))
            docs.append(Document(float(t), [words[i] for i in ids]))
    return docs, U, V
