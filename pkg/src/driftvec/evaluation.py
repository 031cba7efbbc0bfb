"""Held-out predictive likelihood and trajectory analytics.

All analytics are read-only functions of point trajectories stored as
``(T, L, d)`` arrays.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .model import log_likelihood


@dataclass
class PredictiveRecord:
    t: int
    timestamp: float
    method: str
    value: float
    pair_mass: float


def predictive_log_likelihood(U, V, slices, t) -> float:
    """Per-pair normalized log-likelihood of the counts at step t."""
    mass = slices.pair_mass(t)
    if mass <= 0:
        raise ValueError(f"no word-context pairs at step {t}")
    return log_likelihood(slices, t, U, V) / mass


def chronological_records(U, V, slices, method) -> list:
    """Predict each slice t >= 2 from the previous step's embeddings."""
    records = []
    for t in range(1, slices.n_steps):
        if slices.pair_mass(t) <= 0:
            warnings.warn(f"step {t} has no pairs; skipped")
            continue
        records.append(
            PredictiveRecord(
                t,
                float(slices.grid.timestamps[t]),
                method,
                predictive_log_likelihood(U[t - 1], V[t - 1], slices, t),
                slices.pair_mass(t),
            )
        )
    return records


def interpolate_step(U, timestamps, t):
    """Time-weighted linear interpolation of the neighboring steps.

    Interior steps blend t-1 and t+1 by their time gaps; the endpoints fall
    back to the nearest available step.
    """
    T = U.shape[0]
    if t == 0:
        return U[1] if T > 1 else U[0]
    if t == T - 1:
        return U[T - 2] if T > 1 else U[0]
    span = timestamps[t + 1] - timestamps[t - 1]
    w_prev = (timestamps[t + 1] - timestamps[t]) / span
    return w_prev * U[t - 1] + (1.0 - w_prev) * U[t + 1]


def interpolated_records(U, V, heldout_slices, method="smooth") -> list:
    """Evaluate held-out counts with interpolated posterior modes."""
    taus = heldout_slices.grid.timestamps
    records = []
    for t in range(heldout_slices.n_steps):
        if heldout_slices.pair_mass(t) <= 0:
            warnings.warn(f"held-out step {t} has no pairs; skipped")
            continue
        Ut = interpolate_step(U, taus, t)
        Vt = interpolate_step(V, taus, t)
        records.append(
            PredictiveRecord(
                t,
                float(taus[t]),
                method,
                predictive_log_likelihood(Ut, Vt, heldout_slices, t),
                heldout_slices.pair_mass(t),
            )
        )
    return records


def heldout_protocol(method, U, V, slices) -> list:
    """Dispatch to the per-method evaluation protocol."""
    if method in ("sgi", "sgp", "filter"):
        return chronological_records(U, V, slices, method)
    if method == "smooth":
        return interpolated_records(U, V, slices, method)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# trajectory analytics


def _cosine(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def cosine_similarity_series(U, word_a, word_b):
    """Cosine similarity between two words' vectors at every step."""
    return np.array([_cosine(U[t, word_a], U[t, word_b]) for t in range(U.shape[0])])


def top_changing_words(U, t0, t1, k):
    """Words ranked by 1 - cos(u_{t0}, u_{t1}), descending; ties by id."""
    L = U.shape[1]
    scores = np.array([1.0 - _cosine(U[t0, i], U[t1, i]) for i in range(L)])
    order = np.lexsort((np.arange(L), -scores))
    return [(int(i), float(scores[i])) for i in order[:k]]


def displacement_histogram(U, t_ref, deltas, bins=20):
    """Euclidean displacement distributions from a reference step.

    Returns ``{delta: (displacements, histogram, bin_edges)}``.
    """
    T = U.shape[0]
    out = {}
    for delta in deltas:
        if delta < 1 or t_ref + delta >= T:
            raise ValueError(f"delta {delta} out of range for T={T}, t_ref={t_ref}")
        disp = np.linalg.norm(U[t_ref + delta] - U[t_ref], axis=1)
        hist, edges = np.histogram(disp, bins=bins)
        out[delta] = (disp, hist, edges)
    return out


def nearest_neighbors(U, word, t, k):
    """Top-k words by cosine similarity at step t, excluding the query."""
    L = U.shape[1]
    sims = np.array([_cosine(U[t, word], U[t, j]) for j in range(L)])
    sims[word] = -np.inf
    order = np.lexsort((np.arange(L), -sims))
    return [(int(j), float(sims[j])) for j in order[:k]]


# ---------------------------------------------------------------------------
# CSV emitters (RFC-4180 via the csv module)


def write_predictive_csv(path, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "timestamp", "method", "value", "pair_mass"])
        for r in records:
            w.writerow([r.t, repr(r.timestamp), r.method, repr(r.value),
                        repr(r.pair_mass)])


def write_similarity_csv(path, vocab, series):
    """``series``: {(word_a, word_b): array of similarities per step}."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["word_a", "word_b", "t", "similarity"])
        for (a, b), values in series.items():
            for t, val in enumerate(values):
                w.writerow([vocab.words[a], vocab.words[b], t, repr(float(val))])


def write_histogram_csv(path, histograms):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["delta", "bin_left", "bin_right", "count"])
        for delta, (_, hist, edges) in sorted(histograms.items()):
            for i, count in enumerate(hist):
                w.writerow([delta, repr(float(edges[i])), repr(float(edges[i + 1])),
                            int(count)])


def write_topchanges_csv(path, vocab, ranked):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "word", "change_score"])
        for rank, (word_id, score) in enumerate(ranked, start=1):
            w.writerow([rank, vocab.words[word_id], repr(score)])


def write_neighbors_csv(path, vocab, query, t, neighbors):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["query", "t", "rank", "neighbor", "similarity"])
        for rank, (word_id, sim) in enumerate(neighbors, start=1):
            w.writerow([vocab.words[query], t, rank, vocab.words[word_id], repr(sim)])
