"""Command-line surface: preprocess, train, evaluate, analyze, synth.

All randomness flows from ``--seed``; reruns with the same config and seed
produce byte-identical outputs.  Validation problems exit with code 2,
anything else with 1.
"""

from __future__ import annotations

import csv
import dataclasses
import os
from pathlib import Path

import click
import numpy as np

from . import io as dvio
from .baselines import run_sgi, run_sgp
from .corpus import (
    CountSlices,
    TimeGrid,
    assign_steps,
    bin_timestamp,
    build_positive_counts,
    build_vocabulary,
    generate_synthetic_corpus,
    read_corpus,
    split_heldout,
)
from .evaluation import (
    cosine_similarity_series,
    displacement_histogram,
    heldout_protocol,
    nearest_neighbors,
    top_changing_words,
    write_histogram_csv,
    write_neighbors_csv,
    write_predictive_csv,
    write_similarity_csv,
    write_topchanges_csv,
)
from .filtering import FilterPosterior, FilterResult, run_filter
from .hyper import Hyperparameters
from .smoothing import run_smoother

METHODS = ("filter", "smooth", "sgi", "sgp")

_HYPER_FIELDS = {f.name: f.type for f in dataclasses.fields(Hyperparameters)}
_EXTRA_KEYS = {"binning": str, "heldout_fraction": float, "method": str, "seed": int}


def _parse_value(key, text):
    if key in ("binning", "method"):
        return text
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise click.UsageError(f"config value for {key!r} is not numeric: {text!r}")


def load_config(path):
    """Flat ``key = value`` file; unknown keys are rejected."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise click.UsageError(f"{path}: line {lineno}: expected key = value")
            key, _, text = line.partition("=")
            key = key.strip()
            if key not in _HYPER_FIELDS and key not in _EXTRA_KEYS:
                raise click.UsageError(f"{path}: line {lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, text.strip())
    return values


def resolve_config(config_path, overrides):
    values = load_config(config_path) if config_path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    hyper_kwargs = {k: v for k, v in values.items() if k in _HYPER_FIELDS}
    extras = {k: v for k, v in values.items() if k in _EXTRA_KEYS}
    try:
        hyper = Hyperparameters(**hyper_kwargs)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    return hyper, extras


def write_resolved_config(path, hyper, extras):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, val in sorted(dataclasses.asdict(hyper).items()):
            fh.write(f"{key} = {val!r}\n")
        for key, val in sorted(extras.items()):
            fh.write(f"{key} = {val!r}\n")


class OutputDir:
    """Output directory with a lock file against concurrent writers."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.lock = self.path / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise click.UsageError(
                f"{self.lock} exists; another run may be writing here"
            )
        os.close(fd)
        return self.path

    def __exit__(self, *exc):
        self.lock.unlink(missing_ok=True)


@click.group()
def cli():
    """Dynamic word embedding trainers and drift analytics."""


@cli.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--n-words", default=50, show_default=True)
@click.option("--n-steps", default=10, show_default=True)
@click.option("--dim-true", default=5, show_default=True)
@click.option("--drift", default=0.1, show_default=True)
@click.option("--docs-per-step", default=200, show_default=True)
@click.option("--doc-length", default=10, show_default=True)
@click.option("--plant/--no-plant", default=False, show_default=True,
              help="Plant a nearest-neighbor swap halfway through the run.")
@click.option("--seed", default=0, show_default=True)
def synth(out, n_words, n_steps, dim_true, drift, docs_per_step, doc_length,
          plant, seed):
    """Generate a synthetic drift corpus with known trajectories."""
    docs, U, V = generate_synthetic_corpus(
        n_words, n_steps, dim_true, drift, docs_per_step, seed,
        doc_length=doc_length, plant=(0, 1, 2) if plant else None,
    )
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            fh.write(f"{doc.timestamp!r}\t{' '.join(doc.tokens)}\n")
    truth = Path(out).with_suffix(".truth.npz")
    np.savez(truth, U=U, V=V)
    click.echo(f"wrote {len(docs)} documents to {out}; ground truth in {truth}")


def _group_on_grid(docs, stamps, rule):
    groups = [[] for _ in stamps]
    index = {s: t for t, s in enumerate(stamps)}
    for doc in docs:
        groups[index[bin_timestamp(doc.timestamp, rule)]].append(doc)
    return groups


@cli.command()
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int)
@click.option("--vocab-size", type=int)
@click.option("--c-max", type=int)
@click.option("--binning", type=str)
@click.option("--heldout-fraction", type=float)
def preprocess(corpus_path, out, config_path, seed, vocab_size, c_max, binning,
               heldout_fraction):
    """Build count files from a time-stamped corpus."""
    hyper, extras = resolve_config(config_path, {
        "vocab_size": vocab_size, "c_max": c_max, "binning": binning,
        "heldout_fraction": heldout_fraction, "seed": seed,
    })
    rule = extras.get("binning", "by-date")
    fraction = extras.get("heldout_fraction", 0.0)
    run_seed = extras.get("seed", 0)
    try:
        docs = read_corpus(corpus_path)
        if not docs:
            raise ValueError(f"{corpus_path}: corpus is empty")
        stamps, _ = assign_steps(docs, rule)
        train_docs, held_docs = split_heldout(docs, fraction, run_seed, rule)
        train_groups = _group_on_grid(train_docs, stamps, rule)
        vocab = build_vocabulary(train_groups, hyper.vocab_size)
        if len(vocab) == 0:
            raise ValueError("empty vocabulary")
        grid = (
            TimeGrid(stamps, np.ones(0)) if len(stamps) == 1
            else TimeGrid.from_timestamps(stamps, hyper.diffusion)
        )
        train = CountSlices(
            vocab, grid,
            [build_positive_counts(g, vocab, hyper.c_max) for g in train_groups],
            eta=hyper.eta, gamma=hyper.gamma,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))
    with OutputDir(out) as outdir:
        write_resolved_config(outdir / "config.resolved", hyper, extras)
        dvio.write_counts(outdir / "counts.txt", train)
        if held_docs:
            held_groups = _group_on_grid(held_docs, stamps, rule)
            held = CountSlices(
                vocab, grid,
                [build_positive_counts(g, vocab, hyper.c_max) for g in held_groups],
                eta=hyper.eta, gamma=hyper.gamma,
            )
            dvio.write_counts(outdir / "counts_heldout.txt", held)
        click.echo(f"L={len(vocab)} T={len(grid)}")
        for t in range(train.n_steps):
            click.echo(
                f"t={t} tau={float(grid.timestamps[t])!r} "
                f"positive_mass={float(train.total_positive[t])!r}"
            )


def _final_checkpoint(outdir, method, result, hyper, seed, dim, grid):
    arrays = {"U": result.U, "V": result.V,
              "timestamps": np.asarray(grid.timestamps, dtype=float)}
    if method == "filter":
        arrays["var_u"] = np.stack([p.var_u for p in result.posteriors])
        arrays["var_v"] = np.stack([p.var_v for p in result.posteriors])
        kind = "filter"
    elif method == "smooth":
        arrays.update(result.arrays())
        kind = "smooth"
    else:
        arrays["objectives"] = np.array([f.objective for f in result.fits])
        kind = "static"
    meta = {"method": method, "seed": int(seed), "dim": int(dim)}
    dvio.save_checkpoint(outdir / f"checkpoint_{method}.dv", kind, meta, arrays)


@cli.command()
@click.option("--counts", "counts_path", required=True,
              type=click.Path(exists=True))
@click.option("--method", required=True, type=click.Choice(METHODS))
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int)
@click.option("--dim", type=int)
@click.option("--resume", is_flag=True, default=False,
              help="Continue from the state checkpoint in --out, if present.")
@click.option("--checkpoint-every", default=0, show_default=True,
              help="Smoothing state-checkpoint cadence in steps (0 = off).")
def train(counts_path, method, out, config_path, seed, dim, resume,
          checkpoint_every):
    """Fit one method on a count file and write its checkpoint."""
    hyper, extras = resolve_config(config_path, {"seed": seed})
    run_seed = extras.get("seed", 0)
    slices = dvio.read_counts(counts_path)
    d = dim if dim is not None else hyper.dim
    if method == "smooth" and hyper.batch_size > slices.n_words:
        raise click.UsageError(
            f"batch_size {hyper.batch_size} exceeds vocabulary size "
            f"{slices.n_words}"
        )

    with OutputDir(out) as outdir:
        write_resolved_config(outdir / "config.resolved", hyper,
                              {**extras, "method": method, "seed": run_seed})
        log_rows = []

        def log(a, b, value):
            log_rows.append((a, b, value))

        state_path = outdir / f"state_{method}.dv"
        if method == "filter":
            start_from = None
            if resume and state_path.exists():
                meta, arrays = dvio.load_checkpoint(state_path, "filter")
                posteriors = [
                    FilterPosterior(arrays["mu_u"][t], arrays["var_u"][t],
                                    arrays["mu_v"][t], arrays["var_v"][t])
                    for t in range(meta["t"] + 1)
                ]
                start_from = (meta["t"], posteriors)

            # run step-by-step so every completed t leaves a resumable state
            t0 = -1 if start_from is None else start_from[0]
            posteriors = [] if start_from is None else list(start_from[1])
            for t in range(t0 + 1, slices.n_steps):
                partial = run_filter(
                    slices_upto(slices, t), hyper, run_seed, dim=d,
                    start_from=None if not posteriors else (t - 1, posteriors),
                    log=log,
                )
                posteriors = partial.posteriors
                dvio.save_checkpoint(
                    state_path, "filter", {"t": t},
                    {
                        "mu_u": np.stack([p.mu_u for p in posteriors]),
                        "var_u": np.stack([p.var_u for p in posteriors]),
                        "mu_v": np.stack([p.mu_v for p in posteriors]),
                        "var_v": np.stack([p.var_v for p in posteriors]),
                    },
                )
            result = FilterResult(posteriors, slices.grid)
        elif method == "smooth":
            resume_state = None
            if resume and state_path.exists():
                meta, arrays = dvio.load_checkpoint(state_path, "smooth")
                resume_state = (meta["phase"], meta["step"], arrays)

            def checkpoint(phase, step, state):
                if checkpoint_every and (step + 1) % checkpoint_every == 0:
                    dvio.save_checkpoint(
                        state_path, "smooth",
                        {"phase": phase, "step": step}, state.arrays(),
                    )

            result = run_smoother(slices, hyper, run_seed, dim=d,
                                  resume=resume_state, log=log,
                                  checkpoint=checkpoint)
        elif method == "sgi":
            result = run_sgi(slices, hyper, run_seed, dim=d)
        else:
            result = run_sgp(slices, hyper, run_seed, dim=d)

        _final_checkpoint(outdir, method, result, hyper, run_seed, d, slices.grid)
        with open(outdir / "training_log.csv", "w", newline="",
                  encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["phase_or_t", "step", "objective"])
            for row in log_rows:
                w.writerow([row[0], row[1], repr(row[2])])
        click.echo(f"wrote {outdir / f'checkpoint_{method}.dv'}")


def slices_upto(slices, t):
    """The filter only ever sees slices 1..t; enforce that at the interface."""
    if t >= slices.n_steps - 1:
        return slices
    grid = (
        TimeGrid(slices.grid.timestamps[: t + 1],
                 slices.grid.step_variances[:t])
        if t > 0
        else TimeGrid(slices.grid.timestamps[:1], np.ones(0))
    )
    return CountSlices(
        slices.vocab, grid, slices.positive[: t + 1],
        eta=slices.eta, gamma=slices.gamma,
    )


def _load_trajectory(path, method):
    kind = {"filter": "filter", "smooth": "smooth"}.get(method, "static")
    meta, arrays = dvio.load_checkpoint(path, kind)
    return arrays["U"], arrays["V"]


@cli.command()
@click.option("--counts", "counts_path", required=True,
              type=click.Path(exists=True))
@click.option("--heldout-counts", "heldout_path", type=click.Path())
@click.option("--checkpoint", "checkpoints", multiple=True,
              help="method=path, repeatable.")
@click.option("--out", required=True, type=click.Path())
def evaluate(counts_path, heldout_path, checkpoints, out):
    """Held-out predictive log-likelihood per method and time step."""
    if not checkpoints:
        raise click.UsageError("at least one --checkpoint method=path required")
    pairs = []
    missing = []
    for spec in checkpoints:
        method, _, path = spec.partition("=")
        if method not in METHODS or not path:
            raise click.UsageError(f"bad --checkpoint spec {spec!r}")
        if not Path(path).exists():
            missing.append(spec)
        else:
            pairs.append((method, path))
    if missing:
        raise click.UsageError("missing checkpoints: " + ", ".join(missing))

    slices = dvio.read_counts(counts_path)
    records = []
    for method, path in pairs:
        U, V = _load_trajectory(path, method)
        if method == "smooth":
            if heldout_path is None:
                raise click.UsageError(
                    "--heldout-counts is required to evaluate the smoother"
                )
            target = dvio.read_counts(heldout_path)
        else:
            target = slices
        records.extend(heldout_protocol(method, U, V, target))
    write_predictive_csv(out, records)
    click.echo(f"wrote {out} ({len(records)} rows)")


def _edit_distance(a, b):
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[-1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _require_word(vocab, word):
    if word in vocab.index:
        return vocab.index[word]
    close = sorted(vocab.words, key=lambda w: (_edit_distance(word, w), w))[:5]
    raise click.UsageError(
        f"word {word!r} not in vocabulary; nearest spellings: {', '.join(close)}"
    )


@cli.command()
@click.option("--checkpoint", "checkpoint_path", required=True,
              type=click.Path(exists=True))
@click.option("--method", required=True, type=click.Choice(METHODS))
@click.option("--counts", "counts_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--pair", "pairs", multiple=True, help="word_a:word_b, repeatable.")
@click.option("--word", "words", multiple=True,
              help="Query word for nearest neighbors, repeatable.")
@click.option("--t-ref", default=0, show_default=True)
@click.option("--deltas", default="1,2,3", show_default=True)
@click.option("--t0", type=int)
@click.option("--t1", type=int)
@click.option("--top-k", default=10, show_default=True)
@click.option("--neighbors-t", default=0, show_default=True)
@click.option("--neighbors-k", default=5, show_default=True)
@click.option("--bins", default=20, show_default=True)
def analyze(checkpoint_path, method, counts_path, out, pairs, words, t_ref,
            deltas, t0, t1, top_k, neighbors_t, neighbors_k, bins):
    """Emit drift analytics CSVs for a fitted trajectory."""
    slices = dvio.read_counts(counts_path)
    U, _ = _load_trajectory(checkpoint_path, method)
    T = U.shape[0]
    t0 = 0 if t0 is None else t0
    t1 = T - 1 if t1 is None else t1
    try:
        delta_list = [int(x) for x in deltas.split(",") if x]
    except ValueError:
        raise click.UsageError(f"bad --deltas {deltas!r}")

    with OutputDir(out) as outdir:
        ranked = top_changing_words(U, t0, t1, top_k)
        write_topchanges_csv(outdir / "topchanges.csv", slices.vocab, ranked)

        series = {}
        for spec in pairs:
            a_text, _, b_text = spec.partition(":")
            if not b_text:
                raise click.UsageError(f"bad --pair spec {spec!r}")
            a = _require_word(slices.vocab, a_text)
            b = _require_word(slices.vocab, b_text)
            series[(a, b)] = cosine_similarity_series(U, a, b)
        if series:
            write_similarity_csv(outdir / "similarity.csv", slices.vocab, series)

        try:
            hists = displacement_histogram(U, t_ref, delta_list, bins=bins)
        except ValueError as exc:
            raise click.UsageError(str(exc))
        write_histogram_csv(outdir / "histogram.csv", hists)

        for word_text in words:
            word = _require_word(slices.vocab, word_text)
            neigh = nearest_neighbors(U, word, neighbors_t, neighbors_k)
            write_neighbors_csv(
                outdir / f"neighbors_{word_text}.csv", slices.vocab, word,
                neighbors_t, neigh,
            )
        click.echo(f"wrote analytics to {outdir}")


def main():
    cli(prog_name="driftvec")


if __name__ == "__main__":
    main()
