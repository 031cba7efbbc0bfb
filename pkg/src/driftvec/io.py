"""Versioned on-disk formats: the text count file and binary checkpoints.

Both formats are byte-deterministic for identical inputs, which is what
makes rerun-and-compare reproducibility checks possible.
"""

from __future__ import annotations

import json

import numpy as np
import scipy.sparse as sp

from .corpus import CountSlices, TimeGrid, Vocabulary

COUNTS_MAGIC = "DRIFTVEC-COUNTS v1"
CHECKPOINT_MAGIC = {
    "filter": "DRIFTVEC-FILTER v1",
    "smooth": "DRIFTVEC-SMOOTH v1",
    "static": "DRIFTVEC-STATIC v1",
}


def write_counts(path, slices: CountSlices):
    """Write the count slices as versioned text; distributions are derived,
    so only the vocabulary, time grid, and positive triplets are stored."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(COUNTS_MAGIC + "\n")
        fh.write(
            f"L {len(slices.vocab)} T {slices.n_steps} "
            f"eta {slices.eta!r} gamma {slices.gamma!r}\n"
        )
        fh.write("timestamps " + " ".join(repr(float(x)) for x in slices.grid.timestamps) + "\n")
        fh.write("stepvars " + " ".join(repr(float(x)) for x in slices.grid.step_variances) + "\n")
        fh.write("vocab\n")
        for word in slices.vocab.words:
            fh.write(word + "\n")
        fh.write("counts\n")
        for t, mat in enumerate(slices.positive):
            coo = mat.tocoo()
            order = np.lexsort((coo.col, coo.row))
            for i, j, w in zip(coo.row[order], coo.col[order], coo.data[order]):
                fh.write(f"{t} {i} {j} {float(w)!r}\n")


def read_counts(path) -> CountSlices:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != COUNTS_MAGIC:
        raise ValueError(f"{path}: not a {COUNTS_MAGIC} file")
    head = lines[1].split()
    L, T = int(head[1]), int(head[3])
    eta, gamma = float(head[5]), float(head[7])
    stamps = np.array([float(x) for x in lines[2].split()[1:]])
    stepvars = np.array([float(x) for x in lines[3].split()[1:]])
    if lines[4] != "vocab":
        raise ValueError(f"{path}: malformed vocabulary block")
    words = lines[5 : 5 + L]
    if len(words) != L or lines[5 + L] != "counts":
        raise ValueError(f"{path}: malformed counts block")
    rows = [[] for _ in range(T)]
    for line in lines[6 + L :]:
        if not line:
            continue
        t_s, i_s, j_s, w_s = line.split()
        rows[int(t_s)].append((int(i_s), int(j_s), float(w_s)))
    mats = []
    for triplets in rows:
        if triplets:
            i, j, w = zip(*triplets)
            mats.append(sp.coo_matrix((w, (i, j)), shape=(L, L)).tocsr())
        else:
            mats.append(sp.csr_matrix((L, L)))
    grid = TimeGrid(stamps, stepvars)
    return CountSlices(Vocabulary(list(words)), grid, mats, eta=eta, gamma=gamma)


# ---------------------------------------------------------------------------
# binary checkpoint container


def save_checkpoint(path, kind, meta: dict, arrays: dict):
    """Deterministic binary container: magic line, JSON manifest, raw bytes."""
    magic = CHECKPOINT_MAGIC[kind]
    manifest = {
        "meta": meta,
        "arrays": [
            {"name": name, "dtype": str(np.asarray(a).dtype),
             "shape": list(np.shape(a))}
            for name, a in sorted(arrays.items())
        ],
    }
    with open(path, "wb") as fh:
        fh.write((magic + "\n").encode())
        fh.write((json.dumps(manifest, sort_keys=True) + "\n").encode())
        for name in sorted(arrays):
            fh.write(np.ascontiguousarray(arrays[name]).tobytes())


def load_checkpoint(path, kind):
    magic = CHECKPOINT_MAGIC[kind]
    with open(path, "rb") as fh:
        first = fh.readline().decode().rstrip("\n")
        if first != magic:
            raise ValueError(f"{path}: expected {magic}, found {first!r}")
        manifest = json.loads(fh.readline().decode())
        arrays = {}
        for spec in manifest["arrays"]:
            dtype = np.dtype(spec["dtype"])
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            arrays[spec["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    return manifest["meta"], arrays
