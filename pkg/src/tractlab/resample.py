"""SMOTE oversampling of under-represented classes in a training set."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .dataset import FRACTION, Dataset
from .errors import DegenerateClassError, MissingLabelsError, ParameterError

MATCH_MAJORITY = "match-majority"


@dataclass(frozen=True)
class SmoteParams:
    k_neighbors: int = 5
    target_count: int | str = MATCH_MAJORITY
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ParameterError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if self.target_count != MATCH_MAJORITY and int(self.target_count) < 1:
            raise ParameterError(f"target_count must be {MATCH_MAJORITY!r} or a positive integer")


@dataclass(frozen=True, eq=False)
class SmoteResult:
    dataset: Dataset
    # one row per synthetic sample: (synthetic_index, base_index, neighbor_index), plus t
    provenance: np.ndarray
    t: np.ndarray

    def write_provenance(self, path: str | os.PathLike) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["synthetic_index", "base_index", "neighbor_index", "t"])
            for (s, b, z), t in zip(self.provenance, self.t):
                w.writerow([int(s), int(b), int(z), repr(float(t))])
        os.replace(tmp, path)


def neighbor_distances(queries: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Euclidean distances on raw (unstandardized) feature values."""
    diff = queries[:, None, :] - rows[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def nearest_neighbors(rows: np.ndarray, k: int, chunk: int = 128) -> np.ndarray:
    """``k`` nearest other rows for each row; equal distances go to the lower index."""
    out = np.empty((rows.shape[0], k), dtype=np.int64)
    for start in range(0, rows.shape[0], chunk):
        d = neighbor_distances(rows[start:start + chunk], rows)
        idx = np.arange(d.shape[0])
        d[idx, start + idx] = np.inf
        out[start:start + chunk] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def smote_with_provenance(train: Dataset, params: SmoteParams = SmoteParams()) -> SmoteResult:
    """Oversample every class below the target count by neighbour interpolation.

    For each short class, members are visited round-robin in a seeded order;
    each visit picks one of the member's ``k`` nearest same-class neighbours
    ``z`` and a uniform ``t`` and emits ``x + t * (z - x)``. Original rows come
    first and unchanged; synthetic rows follow, grouped by class.
    """
    if train.y is None:
        raise MissingLabelsError("SMOTE needs labelled training data")
    counts = train.class_counts()
    target = int(counts.max()) if params.target_count == MATCH_MAJORITY else int(params.target_count)
    if target < counts.max():
        raise ParameterError(f"target_count {target} is below the majority count {int(counts.max())}")

    rng = np.random.default_rng(params.seed)
    fraction_cols = np.array([k == FRACTION for k in train.schema.kinds])
    new_rows, prov, ts = [], [], []
    next_index = train.n_rows
    for c in range(1, train.n_classes + 1):
        members = np.flatnonzero(train.y == c)
        need = target - members.size
        if need <= 0:
            continue
        if members.size < 2:
            raise DegenerateClassError(
                f"class {c} has {members.size} member(s); SMOTE needs at least 2 to interpolate"
            )
        k = min(params.k_neighbors, members.size - 1)
        pts = train.X[members]
        nbrs = nearest_neighbors(pts, k)
        order = rng.permutation(members.size)
        picks = rng.integers(0, k, size=need)
        t = rng.random(need)
        for s in range(need):
            i = order[s % members.size]
            j = nbrs[i, picks[s]]
            x, z = pts[i], pts[j]
            row = x + t[s] * (z - x)
            # float rounding may step one ulp outside [0, 1]
            row[fraction_cols] = np.clip(row[fraction_cols], 0.0, 1.0)
            new_rows.append(row)
            prov.append((next_index, members[i], members[j]))
            ts.append(t[s])
            next_index += 1

    if not new_rows:
        return SmoteResult(train, np.zeros((0, 3), dtype=np.int64), np.zeros(0))
    prov = np.asarray(prov, dtype=np.int64)
    X = np.vstack([train.X, np.asarray(new_rows)])
    y = np.concatenate([train.y, train.y[prov[:, 1]]])
    out = Dataset(train.schema, X, y, train.n_classes)
    return SmoteResult(out, prov, np.asarray(ts))


def smote(train: Dataset, params: SmoteParams = SmoteParams()) -> Dataset:
    return smote_with_provenance(train, params).dataset
