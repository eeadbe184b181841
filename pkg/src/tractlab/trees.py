"""Binary decision tree structure shared by CART, random forests and boosting.

Trees are stored as flat node arrays (root at index 0). Routing is global:
``x[feature] < threshold`` goes left, everything else (ties included) goes
right. Every node records its training cover, the number of training rows
that reached it, which the attribution code uses to marginalize features.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import MissingCoverError, ShapeError

LEAF = -1


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray    # int64, LEAF for leaves
    threshold: np.ndarray  # float64, nan for leaves
    left: np.ndarray       # int64, -1 for leaves
    right: np.ndarray
    value: np.ndarray      # (n_nodes, n_outputs): class counts or leaf scores
    cover: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature == LEAF

    @property
    def n_leaves(self) -> int:
        return int(self.is_leaf.sum())

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            if self.feature[node] == LEAF:
                best = max(best, d)
            else:
                stack.append((self.left[node], d + 1))
                stack.append((self.right[node], d + 1))
        return best

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f != LEAF}

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Index of the leaf reached by each row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] != LEAF
        while active.any():
            r, nd = rows[active], node[active]
            go_left = X[r, self.feature[nd]] < self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] != LEAF
        return node

    def require_cover(self) -> np.ndarray:
        if self.cover is None:
            raise MissingCoverError("tree carries no cover records")
        internal = self.feature != LEAF
        if np.any(self.cover[internal] <= 0):
            raise MissingCoverError("internal node with zero cover")
        return self.cover

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            rec = {"id": i}
            if self.feature[i] == LEAF:
                rec["leaf"] = [float(v) for v in self.value[i]]
            else:
                rec.update(
                    feature_index=int(self.feature[i]),
                    threshold=float(self.threshold[i]),
                    left=int(self.left[i]),
                    right=int(self.right[i]),
                    value=[float(v) for v in self.value[i]],
                )
            if self.cover is not None:
                rec["cover"] = float(self.cover[i])
            nodes.append(rec)
        return {"nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        nodes = sorted(d["nodes"], key=lambda r: r["id"])
        n = len(nodes)
        feature = np.full(n, LEAF, dtype=np.int64)
        threshold = np.full(n, np.nan)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        width = len(nodes[0].get("leaf", nodes[0].get("value", [])))
        value = np.zeros((n, width))
        has_cover = all("cover" in r for r in nodes)
        cover = np.zeros(n) if has_cover else None
        for i, rec in enumerate(nodes):
            if "leaf" in rec:
                value[i] = rec["leaf"]
            else:
                feature[i] = rec["feature_index"]
                threshold[i] = rec["threshold"]
                left[i], right[i] = rec["left"], rec["right"]
                value[i] = rec.get("value", np.zeros(width))
            if has_cover:
                cover[i] = rec["cover"]
        return cls(feature, threshold, left, right, value, cover)


def check_width(X, n_features: int) -> tuple[np.ndarray, bool]:
    """Coerce to a 2-D float array; the flag says whether a single row was given."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n_features or X.shape[1] == 0:
        raise ShapeError(f"expected rows of width {n_features}, got shape {np.shape(X)}")
    return X, single


# ---------------------------------------------------------------------------
# Split search

GainFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def best_split(
    X: np.ndarray,
    rows: np.ndarray,
    features: np.ndarray,
    stats: np.ndarray,
    gain_fn: GainFn,
    min_leaf: int = 1,
    presorted: np.ndarray | None = None,
):
    """Exhaustive midpoint-threshold search over ``features`` for the node ``rows``.

    ``stats`` holds additive per-row statistics, shape (n_total, S); ``rows``
    may repeat an index (bootstrap draws), which counts it that many times.
    ``gain_fn(left, right, parent)`` maps summed statistics of shape
    (..., S) to a gain. Candidate thresholds are midpoints between
    consecutive distinct sorted values. Ties in gain go to the lower feature
    index, then the lower threshold. ``presorted`` is an optional
    ``argsort(X, axis=0)`` reused across nodes to skip per-node sorting.

    Returns ``(gain, feature, threshold)`` or ``None`` when no candidate
    leaves ``min_leaf`` rows on both sides.
    """
    m = rows.shape[0]
    if m < 2 * min_leaf or features.size == 0:
        return None
    features = np.sort(features)
    n_total = X.shape[0]
    mult = np.bincount(rows, minlength=n_total)
    if presorted is not None and 8 * m >= n_total:
        ps = presorted[:, features]
        keep = mult[ps] > 0
        order = ps.T[keep.T].reshape(features.size, -1).T   # (m_distinct, F) row ids
    else:
        distinct = np.flatnonzero(mult)
        sub = X[np.ix_(distinct, features)]
        order = distinct[np.argsort(sub, axis=0, kind="stable")]
    xs = X[order, features[None, :]]
    st = stats[order]                             # (m_distinct, F, S)
    if order.shape[0] == m:
        n_left = np.arange(1, m)[:, None]
    else:
        w = mult[order]
        st = st * w[..., None]
        n_left = np.cumsum(w, axis=0)[:-1]
    cum = np.cumsum(st, axis=0)
    parent = stats[rows].sum(axis=0)
    left = cum[:-1]                               # split after sorted position i
    right = parent - left
    if left.shape[0] == 0:
        return None
    gain = gain_fn(left, right, parent)           # (m_distinct - 1, F)

    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (m - n_left >= min_leaf)
    if not valid.any():
        return None
    gain = np.where(valid, gain, -np.inf).T       # (F, positions): feature-major for tie order
    flat = int(np.argmax(gain))
    fi, pos = divmod(flat, gain.shape[1])
    a, b = xs[pos, fi], xs[pos + 1, fi]
    thr = a + (b - a) / 2.0
    if not a < thr <= b:
        thr = b
    return float(gain[fi, pos]), int(features[fi]), float(thr)


class TreeBuilder:
    """Accumulates nodes in preorder while a fit recursion runs."""

    def __init__(self, n_outputs: int):
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.cover = [], []
        self.n_outputs = n_outputs

    def add(self, value, cover) -> int:
        self.feature.append(LEAF)
        self.threshold.append(np.nan)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(np.asarray(value, dtype=np.float64).reshape(self.n_outputs))
        self.cover.append(float(cover))
        return len(self.feature) - 1

    def make_split(self, node: int, feature: int, threshold: float, left: int, right: int):
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.left[node] = left
        self.right[node] = right

    def build(self) -> Tree:
        return Tree(
            np.asarray(self.feature, dtype=np.int64),
            np.asarray(self.threshold, dtype=np.float64),
            np.asarray(self.left, dtype=np.int64),
            np.asarray(self.right, dtype=np.int64),
            np.vstack(self.value),
            np.asarray(self.cover, dtype=np.float64),
        )
