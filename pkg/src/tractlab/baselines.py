"""Comparison classifiers: k-nearest neighbours, CART decision tree, random forest."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, FeatureSchema, derive_seed
from .errors import InsufficientDataError, MissingLabelsError, ParameterError
from .trees import LEAF, Tree, TreeBuilder, best_split, check_width


def vote(labels: np.ndarray, n_classes: int) -> int:
    """Majority label in ``1..n_classes``; ties go to the smallest label."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64) - 1, minlength=n_classes)
    return int(np.argmax(counts)) + 1


def _require_labels(ds: Dataset):
    if ds.y is None:
        raise MissingLabelsError("training data carries no labels")
    if ds.n_rows == 0:
        raise InsufficientDataError("training data is empty")


# ---------------------------------------------------------------------------
# KNN


@dataclass(frozen=True, eq=False)
class KnnModel:
    X: np.ndarray
    y: np.ndarray
    k: int
    n_classes: int
    schema: FeatureSchema

    def predict(self, X) -> np.ndarray:
        return np.atleast_1d(knn_predict(self, X))

    def to_dict(self) -> dict:
        return {
            "type": "knn",
            "k": self.k,
            "n_classes": self.n_classes,
            "schema": self.schema.to_dict(),
            "rows": [[float(v) for v in r] for r in self.X],
            "labels": [int(v) for v in self.y],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KnnModel":
        schema = FeatureSchema.from_dict(d["schema"])
        X = np.asarray(d["rows"], dtype=np.float64).reshape(-1, len(schema))
        return cls(X, np.asarray(d["labels"], dtype=np.int64), int(d["k"]), int(d["n_classes"]), schema)


def knn_fit(train: Dataset, k: int) -> KnnModel:
    _require_labels(train)
    if not 1 <= k <= train.n_rows:
        raise ParameterError(f"k must lie in 1..{train.n_rows}, got {k}")
    return KnnModel(train.X, train.y, int(k), train.n_classes, train.schema)


def knn_predict(model: KnnModel, x, chunk: int = 256):
    """Majority vote over the ``k`` nearest training rows (Euclidean).

    Distance ties go to the lower training row index, vote ties to the
    smallest label. A single row gives an int, a matrix an array.
    """
    X, single = check_width(x, model.X.shape[1])
    k = model.k
    onehot = np.eye(model.n_classes)[model.y - 1]
    cols = np.ascontiguousarray(model.X.T)
    out = np.empty(X.shape[0], dtype=np.int64)
    for start in range(0, X.shape[0], chunk):
        q = X[start:start + chunk]
        d2 = np.zeros((q.shape[0], cols.shape[1]))
        for j in range(cols.shape[0]):
            diff = q[:, j, None] - cols[j][None, :]
            d2 += diff * diff
        # everything strictly closer than the k-th distance, then the lowest-index ties at it
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1:k]
        closer = d2 < kth
        need = k - closer.sum(axis=1, keepdims=True)
        at = d2 == kth
        chosen = closer | (at & (np.cumsum(at, axis=1) <= need))
        counts = chosen.astype(np.float64) @ onehot
        out[start:start + chunk] = np.argmax(counts, axis=1) + 1
    return int(out[0]) if single else out


# ---------------------------------------------------------------------------
# CART


def _gini(counts: np.ndarray) -> np.ndarray:
    n = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / n[..., None]
        imp = 1.0 - (p * p).sum(axis=-1)
    return np.where(n > 0, imp, 0.0)


def _entropy(counts: np.ndarray) -> np.ndarray:
    n = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / n[..., None]
        terms = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return np.where(n > 0, terms.sum(axis=-1), 0.0)


IMPURITY = {"gini": _gini, "entropy": _entropy}


def impurity(counts, criterion: str = "gini") -> float:
    return float(IMPURITY[criterion](np.asarray(counts, dtype=np.float64)))


def _decrease_fn(criterion: str):
    imp = IMPURITY[criterion]

    def gain(left, right, parent):
        nl, nr = left.sum(axis=-1), right.sum(axis=-1)
        n = nl + nr
        return imp(parent) - (nl / n) * imp(left) - (nr / n) * imp(right)

    return gain


def _grow(X, onehot, rows, max_depth, min_leaf, criterion, sample_features, presorted=None):
    K = onehot.shape[1]
    builder = TreeBuilder(K)
    gain_fn = _decrease_fn(criterion)

    def grow(rows, depth):
        counts = onehot[rows].sum(axis=0)
        node = builder.add(counts, rows.shape[0])
        if np.count_nonzero(counts) <= 1:
            return node
        if max_depth is not None and depth >= max_depth:
            return node
        split = best_split(X, rows, sample_features(), onehot, gain_fn, min_leaf, presorted)
        if split is None:
            return node
        _, f, thr = split
        go_left = X[rows, f] < thr
        left = grow(rows[go_left], depth + 1)
        right = grow(rows[~go_left], depth + 1)
        builder.make_split(node, f, thr, left, right)
        return node

    grow(np.asarray(rows, dtype=np.int64), 0)
    return builder.build()


@dataclass(frozen=True, eq=False)
class DecisionTreeModel:
    tree: Tree
    n_classes: int
    schema: FeatureSchema
    params: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        return np.atleast_1d(tree_predict(self, X))

    def to_dict(self) -> dict:
        return {
            "type": "tree",
            "n_classes": self.n_classes,
            "schema": self.schema.to_dict(),
            "params": dict(self.params),
            "tree": self.tree.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTreeModel":
        return cls(Tree.from_dict(d["tree"]), int(d["n_classes"]), FeatureSchema.from_dict(d["schema"]), d.get("params", {}))


def _check_tree_params(max_depth, min_samples_leaf, criterion):
    if max_depth is not None and max_depth < 0:
        raise ParameterError(f"max_depth must be >= 0 or None, got {max_depth}")
    if min_samples_leaf < 1:
        raise ParameterError(f"min_samples_leaf must be >= 1, got {min_samples_leaf}")
    if criterion not in IMPURITY:
        raise ParameterError(f"criterion must be one of {sorted(IMPURITY)}, got {criterion!r}")


def tree_fit(
    train: Dataset,
    max_depth: int | None = None,
    min_samples_leaf: int = 1,
    criterion: str = "gini",
) -> DecisionTreeModel:
    """Greedy CART growth on impurity decrease.

    A node stops when it is pure, at ``max_depth``, or when no threshold
    leaves ``min_samples_leaf`` rows on each side.
    """
    _require_labels(train)
    _check_tree_params(max_depth, min_samples_leaf, criterion)
    K = train.n_classes
    onehot = np.eye(K)[train.y - 1]
    all_features = np.arange(train.X.shape[1])
    presorted = np.argsort(train.X, axis=0, kind="stable")
    tree = _grow(train.X, onehot, np.arange(train.n_rows), max_depth, min_samples_leaf, criterion,
                 lambda: all_features, presorted)
    params = {"max_depth": max_depth, "min_samples_leaf": min_samples_leaf, "criterion": criterion}
    return DecisionTreeModel(tree, K, train.schema, params)


def leaf_labels(tree: Tree) -> np.ndarray:
    """Per-node argmax class (ties to the smallest label)."""
    return np.argmax(tree.value, axis=1) + 1


def tree_predict(model: DecisionTreeModel | Tree, x):
    tree = model.tree if isinstance(model, DecisionTreeModel) else model
    if isinstance(model, DecisionTreeModel):
        X, single = check_width(x, len(model.schema))
    else:
        X, single = check_width(x, max(np.shape(x)[-1], _tree_width(model)))
    labels = leaf_labels(tree)[tree.apply(X)]
    return int(labels[0]) if single else labels


def _tree_width(model) -> int:
    if isinstance(model, DecisionTreeModel):
        return len(model.schema)
    used = model.used_features()
    return max(used) + 1 if used else 1


# ---------------------------------------------------------------------------
# Random forest


def resolve_features_per_split(setting, n_features: int) -> int:
    if setting == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    if setting == "all":
        return n_features
    size = int(setting)
    if size < 1:
        raise ParameterError(f"features_per_split must be >= 1, got {setting}")
    return min(size, n_features)


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple[Tree, ...]
    n_classes: int
    schema: FeatureSchema
    params: dict
    bootstrap_indices: tuple[np.ndarray, ...] = field(default=(), repr=False)
    feature_subsets: tuple[tuple[tuple[int, ...], ...], ...] = field(default=(), repr=False)

    def predict(self, X) -> np.ndarray:
        return np.atleast_1d(forest_predict(self, X))

    def vote_fractions(self, X) -> np.ndarray:
        X, _ = check_width(X, len(self.schema))
        votes = np.zeros((X.shape[0], self.n_classes))
        rows = np.arange(X.shape[0])
        for tree in self.trees:
            votes[rows, leaf_labels(tree)[tree.apply(X)] - 1] += 1.0
        return votes / len(self.trees)

    def to_dict(self) -> dict:
        return {
            "type": "forest",
            "n_classes": self.n_classes,
            "schema": self.schema.to_dict(),
            "params": dict(self.params),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        trees = tuple(Tree.from_dict(t) for t in d["trees"])
        return cls(trees, int(d["n_classes"]), FeatureSchema.from_dict(d["schema"]), d.get("params", {}))


def forest_fit(
    train: Dataset,
    n_trees: int = 100,
    max_depth: int | None = None,
    features_per_split="sqrt",
    bootstrap: bool = True,
    seed: int = 0,
    min_samples_leaf: int = 1,
    criterion: str = "gini",
) -> ForestModel:
    """Bagged CART trees with a fresh random feature subset at every node.

    Each tree draws from its own seed derived from ``seed`` and the tree
    index, so tree order (not schedule) fixes the result.
    """
    _require_labels(train)
    _check_tree_params(max_depth, min_samples_leaf, criterion)
    if n_trees < 1:
        raise ParameterError(f"n_trees must be >= 1, got {n_trees}")
    n, M = train.X.shape
    K = train.n_classes
    size = resolve_features_per_split(features_per_split, M)
    onehot = np.eye(K)[train.y - 1]
    all_features = np.arange(M)
    presorted = np.argsort(train.X, axis=0, kind="stable")

    trees, boots, subsets = [], [], []
    for t in range(n_trees):
        rng = np.random.default_rng(derive_seed(seed, "forest", t))
        rows = rng.integers(0, n, n) if bootstrap else np.arange(n)
        drawn = []

        def sample_features():
            if size >= M:
                return all_features
            chosen = np.sort(rng.choice(M, size=size, replace=False))
            drawn.append(tuple(int(f) for f in chosen))
            return chosen

        trees.append(_grow(train.X, onehot, rows, max_depth, min_samples_leaf, criterion, sample_features, presorted))
        boots.append(rows)
        subsets.append(tuple(drawn))
    params = {
        "n_trees": n_trees,
        "max_depth": max_depth,
        "features_per_split": features_per_split,
        "bootstrap": bootstrap,
        "seed": seed,
        "min_samples_leaf": min_samples_leaf,
        "criterion": criterion,
    }
    return ForestModel(tuple(trees), K, train.schema, params, tuple(boots), tuple(subsets))


def forest_predict(model: ForestModel, x):
    """Majority vote over tree predictions; ties go to the smallest label."""
    X, single = check_width(x, len(model.schema))
    per_tree = np.stack([leaf_labels(t)[t.apply(X)] for t in model.trees], axis=1)
    counts = np.zeros((X.shape[0], model.n_classes), dtype=np.int64)
    for col in per_tree.T:
        counts[np.arange(X.shape[0]), col - 1] += 1
    labels = np.argmax(counts, axis=1) + 1
    return int(labels[0]) if single else labels
