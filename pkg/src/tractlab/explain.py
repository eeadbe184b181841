"""Exact Shapley attribution for tree ensembles and global importance summaries.

The explained quantity is the raw per-class margin. Absent features are
marginalized along each tree path by training cover (path-dependent game):
at a node splitting on a feature outside the coalition, mass is split
between the children in proportion to their cover.

For one leaf, that game is a product over the distinct features ``f`` on the
leaf's path of ``o_f`` (x follows the path at every node on ``f``) when ``f``
is in the coalition and ``z_f`` (product of cover ratios) otherwise. The
Shapley value of such a product game reduces to the coefficients of the
polynomial ``prod_f (z_f + o_f * y)``, which is built once per leaf and then
divided by one factor per feature, giving ``O(leaves * depth^2)`` work per
tree and row.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .baselines import DecisionTreeModel, ForestModel
from .dataset import Dataset
from .errors import InsufficientDataError, ParameterError, ShapeError, TractabilityError
from .gbt import GbtEnsemble
from .trees import LEAF, Tree


@dataclass(frozen=True, eq=False)
class TreeEnsemble:
    """Additive scorer: ``margin(x) = offset + sum_t trees[t].value[leaf_t(x)]``.

    Each tree's ``value`` has one column per class.
    """

    trees: tuple[Tree, ...]
    offset: np.ndarray
    n_features: int
    feature_names: tuple[str, ...] = field(default=())

    @property
    def n_outputs(self) -> int:
        return self.offset.shape[0]

    def margins(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.tile(self.offset, (X.shape[0], 1))
        for t in self.trees:
            out += t.value[t.apply(X)]
        return out

    def to_dict(self) -> dict:
        return {
            "type": "ensemble",
            "n_features": self.n_features,
            "feature_names": list(self.feature_names),
            "offset": [float(v) for v in self.offset],
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsemble":
        trees = tuple(Tree.from_dict(t) for t in d["trees"])
        return cls(trees, np.asarray(d["offset"], dtype=np.float64), int(d["n_features"]),
                   tuple(d.get("feature_names", ())))


def _with_value(tree: Tree, value: np.ndarray) -> Tree:
    return Tree(tree.feature, tree.threshold, tree.left, tree.right, value, tree.cover)


def _fractions(tree: Tree) -> np.ndarray:
    totals = tree.value.sum(axis=1, keepdims=True)
    return np.divide(tree.value, totals, out=np.zeros_like(tree.value), where=totals > 0)


def as_tree_ensemble(model) -> TreeEnsemble:
    """View any fitted tree model as an additive per-class scorer.

    Boosted ensembles score raw margins. Forests and single trees score leaf
    class fractions, averaged over the forest's trees.
    """
    if isinstance(model, TreeEnsemble):
        return model
    if isinstance(model, GbtEnsemble):
        K, lr = model.n_classes, model.learning_rate
        trees = []
        for rnd in model.rounds:
            for c, tree in enumerate(rnd):
                v = np.zeros((tree.n_nodes, K))
                v[:, c] = lr * tree.value[:, 0]
                trees.append(_with_value(tree, v))
        return TreeEnsemble(tuple(trees), np.asarray(model.base_score, dtype=np.float64),
                            len(model.schema), tuple(model.schema.names))
    if isinstance(model, ForestModel):
        n = len(model.trees)
        trees = tuple(_with_value(t, _fractions(t) / n) for t in model.trees)
        return TreeEnsemble(trees, np.zeros(model.n_classes), len(model.schema), tuple(model.schema.names))
    if isinstance(model, DecisionTreeModel):
        return TreeEnsemble((_with_value(model.tree, _fractions(model.tree)),),
                            np.zeros(model.n_classes), len(model.schema), tuple(model.schema.names))
    raise ParameterError(f"cannot explain a model of type {type(model).__name__}")


@dataclass(frozen=True, eq=False)
class ShapExplanation:
    """``phi`` is (K, M) for one row or (n, K, M) for a batch; ``base`` is (K,)."""

    phi: np.ndarray
    base: np.ndarray

    def total(self) -> np.ndarray:
        """``base + sum(phi)`` per class, which equals the explained margin."""
        return self.base + self.phi.sum(axis=-1)

    def write_csv(self, path: str | os.PathLike, feature_names, row_ids=None) -> None:
        phi = self.phi if self.phi.ndim == 3 else self.phi[None]
        ids = range(phi.shape[0]) if row_ids is None else row_ids
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_id", "class", "feature", "phi", "base"])
            for r, rid in enumerate(ids):
                for c in range(phi.shape[1]):
                    base = repr(float(self.base[c]))
                    for j, name in enumerate(feature_names):
                        w.writerow([rid, c + 1, name, repr(float(phi[r, c, j])), base])
        os.replace(tmp, path)


def _leaf_paths(tree: Tree):
    """Yield ``(leaf, [(node, went_left), ...])`` root to leaf."""
    stack = [(0, [])]
    while stack:
        node, path = stack.pop()
        if tree.feature[node] == LEAF:
            yield node, path
        else:
            stack.append((tree.right[node], path + [(node, False)]))
            stack.append((tree.left[node], path + [(node, True)]))


def _shapley_weights(d: int) -> np.ndarray:
    return np.array([math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)])


def _tree_shap(tree: Tree, X: np.ndarray, phi: np.ndarray, base: np.ndarray) -> None:
    cover = tree.require_cover()
    n = X.shape[0]
    go_left = {}
    for node in np.flatnonzero(tree.feature != LEAF):
        go_left[node] = X[:, tree.feature[node]] < tree.threshold[node]

    for leaf, path in _leaf_paths(tree):
        val = tree.value[leaf]
        if not path:
            base += val
            continue
        slot: dict[int, int] = {}
        z, o = [], []
        for node, left in path:
            f = int(tree.feature[node])
            child = tree.left[node] if left else tree.right[node]
            ratio = cover[child] / cover[node]
            follows = go_left[node] if left else ~go_left[node]
            if f not in slot:
                slot[f] = len(z)
                z.append(ratio)
                o.append(follows.astype(np.float64))
            else:
                i = slot[f]
                z[i] *= ratio
                o[i] = o[i] * follows
        d = len(z)
        feats = list(slot)
        z = np.asarray(z)
        o = np.column_stack(o)                      # (n, d), entries 0/1
        base += val * np.prod(z)

        P = np.zeros((n, d + 1))
        P[:, 0] = 1.0
        for i in range(d):
            nxt = P * z[i]
            nxt[:, 1:] += P[:, :-1] * o[:, [i]]
            P = nxt
        w = _shapley_weights(d)
        for i, f in enumerate(feats):
            on = o[:, i] > 0
            Q = P[:, :d] / z[i]
            if on.any():
                Pon = P[on]
                Qon = np.empty((Pon.shape[0], d))
                Qon[:, d - 1] = Pon[:, d]
                for k in range(d - 1, 0, -1):
                    Qon[:, k - 1] = Pon[:, k] - z[i] * Qon[:, k]
                Q[on] = Qon
            contrib = (o[:, i] - z[i]) * (Q @ w)
            phi[:, :, f] += contrib[:, None] * val[None, :]


def treeshap(model, x) -> ShapExplanation:
    """Exact path-dependent Shapley values of the per-class margins.

    ``x`` may be one row (phi of shape (K, M)) or a matrix (phi (n, K, M)).
    Raises :class:`MissingCoverError` for trees without cover records.
    """
    ens = as_tree_ensemble(model)
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.ndim != 2 or X.shape[1] != ens.n_features:
        raise ShapeError(f"expected rows of width {ens.n_features}, got shape {np.shape(x)}")
    K = ens.n_outputs
    phi = np.zeros((X.shape[0], K, ens.n_features))
    base = ens.offset.astype(np.float64).copy()
    for tree in ens.trees:
        _tree_shap(tree, X, phi, base)
    return ShapExplanation(phi[0] if single else phi, base)


# ---------------------------------------------------------------------------
# Subset-enumeration oracle


def coalition_values(model, x, max_features: int = 15) -> np.ndarray:
    """``v(S)`` for every coalition ``S`` (bitmask index), shape (2**M, K).

    Features in ``S`` are fixed to ``x``; the others route by cover
    proportions, found by plain recursive descent of each tree.
    """
    ens = as_tree_ensemble(model)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    M = ens.n_features
    if x.size != M:
        raise ShapeError(f"expected a row of width {M}, got {x.size}")
    if M > max_features:
        raise TractabilityError(f"{M} features means 2**{M} coalitions; limit is {max_features}")
    masks = np.arange(2 ** M)
    v = np.tile(ens.offset.astype(np.float64), (masks.size, 1))
    for tree in ens.trees:
        cover = tree.require_cover()

        def descend(node, weight):
            if tree.feature[node] == LEAF:
                v[:] += weight[:, None] * tree.value[node][None, :]
                return
            f = tree.feature[node]
            fixed = ((masks >> f) & 1).astype(bool)
            left_frac = cover[tree.left[node]] / cover[node]
            right_frac = cover[tree.right[node]] / cover[node]
            if x[f] < tree.threshold[node]:
                wl, wr = np.where(fixed, 1.0, left_frac), np.where(fixed, 0.0, right_frac)
            else:
                wl, wr = np.where(fixed, 0.0, left_frac), np.where(fixed, 1.0, right_frac)
            descend(tree.left[node], weight * wl)
            descend(tree.right[node], weight * wr)

        descend(0, np.ones(masks.size))
    return v


def brute_force_shapley(model, x, max_features: int = 15) -> np.ndarray:
    """Shapley values by summing weighted marginal contributions over all 2**M coalitions.

    Returns (K, M). Slow by design; used to check :func:`treeshap`.
    """
    ens = as_tree_ensemble(model)
    M = ens.n_features
    v = coalition_values(ens, x, max_features)
    masks = np.arange(2 ** M)
    sizes = np.array([bin(m).count("1") for m in masks])
    weight = np.array([math.factorial(s) * math.factorial(M - s - 1) / math.factorial(M) if s < M else 0.0
                       for s in range(M + 1)])
    phi = np.zeros((ens.n_outputs, M))
    for j in range(M):
        without = masks[((masks >> j) & 1) == 0]
        gains = v[without | (1 << j)] - v[without]
        phi[:, j] = (weight[sizes[without]][:, None] * gains).sum(axis=0)
    return phi


# ---------------------------------------------------------------------------
# Importance


@dataclass(frozen=True, eq=False)
class ImportanceReport:
    feature_names: tuple[str, ...]
    mean_abs: np.ndarray      # (K, M): mean |phi| per class
    aggregate: np.ndarray     # (M,): class-summed mean |phi|
    per_row_top: np.ndarray   # (n,): feature index with the largest class-summed |phi|
    top_counts: np.ndarray    # (M,)

    @property
    def n_rows(self) -> int:
        return int(self.per_row_top.size)

    @property
    def top_share(self) -> np.ndarray:
        return self.top_counts / self.n_rows

    @property
    def ranking(self) -> list[str]:
        order = np.argsort(-self.aggregate, kind="stable")
        return [self.feature_names[i] for i in order]

    def ranking_for_class(self, c: int) -> list[str]:
        order = np.argsort(-self.mean_abs[c - 1], kind="stable")
        return [self.feature_names[i] for i in order]

    def to_dict(self) -> dict:
        names = self.feature_names
        order = np.argsort(-self.aggregate, kind="stable")
        top_order = np.argsort(-self.top_counts, kind="stable")
        return {
            "ranking": [
                {"rank": r + 1, "feature": names[i], "mean_abs_shap": float(self.aggregate[i])}
                for r, i in enumerate(order)
            ],
            "per_class": [
                {
                    "class": c + 1,
                    "ranking": [
                        {"feature": names[i], "mean_abs_shap": float(self.mean_abs[c, i])}
                        for i in np.argsort(-self.mean_abs[c], kind="stable")
                    ],
                }
                for c in range(self.mean_abs.shape[0])
            ],
            "top_feature_tally": [
                {
                    "feature": names[i],
                    "count": int(self.top_counts[i]),
                    "share_pct": 100.0 * float(self.top_counts[i]) / self.n_rows,
                }
                for i in top_order
            ],
            "n_rows": self.n_rows,
        }


def global_importance(model, ds: Dataset, explanation: ShapExplanation | None = None) -> ImportanceReport:
    """Mean |phi| rankings and the per-row most important feature tally.

    Per-row tops use class-summed |phi|; ties go to the lower feature index.
    """
    if ds.n_rows == 0:
        raise InsufficientDataError("importance needs at least one row")
    exp = explanation if explanation is not None else treeshap(model, ds.X)
    phi = exp.phi if exp.phi.ndim == 3 else exp.phi[None]
    absphi = np.abs(phi)
    mean_abs = absphi.mean(axis=0)
    per_row = absphi.sum(axis=1)
    top = np.argmax(per_row, axis=1)
    counts = np.bincount(top, minlength=phi.shape[2])
    return ImportanceReport(tuple(ds.schema.names), mean_abs, mean_abs.sum(axis=0), top, counts)
