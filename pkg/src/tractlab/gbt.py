"""Second-order gradient-boosted trees with a multiclass softmax objective."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, fields

import numpy as np

from .dataset import Dataset, FeatureSchema, FoldPlan, derive_seed
from .errors import MissingClassError, MissingLabelsError, ParameterError
from .trees import Tree, TreeBuilder, best_split, check_width


@dataclass(frozen=True)
class GbtParams:
    learning_rate: float = 0.3
    n_estimators: int = 100
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    max_depth: int = 6
    alpha: float = 0.0
    gamma: float = 0.0
    reg_lambda: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.learning_rate <= 1.0:
            raise ParameterError(f"learning_rate must lie in (0, 1], got {self.learning_rate}")
        if self.n_estimators < 0:
            raise ParameterError(f"n_estimators must be >= 0, got {self.n_estimators}")
        if not 0.0 < self.subsample <= 1.0:
            raise ParameterError(f"subsample must lie in (0, 1], got {self.subsample}")
        if not 0.0 < self.colsample_bytree <= 1.0:
            raise ParameterError(f"colsample_bytree must lie in (0, 1], got {self.colsample_bytree}")
        if self.max_depth < 1:
            raise ParameterError(f"max_depth must be >= 1, got {self.max_depth}")
        for name in ("alpha", "gamma", "reg_lambda"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0, got {getattr(self, name)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GbtParams":
        d = dict(d)
        if "lambda" in d:
            d["reg_lambda"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown boosting parameters: {sorted(unknown)}")
        return cls(**d)


def expand_grid(spec: dict, base: GbtParams | None = None) -> list[GbtParams]:
    """Cartesian product of per-parameter value lists, in field declaration order."""
    base = base or GbtParams()
    spec = {("reg_lambda" if k == "lambda" else k): v for k, v in spec.items()}
    order = [f.name for f in fields(GbtParams) if f.name in spec]
    unknown = set(spec) - set(order)
    if unknown:
        raise ParameterError(f"unknown boosting parameters: {sorted(unknown)}")
    values = [v if isinstance(v, (list, tuple)) else [v] for v in (spec[k] for k in order)]
    out = []
    for combo in itertools.product(*values):
        d = base.to_dict()
        d.update(zip(order, combo))
        out.append(GbtParams(**d))
    return out


def softmax(margins: np.ndarray) -> np.ndarray:
    m = np.asarray(margins, dtype=np.float64)
    z = m - m.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_loss(margins: np.ndarray, y: np.ndarray) -> float:
    """Mean multiclass cross-entropy of labels ``y`` (1-based) under softmax(margins)."""
    m = np.asarray(margins, dtype=np.float64)
    top = m.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(m - top).sum(axis=1))
    return float(np.mean(lse - m[np.arange(m.shape[0]), np.asarray(y) - 1]))


def soft_threshold(G, alpha: float):
    return np.sign(G) * np.maximum(np.abs(G) - alpha, 0.0)


def leaf_weight(G: float, H: float, alpha: float, reg_lambda: float) -> float:
    denom = H + reg_lambda
    if denom <= 0:
        return 0.0
    return float(-soft_threshold(G, alpha) / denom)


def _structure_score(G, H, alpha, reg_lambda):
    T = soft_threshold(G, alpha) if alpha > 0 else G
    denom = H + reg_lambda
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(denom > 0, T * T / np.where(denom > 0, denom, 1.0), 0.0)


def _gain_fn(params: GbtParams):
    a, lam, gam = params.alpha, params.reg_lambda, params.gamma

    def gain(left, right, parent):
        sl = _structure_score(left[..., 0], left[..., 1], a, lam)
        sr = _structure_score(right[..., 0], right[..., 1], a, lam)
        sp = _structure_score(parent[..., 0], parent[..., 1], a, lam)
        return 0.5 * (sl + sr - sp) - gam

    return gain


def _grow_booster(X, gh, rows, features, params: GbtParams, presorted=None) -> Tree:
    builder = TreeBuilder(1)
    gain_fn = _gain_fn(params)

    def grow(rows, depth):
        G, H = gh[rows].sum(axis=0)
        node = builder.add([leaf_weight(G, H, params.alpha, params.reg_lambda)], rows.shape[0])
        if depth >= params.max_depth:
            return node
        split = best_split(X, rows, features, gh, gain_fn, 1, presorted)
        if split is None or not split[0] > 0.0:
            return node
        _, f, thr = split
        go_left = X[rows, f] < thr
        left = grow(rows[go_left], depth + 1)
        right = grow(rows[~go_left], depth + 1)
        builder.make_split(node, f, thr, left, right)
        return node

    grow(rows, 0)
    return builder.build()


@dataclass(frozen=True, eq=False)
class GbtEnsemble:
    n_classes: int
    base_score: np.ndarray
    rounds: tuple[tuple[Tree, ...], ...]
    params: GbtParams
    schema: FeatureSchema

    @property
    def learning_rate(self) -> float:
        return self.params.learning_rate

    def predict(self, X) -> np.ndarray:
        return np.atleast_1d(gbt_predict_label(self, X))

    def predict_proba(self, X) -> np.ndarray:
        return np.atleast_2d(gbt_predict_proba(self, X))

    def to_dict(self) -> dict:
        return {
            "type": "gbt",
            "n_classes": self.n_classes,
            "schema": self.schema.to_dict(),
            "params": self.params.to_dict(),
            "base_score": [float(b) for b in self.base_score],
            "rounds": [[t.to_dict() for t in rnd] for rnd in self.rounds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbtEnsemble":
        rounds = tuple(tuple(Tree.from_dict(t) for t in rnd) for rnd in d["rounds"])
        return cls(
            int(d["n_classes"]),
            np.asarray(d["base_score"], dtype=np.float64),
            rounds,
            GbtParams.from_dict(d["params"]),
            FeatureSchema.from_dict(d["schema"]),
        )


def _sample(rng: np.random.Generator, n: int, fraction: float) -> np.ndarray:
    if fraction >= 1.0:
        return np.arange(n)
    size = max(1, int(round(fraction * n)))
    return np.sort(rng.choice(n, size=size, replace=False))


def gbt_fit(train: Dataset, params: GbtParams, *, trace: list | None = None) -> GbtEnsemble:
    """Boost ``K`` regression trees per round on softmax gradients and hessians.

    Rounds are sequential; within a round every class tree sees the same
    margin snapshot. Row and column samples are drawn per tree from seeds
    derived from ``(seed, round, class)``. When ``trace`` is a list, the
    training log-loss before the first round and after every round is
    appended to it.
    """
    if train.y is None:
        raise MissingLabelsError("training data carries no labels")
    if params.n_estimators < 0:
        raise ParameterError("n_estimators must be >= 0")
    K = train.n_classes
    counts = train.class_counts()
    if np.any(counts == 0):
        missing = [c + 1 for c in np.flatnonzero(counts == 0)]
        raise MissingClassError(f"classes {missing} absent from the training data")
    n, M = train.X.shape
    X = train.X
    base = np.log(counts / n)
    onehot = np.eye(K)[train.y - 1]
    margins = np.tile(base, (n, 1))
    lr = params.learning_rate
    if trace is not None:
        trace.append(log_loss(margins, train.y))

    presorted = np.argsort(X, axis=0, kind="stable")
    rounds = []
    for r in range(params.n_estimators):
        p = softmax(margins)
        trees = []
        for c in range(K):
            rng = np.random.default_rng(derive_seed(params.seed, "gbt", r, c))
            rows = _sample(rng, n, params.subsample)
            feats = _sample(rng, M, params.colsample_bytree)
            pc = p[:, c]
            gh = np.column_stack([pc - onehot[:, c], pc * (1.0 - pc)])
            trees.append(_grow_booster(X, gh, rows, feats, params, presorted))
        for c, tree in enumerate(trees):
            margins[:, c] += lr * tree.value[tree.apply(X), 0]
        rounds.append(tuple(trees))
        if trace is not None:
            trace.append(log_loss(margins, train.y))
    return GbtEnsemble(K, base, tuple(rounds), params, train.schema)


def gbt_predict_margins(model: GbtEnsemble, x):
    """``base_score_c + learning_rate * sum of reached class-c leaf scores``."""
    X, single = check_width(x, len(model.schema))
    margins = np.tile(model.base_score, (X.shape[0], 1))
    lr = model.learning_rate
    for trees in model.rounds:
        for c, tree in enumerate(trees):
            margins[:, c] += lr * tree.value[tree.apply(X), 0]
    return margins[0] if single else margins


def gbt_predict_proba(model: GbtEnsemble, x):
    return softmax(gbt_predict_margins(model, x))


def gbt_predict_label(model: GbtEnsemble, x):
    """Argmax class; exact ties go to the smallest label."""
    m = gbt_predict_margins(model, x)
    labels = np.argmax(np.atleast_2d(m), axis=1) + 1
    return int(labels[0]) if np.ndim(m) == 1 else labels


def grid_search(train: Dataset, grid: list[GbtParams], folds: FoldPlan, resample=None):
    """Pick the candidate with the highest mean held-out macro-F1.

    Returns ``(best, cv_scores)``; ties go to the earliest grid position.
    """
    from .selection import cross_val_macro_f1, pick_best

    if not grid:
        raise ParameterError("grid must contain at least one candidate")
    scores = [
        cross_val_macro_f1(train, folds, lambda ds, p=p: gbt_fit(ds, p), resample)
        for p in grid
    ]
    return grid[pick_best(scores)], scores
