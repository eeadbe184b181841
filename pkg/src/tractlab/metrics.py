"""Confusion matrices and one-vs-rest / macro-averaged classification scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMatrixError, RangeError, ShapeError


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """``counts[i, j]`` = rows of true class ``i + 1`` predicted as ``j + 1``."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ShapeError(f"confusion matrix must be square, got shape {c.shape}")
        if np.any(c < 0):
            raise RangeError(None, None, None, "confusion counts must be nonnegative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def K(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))


@dataclass(frozen=True)
class MacroScores:
    per_class: tuple[tuple[float, float, float], ...]
    macro_precision: float
    macro_recall: float
    macro_f1_standard: float
    macro_f1_unscaled: float
    accuracy: float

    def to_dict(self) -> dict:
        return {
            "per_class": [
                {"class": i + 1, "precision": p, "recall": r, "f1": f}
                for i, (p, r, f) in enumerate(self.per_class)
            ],
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1_standard,
            "macro_f1_unscaled": self.macro_f1_unscaled,
            "accuracy": self.accuracy,
        }


def confusion(y_true, y_pred, K: int) -> ConfusionMatrix:
    t = np.asarray(y_true, dtype=np.int64).reshape(-1)
    p = np.asarray(y_pred, dtype=np.int64).reshape(-1)
    if t.shape != p.shape:
        raise ShapeError(f"length mismatch: {t.size} true labels vs {p.size} predictions")
    for arr in (t, p):
        if arr.size and (arr.min() < 1 or arr.max() > K):
            raise RangeError(None, None, None, f"labels must lie in 1..{K}")
    counts = np.zeros((K, K), dtype=np.int64)
    np.add.at(counts, (t - 1, p - 1), 1)
    return ConfusionMatrix(counts)


def _ratio(num: float, den: float) -> float:
    # 0/0 cells (class never predicted and never true) are defined as 0
    return num / den if den else 0.0


def per_class_prf(cm: ConfusionMatrix, c: int) -> tuple[float, float, float]:
    """One-vs-rest precision, recall and F1 for class ``c`` (1-based)."""
    if cm.total == 0:
        raise EmptyMatrixError("metrics are undefined on an empty confusion matrix")
    i = c - 1
    tp = int(cm.counts[i, i])
    fp = int(cm.counts[:, i].sum()) - tp
    fn = int(cm.counts[i, :].sum()) - tp
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    f = _ratio(2.0 * p * r, p + r)
    return p, r, f


def macro_scores(cm: ConfusionMatrix) -> MacroScores:
    if cm.total == 0:
        raise EmptyMatrixError("metrics are undefined on an empty confusion matrix")
    per = tuple(per_class_prf(cm, c) for c in range(1, cm.K + 1))
    mp = sum(p for p, _, _ in per) / cm.K
    mr = sum(r for _, r, _ in per) / cm.K
    # the literal form omits the factor 2 and so tops out at 0.5
    literal = _ratio(mp * mr, mp + mr)
    return MacroScores(per, mp, mr, 2.0 * literal, literal, cm.trace / cm.total)


def macro_f1(y_true, y_pred, K: int) -> float:
    return macro_scores(confusion(y_true, y_pred, K)).macro_f1_standard


def row_normalize(cm: ConfusionMatrix) -> np.ndarray:
    """Divide each row by its sum; all-zero rows stay zero."""
    c = cm.counts.astype(np.float64)
    sums = c.sum(axis=1, keepdims=True)
    return np.divide(c, sums, out=np.zeros_like(c), where=sums > 0)
