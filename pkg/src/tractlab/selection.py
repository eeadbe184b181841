"""Cross-validated model selection on held-out macro-F1."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .dataset import Dataset, FoldPlan, derive_seed
from .metrics import macro_f1
from .resample import SmoteParams, smote


def cross_val_macro_f1(
    train: Dataset,
    folds: FoldPlan,
    fit: Callable[[Dataset], object],
    resample: SmoteParams | None = None,
) -> float:
    """Mean held-out macro-F1 over the folds of ``folds``.

    When ``resample`` is given, SMOTE is applied to each in-fold training
    part only; held-out rows are never oversampled.
    """
    scores = []
    for f in range(folds.k):
        tr_idx, te_idx = folds.split(f)
        part = train.take(tr_idx)
        if resample is not None:
            part = smote(part, SmoteParams(resample.k_neighbors, resample.target_count,
                                           derive_seed(resample.seed, "fold", f)))
        model = fit(part)
        held = train.take(te_idx)
        scores.append(macro_f1(held.y, model.predict(held.X), train.n_classes))
    return float(np.mean(scores))


def pick_best(scores) -> int:
    """Index of the maximal score; ties go to the earliest position."""
    return int(np.argmax(np.asarray(scores, dtype=np.float64)))
