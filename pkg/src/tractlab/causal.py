"""Counterfactual interventions on a frozen classifier and Welch t-test profiling.

The outcome of a unit is its predicted class. An intervention rewrites one
feature column and re-scores; the stratum of "high prevalence" units is fixed
by the control predictions before anything is perturbed.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .dataset import FRACTION, Dataset
from .errors import EmptyStratumError, InsufficientDataError, ParameterError, SchemaError

RELATIVE = "relative"
SET = "set"


@dataclass(frozen=True)
class InterventionSpec:
    feature: str
    mode: str = RELATIVE
    amount: float = 0.0
    clip: tuple[float, float] | None = None

    def __post_init__(self):
        if self.mode not in (RELATIVE, SET):
            raise ParameterError(f"mode must be {RELATIVE!r} or {SET!r}, got {self.mode!r}")
        if self.mode == RELATIVE and self.amount <= -1.0:
            raise ParameterError(f"relative change must exceed -100%, got {self.amount}")
        if self.clip is not None:
            lo, hi = self.clip
            if lo > hi:
                raise ParameterError(f"clip range is inverted: {self.clip}")

    @property
    def label(self) -> str:
        if self.mode == RELATIVE:
            return f"{self.amount * 100:+g}%"
        return f"={self.amount:g}"

    @classmethod
    def from_dict(cls, d: dict) -> "InterventionSpec":
        clip = d.get("clip")
        if "relative" in d:
            return cls(d["feature"], RELATIVE, float(d["relative"]), None if clip is None else tuple(clip))
        if "set" in d:
            return cls(d["feature"], SET, float(d["set"]), None if clip is None else tuple(clip))
        return cls(d["feature"], d.get("mode", RELATIVE), float(d.get("amount", 0.0)),
                   None if clip is None else tuple(clip))

    def to_dict(self) -> dict:
        d = {"feature": self.feature, self.mode: self.amount}
        if self.clip is not None:
            d["clip"] = list(self.clip)
        return d


# the three urban-design experiments: more green space, less developed area, lower PM2.5
DEFAULT_INTERVENTIONS = (
    InterventionSpec("GS", RELATIVE, 0.25),
    InterventionSpec("DA", RELATIVE, -0.25),
    InterventionSpec("TE", RELATIVE, -0.25),
)


def intervene(ds: Dataset, spec: InterventionSpec) -> Dataset:
    """Copy of ``ds`` with one column rewritten; every other column is untouched."""
    try:
        j = ds.schema.index(spec.feature)
    except SchemaError:
        raise SchemaError(f"intervention on unknown feature {spec.feature!r}") from None
    X = ds.X.copy()
    col = X[:, j]
    new = col * (1.0 + spec.amount) if spec.mode == RELATIVE else np.full_like(col, spec.amount)
    if spec.clip is not None:
        lo, hi = spec.clip
    elif ds.schema.features[j].kind == FRACTION:
        lo, hi = 0.0, 1.0
    else:
        lo, hi = 0.0, np.inf
    X[:, j] = np.clip(new, lo, hi)
    return ds.with_features(X)


def _outcomes(model, X, outcome: str) -> np.ndarray:
    if outcome == "label":
        return np.asarray(model.predict(X), dtype=np.float64)
    if outcome == "expected":
        if not hasattr(model, "predict_proba"):
            raise ParameterError(f"{type(model).__name__} has no class probabilities")
        proba = model.predict_proba(X)
        return proba @ np.arange(1, proba.shape[1] + 1, dtype=np.float64)
    raise ParameterError(f"outcome must be 'label' or 'expected', got {outcome!r}")


def _check_schema(model, ds: Dataset):
    schema = getattr(model, "schema", None)
    if schema is not None and list(schema.names) != list(ds.schema.names):
        raise SchemaError("model and dataset schemas differ")


def model_uses_feature(model, feature_index: int) -> bool | None:
    """Whether any split of a tree model tests the feature; ``None`` if unknowable."""
    from .baselines import DecisionTreeModel, ForestModel
    from .gbt import GbtEnsemble

    if isinstance(model, GbtEnsemble):
        trees = [t for rnd in model.rounds for t in rnd]
    elif isinstance(model, ForestModel):
        trees = list(model.trees)
    elif isinstance(model, DecisionTreeModel):
        trees = [model.tree]
    else:
        return None
    return any(feature_index in t.used_features() for t in trees)


@dataclass(frozen=True, eq=False)
class AteResult:
    spec: InterventionSpec
    ate: float
    mean_control: float
    mean_treated: float
    stratum_indices: np.ndarray = field(repr=False)
    n_changed: int
    feature_used: bool | None = None

    @property
    def n_stratum(self) -> int:
        return int(self.stratum_indices.size)


def ate(
    model,
    ds: Dataset,
    spec: InterventionSpec,
    *,
    stratum_classes=None,
    outcome: str = "label",
) -> AteResult:
    """Mean treated minus mean control outcome over the control high-class stratum.

    The stratum holds rows whose control prediction is in ``stratum_classes``
    (default: every class above the lowest) and stays fixed under treatment.
    """
    _check_schema(model, ds)
    treated_ds = intervene(ds, spec)
    control_label = np.asarray(model.predict(ds.X))
    treated_label = np.asarray(model.predict(treated_ds.X))
    if stratum_classes is None:
        stratum = np.flatnonzero(control_label >= 2)
    else:
        stratum = np.flatnonzero(np.isin(control_label, list(stratum_classes)))
    if stratum.size == 0:
        raise EmptyStratumError("no row is predicted in the high-prevalence stratum under control")
    if outcome == "label":
        y0, y1 = control_label.astype(np.float64), treated_label.astype(np.float64)
    else:
        y0, y1 = _outcomes(model, ds.X, outcome), _outcomes(model, treated_ds.X, outcome)
    mean0 = float(np.mean(y0[stratum]))
    mean1 = float(np.mean(y1[stratum]))
    changed = int(np.count_nonzero(treated_label[stratum] < control_label[stratum]))
    used = model_uses_feature(model, ds.schema.index(spec.feature))
    return AteResult(spec, mean1 - mean0, mean0, mean1, stratum, changed, used)


def changed_areas(model, ds: Dataset, spec: InterventionSpec) -> np.ndarray:
    """Indices of all rows whose predicted class drops under the intervention."""
    _check_schema(model, ds)
    control = np.asarray(model.predict(ds.X))
    treated = np.asarray(model.predict(intervene(ds, spec).X))
    return np.flatnonzero(treated < control)


# ---------------------------------------------------------------------------
# Welch t-test


def _betacf(a: float, b: float, x: float, eps: float = 1e-16, max_iter: int = 10_000) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise ParameterError("betainc needs a, b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = a * math.log(x) + b * math.log1p(-x) + math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, dof: float) -> float:
    if math.isnan(t):
        return float("nan")
    if math.isinf(t):
        return 0.0
    return min(1.0, max(0.0, betainc(dof / 2.0, 0.5, dof / (dof + t * t))))


@dataclass(frozen=True)
class TTestResult:
    feature: str | None
    t: float
    dof: float
    p: float
    mean_a: float
    mean_b: float

    @property
    def significant(self) -> bool:
        return self.p < 0.05


def welch_t_test(sample_a, sample_b, feature: str | None = None) -> TTestResult:
    """Two-sided unequal-variance t-test with Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(sample_a, dtype=np.float64).reshape(-1)
    b = np.asarray(sample_b, dtype=np.float64).reshape(-1)
    if a.size < 2 or b.size < 2:
        raise InsufficientDataError(f"each sample needs at least 2 values, got {a.size} and {b.size}")
    ma, mb = float(a.mean()), float(b.mean())
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    qa, qb = va / a.size, vb / b.size
    se2 = qa + qb
    if se2 == 0.0:
        # both samples constant
        dof = float(a.size + b.size - 2)
        if ma == mb:
            return TTestResult(feature, 0.0, dof, 1.0, ma, mb)
        return TTestResult(feature, math.copysign(math.inf, ma - mb), dof, 0.0, ma, mb)
    t = (ma - mb) / math.sqrt(se2)
    dof = se2 * se2 / (qa * qa / (a.size - 1) + qb * qb / (b.size - 1))
    return TTestResult(feature, t, dof, t_two_sided_p(t, dof), ma, mb)


def profile_changed(ds: Dataset, changed) -> list[TTestResult]:
    """Per feature, Welch test of the changed rows against all rows."""
    idx = np.asarray(changed, dtype=np.int64)
    if idx.size < 2:
        raise InsufficientDataError(f"need at least 2 changed rows to profile, got {idx.size}")
    return [welch_t_test(ds.X[idx, j], ds.X[:, j], name) for j, name in enumerate(ds.schema.names)]


def write_profile_csv(results: list[TTestResult], path: str | os.PathLike) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "mean_changed", "mean_all", "t", "dof", "p", "significant"])
        for r in results:
            w.writerow([r.feature, repr(r.mean_a), repr(r.mean_b), repr(r.t), repr(r.dof), repr(r.p),
                        int(r.significant)])
    os.replace(tmp, path)
