"""Tabular data model, CSV ingestion, target binning, splitting and synthetic data.

A :class:`Dataset` is an immutable feature matrix bound to a
:class:`FeatureSchema`, with optional integer class labels in ``1..K``.
"""

from __future__ import annotations

import csv
import math
import os
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateBinningError,
    InsufficientDataError,
    MissingValueError,
    ParameterError,
    ParseError,
    RangeError,
    SchemaError,
    SchemaMismatchError,
)

FRACTION = "fraction"
COUNT = "count"
DENSITY = "density"
KINDS = (FRACTION, COUNT, DENSITY)

_MISSING_TOKENS = {"", "na", "nan", "null", "none"}


def derive_seed(master: int, *tags) -> int:
    """Derive a reproducible child seed from a master seed and string/int tags."""
    words = [int(master) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, (int, np.integer)):
            words.append(int(tag) & 0xFFFFFFFF)
        else:
            words.append(zlib.crc32(str(tag).encode("utf-8")))
    return int(np.random.SeedSequence(words).generate_state(1)[0])


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str = FRACTION

    def __post_init__(self):
        if not self.name:
            raise SchemaError("feature names must be nonempty")
        if self.kind not in KINDS:
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}; expected one of {KINDS}")


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]
    target: str = "Cancer"

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if not self.features:
            raise SchemaError("a schema needs at least one feature")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate feature names: {dup}")
        if self.target in names:
            raise SchemaError(f"target {self.target!r} collides with a feature name")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def kinds(self) -> list[str]:
        return [f.kind for f in self.features]

    def __len__(self):
        return len(self.features)

    def index(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise SchemaError(f"unknown feature {name!r}")

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "features": [{"name": f.name, "kind": f.kind} for f in self.features],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        try:
            feats = tuple(Feature(f["name"], f.get("kind", FRACTION)) for f in d["features"])
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from None
        return cls(feats, d.get("target", "Cancer"))

    @classmethod
    def generic(cls, n_features: int, kind: str = FRACTION, target: str = "label") -> "FeatureSchema":
        return cls(tuple(Feature(f"x{i}", kind) for i in range(n_features)), target)


# Census-tract urban-form variables; percentages are stored as fractions in [0, 1].
TRACT_SCHEMA = FeatureSchema(
    (
        Feature("Poverty", FRACTION),
        Feature("Unemployed", FRACTION),
        Feature("NHD", FRACTION),
        Feature("NHI", FRACTION),
        Feature("Age", FRACTION),
        Feature("Disability", FRACTION),
        Feature("SP", FRACTION),
        Feature("Minority", FRACTION),
        Feature("MH", FRACTION),
        Feature("NV", FRACTION),
        Feature("PD", DENSITY),
        Feature("#GS", COUNT),
        Feature("#MF", COUNT),
        Feature("#RC", COUNT),
        Feature("GS", FRACTION),
        Feature("DA", FRACTION),
        Feature("TC", FRACTION),
        Feature("Heat", COUNT),
        Feature("TE", DENSITY),
    ),
    target="Cancer",
)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature rows bound to a schema, with optional labels in ``1..n_classes``."""

    schema: FeatureSchema
    X: np.ndarray
    y: np.ndarray | None = None
    n_classes: int | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, copy=True)
        if X.ndim == 1 and len(self.schema) == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[1] != len(self.schema):
            raise SchemaError(
                f"row width {X.shape[-1] if X.ndim else 0} does not match schema width {len(self.schema)}"
            )
        if not np.all(np.isfinite(X)):
            raise RangeError(None, None, None, "feature values must be finite")
        for j, kind in enumerate(self.schema.kinds):
            col = X[:, j]
            if kind == FRACTION:
                bad = np.flatnonzero((col < 0.0) | (col > 1.0))
            else:
                bad = np.flatnonzero(col < 0.0)
            if bad.size:
                i = int(bad[0])
                raise RangeError(i + 1, self.schema.features[j].name, float(col[i]))
        object.__setattr__(self, "X", _frozen(X))
        if self.y is not None:
            y = np.array(self.y, dtype=np.int64, copy=True).reshape(-1)
            if y.shape[0] != X.shape[0]:
                raise SchemaError(f"{y.shape[0]} labels for {X.shape[0]} rows")
            K = self.n_classes if self.n_classes is not None else (int(y.max()) if y.size else 1)
            if y.size and (y.min() < 1 or y.max() > K):
                raise RangeError(None, self.schema.target, None, f"labels must lie in 1..{K}")
            object.__setattr__(self, "y", _frozen(y))
            object.__setattr__(self, "n_classes", int(K))

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    def __len__(self):
        return self.n_rows

    @property
    def has_labels(self) -> bool:
        return self.y is not None

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.schema.index(name)]

    def take(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        y = None if self.y is None else self.y[idx]
        return Dataset(self.schema, self.X[idx], y, self.n_classes)

    def with_features(self, X: np.ndarray) -> "Dataset":
        return Dataset(self.schema, X, self.y, self.n_classes)

    def class_counts(self) -> np.ndarray:
        """Counts per class, index ``c - 1`` for class ``c``."""
        if self.y is None:
            return np.zeros(0, dtype=np.int64)
        return np.bincount(self.y - 1, minlength=self.n_classes)


# ---------------------------------------------------------------------------
# CSV


def _parse_cell(text: str, row: int, column: str) -> float | None:
    s = text.strip()
    if s.lower() in _MISSING_TOKENS:
        return None
    try:
        v = float(s)
    except ValueError:
        raise ParseError(row, column, text) from None
    if not math.isfinite(v):
        raise ParseError(row, column, text)
    return v


def load_csv(
    path: str | os.PathLike,
    schema: FeatureSchema,
    *,
    impute_mean: bool = False,
    bin_target: int | None = None,
) -> Dataset:
    """Read a headed CSV into a :class:`Dataset`, matching columns by name.

    The target column, when present, is parsed as integer labels, or as raw
    values binned into ``bin_target`` equal-frequency classes. Row numbers in
    errors count data rows from 1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]

    positions = {}
    for name in header:
        if name in positions:
            raise SchemaError(f"{path}: duplicate column {name!r}")
        positions[name] = len(positions)
    for name in schema.names:
        if name not in positions:
            raise SchemaMismatchError(name)

    n, M = len(rows), len(schema)
    X = np.empty((n, M))
    missing = np.zeros((n, M), dtype=bool)
    for i, r in enumerate(rows, start=1):
        if len(r) != len(header):
            raise ParseError(i, None, ",".join(r))
        for j, f in enumerate(schema.features):
            v = _parse_cell(r[positions[f.name]], i, f.name)
            if v is None:
                if not impute_mean:
                    raise MissingValueError(i, f.name)
                missing[i - 1, j] = True
                v = 0.0
            elif f.kind == FRACTION and not 0.0 <= v <= 1.0:
                raise RangeError(i, f.name, v)
            elif f.kind != FRACTION and v < 0.0:
                raise RangeError(i, f.name, v)
            X[i - 1, j] = v

    if missing.any():
        for j, f in enumerate(schema.features):
            miss = missing[:, j]
            if miss.all():
                raise MissingValueError(1, f.name)
            if miss.any():
                X[miss, j] = X[~miss, j].mean()

    y = None
    if schema.target in positions:
        raw = []
        for i, r in enumerate(rows, start=1):
            v = _parse_cell(r[positions[schema.target]], i, schema.target)
            if v is None:
                raise MissingValueError(i, schema.target)
            raw.append(v)
        if bin_target is not None:
            y = equal_frequency_bin(raw, bin_target)
        else:
            y = []
            for i, v in enumerate(raw, start=1):
                if v != int(v):
                    raise ParseError(i, schema.target, repr(v))
                if v < 1:
                    raise RangeError(i, schema.target, v, f"row {i}: labels start at 1, got {v!r}")
                y.append(int(v))
            present = set(y)
            if present and present != set(range(1, max(present) + 1)):
                gap = min(set(range(1, max(present) + 1)) - present)
                raise RangeError(None, schema.target, gap, f"labels are not contiguous from 1: class {gap} absent")
    elif bin_target is not None:
        raise SchemaMismatchError(schema.target)
    return Dataset(schema, X.reshape(n, M), None if y is None else np.asarray(y, dtype=np.int64))


def write_csv(ds: Dataset, path: str | os.PathLike) -> None:
    """Write ``ds`` so that :func:`load_csv` reads it back bit-exactly."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = list(ds.schema.names)
        if ds.y is not None:
            header.append(ds.schema.target)
        w.writerow(header)
        for i in range(ds.n_rows):
            row = [repr(float(v)) for v in ds.X[i]]
            if ds.y is not None:
                row.append(str(int(ds.y[i])))
            w.writerow(row)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Binning, splitting, folds


def equal_frequency_bin(values: Iterable[float], k: int) -> np.ndarray:
    """Discretize ``values`` into ``k`` rank-quantile classes labelled ``1..k``.

    Boundaries sit at sorted positions ``ceil(n*j/k)``; a tie run crossing a
    boundary is kept whole in the lower bin.
    """
    if k < 2:
        raise ParameterError(f"need k >= 2 bins, got {k}")
    v = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.float64)
    n = v.size
    if n == 0:
        raise InsufficientDataError("cannot bin an empty sequence")
    order = np.argsort(v, kind="stable")
    s = v[order]
    if s[0] == s[-1]:
        raise DegenerateBinningError(f"all {n} values are identical; cannot form {k} nonempty bins")

    bounds = []
    prev = 0
    for j in range(1, k):
        b = -(-n * j // k)
        b = max(b, prev)
        while 0 < b < n and s[b] == s[b - 1]:
            b += 1
        bounds.append(b)
        prev = b
    edges = [0, *bounds, n]
    if any(edges[i + 1] <= edges[i] for i in range(k)):
        raise DegenerateBinningError(f"ties leave fewer than {k} nonempty bins")

    sorted_labels = np.empty(n, dtype=np.int64)
    for label in range(k):
        sorted_labels[edges[label]:edges[label + 1]] = label + 1
    labels = np.empty(n, dtype=np.int64)
    labels[order] = sorted_labels
    return labels


@dataclass(frozen=True)
class SplitPlan:
    train_indices: np.ndarray
    test_indices: np.ndarray
    seed: int


@dataclass(frozen=True)
class FoldPlan:
    k: int
    fold_assignment: np.ndarray
    seed: int

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (in-fold training indices, held-out indices) for one round."""
        held = self.fold_assignment == fold
        return np.flatnonzero(~held), np.flatnonzero(held)

    def sizes(self) -> list[int]:
        return np.bincount(self.fold_assignment, minlength=self.k).tolist()


def _n_rows(ds) -> int:
    return ds.n_rows if isinstance(ds, Dataset) else int(ds)


def split_train_test(ds: Dataset | int, train_fraction: float = 0.7, seed: int = 0) -> SplitPlan:
    """Seeded shuffle into train/test with ``round(n * train_fraction)`` training rows."""
    if not 0.0 < train_fraction < 1.0:
        raise ParameterError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = _n_rows(ds)
    if n < 2:
        raise InsufficientDataError(f"need at least 2 rows to split, got {n}")
    n_train = int(math.floor(n * train_fraction + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return SplitPlan(_frozen(np.sort(perm[:n_train])), _frozen(np.sort(perm[n_train:])), seed)


def kfold(ds: Dataset | int, k: int = 5, seed: int = 0) -> FoldPlan:
    if k < 2:
        raise ParameterError(f"need k >= 2 folds, got {k}")
    n = _n_rows(ds)
    if n < k:
        raise InsufficientDataError(f"{n} rows cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % k
    return FoldPlan(k, _frozen(assignment), seed)


# ---------------------------------------------------------------------------
# Synthetic data

_COUNT_RATE = 5.0
_DENSITY_MU, _DENSITY_SIGMA = math.log(100.0), 1.0


def _draw_feature(rng: np.random.Generator, kind: str, n: int) -> np.ndarray:
    if kind == FRACTION:
        return rng.random(n)
    if kind == COUNT:
        return rng.poisson(_COUNT_RATE, n).astype(np.float64)
    return rng.lognormal(_DENSITY_MU, _DENSITY_SIGMA, n)


def _standardize(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == FRACTION:
        return (x - 0.5) * math.sqrt(12.0)
    if kind == COUNT:
        return (x - _COUNT_RATE) / math.sqrt(_COUNT_RATE)
    return (np.log(x) - _DENSITY_MU) / _DENSITY_SIGMA


@dataclass(frozen=True)
class Rule:
    """One additive term of the latent score.

    ``linear``: weight * standardized(feature).
    ``threshold``: weight * [feature > threshold] in raw units.
    ``interaction``: weight * standardized(a) * standardized(b).
    """

    kind: str
    features: tuple[str, ...]
    weight: float = 1.0
    threshold: float = 0.5

    @classmethod
    def from_dict(cls, d: dict) -> "Rule":
        feats = d.get("features")
        if feats is None:
            feats = [d["feature"]]
        return cls(d.get("kind", "linear"), tuple(feats), float(d.get("weight", 1.0)), float(d.get("threshold", 0.5)))

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "features": list(self.features), "weight": self.weight}
        if self.kind == "threshold":
            d["threshold"] = self.threshold
        return d


@dataclass(frozen=True)
class SynthSpec:
    """Description of a synthetic dataset with planted structure.

    Labels are ``1 + #{cut < score}`` where ``score`` is the sum of the rules
    plus Gaussian noise. Cuts are either given explicitly or placed at the
    ``class_proportions`` quantiles of a large reference draw.
    """

    n: int = 1000
    schema: FeatureSchema = TRACT_SCHEMA
    n_classes: int = 3
    rules: tuple[Rule, ...] = ()
    noise: float = 0.0
    class_proportions: tuple[float, ...] | None = None
    cut_points: tuple[float, ...] | None = None
    dominant_feature: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        if "schema" in d and isinstance(d["schema"], dict):
            schema = FeatureSchema.from_dict(d["schema"])
        elif "n_features" in d:
            schema = FeatureSchema.generic(int(d["n_features"]), d.get("feature_kind", FRACTION))
        else:
            schema = TRACT_SCHEMA
        props = d.get("class_proportions")
        cuts = d.get("cut_points")
        return cls(
            n=int(d.get("n", 1000)),
            schema=schema,
            n_classes=int(d.get("n_classes", 3)),
            rules=tuple(Rule.from_dict(r) for r in d.get("rules", [])),
            noise=float(d.get("noise", 0.0)),
            class_proportions=None if props is None else tuple(float(p) for p in props),
            cut_points=None if cuts is None else tuple(float(c) for c in cuts),
            dominant_feature=d.get("dominant_feature"),
        )

    def to_dict(self) -> dict:
        d = {
            "n": self.n,
            "schema": self.schema.to_dict(),
            "n_classes": self.n_classes,
            "rules": [r.to_dict() for r in self.rules],
            "noise": self.noise,
        }
        if self.class_proportions is not None:
            d["class_proportions"] = list(self.class_proportions)
        if self.cut_points is not None:
            d["cut_points"] = list(self.cut_points)
        if self.dominant_feature is not None:
            d["dominant_feature"] = self.dominant_feature
        return d


@dataclass(frozen=True)
class GroundTruth:
    dominant_feature: str | None
    causal: tuple[dict, ...]
    cut_points: tuple[float, ...]
    score: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "dominant_feature": self.dominant_feature,
            "causal": [dict(c) for c in self.causal],
            "cut_points": list(self.cut_points),
        }


@dataclass(frozen=True)
class SynthResult:
    dataset: Dataset
    truth: GroundTruth


def _score(spec: SynthSpec, cols: dict[str, np.ndarray], n: int) -> np.ndarray:
    kinds = dict(zip(spec.schema.names, spec.schema.kinds))
    s = np.zeros(n)
    for rule in spec.rules:
        if rule.kind == "linear":
            (f,) = rule.features
            s += rule.weight * _standardize(kinds[f], cols[f])
        elif rule.kind == "threshold":
            (f,) = rule.features
            s += rule.weight * (cols[f] > rule.threshold)
        elif rule.kind == "interaction":
            a, b = rule.features
            s += rule.weight * _standardize(kinds[a], cols[a]) * _standardize(kinds[b], cols[b])
        else:
            raise ParameterError(f"unknown rule kind {rule.kind!r}")
    return s


def synth_generate(spec: SynthSpec, seed: int = 0, *, reference_size: int = 100_000) -> SynthResult:
    """Draw a dataset with the planted rules of ``spec``; deterministic in ``seed``."""
    K = spec.n_classes
    if K < 2:
        raise ParameterError(f"need at least 2 classes, got {K}")
    if spec.n < 1:
        raise ParameterError(f"n must be positive, got {spec.n}")
    names = spec.schema.names
    for rule in spec.rules:
        expected = 2 if rule.kind == "interaction" else 1
        if len(rule.features) != expected:
            raise ParameterError(f"{rule.kind} rule needs {expected} feature(s), got {rule.features}")
        for f in rule.features:
            if f not in names:
                raise ParameterError(f"rule references unknown feature {f!r}")

    rng = np.random.default_rng(derive_seed(seed, "synth", "rows"))
    X = np.column_stack([_draw_feature(rng, kind, spec.n) for kind in spec.schema.kinds])
    cols = {name: X[:, j] for j, name in enumerate(names)}
    score = _score(spec, cols, spec.n)
    if spec.noise > 0:
        score = score + spec.noise * rng.standard_normal(spec.n)

    if spec.cut_points is not None:
        cuts = tuple(sorted(spec.cut_points))
        if len(cuts) != K - 1:
            raise ParameterError(f"{K} classes need {K - 1} cut points, got {len(cuts)}")
    else:
        props = np.full(K, 1.0 / K) if spec.class_proportions is None else np.asarray(spec.class_proportions)
        if props.size != K or np.any(props <= 0):
            raise ParameterError(f"class_proportions must hold {K} positive entries")
        props = props / props.sum()
        ref_rng = np.random.default_rng(derive_seed(seed, "synth", "reference"))
        ref_cols = {}
        used = {f for r in spec.rules for f in r.features}
        kinds = dict(zip(names, spec.schema.kinds))
        for name in names:
            if name in used:
                ref_cols[name] = _draw_feature(ref_rng, kinds[name], reference_size)
        ref = _score(spec, ref_cols, reference_size)
        if spec.noise > 0:
            ref = ref + spec.noise * ref_rng.standard_normal(reference_size)
        cuts = tuple(float(c) for c in np.quantile(ref, np.cumsum(props)[:-1]))

    y = 1 + np.searchsorted(np.asarray(cuts), score, side="left")
    ds = Dataset(spec.schema, X, y, K)

    causal = []
    for rule in spec.rules:
        if rule.kind in ("linear", "threshold") and rule.weight != 0:
            causal.append({
                "feature": rule.features[0],
                "direction": 1 if rule.weight > 0 else -1,
                "magnitude": abs(rule.weight),
                "kind": rule.kind,
            })
    dominant = spec.dominant_feature
    if dominant is None and spec.rules:
        dominant = max(spec.rules, key=lambda r: abs(r.weight)).features[0]
    return SynthResult(ds, GroundTruth(dominant, tuple(causal), cuts, score))
