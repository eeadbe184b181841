"""End-to-end run: ingest, bin, split, oversample, select, evaluate, explain, intervene.

Everything is driven by one JSON config and one master seed; every stage
seed is derived from the master seed and a stage tag, so the report tree is
a pure function of the config.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
import platform
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .baselines import forest_fit, knn_fit, tree_fit
from .causal import DEFAULT_INTERVENTIONS, InterventionSpec, ate, changed_areas, profile_changed, write_profile_csv
from .dataset import (
    TRACT_SCHEMA,
    Dataset,
    FeatureSchema,
    SynthSpec,
    derive_seed,
    kfold,
    load_csv,
    split_train_test,
    synth_generate,
    write_csv,
)
from .errors import ConfigError, TractlabError
from .explain import global_importance, treeshap
from .gbt import GbtParams, gbt_fit
from .io import write_json, write_rows
from .metrics import confusion, macro_scores, row_normalize
from .resample import MATCH_MAJORITY, SmoteParams, smote_with_provenance
from .selection import cross_val_macro_f1, pick_best

log = logging.getLogger(__name__)

FAMILIES = ("knn", "tree", "forest", "gbt")
TREE_FAMILIES = ("gbt", "forest", "tree")

DEFAULT_GRIDS = {
    "knn": {"k": list(range(1, 32, 2))},
    "tree": {"max_depth": [4, 8, None], "min_samples_leaf": [1, 5], "criterion": ["gini", "entropy"]},
    "forest": {"n_trees": [50], "max_depth": [None, 10], "features_per_split": ["sqrt"], "bootstrap": [True]},
    "gbt": {
        "learning_rate": [0.1, 0.3],
        "n_estimators": [50],
        "max_depth": [3, 5],
        "subsample": [0.8],
        "colsample_bytree": [0.8],
        "alpha": [0.0],
        "gamma": [0.0],
    },
}

_PARAM_ORDER = {
    "knn": ("k",),
    "tree": ("max_depth", "min_samples_leaf", "criterion"),
    "forest": ("n_trees", "max_depth", "features_per_split", "bootstrap", "min_samples_leaf", "criterion"),
    "gbt": ("learning_rate", "n_estimators", "subsample", "colsample_bytree", "max_depth", "alpha", "gamma",
            "reg_lambda"),
}


def expand(family: str, grid: dict) -> list[dict]:
    """Cartesian product of a family's per-parameter value lists."""
    grid = {("reg_lambda" if k == "lambda" else k): v for k, v in grid.items()}
    unknown = set(grid) - set(_PARAM_ORDER[family])
    if unknown:
        raise ConfigError(f"models.{family}: unknown parameters {sorted(unknown)}")
    keys = [k for k in _PARAM_ORDER[family] if k in grid]
    values = [grid[k] if isinstance(grid[k], list) else [grid[k]] for k in keys]
    if any(len(v) == 0 for v in values):
        raise ConfigError(f"models.{family}: empty value list")
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def make_fitter(family: str, params: dict, seed: int):
    if family == "knn":
        return lambda ds: knn_fit(ds, **params)
    if family == "tree":
        return lambda ds: tree_fit(ds, **params)
    if family == "forest":
        return lambda ds: forest_fit(ds, seed=seed, **params)
    if family == "gbt":
        gp = GbtParams(seed=seed, **params)
        return lambda ds: gbt_fit(ds, gp)
    raise ConfigError(f"unknown model family {family!r}")


@dataclass
class RunConfig:
    schema: FeatureSchema = TRACT_SCHEMA
    csv: str | None = None
    synth: SynthSpec | None = None
    bin_target: int | None = 3
    impute_mean: bool = False
    train_fraction: float = 0.7
    cv_folds: int = 5
    smote: SmoteParams | None = field(default_factory=SmoteParams)
    models: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_GRIDS.items()})
    explain: bool = True
    write_shap_values: bool = True
    interventions: tuple[InterventionSpec, ...] = DEFAULT_INTERVENTIONS
    ate_outcome: str = "label"
    output_dir: str = "report"
    seed: int = 0
    base_dir: str = "."

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {"schema", "data", "split", "cv_folds", "smote", "models", "explain", "write_shap_values",
                 "interventions", "ate_outcome", "output_dir", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(base_dir=base_dir)
        try:
            schema = d.get("schema", "tracts")
            if schema == "tracts":
                cfg.schema = TRACT_SCHEMA
            elif isinstance(schema, dict):
                cfg.schema = FeatureSchema.from_dict(schema)
            else:
                raise ConfigError(f"schema must be 'tracts' or an object, got {schema!r}")

            data = d.get("data")
            if not isinstance(data, dict) or ("csv" in data) == ("synth" in data):
                raise ConfigError("data must name exactly one of 'csv' or 'synth'")
            if "csv" in data:
                cfg.csv = data["csv"]
                cfg.bin_target = data.get("bin_target", 3)
                cfg.impute_mean = bool(data.get("impute_mean", False))
            else:
                synth = dict(data["synth"])
                if "schema" not in synth and "n_features" not in synth:
                    synth["schema"] = cfg.schema.to_dict()
                cfg.synth = SynthSpec.from_dict(synth)
                cfg.schema = cfg.synth.schema

            split = d.get("split", {})
            cfg.train_fraction = float(split.get("train_fraction", 0.7))
            cfg.cv_folds = int(d.get("cv_folds", 5))
            sm = d.get("smote", {})
            cfg.smote = None if sm is None else SmoteParams(
                int(sm.get("k_neighbors", 5)), sm.get("target_count", MATCH_MAJORITY), 0)
            models = d.get("models")
            if models is not None:
                if not isinstance(models, dict) or not models:
                    raise ConfigError("models must be a nonempty object keyed by family")
                bad = set(models) - set(FAMILIES)
                if bad:
                    raise ConfigError(f"unknown model families: {sorted(bad)}")
                cfg.models = {k: (DEFAULT_GRIDS[k] if v in (None, True, {}) else dict(v))
                              for k, v in models.items()}
            for fam, grid in cfg.models.items():
                expand(fam, grid)
            cfg.explain = bool(d.get("explain", True))
            cfg.write_shap_values = bool(d.get("write_shap_values", True))
            if "interventions" in d:
                cfg.interventions = tuple(InterventionSpec.from_dict(s) for s in d["interventions"])
            elif cfg.schema is not TRACT_SCHEMA and cfg.schema != TRACT_SCHEMA:
                cfg.interventions = ()
            for spec in cfg.interventions:
                cfg.schema.index(spec.feature)
            cfg.ate_outcome = d.get("ate_outcome", "label")
            cfg.output_dir = d.get("output_dir", "report")
            cfg.seed = int(d.get("seed", 0))
        except ConfigError:
            raise
        except (TractlabError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None
        return cfg

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def validate(self) -> None:
        if self.csv is not None and not os.path.isfile(self.resolve(self.csv)):
            raise ConfigError(f"data file not found: {self.csv}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"split.train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.cv_folds < 2:
            raise ConfigError(f"cv_folds must be >= 2, got {self.cv_folds}")
        if self.bin_target is not None and self.bin_target < 2:
            raise ConfigError(f"data.bin_target must be >= 2, got {self.bin_target}")
        if self.ate_outcome not in ("label", "expected"):
            raise ConfigError(f"ate_outcome must be 'label' or 'expected', got {self.ate_outcome!r}")

    def to_dict(self) -> dict:
        """Canonical form; excludes the output location so it does not affect hashes."""
        data = ({"csv": self.csv, "bin_target": self.bin_target, "impute_mean": self.impute_mean}
                if self.csv is not None else {"synth": self.synth.to_dict()})
        return {
            "schema": self.schema.to_dict(),
            "data": data,
            "split": {"train_fraction": self.train_fraction},
            "cv_folds": self.cv_folds,
            "smote": None if self.smote is None else {"k_neighbors": self.smote.k_neighbors,
                                                      "target_count": self.smote.target_count},
            "models": self.models,
            "explain": self.explain,
            "write_shap_values": self.write_shap_values,
            "interventions": [s.to_dict() for s in self.interventions],
            "ate_outcome": self.ate_outcome,
            "seed": self.seed,
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")).hexdigest()


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        self.stage, self.cause = stage, cause
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass
class RunReport:
    output_dir: str
    winner: str
    cv_scores: dict
    test_scores: dict
    explained: str | None
    ate: list
    files: list


def run_pipeline(cfg: RunConfig) -> RunReport:
    """Execute every stage, writing reports under ``cfg.output_dir``.

    A failing stage leaves the files written so far plus a ``FAILED`` marker
    and raises :class:`StageError`.
    """
    cfg.validate()
    out = cfg.resolve(cfg.output_dir)
    os.makedirs(out, exist_ok=True)
    marker = os.path.join(out, "FAILED")
    if os.path.exists(marker):
        os.remove(marker)
    written: list[str] = []

    def path(name):
        written.append(name)
        return os.path.join(out, name)

    stage = "ingest"
    try:
        seeds = {name: derive_seed(cfg.seed, name) for name in ("synth", "split", "folds", "smote", "models")}
        truth = None
        if cfg.csv is not None:
            ds = load_csv(cfg.resolve(cfg.csv), cfg.schema, impute_mean=cfg.impute_mean, bin_target=cfg.bin_target)
            if ds.y is None:
                raise ConfigError(f"{cfg.csv}: target column {cfg.schema.target!r} missing")
        else:
            res = synth_generate(cfg.synth, seeds["synth"])
            ds, truth = res.dataset, res.truth
            write_csv(ds, path("data.csv"))
            write_json(path("ground_truth.json"), truth.to_dict())
        K = ds.n_classes
        log.info("ingested %d rows, %d features, %d classes", ds.n_rows, len(ds.schema), K)

        stage = "split"
        plan = split_train_test(ds, cfg.train_fraction, seeds["split"])
        train, test = ds.take(plan.train_indices), ds.take(plan.test_indices)
        folds = kfold(train, cfg.cv_folds, seeds["folds"])
        smote_params = None if cfg.smote is None else SmoteParams(
            cfg.smote.k_neighbors, cfg.smote.target_count, seeds["smote"])
        write_rows(path("split.csv"), ["row", "set"],
                   sorted([(int(i), "train") for i in plan.train_indices] +
                          [(int(i), "test") for i in plan.test_indices]))

        stage = "select"
        families = [f for f in FAMILIES if f in cfg.models]
        cv_rows, best = [], {}
        for fam in families:
            candidates = expand(fam, cfg.models[fam])
            fam_seed = derive_seed(seeds["models"], fam)
            scores = []
            for params in candidates:
                score = cross_val_macro_f1(train, folds, make_fitter(fam, params, fam_seed), smote_params)
                scores.append(score)
                cv_rows.append((fam, json.dumps(params, sort_keys=True), score))
                log.info("cv %s %s -> %.4f", fam, params, score)
            i = pick_best(scores)
            best[fam] = (candidates[i], scores[i], fam_seed)
        write_rows(path("cv_scores.csv"), ["model", "params", "cv_macro_f1"], cv_rows)
        winner = families[pick_best([best[f][1] for f in families])]

        stage = "evaluate"
        if smote_params is not None:
            balanced = smote_with_provenance(train, smote_params)
            fit_set = balanced.dataset
            balanced.write_provenance(path("smote_provenance.csv"))
        else:
            fit_set = train
        fitted, test_scores, metric_rows = {}, {}, []
        for fam in families:
            params, cv, fam_seed = best[fam]
            model = make_fitter(fam, params, fam_seed)(fit_set)
            fitted[fam] = model
            cm = confusion(test.y, model.predict(test.X), K)
            sc = macro_scores(cm)
            test_scores[fam] = sc.to_dict()
            test_scores[fam]["cv_macro_f1"] = cv
            test_scores[fam]["params"] = params
            metric_rows.append((fam, cv, sc.macro_precision, sc.macro_recall, sc.macro_f1_standard,
                                sc.macro_f1_unscaled, sc.accuracy, int(fam == winner)))
            if fam == winner:
                labels = [str(c) for c in range(1, K + 1)]
                write_rows(path("confusion_counts.csv"), ["true\\pred", *labels],
                           [[labels[i], *map(int, row)] for i, row in enumerate(cm.counts)])
                write_rows(path("confusion_normalized.csv"), ["true\\pred", *labels],
                           [[labels[i], *map(float, row)] for i, row in enumerate(row_normalize(cm))])
        write_rows(path("metrics.csv"),
                   ["model", "cv_macro_f1", "macro_precision", "macro_recall", "macro_f1",
                    "macro_f1_unscaled", "accuracy", "winner"], metric_rows)
        write_json(path("metrics.json"), {"winner": winner, "n_test": int(test.n_rows), "models": test_scores})
        write_json(path("model.json"), fitted[winner].to_dict())

        explained = winner if winner in TREE_FAMILIES else next(
            (f for f in sorted(families, key=lambda f: -best[f][1]) if f in TREE_FAMILIES), None)
        ate_rows = []
        if cfg.explain and explained is not None:
            stage = "explain"
            model = fitted[explained]
            exp = treeshap(model, ds.X)
            if cfg.write_shap_values:
                exp.write_csv(path("shap_values.csv"), ds.schema.names)
            rep = global_importance(model, ds, exp)
            write_json(path("importance.json"), {"model": explained, **rep.to_dict()})
            doc = rep.to_dict()
            write_rows(path("importance.csv"), ["rank", "feature", "mean_abs_shap"],
                       [(r["rank"], r["feature"], r["mean_abs_shap"]) for r in doc["ranking"]])
            write_rows(path("top_features.csv"), ["feature", "count", "share_pct"],
                       [(r["feature"], r["count"], r["share_pct"]) for r in doc["top_feature_tally"]])

        if cfg.interventions and explained is not None:
            stage = "intervene"
            model = fitted[explained]
            for spec in cfg.interventions:
                res = ate(model, ds, spec, outcome=cfg.ate_outcome)
                changed = changed_areas(model, ds, spec)
                note = ""
                value = res.ate
                if res.feature_used is False:
                    value, note = "NA", "feature used in no split; zero attribution"
                elif changed.size >= 2:
                    write_profile_csv(profile_changed(ds, changed), path(f"profile_{_slug(spec.feature)}.csv"))
                else:
                    note = "fewer than 2 changed rows; no profile"
                ate_rows.append((spec.feature, spec.label, value, res.mean_control, res.mean_treated,
                                 res.n_stratum, res.n_changed, int(changed.size), note))
            write_rows(path("ate.csv"),
                       ["feature", "intervention", "ate", "mean_control", "mean_treated", "n_stratum",
                        "n_changed_stratum", "n_changed_all", "note"], ate_rows)

        stage = "manifest"
        manifest = {
            "tool": "tractlab",
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "config_sha256": cfg.digest(),
            "config": cfg.to_dict(),
            "seeds": {"master": cfg.seed, **seeds},
            "rows": {"total": int(ds.n_rows), "train": int(train.n_rows), "test": int(test.n_rows),
                     "train_after_smote": int(fit_set.n_rows)},
            "winner": {"model": winner, "params": best[winner][0], "cv_macro_f1": best[winner][1]},
            "cv_best": {f: {"params": best[f][0], "cv_macro_f1": best[f][1]} for f in families},
            "explained_model": explained,
            "ground_truth": None if truth is None else truth.to_dict(),
            "files": sorted(written + ["manifest.json"]),
        }
        write_json(path("manifest.json"), manifest)
    except Exception as exc:
        from .io import write_text

        write_text(marker, f"stage: {stage}\nerror: {type(exc).__name__}: {exc}\n")
        raise StageError(stage, exc) from exc

    return RunReport(out, winner, {f: best[f][1] for f in families}, test_scores, explained, ate_rows,
                     sorted(written))


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name).strip("_") or "feature"
