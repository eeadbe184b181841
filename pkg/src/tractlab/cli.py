"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 config or validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .errors import (
    ConfigError,
    MissingValueError,
    ParseError,
    RangeError,
    SchemaError,
    TractlabError,
)

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("tractlab")

# malformed inputs are a validation failure, everything else in the library is runtime
_CONFIG_ERRORS = (ConfigError, SchemaError, ParseError, RangeError, MissingValueError, FileNotFoundError)


def _schema_for(model, schema_path):
    from .dataset import FeatureSchema
    from .io import read_json

    if schema_path:
        return FeatureSchema.from_dict(read_json(schema_path))
    schema = getattr(model, "schema", None)
    if schema is None:
        names = getattr(model, "feature_names", ())
        if not names:
            raise ConfigError("model carries no schema; pass --schema")
        from .dataset import Feature

        schema = FeatureSchema(tuple(Feature(n) for n in names))
    return schema


def cmd_run(args) -> int:
    from .io import read_json
    from .pipeline import RunConfig, StageError, run_pipeline

    doc = read_json(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out is not None:
        doc["output_dir"] = os.path.abspath(args.out)
    if args.impute_mean:
        doc.setdefault("data", {})["impute_mean"] = True
    cfg = RunConfig.from_dict(doc, base_dir=os.path.dirname(os.path.abspath(args.config)))
    cfg.validate()
    try:
        report = run_pipeline(cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"winner: {report.winner} (cv macro-F1 {report.cv_scores[report.winner]:.4f})")
    print(f"reports written to {report.output_dir}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .dataset import SynthSpec, synth_generate, write_csv
    from .io import read_json, write_json

    doc = read_json(args.spec)
    spec = SynthSpec.from_dict(doc.get("synth", doc))
    res = synth_generate(spec, args.seed)
    write_csv(res.dataset, args.out)
    if args.truth:
        write_json(args.truth, res.truth.to_dict())
    counts = res.dataset.class_counts()
    print(f"wrote {res.dataset.n_rows} rows to {args.out}; class counts {counts.tolist()}")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    from .fixtures import write_fixtures

    names = write_fixtures(args.out)
    print(f"wrote {len(names)} fixture files to {args.out}")
    return EXIT_OK


def cmd_explain(args) -> int:
    from .dataset import load_csv
    from .explain import global_importance, treeshap
    from .io import load_model, write_json

    model = load_model(args.model)
    ds = load_csv(args.data, _schema_for(model, args.schema))
    exp = treeshap(model, ds.X)
    os.makedirs(args.out, exist_ok=True)
    exp.write_csv(os.path.join(args.out, "shap_values.csv"), ds.schema.names)
    write_json(os.path.join(args.out, "importance.json"), global_importance(model, ds, exp).to_dict())
    print(f"explained {ds.n_rows} rows into {args.out}")
    return EXIT_OK


def cmd_intervene(args) -> int:
    from .causal import InterventionSpec, ate, changed_areas, profile_changed, write_profile_csv
    from .dataset import load_csv
    from .io import load_model, write_json

    model = load_model(args.model)
    ds = load_csv(args.data, _schema_for(model, args.schema))
    if args.relative is not None:
        spec = InterventionSpec(args.feature, "relative", args.relative)
    else:
        spec = InterventionSpec(args.feature, "set", args.set)
    res = ate(model, ds, spec, outcome=args.outcome)
    changed = changed_areas(model, ds, spec)
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, "ate.json"), {
        "intervention": spec.to_dict(),
        "ate": "NA" if res.feature_used is False else res.ate,
        "mean_control": res.mean_control,
        "mean_treated": res.mean_treated,
        "n_stratum": res.n_stratum,
        "n_changed_stratum": res.n_changed,
        "changed_rows": changed.tolist(),
        "feature_used": res.feature_used,
    })
    if changed.size >= 2:
        write_profile_csv(profile_changed(ds, changed), os.path.join(args.out, "profile.csv"))
    print(f"ATE {res.ate:+.6f} over {res.n_stratum} rows; {changed.size} rows changed")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .dataset import load_csv
    from .io import load_model, write_json, write_rows
    from .metrics import confusion, macro_scores, row_normalize

    model = load_model(args.model)
    if not hasattr(model, "predict"):
        raise ConfigError("model document cannot predict labels")
    ds = load_csv(args.data, _schema_for(model, args.schema), bin_target=args.bin_target)
    if ds.y is None:
        raise ConfigError(f"{args.data}: no target column to evaluate against")
    K = max(model.n_classes, ds.n_classes)
    cm = confusion(ds.y, model.predict(ds.X), K)
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, "metrics.json"), macro_scores(cm).to_dict())
    labels = [str(c) for c in range(1, K + 1)]
    write_rows(os.path.join(args.out, "confusion_counts.csv"), ["true\\pred", *labels],
               [[labels[i], *map(int, r)] for i, r in enumerate(cm.counts)])
    write_rows(os.path.join(args.out, "confusion_normalized.csv"), ["true\\pred", *labels],
               [[labels[i], *map(float, r)] for i, r in enumerate(row_normalize(cm))])
    print(json.dumps({k: v for k, v in macro_scores(cm).to_dict().items() if k != "per_class"}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tractlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log stage progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full pipeline from a JSON config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--impute-mean", action="store_true", help="fill missing feature cells with column means")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="generate a synthetic dataset from a spec JSON")
    p.add_argument("spec")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--truth", help="optional ground-truth JSON path")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fixtures", help="write the hand-checkable fixture bundle")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fixtures)

    for name, func, helptext in (("explain", cmd_explain, "SHAP values and importance for a saved model"),
                                 ("intervene", cmd_intervene, "ATE and changed-area profile for one intervention"),
                                 ("eval", cmd_eval, "metrics of a saved model on labelled data")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--model", required=True, help="model JSON")
        p.add_argument("--data", required=True, help="CSV")
        p.add_argument("--schema", help="schema JSON (defaults to the one stored in the model)")
        p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(func=func)
        if name == "intervene":
            p.add_argument("--feature", required=True)
            g = p.add_mutually_exclusive_group(required=True)
            g.add_argument("--relative", type=float, help="signed fraction, e.g. 0.25 for +25%%")
            g.add_argument("--set", type=float, help="absolute value")
            p.add_argument("--outcome", choices=("label", "expected"), default="label")
        if name == "eval":
            p.add_argument("--bin-target", type=int, help="bin a raw target into this many classes")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TractlabError, ValueError, OSError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
