import filecmp
import json
import os

import numpy as np
import pytest

from tractlab.cli import main
from tractlab.dataset import load_csv, FeatureSchema
from tractlab.io import load_model, read_json
from tractlab.pipeline import RunConfig, expand

SMALL = {
    "seed": 3,
    "output_dir": "out",
    "data": {"synth": {"n": 400, "noise": 0.2, "class_proportions": [0.5, 0.3, 0.2],
                       "rules": [{"kind": "threshold", "features": ["Age"], "weight": 2.0, "threshold": 0.5},
                                 {"kind": "linear", "features": ["GS"], "weight": -1.0}]}},
    "cv_folds": 3,
    "models": {"knn": {"k": [1, 5]}, "tree": {"max_depth": [3]}, "forest": {"n_trees": [5], "max_depth": [4]},
               "gbt": {"n_estimators": [5], "max_depth": [3]}},
}

REPORT_FILES = {"metrics.csv", "metrics.json", "cv_scores.csv", "confusion_counts.csv", "confusion_normalized.csv",
                "shap_values.csv", "importance.json", "importance.csv", "top_features.csv", "ate.csv",
                "manifest.json", "model.json", "smote_provenance.csv", "split.csv", "data.csv",
                "ground_truth.json"}


def _config(tmp_path, doc=SMALL, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_run_writes_full_report(tmp_path, capsys):
    assert main(["run", _config(tmp_path)]) == 0
    out = tmp_path / "out"
    files = set(os.listdir(out))
    assert REPORT_FILES <= files
    assert any(f.startswith("profile_") for f in files)
    manifest = read_json(out / "manifest.json")
    cv = manifest["cv_best"]
    best = max(v["cv_macro_f1"] for v in cv.values())
    roster = [f for f in ("knn", "tree", "forest", "gbt") if cv[f]["cv_macro_f1"] == best]
    assert manifest["winner"]["model"] == roster[0]
    assert len(manifest["config_sha256"]) == 64
    assert "FAILED" not in files
    # held-out rows are never oversampled
    assert manifest["rows"]["test"] == 400 - round(0.7 * 400)
    metrics = read_json(out / "metrics.json")
    assert metrics["n_test"] == manifest["rows"]["test"]


def test_run_twice_is_byte_identical(tmp_path):
    cfg = _config(tmp_path)
    assert main(["run", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", cfg, "--out", str(tmp_path / "b")]) == 0
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.left_only and not cmp.right_only
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", cmp.common_files, shallow=False)
    assert mismatch == [] and errors == []


def test_seed_override_changes_output(tmp_path):
    cfg = _config(tmp_path)
    main(["run", cfg, "--out", str(tmp_path / "a")])
    main(["run", cfg, "--out", str(tmp_path / "b"), "--seed", "4"])
    assert not filecmp.cmp(tmp_path / "a" / "data.csv", tmp_path / "b" / "data.csv", shallow=False)


def test_missing_csv_exits_2_before_compute(tmp_path):
    cfg = _config(tmp_path, {"data": {"csv": "absent.csv"}, "output_dir": "never"})
    assert main(["run", cfg]) == 2
    assert not (tmp_path / "never").exists()


def test_bad_config_exits_2(tmp_path):
    assert main(["run", _config(tmp_path, {"data": {"synth": {}}, "bogus": 1})]) == 2
    assert main(["run", _config(tmp_path, {"data": {"synth": {}}, "models": {"svm": {}}})]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["run", str(tmp_path / "broken.json")]) == 2
    assert main(["run", str(tmp_path / "nowhere.json")]) == 2


def test_stage_failure_leaves_marker(tmp_path):
    doc = dict(SMALL, models={"knn": {"k": [500]}})
    assert main(["run", _config(tmp_path, doc)]) == 1
    out = tmp_path / "out"
    assert (out / "FAILED").exists()
    assert "select" in (out / "FAILED").read_text()
    assert (out / "data.csv").exists()
    # a later successful run clears the stale marker
    assert main(["run", _config(tmp_path)]) == 0
    assert not (out / "FAILED").exists()


def test_csv_config_with_binning(tmp_path):
    main(["synth", _config(tmp_path, SMALL["data"], "spec.json"), "--out", str(tmp_path / "d.csv")])
    doc = {"data": {"csv": "d.csv", "bin_target": None}, "output_dir": "rep", "cv_folds": 3,
           "models": {"tree": {"max_depth": [2]}}, "interventions": [{"feature": "GS", "relative": 0.25}]}
    assert main(["run", _config(tmp_path, doc)]) == 0
    assert read_json(tmp_path / "rep" / "manifest.json")["winner"]["model"] == "tree"


def test_default_grids_expand():
    cfg = RunConfig.from_dict({"data": {"synth": {}}})
    assert [c["k"] for c in expand("knn", cfg.models["knn"])] == list(range(1, 32, 2))
    assert len(expand("tree", cfg.models["tree"])) == 12


def test_synth_command(tmp_path):
    spec = _config(tmp_path, SMALL["data"]["synth"], "spec.json")
    assert main(["synth", spec, "--out", str(tmp_path / "s.csv"), "--seed", "2",
                 "--truth", str(tmp_path / "t.json")]) == 0
    from tractlab.dataset import TRACT_SCHEMA
    ds = load_csv(tmp_path / "s.csv", TRACT_SCHEMA)
    assert ds.n_rows == 400
    assert read_json(tmp_path / "t.json")["dominant_feature"] == "Age"


def test_fixtures_idempotent_and_loadable(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["fixtures", "--out", str(a)]) == 0
    assert main(["fixtures", "--out", str(b)]) == 0
    assert main(["fixtures", "--out", str(b)]) == 0
    names = sorted(os.listdir(a))
    assert names == sorted(os.listdir(b))
    for n in names:
        assert filecmp.cmp(a / n, b / n, shallow=False)
    for stem in ("xor", "stump_tree", "depth2_tree", "ate_gs", "ttest_vectors"):
        assert any(n.startswith(stem) for n in names)
    xor = load_csv(a / "xor.csv", FeatureSchema.from_dict(read_json(a / "xor_schema.json")))
    assert xor.n_rows == 8
    for tree in ("stump_tree.json", "depth2_tree.json", "ate_gs_model.json"):
        load_model(a / tree)


def test_model_commands(tmp_path):
    fx = tmp_path / "fx"
    main(["fixtures", "--out", str(fx)])
    model, data = str(fx / "ate_gs_model.json"), str(fx / "ate_gs.csv")
    assert main(["eval", "--model", model, "--data", data, "--out", str(tmp_path / "ev")]) == 0
    assert read_json(tmp_path / "ev" / "metrics.json")["accuracy"] == 1.0
    assert main(["intervene", "--model", model, "--data", data, "--feature", "GS", "--relative", "0.25",
                 "--out", str(tmp_path / "iv")]) == 0
    res = read_json(tmp_path / "iv" / "ate.json")
    assert res["ate"] == pytest.approx(-0.28) and len(res["changed_rows"]) == 14
    assert main(["explain", "--model", model, "--data", data, "--out", str(tmp_path / "ex")]) == 0
    assert (tmp_path / "ex" / "shap_values.csv").exists()
    assert main(["intervene", "--model", model, "--data", data, "--feature", "nope", "--relative", "0.1",
                 "--out", str(tmp_path / "iv2")]) == 2


def test_unknown_subcommand():
    assert main(["frobnicate"]) == 2


def test_shipped_example_config_parses():
    path = os.path.join(os.path.dirname(__file__), os.pardir, "configs", "quick.json")
    cfg = RunConfig.from_dict(read_json(path), base_dir=os.path.dirname(path))
    cfg.validate()
    assert set(cfg.models) == {"knn", "tree", "forest", "gbt"}
    assert [s.feature for s in cfg.interventions] == ["GS", "DA", "TE"]
