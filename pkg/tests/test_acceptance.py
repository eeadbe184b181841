"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (the lines are repeated
in the terminal summary) or ``python tests/test_acceptance.py``.
"""

import filecmp
import json
import os
import sys
import time

import numpy as np
from scipy import special

sys.path.insert(0, os.path.dirname(__file__))

from conftest import record  # noqa: E402
from test_explain import random_ensemble  # noqa: E402

from tractlab.baselines import knn_fit, tree_fit  # noqa: E402
from tractlab.causal import InterventionSpec, ate, model_uses_feature, welch_t_test  # noqa: E402
from tractlab.dataset import (  # noqa: E402
    Dataset,
    FeatureSchema,
    Rule,
    SynthSpec,
    derive_seed,
    kfold,
    split_train_test,
    synth_generate,
)
from tractlab.explain import brute_force_shapley, global_importance, treeshap  # noqa: E402
from tractlab.gbt import GbtParams, gbt_fit, gbt_predict_margins  # noqa: E402
from tractlab.metrics import ConfusionMatrix, macro_f1, macro_scores  # noqa: E402
from tractlab.pipeline import RunConfig, run_pipeline  # noqa: E402
from tractlab.resample import SmoteParams, smote_with_provenance  # noqa: E402
from tractlab.selection import cross_val_macro_f1, pick_best  # noqa: E402

SUITE_START = time.perf_counter()


def test_criterion_01_shap_oracle_equivalence():
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        M = int(rng.integers(1, 13))
        ens = random_ensemble(rng, M, int(rng.integers(1, 4)), int(rng.integers(1, 9)), K=int(rng.integers(1, 4)))
        x = rng.uniform(size=M)
        worst = max(worst, float(np.max(np.abs(treeshap(ens, x).phi - brute_force_shapley(ens, x)))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 60
    record(1, "SHAP vs subset enumeration, 200 ensembles", ok, f"max err {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_02_shap_local_accuracy():
    spec = SynthSpec(n=2000, rules=(Rule("threshold", ("Age",), 2.0, 0.5), Rule("interaction", ("Minority", "PD"), 0.8),
                                    Rule("linear", ("GS",), -0.7)), noise=0.3)
    ds = synth_generate(spec, 11).dataset
    model = gbt_fit(ds, GbtParams(n_estimators=40, max_depth=5, subsample=0.8, colsample_bytree=0.8, seed=1))
    exp = treeshap(model, ds.X)
    err = float(np.max(np.abs(exp.total() - gbt_predict_margins(model, ds.X))))
    ok = err <= 1e-9 and exp.phi.shape == (2000, 3, 19)
    record(2, "SHAP local accuracy, GBT n=2000 M=19", ok, f"max |base+sum(phi)-margin| {err:.2e}")
    assert ok


def test_criterion_03_metrics_hand_check():
    s = macro_scores(ConfusionMatrix(np.array([[50, 10, 0], [5, 80, 15], [0, 20, 60]])))
    # hand arithmetic: P = 50/55, 80/110, 60/75; R = 50/60, 80/100, 60/80
    P = [50 / 55, 80 / 110, 60 / 75]
    R = [50 / 60, 80 / 100, 60 / 80]
    mp, mr = sum(P) / 3, sum(R) / 3
    checks = [
        abs(s.macro_precision - 0.8121212121212121),
        abs(s.macro_recall - 0.7944444444444444),
        abs(s.macro_f1_unscaled - 0.4015927905270879),
        abs(s.macro_f1_standard - 0.8031855810541758),
        abs(s.accuracy - 190 / 240),
        abs(s.macro_precision - mp),
        abs(s.macro_recall - mr),
    ]
    checks += [abs(s.per_class[c][0] - P[c]) for c in range(3)]
    checks += [abs(s.per_class[c][1] - R[c]) for c in range(3)]
    hand_ok = max(checks) <= 1e-12
    rng = np.random.default_rng(3)
    exact = 0
    for _ in range(1000):
        K = int(rng.integers(2, 8))
        counts = rng.integers(0, 100, size=(K, K))
        counts[0, 0] += 1
        r = macro_scores(ConfusionMatrix(counts))
        exact += r.macro_f1_standard == 2 * r.macro_f1_unscaled
    ok = hand_ok and exact == 1000
    record(3, "metrics hand check and standard = 2 x literal", ok,
           f"max dev {max(checks):.1e}, exact identity {exact}/1000")
    assert ok


def test_criterion_04_smote_contract():
    rng = np.random.default_rng(4)
    balanced = exact = 0
    worst = 0.0
    t_ok = True
    for i in range(100):
        K = int(rng.integers(2, 5))
        sizes = rng.integers(2, 60, size=K)
        y = np.concatenate([np.full(n, c + 1) for c, n in enumerate(sizes)])
        M = int(rng.integers(1, 6))
        ds = Dataset(FeatureSchema.generic(M), rng.uniform(size=(y.size, M)), y)
        res = smote_with_provenance(ds, SmoteParams(k_neighbors=int(rng.integers(1, 7)), seed=i))
        counts = res.dataset.class_counts()
        balanced += bool(np.all(counts == sizes.max()))
        for (s, b, z), t in zip(res.provenance, res.t):
            worst = max(worst, float(np.max(np.abs(res.dataset.X[s] - (ds.X[b] + t * (ds.X[z] - ds.X[b]))))))
            t_ok &= 0.0 <= t <= 1.0
        exact += np.array_equal(res.dataset.X[:ds.n_rows], ds.X)
    ok = balanced == 100 and worst <= 1e-12 and t_ok and exact == 100
    record(4, "SMOTE balance and provenance, 100 datasets", ok,
           f"balanced {balanced}/100, max reconstruction err {worst:.1e}, t in [0,1]: {t_ok}")
    assert ok


def test_criterion_05_loss_monotonicity():
    monotone = 0
    worst_rise = -np.inf
    for seed in range(20):
        spec = SynthSpec(n=400, schema=FeatureSchema.generic(6), rules=(Rule("linear", ("x0",), 1.5),
                         Rule("interaction", ("x1", "x2"), 1.0)), noise=0.5)
        ds = synth_generate(spec, seed).dataset
        trace = []
        gbt_fit(ds, GbtParams(n_estimators=25, max_depth=4, subsample=1.0, colsample_bytree=1.0,
                              alpha=0.0, gamma=0.0, seed=seed), trace=trace)
        rise = float(np.max(np.diff(trace)))
        worst_rise = max(worst_rise, rise)
        monotone += rise <= 1e-9
    ds = synth_generate(SynthSpec(n=300, rules=(Rule("linear", ("Age",), 1.0),), noise=0.2), 0).dataset
    stumps = gbt_fit(ds, GbtParams(n_estimators=5, gamma=1e9))
    leaf_only = all(t.n_nodes == 1 for rnd in stumps.rounds for t in rnd)
    ok = monotone == 20 and leaf_only
    record(5, "GBT training loss non-increasing; gamma=1e9 leaf-only", ok,
           f"monotone {monotone}/20, largest step {worst_rise:.2e}, leaf-only {leaf_only}")
    assert ok


def _ordering_run(seed, noise):
    spec = SynthSpec(n=3000, rules=(Rule("threshold", ("Age",), 1.5, 0.5), Rule("interaction", ("Minority", "PD"), 1.0)),
                     noise=noise, class_proportions=(1 / 3, 1 / 3, 1 / 3))
    ds = synth_generate(spec, seed).dataset
    plan = split_train_test(ds, 0.7, derive_seed(seed, "split"))
    tr, te = ds.take(plan.train_indices), ds.take(plan.test_indices)
    folds = kfold(tr, 5, derive_seed(seed, "folds"))
    out = {}
    g = gbt_fit(tr, GbtParams(learning_rate=0.3, n_estimators=50, max_depth=4, seed=seed))
    out["gbt"] = macro_f1(te.y, g.predict(te.X), 3)
    grid = [{"max_depth": d, "min_samples_leaf": m} for d in (4, 6, 8, None) for m in (1, 5)]
    scores = [cross_val_macro_f1(tr, folds, lambda d, p=p: tree_fit(d, **p)) for p in grid]
    out["tree"] = macro_f1(te.y, tree_fit(tr, **grid[pick_best(scores)]).predict(te.X), 3)
    ks = list(range(1, 32, 2))
    scores = [cross_val_macro_f1(tr, folds, lambda d, k=k: knn_fit(d, k)) for k in ks]
    out["knn"] = macro_f1(te.y, knn_fit(tr, ks[pick_best(scores)]).predict(te.X), 3)
    return out


def test_criterion_06_model_ordering():
    t0 = time.perf_counter()
    noisy = [_ordering_run(s, 0.5) for s in range(5)]
    clean = [_ordering_run(s, 0.0) for s in range(5)]
    mean = {k: float(np.mean([r[k] for r in noisy])) for k in noisy[0]}
    clean_gbt = float(np.mean([r["gbt"] for r in clean]))
    elapsed = time.perf_counter() - t0
    ok = mean["gbt"] >= mean["tree"] and mean["gbt"] >= mean["knn"] and clean_gbt >= 0.85 and elapsed < 300
    record(6, "model ordering on planted interaction data", ok,
           f"noisy gbt {mean['gbt']:.3f} tree {mean['tree']:.3f} knn {mean['knn']:.3f}; "
           f"noise-free gbt {clean_gbt:.3f}; {elapsed:.0f}s")
    assert ok


def _planted(seed, n=1500):
    spec = SynthSpec(n=n, rules=(Rule("threshold", ("Age",), 3.0, 0.5), Rule("linear", ("GS",), -1.0),
                                 Rule("interaction", ("Minority", "PD"), 0.5)),
                     noise=0.3, class_proportions=(0.4, 0.35, 0.25), dominant_feature="Age")
    return synth_generate(spec, seed)


def test_criterion_07_importance_recovery():
    hits, shares = 0, []
    for seed in range(10):
        res = _planted(seed)
        ds = res.dataset
        model = gbt_fit(ds, GbtParams(n_estimators=30, max_depth=3, seed=seed))
        rep = global_importance(model, ds)
        j = ds.schema.index(res.truth.dominant_feature)
        shares.append(float(rep.top_share[j]))
        hits += rep.ranking[0] == res.truth.dominant_feature and rep.top_share[j] > 0.5
    ok = hits >= 9
    record(7, "planted dominant feature ranked first with top share > 0.5", ok,
           f"{hits}/10 seeds, shares {min(shares):.2f}..{max(shares):.2f}")
    assert ok


def test_criterion_08_ate_direction():
    negative, zero_ok, values = 0, True, []
    unused_seen = 0
    for seed in range(10):
        ds = _planted(seed).dataset
        model = gbt_fit(ds, GbtParams(n_estimators=30, max_depth=3, seed=seed))
        r = ate(model, ds, InterventionSpec("GS", "relative", 0.25))
        values.append(r.ate)
        negative += r.ate < 0
        unused = [f for j, f in enumerate(ds.schema.names) if not model_uses_feature(model, j)]
        if unused:
            unused_seen += 1
            d = ate(model, ds, InterventionSpec(unused[0], "relative", 0.25))
            zero_ok &= d.ate == 0.0 and d.n_changed == 0
    # a feature outside every split cannot move a prediction
    dummy = _planted(0).dataset
    stump = tree_fit(dummy, max_depth=2)
    spare = [f for j, f in enumerate(dummy.schema.names) if j not in stump.tree.used_features()][0]
    zero_ok &= ate(stump, dummy, InterventionSpec(spare, "relative", 0.25)).ate == 0.0
    ok = negative >= 9 and zero_ok
    record(8, "ATE of protective +25% negative; unused feature exactly 0", ok,
           f"negative {negative}/10 (range {min(values):+.3f}..{max(values):+.3f}), "
           f"unused-feature ATE exact zero: {zero_ok} ({unused_seen + 1} checks)")
    assert ok


def test_criterion_09_welch():
    r = welch_t_test([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
    p_ref = float(special.betainc(4.0, 0.5, 8.0 / 9.0))
    s = welch_t_test([2, 3, 4, 5, 6], [1, 2, 3, 4, 5])
    same = welch_t_test([1, 2, 3, 4, 5], [1, 2, 3, 4, 5])
    rng = np.random.default_rng(9)
    anti = True
    for _ in range(50):
        a, b = rng.normal(size=int(rng.integers(2, 30))), rng.normal(1, 2, size=int(rng.integers(2, 30)))
        x, y = welch_t_test(a, b), welch_t_test(b, a)
        anti &= x.t == -y.t and x.p == y.p
    ok = (r.t == -1.0 and r.dof == 8.0 and abs(r.p - p_ref) <= 1e-3 and s.t == 1.0 and s.p == r.p
          and anti and same.t == 0.0 and same.p == 1.0)
    record(9, "Welch t-test vector, antisymmetry, identical samples", ok,
           f"t={r.t}, dof={r.dof}, p={r.p:.6f} vs {p_ref:.6f}")
    assert ok


E2E = {
    "seed": 2024,
    "data": {"synth": {"n": 900, "noise": 0.3, "class_proportions": [0.5, 0.3, 0.2], "dominant_feature": "Age",
                       "rules": [{"kind": "threshold", "features": ["Age"], "weight": 2.0, "threshold": 0.5},
                                 {"kind": "interaction", "features": ["Minority", "PD"], "weight": 0.8},
                                 {"kind": "linear", "features": ["GS"], "weight": -0.8}]}},
    "models": {"knn": {"k": [1, 5, 11]},
               "tree": {"max_depth": [4, 8, None], "min_samples_leaf": [1, 5]},
               "forest": {"n_trees": [25], "max_depth": [None, 10]},
               "gbt": {"learning_rate": [0.1, 0.3], "n_estimators": [30], "max_depth": [3],
                       "subsample": [0.8], "colsample_bytree": [0.8]}},
}


def test_criterion_10_end_to_end_determinism(tmp_path):
    dirs = []
    for name in ("first", "second"):
        cfg = RunConfig.from_dict(dict(E2E, output_dir=str(tmp_path / name)))
        run_pipeline(cfg)
        dirs.append(tmp_path / name)
    files = sorted(os.listdir(dirs[0]))
    same_names = files == sorted(os.listdir(dirs[1]))
    match, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], files, shallow=False)
    winner = json.loads((dirs[0] / "manifest.json").read_text())["winner"]["model"]
    elapsed = time.perf_counter() - SUITE_START
    ok = same_names and not mismatch and not errors and len(match) == len(files) and elapsed < 600
    record(10, "two runs give byte-identical report trees; suite < 10 min", ok,
           f"{len(match)}/{len(files)} files identical, winner {winner}, suite so far {elapsed:.0f}s")
    assert ok


if __name__ == "__main__":
    import pytest

    sys.exit(pytest.main([__file__, "-q", "-s"]))
