"""Small hand-checkable fixtures: every expected value here can be checked by hand."""

from __future__ import annotations

import hashlib
import os

import numpy as np

from .baselines import DecisionTreeModel
from .dataset import FRACTION, Dataset, Feature, FeatureSchema, write_csv
from .explain import TreeEnsemble
from .io import write_json
from .trees import LEAF, Tree

XOR_SCHEMA = FeatureSchema((Feature("a", FRACTION), Feature("b", FRACTION)), target="label")
GS_SCHEMA = FeatureSchema((Feature("GS", FRACTION),), target="Cancer")

# Welch test on a=[1..5], b=[2..6]: t = -1 and dof = 8 by hand;
# p = I_{8/9}(4, 1/2), evaluated with scipy.special.betainc.
TTEST_P = 0.34659350708733416


def _tree(nodes) -> Tree:
    """``nodes``: list of (feature, threshold, left, right, value, cover); leaves use feature LEAF."""
    feature = np.array([n[0] for n in nodes], dtype=np.int64)
    threshold = np.array([np.nan if n[0] == LEAF else n[1] for n in nodes])
    left = np.array([n[2] for n in nodes], dtype=np.int64)
    right = np.array([n[3] for n in nodes], dtype=np.int64)
    value = np.array([n[4] for n in nodes], dtype=np.float64)
    cover = np.array([n[5] for n in nodes], dtype=np.float64)
    return Tree(feature, threshold, left, right, value, cover)


def xor_dataset() -> Dataset:
    corners = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    X = np.repeat(corners, 2, axis=0)
    y = np.where(X[:, 0] == X[:, 1], 1, 2)
    return Dataset(XOR_SCHEMA, X, y)


def stump_ensemble() -> TreeEnsemble:
    # x0 < 0.5 -> 1.0 (cover 4), else 3.0 (cover 6)
    t = _tree([
        (0, 0.5, 1, 2, [0.0], 10),
        (LEAF, None, -1, -1, [1.0], 4),
        (LEAF, None, -1, -1, [3.0], 6),
    ])
    return TreeEnsemble((t,), np.zeros(1), 2, ("x0", "x1"))


def depth2_ensemble() -> TreeEnsemble:
    t = _tree([
        (0, 0.5, 1, 4, [0.0], 100),
        (1, 0.5, 2, 3, [0.0], 40),
        (LEAF, None, -1, -1, [0.0], 10),
        (LEAF, None, -1, -1, [10.0], 30),
        (LEAF, None, -1, -1, [20.0], 60),
    ])
    return TreeEnsemble((t,), np.zeros(1), 2, ("x0", "x1"))


# x, expected phi, expected base
STUMP_CASE = ([0.2, 0.9], [-1.2, 0.0], 2.2)
DEPTH2_CASE = ([0.2, 0.8], [-6.75, 1.75], 15.0)


def gs_rule(gs: float) -> int:
    if gs < 0.2:
        return 3
    if gs < 0.5:
        return 2
    return 1


def ate_fixture() -> tuple[Dataset, DecisionTreeModel, dict]:
    """100 rows of GS on a half-step grid, scored by a fixed three-leaf rule."""
    gs = (np.arange(100) + 0.5) / 100.0
    y = np.array([gs_rule(v) for v in gs])
    ds = Dataset(GS_SCHEMA, gs[:, None], y)
    counts = lambda c: [float(c == k) for k in (1, 2, 3)]
    tree = _tree([
        (0, 0.2, 1, 2, [0.0, 0.0, 0.0], 100),
        (LEAF, None, -1, -1, counts(3), 20),
        (0, 0.5, 3, 4, [0.0, 0.0, 0.0], 80),
        (LEAF, None, -1, -1, counts(2), 30),
        (LEAF, None, -1, -1, counts(1), 50),
    ])
    model = DecisionTreeModel(tree, 3, GS_SCHEMA, {"note": "hand-built rule"})

    # expected values by direct enumeration of the rule, independent of the tree code
    control = [gs_rule(v) for v in gs]
    treated = [gs_rule(min(1.0, v * 1.25)) for v in gs]
    stratum = [i for i, c in enumerate(control) if c >= 2]
    diffs = [treated[i] - control[i] for i in stratum]
    expected = {
        "intervention": {"feature": "GS", "relative": 0.25},
        "n_stratum": len(stratum),
        "n_changed": sum(d < 0 for d in diffs),
        "ate": sum(diffs) / len(stratum),
        "changed_rows": [i for i in range(len(gs)) if treated[i] < control[i]],
    }
    return ds, model, expected


def write_fixtures(out_dir: str | os.PathLike) -> list[str]:
    """Write the bundle plus a manifest of sha256 digests; rewriting gives identical bytes."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def p(name):
        written.append(name)
        return os.path.join(out_dir, name)

    write_csv(xor_dataset(), p("xor.csv"))
    write_json(p("xor_schema.json"), XOR_SCHEMA.to_dict())

    for name, ens, (x, phi, base) in (("stump", stump_ensemble(), STUMP_CASE),
                                     ("depth2", depth2_ensemble(), DEPTH2_CASE)):
        write_json(p(f"{name}_tree.json"), ens.to_dict())
        write_json(p(f"{name}_expected.json"), {"x": x, "phi": [phi], "base": [base]})

    ds, model, expected = ate_fixture()
    write_csv(ds, p("ate_gs.csv"))
    write_json(p("ate_gs_schema.json"), GS_SCHEMA.to_dict())
    write_json(p("ate_gs_model.json"), model.to_dict())
    write_json(p("ate_gs_expected.json"), expected)

    write_json(p("ttest_vectors.json"), {
        "cases": [
            {"a": [1, 2, 3, 4, 5], "b": [2, 3, 4, 5, 6], "t": -1.0, "dof": 8.0, "p": TTEST_P},
            {"a": [2, 3, 4, 5, 6], "b": [1, 2, 3, 4, 5], "t": 1.0, "dof": 8.0, "p": TTEST_P},
            {"a": [1, 2, 3, 4, 5], "b": [1, 2, 3, 4, 5], "t": 0.0, "dof": 8.0, "p": 1.0},
        ]
    })

    names = sorted(written)
    digests = {}
    for name in names:
        with open(os.path.join(out_dir, name), "rb") as fh:
            digests[name] = hashlib.sha256(fh.read()).hexdigest()
    write_json(p("manifest.json"), {"files": digests})
    return names + ["manifest.json"]
