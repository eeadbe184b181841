import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from tractlab.baselines import tree_fit
from tractlab.causal import (
    InterventionSpec,
    ate,
    betainc,
    changed_areas,
    intervene,
    profile_changed,
    welch_t_test,
)
from tractlab.dataset import Dataset, Feature, FeatureSchema
from tractlab.errors import EmptyStratumError, InsufficientDataError, ParameterError
from tractlab.fixtures import ate_fixture

from conftest import make_ds

GS = FeatureSchema((Feature("GS"), Feature("PD", "density")), target="Cancer")


def test_intervene_arithmetic_and_clip():
    ds = Dataset(GS, [[0.4, 10.0], [0.9, 20.0]], [1, 2])
    out = intervene(ds, InterventionSpec("GS", "relative", 0.25))
    assert out.X[0, 0] == 0.5
    assert out.X[1, 0] == 1.0
    assert np.array_equal(out.X[:, 1], ds.X[:, 1])
    assert np.array_equal(intervene(ds, InterventionSpec("GS", "relative", 0.0)).X, ds.X)
    assert intervene(ds, InterventionSpec("PD", "set", 5.0)).X[:, 1].tolist() == [5.0, 5.0]
    assert intervene(ds, InterventionSpec("PD", "relative", 1.0, clip=(0, 30))).X[:, 1].tolist() == [20.0, 30.0]


def test_spec_validation():
    with pytest.raises(ParameterError):
        InterventionSpec("GS", "relative", -1.0)
    with pytest.raises(ParameterError):
        InterventionSpec("GS", "relative", 0.1, clip=(1, 0))
    spec = InterventionSpec.from_dict({"feature": "GS", "relative": 0.25})
    assert spec.label == "+25%"
    assert InterventionSpec.from_dict(spec.to_dict()) == spec


def test_deterministic_scorer_fixture():
    ds, model, expected = ate_fixture()
    spec = InterventionSpec("GS", "relative", 0.25)
    res = ate(model, ds, spec)
    # rows 0.165..0.195 drop 3 -> 2 and rows 0.405..0.495 drop 2 -> 1: 14 of 50
    assert expected["n_stratum"] == 50 and expected["n_changed"] == 14
    assert res.n_stratum == 50
    assert res.n_changed == 14
    assert res.ate == pytest.approx(-14 / 50, abs=1e-12)
    assert changed_areas(model, ds, spec).tolist() == expected["changed_rows"]


def test_unused_feature_and_null_intervention(rng):
    X = np.column_stack([rng.uniform(size=60), rng.uniform(size=60)])
    y = np.where(X[:, 0] < 0.3, 3, np.where(X[:, 0] < 0.6, 2, 1))
    ds = make_ds(X, y)
    model = tree_fit(ds, max_depth=3)
    assert 1 not in model.tree.used_features()
    res = ate(model, ds, InterventionSpec("x1", "relative", 0.25))
    assert res.ate == 0.0 and res.n_changed == 0 and res.feature_used is False
    assert changed_areas(model, ds, InterventionSpec("x1", "relative", 0.25)).size == 0
    assert ate(model, ds, InterventionSpec("x0", "relative", 0.0)).ate == 0.0
    assert changed_areas(model, ds, InterventionSpec("x0", "relative", 0.0)).size == 0


def test_empty_stratum(rng):
    ds = make_ds(rng.uniform(size=(10, 1)), [1] * 5 + [2] * 5)
    model = tree_fit(make_ds(rng.uniform(size=(10, 1)), [1] * 10, n_classes=2))
    with pytest.raises(EmptyStratumError):
        ate(model, ds, InterventionSpec("x0", "relative", 0.1))


# -- Welch ---------------------------------------------------------------------

def test_welch_hand_vector():
    r = welch_t_test([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
    assert r.t == -1.0
    assert r.dof == 8.0
    assert abs(r.p - special.betainc(4.0, 0.5, 8.0 / 9.0)) <= 1e-12
    assert r.p == pytest.approx(0.3466, abs=1e-4)


def test_welch_identical_and_swapped():
    r = welch_t_test([1, 2, 3, 4, 5], [1, 2, 3, 4, 5])
    assert (r.t, r.p) == (0.0, 1.0)
    a, b = [1.0, 3.5, 2.2, 8.0], [0.5, 0.7, 0.1, 0.9, 1.3]
    ab, ba = welch_t_test(a, b), welch_t_test(b, a)
    assert ab.t == -ba.t and ab.p == ba.p and ab.dof == ba.dof


def test_welch_constant_samples():
    assert welch_t_test([2, 2, 2], [2, 2]).p == 1.0
    r = welch_t_test([2, 2, 2], [3, 3])
    assert r.p == 0.0 and r.t == -math.inf


def test_welch_too_small():
    with pytest.raises(InsufficientDataError):
        welch_t_test([1.0], [1.0, 2.0])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 40), st.integers(2, 40))
def test_welch_against_scipy(seed, na, nb):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, rng.uniform(0.1, 3), na)
    b = rng.normal(rng.uniform(-2, 2), rng.uniform(0.1, 3), nb)
    ours = welch_t_test(a, b)
    ref = stats.ttest_ind(a, b, equal_var=False)
    assert ours.t == pytest.approx(ref.statistic, rel=1e-10)
    assert ours.p == pytest.approx(ref.pvalue, rel=1e-8, abs=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 200), st.floats(0.05, 200), st.floats(0, 1))
def test_betainc_against_scipy(a, b, x):
    assert betainc(a, b, x) == pytest.approx(special.betainc(a, b, x), rel=1e-9, abs=1e-13)


def test_profile_all_rows_is_null(rng):
    ds = make_ds(rng.uniform(size=(40, 3)), rng.integers(1, 3, 40))
    res = profile_changed(ds, np.arange(40))
    assert all(r.t == 0.0 and r.p == 1.0 for r in res)


def test_profile_flags_shifted_feature(rng):
    n, m = 300, 40
    X = rng.normal(0.5, 0.02, size=(n, 3))
    changed = np.arange(m)
    X[changed, 1] += 5 * 0.02
    ds = make_ds(X, np.ones(n, dtype=int))
    res = profile_changed(ds, changed)
    assert res[1].significant and res[1].p < 1e-6


def test_false_positive_rate_near_nominal():
    hits = trials = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=30), rng.normal(size=60)
        hits += welch_t_test(a, b).significant
        trials += 1
    assert 0.01 <= hits / trials <= 0.10
