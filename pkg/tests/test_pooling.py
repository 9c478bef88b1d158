import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import criteria
from hcmmld.errors import ConfigError
from hcmmld.pooling import (EmptySubgroup, EstimandResult, EstimandSpec, estimate, load_estimands,
                            pool_frames, pooled_table, rubin_pool)


def test_rubin_example_and_order_invariance():
    bad = [f"{label}: {detail}" for label, ok, detail in criteria.rubin_example() if not ok]
    assert not bad, bad


def test_zero_between_variance_uses_normal():
    p = rubin_pool(EstimandResult(q=[1.5] * 4, U=[0.25] * 4))
    assert p.T == 0.25 and p.normal_reference and math.isinf(p.df)
    half = stats.norm.ppf(0.975) * 0.5
    assert np.isclose(p.hi - p.lo, 2 * half, rtol=1e-15)


def test_interval_uses_t_quantile():
    p = rubin_pool(EstimandResult(q=[1.0, 3.0], U=[1.0, 1.0]), level=0.9)
    assert np.isclose(p.hi, 2 + stats.t.ppf(0.95, 16 / 9) * 2, rtol=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(0, 1e3)), min_size=2, max_size=30))
def test_total_at_least_within(pairs):
    q, U = zip(*pairs)
    p = rubin_pool(EstimandResult(q, U))
    assert p.T >= p.W and p.lo <= p.qbar <= p.hi


def test_between_variance_converges():
    rng = np.random.default_rng(0)
    q = rng.normal(3.0, 2.0, 1000)
    p = rubin_pool(EstimandResult(q, np.ones(1000)))
    assert abs(p.Bvar / 4.0 - 1) < 0.10


@pytest.mark.parametrize("q,U", [([1.0], [1.0]), ([1, 2], [1]), ([1, 2], [1, -1])])
def test_result_validation(q, U):
    with pytest.raises(ValueError):
        EstimandResult(q, U)


def test_mean_two_points():
    fr = pd.DataFrame({"y": [2.0, 4.0]})
    ((_, pt, var),) = estimate(fr, EstimandSpec("mean", "y"))
    assert pt == 3 and var == 1


def test_proportion_with_fpc():
    fr = pd.DataFrame({"s": ["a"] * 50 + ["b"] * 50})
    ((_, pt, var),) = estimate(fr, EstimandSpec("proportion", "s", level="a"), N=200)
    assert pt == 0.5 and np.isclose(var, 0.00125, rtol=1e-14)


def test_subgroup_and_multi_level():
    fr = pd.DataFrame({"g": ["m", "f", "f", "f"], "e": ["hs", "ba", "gr", "hs"], "y": [1.0, 2, 4, 9]})
    ((_, pt, _),) = estimate(fr, EstimandSpec("mean", "y", where={"g": "f"}))
    assert pt == 5
    ((name, pt, _),) = estimate(fr, EstimandSpec("proportion", "e", level=["ba", "gr"]))
    assert pt == 0.5 and name == "proportion(e=ba|gr)"


def test_ols_matches_closed_form():
    rng = np.random.default_rng(2)
    n = 200
    fr = pd.DataFrame({"x": rng.normal(size=n), "g": pd.Categorical(rng.choice(["a", "b", "c"], n)),
                       "y": rng.normal(size=n)})
    res = estimate(fr, EstimandSpec("ols", response="y", predictors=["x", "g"]), N=1000)
    D = np.column_stack([np.ones(n), fr.x, fr.g == "b", fr.g == "c"]).astype(float)
    beta = np.linalg.solve(D.T @ D, D.T @ fr.y.to_numpy())
    r = fr.y.to_numpy() - D @ beta
    cov = r @ r / (n - 4) * np.linalg.inv(D.T @ D) * (1 - n / 1000)
    assert [nm.split(":")[1] for nm, _, _ in res] == ["(intercept)", "x", "g=b", "g=c"]
    assert np.allclose([b for _, b, _ in res], beta, rtol=1e-10)
    assert np.allclose([v for _, _, v in res], np.diag(cov), rtol=1e-10)


def test_median_variance_formula():
    rng = np.random.default_rng(3)
    y = rng.normal(size=4000)
    ((_, m, v),) = estimate(pd.DataFrame({"y": y}), EstimandSpec("median", "y"))
    # asymptotic var of the normal median: pi / (2 n)
    assert abs(m) < 0.1 and abs(v / (np.pi / 2 / 4000) - 1) < 0.15


def test_empty_subgroup_excluded():
    fr = pd.DataFrame({"g": ["a", "a"], "y": [1.0, 2.0]})
    spec = EstimandSpec("mean", "y", where={"g": "b"})
    with pytest.raises(EmptySubgroup):
        estimate(fr, spec)
    with pytest.warns(UserWarning):
        pooled, skipped = pool_frames([fr, fr], [spec, EstimandSpec("mean", "y")])
    assert skipped == [spec.name] and len(pooled) == 1
    t = pooled_table(pooled)
    assert list(t.columns[:6]) == ["estimand", "qbar", "T", "df", "lo", "hi"]


def test_spec_errors_and_file(tmp_path):
    for bad in (dict(kind="mode", variable="y"), dict(kind="mean"), dict(kind="proportion", variable="s"),
                dict(kind="ols", response="y")):
        with pytest.raises(ConfigError):
            EstimandSpec(**bad)
    p = tmp_path / "e.yaml"
    p.write_text("population_size: 500\nestimands:\n  - {kind: mean, variable: y}\n")
    specs, N = load_estimands(p)
    assert N == 500 and specs[0].name == "mean(y)"
    p.write_text("estimands: []\n")
    with pytest.raises(ConfigError):
        load_estimands(p)
