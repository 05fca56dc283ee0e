import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tagdiff.geometry import wrap_array
from tagdiff.stats import (Histogram, TestReport, autocorrelation, chi2_uniform_test,
                           excess_kurtosis_test, ks_normal_test, ks_statistic,
                           msd_with_batch_errors, replica_rng, run_replicas, tv_distance)


def _draw(rng, r):
    return rng.random(3).tolist()


def test_chi2_pvalue_closed_form():
    # counts 10, 20, 30 in three cells: stat 10 on 2 degrees of freedom, p = exp(-5)
    pts = np.repeat([0.1, 0.5, 0.9], [10, 20, 30])
    stat, p = chi2_uniform_test(pts, bins=3)
    assert stat == pytest.approx(10.0)
    assert p == pytest.approx(math.exp(-5.0), rel=1e-12)


def test_ks_normal_pvalue_at_quantiles():
    # a single sample: D = max(F(x), 1 - F(x)), exact p = 2 (1 - D)
    for x, big_f in ((0.0, 0.5), (1.0, 0.8413447460685429), (-2.0, 0.02275013194817921)):
        d, p = ks_normal_test([x], 1.0)
        assert d == pytest.approx(max(big_f, 1 - big_f), rel=1e-9)
        assert p == pytest.approx(min(1.0, 2 * (1 - d)), rel=1e-6)


def test_ks_identical_is_zero():
    x = np.random.default_rng(0).normal(size=100)
    assert ks_statistic(x, x.copy()) == 0.0


def test_tv_disjoint_and_identical():
    a = Histogram.from_samples(np.full(50, 0.1), 10)
    b = Histogram.from_samples(np.full(70, 0.9), 10)
    assert tv_distance(a, b) == 1.0
    assert tv_distance(a, a) == 0.0
    with pytest.raises(ValueError):
        tv_distance(a, Histogram.from_samples(np.full(5, 0.1), 5))


def test_histogram_validation():
    with pytest.raises(ValueError):
        Histogram((np.array([0.0, 0.0, 1.0]),), np.zeros(2))


def test_msd_diffusive_and_ballistic():
    rng = np.random.default_rng(1)
    lags = np.linspace(0.1, 1.0, 10)
    steps = rng.normal(scale=math.sqrt(0.1), size=(2000, 10, 2))
    diff = msd_with_batch_errors(np.cumsum(steps, axis=1), lags)
    assert diff.diffusive
    assert abs(diff.slope - 2.0) < 4 * diff.slope_error + 0.05
    v = rng.normal(size=(2000, 1, 2))
    ball = msd_with_batch_errors(v * lags[None, :, None], lags)
    assert not ball.diffusive
    assert ball.exponent == pytest.approx(2.0, abs=1e-9)


def test_msd_needs_twenty_batches():
    with pytest.raises(ValueError):
        msd_with_batch_errors(np.zeros((100, 3, 2)), np.arange(1.0, 4.0), n_batches=10)


def test_autocorrelation_matches_direct_sum():
    x = np.random.default_rng(2).normal(size=(64, 2))
    acf = autocorrelation(x, 5)
    direct = [np.mean(np.sum(x[: 64 - s] * x[s:], axis=1)) for s in range(6)]
    np.testing.assert_allclose(acf, direct, rtol=1e-12)


def test_kurtosis_of_normal():
    k, se = excess_kurtosis_test(np.random.default_rng(3).normal(size=20000))
    assert abs(k - 3.0) < 4 * se


def test_replica_streams_independent_of_order():
    a = replica_rng(7, 3).random(4)
    replica_rng(7, 1).random(100)
    np.testing.assert_array_equal(a, replica_rng(7, 3).random(4))
    assert not np.array_equal(a, replica_rng(7, 4).random(4))
    assert run_replicas(_draw, 4, 11, jobs=2) == run_replicas(_draw, 4, 11, jobs=1)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2))
def test_wrap_of_unwrapped_path(x):
    x = np.array(x)
    w = wrap_array(x)
    assert np.all((w >= 0) & (w < 1))
    np.testing.assert_allclose(np.round(x - w), x - w, atol=1e-9)


def test_report_pass_fail_and_csv(tmp_path):
    rep = TestReport("demo", provenance={"seed": 1})
    rep.add_value("a", 1.0, 1.0, 0.1)
    assert rep.passed
    rep.add_upper("b", 2.0, 1.0)
    assert not rep.passed and [c.name for c in rep.failures()] == ["b"]
    rep.to_csv(tmp_path / "r.csv")
    text = (tmp_path / "r.csv").read_text()
    assert text.startswith("# schema: tagdiff.report/v1") and "# seed = 1" in text
    assert "FAIL" in rep.summary()
