import json
import math

import numpy as np
import pytest
import torch
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from masgan.errors import DegenerateInputError, InvalidInputError
from masgan.evaluation import (
    horizon_returns,
    kde,
    kolmogorov_sf,
    ks_statistic,
    ks_two_sample,
    moments,
    random_feature_set,
    return_distribution_stats,
    score_distribution_report,
    silverman_bandwidth,
    volume_volatility_correlation,
    write_return_report,
    write_score_report,
)
from masgan.gan import GanConfig, build_default_nets
from masgan.marketdata import BarSeries

from .oracles import brute_ks_statistic, permutation_ks_pvalue, two_pass_moments


def test_ks_identical():
    r = ks_two_sample([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert r.statistic == 0.0 and r.p_value == pytest.approx(1.0)


def test_ks_disjoint():
    assert ks_two_sample([1, 2, 3], [10, 11, 12]).statistic == 1.0


def test_ks_empty():
    with pytest.raises(InvalidInputError):
        ks_two_sample([], [1.0])


def test_ks_matches_permutation_small():
    rng = np.random.default_rng(8)
    for _ in range(5):
        a, b = rng.normal(size=6), rng.normal(0.5, 1, size=6)
        d, p = permutation_ks_pvalue(a, b)
        r = ks_two_sample(a, b)
        assert r.statistic == pytest.approx(d, abs=1e-12)
        assert abs(r.p_value - p) < 0.05


@given(
    st.lists(st.integers(-5, 5), min_size=1, max_size=12),
    st.lists(st.integers(-5, 5), min_size=1, max_size=12),
)
def test_ks_statistic_with_ties_matches_brute(a, b):
    assert ks_statistic(a, b) == pytest.approx(brute_ks_statistic(a, b), abs=1e-12)


@given(
    st.lists(st.floats(-100, 100), min_size=1, max_size=30),
    st.lists(st.floats(-100, 100), min_size=1, max_size=30),
)
def test_ks_symmetric_and_bounded(a, b):
    r1, r2 = ks_two_sample(a, b), ks_two_sample(b, a)
    assert r1.statistic == r2.statistic and r1.p_value == r2.p_value
    assert 0 <= r1.statistic <= 1 and 0 <= r1.p_value <= 1


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20), st.lists(st.floats(-5, 5), min_size=1, max_size=20))
def test_ks_invariant_to_monotone_transform(a, b):
    f = lambda x: np.exp(np.asarray(x) / 2) * 3 + 1  # noqa: E731
    pooled = np.concatenate([a, b])
    assume(len(np.unique(f(pooled))) == len(np.unique(pooled)))  # transform must stay strict in floating point
    assert ks_statistic(a, b) == ks_statistic(f(a), f(b))


def test_kolmogorov_sf_known_values():
    # P(K > 1.36) ~ 0.049, P(K > 1.63) ~ 0.0098 (standard critical values)
    assert kolmogorov_sf(1.358) == pytest.approx(0.05, abs=1e-3)
    assert kolmogorov_sf(1.628) == pytest.approx(0.01, abs=1e-3)
    assert kolmogorov_sf(0.0) == 1.0


def test_kde_two_points_symmetric():
    d = kde([0.0, 0.3])
    np.testing.assert_allclose(d.density, d.density[::-1], atol=1e-14)
    np.testing.assert_allclose(d.grid + d.grid[::-1], 0.3, atol=1e-12)


def test_kde_normal_peak_and_integral():
    # the mode of a single KDE draw wanders by ~0.1 at this n, so the oracle averages 20 draws
    peaks = []
    for seed in range(20):
        d = kde(np.random.default_rng(seed).standard_normal(10_000))
        peaks.append(d.peak())
        assert abs(d.integral() - 1) < 1e-2
        assert len(d.grid) == 256
        assert np.all(d.density >= 0)
    assert abs(np.mean(peaks)) < 0.1
    assert max(map(abs, peaks)) < 0.3


def test_silverman_rule():
    x = np.random.default_rng(1).standard_normal(500)
    q75, q25 = np.percentile(x, [75, 25])
    expected = 0.9 * min(x.std(ddof=1), (q75 - q25) / 1.34) * 500 ** (-0.2)
    assert silverman_bandwidth(x) == pytest.approx(expected, rel=1e-12)


def test_kde_degenerate():
    with pytest.raises(DegenerateInputError):
        kde([1.0, 1.0, 1.0])


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=50).filter(lambda v: np.ptp(v) > 1e-3))
@settings(max_examples=30)
def test_kde_integral_law(x):
    d = kde(x)
    assert np.all(d.density >= 0)
    assert abs(d.integral() - 1) < 1e-2


def test_returns_constant_price():
    st_ = return_distribution_stats(np.full(31, 100.0))
    assert st_[1].std == 0.0 and np.all(st_[1].returns == 0)


@given(st.integers(11, 200))
@settings(max_examples=20)
def test_ten_bar_count(n):
    mids = 100 + np.arange(n) * 0.01
    assert len(return_distribution_stats(mids)[10].returns) == (n - 1) // 10


def test_moments_two_pass_oracle():
    x = np.random.default_rng(4).standard_t(5, 2000) * 1e-3
    for a, b in zip(moments(x), two_pass_moments(list(x))):
        assert a == pytest.approx(b, abs=1e-10)


def test_horizon_returns_non_overlapping():
    mids = np.exp(np.arange(21) * 0.1)
    np.testing.assert_allclose(horizon_returns(mids, 10), [1.0, 1.0], atol=1e-12)


def test_return_stats_too_short():
    with pytest.raises(InvalidInputError):
        return_distribution_stats(np.array([100.0, 101.0]), horizons=(10,))


def test_vv_correlation_perfect():
    absret = np.abs(np.random.default_rng(2).normal(size=50))
    assert volume_volatility_correlation((absret + 1, absret)) == pytest.approx(1.0)


def test_vv_correlation_independent():
    rng = np.random.default_rng(3)
    assert abs(volume_volatility_correlation((rng.random(10_000), rng.random(10_000)))) < 0.05


@given(st.floats(0.1, 10), st.floats(-5, 5))
@settings(max_examples=20)
def test_vv_correlation_affine_invariant(a, b):
    rng = np.random.default_rng(5)
    v, r = rng.random(40), rng.random(40) + 0.3 * np.arange(40) / 40
    assert volume_volatility_correlation((a * v + b, r)) == pytest.approx(volume_volatility_correlation((v, r)), abs=1e-12)


def test_vv_correlation_errors():
    with pytest.raises(InvalidInputError):
        volume_volatility_correlation((np.ones(5), np.ones(5)))
    with pytest.raises(DegenerateInputError):
        volume_volatility_correlation((np.ones(30), np.arange(30.0)))


def test_vv_correlation_from_series():
    rng = np.random.default_rng(6)
    mids = 100 * np.exp(np.cumsum(rng.normal(0, 1e-3, 30)))
    s = BarSeries.from_arrays(mids, rng.integers(0, 100, 30).astype(float), 60)
    vol = s.volumes[1:]
    absret = np.abs(np.diff(np.log(mids)))
    assert volume_volatility_correlation(s) == pytest.approx(np.corrcoef(vol, absret)[0, 1], abs=1e-12)


@pytest.fixture(scope="module")
def critic():
    torch.manual_seed(0)
    return build_default_nets(8, GanConfig(channels=8, kernel=3, seed=1))[1]


def test_score_report_real_twice(critic):
    real = np.random.default_rng(0).standard_normal((20, 16))
    rep = score_distribution_report(critic, real, real, random_feature_set(10, 8, np.random.default_rng(1)))
    assert rep.ks.statistic == 0.0
    assert rep.mean_gap == 0.0
    assert set(rep.kdes) == {"real", "generated", "random"}


def test_score_report_empty_set(critic):
    with pytest.raises(InvalidInputError):
        score_distribution_report(critic, np.zeros((0, 16)), np.zeros((3, 16)), np.zeros((3, 16)))


def test_report_files(critic, tmp_path):
    rng = np.random.default_rng(2)
    rep = score_distribution_report(critic, rng.standard_normal((30, 16)), rng.standard_normal((30, 16)) + 1, random_feature_set(30, 8, rng))
    names = {p.name for p in write_score_report(rep, tmp_path)}
    assert {"scores_real.csv", "scores_generated.csv", "scores_random.csv", "ks_report.json", "score_kde.svg"} <= names
    assert {"kde_real.csv", "kde_generated.csv", "kde_random.csv"} <= names
    js = json.loads((tmp_path / "ks_report.json").read_text())
    assert js["statistic"] == rep.ks.statistic and js["n"] == 30 and js["m"] == 30
    back = np.loadtxt(tmp_path / "scores_real.csv", skiprows=1)
    np.testing.assert_array_equal(back, rep.scores["real"])

    mids = 100 * np.exp(np.cumsum(rng.normal(0, 1e-3, 61)))
    stats = return_distribution_stats(mids)
    names = {p.name for p in write_return_report(stats, tmp_path, correlation=0.1)}
    assert {"returns_hist_1.csv", "returns_hist_10.csv", "returns_stats.json", "returns_hist.svg"} <= names
    counts = np.loadtxt(tmp_path / "returns_hist_1.csv", delimiter=",", skiprows=1)[:, 2]
    assert counts.sum() == 60
    assert math.isclose(json.loads((tmp_path / "returns_stats.json").read_text())["1"]["std"], stats[1].std)


def test_kde_matches_reference_when_resolved():
    from scipy.stats import gaussian_kde

    x = np.random.default_rng(9).standard_normal(2000)
    d = kde(x)
    ref = gaussian_kde(x, bw_method=d.bandwidth / x.std(ddof=1))(d.grid)
    np.testing.assert_allclose(d.density, ref, rtol=2e-3, atol=1e-4)


def test_kde_integral_with_tiny_bandwidth():
    x = np.concatenate([np.zeros(40), [1e4]]) + np.linspace(0, 1e-3, 41)
    assert abs(kde(x).integral() - 1) < 1e-2
