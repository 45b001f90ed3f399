import math
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from backend.stat_checks import (
    SummaryReport,
    binomial_se,
    chisq_threshold,
    chisq_vs_density,
    chisq_vs_probabilities,
    empirical_cdf,
    equal_mass_edges,
    fit_power_law,
    ks_critical_value,
    ks_statistic,
    mean_ci,
    median_ci,
    merge_small_bins,
    ratio_ci,
    tail_coefficient,
    wilson_ci,
)


def make_report(**overrides):
    fields = dict(
        id="check", config={}, n=10, estimate=0.5, ci=(0.4, 0.6), reference=0.5,
        statistic_name="z_score", statistic=1.0, threshold=3.0,
    )
    fields.update(overrides)
    return SummaryReport(**fields)


def test_report_verdicts():
    assert make_report().verdict == "pass"
    assert make_report(statistic=4.0).verdict == "fail"
    assert make_report(statistic=4.0).failed
    assert make_report(threshold=None, statistic=100.0).verdict == "info"
    assert make_report(statistic=math.nan).verdict == "fail"


def test_report_ci_must_contain_estimate():
    with pytest.raises(ValueError):
        make_report(estimate=0.9)


def test_report_dict_maps_non_finite_to_null():
    data = make_report(statistic=math.nan, estimate=math.nan, reference=None).to_dict()
    assert data["statistic"] is None
    assert data["estimate"] is None
    assert data["reference"] is None
    assert data["verdict"] == "fail"
    assert data["ci"] == [0.4, 0.6]


def test_wilson_interval():
    low, high = wilson_ci(50, 100)
    assert low < 0.5 < high
    assert 0.5 - low == pytest.approx(high - 0.5)
    assert wilson_ci(0, 10)[0] == 0.0
    assert wilson_ci(10, 10)[1] == 1.0
    with pytest.raises(ValueError):
        wilson_ci(11, 10)


def test_binomial_standard_error():
    assert binomial_se(0.5, 100) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        binomial_se(1.5, 10)


def test_mean_and_median_intervals():
    sample = np.arange(1.0, 102.0)
    mean, low, high = mean_ci(sample)
    assert mean == pytest.approx(51.0)
    assert low < mean < high
    median, low, high = median_ci(sample)
    assert median == 51.0
    assert low <= median <= high
    assert median_ci([3.0]) == (3.0, 3.0, 3.0)


def test_ratio_interval():
    x = np.array([0.0, 1.0, 0.5, 1.0, 0.25])
    assert ratio_ci(2.0 * x, x) == pytest.approx((2.0, 2.0, 2.0))
    rng = np.random.default_rng(5)
    x = rng.uniform(0.0, 1.0, 4000)
    y = 3.0 * x + rng.normal(0.0, 0.1, 4000)
    ratio, low, high = ratio_ci(y, x)
    assert low < ratio < high
    assert ratio == pytest.approx(3.0, abs=0.02)
    with pytest.raises(ValueError):
        ratio_ci([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        ratio_ci([1.0, 2.0], [0.0, 0.0])


def test_empirical_cdf_is_right_continuous():
    cdf = empirical_cdf([3.0, 1.0, 2.0, 2.0])
    assert cdf(0.5) == 0.0
    assert cdf(1.0) == 0.25
    assert cdf(2.0) == 0.75
    assert cdf(10.0) == 1.0


def test_ks_statistic():
    sample = (np.arange(100) + 0.5) / 100
    assert ks_statistic(sample, lambda x: np.clip(x, 0, 1)) == pytest.approx(0.005)
    with pytest.raises(ValueError):
        ks_statistic([0.3, 0.1], lambda x: x)


def test_ks_critical_value_large_n():
    # asymptotic 0.999 quantile of the Kolmogorov distribution is 1.949
    assert ks_critical_value(10000) * math.sqrt(10000) == pytest.approx(1.949, abs=0.01)


def test_chisq_threshold():
    assert chisq_threshold(10) == pytest.approx(29.588, abs=1e-3)


def test_merge_small_bins():
    observed, expected = merge_small_bins([1, 2, 3, 10, 1], [2.0, 2.0, 2.0, 10.0, 1.0])
    assert list(expected) == [6.0, 11.0]
    assert list(observed) == [6.0, 11.0]


def test_equal_mass_edges_of_exponential():
    edges, total = equal_mass_edges(lambda x: math.exp(-x), 4)
    assert total == pytest.approx(1.0)
    assert np.allclose(edges[1:-1], -np.log(1.0 - np.array([0.25, 0.5, 0.75])), atol=1e-8)
    assert edges[-1] == math.inf


def test_chisq_accepts_exponential_sample():
    sample = np.random.default_rng(9).exponential(1.0, 5000)
    statistic, dof = chisq_vs_density(sample, lambda x: math.exp(-x), bins=20)
    assert dof == 19
    assert statistic < chisq_threshold(dof)


def test_chisq_against_bin_probabilities():
    assert chisq_vs_probabilities([10, 20, 30, 40], [1.0, 2.0, 3.0, 4.0]) == (pytest.approx(0.0, abs=1e-12), 3)
    assert chisq_vs_probabilities([40, 60], [0.5, 0.5]) == (pytest.approx(4.0), 1)
    with pytest.raises(ValueError):
        chisq_vs_probabilities([1, 2], [0.5, 0.25, 0.25])
    with pytest.raises(ValueError):
        chisq_vs_probabilities([1, 2], [-0.5, 1.5])


def test_chisq_rejects_wrong_density():
    sample = np.random.default_rng(9).exponential(3.0, 5000)
    statistic, dof = chisq_vs_density(sample, lambda x: math.exp(-x), bins=20)
    assert statistic > chisq_threshold(dof)


def test_fit_power_law_exact():
    u = np.array([10.0, 20.0, 40.0])
    fit = fit_power_law(u, 3.0 * u**-2)
    assert fit.exponent == pytest.approx(-2.0)
    assert fit.coefficient == pytest.approx(3.0)
    assert fit.reliable


def test_tail_coefficient_of_pareto_sample():
    sample = np.random.default_rng(2).pareto(2.0, 200000) + 1.0
    fit = tail_coefficient(sample, [2.0, 4.0, 8.0])
    assert fit.exponent == pytest.approx(-2.0, abs=0.1)
    assert fit.reliable


def test_tail_coefficient_flags_sparse_tail():
    sample = np.random.default_rng(2).pareto(2.0, 1000) + 1.0
    fit = tail_coefficient(sample, [1.5, 2.0, 3.0], min_exceedances=10**6)
    assert not fit.reliable
