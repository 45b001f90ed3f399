"""
Statistical Checks Module

Confidence intervals, goodness-of-fit statistics and tail fits used to compare
Monte Carlo output against the closed-form laws, and the SummaryReport every
experiment produces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.optimize import brentq

from .annulus_laws import integrate

try:
    from loguru import logger
except ImportError:
    import logging

    logger = logging.getLogger(__name__)


DEFAULT_LEVEL = 1e-3
SCHEMA_VERSION = 1


def _json_number(value):
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


@dataclass
class SummaryReport:
    """
    Outcome of one check.

    Attributes
    ----------
    id:
        Report identifier, e.g. ``"peel-hit/L=400"``.
    config:
        Echo of the experiment configuration.
    n:
        Sample size behind the estimate.
    estimate, ci:
        Point estimate and its confidence interval ``(low, high)``.
    reference:
        Analytic value the estimate is compared against, if any.
    statistic_name, statistic, threshold:
        The test statistic and the largest value that passes. A report
        without a threshold is informational.
    details:
        Free-form counts (hits, deaths, censored paths, ...).
    """

    id: str
    config: Dict[str, Any]
    n: int
    estimate: float
    ci: Tuple[float, float]
    reference: Optional[float]
    statistic_name: str
    statistic: float
    threshold: Optional[float]
    details: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        low, high = self.ci
        if all(math.isfinite(x) for x in (low, high, self.estimate)) and not (
            low <= self.estimate <= high
        ):
            raise ValueError(f"{self.id}: ci {self.ci} does not contain estimate {self.estimate}")

    @property
    def verdict(self) -> str:
        if self.threshold is None:
            return "info"
        # NaN statistics fail
        return "pass" if self.statistic <= self.threshold else "fail"

    @property
    def failed(self) -> bool:
        return self.verdict == "fail"

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready view; non-finite numbers become null."""
        return {
            "id": self.id,
            "config": self.config,
            "n": self.n,
            "estimate": _json_number(self.estimate),
            "ci": [_json_number(self.ci[0]), _json_number(self.ci[1])],
            "reference": _json_number(self.reference),
            "statistic_name": self.statistic_name,
            "statistic": _json_number(self.statistic),
            "threshold": _json_number(self.threshold),
            "verdict": self.verdict,
            "details": self.details,
        }


# -- intervals ---------------------------------------------------------------


def wilson_ci(successes: int, trials: int, level: float = 0.95) -> Tuple[float, float]:
    """
    Wilson score interval for a binomial proportion.

    Args:
        successes: Number of successes, 0 <= successes <= trials
        trials: Number of trials, >= 1
        level: Two-sided confidence level

    Returns:
        tuple: (low, high), clipped to [0, 1]
    """
    if trials < 1 or not 0 <= successes <= trials:
        raise ValueError(f"need 0 <= successes <= trials and trials >= 1, got {successes}/{trials}")
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    z = stats.norm.ppf(0.5 + level / 2.0)
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2.0 * trials)) / denom
    half = z * math.sqrt(p * (1.0 - p) / trials + z * z / (4.0 * trials * trials)) / denom
    low = 0.0 if successes == 0 else max(0.0, min(p, center - half))
    high = 1.0 if successes == trials else min(1.0, max(p, center + half))
    return low, high


def binomial_se(p: float, n: int) -> float:
    if n < 1 or not 0 <= p <= 1:
        raise ValueError(f"need 0 <= p <= 1 and n >= 1, got p={p}, n={n}")
    return math.sqrt(p * (1.0 - p) / n)


def mean_ci(sample: Sequence[float], level: float = 0.95) -> Tuple[float, float, float]:
    """Sample mean with a normal-approximation interval: (mean, low, high)."""
    x = np.asarray(sample, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("mean_ci needs at least two values")
    mean = float(x.mean())
    half = stats.norm.ppf(0.5 + level / 2.0) * float(x.std(ddof=1)) / math.sqrt(len(x))
    return mean, mean - half, mean + half


def ratio_ci(
    numerators: Sequence[float], denominators: Sequence[float], level: float = 0.95
) -> Tuple[float, float, float]:
    """
    Ratio sum(y)/sum(x) of paired samples with a delta-method interval:
    (ratio, low, high).
    """
    y = np.asarray(numerators, dtype=np.float64)
    x = np.asarray(denominators, dtype=np.float64)
    if y.shape != x.shape or len(x) < 2:
        raise ValueError("ratio_ci needs two paired samples of length >= 2")
    if x.sum() <= 0:
        raise ValueError("ratio_ci needs a positive denominator total")
    ratio = float(y.sum() / x.sum())
    residual = y - ratio * x
    half = (
        stats.norm.ppf(0.5 + level / 2.0)
        * float(residual.std(ddof=1))
        / (math.sqrt(len(x)) * float(x.mean()))
    )
    return ratio, ratio - half, ratio + half


def median_ci(sample: Sequence[float], level: float = 0.95) -> Tuple[float, float, float]:
    """Sample median with a distribution-free order-statistic interval: (median, low, high)."""
    x = np.sort(np.asarray(sample, dtype=np.float64))
    n = len(x)
    if n == 0:
        raise ValueError("median_ci needs a nonempty sample")
    half = stats.norm.ppf(0.5 + level / 2.0) * math.sqrt(n) / 2.0
    lo = max(0, int(math.floor(n / 2.0 - half)))
    hi = min(n - 1, int(math.ceil(n / 2.0 + half)))
    return float(np.median(x)), float(x[lo]), float(x[hi])


# -- empirical distribution --------------------------------------------------


class EmpiricalCdf:
    """Right-continuous step function F(x) = #{X_i <= x} / n."""

    def __init__(self, sample: Sequence[float]):
        x = np.sort(np.asarray(sample, dtype=np.float64))
        if len(x) == 0:
            raise ValueError("empirical CDF of an empty sample")
        self.points = x
        self.n = len(x)
        at_points = self(x)
        if np.any(np.diff(at_points) < 0):
            raise AssertionError("empirical CDF is not monotone")
        # the value at each jump point includes the jump
        if np.any(at_points < np.arange(1, self.n + 1) / self.n):
            raise AssertionError("empirical CDF is not right-continuous")

    def __call__(self, x):
        values = np.searchsorted(self.points, np.asarray(x, dtype=np.float64), side="right") / self.n
        return float(values) if np.ndim(values) == 0 else values


def empirical_cdf(sample: Sequence[float]) -> EmpiricalCdf:
    return EmpiricalCdf(sample)


# -- goodness of fit ---------------------------------------------------------


def ks_statistic(sample: Sequence[float], cdf: Callable) -> float:
    """
    Sup distance between the empirical CDF of a sorted sample and cdf.

    Args:
        sample: Nonempty sample in nondecreasing order
        cdf: Vectorized reference CDF

    Returns:
        float: Kolmogorov-Smirnov statistic
    """
    x = np.asarray(sample, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("ks_statistic needs a nonempty sample")
    if np.any(np.diff(x) < 0):
        raise ValueError("ks_statistic expects a sorted sample")
    return float(stats.kstest(x, cdf).statistic)


def ks_critical_value(n: int, level: float = DEFAULT_LEVEL) -> float:
    """Upper `level` quantile of the exact one-sample KS distribution."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return float(stats.kstwo.ppf(1.0 - level, n))


def chisq_threshold(dof: int, level: float = DEFAULT_LEVEL) -> float:
    if dof < 1:
        raise ValueError(f"dof must be >= 1, got {dof}")
    return float(stats.chi2.ppf(1.0 - level, dof))


def merge_small_bins(
    observed: Sequence[float], expected: Sequence[float], min_expected: float = 5.0
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Merge adjacent bins left to right until every expected count reaches
    min_expected; a short remainder is folded into the last merged bin.
    """
    observed = np.asarray(observed, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    if observed.shape != expected.shape:
        raise ValueError("observed and expected counts differ in shape")
    merged_obs, merged_exp = [], []
    acc_obs = acc_exp = 0.0
    for o, e in zip(observed.tolist(), expected.tolist()):
        acc_obs += o
        acc_exp += e
        if acc_exp >= min_expected:
            merged_obs.append(acc_obs)
            merged_exp.append(acc_exp)
            acc_obs = acc_exp = 0.0
    if acc_exp > 0 or acc_obs > 0:
        if merged_exp:
            merged_obs[-1] += acc_obs
            merged_exp[-1] += acc_exp
        else:
            merged_obs.append(acc_obs)
            merged_exp.append(acc_exp)
    return np.array(merged_obs), np.array(merged_exp)


def equal_mass_edges(
    density: Callable[[float], float], bins: int, support: Tuple[float, float] = (0.0, math.inf)
) -> Tuple[np.ndarray, float]:
    """
    Bin edges splitting the normalized density into equal masses.

    Returns:
        tuple: (edges of length bins + 1, total mass of the density)
    """
    lo, hi = support
    total = integrate(density, lo, hi)
    if not total > 0:
        raise ValueError("density has no mass on its support")
    edges = [lo]
    left, mass_left = lo, 0.0
    for j in range(1, bins):
        target = j / bins * total
        right = left + 1.0 if math.isinf(hi) else hi
        while math.isinf(hi) and mass_left + integrate(density, left, right) < target:
            right = left + 2.0 * (right - left)
        edge = brentq(
            lambda x: mass_left + integrate(density, left, x) - target, left, right, xtol=1e-12
        )
        mass_left += integrate(density, left, edge)
        left = edge
        edges.append(edge)
    edges.append(hi)
    return np.array(edges), total


def chisq_vs_density(
    sample: Sequence[float],
    density: Callable[[float], float],
    bins: int = 40,
    support: Tuple[float, float] = (0.0, math.inf),
    min_expected: float = 5.0,
) -> Tuple[float, int]:
    """
    Pearson chi-square of a sample against a (possibly unnormalized) density.

    Args:
        sample: Observed values inside the support
        density: Scalar density on the support
        bins: Number of equal-mass bins, >= 5
        support: Interval carrying the density
        min_expected: Bins are merged until each expects at least this many

    Returns:
        tuple: (statistic, degrees of freedom)
    """
    if bins < 5:
        raise ValueError(f"bins must be >= 5, got {bins}")
    x = np.asarray(sample, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("chisq_vs_density needs a nonempty sample")
    edges, _ = equal_mass_edges(density, bins, support)
    counts = np.bincount(np.searchsorted(edges[1:-1], x, side="right"), minlength=bins)
    return chisq_vs_probabilities(counts, np.full(bins, 1.0 / bins), min_expected)


def chisq_vs_probabilities(
    counts: Sequence[float], probabilities: Sequence[float], min_expected: float = 5.0
) -> Tuple[float, int]:
    """
    Pearson chi-square of bin counts against bin probabilities.

    Probabilities are renormalized to the total count; bins are merged until
    each expects at least min_expected.

    Returns:
        tuple: (statistic, degrees of freedom)
    """
    counts = np.asarray(counts, dtype=np.float64)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if counts.shape != probabilities.shape or np.any(probabilities < 0) or probabilities.sum() <= 0:
        raise ValueError("probabilities must be nonnegative, nonzero and match the counts")
    expected = probabilities / probabilities.sum() * counts.sum()
    observed, expected = merge_small_bins(counts, expected, min_expected)
    dof = len(observed) - 1
    if dof < 1:
        raise ValueError("too few observations for a chi-square test")
    statistic = float(np.sum((observed - expected) ** 2 / expected))
    return statistic, dof


# -- tails -------------------------------------------------------------------


@dataclass(frozen=True)
class TailFit:
    """Least-squares fit log P(X > u) = log coefficient + exponent * log u."""

    coefficient: float
    exponent: float
    reliable: bool
    exceedances: int


def fit_power_law(
    u_grid: Sequence[float], survival: Sequence[float], exceedances: int = -1, min_exceedances: int = 100
) -> TailFit:
    """
    Fit a power law to survival values given on a grid.

    Args:
        u_grid: Positive thresholds
        survival: P(X > u) at each threshold
        exceedances: Observations beyond the largest threshold (-1 if exact)
        min_exceedances: Below this count the fit is flagged unreliable

    Returns:
        TailFit
    """
    u = np.asarray(u_grid, dtype=np.float64)
    s = np.asarray(survival, dtype=np.float64)
    if u.shape != s.shape or np.any(u <= 0):
        raise ValueError("u_grid must be positive and match survival in shape")
    keep = s > 0
    if keep.sum() < 2:
        return TailFit(math.nan, math.nan, False, max(exceedances, 0))
    slope, intercept = np.polyfit(np.log(u[keep]), np.log(s[keep]), 1)
    reliable = bool(keep.all()) and (exceedances < 0 or exceedances >= min_exceedances)
    return TailFit(float(math.exp(intercept)), float(slope), reliable, exceedances)


def tail_coefficient(
    sample: Sequence[float], u_grid: Sequence[float], min_exceedances: int = 100
) -> TailFit:
    """Power-law fit of the empirical survival function over u_grid."""
    x = np.sort(np.asarray(sample, dtype=np.float64))
    u = np.asarray(u_grid, dtype=np.float64)
    if len(x) == 0 or np.any(u <= 0) or np.any(u > x[-1]):
        raise ValueError("u_grid must be positive and within the sample range")
    tail_counts = len(x) - np.searchsorted(x, u, side="right")
    fit = fit_power_law(u, tail_counts / len(x), int(tail_counts[-1]), min_exceedances)
    if not fit.reliable:
        logger.warning(f"Tail fit unreliable: {int(tail_counts[-1])} exceedances at u={u[-1]}")
    return fit
