import math
import os
import sys

import pytest

sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from backend.enumeration import (
    EnumCache,
    SeriesConvergenceError,
    Z1_AT_ZERO,
    log_card_t1,
    log_card_t2,
    log_central_binomial,
    log_double_factorial,
    z1,
)


def z1_closed(L):
    return 6**L * math.exp(log_double_factorial(2 * L - 5)) / (8 * math.sqrt(3) * math.factorial(L))


def test_double_factorial_values():
    assert log_double_factorial(-1) == pytest.approx(0.0, abs=1e-12)
    assert math.exp(log_double_factorial(5)) == pytest.approx(15.0)
    assert math.exp(log_double_factorial(6)) == pytest.approx(48.0)
    assert math.exp(log_central_binomial(3)) == pytest.approx(20.0)


def test_double_factorial_rejects_small_argument():
    with pytest.raises(ValueError):
        log_double_factorial(-3)


def test_small_counts():
    # a single triangle, and the degenerate two-gon
    assert math.exp(log_card_t1(3, 0)) == pytest.approx(1.0)
    assert math.exp(log_card_t1(2, 0)) == pytest.approx(1.0)
    assert math.exp(log_card_t1(2, 1)) == pytest.approx(3.0)


def test_card_t1_excludes_empty_loop():
    with pytest.raises(ValueError):
        log_card_t1(1, 0)


def test_z1_closed_form_values():
    assert z1(0) == pytest.approx(Z1_AT_ZERO)
    assert z1(2) == pytest.approx(36.0 / (16.0 * math.sqrt(3.0)))
    assert z1(1) == pytest.approx((2.0 - math.sqrt(3.0)) / 4.0, rel=1e-7)


@pytest.mark.parametrize("L", [2, 3, 5, 10, 20])
def test_z1_series_matches_closed_form(L):
    cache = EnumCache()
    assert cache.z1_series(L, 1e-6) == pytest.approx(z1_closed(L), rel=1e-6)


def test_z1_table_matches_scalar_values():
    cache = EnumCache()
    table = cache.log_z1_table(12)
    assert len(table) == 13
    for L in (0, 1, 2, 7, 12):
        assert table[L] == pytest.approx(cache.log_z1(L))


def test_c1_table_has_no_mass_at_zero():
    table = EnumCache().log_c1_table(8)
    assert table[0] == -math.inf
    assert table[3] == pytest.approx(EnumCache().log_c1(3))


def test_cache_rejects_tiny_max_k():
    with pytest.raises(ValueError):
        EnumCache(max_k=100)


def test_series_convergence_error_when_budget_is_too_small():
    cache = EnumCache(max_k=1024)
    with pytest.raises(SeriesConvergenceError):
        cache.z2_series(5, 3, rel_tol=1e-12)


def test_z2_series_is_positive_and_cached():
    cache = EnumCache()
    first = cache.z2_series(2, 2)
    assert first > 0
    assert cache.z2_series(2, 2) == first


@pytest.mark.parametrize(
    "L, p, k, count",
    [(1, 1, 0, 1), (1, 1, 1, 16), (1, 1, 2, 256), (2, 1, 1, 96)],
)
def test_two_boundary_counts(L, p, k, count):
    assert math.exp(log_card_t2(L, p, k)) == pytest.approx(count, rel=1e-9)


@pytest.mark.parametrize("L, p", [(1, 1), (2, 3), (4, 2), (6, 5)])
def test_two_boundary_count_without_inner_vertices(L, p):
    s = L + p
    expected = (
        log_double_factorial(2 * s - 2)
        - log_double_factorial(2 * s)
        + math.log(L * math.comb(2 * L, L))
        + math.log(p * math.comb(2 * p, p))
    )
    assert log_card_t2(L, p, 0) == pytest.approx(expected, abs=1e-10)


def test_two_boundary_counts_are_integers():
    for L in range(1, 5):
        for p in range(1, 5):
            for k in range(0, 6):
                value = math.exp(log_card_t2(L, p, k))
                assert value == pytest.approx(round(value), rel=1e-6)
                assert round(value) >= 1


def test_two_boundary_count_rejects_empty_boundary():
    with pytest.raises(ValueError):
        log_card_t2(1, 0, 1)
