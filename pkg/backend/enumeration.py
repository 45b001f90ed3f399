"""
Triangulation Enumeration Module

Log-scale counts of type-I triangulations with one or two boundaries and the
Boltzmann partition functions built from them. Everything is computed with
log-gamma, so counts far beyond 64-bit integers stay finite.
"""

from __future__ import annotations

import math
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.special import gammaln

# Enhanced imports with fallbacks
try:
    from loguru import logger
except ImportError:
    import logging

    logger = logging.getLogger(__name__)


LOG2 = math.log(2.0)
BOLTZMANN_WEIGHT = 12.0 * math.sqrt(3.0)
LOG_BOLTZMANN_WEIGHT = math.log(BOLTZMANN_WEIGHT)
Z1_AT_ZERO = 1.0 / (24.0 * math.sqrt(3.0))
DEFAULT_MAX_K = 1 << 18

# term(k) ~ c * k^(-decay)
T1_DECAY = 2.5
T2_DECAY = 1.5


class SeriesConvergenceError(RuntimeError):
    """Raised when a partition-function series cannot reach its tolerance."""


def _scalar_or_array(values: np.ndarray):
    return float(values) if values.ndim == 0 else values


def log_double_factorial(n):
    """
    Natural log of n!! for n >= -1, vectorized over integer arrays.

    Even and odd arguments are split by parity:
    (2j)!! = 2^j j! and (2j-1)!! = (2j)! / (2^j j!), with (-1)!! = 1.

    Args:
        n: Integer or integer array, every entry >= -1

    Returns:
        float or np.ndarray: log(n!!)
    """
    n = np.asarray(n, dtype=np.int64)
    if np.any(n < -1):
        raise ValueError(f"double factorial needs n >= -1, got min {int(n.min())}")
    nf = n.astype(np.float64)
    even = nf / 2.0 * LOG2 + gammaln(nf / 2.0 + 1.0)
    odd = gammaln(nf + 2.0) - (nf + 1.0) / 2.0 * LOG2 - gammaln((nf + 1.0) / 2.0 + 1.0)
    return _scalar_or_array(np.where(n % 2 == 0, even, odd))


def log_central_binomial(n):
    """Natural log of binom(2n, n), vectorized."""
    nf = np.asarray(n, dtype=np.float64)
    return _scalar_or_array(gammaln(2.0 * nf + 1.0) - 2.0 * gammaln(nf + 1.0))


def _check_int(name: str, value, minimum: int) -> int:
    if int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value}")
    return int(value)


def log_card_t1_terms(L: int, k) -> np.ndarray:
    """
    Vectorized log Card T1(L, k) over an array of internal-vertex counts.

    Args:
        L: Boundary length, L >= 1
        k: Integer array of internal-vertex counts (k >= 1 when L == 1)

    Returns:
        np.ndarray: log counts
    """
    k = np.asarray(k, dtype=np.int64)
    kf = k.astype(np.float64)
    return (
        (kf - 1.0) * 2.0 * LOG2
        + log_double_factorial(2 * L + 3 * k - 5)
        - gammaln(kf + 1.0)
        - log_double_factorial(2 * L + k - 1)
        + math.log(L)
        + log_central_binomial(L)
    )


def log_card_t2_terms(L: int, p: int, k) -> np.ndarray:
    """Vectorized log Card T2(L, p, k) over an array of internal-vertex counts."""
    k = np.asarray(k, dtype=np.int64)
    kf = k.astype(np.float64)
    s = L + p
    return (
        kf * 2.0 * LOG2
        + log_double_factorial(2 * s + 3 * k - 2)
        - gammaln(kf + 1.0)
        - log_double_factorial(2 * s + k)
        + math.log(L)
        + log_central_binomial(L)
        + math.log(p)
        + log_central_binomial(p)
    )


class EnumCache:
    """
    Memoized enumeration values shared by the kernels and the laws.

    This class is responsible for:
    - Exact log counts of triangulations with one and two boundaries
    - The partition functions Z1 (closed form and series) and Z2 (series)
    - The normalising constants C1(k) of the UIPT kernel
    - Cached log tables of Z1 and C1 used to build kernel rows
    """

    def __init__(self, max_k: int = DEFAULT_MAX_K):
        """
        Initialize the cache.

        Args:
            max_k: Largest number of series terms summed before giving up
        """
        if max_k < 1024:
            raise ValueError(f"max_k must be >= 1024, got {max_k}")
        self.max_k = max_k
        self._series: Dict[Tuple, float] = {}
        self._log_z1_table = np.empty(0)
        self._log_c1_table = np.empty(0)

    # -- counts -----------------------------------------------------------

    def log_card_t1(self, L: int, k: int) -> float:
        """
        Log of Card T1(L, k), triangulations with a simple boundary of length L
        and k internal vertices.

        Args:
            L: Boundary length, L >= 1
            k: Internal vertices, k >= 0, (L, k) != (1, 0)

        Returns:
            float: natural log of the count
        """
        L = _check_int("L", L, 1)
        k = _check_int("k", k, 0)
        if (L, k) == (1, 0):
            raise ValueError("Card T1(1, 0) is not covered by the enumeration formula")
        return float(log_card_t1_terms(L, k))

    def log_card_t2(self, L: int, p: int, k: int) -> float:
        """Log of Card T2(L, p, k), triangulations with two boundaries."""
        L = _check_int("L", L, 1)
        p = _check_int("p", p, 1)
        k = _check_int("k", k, 0)
        return float(log_card_t2_terms(L, p, k))

    # -- partition functions ----------------------------------------------

    def z1(self, L: int) -> float:
        """
        Boltzmann partition function Z1(L).

        L = 0 is the convention 1/(24 sqrt 3); L = 1 is summed as a series
        because the closed form would need (-3)!!; L >= 2 uses the closed form.
        """
        return math.exp(self.log_z1(L))

    def log_z1(self, L: int) -> float:
        L = _check_int("L", L, 0)
        if L == 0:
            return math.log(Z1_AT_ZERO)
        if L == 1:
            return math.log(self.z1_series(1, 1e-11))
        return float(self._log_z1_closed(np.asarray(L)))

    @staticmethod
    def _log_z1_closed(L: np.ndarray) -> np.ndarray:
        Lf = L.astype(np.float64)
        return (
            Lf * math.log(6.0)
            + log_double_factorial(2 * L - 5)
            - math.log(8.0 * math.sqrt(3.0))
            - gammaln(Lf + 1.0)
        )

    def z1_series(self, L: int, rel_tol: float = 1e-6) -> float:
        """
        Z1(L) as the weighted sum of Card T1(L, k), with a fitted tail.

        Args:
            L: Boundary length, L >= 0
            rel_tol: Target relative error

        Returns:
            float: series value
        """
        L = _check_int("L", L, 0)
        if L == 0:
            return Z1_AT_ZERO
        key = ("z1", L, rel_tol)
        if key not in self._series:
            k_start = 1 if L == 1 else 0
            self._series[key] = self._sum_series(
                lambda k: log_card_t1_terms(L, k) - k * LOG_BOLTZMANN_WEIGHT,
                T1_DECAY,
                rel_tol,
                k_start,
                f"Z1({L})",
            )
        return self._series[key]

    def z2_series(self, L: int, p: int, rel_tol: float = 1e-6) -> float:
        """Z2(L, p) as the weighted sum of Card T2(L, p, k), with a fitted tail."""
        L = _check_int("L", L, 1)
        p = _check_int("p", p, 1)
        key = ("z2", L, p, rel_tol)
        if key not in self._series:
            self._series[key] = self._sum_series(
                lambda k: log_card_t2_terms(L, p, k) - k * LOG_BOLTZMANN_WEIGHT,
                T2_DECAY,
                rel_tol,
                0,
                f"Z2({L},{p})",
            )
        return self._series[key]

    def _sum_series(
        self,
        log_term: Callable[[np.ndarray], np.ndarray],
        decay: float,
        rel_tol: float,
        k_start: int,
        label: str,
    ) -> float:
        if rel_tol <= 0:
            raise ValueError(f"rel_tol must be positive, got {rel_tol}")
        k_max = 1024
        previous: Optional[float] = None
        while True:
            k = np.arange(k_start, k_max + 1)
            terms = np.exp(log_term(k))
            estimate = math.fsum(terms) + _fitted_tail(terms, k_start, k_max, decay)
            if previous is not None and abs(estimate - previous) <= rel_tol * estimate:
                logger.debug(f"{label} converged with {k_max} terms: {estimate:.12g}")
                return estimate
            if k_max >= self.max_k:
                raise SeriesConvergenceError(
                    f"{label} did not reach rel_tol={rel_tol} within max_k={self.max_k}"
                )
            previous = estimate
            k_max = min(2 * k_max, self.max_k)

    # -- UIPT constants ---------------------------------------------------

    def log_c1(self, k: int) -> float:
        """Log of C1(k) = 3^(k-2) / (4 sqrt(2 pi)) * k * binom(2k, k)."""
        k = _check_int("k", k, 1)
        return float(self._log_c1_closed(np.asarray(k)))

    @staticmethod
    def _log_c1_closed(k: np.ndarray) -> np.ndarray:
        kf = k.astype(np.float64)
        return (
            (kf - 2.0) * math.log(3.0)
            - math.log(4.0 * math.sqrt(2.0 * math.pi))
            + np.log(kf)
            + log_central_binomial(k)
        )

    def log_z1_table(self, n_max: int) -> np.ndarray:
        """
        Cached array of log Z1(n) for n = 0..n_max.

        Returns:
            np.ndarray: read-only view of length n_max + 1
        """
        if len(self._log_z1_table) <= n_max:
            size = max(n_max + 1, 2 * len(self._log_z1_table))
            table = np.empty(size)
            table[0] = math.log(Z1_AT_ZERO)
            if size > 1:
                table[1] = self.log_z1(1)
            if size > 2:
                table[2:] = self._log_z1_closed(np.arange(2, size))
            table.flags.writeable = False
            self._log_z1_table = table
        return self._log_z1_table[: n_max + 1]

    def log_c1_table(self, n_max: int) -> np.ndarray:
        """Cached array of log C1(k) for k = 0..n_max, with index 0 set to -inf."""
        if len(self._log_c1_table) <= n_max:
            size = max(n_max + 1, 2 * len(self._log_c1_table))
            table = np.empty(size)
            table[0] = -math.inf
            table[1:] = self._log_c1_closed(np.arange(1, size))
            table.flags.writeable = False
            self._log_c1_table = table
        return self._log_c1_table[: n_max + 1]


def _fitted_tail(terms: np.ndarray, k_start: int, k_max: int, decay: float) -> float:
    """Integral of c k^-decay (1 + d/k) beyond k_max, fitted at k_max and k_max/2."""
    half = k_max // 2
    t1 = terms[k_max - k_start] * k_max**decay
    t2 = terms[half - k_start] * half**decay
    c = 2.0 * t1 - t2
    cd = k_max * (t2 - t1)
    x = k_max + 0.5
    return c * x ** (1.0 - decay) / (decay - 1.0) + cd * x ** (-decay) / decay


_DEFAULT_CACHE: Optional[EnumCache] = None


def default_cache() -> EnumCache:
    """Process-wide shared cache."""
    global _DEFAULT_CACHE
    if _DEFAULT_CACHE is None:
        _DEFAULT_CACHE = EnumCache()
    return _DEFAULT_CACHE


def log_card_t1(L: int, k: int) -> float:
    return default_cache().log_card_t1(L, k)


def log_card_t2(L: int, p: int, k: int) -> float:
    return default_cache().log_card_t2(L, p, k)


def z1(L: int) -> float:
    return default_cache().z1(L)


def z1_series(L: int, rel_tol: float = 1e-6) -> float:
    return default_cache().z1_series(L, rel_tol)


def z2_series(L: int, p: int, rel_tol: float = 1e-6) -> float:
    return default_cache().z2_series(L, p, rel_tol)


def log_c1(k: int) -> float:
    return default_cache().log_c1(k)
