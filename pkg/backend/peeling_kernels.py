"""
Peeling Kernels Backend Module

Transition laws of the perimeter chain of the peeling exploration, both in the
UIPT limit (q_inf) and for a Boltzmann disk with boundary L (q_L, the Doob
h-transform of q_inf by h_L(j) = L / (L + j)), plus the law of the volume
swallowed when the exploration closes a hole.

An outcome m in {-1, ..., k-1} moves the perimeter from k to k - m; the
cemetery outcome is returned as None.
"""

from __future__ import annotations

import bisect
import math
import struct
from collections import OrderedDict
from functools import lru_cache
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from .enumeration import (
    LOG2,
    LOG_BOLTZMANN_WEIGHT,
    EnumCache,
    default_cache,
    log_card_t1_terms,
    log_central_binomial,
)
from .replicate_pool import UniformStream, as_stream

try:
    from loguru import logger
except ImportError:
    import logging

    logger = logging.getLogger(__name__)


LOG12 = math.log(12.0)
CUMULATIVE_ROW_LIMIT = 64
CACHE_MAGIC = b"PKRN"
CACHE_VERSION = 1

# volume rows: exact head up to HEAD_FACTOR n^2, capped by k_max
HEAD_FACTOR = 4
HEAD_FLOOR = 1024
EXACT_PMF_LIMIT = 10**9
ENVELOPE_GRID = 64


class KernelCapacityError(RuntimeError):
    """Raised when a perimeter exceeds the capacity a kernel table was built for."""


class AliasTable:
    """
    Walker/Vose alias table for O(1) draws from a fixed discrete law.

    Outcomes are offset so that index 0 maps to `first`.
    """

    def __init__(self, weights: np.ndarray, first: int = 0):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 1 or len(weights) == 0 or np.any(weights < 0):
            raise ValueError("alias weights must be a non-empty nonnegative vector")
        n = len(weights)
        scaled = weights * (n / weights.sum())
        prob = [0.0] * n
        alias = list(range(n))
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        scaled = scaled.tolist()
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = scaled[g] + scaled[s] - 1.0
            if scaled[g] < 1.0:
                small.append(g)
            else:
                large.append(g)
        for i in large + small:
            prob[i] = 1.0
        self.first = first
        self.size = n
        self._prob = prob
        self._alias = alias

    def sample(self, stream: UniformStream) -> int:
        i = int(stream.uniform() * self.size)
        if stream.uniform() >= self._prob[i]:
            i = self._alias[i]
        return i + self.first


class KernelTable:
    """
    Peeling transition law for one regime.

    This class is responsible for:
    - Exact probabilities of q_inf (disk_boundary=None) or q_L rows
    - Cemetery masses of the finite-L regime
    - Fast exact sampling: cumulative search on small rows, a shared alias
      table over the limiting step law with a rejection step on large rows
    - Saving and loading the log tables that determine every row
    """

    def __init__(
        self,
        disk_boundary: Optional[int],
        capacity: int,
        enum: Optional[EnumCache] = None,
    ):
        """
        Build the table.

        Args:
            disk_boundary: Boundary length L of the Boltzmann disk, None for the UIPT
            capacity: Largest perimeter whose row may be requested
            enum: Enumeration cache (the shared default when omitted)
        """
        if disk_boundary is not None and (int(disk_boundary) != disk_boundary or disk_boundary < 1):
            raise ValueError(f"disk_boundary must be a positive integer or None, got {disk_boundary}")
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.disk_boundary = None if disk_boundary is None else int(disk_boundary)
        self.capacity = int(capacity)
        enum = enum or default_cache()
        self._log_z1 = np.array(enum.log_z1_table(self.capacity))
        self._log_c1 = np.array(enum.log_c1_table(self.capacity + 1))
        self._finish_init()

    def _finish_init(self) -> None:
        self._log_c1_list: List[float] = self._log_c1.tolist()
        self._cumulative: Dict[int, List[float]] = {}
        self._bounds: Dict[int, Tuple[float, float]] = {}
        # limiting step law nu(m) = 2 Z1(m+1) 12^(-m), m = -1..capacity-1
        m = np.arange(-1, self.capacity)
        self._log_nu = math.log(2.0) + self._log_z1[m + 1] - m * LOG12
        self._proposal = AliasTable(np.exp(self._log_nu - self._log_nu.max()), first=-1)
        self._log_nu_total = math.log(np.exp(self._log_nu).sum())
        self._log_nu_norm = self._log_nu - self._log_nu_total
        logger.info(f"KernelTable built: regime={self.regime}, capacity={self.capacity}")

    @property
    def regime(self) -> str:
        return "uipt" if self.disk_boundary is None else f"L={self.disk_boundary}"

    # -- exact probabilities ----------------------------------------------

    def _check_row(self, k: int) -> None:
        if k < 1:
            raise ValueError(f"perimeter must be >= 1, got {k}")
        if k > self.capacity:
            raise KernelCapacityError(
                f"perimeter {k} exceeds kernel capacity {self.capacity} ({self.regime})"
            )

    def log_q_inf_row(self, k: int) -> np.ndarray:
        """Log q_inf(k, k - m) for m = -1..k-1."""
        self._check_row(k)
        m = np.arange(-1, k)
        return math.log(2.0) + self._log_z1[m + 1] + self._log_c1[k - m] - self._log_c1[k]

    def row(self, k: int) -> np.ndarray:
        """
        Transition probabilities out of perimeter k.

        Args:
            k: Current perimeter

        Returns:
            np.ndarray: probabilities for m = -1..k-1 (the cemetery mass is
            1 minus their sum in the finite regime)
        """
        probs = np.exp(self.log_q_inf_row(k))
        if self.disk_boundary is not None:
            L = self.disk_boundary
            m = np.arange(-1, k)
            probs = probs * (L + k) / (L + k - m)
        return probs

    def q(self, k: int, m: int) -> float:
        if not -1 <= m <= k - 1:
            raise ValueError(f"outcome m must lie in [-1, {k - 1}], got {m}")
        return float(self.row(k)[m + 1])

    def cemetery(self, k: int) -> float:
        return self._row_bounds(k)[0]

    def envelope(self, k: int) -> float:
        """Max over the row of q(k, k - m) / nu_normalized(m)."""
        return self._row_bounds(k)[1]

    def _row_bounds(self, k: int) -> Tuple[float, float]:
        bounds = self._bounds.get(k)
        if bounds is None:
            probs = self.row(k)
            cemetery = 0.0
            if self.disk_boundary is not None:
                cemetery = min(1.0, max(0.0, 1.0 - math.fsum(probs.tolist())))
            ratio = np.log(probs) - self._log_nu_norm[: k + 1]
            bounds = (cemetery, float(np.exp(ratio.max())) * (1.0 + 1e-12))
            self._bounds[k] = bounds
        return bounds

    # -- sampling ---------------------------------------------------------

    def sample(self, k: int, rng) -> Optional[int]:
        """
        Draw one outcome from row k.

        Args:
            k: Current perimeter
            rng: numpy Generator or UniformStream

        Returns:
            Optional[int]: m in [-1, k-1], or None for the cemetery
        """
        stream = as_stream(rng)
        self._check_row(k)
        if k <= CUMULATIVE_ROW_LIMIT:
            cumulative = self._cumulative.get(k)
            if cumulative is None:
                cumulative = self._build_cumulative(k)
            i = bisect.bisect_right(cumulative, stream.uniform())
            return None if i > k else i - 1

        cemetery, envelope = self._row_bounds(k)
        if cemetery > 0.0 and stream.uniform() < cemetery:
            return None
        L = self.disk_boundary
        log_c1 = self._log_c1_list
        offset = self._log_nu_total - log_c1[k]
        while True:
            m = self._proposal.sample(stream)
            if m >= k:
                continue
            # q_inf / nu_norm; the 2 Z1(m+1) factor cancels
            ratio = math.exp(log_c1[k - m] + m * LOG12 + offset)
            if L is not None:
                ratio *= (L + k) / (L + k - m)
            if stream.uniform() * envelope < ratio:
                return m

    def _build_cumulative(self, k: int) -> List[float]:
        probs = self.row(k)
        cumulative = np.cumsum(probs).tolist()
        if self.disk_boundary is None:
            cumulative[-1] = 1.0
        else:
            cumulative.append(1.0)
        self._cumulative[k] = cumulative
        return cumulative

    # -- disk cache -------------------------------------------------------

    def save(self, path: str) -> bool:
        """
        Write the log tables behind every row to a binary cache file.

        Returns:
            bool: True if written, False on I/O failure
        """
        header = struct.pack(
            "<4sIqq", CACHE_MAGIC, CACHE_VERSION, self.disk_boundary or 0, self.capacity
        )
        try:
            with open(path, "wb") as f:
                f.write(header)
                f.write(self._log_z1.astype("<f8").tobytes())
                f.write(self._log_c1.astype("<f8").tobytes())
            logger.info(f"Kernel cache written to {path}")
            return True
        except (IOError, OSError) as e:
            logger.error(f"Error writing kernel cache {path}: {e}")
            return False

    @classmethod
    def load(cls, path: str) -> "KernelTable":
        """Rebuild a table from a cache file written by save()."""
        with open(path, "rb") as f:
            data = f.read()
        size = struct.calcsize("<4sIqq")
        magic, version, boundary, capacity = struct.unpack("<4sIqq", data[:size])
        if magic != CACHE_MAGIC or version != CACHE_VERSION:
            raise ValueError(f"{path} is not a version {CACHE_VERSION} kernel cache")
        body = np.frombuffer(data[size:], dtype="<f8")
        if len(body) != (capacity + 1) + (capacity + 2):
            raise ValueError(f"{path} is truncated")
        table = cls.__new__(cls)
        table.disk_boundary = int(boundary) or None
        table.capacity = int(capacity)
        table._log_z1 = body[: capacity + 1].astype(np.float64)
        table._log_c1 = body[capacity + 1 :].astype(np.float64)
        table._finish_init()
        return table


class _VolumeRow(NamedTuple):
    k0: int
    cdf: np.ndarray
    tail: float
    log_tail_constant: float
    log_bound: float


class VolumeSampler:
    """
    Internal-vertex count of the Boltzmann triangulation filling a swallowed hole.

    K scales like n^2 for a hole of boundary n = m + 1, with P(K = k) ~ A_n k^(-5/2).

    This class is responsible for:
    - Exact CDFs of K over the head k <= min(k_max, 4 n^2), built on demand
    - Exact rejection sampling beyond the head from a discrete Pareto(3/2)
      proposal dominating the k^(-5/2) tail
    - Keeping at most `cache_rows` rows in memory
    """

    def __init__(self, enum: Optional[EnumCache] = None, k_max: int = 1 << 20, cache_rows: int = 16):
        """
        Initialize the sampler.

        Args:
            enum: Enumeration cache (the shared default when omitted)
            k_max: Largest head length of one row
            cache_rows: Rows kept in memory
        """
        if k_max < 16:
            raise ValueError(f"k_max must be >= 16, got {k_max}")
        self.enum = enum or default_cache()
        self.k_max = int(k_max)
        self.cache_rows = cache_rows
        self._rows: "OrderedDict[int, _VolumeRow]" = OrderedDict()

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_rows"] = OrderedDict()
        return state

    def log_pmf(self, n: int, k) -> np.ndarray:
        """Log P(K = k) for a hole of boundary n, exact for k <= 10^9."""
        return log_card_t1_terms(n, k) - np.asarray(k, dtype=np.float64) * LOG_BOLTZMANN_WEIGHT - self.enum.log_z1(n)

    def log_tail_constant(self, n: int) -> float:
        """Log of A_n = lim k^(5/2) P(K = k) for a hole of boundary n."""
        if n < 1:
            raise ValueError(f"hole boundary must be >= 1, got {n}")
        return (
            (n - 2) * math.log(1.5)
            + (n - 4) * LOG2
            - 0.5 * math.log(2.0 * math.pi)
            + math.log(n)
            + float(log_central_binomial(n))
            - self.enum.log_z1(n)
        )

    def head_end(self, m: int) -> int:
        n = m + 1
        return int(min(self.k_max, max(HEAD_FLOOR, HEAD_FACTOR * n * n)))

    def distribution(self, m: int) -> Tuple[int, np.ndarray, float]:
        """
        Head of the law of K for a hole of boundary m + 1.

        Returns:
            tuple: (first k, cumulative masses up to head_end(m), tail mass beyond)
        """
        row = self._row(m)
        return row.k0, row.cdf, row.tail

    def _row(self, m: int) -> _VolumeRow:
        if m < 0:
            raise ValueError(f"swallowed boundary needs m >= 0, got {m}")
        row = self._rows.get(m)
        if row is not None:
            self._rows.move_to_end(m)
            return row
        n = m + 1
        k0 = 1 if n == 1 else 0
        k_end = self.head_end(m)
        cdf = np.cumsum(np.exp(self.log_pmf(n, np.arange(k0, k_end + 1))))
        tail = max(0.0, 1.0 - float(cdf[-1]))
        log_a = self.log_tail_constant(n)
        # k^(5/2) P(K = k) increases towards A_n; the grid guards the bound
        grid = np.unique(np.geomspace(k_end + 1, EXACT_PMF_LIMIT, ENVELOPE_GRID).astype(np.int64))
        log_s = self.log_pmf(n, grid) + 2.5 * np.log(grid)
        row = _VolumeRow(k0, cdf, tail, log_a, max(log_a, float(log_s.max())) + 1e-9)
        self._rows[m] = row
        if len(self._rows) > self.cache_rows:
            self._rows.popitem(last=False)
        logger.debug(f"Volume row n={n}: head up to {k_end}, tail mass {tail:.3g}")
        return row

    def sample(self, m: int, rng) -> int:
        stream = as_stream(rng)
        row = self._row(m)
        u = stream.uniform()
        if u < float(row.cdf[-1]) or row.tail == 0.0:
            return row.k0 + min(int(np.searchsorted(row.cdf, u, side="right")), len(row.cdf) - 1)
        return self._sample_tail(m + 1, row, stream)

    def _sample_tail(self, n: int, row: _VolumeRow, stream: UniformStream) -> int:
        a = row.k0 + len(row.cdf)
        # pi(k) >= 1.5 a^1.5 (k+1)^-2.5 and (k+1)^2.5 P(K = k) <= bound (1 + 1/a)^2.5
        log_scale = row.log_bound + 2.5 * math.log1p(1.0 / a) - math.log(1.5) - 1.5 * math.log(a)
        while True:
            v = 1.0 - stream.uniform()
            k = int(math.floor(a * v ** (-2.0 / 3.0)))
            if k <= EXACT_PMF_LIMIT:
                log_p = float(self.log_pmf(n, np.array([k]))[0])
            else:
                log_p = row.log_tail_constant - 2.5 * math.log(k)
            log_pi = 1.5 * (math.log(a) - math.log(k)) + math.log(-math.expm1(-1.5 * math.log1p(1.0 / k)))
            if stream.uniform() < math.exp(log_p - log_scale - log_pi):
                return k


@lru_cache(maxsize=16)
def _shared_table(disk_boundary: Optional[int], capacity: int) -> KernelTable:
    return KernelTable(disk_boundary, capacity)


def _table_for(disk_boundary: Optional[int], k: int) -> KernelTable:
    capacity = 1 << max(6, (k + 1).bit_length())
    return _shared_table(disk_boundary, capacity)


def q_inf(k: int, m: int) -> float:
    """UIPT transition probability q_inf(k, k - m)."""
    return _table_for(None, k).q(k, m)


def q_L(L: int, k: int, m: int) -> float:
    """Boltzmann-disk transition probability q_L(k, k - m)."""
    return _table_for(L, k).q(k, m)


def cemetery_prob(L: int, k: int) -> float:
    """q_L(k, cemetery)."""
    return _table_for(L, k).cemetery(k)


def sample_step(table: KernelTable, k: int, rng) -> Optional[int]:
    """One outcome m from row k of the table, None for the cemetery."""
    return table.sample(k, rng)


def sample_swallowed_volume(vols: VolumeSampler, m: int, rng) -> int:
    """Internal vertices of the hole of boundary m + 1 closed by a swallow."""
    return vols.sample(m, rng)
