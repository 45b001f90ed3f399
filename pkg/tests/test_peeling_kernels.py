import math
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from backend.enumeration import EnumCache
from backend.peeling_kernels import (
    AliasTable,
    KernelCapacityError,
    KernelTable,
    VolumeSampler,
    cemetery_prob,
    q_inf,
    q_L,
    sample_step,
    sample_swallowed_volume,
)
from backend.replicate_pool import UniformStream
from backend.stat_checks import chisq_threshold, chisq_vs_probabilities


def test_golden_probabilities():
    assert q_inf(1, -1) == pytest.approx(math.sqrt(3.0) / 2.0, rel=1e-9)
    assert q_inf(1, 0) == pytest.approx(1.0 - math.sqrt(3.0) / 2.0, rel=1e-7)
    assert q_L(1, 1, -1) == pytest.approx(0.57735, abs=1e-5)
    assert cemetery_prob(1, 1) == pytest.approx(1.0 / (2.0 * math.sqrt(3.0)), abs=1e-7)


@pytest.mark.parametrize("k", [1, 2, 10, 100, 500])
def test_uipt_rows_are_stochastic(k):
    table = KernelTable(None, 512)
    assert math.fsum(table.row(k).tolist()) == pytest.approx(1.0, abs=1e-9)
    assert table.cemetery(k) == 0.0


@pytest.mark.parametrize("L", [1, 10, 100])
def test_finite_rows_leave_nonnegative_cemetery(L):
    table = KernelTable(L, 256)
    for k in (1, 5, 50, 200):
        total = math.fsum(table.row(k).tolist())
        assert total <= 1.0 + 1e-12
        assert total + table.cemetery(k) == pytest.approx(1.0, abs=1e-12)


def test_h_transform_matches_z2_ratio():
    cache = EnumCache()
    table = KernelTable(2, 64, cache)
    for k in (1, 3):
        for m in range(-1, k):
            ratio = 2.0 * cache.z1(m + 1) * cache.z2_series(2, k - m) / cache.z2_series(2, k)
            assert table.q(k, m) == pytest.approx(ratio, abs=1e-4)


def test_capacity_is_enforced():
    table = KernelTable(10, 20)
    with pytest.raises(KernelCapacityError):
        table.row(21)
    with pytest.raises(ValueError):
        table.q(5, 5)


def test_small_row_sampling_frequencies():
    table = KernelTable(None, 64)
    rng = np.random.default_rng(7)
    draws = np.array([table.sample(3, rng) for _ in range(20000)])
    for m in (-1, 0, 1):
        p = table.q(3, m)
        se = math.sqrt(p * (1 - p) / len(draws))
        assert abs(np.mean(draws == m) - p) < 5 * se


def test_large_row_rejection_sampling_frequencies():
    table = KernelTable(50, 256)
    stream = UniformStream(np.random.default_rng(11))
    draws = [table.sample(200, stream) for _ in range(20000)]
    for outcome, p in ((-1, table.q(200, -1)), (None, table.cemetery(200))):
        freq = sum(1 for d in draws if d == outcome) / len(draws)
        se = math.sqrt(p * (1 - p) / len(draws))
        assert abs(freq - p) < 5 * se + 1e-4


def test_envelope_dominates_row():
    table = KernelTable(None, 256)
    assert table.envelope(100) >= 1.0


def test_kernel_cache_round_trip(tmp_path):
    table = KernelTable(30, 100)
    path = tmp_path / "kernel.pkrn"
    assert table.save(str(path)) is True
    loaded = KernelTable.load(str(path))
    assert loaded.disk_boundary == 30
    assert loaded.capacity == 100
    assert np.allclose(loaded.row(80), table.row(80), rtol=1e-14)


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "bad.pkrn"
    path.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(ValueError):
        KernelTable.load(str(path))


def test_save_reports_io_failure(tmp_path):
    table = KernelTable(None, 16)
    assert table.save(str(tmp_path / "missing" / "kernel.pkrn")) is False


def test_volume_golden_values():
    sampler = VolumeSampler(k_max=2000)
    k0, cdf, tail = sampler.distribution(1)
    assert k0 == 0
    assert cdf[0] == pytest.approx(0.7698, abs=1e-4)
    assert cdf[1] - cdf[0] == pytest.approx(1.0 / 9.0, rel=1e-9)
    assert 0.0 <= tail < 1e-2


def test_volume_sampler_rejects_new_vertex_outcome():
    with pytest.raises(ValueError):
        VolumeSampler(k_max=100).distribution(-1)


def test_volume_sampling_frequency():
    sampler = VolumeSampler(k_max=2000)
    rng = np.random.default_rng(3)
    draws = np.array([sampler.sample(1, rng) for _ in range(20000)])
    se = math.sqrt(0.7698 * 0.2302 / len(draws))
    assert abs(np.mean(draws == 0) - 0.7698) < 5 * se
    assert draws.min() >= 0


def test_alias_table_frequencies():
    table = AliasTable(np.array([1.0, 2.0, 7.0]), first=-1)
    stream = UniformStream(np.random.default_rng(5))
    draws = np.array([table.sample(stream) for _ in range(30000)])
    for outcome, p in ((-1, 0.1), (0, 0.2), (1, 0.7)):
        se = math.sqrt(p * (1 - p) / len(draws))
        assert abs(np.mean(draws == outcome) - p) < 5 * se


def row_chisq(table, k, draws):
    probs = np.append(table.row(k), table.cemetery(k))
    index = [k + 1 if d is None else d + 1 for d in draws]
    counts = np.bincount(index, minlength=k + 2)
    return chisq_vs_probabilities(counts, probs)


@pytest.mark.parametrize("L, capacity, k", [(20, 64, 10), (None, 64, 40), (50, 256, 200), (None, 512, 300)])
def test_row_sampling_passes_chisq(L, capacity, k):
    table = KernelTable(L, capacity)
    stream = UniformStream(np.random.default_rng(23))
    draws = [sample_step(table, k, stream) for _ in range(20000)]
    statistic, dof = row_chisq(table, k, draws)
    assert statistic < chisq_threshold(dof, 1e-4)


def volume_bins(sampler, m):
    """Upper bin edges and probabilities: head deciles, then two tail bins."""
    k0, cdf, tail = sampler.distribution(m)
    end = k0 + len(cdf) - 1
    cuts = [k0 + int(np.searchsorted(cdf, level)) for level in np.linspace(0.1, 0.9, 9) if level < cdf[-1]]
    cuts = sorted(set(cuts + [end]))
    far = 4 * end
    middle = math.fsum(np.exp(sampler.log_pmf(m + 1, np.arange(end + 1, far + 1))).tolist())
    head = np.diff([0.0] + [float(cdf[c - k0]) for c in cuts])
    probs = np.append(head, [middle, max(tail - middle, 0.0)])
    return np.array(cuts + [far]), probs


@pytest.mark.parametrize("m", [1, 40, 300])
def test_volume_sampling_passes_chisq(m):
    sampler = VolumeSampler()
    edges, probs = volume_bins(sampler, m)
    rng = np.random.default_rng(31 + m)
    draws = np.array([sample_swallowed_volume(sampler, m, rng) for _ in range(5000)])
    counts = np.bincount(np.searchsorted(edges, draws, side="left"), minlength=len(probs))
    statistic, dof = chisq_vs_probabilities(counts, probs)
    assert statistic < chisq_threshold(dof, 1e-4)


def test_volume_tail_is_used_for_large_holes():
    sampler = VolumeSampler(k_max=4096)
    k0, cdf, tail = sampler.distribution(300)
    assert len(cdf) == 4096 + 1
    assert tail > 0.5
    rng = np.random.default_rng(8)
    draws = np.array([sampler.sample(300, rng) for _ in range(3000)])
    beyond = np.mean(draws > 4096)
    se = math.sqrt(tail * (1 - tail) / len(draws))
    assert abs(beyond - tail) < 5 * se
    k0_full, cdf_full, _ = VolumeSampler().distribution(300)
    exact_median = k0_full + int(np.searchsorted(cdf_full, 0.5))
    assert np.median(draws) == pytest.approx(exact_median, rel=0.1)


@pytest.mark.parametrize("n", [1, 2, 5, 30])
def test_volume_tail_constant_matches_exact_law(n):
    sampler = VolumeSampler()
    k = np.array([10**7, 10**8])
    scaled = sampler.log_pmf(n, k) + 2.5 * np.log(k)
    assert scaled[-1] == pytest.approx(sampler.log_tail_constant(n), abs=1e-3)


def test_volume_head_scales_with_boundary():
    sampler = VolumeSampler(k_max=1 << 20)
    assert sampler.head_end(0) == 1024
    assert sampler.head_end(99) == 40000
    assert sampler.head_end(10**4) == 1 << 20
