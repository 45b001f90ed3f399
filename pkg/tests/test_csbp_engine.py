import math
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from backend.annulus_laws import expected_length_from, extinction_cdf, levy_never_hits
from backend.csbp_engine import (
    CsbpPath,
    CsbpTask,
    StableSampler,
    TailTask,
    damped_identity,
    empirical_log_laplace,
    initial_perimeter_quantile,
    last_passage,
    length_given_horizon,
    length_survival_weights,
    occupation_integral,
    perimeter_at_radius,
    psi,
    sample_csbp_marginal,
    sample_extinction_time,
    sample_initial_perimeter,
    sample_stable_increment,
    simulate_csbp,
    simulate_levy_exit,
    value_at,
    visits_level,
)
from backend.stat_checks import ks_critical_value, ks_statistic


def hand_path():
    return CsbpPath(
        dt=0.1,
        values=np.array([0.5, 1.5, 2.0, 0.5, 0.0]),
        extinction_time=0.4,
        running_max=2.0,
        z0=0.5,
    )


def test_branching_mechanism():
    assert psi(1.0) == pytest.approx(math.sqrt(8.0 / 3.0))
    assert psi(4.0) == pytest.approx(8.0 * math.sqrt(8.0 / 3.0))
    with pytest.raises(ValueError):
        psi(-1.0)


def test_stable_sampler_constants():
    sampler = StableSampler()
    assert sampler.unit_scale == pytest.approx((2.0 / math.sqrt(3.0)) ** (2.0 / 3.0))
    assert sampler.scale(8.0) == pytest.approx(sampler.unit_scale * 4.0)
    with pytest.raises(ValueError):
        StableSampler(alpha=2.5)


def test_stable_increments_match_laplace_exponent():
    rng = np.random.default_rng(17)
    for lam in (0.5, 1.0):
        observed = empirical_log_laplace(1.0, lam, rng, 1_000_000)
        assert observed == pytest.approx(psi(lam), rel=0.02)


def test_stable_increment_helper_matches_sampler():
    single = sample_stable_increment(0.5, np.random.default_rng(3))
    assert isinstance(single, float)
    draws = sample_stable_increment(0.5, np.random.default_rng(3), 1000)
    assert draws.shape == (1000,)
    assert np.array_equal(draws, StableSampler().increment(0.5, np.random.default_rng(3), 1000))
    # exact scaling: increments over dt are dt^(2/3) times unit increments
    unit = sample_stable_increment(1.0, np.random.default_rng(3), 1000)
    assert np.allclose(sample_stable_increment(8.0, np.random.default_rng(3), 1000), 4.0 * unit)


def test_initial_law_quantile():
    assert initial_perimeter_quantile(1.0, 0.0) == 0.0
    # F(z) = 1 - (a/(a+z))^(3/2)
    z = initial_perimeter_quantile(2.0, 0.5)
    assert 1.0 - (2.0 / (2.0 + z)) ** 1.5 == pytest.approx(0.5)
    draws = sample_initial_perimeter(1.0, np.random.default_rng(1), 1000)
    assert draws.shape == (1000,) and np.all(draws >= 0)


def test_exact_extinction_sampler_passes_ks():
    times = np.sort(sample_extinction_time(1.0, np.random.default_rng(8), 5000))
    statistic = ks_statistic(times, lambda t: extinction_cdf(1.0, t))
    assert statistic < ks_critical_value(5000)


def test_marginal_extinction_mass():
    draws = sample_csbp_marginal(1.0, 1.0, np.random.default_rng(21), 20000)
    p = math.exp(-1.5)
    se = math.sqrt(p * (1 - p) / len(draws))
    assert abs(np.mean(draws == 0.0) - p) < 5 * se
    assert np.all(draws >= 0)


def test_marginal_survivors_are_positive():
    draws = sample_csbp_marginal(np.array([0.1, 1.0, 5.0]), 2.0, np.random.default_rng(3), survivors_only=True)
    assert draws.shape == (3,)
    assert np.all(draws > 0)


def test_marginal_rejects_size_mismatch():
    with pytest.raises(ValueError):
        sample_csbp_marginal(np.array([1.0, 2.0]), 1.0, np.random.default_rng(0), size=3)


def test_length_survival_weights_are_probabilities():
    z0 = np.array([0.0, 0.5, 1.0, 10.0])
    weights = length_survival_weights(z0, 1.0, 2.0, np.random.default_rng(6))
    assert weights[0] == 0.0
    assert np.all((weights >= 0) & (weights <= 1))


def test_path_functionals_on_hand_built_path():
    path = hand_path()
    assert visits_level(path, 1.0)
    assert not visits_level(path, 3.0)
    assert last_passage(path, 1.0) == pytest.approx((2 + 1.0 / 1.5) * 0.1)
    assert last_passage(path, 3.0) is None
    assert perimeter_at_radius(path, 0.15) == pytest.approx(1.25)
    assert perimeter_at_radius(path, 0.5) is None
    assert occupation_integral(path, lambda y: np.asarray(y)) == pytest.approx(0.45)
    assert value_at(path, 0.2) == 2.0
    assert value_at(path, 3.0) == 0.0


def test_occupation_needs_vanishing_integrand():
    with pytest.raises(ValueError):
        occupation_integral(hand_path(), lambda y: np.asarray(y) + 1.0)


def test_damped_identity():
    assert float(damped_identity(1.0)) == pytest.approx(math.exp(-1.0))
    assert float(damped_identity(0.0)) == 0.0


def test_zero_start_is_extinct():
    path = simulate_csbp(0.0, 1e-3, 1.0, np.random.default_rng(0))
    assert path.extinction_time == 0.0
    assert not path.censored


def test_simulated_extinction_probability():
    rng = np.random.default_rng(12)
    extinct_by_one = 0
    n = 300
    for _ in range(n):
        path = simulate_csbp(1.0, 1e-3, 2.0, rng)
        assert np.all(path.values >= 0)
        if path.extinction_time is not None and path.extinction_time <= 1.0:
            extinct_by_one += 1
    assert extinct_by_one / n == pytest.approx(math.exp(-1.5), abs=0.12)


def test_censored_path_beyond_horizon():
    path = simulate_csbp(50.0, 1e-2, 0.05, np.random.default_rng(1))
    assert path.censored
    with pytest.raises(ValueError):
        value_at(path, 1.0)


def test_levy_exit_matches_never_hit_probability():
    counts = simulate_levy_exit(0.36, 1.0, 1e-3, 2000, np.random.default_rng(4))
    assert counts.n == 2000
    resolved = counts.n_below + counts.n_above
    assert counts.n_below / resolved == pytest.approx(levy_never_hits(0.36, 1.0), abs=0.05)


def test_csbp_task_is_deterministic():
    task = CsbpTask(dt=1e-2, horizon=20.0, seed=7, b=1.0, r=0.5, occupation=damped_identity, keep_paths=1)
    first, path = task(0)
    again, _ = task(0)
    assert first == again
    assert path is not None
    assert task(1)[1] is None
    assert first.visits == (first.running_max >= 1.0)


def test_tail_task_shape():
    weights = TailTask(1.0, 1.0, [10.0, 20.0], seed=3, chunk=500)(0)
    assert weights.shape == (2, 500)
    assert np.all(weights >= 0)


def test_length_given_horizon_on_extinct_path():
    path = hand_path()
    assert length_given_horizon(path, 1.0) == (1.0, pytest.approx(last_passage(path, 1.0)))
    assert length_given_horizon(path, 3.0) == (0.0, 0.0)


def test_length_given_horizon_fills_in_censored_tail():
    down = CsbpPath(dt=0.5, values=np.array([0.5, 2.0, 0.5]), extinction_time=None, running_max=2.0, z0=0.5)
    seen = (1 + 1.0 / 1.5) * 0.5
    revisit = 1.0 - math.sqrt(0.5)
    weight, moment = length_given_horizon(down, 1.0)
    assert weight == 1.0
    assert moment == pytest.approx(seen + (1.0 - seen) * revisit + expected_length_from(0.5, 1.0))

    below = CsbpPath(dt=0.5, values=np.array([0.5, 0.25]), extinction_time=None, running_max=0.5, z0=0.5)
    weight, moment = length_given_horizon(below, 1.0)
    assert weight == pytest.approx(1.0 - math.sqrt(0.75))
    assert moment == pytest.approx(0.5 * weight + expected_length_from(0.25, 1.0))

    above = CsbpPath(dt=0.5, values=np.array([0.5, 2.0]), extinction_time=None, running_max=2.0, z0=0.5)
    assert length_given_horizon(above, 1.0) == (1.0, pytest.approx(0.5 + expected_length_from(2.0, 1.0)))


def test_csbp_task_reports_length_moments():
    task = CsbpTask(dt=1e-2, horizon=0.5, seed=9, b=1.0)
    for index in range(5):
        summary, _ = task(index)
        assert 0.0 <= summary.visit_weight <= 1.0
        assert summary.length_moment >= 0.0
        if summary.visits:
            assert summary.visit_weight == 1.0
    assert CsbpTask(dt=1e-2, horizon=0.5, seed=9)(0)[0].visit_weight is None
