"""
CSBP Engine Backend Module

Continuum side of the lab: the continuous-state branching process with
branching mechanism psi(lambda) = sqrt(8/3) lambda^(3/2), simulated through
the Lamperti time change of a spectrally positive 3/2-stable Levy process,
together with the functionals read off its paths and the exact samplers
available for its one-time marginals.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .annulus_laws import expected_length_from, levy_never_hits
from .replicate_pool import replicate_rng

# Enhanced imports with fallbacks
try:
    from loguru import logger
except ImportError:
    import logging

    logger = logging.getLogger(__name__)


ALPHA = 1.5
MECHANISM_COEFFICIENT = math.sqrt(8.0 / 3.0)
EXTINCTION_FLOOR = 1e-8
BLOCK = 4096


def psi(lam):
    """Branching mechanism sqrt(8/3) lambda^(3/2)."""
    lam_arr = np.asarray(lam, dtype=np.float64)
    if np.any(lam_arr < 0):
        raise ValueError(f"lambda must be >= 0, got {lam}")
    value = MECHANISM_COEFFICIENT * lam_arr**1.5
    return float(value) if value.ndim == 0 else value


class StableSampler:
    """
    Increments of the centered spectrally positive Levy process X with
    E[exp(-lambda X_t)] = exp(t psi(lambda)).

    This class is responsible for:
    - Chambers-Mallows-Stuck draws of the standard totally skewed 3/2-stable law
    - The scale mapping from Levy time dt to the increment scale
    """

    def __init__(self, alpha: float = ALPHA, coefficient: float = MECHANISM_COEFFICIENT):
        if not 1.0 < alpha < 2.0:
            raise ValueError(f"alpha must lie in (1, 2), got {alpha}")
        self.alpha = alpha
        self.coefficient = coefficient
        tan_half = math.tan(math.pi * alpha / 2.0)
        self._shift = math.atan(tan_half) / alpha
        self._stretch = (1.0 + tan_half**2) ** (1.0 / (2.0 * alpha))
        # beta = 1 stable with scale s has Laplace exponent s^alpha lambda^alpha / |cos(pi alpha / 2)|
        self.unit_scale = (-coefficient * math.cos(math.pi * alpha / 2.0)) ** (1.0 / alpha)

    def scale(self, dt: float) -> float:
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        return self.unit_scale * dt ** (1.0 / self.alpha)

    def standard(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """
        Draw standard S1(alpha, beta=1, scale 1, location 0) variates.

        Args:
            rng: numpy Generator
            size: Number of draws

        Returns:
            np.ndarray: mean-zero, totally positively skewed draws
        """
        a = self.alpha
        v = rng.uniform(-math.pi / 2.0, math.pi / 2.0, size)
        w = rng.exponential(1.0, size)
        shifted = a * (v + self._shift)
        return (
            self._stretch
            * np.sin(shifted)
            / np.cos(v) ** (1.0 / a)
            * (np.cos(v - shifted) / w) ** ((1.0 - a) / a)
        )

    def increment(self, dt: float, rng: np.random.Generator, size: Optional[int] = None):
        draws = self.standard(rng, 1 if size is None else size) * self.scale(dt)
        return float(draws[0]) if size is None else draws


def sample_stable_increment(
    dt: float,
    rng: np.random.Generator,
    size: Optional[int] = None,
    sampler: Optional[StableSampler] = None,
):
    """Increment of X over Levy time dt (an array when size is given)."""
    return (sampler or StableSampler()).increment(dt, rng, size)


def empirical_log_laplace(
    dt: float,
    lam: float,
    rng: np.random.Generator,
    draws: int,
    sampler: Optional[StableSampler] = None,
    block: int = 1_000_000,
) -> float:
    """log of the sample mean of exp(-lam * increment) over `draws` increments of Levy time dt."""
    sampler = sampler or StableSampler()
    total = 0.0
    remaining = draws
    while remaining > 0:
        n = min(block, remaining)
        total += float(np.exp(-lam * sample_stable_increment(dt, rng, n, sampler)).sum())
        remaining -= n
    return math.log(total / draws)


def initial_perimeter_quantile(a: float, u):
    """Inverse of F(z) = 1 - (a/(a+z))^(3/2)."""
    if a <= 0:
        raise ValueError(f"a must be positive, got {a}")
    u = np.asarray(u, dtype=np.float64)
    value = a * ((1.0 - u) ** (-2.0 / 3.0) - 1.0)
    return float(value) if value.ndim == 0 else value


def sample_initial_perimeter(a: float, rng: np.random.Generator, size: Optional[int] = None):
    """Draw from the density (3/2) a^(3/2) (a+z)^(-5/2) on (0, inf)."""
    return initial_perimeter_quantile(a, rng.random(size))


def sample_extinction_time(x: float, rng: np.random.Generator, size: Optional[int] = None):
    """Exact extinction time from x: P(T <= t) = exp(-3x/(2t^2))."""
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    u = rng.random(size)
    value = np.sqrt(3.0 * x / (-2.0 * np.log(u)))
    return float(value) if np.ndim(value) == 0 else value


def sample_csbp_marginal(
    x,
    u: float,
    rng: np.random.Generator,
    size: Optional[int] = None,
    survivors_only: bool = False,
) -> np.ndarray:
    """
    Exact draws of Z_u started from x.

    Z_u is a sum of Poisson(3x/(2u^2)) independent clusters, each distributed
    as u^2 E^2 / (6 G) with E ~ Exp(1) and G ~ Gamma(3/2). With
    survivors_only the cluster count is drawn from its zero-truncated law,
    which samples Z_u conditionally on Z_u > 0.

    Args:
        x: Starting value, or an array of starting values (one draw each)
        u: Time, > 0
        rng: numpy Generator
        size: Number of draws for a scalar x (1 when omitted)
        survivors_only: Condition on survival to time u

    Returns:
        np.ndarray: draws of Z_u
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0) or u <= 0:
        raise ValueError(f"need x >= 0 and u > 0, got u={u}")
    if x.ndim == 0:
        x = np.full(size or 1, float(x))
    elif size is not None and size != len(x):
        raise ValueError(f"size {size} does not match {len(x)} starting values")
    n = len(x)
    lam = 1.5 * x / (u * u)
    if survivors_only:
        if np.any(lam == 0):
            raise ValueError("x = 0 never survives")
        # first arrival on [0, 1] given at least one, then the remaining arrivals
        first = -np.log1p(-rng.random(n) * -np.expm1(-lam)) / lam
        clusters = 1 + rng.poisson(lam * (1.0 - first))
    else:
        clusters = rng.poisson(lam)
    total = int(clusters.sum())
    sizes = u * u * rng.exponential(1.0, total) ** 2 / (6.0 * rng.gamma(1.5, 1.0, total))
    owner = np.repeat(np.arange(n), clusters)
    return np.bincount(owner, weights=sizes, minlength=n)


def length_survival_weights(z0, b: float, u: float, rng: np.random.Generator) -> np.ndarray:
    """
    P(L_b > u | Z_0 = z0) estimated with one exact draw per start, where L_b
    is the last passage at b.

    After time u the path visits b with probability 1 - sqrt((b - Z_u)^+ / b),
    so each weight is P(Z_u > 0) times that probability at a survivor draw.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    weights = np.zeros(len(z0))
    alive = z0 > 0
    if not alive.any():
        return weights
    survival = -np.expm1(-1.5 * z0[alive] / (u * u))
    z_u = sample_csbp_marginal(z0[alive], u, rng, survivors_only=True)
    weights[alive] = survival * (1.0 - np.sqrt(np.maximum(b - z_u, 0.0) / b))
    return weights


@dataclass
class CsbpPath:
    """
    Discretized CSBP trajectory.

    Attributes
    ----------
    dt:
        Grid step in CSBP time; ``values[i]`` is the value at time ``i * dt``.
    values:
        Nonnegative values, identically 0 from the extinction time on.
    extinction_time:
        First grid time with value 0, None when the horizon was reached first.
    running_max:
        Maximum of ``values``.
    z0:
        Initial value.
    levy_time:
        Levy time consumed by the Lamperti time change.
    """

    dt: float
    values: np.ndarray
    extinction_time: Optional[float]
    running_max: float
    z0: float
    levy_time: float = 0.0

    @property
    def censored(self) -> bool:
        return self.extinction_time is None

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.values)) * self.dt


def simulate_csbp(
    z0: float,
    dt: float,
    horizon: float,
    rng: np.random.Generator,
    sampler: Optional[StableSampler] = None,
    floor: float = EXTINCTION_FLOOR,
) -> CsbpPath:
    """
    Euler-Lamperti scheme: each CSBP step of size dt advances the Levy
    process by Levy time z * dt.

    Args:
        z0: Initial value, >= 0
        dt: CSBP time step
        horizon: Largest simulated time; reaching it leaves the path censored
        rng: numpy Generator
        sampler: Stable sampler (a default one when omitted)
        floor: Values at or below this are absorbed at 0

    Returns:
        CsbpPath
    """
    if z0 < 0:
        raise ValueError(f"z0 must be >= 0, got {z0}")
    if dt <= 0 or horizon <= 0:
        raise ValueError(f"dt and horizon must be positive, got dt={dt}, horizon={horizon}")
    if z0 <= floor:
        return CsbpPath(dt, np.zeros(1), 0.0, max(z0, 0.0), z0)

    sampler = sampler or StableSampler()
    step_scale = sampler.scale(dt)
    power = 1.0 / sampler.alpha
    n_max = int(math.ceil(horizon / dt))
    values: List[float] = [z0]
    z = z0
    levy_time = 0.0
    extinction_time = None
    i = 0
    while i < n_max:
        block = sampler.standard(rng, min(BLOCK, n_max - i)).tolist()
        for x in block:
            levy_time += z * dt
            z = z + step_scale * z**power * x
            i += 1
            if z <= floor:
                z = 0.0
                values.append(0.0)
                extinction_time = i * dt
                break
            values.append(z)
        if extinction_time is not None:
            break

    path = np.array(values)
    if extinction_time is None:
        logger.debug(f"CSBP path from z0={z0:.4g} censored at horizon {horizon}")
    return CsbpPath(dt, path, extinction_time, float(path.max()), z0, levy_time)


def value_at(path: CsbpPath, t: float) -> float:
    """Grid value at the step nearest t (0 after extinction)."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    i = int(round(t / path.dt))
    if i < len(path.values):
        return float(path.values[i])
    if path.censored:
        raise ValueError(f"t={t} lies beyond the simulated horizon")
    return 0.0


def visits_level(path: CsbpPath, b: float) -> bool:
    """True iff the path reaches b; without negative jumps this is running_max >= b."""
    if b <= 0:
        raise ValueError(f"b must be positive, got {b}")
    return path.running_max >= b


def last_passage(path: CsbpPath, b: float) -> Optional[float]:
    """
    Last time the path comes down through b, interpolated linearly between
    the bracketing grid points.

    Returns:
        Optional[float]: None when b is never visited, or when the path is
        still at or above b at the horizon
    """
    if not visits_level(path, b):
        return None
    above = np.flatnonzero(path.values >= b)
    i = int(above[-1])
    if i == len(path.values) - 1:
        return None
    v0, v1 = path.values[i], path.values[i + 1]
    return (i + (v0 - b) / (v0 - v1)) * path.dt


def length_given_horizon(path: CsbpPath, b: float) -> Tuple[float, float]:
    """
    (P(visit | path), E[L_b 1{visit} | path]) with the part of a censored path
    beyond the horizon integrated out exactly.

    From Z_H = z the path comes back to b with probability v = 1 - sqrt((b-z)^+/b),
    so every time between the last passage l seen so far and H precedes L_b
    with probability v, and the time after H adds E_z[L_b 1{visit}].
    """
    visited = visits_level(path, b)
    passage = last_passage(path, b)
    if not path.censored:
        return (1.0, float(passage)) if visited else (0.0, 0.0)
    horizon = (len(path.values) - 1) * path.dt
    z = float(path.values[-1])
    v = 1.0 - levy_never_hits(z, b)
    # passage is None when the path is still above b, where v = 1
    seen = passage if visited and passage is not None else 0.0
    moment = seen + (horizon - seen) * v + expected_length_from(z, b)
    return (1.0 if visited else v), moment


def perimeter_at_radius(path: CsbpPath, r: float) -> Optional[float]:
    """
    Value at time extinction_time - r, which by time reversal samples the
    hull perimeter at radius r on {r < r_*}.
    """
    if r <= 0:
        raise ValueError(f"r must be positive, got {r}")
    if path.extinction_time is None or path.extinction_time <= r:
        return None
    s = (path.extinction_time - r) / path.dt
    i = int(math.floor(s))
    frac = s - i
    if i + 1 >= len(path.values):
        return float(path.values[i])
    return float((1.0 - frac) * path.values[i] + frac * path.values[i + 1])


def occupation_integral(path: CsbpPath, f: Callable) -> float:
    """
    Left Riemann sum of f(Z_t) dt over the lifetime of the path.

    f must be vectorized, nonnegative and vanish at 0.
    """
    if float(f(np.zeros(1))[0]) != 0.0:
        raise ValueError("occupation_integral needs f(0) = 0")
    values = np.asarray(f(path.values[:-1]), dtype=np.float64)
    if np.any(values < 0):
        raise ValueError("occupation_integral needs f >= 0")
    return float(values.sum() * path.dt)


def damped_identity(y):
    """y exp(-y), the reference integrand of the occupation check."""
    y = np.asarray(y, dtype=np.float64)
    return y * np.exp(-y)


@dataclass(frozen=True)
class LevyExit:
    """Counts of Levy paths leaving (0, b) below, above, or not at all."""

    n_below: int
    n_above: int
    n_unresolved: int

    @property
    def n(self) -> int:
        return self.n_below + self.n_above + self.n_unresolved


def simulate_levy_exit(
    z: float,
    b: float,
    ds: float,
    n: int,
    rng: np.random.Generator,
    max_steps: int = 10**6,
    sampler: Optional[StableSampler] = None,
) -> LevyExit:
    """
    Run n independent copies of X from z on a Levy-time grid ds until each
    leaves (0, b). Downward exits are continuous, so reaching 0 before b
    means b is never hit by the process killed at 0.
    """
    if not 0 <= z < b:
        raise ValueError(f"need 0 <= z < b, got z={z}, b={b}")
    sampler = sampler or StableSampler()
    step_scale = sampler.scale(ds)
    position = np.full(n, float(z))
    alive = np.arange(n)
    n_below = n_above = 0
    steps = 0
    while len(alive) and steps < max_steps:
        position[alive] += step_scale * sampler.standard(rng, len(alive))
        below = position[alive] <= 0.0
        above = position[alive] >= b
        n_below += int(below.sum())
        n_above += int(above.sum())
        alive = alive[~(below | above)]
        steps += 1
    if len(alive):
        logger.warning(f"{len(alive)} of {n} Levy paths unresolved after {steps} steps")
    return LevyExit(n_below, n_above, len(alive))


@dataclass(frozen=True)
class CsbpSummary:
    """Functionals of one simulated path."""

    replicate: int
    z0: float
    extinction_time: Optional[float]
    running_max: float
    visits: Optional[bool] = None
    last_passage: Optional[float] = None
    visit_weight: Optional[float] = None
    length_moment: Optional[float] = None
    perimeter_at_r: Optional[float] = None
    occupation: Optional[float] = None

    @property
    def censored(self) -> bool:
        return self.extinction_time is None


@dataclass
class CsbpTask:
    """
    One CSBP path per replicate index, picklable for the worker pool.

    The start is x when given, otherwise a draw from the initial law with
    parameter a. Paths of the first keep_paths replicates are returned too.
    """

    dt: float
    horizon: float
    seed: int
    a: float = 1.0
    x: Optional[float] = None
    b: Optional[float] = None
    r: Optional[float] = None
    occupation: Optional[Callable] = None
    keep_paths: int = 0
    sampler: StableSampler = field(default_factory=StableSampler)

    def __call__(self, index: int):
        rng = replicate_rng(self.seed, index)
        z0 = self.x if self.x is not None else sample_initial_perimeter(self.a, rng)
        path = simulate_csbp(z0, self.dt, self.horizon, rng, self.sampler)
        visit_weight, length_moment = length_given_horizon(path, self.b) if self.b is not None else (None, None)
        summary = CsbpSummary(
            replicate=index,
            z0=z0,
            extinction_time=path.extinction_time,
            running_max=path.running_max,
            visits=visits_level(path, self.b) if self.b is not None else None,
            last_passage=last_passage(path, self.b) if self.b is not None else None,
            visit_weight=visit_weight,
            length_moment=length_moment,
            perimeter_at_r=perimeter_at_radius(path, self.r) if self.r is not None else None,
            occupation=(
                occupation_integral(path, self.occupation)
                if self.occupation is not None and not path.censored
                else None
            ),
        )
        return summary, (path if index < self.keep_paths else None)


@dataclass
class TailTask:
    """
    One chunk of starts from the initial law per index, returning the
    length-survival weights at every threshold of u_grid (shape: grid x chunk).
    """

    a: float
    b: float
    u_grid: List[float]
    seed: int
    chunk: int = 10_000

    def __call__(self, index: int) -> np.ndarray:
        rng = replicate_rng(self.seed, index)
        z0 = sample_initial_perimeter(self.a, rng, self.chunk)
        return np.stack([length_survival_weights(z0, self.b, u, rng) for u in self.u_grid])
