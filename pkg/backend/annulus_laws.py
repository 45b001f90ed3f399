"""
Annulus Laws Module

Closed-form laws of the continuum objects (hitting probabilities, hull
perimeter density, annulus length moments and tails, extinction law, scale
functions) together with the quadrature oracles used to cross-check them.
Every function here is pure.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import IntegrationWarning, quad

SQRT_3_OVER_2PI = math.sqrt(3.0 / (2.0 * math.pi))
MECHANISM_COEFFICIENT = math.sqrt(8.0 / 3.0)
QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-12


class QuadratureError(RuntimeError):
    """Raised when scipy reports that an integral did not converge."""


def integrate(f: Callable[[float], float], lo: float, hi: float, **kwargs) -> float:
    """
    scipy.integrate.quad with integration warnings promoted to errors.

    Args:
        f: Integrand
        lo, hi: Bounds (hi may be math.inf)
        **kwargs: Passed to quad (weight, wvar, points, limit, ...)

    Returns:
        float: value of the integral
    """
    kwargs.setdefault("epsabs", QUAD_EPSABS)
    kwargs.setdefault("epsrel", QUAD_EPSREL)
    kwargs.setdefault("limit", 200)
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            value, _ = quad(f, lo, hi, **kwargs)
        except IntegrationWarning as e:
            raise QuadratureError(f"quadrature on [{lo}, {hi}] did not converge: {e}") from e
    return value


def _positive(**values: float) -> None:
    for name, value in values.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class AnnulusParams:
    """Outer perimeter a, inner perimeter b and hull radius r of an annulus experiment."""

    a: float = 1.0
    b: float = 1.0
    r: float = 1.0

    def __post_init__(self):
        _positive(a=self.a, b=self.b, r=self.r)

    def hit_prob(self) -> float:
        return hit_prob(self.a, self.b)

    def expected_length(self) -> float:
        return expected_length(self.a, self.b)

    def tail_asymptote(self, u: float) -> float:
        return tail_asymptote(self.a, self.b, u)


# -- discrete-to-continuum scaling ------------------------------------------


def height_scale(L: float) -> float:
    """c_L = sqrt(3/2) L^(-1/2), the distance rescaling."""
    _positive(L=L)
    return math.sqrt(1.5 / L)


def volume_scale(L: float) -> float:
    """(3/4) L^(-2), the volume rescaling."""
    _positive(L=L)
    return 0.75 / (L * L)


def time_scale(L: float) -> float:
    """L^(3/2) peeling steps per unit of rescaled time."""
    _positive(L=L)
    return L**1.5


# -- hitting probabilities --------------------------------------------------


def hit_prob(a: float, b: float) -> float:
    """Probability a/(a+b) that the exploration from perimeter a reaches b."""
    _positive(a=a, b=b)
    return a / (a + b)


def discrete_hit_prob(disk_boundary: Optional[int], start: int, target: int) -> float:
    """
    Exact probability that the perimeter chain of a disk with boundary L,
    started at `start`, visits `target` before the cemetery.

    Up-steps are +1 and the UIPT chain is transient, so the h-transform gives
    h_L(target) / h_L(start) = (L + start) / (L + target).
    """
    if target < start:
        raise ValueError(f"target {target} must be >= start {start}")
    if disk_boundary is None:
        return 1.0
    return (disk_boundary + start) / (disk_boundary + target)


def hit_prob_integral_check(a: float, b: float) -> float:
    """
    |(3/2) a^(3/2) int_0^b (a+z)^(-5/2) sqrt((b-z)/b) dz - b/(a+b)|.

    The square-root endpoint at z = b is handled by quad's algebraic weight.
    """
    _positive(a=a, b=b)
    value = integrate(
        lambda z: 1.5 * a**1.5 * (a + z) ** -2.5 / math.sqrt(b),
        0.0,
        b,
        weight="alg",
        wvar=(0.0, 0.5),
    )
    return abs(value - b / (a + b))


def levy_never_hits(z: float, b: float) -> float:
    """Probability sqrt((b-z)^+/b) that the Levy process from z never reaches b."""
    if z < 0:
        raise ValueError(f"z must be >= 0, got {z}")
    _positive(b=b)
    return math.sqrt(max(b - z, 0.0) / b)


# -- hull perimeter ---------------------------------------------------------


def perimeter_hull_density(r: float, a: float, y):
    """
    Density in y of the hull perimeter at radius r on the event {r < r_*}.

    3 sqrt(3/(2 pi)) r^-3 (a/(a+y)) sqrt(y) exp(-3y/(2 r^2)), vectorized in y.
    """
    _positive(r=r, a=a)
    y = np.asarray(y, dtype=np.float64)
    value = (
        3.0 * SQRT_3_OVER_2PI * r**-3 * (a / (a + y)) * np.sqrt(np.maximum(y, 0.0))
        * np.exp(-1.5 * y / (r * r))
    )
    return float(value) if value.ndim == 0 else value


def perimeter_hull_laplace(r: float, a: float, lam: float) -> float:
    """int_0^inf exp(-lam y) density(y) dy; lam = 0 gives the total mass."""
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    return integrate(lambda y: math.exp(-lam * y) * perimeter_hull_density(r, a, y), 0.0, math.inf)


def perimeter_hull_mass(r: float, a: float) -> float:
    """P(r < r_*), the total mass of the hull perimeter density."""
    return perimeter_hull_laplace(r, a, 0.0)


# -- annulus length ---------------------------------------------------------


def expected_length(a: float, b: float) -> float:
    """sqrt(3 pi / 2) (a+b) (a^-1/2 + b^-1/2 - (1/a + 1/b)^1/2)."""
    _positive(a=a, b=b)
    return (
        math.sqrt(1.5 * math.pi)
        * (a + b)
        * (math.sqrt(1.0 / a) + math.sqrt(1.0 / b) - math.sqrt(1.0 / a + 1.0 / b))
    )


def expected_length_integral(a: float, b: float) -> float:
    """
    First moment of the annulus length through the occupation formula:
    (a+b) sqrt(3/(2 pi)) int_0^inf (1 - sqrt((b-y)^+/b)) / (sqrt(y)(a+y)) dy.
    """
    _positive(a=a, b=b)
    inner = integrate(
        lambda y: (1.0 - math.sqrt((b - y) / b)) / (a + y),
        0.0,
        b,
        weight="alg",
        wvar=(-0.5, 0.0),
    )
    # int_b^inf dy / (sqrt(y)(a+y)) in closed form
    outer = 2.0 / math.sqrt(a) * (math.pi / 2.0 - math.atan(math.sqrt(b / a)))
    return (a + b) * SQRT_3_OVER_2PI * (inner + outer)


def expected_length_from(z: float, b: float) -> float:
    """
    E_z[L_b 1{visit}], the mean last passage at b of the CSBP started from z.

    The CSBP killed at 0 spends time density (W(y) - W(y-z)) / y at level y,
    and from level y it visits b with probability 1 - sqrt((b-y)^+/b).
    """
    if z < 0:
        raise ValueError(f"z must be >= 0, got {z}")
    _positive(b=b)
    if z == 0:
        return 0.0

    def integrand(y: float) -> float:
        if y > z:
            # W(y) - W(y-z) without cancellation
            green = SQRT_3_OVER_2PI * z / (math.sqrt(y) + math.sqrt(y - z))
        else:
            green = scale_w(y)
        return (1.0 - math.sqrt(max(b - y, 0.0) / b)) * green / y

    cuts = [0.0] + sorted({z, b}) + [math.inf]
    return sum(integrate(integrand, lo, hi, epsrel=1e-10) for lo, hi in zip(cuts, cuts[1:]))


def tail_asymptote(a: float, b: float, u: float) -> float:
    """Leading term 3(a+b)/u^2 of P(annulus length > u)."""
    _positive(a=a, b=b, u=u)
    return 3.0 * (a + b) / (u * u)


# -- CSBP laws --------------------------------------------------------------


def extinction_cdf(x, t):
    """P_x(Z_t = 0) = exp(-3x/(2 t^2)), vectorized in t."""
    if np.any(np.asarray(x) < 0):
        raise ValueError(f"x must be >= 0, got {x}")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0):
        raise ValueError("t must be positive")
    with np.errstate(divide="ignore"):
        value = np.exp(-1.5 * np.asarray(x) / (t * t))
    return float(value) if value.ndim == 0 else value


def initial_density(a: float, z):
    """Density (3/2) a^(3/2) (a+z)^(-5/2) of the initial CSBP value."""
    _positive(a=a)
    z = np.asarray(z, dtype=np.float64)
    value = 1.5 * a**1.5 * (a + z) ** -2.5
    return float(value) if value.ndim == 0 else value


def survival_probability(a: float, u: float) -> float:
    """P(Z_u > 0) when Z_0 has the initial density with parameter a."""
    _positive(a=a, u=u)
    return integrate(
        lambda x: -math.expm1(-1.5 * x / (u * u)) * initial_density(a, x), 0.0, math.inf
    )


def exit_laplace(mu: float, s: float) -> float:
    """(mu^-1/2 + sqrt(2/3)|s|)^-2, the exit-measure Laplace functional."""
    _positive(mu=mu)
    return (mu**-0.5 + math.sqrt(2.0 / 3.0) * abs(s)) ** -2


def scale_w(u: float) -> float:
    """W(u) = sqrt(3u / (2 pi))."""
    if u < 0:
        raise ValueError(f"u must be >= 0, got {u}")
    return math.sqrt(3.0 * u / (2.0 * math.pi))


def scale_wtilde(x: float) -> float:
    """W~(x) = 2 sqrt(3) sqrt(x) / sqrt(pi)."""
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    return 2.0 * math.sqrt(3.0) * math.sqrt(x) / math.sqrt(math.pi)


def laplace_scale_w(lam: float) -> float:
    _positive(lam=lam)
    return integrate(lambda u: math.exp(-lam * u) * scale_w(u), 0.0, math.inf)


def laplace_scale_wtilde(lam: float) -> float:
    _positive(lam=lam)
    return integrate(lambda x: math.exp(-lam * x) * scale_wtilde(x), 0.0, math.inf)


def scale_laplace_check(lam: float) -> float:
    """Largest error of the two scale-function Laplace identities at lam."""
    psi = MECHANISM_COEFFICIENT * lam**1.5
    return max(
        abs(laplace_scale_w(lam) - 1.0 / psi),
        abs(laplace_scale_wtilde(lam) - math.sqrt(3.0) * lam**-1.5),
    )


def occupation_density(y, a: float = 1.0):
    """
    Expected time density sqrt(3/(2 pi)) a / (sqrt(y)(a+y)) spent by the CSBP
    at level y when started from the initial law with parameter a.
    """
    _positive(a=a)
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("y must be positive")
    value = SQRT_3_OVER_2PI * a / (np.sqrt(y) * (a + y))
    return float(value) if value.ndim == 0 else value


def occupation_expectation(f: Callable[[float], float], a: float = 1.0) -> float:
    """E int f(Z_t) dt by quadrature of f against the occupation density."""
    _positive(a=a)
    near = integrate(
        lambda y: f(y) * SQRT_3_OVER_2PI * a / (a + y), 0.0, 1.0, weight="alg", wvar=(-0.5, 0.0)
    )
    far = integrate(lambda y: f(y) * occupation_density(y, a), 1.0, math.inf)
    return near + far


# -- scalar identities ------------------------------------------------------


def convolution_identity_check(a: float, y: float) -> float:
    """|int_0^y (a+z)^-3/2 (y-z)^-1/2 dz - 2 sqrt(y) / (sqrt(a)(a+y))|."""
    _positive(a=a, y=y)
    value = integrate(lambda z: (a + z) ** -1.5, 0.0, y, weight="alg", wvar=(0.0, -0.5))
    return abs(value - 2.0 * math.sqrt(y) / (math.sqrt(a) * (a + y)))


def normalization_identity_check() -> float:
    """|(sqrt(3 pi)/4)(2 sqrt 3 / sqrt pi) int_0^inf (1+x)^-5/2 dx - 1|."""
    inner = integrate(lambda x: (1.0 + x) ** -2.5, 0.0, math.inf)
    prefactor = math.sqrt(3.0 * math.pi) / 4.0 * 2.0 * math.sqrt(3.0) / math.sqrt(math.pi)
    return abs(prefactor * inner - 1.0)


def cemetery_asymptote(x: float) -> float:
    """Limit of L^(3/2) q_L(floor(xL), cemetery): (sqrt(3 pi)/4) x^-1/2 (1+x)^-3/2."""
    _positive(x=x)
    return math.sqrt(3.0 * math.pi) / 4.0 * x**-0.5 * (1.0 + x) ** -1.5
