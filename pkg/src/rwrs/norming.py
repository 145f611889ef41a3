"""Norming sequences u_n(x) = a_n x + b_n and the limiting tail measure nu."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .scenery import (
    EXPONENTIAL,
    FRECHET,
    GAUSSIAN_MA,
    MOVING_MAX,
    NEGPOW,
    ScenerySpec,
    marginal_tail,
)

FRECHET_KIND = "frechet"
WEIBULL_KIND = "weibull"
GUMBEL_KIND = "gumbel"


class OutsideDomain(ValueError):
    pass


@dataclass(frozen=True)
class Norming:
    a_n: float
    b_n: float
    n: int
    family_tag: str

    def __post_init__(self):
        if not self.a_n > 0:
            raise ValueError("a_n must be positive")

    def threshold(self, x):
        return self.a_n * x + self.b_n

    def normalize(self, xi):
        return (np.asarray(xi, dtype=float) - self.b_n) / self.a_n


@dataclass(frozen=True)
class TailMeasure:
    """nu(x, inf) on the extreme-value domain E.

    Frechet: x^-beta on (0, inf]; Gumbel: e^-x on R; Weibull: (-x)^delta on (-inf, 0].
    """

    kind: str
    exponent: float = 1.0

    def contains(self, x: float) -> bool:
        if self.kind == FRECHET_KIND:
            return x > 0
        if self.kind == WEIBULL_KIND:
            return x <= 0
        return not math.isnan(x) and x > -math.inf

    def tail(self, x: float) -> float:
        return nu_tail(self, x)

    def interval(self, lo: float, hi: float) -> float:
        """nu((lo, hi]); ``hi = inf`` allowed.  Bounds are clipped to E."""
        return _clipped_tail(self, lo) - _clipped_tail(self, hi)


def _clipped_tail(measure: TailMeasure, x: float) -> float:
    if x == math.inf:
        return 0.0
    if measure.kind == FRECHET_KIND and x <= 0:
        return math.inf
    if measure.kind == WEIBULL_KIND and x > 0:
        return 0.0
    return nu_tail(measure, x)


def nu_tail(measure: TailMeasure, x: float) -> float:
    if not measure.contains(x):
        raise OutsideDomain("outside extreme-value domain")
    if x == math.inf:
        return 0.0
    if measure.kind == FRECHET_KIND:
        return x ** (-measure.exponent)
    if measure.kind == WEIBULL_KIND:
        return (-x) ** measure.exponent
    return math.exp(-x)


def tail_measure(spec: ScenerySpec) -> TailMeasure:
    if spec.family in (FRECHET, MOVING_MAX):
        return TailMeasure(FRECHET_KIND, spec.beta)
    if spec.family == NEGPOW:
        return TailMeasure(WEIBULL_KIND, spec.delta)
    return TailMeasure(GUMBEL_KIND)


def norming(spec: ScenerySpec, n: int, method: str = "default") -> Norming:
    """Norming constants with n P(xi > u_n(x)) -> nu(x, inf).

    For Gaussian moving averages the default is the exact quantile norming
    b_n = Phi^-1(1 - 1/n), a_n = 1/(n phi(b_n)); ``method="classical"`` gives
    the textbook closed form, whose error at n = 1e6 is about 0.35 at x = -1.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    fam = spec.family
    if fam == FRECHET:
        return Norming(n ** (1.0 / spec.beta), 0.0, n, fam)
    if fam == MOVING_MAX:
        return Norming((spec.m * n) ** (1.0 / spec.beta), 0.0, n, fam)
    if fam == EXPONENTIAL:
        return Norming(1.0, math.log(n), n, fam)
    if fam == NEGPOW:
        return Norming(n ** (-1.0 / spec.delta), 0.0, n, fam)
    if fam == GAUSSIAN_MA:
        if method == "classical":
            two_log = 2.0 * math.log(n)
            a = two_log**-0.5
            b = two_log**0.5 - 0.5 * (math.log(math.log(n)) + math.log(4 * math.pi)) * a
            return Norming(a, b, n, fam)
        if method != "default":
            raise ValueError(f"unknown norming method {method!r}")
        b = float(-ndtri(1.0 / n))
        density = math.exp(-0.5 * b * b) / math.sqrt(2 * math.pi)
        return Norming(1.0 / (n * density), b, n, fam)
    raise ValueError(f"unsupported family {fam!r}")


def verify_tail_convergence(spec: ScenerySpec, n: int, x: float, method: str = "default") -> float:
    """n P(xi > u_n(x)), to be compared with nu(x, inf)."""
    nm = norming(spec, n, method)
    return n * marginal_tail(spec, nm.a_n * x + nm.b_n)
