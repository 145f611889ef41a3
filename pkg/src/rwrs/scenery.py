"""Stationary sceneries evaluated lazily at integer sites.

Innovations are read from the counter-based generator with the site as
counter, so xi(s) is available at any s without generating its neighbours.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import ndtr, ndtri

from .simkit import SCENERY, RngKey, random_bits, bits_to_open_uniform

FRECHET = "frechet"
EXPONENTIAL = "exponential"
NEGPOW = "negpow"
MOVING_MAX = "moving_max"
GAUSSIAN_MA = "gaussian_ma"
FAMILIES = (FRECHET, EXPONENTIAL, NEGPOW, MOVING_MAX, GAUSSIAN_MA)
IID_FAMILIES = (FRECHET, EXPONENTIAL, NEGPOW)


def ar1_weights(rho: float, tol: float = 1e-8) -> tuple[float, ...]:
    """Truncated MA(inf) weights rho^j of an AR(1), j <= ceil(log(tol)/log(rho))."""
    if not 0.0 < abs(rho) < 1.0:
        raise ValueError("rho must lie in (-1, 1) \\ {0}")
    m = math.ceil(math.log(tol) / math.log(abs(rho)))
    return tuple(rho**j for j in range(m + 1))


@dataclass(frozen=True)
class ScenerySpec:
    family: str
    beta: float = 1.0
    delta: float = 1.0
    m: int = 2
    weights: tuple[float, ...] = ()
    seed_binding: RngKey = RngKey(0, 0, SCENERY)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown scenery family {self.family!r}")
        if self.beta <= 0 or self.delta <= 0:
            raise ValueError("tail exponents must be positive")
        if self.family == MOVING_MAX and self.m < 2:
            raise ValueError("moving maximum needs a window m >= 2")
        if self.family == GAUSSIAN_MA:
            w = np.asarray(self.weights, dtype=float)
            if w.size == 0 or not np.all(np.isfinite(w)) or not np.any(w):
                raise ValueError("gaussian_ma needs a non-zero finite weight vector")
            # unit l2 norm keeps the marginal standard normal
            object.__setattr__(self, "weights", tuple((w / np.linalg.norm(w)).tolist()))

    @classmethod
    def iid_frechet(cls, beta: float = 1.0) -> "ScenerySpec":
        return cls(FRECHET, beta=float(beta))

    @classmethod
    def iid_exponential(cls) -> "ScenerySpec":
        return cls(EXPONENTIAL)

    @classmethod
    def iid_negpow(cls, delta: float = 1.0) -> "ScenerySpec":
        return cls(NEGPOW, delta=float(delta))

    @classmethod
    def moving_max(cls, m: int = 2, beta: float = 1.0) -> "ScenerySpec":
        return cls(MOVING_MAX, beta=float(beta), m=int(m))

    @classmethod
    def gaussian_ma(cls, weights) -> "ScenerySpec":
        return cls(GAUSSIAN_MA, weights=tuple(float(w) for w in weights))

    @property
    def is_iid(self) -> bool:
        return self.family in IID_FAMILIES or (self.family == GAUSSIAN_MA and len(self.weights) == 1)

    @property
    def window(self) -> int:
        """Number of consecutive innovations feeding one site (dependence range + 1)."""
        if self.family == MOVING_MAX:
            return self.m
        if self.family == GAUSSIAN_MA:
            return len(self.weights)
        return 1

    def bind(self, key: RngKey) -> "ScenerySpec":
        return replace(self, seed_binding=key)

    def as_dict(self) -> dict:
        d = {"family": self.family}
        if self.family in (FRECHET, MOVING_MAX):
            d["beta"] = self.beta
        if self.family == NEGPOW:
            d["delta"] = self.delta
        if self.family == MOVING_MAX:
            d["m"] = self.m
        if self.family == GAUSSIAN_MA:
            d["weights"] = list(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenerySpec":
        fam = d["family"]
        if fam == FRECHET:
            return cls.iid_frechet(d.get("beta", 1.0))
        if fam == EXPONENTIAL:
            return cls.iid_exponential()
        if fam == NEGPOW:
            return cls.iid_negpow(d.get("delta", 1.0))
        if fam == MOVING_MAX:
            return cls.moving_max(d.get("m", 2), d.get("beta", 1.0))
        if fam == GAUSSIAN_MA:
            if "ar_rho" in d:
                return cls.gaussian_ma(ar1_weights(d["ar_rho"], d.get("tol", 1e-8)))
            return cls.gaussian_ma(d["weights"])
        raise ValueError(f"unknown scenery family {fam!r}")


def _innovation_uniform(spec: ScenerySpec, sites: np.ndarray) -> np.ndarray:
    return bits_to_open_uniform(random_bits(spec.seed_binding, sites))


def _frechet_from_uniform(u: np.ndarray, beta: float) -> np.ndarray:
    return (-np.log(u)) ** (-1.0 / beta)


def scenery_value(spec: ScenerySpec, site) -> np.ndarray | float:
    """xi(site); vectorised over integer arrays, pure in (spec, site)."""
    scalar = np.ndim(site) == 0
    s = np.atleast_1d(np.asarray(site, dtype=np.int64))
    fam = spec.family
    if fam == FRECHET:
        out = _frechet_from_uniform(_innovation_uniform(spec, s), spec.beta)
    elif fam == EXPONENTIAL:
        out = -np.log(_innovation_uniform(spec, s))
    elif fam == NEGPOW:
        out = -(_innovation_uniform(spec, s) ** (1.0 / spec.delta))
    elif fam == MOVING_MAX:
        out = _frechet_from_uniform(_innovation_uniform(spec, s), spec.beta)
        for j in range(1, spec.m):
            np.maximum(out, _frechet_from_uniform(_innovation_uniform(spec, s + j), spec.beta), out=out)
    else:
        out = np.zeros(s.shape)
        for j, w in enumerate(spec.weights):
            out += w * ndtri(_innovation_uniform(spec, s + j))
    return float(out[0]) if scalar else out


def innovations(spec: ScenerySpec, site) -> np.ndarray:
    """Raw innovations at ``site`` (unit Frechet for moving maxima, N(0,1) for MA)."""
    s = np.atleast_1d(np.asarray(site, dtype=np.int64))
    u = _innovation_uniform(spec, s)
    if spec.family == GAUSSIAN_MA:
        return ndtri(u)
    return _frechet_from_uniform(u, spec.beta)


def marginal_tail(spec: ScenerySpec, u) -> np.ndarray | float:
    """P(xi > u), exact for every family."""
    scalar = np.ndim(u) == 0
    x = np.atleast_1d(np.asarray(u, dtype=float))
    fam = spec.family
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if fam == FRECHET:
            out = np.where(x > 0, -np.expm1(-np.power(np.maximum(x, 0.0), -spec.beta)), 1.0)
        elif fam == MOVING_MAX:
            out = np.where(x > 0, -np.expm1(-spec.m * np.power(np.maximum(x, 0.0), -spec.beta)), 1.0)
        elif fam == EXPONENTIAL:
            out = np.where(x > 0, np.exp(-x), 1.0)
        elif fam == NEGPOW:
            out = np.clip(np.power(np.maximum(-x, 0.0), spec.delta), 0.0, 1.0)
        else:
            out = ndtr(-x)
    return float(out[0]) if scalar else out


def _lag_correlation(weights: tuple[float, ...], lag: int) -> float:
    w = np.asarray(weights)
    if lag >= w.size:
        return 0.0
    return float(np.dot(w[:-lag] if lag else w, w[lag:]))


@lru_cache(maxsize=4096)
def bivariate_normal_upper(u: float, rho: float) -> float:
    """P(X > u, Y > u) for a standard bivariate normal with correlation rho."""
    if rho == 0.0:
        return float(ndtr(-u)) ** 2
    if rho >= 1.0:
        return float(ndtr(-u))
    s = math.sqrt(1.0 - rho * rho)

    def integrand(x):
        return math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi) * float(ndtr(-(u - rho * x) / s))

    val, _ = integrate.quad(integrand, u, u + 40.0, epsabs=0.0, epsrel=1e-10, limit=200)
    return val


def joint_exceedance(spec: ScenerySpec, lag: int, u: float) -> float:
    """P(xi(0) > u, xi(lag) > u), lag >= 1."""
    if lag < 1:
        raise ValueError("lag must be >= 1")
    p = marginal_tail(spec, u)
    if spec.family == MOVING_MAX:
        if lag >= spec.m or u <= 0:
            return p * p
        c = u ** (-spec.beta)
        return 1.0 - 2.0 * math.exp(-spec.m * c) + math.exp(-(spec.m + lag) * c)
    if spec.family == GAUSSIAN_MA:
        return bivariate_normal_upper(float(u), _lag_correlation(spec.weights, lag))
    return p * p


def window_union_size(sites: np.ndarray, m: int) -> int:
    """|union of {s, ..., s+m-1}| over the distinct sites."""
    s = np.unique(np.asarray(sites, dtype=np.int64))
    if s.size == 0:
        return 0
    return int(m + np.minimum(np.diff(s), m).sum())


def has_closed_form_cdf(spec: ScenerySpec) -> bool:
    return spec.family != GAUSSIAN_MA or len(spec.weights) == 1


def joint_cdf(spec: ScenerySpec, sites, u: float) -> float:
    """P(xi(s) <= u for every s in ``sites``) where a closed form exists.

    i.i.d. families factorise over distinct sites; for moving maxima the event
    is that every innovation in the union of windows stays below u.
    """
    s = np.unique(np.asarray(sites, dtype=np.int64))
    if s.size == 0:
        return 1.0
    if spec.family == MOVING_MAX:
        if u <= 0:
            return 0.0
        return math.exp(-window_union_size(s, spec.m) * u ** (-spec.beta))
    if not has_closed_form_cdf(spec):
        raise NotImplementedError("no closed-form joint CDF for correlated Gaussian sceneries")
    return (1.0 - marginal_tail(spec, u)) ** s.size
