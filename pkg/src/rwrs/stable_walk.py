"""Integer random walks in the domain of attraction of an alpha-stable law (alpha < 1).

Steps are drawn by counter-based inversion so a path prefix never changes when
the horizon grows.  The escape probability ``q = P(S_k != 0 for all k >= 1)``
is estimated two ways: from returns to the origin over a finite horizon and
from the slope of the range ``R_n / n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import zeta

from .simkit import (
    STEP_TAIL,
    McEstimate,
    RngKey,
    aggregate,
    bits_from_words,
    bits_to_open_uniform,
    bits_to_uniform,
    ordered_map,
)

ZIPF = "zipf"
UNIT = "unit"
SIMPLE = "simple"  # +-1 symmetric steps, recurrent; used as a test aid only

_POSITION_LIMIT = 2.0**62
_SMALL_TABLE = 256
_MAX_TAIL_ATTEMPTS = 64


class PositionOverflow(OverflowError):
    pass


@dataclass(frozen=True)
class StepLaw:
    """Increment law of the walk.

    ``zipf``: P(X = k) = |k|^-(1+alpha) / (2 zeta(1+alpha)) for k != 0.
    ``unit``: X = 1 almost surely.
    """

    family: str
    alpha: float | None = None
    tail_cutoff: int = 2**16

    def __post_init__(self):
        if self.family == ZIPF:
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise ValueError("zipf steps need alpha in (0, 1)")
        elif self.family in (UNIT, SIMPLE):
            pass
        else:
            raise ValueError(f"unknown step family {self.family!r}")
        if self.tail_cutoff < 1:
            raise ValueError("tail_cutoff must be positive")

    @classmethod
    def zipf(cls, alpha: float, tail_cutoff: int = 2**16) -> "StepLaw":
        return cls(ZIPF, float(alpha), int(tail_cutoff))

    @classmethod
    def unit(cls) -> "StepLaw":
        return cls(UNIT)

    @property
    def index(self) -> float:
        """Stable index governing return probabilities (P(S_k=0) ~ k^(-1/index))."""
        if self.family == ZIPF:
            return self.alpha
        if self.family == SIMPLE:
            return 2.0
        return math.inf

    def as_dict(self) -> dict:
        if self.family == ZIPF:
            return {"family": ZIPF, "alpha": self.alpha, "tail_cutoff": self.tail_cutoff}
        return {"family": self.family}

    @classmethod
    def from_dict(cls, d: dict) -> "StepLaw":
        fam = d["family"]
        if fam == ZIPF:
            return cls.zipf(d["alpha"], d.get("tail_cutoff", 2**16))
        return cls(fam)


def zipf_constant(alpha: float) -> float:
    """c_alpha = 1 / (2 zeta(1 + alpha))."""
    return 0.5 / float(zeta(1.0 + alpha))


def step_pmf(law: StepLaw, k: int) -> float:
    if law.family == UNIT:
        return 1.0 if k == 1 else 0.0
    if law.family == SIMPLE:
        return 0.5 if abs(k) == 1 else 0.0
    if k == 0:
        return 0.0
    return zipf_constant(law.alpha) * abs(k) ** (-1.0 - law.alpha)


@lru_cache(maxsize=8)
def _magnitude_cdf(alpha: float, cutoff: int) -> np.ndarray:
    # P(|X| <= k) = 1 - zeta(1+alpha, k+1) / zeta(1+alpha), k = 1..cutoff
    k = np.arange(1, cutoff + 1, dtype=np.float64)
    cdf = 1.0 - zeta(1.0 + alpha, k + 1.0) / zeta(1.0 + alpha)
    cdf = np.maximum.accumulate(cdf)
    cdf.setflags(write=False)
    return cdf


def _tail_ratio(k: np.ndarray, alpha: float) -> np.ndarray:
    # target / proposal mass for the floor of a Pareto(alpha) variate, up to a constant
    return alpha / (k * -np.expm1(-alpha * np.log1p(1.0 / k)))


def _zipf_tail(alpha: float, k0: int, keys: Sequence[RngKey], rows: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Exact draws of |X| conditioned on |X| >= k0, by rejection from a discretised Pareto."""
    out = np.empty(len(rows), dtype=np.int64)
    pending = np.arange(len(rows))
    ratio_max = _tail_ratio(np.array([float(k0)]), alpha)[0]
    for attempt in range(_MAX_TAIL_ATTEMPTS):
        if pending.size == 0:
            return out
        sub_v = STEP_TAIL + 2 * attempt
        w1v = np.empty(pending.size, dtype=np.uint64)
        w2v = np.empty(pending.size, dtype=np.uint64)
        w1w = np.empty(pending.size, dtype=np.uint64)
        w2w = np.empty(pending.size, dtype=np.uint64)
        for j, p in enumerate(pending):
            key = keys[rows[p]]
            w1v[j], w2v[j] = key.with_substream(sub_v).words()
            w1w[j], w2w[j] = key.with_substream(sub_v + 1).words()
        c = counters[pending]
        v = bits_to_open_uniform(bits_from_words(w1v, w2v, c))
        w = bits_to_uniform(bits_from_words(w1w, w2w, c))
        y = k0 * v ** (-1.0 / alpha)
        if np.any(y >= _POSITION_LIMIT):
            raise PositionOverflow("position overflow")
        k = np.floor(y)
        accept = w * ratio_max <= _tail_ratio(k, alpha)
        out[pending[accept]] = k[accept].astype(np.int64)
        pending = pending[~accept]
    raise RuntimeError("tail sampler failed to accept")  # probability < 1e-100


def _draw_steps(law: StepLaw, keys: Sequence[RngKey], counters: np.ndarray) -> np.ndarray:
    """Steps X_c for every key (rows) and counter (columns)."""
    counters = np.asarray(counters, dtype=np.int64)
    shape = (len(keys), counters.size)
    if law.family == UNIT:
        return np.ones(shape, dtype=np.int64)
    words = [k.words() for k in keys]
    w1 = np.array([w[0] for w in words], dtype=np.uint64)[:, None]
    w2 = np.array([w[1] for w in words], dtype=np.uint64)[:, None]
    bits = bits_from_words(w1, w2, counters[None, :]).reshape(shape)
    sign = np.where((bits & np.uint64(1)).astype(bool), 1, -1).astype(np.int64)
    if law.family == SIMPLE:
        return sign
    u = bits_to_uniform(bits).ravel()
    cdf = _magnitude_cdf(law.alpha, law.tail_cutoff)
    mag = np.empty(u.size, dtype=np.int64)
    small = u < cdf[min(_SMALL_TABLE, cdf.size) - 1]
    mag[small] = np.searchsorted(cdf[:_SMALL_TABLE], u[small], side="right") + 1
    mid = ~small & (u < cdf[-1])
    mag[mid] = np.searchsorted(cdf, u[mid], side="right") + 1
    tail = np.flatnonzero(~small & ~mid)
    if tail.size:
        rows, cols = np.divmod(tail, shape[1])
        mag[tail] = _zipf_tail(law.alpha, law.tail_cutoff + 1, keys, rows, counters[cols])
    return mag.reshape(shape) * sign


def sample_step(law: StepLaw, key: RngKey, counter: int) -> int:
    """One increment; a pure function of (law, key, counter)."""
    return int(_draw_steps(law, [key], np.array([counter]))[0, 0])


def sample_steps(law: StepLaw, key: RngKey, counters) -> np.ndarray:
    return _draw_steps(law, [key], np.atleast_1d(counters))[0]


def _positions(law: StepLaw, n: int, key: RngKey) -> np.ndarray:
    steps = sample_steps(law, key, np.arange(1, n + 1))
    if float(np.abs(steps).sum(dtype=np.float64)) >= _POSITION_LIMIT:
        raise PositionOverflow("position overflow")
    return np.cumsum(steps)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class WalkSummary:
    """First-visit structure of S_1..S_n.

    ``tau[k-1]`` is the time of the k-th new site, ``first_visit_sites[k-1]``
    that site, ``range[t-1]`` = R_t = #{S_1..S_t}.
    """

    n: int
    tau: np.ndarray
    first_visit_sites: np.ndarray
    range: np.ndarray
    positions: np.ndarray | None = field(default=None, repr=False)

    @property
    def range_size(self) -> int:
        return int(self.range[-1])

    def as_dict(self) -> dict:
        d = {
            "n": self.n,
            "range_size": self.range_size,
            "tau": self.tau.tolist(),
            "first_visit_sites": self.first_visit_sites.tolist(),
        }
        if self.positions is not None:
            d["positions"] = self.positions.tolist()
        return d


def summarize_positions(positions: np.ndarray, keep_positions: bool = False) -> WalkSummary:
    n = positions.size
    _, first = np.unique(positions, return_index=True)
    first.sort()
    flags = np.zeros(n, dtype=np.int64)
    flags[first] = 1
    return WalkSummary(
        n=n,
        tau=_frozen(first.astype(np.int64) + 1),
        first_visit_sites=_frozen(positions[first].copy()),
        range=_frozen(np.cumsum(flags)),
        positions=_frozen(positions) if keep_positions else None,
    )


def generate_walk(law: StepLaw, n: int, key: RngKey, keep_positions: bool = False) -> WalkSummary:
    """Simulate S_1..S_n and record visit times, first-visit sites and the range.

    S_0 = 0 is not counted as visited, so R_n = #{S_1, ..., S_n}.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if law.family == UNIT:
        t = np.arange(1, n + 1, dtype=np.int64)
        return WalkSummary(n, _frozen(t), _frozen(t.copy()), _frozen(t.copy()), _frozen(t.copy()) if keep_positions else None)
    return summarize_positions(_positions(law, n, key), keep_positions)


# ---------------------------------------------------------------------------
# escape probability

@dataclass(frozen=True)
class ReturnProfile:
    """Per-replication return statistics over a finite horizon."""

    horizon: int
    escaped: np.ndarray      # S_k != 0 for all k <= horizon
    returns: np.ndarray      # #{k <= horizon : S_k = 0}
    late_returns: np.ndarray  # #{horizon/2 < k <= horizon : S_k = 0}


def _batch_profile(args) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    law, horizon, key, lo, hi = args
    keys = [key.replicate(r) for r in range(lo, hi)]
    steps = _draw_steps(law, keys, np.arange(1, horizon + 1))
    if float(np.abs(steps).sum(axis=1, dtype=np.float64).max()) >= _POSITION_LIMIT:
        raise PositionOverflow("position overflow")
    zero = np.cumsum(steps, axis=1) == 0
    return ~zero.any(axis=1), zero.sum(axis=1), zero[:, horizon // 2 :].sum(axis=1)


def return_profile(law: StepLaw, horizon: int, reps: int, key: RngKey, workers: int = 1) -> ReturnProfile:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if reps < 2:
        raise ValueError("insufficient replications")
    if law.family == UNIT:
        return ReturnProfile(horizon, np.ones(reps, bool), np.zeros(reps, np.int64), np.zeros(reps, np.int64))
    batch = max(1, 1_000_000 // horizon)
    jobs = [(law, horizon, key, lo, min(reps, lo + batch)) for lo in range(0, reps, batch)]
    parts = ordered_map(_batch_profile, jobs, workers) if workers > 1 else [_batch_profile(j) for j in jobs]
    esc, ret, late = (np.concatenate(p) for p in zip(*parts))
    return ReturnProfile(horizon, esc, ret, late)


def truncation_tail(law: StepLaw, profile: ReturnProfile) -> float:
    """Extrapolated sum of P(S_k = 0) over k > horizon.

    Uses P(S_k = 0) ~ C k^(-1/index): the mass beyond the horizon equals the
    mass observed on (horizon/2, horizon] divided by 2^(1/index - 1) - 1.
    """
    if law.family == UNIT:
        return 0.0
    expo = 1.0 / law.index - 1.0
    if expo <= 0:
        return math.inf
    late = math.fsum(profile.late_returns.tolist()) / profile.late_returns.size
    return late / (2.0**expo - 1.0)


def _escape_from_profile(law: StepLaw, profile: ReturnProfile) -> McEstimate:
    est = aggregate(profile.escaped.astype(float))
    bias = truncation_tail(law, profile)
    return McEstimate(est.mean, est.stderr + bias, est.replications, est.ci_level, bias)


def estimate_escape_probability(law: StepLaw, horizon: int, reps: int, key: RngKey, workers: int = 1) -> McEstimate:
    """Fraction of walks avoiding 0 up to ``horizon``.

    This overestimates q; the extrapolated truncation bias is stored in
    ``bias`` and added to ``stderr``.
    """
    return _escape_from_profile(law, return_profile(law, horizon, reps, key, workers))


def estimate_return_mass(law: StepLaw, horizon: int, reps: int, key: RngKey, workers: int = 1) -> McEstimate:
    """Monte Carlo estimate of sum_{k=1}^{horizon} P(S_k = 0)."""
    profile = return_profile(law, horizon, reps, key, workers)
    return aggregate(profile.returns.astype(float))


def _range_fraction(args) -> float:
    law, n, key, r = args
    positions = _positions(law, n, key.replicate(r))
    return np.unique(positions).size / n


def estimate_range_slope(law: StepLaw, n: int, reps: int, key: RngKey, workers: int = 1) -> McEstimate:
    """Mean of R_n / n over replications."""
    if law.family == UNIT:
        return McEstimate(1.0, 0.0, reps)
    values = ordered_map(_range_fraction, [(law, n, key, r) for r in range(reps)], workers)
    return aggregate(values)


@dataclass(frozen=True)
class QReport:
    return_based: McEstimate
    range_slope: McEstimate
    horizon: int
    n_range: int

    @property
    def difference(self) -> float:
        return self.range_slope.mean - self.return_based.mean

    @property
    def joint_stderr(self) -> float:
        sampling = self.return_based.stderr - self.return_based.bias
        return math.hypot(sampling, self.range_slope.stderr)

    @property
    def bias_bound(self) -> float:
        return self.return_based.bias

    def consistent(self, z: float = 3.0) -> bool:
        return abs(self.difference) <= z * self.joint_stderr + self.bias_bound


def estimate_q(
    law: StepLaw,
    horizon: int,
    reps: int,
    key: RngKey,
    n_range: int | None = None,
    reps_range: int | None = None,
    workers: int = 1,
) -> QReport:
    """Both estimators of q (return-based and range-slope) from independent walks."""
    n_range = n_range or 10 * horizon
    reps_range = reps_range or max(2, reps // 100)
    ret = estimate_escape_probability(law, horizon, reps, key, workers)
    rng = estimate_range_slope(law, n_range, reps_range, key.with_substream(key.substream + 1), workers)
    return QReport(ret, rng, horizon, n_range)
