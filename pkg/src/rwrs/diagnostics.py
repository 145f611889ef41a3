"""Computable functionals for the mixing and anti-clustering conditions.

Conditions are diagnosed, never certified.  Whenever the scenery has a closed
form joint CDF (i.i.d. families and moving maxima), probabilities conditional
on the walk are evaluated exactly and only the walk is simulated; correlated
Gaussian sceneries fall back to nested Monte Carlo over scenery draws.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .norming import norming
from .scenery import (
    MOVING_MAX,
    ScenerySpec,
    has_closed_form_cdf,
    joint_cdf,
    joint_exceedance,
    marginal_tail,
    scenery_value,
)
from .simkit import INNER, SCENERY, McEstimate, RngKey, aggregate, ordered_map
from .stable_walk import StepLaw, _positions, generate_walk


def _iroot(n: int, k: int) -> int:
    r = int(round(n ** (1.0 / k)))
    while r**k > n:
        r -= 1
    while (r + 1) ** k <= n:
        r += 1
    return r


def default_sequences(n: int) -> tuple[int, int]:
    """(k_n, ell_n) = (floor(n^(1/3)), floor(n^(1/4)))."""
    if n < 8:
        raise ValueError("n must be >= 8")
    return _iroot(n, 3), _iroot(n, 4)


def block_length(n: int, k_n: int) -> int:
    """r_n = floor(n / (k_n - 1)) + 1."""
    if k_n < 2:
        raise ValueError("k_n must be >= 2")
    return n // (k_n - 1) + 1


@dataclass(frozen=True)
class BlockScheme:
    n: int
    k_n: int
    ell_n: int
    r_n: int
    K_n: int
    blocks: list = field(repr=False)
    stripes: list = field(repr=False)


def build_blocks(sites: Sequence[int], k_n: int, ell_n: int, n: int | None = None) -> BlockScheme:
    """Split increasing sites into K_n consecutive blocks of size r_n; stripes are
    the ell_n largest sites of each block (empty for a short last block)."""
    s = np.asarray(sites, dtype=np.int64)
    if s.size > 1 and np.any(np.diff(s) <= 0):
        raise ValueError("sites must be strictly increasing")
    n = s.size if n is None else n
    r_n = block_length(n, k_n)
    K_n = s.size // r_n + 1
    blocks = [s[j * r_n : (j + 1) * r_n] for j in range(K_n)]
    stripes = [b[-ell_n:] if ell_n and b.size >= ell_n else b[:0] for b in blocks]
    return BlockScheme(n, k_n, ell_n, r_n, K_n, blocks, stripes)


# ---------------------------------------------------------------------------
# closed-form conditional probabilities


def _window_params(spec: ScenerySpec, u: float) -> tuple[int, float]:
    """(window w, rate lam) with P(xi <= u on T) = exp(-lam |W_w(T)|)."""
    if spec.family == MOVING_MAX:
        return spec.m, (u ** (-spec.beta) if u > 0 else math.inf)
    p = marginal_tail(spec, u)
    return 1, (-math.log1p(-p) if p < 1 else math.inf)


def _cover(sites: np.ndarray, w: int) -> np.ndarray:
    if sites.size == 0:
        return sites
    return np.unique((sites[:, None] + np.arange(w)).ravel())


def _uncovered(points0: np.ndarray, w: int, cover: np.ndarray) -> np.ndarray:
    """For each start s, #{s..s+w-1} outside ``cover``."""
    pts = points0[:, None] + np.arange(w)
    return w - np.isin(pts, cover).sum(axis=1)


def _two_exceed_given_none(a: int, b: np.ndarray, conditioning: np.ndarray, w: int, lam: float) -> np.ndarray:
    """P(xi(a) > u, xi(b_j) > u, xi <= u on ``conditioning``) for window-union sceneries."""
    cover = _cover(np.unique(conditioning), w)
    da = int(_uncovered(np.array([a]), w, cover)[0])
    db = _uncovered(b, w, cover)
    # points of W(a) shared with W(b) and outside the cover
    pts = b[:, None] + np.arange(w)
    shared = ((pts >= a) & (pts <= a + w - 1) & ~np.isin(pts, cover)).sum(axis=1)
    dab = da + db - shared
    base = math.exp(-lam * cover.size)
    return base * (-math.expm1(-lam * da) - np.expm1(-lam * db) + np.expm1(-lam * dab))


# ---------------------------------------------------------------------------
# D' sums


def dprime_sum_scenery(spec: ScenerySpec, n: int, u: float, k_n: int) -> float:
    """n * sum_{s=1}^{floor(n/k_n)} P(xi(0) > u, xi(s) > u)."""
    L = n // k_n
    p = marginal_tail(spec, u)
    near = min(L, spec.window - 1)
    total = math.fsum(joint_exceedance(spec, s, u) for s in range(1, near + 1))
    return n * (total + (L - near) * p * p)


def _lag_joint(spec: ScenerySpec, lags: np.ndarray, u: float, p: float) -> np.ndarray:
    out = np.full(lags.shape, p * p)
    out[lags == 0] = p
    for lag in range(1, spec.window):
        out[lags == lag] = joint_exceedance(spec, lag, u)
    return out


def _dprime_rep(args) -> float:
    law, spec, n, u, L, key, r = args
    S = _positions(law, L, key.replicate(r))
    p = marginal_tail(spec, u)
    lags = np.abs(S[1:] - S[0])
    return n * math.fsum(_lag_joint(spec, lags, u, p).tolist())


def dprime_sum_rwrs(law: StepLaw, spec: ScenerySpec, n: int, x: float, k_n: int, reps: int, key: RngKey, workers: int = 1) -> McEstimate:
    """n * sum_{i=2}^{floor(n/k_n)} P(xi(S_1) > u_n, xi(S_i) > u_n), u_n = u_n(x).

    The scenery part is integrated exactly given the walk; only walks are simulated.
    """
    u = norming(spec, n).threshold(x)
    L = n // k_n
    if L < 2:
        return McEstimate(0.0, 0.0, reps)
    vals = ordered_map(_dprime_rep, [(law, spec, n, u, L, key, r) for r in range(reps)], workers)
    return aggregate(vals)


# ---------------------------------------------------------------------------
# D^(k) ladder


def _dk_exact(S: np.ndarray, ks: Sequence[int], w: int, lam: float, n: int) -> list[float]:
    out = []
    for k in ks:
        b = S[k:]
        if b.size == 0:
            out.append(0.0)
            continue
        terms = _two_exceed_given_none(int(S[0]), b, S[1:k], w, lam)
        out.append(n * math.fsum(terms.tolist()))
    return out


def _dk_nested(S: np.ndarray, ks: Sequence[int], spec: ScenerySpec, u: float, n: int, key: RngKey, inner: int) -> list[float]:
    counts = np.zeros(len(ks))
    for d in range(inner):
        xi = scenery_value(spec.bind(key.replicate(d).with_substream(INNER)), S) > u
        if not xi[0]:
            continue
        for i, k in enumerate(ks):
            if not xi[1:k].any():
                counts[i] += np.count_nonzero(xi[k:])
    return (n * counts / inner).tolist()


def _dk_rep(args) -> list[float]:
    law, spec, n, u, r_n, ks, key, r, inner = args
    kr = key.replicate(r)
    S = _positions(law, r_n, kr)
    if has_closed_form_cdf(spec):
        w, lam = _window_params(spec, u)
        return _dk_exact(S, ks, w, lam, n)
    return _dk_nested(S, ks, spec, u, n, kr, inner)


def dk_ladder(
    law: StepLaw,
    spec: ScenerySpec,
    n: int,
    ks: Sequence[int],
    x: float,
    k_n: int,
    reps: int,
    key: RngKey,
    workers: int = 1,
    inner_reps: int = 200,
) -> list[McEstimate]:
    """D^(k) sums for several k on common walks (and common scenery draws).

    Each entry estimates n * sum_{j=k+1}^{r_n} P(xi(S_1) > u_n >= M'_{2,k}, xi(S_j) > u_n).
    With common random numbers the ladder is nonincreasing in k.
    """
    ks = sorted(int(k) for k in ks)
    if ks[0] < 1:
        raise ValueError("k must be >= 1")
    u = norming(spec, n).threshold(x)
    r_n = block_length(n, k_n)
    rows = ordered_map(_dk_rep, [(law, spec, n, u, r_n, ks, key, r, inner_reps) for r in range(reps)], workers)
    cols = list(zip(*rows))
    return [aggregate(c) for c in cols]


def dk_sum_rwrs(law: StepLaw, spec: ScenerySpec, n: int, k: int, x: float, k_n: int, reps: int, key: RngKey, workers: int = 1) -> McEstimate:
    return dk_ladder(law, spec, n, [k], x, k_n, reps, key, workers)[0]


# ---------------------------------------------------------------------------
# O'Brien product


def _block_terms_exact(block: np.ndarray, w: int, lam: float) -> np.ndarray:
    """P(xi(s_i) > u >= max xi over the later sites of the block), i = 1..r."""
    if block.size == 0:
        return block.astype(float)
    gaps = np.minimum(np.diff(block), w)
    # |W(s_i..s_end)| for every suffix, plus the empty suffix
    suffix = np.concatenate([w + np.cumsum(gaps[::-1])[::-1], [w], [0]]) if gaps.size else np.array([w, 0])
    cdf = np.exp(-lam * suffix)
    return cdf[1:] - cdf[:-1]


def _block_terms_nested(block: np.ndarray, spec: ScenerySpec, u: float, key: RngKey, inner: int) -> np.ndarray:
    acc = np.zeros(block.size)
    for d in range(inner):
        xi = scenery_value(spec.bind(key.replicate(d).with_substream(INNER)), block)
        later_max = np.concatenate([np.maximum.accumulate(xi[::-1])[::-1][1:], [-np.inf]])
        acc += (xi > u) & (later_max <= u)
    return acc / inner


def _obrien_rep(args) -> tuple[float, float]:
    law, spec, n, u, k_n, ell_n, key, r, inner, method = args
    kr = key.replicate(r)
    walk = generate_walk(law, n, kr)
    sites = np.unique(walk.first_visit_sites)
    lhs = float(np.max(scenery_value(spec.bind(kr.with_substream(SCENERY)), sites)) <= u)
    scheme = build_blocks(sites, k_n, ell_n, n)
    if method == "exact":
        w, lam = _window_params(spec, u)
        terms = [_block_terms_exact(b, w, lam) for b in scheme.blocks]
    else:
        terms = [_block_terms_nested(b, spec, u, kr, inner) for b in scheme.blocks]
    total = math.fsum(t for block in terms for t in block.tolist())
    return lhs, math.exp(-total)


def obrien_product(
    law: StepLaw,
    spec: ScenerySpec,
    n: int,
    x: float,
    k_n: int,
    reps: int,
    key: RngKey,
    workers: int = 1,
    inner_reps: int = 100,
    method: str = "auto",
    ell_n: int | None = None,
) -> tuple[McEstimate, McEstimate]:
    """(P(M <= u_n), E exp(-sum_j sum_i P(xi(S_(i)) > u_n >= M'_(i+1, end of block))))

    Sites are visited sites in increasing order, blocked as in ``build_blocks``;
    the inner probabilities are conditional on the walk.  ``method`` selects
    exact evaluation or nested scenery draws (``auto``: exact when available).
    """
    if method == "auto":
        method = "exact" if has_closed_form_cdf(spec) else "nested"
    if method == "exact" and not has_closed_form_cdf(spec):
        raise ValueError("exact inner probabilities unavailable for this scenery")
    u = norming(spec, n).threshold(x)
    ell = default_sequences(n)[1] if ell_n is None else ell_n
    rows = ordered_map(_obrien_rep, [(law, spec, n, u, k_n, ell, key, r, inner_reps, method) for r in range(reps)], workers)
    lhs, rhs = zip(*rows)
    return aggregate(lhs), aggregate(rhs)


# ---------------------------------------------------------------------------
# extremal index


class LevelTooHigh(ValueError):
    pass


def extremal_index_estimators(max_indicators, block_exceedance_counts, tau_level: float) -> tuple[float, float]:
    """(blocks estimator, log estimator) of the extremal index.

    ``max_indicators[r]`` is 1 when the path maximum of replication r stays at
    or below the level; ``block_exceedance_counts[r]`` holds exceedance counts
    of consecutive time blocks.
    """
    if tau_level <= 0:
        raise ValueError("tau_level must be positive")
    counts = np.concatenate([np.asarray(c, dtype=np.int64).ravel() for c in block_exceedance_counts])
    total = int(counts.sum())
    if total == 0:
        raise LevelTooHigh("level too high for horizon")
    theta_blocks = np.count_nonzero(counts) / total
    ind = np.asarray(max_indicators, dtype=float)
    p_hat = math.fsum(ind.tolist()) / ind.size
    theta_logs = math.inf if p_hat == 0 else -math.log(p_hat) / tau_level
    return float(min(max(theta_blocks, 0.0), 1.0)), float(min(max(theta_logs, 0.0), 1.0))


# ---------------------------------------------------------------------------
# epsilon bounds and the D(u_n) surrogate


@dataclass(frozen=True)
class EpsilonBounds:
    eps1: float
    eps2: float
    c: float = 1.0

    @property
    def total(self) -> float:
        return self.eps1 + self.eps2


def epsilon_bounds(n: int, k_n: int, ell_n: int, alpha_mix: float, dprime_value: float, c: float = 1.0) -> EpsilonBounds:
    if min(n, k_n, ell_n, alpha_mix, dprime_value, c) < 0:
        raise ValueError("inputs must be nonnegative")
    eps1 = c * (k_n * ell_n / n + k_n * alpha_mix)
    eps2 = c * (1.0 / k_n + dprime_value)
    return EpsilonBounds(eps1, eps2, c)


def _index_grid(ell: int, max_p: int) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for p in range(1, max_p + 1):
        for pp in range(1, max_p + 1):
            for spacing in (1, 2, 3):
                for gap in sorted({ell, ell + 1, 2 * ell}):
                    first = np.arange(p) * spacing
                    start = first[-1] + max(gap, 1)
                    out.append((first, start + np.arange(pp) * spacing))
    return out


def alpha_mixing_surrogate(
    spec: ScenerySpec,
    n: int,
    ell: int,
    u: float,
    max_p: int = 3,
    key: RngKey | None = None,
    inner_reps: int = 20000,
) -> float:
    """max |F_{I u J}(u) - F_I(u) F_J(u)| over a fixed grid of index tuples with
    p, p' <= max_p and gap >= ell.  Closed-form CDFs where available, otherwise
    empirical CDFs from ``inner_reps`` scenery draws."""
    if max_p > 3:
        raise ValueError("max_p must be <= 3")
    grid = _index_grid(ell, max_p)
    if has_closed_form_cdf(spec):
        defects = [abs(joint_cdf(spec, np.concatenate([i, j]), u) - joint_cdf(spec, i, u) * joint_cdf(spec, j, u)) for i, j in grid]
        return float(max(defects))
    key = key or RngKey(0, n, INNER)
    span = max(int(j[-1]) for _, j in grid) + 1
    below = np.empty((inner_reps, span), dtype=bool)
    for d in range(inner_reps):
        below[d] = scenery_value(spec.bind(key.replicate(d)), np.arange(span)) <= u
    defects = []
    for i, j in grid:
        fi = below[:, i].all(axis=1)
        fj = below[:, j].all(axis=1)
        defects.append(abs((fi & fj).mean() - fi.mean() * fj.mean()))
    return float(max(defects))


# ---------------------------------------------------------------------------
# reporting


@dataclass
class DiagnosticReport:
    rows: list = field(default_factory=list)

    def add(self, n: int, functional: str, estimate: float, stderr: float = 0.0) -> None:
        self.rows.append((int(n), functional, float(estimate), float(stderr)))

    def add_estimate(self, n: int, functional: str, est: McEstimate) -> None:
        self.add(n, functional, est.mean, est.stderr)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "functional", "estimate", "stderr"])
            for n, name, est, se in self.rows:
                w.writerow([n, name, repr(est), repr(se)])
