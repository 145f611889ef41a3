"""Replicated exceedance experiments and the statistical checks run on them.

Each replication records box counts, void indicators, path-maximum indicators
and time-block exceedance counts.  Verdicts pass when
|statistic - target| <= tolerance.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .diagnostics import block_length, default_sequences, extremal_index_estimators
from .exceedance import Box, box_mask, scaling
from .norming import norming, tail_measure
from .scenery import ScenerySpec, marginal_tail, scenery_value
from .simkit import SCENERY, McEstimate, RngKey, ordered_map
from .stable_walk import UNIT, StepLaw, _positions

MIN_VERDICT_REPS = 100
THETA_TOLERANCE = 0.05

DEFAULT_BOXES = (
    Box.upper(0.0, 1.0, 1.0),
    Box.upper(0.0, 0.5, 1.0),
    Box.upper(0.5, 1.0, 1.0),
    Box((0.0, 1.0), ((1.0, 2.0),)),
    Box.upper(0.2, 0.7, 2.0),
)


@dataclass(frozen=True)
class ExperimentConfig:
    law: StepLaw
    spec: ScenerySpec
    n: int
    reps: int
    boxes: tuple[Box, ...] = DEFAULT_BOXES
    levels: tuple[float, ...] = (1.0,)
    q_hat: McEstimate = McEstimate(1.0, 0.0, 2)
    master_seed: int = 0
    negative_control: bool = False

    @property
    def key(self) -> RngKey:
        return RngKey(self.master_seed)


@dataclass(frozen=True)
class TestVerdict:
    __test__ = False  # not a pytest class

    name: str
    statistic: float
    target: float
    tolerance: float
    passed: bool
    stderr: float = 0.0

    @classmethod
    def judge(cls, name: str, statistic: float, target: float, tolerance: float, stderr: float = 0.0) -> "TestVerdict":
        ok = bool(np.isfinite(statistic) and abs(statistic - target) <= tolerance)
        return cls(name, float(statistic), float(target), float(tolerance), ok, float(stderr))


# ---------------------------------------------------------------------------
# replications


def _replicate(args) -> dict:
    cfg, r = args
    n = cfg.n
    kr = cfg.key.replicate(r)
    scen = cfg.spec.bind(kr.with_substream(SCENERY))
    if cfg.law.family == UNIT:
        sites = np.arange(1, n + 1, dtype=np.int64)
        xi_sorted = scenery_value(scen, sites)
        first = sites - 1
        inverse = first
    else:
        positions = _positions(cfg.law, n, kr)
        sites, first, inverse = np.unique(positions, return_index=True, return_inverse=True)
        xi_sorted = scenery_value(scen, sites)
    order = np.argsort(first, kind="stable")
    tau = first[order] + 1
    xi_first = xi_sorted[order]
    xi_time = xi_sorted[inverse]

    m_n = scaling(cfg.q_hat.mean, n)
    nm_m = norming(cfg.spec, m_n)
    nm_n = norming(cfg.spec, n)
    t = tau / n
    v = nm_m.normalize(xi_first)
    counts = [int(np.count_nonzero(box_mask(t, v, b))) for b in cfg.boxes]
    path_max = float(xi_first.max())
    r_n = block_length(n, default_sequences(n)[0])
    starts = np.arange(0, n, r_n)
    blocks = [np.add.reduceat((xi_time > nm_n.threshold(x)).astype(np.int64), starts).tolist() for x in cfg.levels]
    R = int(tau.size)
    k_mid = max(1, R // 2)
    in_first = box_mask(t, v, cfg.boxes[0]) if cfg.boxes else np.zeros(0, bool)
    return {
        "rep": r,
        "range": R,
        "m_n": m_n,
        "counts": counts,
        "voids": [int(c == 0) for c in counts],
        "max_le_m": [int(path_max <= nm_m.threshold(x)) for x in cfg.levels],
        "max_le_n": [int(path_max <= nm_n.threshold(x)) for x in cfg.levels],
        "block_exceedances": blocks,
        "visit_mark": [[float(t[0]), float(v[0])], [float(t[k_mid - 1]), float(v[k_mid - 1])]],
        "box0_times": t[in_first].tolist(),
    }


def run_experiment(config: ExperimentConfig, workers: int = 1) -> list[dict]:
    """One record per replication, in replication order; deterministic in the seed."""
    return ordered_map(_replicate, [(config, r) for r in range(config.reps)], workers)


def write_records(path, records: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_records(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


@dataclass
class RecordSet:
    """Records together with the configuration that produced them."""

    records: list
    config: ExperimentConfig

    def __len__(self) -> int:
        return len(self.records)

    def _box_index(self, box: Box) -> int:
        try:
            return list(self.config.boxes).index(box)
        except ValueError:
            raise KeyError(f"box {box} was not recorded") from None

    def _level_index(self, x: float) -> int:
        try:
            return list(self.config.levels).index(x)
        except ValueError:
            raise KeyError(f"level {x} was not recorded") from None

    def counts(self, box: Box) -> np.ndarray:
        i = self._box_index(box)
        return np.array([rec["counts"][i] for rec in self.records], dtype=float)

    def voids(self, box: Box) -> np.ndarray:
        i = self._box_index(box)
        return np.array([rec["voids"][i] for rec in self.records], dtype=float)

    def max_below(self, x: float, threshold: str = "horizon") -> np.ndarray:
        i = self._level_index(x)
        field_name = "max_le_n" if threshold == "horizon" else "max_le_m"
        return np.array([rec[field_name][i] for rec in self.records], dtype=float)

    def block_exceedances(self, x: float) -> list:
        i = self._level_index(x)
        return [rec["block_exceedances"][i] for rec in self.records]

    def visit_mark_pairs(self, which: int) -> np.ndarray:
        return np.array([rec["visit_mark"][which] for rec in self.records], dtype=float)

    def box0_times(self) -> np.ndarray:
        return np.array([t for rec in self.records for t in rec["box0_times"]], dtype=float)


def _require(records: RecordSet) -> None:
    if len(records) < MIN_VERDICT_REPS:
        raise ValueError("insufficient replications")


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def _proportion_se(x: np.ndarray, p0: float) -> tuple[float, float]:
    """Empirical frequency and its standard error under the null p0."""
    return float(x.mean()), math.sqrt(max(p0 * (1.0 - p0), 0.0) / x.size)


def _q_rel(q_hat: McEstimate | None) -> float:
    if q_hat is None or q_hat.mean <= 0:
        return 0.0
    return q_hat.stderr / q_hat.mean


# ---------------------------------------------------------------------------
# closed-form targets for the unit walk


def unit_walk_targets(spec: ScenerySpec, n: int, box: Box) -> tuple[float, float]:
    """Exact (mean count, void probability) of a box for the unit walk on an
    i.i.d. scenery; here m_n = n and the points are the first n sites."""
    a, b = box.t_interval
    sites = math.floor(b * n + 1e-9) - math.floor(a * n + 1e-9)
    nm = norming(spec, n)
    p = math.fsum(
        marginal_tail(spec, nm.threshold(lo)) - (0.0 if hi == math.inf else marginal_tail(spec, nm.threshold(hi)))
        for lo, hi in box.value_set
    )
    return sites * p, (1.0 - p) ** sites


def _closed_form(config: ExperimentConfig) -> bool:
    return config.law.family == UNIT and config.spec.is_iid and math.floor(config.q_hat.mean * config.n) == config.n


# ---------------------------------------------------------------------------
# verdicts


def mean_count_test(records: RecordSet, box: Box, expected: float, q_hat: McEstimate | None = None) -> TestVerdict:
    """Obligation (i): E #(Phi_n in I) against m x nu(I)."""
    _require(records)
    mean, se = _mean_se(records.counts(box))
    prop = expected * _q_rel(q_hat)
    total = math.hypot(se, prop)
    return TestVerdict.judge(f"mean_count{_tag(box)}", mean, expected, 3 * total, total)


def void_probability_test(records: RecordSet, box: Box, expected: float, q_hat: McEstimate | None = None) -> TestVerdict:
    """Obligation (ii): P(#(Phi_n in I) = 0) against exp(-m x nu(I))."""
    _require(records)
    mean, se = _proportion_se(records.voids(box), expected)
    mu = -math.log(expected) if expected > 0 else 0.0
    prop = mu * expected * _q_rel(q_hat)
    total = math.hypot(se, prop)
    return TestVerdict.judge(f"void{_tag(box)}", mean, expected, 3 * total, total)


def dispersion_test(records: RecordSet, box: Box) -> TestVerdict:
    """Variance-to-mean ratio of box counts against 1 (Poisson)."""
    _require(records)
    c = records.counts(box)
    mean = c.mean()
    ratio = c.var(ddof=1) / mean if mean > 0 else math.nan
    se = math.sqrt(2.0 / (c.size - 1))
    return TestVerdict.judge(f"dispersion{_tag(box)}", ratio, 1.0, 3 * se, se)


def correlation_test(records: RecordSet, box1: Box, box2: Box) -> TestVerdict:
    """Counts in disjoint boxes are uncorrelated: |r| <= 3 / sqrt(reps)."""
    _require(records)
    c1, c2 = records.counts(box1), records.counts(box2)
    if c1.std() == 0 or c2.std() == 0:
        r = math.nan
    else:
        r = float(np.corrcoef(c1, c2)[0, 1])
    se = 1.0 / math.sqrt(c1.size)
    return TestVerdict.judge(f"correlation{_tag(box1)}{_tag(box2)}", r, 0.0, 3 * se, se)


def void_union_test(records: RecordSet, box1: Box, box2: Box, union: Box) -> TestVerdict:
    """P(void on the union) against the product of the two void probabilities."""
    _require(records)
    vu, v1, v2 = records.voids(union), records.voids(box1), records.voids(box2)
    m1, m2 = v1.mean(), v2.mean()
    diff = vu.mean() - m1 * m2
    influence = vu - m2 * v1 - m1 * v2
    se = float(influence.std(ddof=1) / math.sqrt(vu.size))
    return TestVerdict.judge(f"void_union{_tag(union)}", diff, 0.0, 3 * se, se)


def max_limit_test(records: RecordSet, x: float, q_hat: McEstimate, expected: float | None = None) -> TestVerdict:
    """P(M <= u_n(x)) against exp(-q nu(x, inf)), threshold normed at the horizon n."""
    _require(records)
    nu = tail_measure(records.config.spec).tail(x)
    if expected is None:
        expected = math.exp(-q_hat.mean * nu)
        prop = nu * expected * q_hat.stderr
    else:
        prop = 0.0
    mean, se = _proportion_se(records.max_below(x, "horizon"), expected)
    total = math.hypot(se, prop)
    return TestVerdict.judge(f"max_limit[x={x:g}]", mean, expected, 3 * total, total)


def uniformity_test(records: RecordSet) -> TestVerdict:
    """KS distance of pooled time coordinates in the first box from U(0, 1], 99% level."""
    a, b = records.config.boxes[0].t_interval
    t = records.box0_times()
    if t.size == 0:
        return TestVerdict.judge("time_uniformity", math.nan, 0.0, 0.0)
    d = stats.kstest((t - a) / (b - a), "uniform").statistic
    return TestVerdict.judge("time_uniformity", d, 0.0, 1.63 / math.sqrt(t.size), 1.0 / math.sqrt(t.size))


def _quartile_bins(x: np.ndarray) -> np.ndarray:
    edges = np.unique(np.quantile(x, [0.25, 0.5, 0.75]))
    return np.searchsorted(edges, x, side="right")


def independence_test(pairs: np.ndarray, name: str = "independence", level: float = 0.99) -> TestVerdict:
    """Chi-square independence of the two columns on a 4x4 quartile grid."""
    pairs = np.asarray(pairs, dtype=float)
    bx, by = _quartile_bins(pairs[:, 0]), _quartile_bins(pairs[:, 1])
    table = np.zeros((bx.max() + 1, by.max() + 1))
    np.add.at(table, (bx, by), 1)
    table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
    dof = (table.shape[0] - 1) * (table.shape[1] - 1)
    if dof == 0:
        # a degenerate margin is trivially independent
        return TestVerdict.judge(name, 0.0, 0.0, 0.0)
    stat = stats.chi2_contingency(table, correction=False)[0]
    return TestVerdict.judge(name, stat, 0.0, float(stats.chi2.ppf(level, dof)))


def theta_verdicts(records: RecordSet, x: float, q_hat: McEstimate, tolerance: float = THETA_TOLERANCE) -> list[TestVerdict]:
    nu = tail_measure(records.config.spec).tail(x)
    tb, tl = extremal_index_estimators(records.max_below(x, "horizon"), records.block_exceedances(x), nu)
    return [
        TestVerdict.judge(f"theta_blocks[x={x:g}]", tb, q_hat.mean, tolerance),
        TestVerdict.judge(f"theta_logs[x={x:g}]", tl, q_hat.mean, tolerance),
    ]


def _tag(box: Box) -> str:
    a, b = box.t_interval
    vs = "u".join(f"({lo:g},{hi:g}]" for lo, hi in box.value_set)
    return f"[({a:g},{b:g}]x{vs}]"


def poisson_suite(records: RecordSet) -> list[TestVerdict]:
    """Every verdict the poisson command reports for one experiment."""
    cfg = records.config
    measure = tail_measure(cfg.spec)
    q = cfg.q_hat
    closed = _closed_form(cfg)
    out = []
    for box in cfg.boxes:
        if closed:
            mean_t, void_t = unit_walk_targets(cfg.spec, cfg.n, box)
            out.append(mean_count_test(records, box, mean_t))
            out.append(void_probability_test(records, box, void_t))
        else:
            mu = box.intensity(measure)
            out.append(mean_count_test(records, box, mu, q))
            out.append(void_probability_test(records, box, math.exp(-mu), q))
        out.append(dispersion_test(records, box))
    halves = [b for b in cfg.boxes if b.value_set == cfg.boxes[0].value_set and b.t_interval in ((0.0, 0.5), (0.5, 1.0))]
    if len(halves) == 2 and cfg.boxes[0].t_interval == (0.0, 1.0):
        out.append(correlation_test(records, halves[0], halves[1]))
        out.append(void_union_test(records, halves[0], halves[1], cfg.boxes[0]))
    for x in cfg.levels:
        if closed:
            nm = norming(cfg.spec, cfg.n)
            exact = (1.0 - marginal_tail(cfg.spec, nm.threshold(x))) ** cfg.n
            out.append(max_limit_test(records, x, q, expected=exact))
        else:
            out.append(max_limit_test(records, x, q))
        out.extend(theta_verdicts(records, x, q))
    out.append(uniformity_test(records))
    out.append(independence_test(records.visit_mark_pairs(0), "visit_mark_independence[k=1]"))
    out.append(independence_test(records.visit_mark_pairs(1), "visit_mark_independence[k=R/2]"))
    return out


def write_verdicts(path, verdicts: Sequence[TestVerdict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "statistic", "target", "tolerance", "stderr", "pass"])
        for v in verdicts:
            w.writerow([v.name, repr(v.statistic), repr(v.target), repr(v.tolerance), repr(v.stderr), int(v.passed)])
