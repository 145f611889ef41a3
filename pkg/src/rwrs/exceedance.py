"""Rescaled point process of exceedances along a walk.

One point per first visit: (tau_k / n, (xi(S_tau_k) - b_m) / a_m) with
m = floor(q n).  Marks are stored unclipped; boxes do the filtering.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .norming import TailMeasure, norming
from .scenery import ScenerySpec, scenery_value
from .stable_walk import WalkSummary


@dataclass(frozen=True)
class PointPattern:
    times: np.ndarray
    values: np.ndarray
    n: int
    m_n: int
    seed: int | None = None

    def __len__(self) -> int:
        return int(self.times.size)

    def to_record(self, min_value: float | None = None) -> dict:
        keep = slice(None) if min_value is None else self.values > min_value
        pts = np.column_stack([self.times[keep], self.values[keep]])
        return {"n": self.n, "m_n": self.m_n, "seed": self.seed, "points": pts.tolist()}

    @classmethod
    def from_record(cls, rec: dict) -> "PointPattern":
        pts = np.asarray(rec["points"], dtype=float).reshape(-1, 2)
        return cls(pts[:, 0].copy(), pts[:, 1].copy(), int(rec["n"]), int(rec["m_n"]), rec.get("seed"))


@dataclass(frozen=True)
class Box:
    """(a, b] x A with A a finite union of disjoint half-open intervals (lo, hi]."""

    t_interval: tuple[float, float]
    value_set: tuple[tuple[float, float], ...]

    def __post_init__(self):
        a, b = self.t_interval
        if not 0.0 <= a < b <= 1.0:
            raise ValueError("time interval must satisfy 0 <= a < b <= 1")
        ivs = sorted((float(lo), float(hi)) for lo, hi in self.value_set)
        for lo, hi in ivs:
            if not lo < hi:
                raise ValueError("empty value interval")
        for (_, h1), (l2, _) in zip(ivs, ivs[1:]):
            if l2 < h1:
                raise ValueError("value intervals overlap")
        object.__setattr__(self, "t_interval", (float(a), float(b)))
        object.__setattr__(self, "value_set", tuple(ivs))

    @classmethod
    def upper(cls, a: float, b: float, x: float) -> "Box":
        return cls((a, b), ((x, math.inf),))

    def intensity(self, measure: TailMeasure) -> float:
        """Lebesgue x nu mass of the box."""
        a, b = self.t_interval
        return (b - a) * sum(measure.interval(lo, hi) for lo, hi in self.value_set)

    def as_dict(self) -> dict:
        return {
            "t": list(self.t_interval),
            "v": [[lo, None if hi == math.inf else hi] for lo, hi in self.value_set],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        vs = tuple((float(lo), math.inf if hi is None else float(hi)) for lo, hi in d["v"])
        return cls(tuple(d["t"]), vs)


class ScalingTooSmall(ValueError):
    pass


def scaling(q_hat: float, n: int) -> int:
    m = math.floor(q_hat * n)
    if m < 2:
        raise ScalingTooSmall("scaling too small")
    return m


def build_pattern(walk: WalkSummary, spec: ScenerySpec, q_hat: float, n: int, seed: int | None = None) -> PointPattern:
    if not 0.0 < q_hat <= 1.0:
        raise ValueError("q_hat must lie in (0, 1]")
    if walk.n != n:
        raise ValueError("walk horizon differs from n")
    m_n = scaling(q_hat, n)
    nm = norming(spec, m_n)
    xi = np.atleast_1d(scenery_value(spec, walk.first_visit_sites))
    return PointPattern(walk.tau / n, nm.normalize(xi), n, m_n, seed)


def box_mask(times: np.ndarray, values: np.ndarray, box: Box) -> np.ndarray:
    a, b = box.t_interval
    mask = np.zeros(times.shape, dtype=bool)
    for lo, hi in box.value_set:
        mask |= (values > lo) & (values <= hi)
    return mask & (times > a) & (times <= b)


def count_in_box(pattern: PointPattern, box: Box) -> int:
    return int(np.count_nonzero(box_mask(pattern.times, pattern.values, box)))


def path_max(walk: WalkSummary, spec: ScenerySpec) -> float:
    """Maximum of the scenery over the visited sites."""
    return float(np.max(scenery_value(spec, walk.first_visit_sites)))


def write_patterns(path, patterns: Iterable[PointPattern], min_value: float | None = None) -> None:
    with open(path, "w") as fh:
        for p in patterns:
            fh.write(json.dumps(p.to_record(min_value), sort_keys=True) + "\n")


def read_patterns(path) -> Iterator[PointPattern]:
    with open(path) as fh:
        for line in fh:
            if line.strip():
                yield PointPattern.from_record(json.loads(line))
