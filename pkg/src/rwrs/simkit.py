"""Counter-based randomness and Monte Carlo aggregation.

Every random quantity in the package is a pure function of an ``RngKey`` and a
64-bit counter.  Walk steps use the step index as counter, sceneries use the
site coordinate, so any value can be regenerated in isolation and in any order.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from statistics import NormalDist
from typing import Callable, Iterable, Sequence

import numpy as np

_U64 = np.uint64
_MASK64 = (1 << 64) - 1
_M1 = _U64(0xFF51AFD7ED558CCD)
_M2 = _U64(0xC4CEB9FE1A85EC53)
_M3 = _U64(0xBF58476D1CE4E5B9)
_M4 = _U64(0x94D049BB133111EB)
_S33 = _U64(33)
_S30 = _U64(30)
_S27 = _U64(27)
_S31 = _U64(31)
_S11 = _U64(11)
_GOLDEN = 0x9E3779B97F4A7C15
_TWO_M53 = 2.0 ** -53

# substream role tags
STEP = 0
STEP_TAIL = 1 << 20
SCENERY = 2 << 20
INNER = 3 << 20


def _murmur(x):
    x = x ^ (x >> _S33)
    x = x * _M1
    x = x ^ (x >> _S33)
    x = x * _M2
    return x ^ (x >> _S33)


def _stafford13(x):
    x = x ^ (x >> _S30)
    x = x * _M3
    x = x ^ (x >> _S27)
    x = x * _M4
    return x ^ (x >> _S31)


def _mix_int(x: int) -> int:
    """Scalar splitmix64 finaliser on Python ints."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _as_u64(counter) -> np.ndarray:
    c = np.asarray(counter)
    if c.dtype == np.uint64:
        return np.atleast_1d(c)
    return np.atleast_1d(c.astype(np.int64)).view(np.uint64)


@dataclass(frozen=True)
class RngKey:
    """Identity of one random stream.

    ``stream_id`` is usually a replication index, ``substream`` a role tag
    (steps, scenery innovations, inner draws).
    """

    master_seed: int
    stream_id: int = 0
    substream: int = 0

    def __post_init__(self):
        if not 0 <= self.substream < 2**32:
            raise ValueError("substream must fit in 32 bits")

    def words(self) -> tuple[np.uint64, np.uint64]:
        h = _mix_int(self.master_seed & _MASK64)
        h = _mix_int(h ^ (self.stream_id & _MASK64))
        h = _mix_int(h ^ ((self.substream * _GOLDEN) & _MASK64))
        return _U64(h), _U64(_mix_int(h ^ 0x5851F42D4C957F2D))

    def with_substream(self, substream: int) -> "RngKey":
        return replace(self, substream=substream)

    def replicate(self, index: int) -> "RngKey":
        """Key of replication ``index`` below this key (substream reset to 0)."""
        folded = _mix_int(
            _mix_int(self.master_seed & _MASK64) ^ _mix_int(self.stream_id & _MASK64) ^ self.substream
        )
        return RngKey(folded, int(index), 0)


def random_bits(key: RngKey, counter) -> np.ndarray:
    """64 random bits per counter value (vectorised; returns a uint64 array)."""
    k1, k2 = key.words()
    return bits_from_words(k1, k2, counter)


def bits_from_words(k1, k2, counter) -> np.ndarray:
    # k1/k2 may be arrays broadcasting against counter (one key per row)
    c = _as_u64(counter)
    return _stafford13(_murmur(c ^ k1) + k2)


def uniform(key: RngKey, counter) -> np.ndarray:
    """Uniform variates on [0, 1) with 53-bit resolution."""
    return (random_bits(key, counter) >> _S11) * _TWO_M53


def uniform_open(key: RngKey, counter) -> np.ndarray:
    """Uniform variates on the open interval (0, 1)."""
    return ((random_bits(key, counter) >> _S11) + 0.5) * _TWO_M53


def bits_to_uniform(bits: np.ndarray) -> np.ndarray:
    return (bits >> _S11) * _TWO_M53


def bits_to_open_uniform(bits: np.ndarray) -> np.ndarray:
    return ((bits >> _S11) + 0.5) * _TWO_M53


@dataclass(frozen=True)
class McEstimate:
    """Monte Carlo mean with its standard error.

    ``bias`` carries a one-sided systematic bound (e.g. horizon truncation);
    when non-zero it has already been added to ``stderr``.
    """

    mean: float
    stderr: float
    replications: int
    ci_level: float = 0.95
    bias: float = 0.0

    def interval(self) -> tuple[float, float]:
        z = NormalDist().inv_cdf(0.5 + self.ci_level / 2)
        return self.mean - z * self.stderr, self.mean + z * self.stderr

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "replications": self.replications,
            "ci_level": self.ci_level,
            "bias": self.bias,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "McEstimate":
        return cls(
            float(d["mean"]),
            float(d.get("stderr", 0.0)),
            int(d.get("replications", 2)),
            float(d.get("ci_level", 0.95)),
            float(d.get("bias", 0.0)),
        )


class InsufficientReplications(ValueError):
    pass


def aggregate(samples: Iterable[float], ci_level: float = 0.95) -> McEstimate:
    """Mean and standard error of ``samples`` taken in the given order.

    Sums are exactly rounded (``math.fsum``), so the result does not depend on
    how the samples were produced, only on their values and order.
    """
    xs = [float(x) for x in samples]
    n = len(xs)
    if n < 2:
        raise InsufficientReplications("insufficient replications")
    if not 0.0 < ci_level < 1.0:
        raise ValueError("ci_level must lie in (0, 1)")
    mean = math.fsum(xs) / n
    var = math.fsum((x - mean) ** 2 for x in xs) / (n - 1)
    return McEstimate(mean, math.sqrt(var / n), n, ci_level)


def default_workers() -> int:
    return os.cpu_count() or 1


def _chunks(indices: Sequence[int], parts: int) -> list[list[int]]:
    size = max(1, math.ceil(len(indices) / parts))
    return [list(indices[i : i + size]) for i in range(0, len(indices), size)]


def _apply_chunk(func, chunk):
    return [func(i) for i in chunk]


def ordered_map(func: Callable[[object], object], indices: Sequence, workers: int = 1) -> list:
    """Evaluate ``func`` on every replication index and return results in index order.

    With ``workers > 1`` the indices are split over processes; ``func`` must be
    picklable.  Results are identical for any worker count because each value
    depends on its index only.
    """
    indices = list(indices)
    if workers <= 1 or len(indices) < 2:
        return [func(i) for i in indices]
    chunks = _chunks(indices, workers * 4)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_apply_chunk, [func] * len(chunks), chunks))
    # contiguous chunks, returned in submission order
    return [x for part in parts for x in part]
