"""Synthetic workload: Zipf key popularity and (non)homogeneous Poisson arrivals."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .sim import US_PER_S, RngStream

PATTERNS = ("uniform", "skewed", "periodic", "seasonal")
DEFAULT_PERIODIC_PERIOD = 300.0
DEFAULT_SEASONAL_PERIOD = 20 * DEFAULT_PERIODIC_PERIOD


@dataclass(frozen=True)
class Pattern:
    kind: str = "skewed"
    period: float | None = None
    amplitude: float = 0.0

    @property
    def cyclic(self) -> bool:
        return self.kind in ("periodic", "seasonal")

    @property
    def effective_period(self) -> float:
        if self.period is not None:
            return self.period
        return DEFAULT_SEASONAL_PERIOD if self.kind == "seasonal" else DEFAULT_PERIODIC_PERIOD


@dataclass(frozen=True)
class PatternShift:
    """At simulated second ``at``, replace the listed WorkloadSpec fields."""

    at: float
    overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class WorkloadSpec:
    key_count: int = 10_000
    zipf_exponent: float = 1.1
    base_rate: float = 50.0
    pattern: Pattern = Pattern()
    read_ratio: float = 0.9
    # popularity rank r is served by key (r + hot_offset) % key_count
    hot_offset: int = 0
    shifts: tuple[PatternShift, ...] = ()

    @property
    def key_exponent(self) -> float:
        return 0.0 if self.pattern.kind == "uniform" else self.zipf_exponent


@dataclass
class Request:
    key: int
    is_write: bool
    arrival: int


def spec_at(spec: WorkloadSpec, t: float) -> WorkloadSpec:
    """The workload parameters in force at time ``t`` (all shifts with ``at <= t`` applied in order)."""
    out = spec
    for shift in spec.shifts:
        if shift.at > t:
            break
        out = dataclasses.replace(out, **shift.overrides)
    return out


def segments(spec: WorkloadSpec, duration: float) -> list[tuple[float, float, WorkloadSpec]]:
    bounds = [0.0] + [s.at for s in spec.shifts if 0 < s.at < duration] + [duration]
    return [(lo, hi, spec_at(spec, lo)) for lo, hi in zip(bounds, bounds[1:]) if hi > lo]


@lru_cache(maxsize=64)
def zipf_cdf(key_count: int, exponent: float) -> np.ndarray:
    weights = 1.0 / np.arange(1, key_count + 1, dtype=np.float64) ** exponent
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    cdf.setflags(write=False)
    return cdf


def zipf_pmf(key_count: int, exponent: float) -> np.ndarray:
    weights = 1.0 / np.arange(1, key_count + 1, dtype=np.float64) ** exponent
    return weights / weights.sum()


def zipf_ranks(spec: WorkloadSpec, rng: RngStream, n: int) -> np.ndarray:
    cdf = zipf_cdf(spec.key_count, float(spec.key_exponent))
    ranks = np.searchsorted(cdf, rng.random(n), side="right")
    return np.minimum(ranks, spec.key_count - 1)


def zipf_sample(spec: WorkloadSpec, rng: RngStream) -> int:
    return int(zipf_ranks(spec, rng, 1)[0])


def rate_at(spec: WorkloadSpec, t: float) -> float:
    cur = spec_at(spec, t)
    rate = cur.base_rate
    if cur.pattern.cyclic:
        rate *= 1.0 + cur.pattern.amplitude * np.sin(2 * np.pi * t / cur.pattern.effective_period)
    return max(0.0, float(rate))


def _rates(spec: WorkloadSpec, t: np.ndarray) -> np.ndarray:
    out = np.full(t.shape, float(spec.base_rate))
    for lo, hi, cur in segments(spec, float(t.max()) + 1.0 if t.size else 1.0):
        mask = (t >= lo) & (t < hi)
        r = np.full(int(mask.sum()), float(cur.base_rate))
        if cur.pattern.cyclic:
            p = cur.pattern
            r = r * (1.0 + p.amplitude * np.sin(2 * np.pi * t[mask] / p.effective_period))
        out[mask] = r
    return np.maximum(out, 0.0)


def peak_rate(spec: WorkloadSpec, duration: float) -> float:
    best = 0.0
    for _, _, cur in segments(spec, duration):
        amp = cur.pattern.amplitude if cur.pattern.cyclic else 0.0
        best = max(best, cur.base_rate * (1.0 + amp))
    return best


def _arrival_seconds(spec: WorkloadSpec, duration: float, rng: RngStream) -> np.ndarray:
    lam_max = peak_rate(spec, duration)
    if lam_max <= 0:
        return np.empty(0)
    chunks = []
    t0 = 0.0
    batch = int(lam_max * duration * 1.05) + 64
    while t0 < duration:
        t = t0 + np.cumsum(rng.exponential(1.0 / lam_max, batch))
        chunks.append(t)
        t0 = t[-1]
    t = np.concatenate(chunks)
    t = t[t < duration]
    keep = rng.random(t.size) * lam_max < _rates(spec, t)
    return t[keep]


def arrival_times(spec: WorkloadSpec, duration: float, rng: RngStream) -> np.ndarray:
    """Arrival instants in integer microseconds, strictly increasing, all < duration.

    Thinning against the peak rate; collisions after rounding to microseconds are
    pushed forward by one tick.
    """
    t = _arrival_seconds(spec, duration, rng)
    us = np.floor(t * US_PER_S).astype(np.int64)
    if us.size:
        idx = np.arange(us.size, dtype=np.int64)
        us = np.maximum.accumulate(us - idx) + idx
        us = us[us < int(round(duration * US_PER_S))]
    return us


@dataclass
class Workload:
    times: np.ndarray
    keys: np.ndarray
    writes: np.ndarray

    def __len__(self) -> int:
        return int(self.times.size)

    def request(self, i: int) -> Request:
        return Request(int(self.keys[i]), bool(self.writes[i]), int(self.times[i]))


def generate_workload(spec: WorkloadSpec, duration: float, rng: RngStream) -> Workload:
    """Arrival times, keys and read/write flags, all drawn from one stream."""
    times = arrival_times(spec, duration, rng)
    n = times.size
    u_key = rng.random(n)
    u_op = rng.random(n)
    keys = np.zeros(n, dtype=np.int64)
    writes = np.zeros(n, dtype=bool)
    t_sec = times / US_PER_S
    for lo, hi, cur in segments(spec, duration):
        mask = (t_sec >= lo) & (t_sec < hi)
        cdf = zipf_cdf(cur.key_count, float(cur.key_exponent))
        ranks = np.minimum(np.searchsorted(cdf, u_key[mask], side="right"), cur.key_count - 1)
        keys[mask] = (ranks + cur.hot_offset) % cur.key_count
        writes[mask] = u_op[mask] >= cur.read_ratio
    return Workload(times, keys, writes)
