"""Trace containers and the four comparison scores, plus column normalization."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

METRICS = ("scalability", "performance", "fault_tolerance", "adaptability")
SCALABILITY_CAP = 1.2


class EmptyTrace(ValueError):
    pass


class MissingRun(ValueError):
    pass


class AllZeroColumn(ValueError):
    def __init__(self, metric: str):
        super().__init__(f"every strategy scored 0 on {metric}")
        self.metric = metric


@dataclass
class MetricBucket:
    index: int
    start: float
    requests_total: int = 0
    requests_ok: int = 0
    latency_sum: float = 0.0
    latency_p95: float = 0.0
    live_nodes: int = 0
    moved_records: int = 0
    load_cv: float = 0.0
    mean_staleness: float = 0.0
    failure_active: bool = False
    heat: dict | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["heat"] is None:
            del d["heat"]
        return d


@dataclass
class SimTrace:
    strategy: str
    duration: float
    bucket_width: float
    key_count: int
    node_count: int
    buckets: list = field(default_factory=list)
    latencies: list = field(default_factory=list)  # microseconds, successful requests
    requests_total: int = 0
    requests_ok: int = 0
    completed_in_run: int = 0
    lost_keys: int = 0
    shift_times: list = field(default_factory=list)
    events: list = field(default_factory=list)
    warnings: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    failure_reasons: dict = field(default_factory=dict)
    replicated_records: int = 0
    promoted_records: int = 0
    restored_keys: int = 0

    @property
    def throughput(self) -> float:
        return self.completed_in_run / self.duration

    def summary(self) -> dict:
        return {
            "requests_total": self.requests_total,
            "requests_ok": self.requests_ok,
            "completed_in_run": self.completed_in_run,
            "throughput": self.throughput,
            "p95_latency": percentile(self.latencies, 95) / 1e6 if self.latencies else 0.0,
            "lost_keys": self.lost_keys,
            "replicated_records": self.replicated_records,
            "promoted_records": self.promoted_records,
            "restored_keys": self.restored_keys,
            "moved_records": sum(b.moved_records for b in self.buckets),
            "failure_reasons": dict(sorted(self.failure_reasons.items())),
            "warnings": dict(sorted(self.warnings.items())),
            "violations": len(self.violations),
        }

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "summary": self.summary(),
            "shift_times": list(self.shift_times),
            "buckets": [b.to_dict() for b in self.buckets],
            "events": list(self.events),
            "violations": list(self.violations),
        }


def percentile(values, q: float) -> float:
    """Nearest-rank percentile of ``values`` (exact, sorts a copy)."""
    if not len(values):
        raise ValueError("percentile of empty sequence")
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100.0 * len(ordered)))
    return ordered[rank - 1]


@dataclass
class RawScores:
    scalability: float
    performance: float
    fault_tolerance: float
    adaptability: float
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {m: getattr(self, m) for m in METRICS}


def performance_score(trace: SimTrace) -> float:
    """Success ratio discounted by tail latency: ok / total / (1 + p95 seconds)."""
    if trace.requests_total == 0:
        raise EmptyTrace("no requests in trace")
    success = trace.requests_ok / trace.requests_total
    p95 = percentile(trace.latencies, 95) / 1e6 if trace.latencies else 0.0
    return success / (1.0 + p95)


def scalability_score(throughputs: dict[int, float]) -> float:
    """Mean over larger runs of (throughput gain / node gain) against the smallest run."""
    if len(throughputs) < 2:
        raise MissingRun("need runs at two or more cluster sizes")
    sizes = sorted(throughputs)
    n0, t0 = sizes[0], throughputs[sizes[0]]
    ratios = []
    for n in sizes[1:]:
        t = throughputs[n]
        if t0 <= 0:
            gain = SCALABILITY_CAP if t > 0 else 0.0
        else:
            gain = (t / t0) / (n / n0)
        ratios.append(gain)
    return min(SCALABILITY_CAP, sum(ratios) / len(ratios))


def fault_tolerance_score(trace: SimTrace) -> tuple[float, str]:
    """Availability while any node is down or degraded, times the surviving key fraction."""
    window = [b for b in trace.buckets if b.failure_active]
    if not window:
        return 1.0, "no-failure"
    total = sum(b.requests_total for b in window)
    ok = sum(b.requests_ok for b in window)
    avail = ok / total if total else 1.0
    return avail * (1.0 - trace.lost_keys / trace.key_count), ""


def recovery_buckets(cvs: list[float], start: int, limit: int, threshold: float, sustain: int) -> int:
    """Buckets after ``start`` until the load CV stays below threshold for ``sustain`` buckets."""
    for d in range(limit):
        window = cvs[start + d:start + d + sustain]
        if len(window) == sustain and all(cv < threshold for cv in window):
            return d
    return limit


def adaptability_score(trace: SimTrace, shift_times, *, cv_threshold: float = 0.5,
                       sustain: int = 3, window: float = 300.0) -> float:
    if not shift_times:
        return 1.0
    t_max = max(1, int(round(window / trace.bucket_width)))
    cvs = [b.load_cv for b in trace.buckets]
    moved = [b.moved_records for b in trace.buckets]
    scores = []
    for at in shift_times:
        start = int(at // trace.bucket_width)
        t_r = recovery_buckets(cvs, start, t_max, cv_threshold, sustain)
        time_factor = max(0.0, 1.0 - t_r / t_max)
        moved_frac = sum(moved[start:start + t_max]) / trace.key_count
        scores.append(time_factor * max(0.0, 1.0 - moved_frac))
    return sum(scores) / len(scores)


def normalize(raw: dict) -> dict:
    """Divide each metric column by its maximum across strategies."""
    if not raw:
        raise ValueError("no strategies to normalize")
    rows = {s: (r.as_dict() if isinstance(r, RawScores) else dict(r)) for s, r in raw.items()}
    out: dict = {s: {} for s in rows}
    for m in METRICS:
        top = max(row[m] for row in rows.values())
        if top <= 0:
            raise AllZeroColumn(m)
        for s, row in rows.items():
            out[s][m] = row[m] / top
    return out
