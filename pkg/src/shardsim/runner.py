"""Scenario runs, per-size scaling runs, multi-seed comparison and report assembly."""
from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import dataclass, field

from .config import ScenarioConfig, config_from_dict, config_to_dict
from .metrics import (
    METRICS, AllZeroColumn, RawScores, SimTrace, adaptability_score, fault_tolerance_score,
    normalize, performance_score, scalability_score,
)
from .simulation import Simulation

SERIES_FIELDS = (
    "requests_total", "requests_ok", "latency_sum", "latency_p95", "live_nodes",
    "moved_records", "load_cv", "mean_staleness", "failure_active",
)
PLOT_HEADER = ("bucket_time", "strategy", "metric_name", "value")


class MalformedReport(ValueError):
    pass


def run_scenario(config: ScenarioConfig, seed: int, strategy: str | None = None) -> SimTrace:
    return Simulation(config, seed, strategy).run()


def scaling_sizes(nodes: int) -> list[int]:
    return sorted({max(1, nodes // 4), max(1, nodes // 2), nodes})


def scaled_config(config: ScenarioConfig, nodes: int) -> ScenarioConfig:
    """The scenario shrunk to ``nodes`` with the same offered load and failure rate per node."""
    f = nodes / config.nodes
    raw = config_to_dict(config)
    raw["nodes"] = nodes
    raw["regions"] = min(config.regions, nodes)
    raw["workload"]["base_rate"] *= f
    for s in raw["workload"]["shifts"]:
        if "base_rate" in s:
            s["base_rate"] *= f
    raw["failure"]["crash_rate"] *= f
    raw["failure"]["corruption_rate"] *= f
    sh = raw["sharding"]
    sh["n_shards"] = max(1, min(config.workload.key_count, round(sh["n_shards"] * f)))
    sh["base_shard_records"] = None
    raw["node"]["storage_limit"] = None
    return config_from_dict(raw)


@dataclass
class RunResult:
    strategy: str
    seed: int
    trace: SimTrace
    raw: RawScores
    throughputs: dict = field(default_factory=dict)


def score_trace(config: ScenarioConfig, trace: SimTrace, throughputs: dict | None) -> RawScores:
    m = config.metrics
    notes = []
    ft, note = fault_tolerance_score(trace)
    if note:
        notes.append(note)
    if not trace.shift_times:
        notes.append("no-shift")
    if throughputs is not None and len(throughputs) >= 2:
        scal = scalability_score(throughputs)
    else:
        scal = 0.0
        notes.append("no-scaling-runs")
    return RawScores(
        scalability=scal,
        performance=performance_score(trace),
        fault_tolerance=ft,
        adaptability=adaptability_score(
            trace, trace.shift_times, cv_threshold=m.cv_threshold,
            sustain=m.sustain_buckets, window=m.adapt_window,
        ),
        notes=notes,
    )


def evaluate(config: ScenarioConfig, strategy: str, seed: int) -> RunResult:
    trace = run_scenario(config, seed, strategy)
    throughputs = None
    if config.metrics.scaling:
        throughputs = {config.nodes: trace.throughput}
        for n in scaling_sizes(config.nodes):
            if n != config.nodes:
                throughputs[n] = run_scenario(scaled_config(config, n), seed, strategy).throughput
    return RunResult(strategy, seed, trace, score_trace(config, trace, throughputs), throughputs or {})


def series_of(traces: list[SimTrace]) -> dict:
    """Per-bucket means across traces of one strategy."""
    n = min(len(t.buckets) for t in traces)
    out: dict = {"bucket_time": [traces[0].buckets[i].start for i in range(n)]}
    for f in SERIES_FIELDS:
        out[f] = [statistics.fmean(float(getattr(t.buckets[i], f)) for t in traces) for i in range(n)]
    return out


def compare(config: ScenarioConfig, strategies: list[str], seeds: list[int], *,
            progress=None) -> dict:
    """Cross product of strategies and seeds; every strategy sees the same seeds."""
    results: dict[str, list[RunResult]] = {}
    for s in strategies:
        for seed in seeds:
            if progress:
                progress(s, seed)
            results.setdefault(s, []).append(evaluate(config, s, seed))
    return build_report(config, strategies, seeds, results)


def build_report(config: ScenarioConfig, strategies, seeds, results: dict) -> dict:
    raw_mean, raw_std, runs, series, warnings = {}, {}, {}, {}, {}
    for s in strategies:
        rs = results[s]
        raw_mean[s] = {m: statistics.fmean(getattr(r.raw, m) for r in rs) for m in METRICS}
        raw_std[s] = {m: (statistics.pstdev([getattr(r.raw, m) for r in rs]) if len(rs) > 1 else 0.0)
                      for m in METRICS}
        runs[s] = {
            str(r.seed): {
                "raw": r.raw.as_dict(),
                "notes": list(r.raw.notes),
                "throughputs": {str(n): t for n, t in sorted(r.throughputs.items())},
                "trace": r.trace.to_dict(),
            }
            for r in rs
        }
        series[s] = series_of([r.trace for r in rs])
        merged: dict = {}
        for r in rs:
            for k, v in r.trace.warnings.items():
                merged[k] = merged.get(k, 0) + v
        warnings[s] = merged
    echoed = config_to_dict(config)
    if len(seeds) == 1:
        echoed["seed"] = seeds[0]
    report = {
        "config": echoed,
        "seeds": list(seeds),
        "strategies": list(strategies),
        "raw": raw_mean,
        "raw_std": raw_std,
        "normalized": None,
        "warnings": warnings,
        "series": series,
        "runs": runs,
    }
    try:
        report["normalized"] = normalize(raw_mean)
    except AllZeroColumn as exc:
        report["normalize_error"] = str(exc)
    return report


def dumps(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(report))


def load_report(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            report = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedReport(f"cannot read report {path}: {exc}") from None
    if not isinstance(report, dict) or not isinstance(report.get("series"), dict):
        raise MalformedReport(f"{path}: missing 'series' section")
    return report


def plot_rows(report: dict) -> list[tuple]:
    rows = []
    series = report.get("series")
    if not isinstance(series, dict):
        raise MalformedReport("missing 'series' section")
    for strategy in sorted(series):
        s = series[strategy]
        if not isinstance(s, dict) or not isinstance(s.get("bucket_time"), list):
            raise MalformedReport(f"series for {strategy} has no bucket_time list")
        times = s["bucket_time"]
        for name in sorted(k for k in s if k != "bucket_time"):
            values = s[name]
            if not isinstance(values, list) or len(values) != len(times):
                raise MalformedReport(f"series {strategy}.{name} does not match bucket_time")
            for t, v in zip(times, values):
                if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                    raise MalformedReport(f"series {strategy}.{name} holds a non-numeric value")
                rows.append((t, strategy, name, v))
    return rows


def write_plotdata(report: dict, path) -> int:
    rows = plot_rows(report)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_HEADER)
        for t, s, m, v in rows:
            w.writerow((repr(float(t)), s, m, repr(float(v))))
    return len(rows)
