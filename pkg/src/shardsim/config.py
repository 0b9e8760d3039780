"""Scenario configuration: dataclasses, strict YAML parsing, defaults, validation."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any

import yaml

from .adaptive import ForecastConfig, WindowConfig
from .cluster import FailureSpec
from .resilience import ReplicationPolicy
from .strategies import StrategyKind
from .workload import PATTERNS, Pattern, PatternShift, WorkloadSpec

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


class SchemaError(ConfigError):
    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field = field_name
        self.reason = reason


class UnknownField(ConfigError):
    def __init__(self, name: str):
        super().__init__(f"unknown field: {name}")
        self.name = name


@dataclass
class NodeConfig:
    capacity: float = 10.0
    storage_limit: int | None = None


@dataclass
class ShardingConfig:
    n_shards: int | None = None
    vnodes: int = 128
    adaptive_vnodes: int = 8
    rebalance_interval: float = 300.0
    fractal_scales: int = 8
    base_shard_records: int | None = None
    balance_factor: float = 1.25
    max_moves_per_tick: int = 16


@dataclass
class MetricsConfig:
    cv_threshold: float = 0.5
    sustain_buckets: int = 3
    adapt_window: float = 300.0
    scaling: bool = True


@dataclass
class ScenarioConfig:
    nodes: int
    duration: float
    strategy: str = "adaptive"
    regions: int | None = None
    bucket_width: float = 10.0
    seed: int | None = None
    node: NodeConfig = field(default_factory=NodeConfig)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    failure: FailureSpec = field(default_factory=FailureSpec)
    replication: ReplicationPolicy = field(default_factory=ReplicationPolicy)
    windows: WindowConfig = field(default_factory=WindowConfig)
    forecast: ForecastConfig = field(default_factory=ForecastConfig)
    sharding: ShardingConfig = field(default_factory=ShardingConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    schema_version: int = SCHEMA_VERSION

    @property
    def node_count(self) -> int:
        return self.nodes

    @property
    def region_count(self) -> int:
        return self.regions

    @property
    def repair_rate(self) -> float:
        return self.replication.repair_rate or 10.0 * self.node.capacity

    def with_(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


SECTIONS = {
    "node": NodeConfig,
    "failure": FailureSpec,
    "replication": ReplicationPolicy,
    "windows": WindowConfig,
    "forecast": ForecastConfig,
    "sharding": ShardingConfig,
    "metrics": MetricsConfig,
}
TOP_SCALARS = {"schema_version", "nodes", "regions", "duration", "bucket_width", "strategy", "seed"}
WORKLOAD_SCALARS = {"key_count", "zipf_exponent", "base_rate", "read_ratio", "hot_offset"}
SHIFT_FIELDS = {"zipf_exponent", "base_rate", "read_ratio", "hot_offset", "pattern"}


def _num(path: str, value: Any, kind=float, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(path, f"must be a number, got {value!r}")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise SchemaError(path, f"must be an integer, got {value!r}")
        return int(value)
    return float(value)


def _section(path: str, cls, raw: Any):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise SchemaError(path, "must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in raw.items():
        if k not in known:
            raise UnknownField(f"{path}.{k}")
        default = getattr(cls(), k)
        t = known[k].type
        if isinstance(default, bool) or t == "bool":
            if not isinstance(v, bool):
                raise SchemaError(f"{path}.{k}", "must be true or false")
            kwargs[k] = v
        elif isinstance(default, str) or t == "str":
            if not isinstance(v, str):
                raise SchemaError(f"{path}.{k}", "must be a string")
            kwargs[k] = v
        else:
            kind = int if "int" in str(t) and "float" not in str(t) else float
            kwargs[k] = _num(f"{path}.{k}", v, kind, allow_none="None" in str(t))
    return cls(**kwargs)


def _pattern(path: str, raw: Any) -> Pattern:
    if isinstance(raw, str):
        raw = {"kind": raw}
    if not isinstance(raw, dict):
        raise SchemaError(path, "must be a pattern name or mapping")
    for k in raw:
        if k not in ("kind", "period", "amplitude"):
            raise UnknownField(f"{path}.{k}")
    kind = raw.get("kind", "skewed")
    if kind not in PATTERNS:
        raise SchemaError(f"{path}.kind", f"must be one of {', '.join(PATTERNS)}")
    period = _num(f"{path}.period", raw.get("period"), allow_none=True)
    amplitude = _num(f"{path}.amplitude", raw.get("amplitude", 0.0))
    pat = Pattern(kind, period, amplitude)
    if pat.cyclic and period is None:
        pat = Pattern(kind, pat.effective_period, amplitude)
    return pat


def _workload(raw: Any, nodes: int, capacity: float) -> WorkloadSpec:
    path = "workload"
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise SchemaError(path, "must be a mapping")
    kwargs: dict[str, Any] = {}
    for k, v in raw.items():
        if k in WORKLOAD_SCALARS:
            kind = int if k in ("key_count", "hot_offset") else float
            kwargs[k] = _num(f"{path}.{k}", v, kind, allow_none=(k == "base_rate"))
        elif k == "pattern":
            kwargs[k] = _pattern(f"{path}.pattern", v)
        elif k == "shifts":
            continue
        else:
            raise UnknownField(f"{path}.{k}")
    if kwargs.get("base_rate") is None:
        kwargs["base_rate"] = 0.5 * nodes * capacity
    shifts = []
    for i, s in enumerate(raw.get("shifts") or []):
        sp = f"{path}.shifts[{i}]"
        if not isinstance(s, dict) or "at" not in s:
            raise SchemaError(sp, "must be a mapping with an 'at' time")
        overrides: dict[str, Any] = {}
        for k, v in s.items():
            if k == "at":
                continue
            if k not in SHIFT_FIELDS:
                raise UnknownField(f"{sp}.{k}")
            if k == "pattern":
                overrides[k] = _pattern(f"{sp}.pattern", v)
            else:
                overrides[k] = _num(f"{sp}.{k}", v, int if k == "hot_offset" else float)
        shifts.append(PatternShift(_num(f"{sp}.at", s["at"]), overrides))
    kwargs["shifts"] = tuple(shifts)
    return WorkloadSpec(**kwargs)


def config_from_dict(raw: dict) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise SchemaError("<root>", "scenario must be a mapping")
    for k in raw:
        if k not in TOP_SCALARS and k not in SECTIONS and k != "workload":
            raise UnknownField(k)
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SchemaError("schema_version", f"must be {SCHEMA_VERSION}")
    for req in ("nodes", "duration"):
        if req not in raw:
            raise SchemaError(req, "is required")
    nodes = _num("nodes", raw["nodes"], int)
    if nodes < 1:
        raise SchemaError("nodes", "must be ≥ 1")
    sections = {name: _section(name, cls, raw.get(name)) for name, cls in SECTIONS.items()}
    strategy = raw.get("strategy", "adaptive")
    if strategy not in [s.value for s in StrategyKind]:
        raise SchemaError("strategy", f"must be one of {', '.join(s.value for s in StrategyKind)}")
    seed = raw.get("seed")
    if seed is not None:
        seed = _num("seed", seed, int)
        if not 0 <= seed < 2**64:
            raise SchemaError("seed", "must be an unsigned 64-bit integer")
    cfg = ScenarioConfig(
        nodes=nodes,
        duration=_num("duration", raw["duration"]),
        strategy=strategy,
        regions=_num("regions", raw.get("regions"), int, allow_none=True),
        bucket_width=_num("bucket_width", raw.get("bucket_width", 10.0)),
        seed=seed,
        workload=_workload(raw.get("workload"), nodes, sections["node"].capacity),
        **sections,
    )
    return finalize(cfg)


def finalize(cfg: ScenarioConfig) -> ScenarioConfig:
    """Materialize derived defaults and check every invariant."""
    if cfg.regions is None:
        cfg.regions = min(2, cfg.nodes)
    sh = cfg.sharding
    if sh.n_shards is None:
        sh.n_shards = cfg.nodes
    if sh.base_shard_records is None:
        sh.base_shard_records = max(1, 2 * cfg.workload.key_count // (cfg.nodes * sh.adaptive_vnodes))
    if cfg.node.storage_limit is None:
        fair = -(-cfg.workload.key_count * max(1, cfg.replication.rf) // cfg.nodes)
        cfg.node.storage_limit = max(cfg.workload.key_count, 4 * fair)
    if cfg.replication.repair_rate is None:
        cfg.replication.repair_rate = 10.0 * cfg.node.capacity
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    w, f, r, win, fc, sh, m = (cfg.workload, cfg.failure, cfg.replication, cfg.windows,
                               cfg.forecast, cfg.sharding, cfg.metrics)
    checks = [
        ("nodes", cfg.nodes >= 1, "must be ≥ 1"),
        ("regions", cfg.regions >= 1, "must be ≥ 1"),
        ("duration", cfg.duration > 0, "must be > 0"),
        ("bucket_width", cfg.bucket_width > 0, "must be > 0"),
        ("node.capacity", cfg.node.capacity > 0, "must be > 0"),
        ("node.storage_limit", cfg.node.storage_limit >= 1, "must be ≥ 1"),
        ("workload.key_count", w.key_count >= 1, "must be ≥ 1"),
        ("workload.zipf_exponent", w.zipf_exponent >= 0, "must be ≥ 0"),
        ("workload.base_rate", w.base_rate >= 0, "must be ≥ 0"),
        ("workload.read_ratio", 0 <= w.read_ratio <= 1, "must be in [0, 1]"),
        ("workload.hot_offset", w.hot_offset >= 0, "must be ≥ 0"),
        ("workload.pattern.amplitude", 0 <= w.pattern.amplitude <= 1, "must be in [0, 1]"),
        ("workload.pattern.period", w.pattern.period is None or w.pattern.period > 0, "must be > 0"),
        ("failure.crash_rate", f.crash_rate >= 0, "must be ≥ 0"),
        ("failure.mean_downtime", f.mean_downtime >= 0, "must be ≥ 0"),
        ("failure.corruption_rate", f.corruption_rate >= 0, "must be ≥ 0"),
        ("failure.corruption_fraction", 0 <= f.corruption_fraction <= 1, "must be in [0, 1]"),
        ("replication.rf", r.rf >= 1, "must be ≥ 1"),
        ("replication.sync_interval", r.sync_interval > 0, "must be > 0"),
        ("replication.anti_affinity", r.anti_affinity in ("node", "region"), "must be node or region"),
        ("replication.repair_rate", r.repair_rate > 0, "must be > 0"),
        ("replication.parallelism", r.parallelism >= 1, "must be ≥ 1"),
        ("windows.hot_window", win.hot_window > 0, "must be > 0"),
        ("windows.warm_window", win.warm_window > win.hot_window, "must exceed hot_window"),
        ("forecast.alpha", 0 < fc.alpha <= 1, "must be in (0, 1]"),
        ("forecast.beta", 0 <= fc.beta <= 1, "must be in [0, 1]"),
        ("forecast.horizon", fc.horizon >= 1, "must be ≥ 1"),
        ("forecast.split_threshold", 0 < fc.split_threshold <= 1, "must be in (0, 1]"),
        ("forecast.merge_threshold", 0 <= fc.merge_threshold < fc.split_threshold,
         "must be ≥ 0 and below split_threshold"),
        ("forecast.history_len", fc.history_len >= 2, "must be ≥ 2"),
        ("sharding.n_shards", 1 <= sh.n_shards <= w.key_count, "must be in [1, key_count]"),
        ("sharding.vnodes", sh.vnodes >= 1, "must be ≥ 1"),
        ("sharding.adaptive_vnodes", sh.adaptive_vnodes >= 1, "must be ≥ 1"),
        ("sharding.rebalance_interval", sh.rebalance_interval > 0, "must be > 0"),
        ("sharding.fractal_scales", sh.fractal_scales >= 3, "must be ≥ 3"),
        ("sharding.base_shard_records", sh.base_shard_records >= 1, "must be ≥ 1"),
        ("sharding.balance_factor", sh.balance_factor >= 1, "must be ≥ 1"),
        ("sharding.max_moves_per_tick", sh.max_moves_per_tick >= 0, "must be ≥ 0"),
        ("metrics.cv_threshold", m.cv_threshold > 0, "must be > 0"),
        ("metrics.sustain_buckets", m.sustain_buckets >= 1, "must be ≥ 1"),
        ("metrics.adapt_window", m.adapt_window > 0, "must be > 0"),
    ]
    for path, ok, reason in checks:
        if not ok:
            raise SchemaError(path, reason)
    last = 0.0
    for i, s in enumerate(w.shifts):
        if s.at <= last and not (i == 0 and s.at > 0):
            raise SchemaError(f"workload.shifts[{i}].at", "shift times must be positive and strictly increasing")
        last = s.at
        for k, v in s.overrides.items():
            if k == "pattern" and not 0 <= v.amplitude <= 1:
                raise SchemaError(f"workload.shifts[{i}].pattern.amplitude", "must be in [0, 1]")
            if k in ("base_rate", "zipf_exponent", "hot_offset") and v < 0:
                raise SchemaError(f"workload.shifts[{i}].{k}", "must be ≥ 0")
            if k == "read_ratio" and not 0 <= v <= 1:
                raise SchemaError(f"workload.shifts[{i}].read_ratio", "must be in [0, 1]")


def parse_config(path: str | os.PathLike) -> ScenarioConfig:
    if not os.path.exists(path):
        raise FileNotFoundError(f"scenario file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SchemaError("<file>", f"not valid YAML: {exc}") from None
    return config_from_dict(raw)


def _pattern_dict(p: Pattern) -> dict:
    return {"kind": p.kind, "period": p.period, "amplitude": p.amplitude}


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """Plain-data echo of a config; ``config_from_dict`` of it yields an equal config."""
    w = cfg.workload
    shifts = []
    for s in w.shifts:
        d: dict[str, Any] = {"at": s.at}
        for k, v in s.overrides.items():
            d[k] = _pattern_dict(v) if k == "pattern" else v
        shifts.append(d)
    out: dict[str, Any] = {
        "schema_version": cfg.schema_version,
        "nodes": cfg.nodes,
        "regions": cfg.regions,
        "duration": cfg.duration,
        "bucket_width": cfg.bucket_width,
        "strategy": cfg.strategy,
        "seed": cfg.seed,
        "workload": {
            "key_count": w.key_count,
            "zipf_exponent": w.zipf_exponent,
            "base_rate": w.base_rate,
            "read_ratio": w.read_ratio,
            "hot_offset": w.hot_offset,
            "pattern": _pattern_dict(w.pattern),
            "shifts": shifts,
        },
    }
    for name in SECTIONS:
        out[name] = dataclasses.asdict(getattr(cfg, name))
    return out
