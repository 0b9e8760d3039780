"""Adaptive sharding: heat tiers, load forecasting, fractal sizing and ring re-sharding."""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cluster import RecordMeta, Shard, round_half_up
from .hashing import Arc, key_hash
from .resilience import NoLiveNodes
from .strategies import HashRing


@dataclass
class WindowConfig:
    hot_window: float = 3600.0
    warm_window: float = 86400.0


class HeatTier(enum.IntEnum):
    COLD = 0
    WARM = 1
    HOT = 2

    @property
    def label(self) -> str:
        return self.name.lower()


def classify_heat(meta: RecordMeta, now: float, cfg: WindowConfig) -> HeatTier:
    """Tier by time since last access or modification; windows are half-open.

    ``now``, the metadata timestamps and the windows must share one time unit.
    """
    age = now - max(meta.last_access, meta.last_modified)
    if age < cfg.hot_window:
        return HeatTier.HOT
    if age < cfg.warm_window:
        return HeatTier.WARM
    return HeatTier.COLD


def tier_for_age(age: float, cfg: WindowConfig) -> HeatTier:
    return classify_heat(RecordMeta(0, 0, 0, 0), age, cfg)


@dataclass
class ShardLoad:
    id: int
    tier: HeatTier
    load: float


@dataclass
class NodeSlot:
    id: int
    capacity: float
    up: bool = True
    assigned: float = 0.0

    @property
    def headroom(self) -> float:
        return self.capacity - self.assigned


def temporal_assign(shards: Sequence[ShardLoad], nodes: Sequence[NodeSlot]) -> dict[int, int]:
    """Greedy placement, hottest tier first, each shard onto the live node with most headroom."""
    live = [NodeSlot(n.id, n.capacity, True, n.assigned) for n in nodes if n.up]
    if not live:
        raise NoLiveNodes("no live node for temporal assignment")
    out: dict[int, int] = {}
    for s in sorted(shards, key=lambda s: (-int(s.tier), -s.load, s.id)):
        best = max(live, key=lambda n: (n.headroom, -n.id))
        out[s.id] = best.id
        best.assigned += s.load
    return out


# --- forecasting -----------------------------------------------------------

class InsufficientHistory(ValueError):
    pass


@dataclass
class ForecastConfig:
    alpha: float = 0.5
    beta: float = 0.3
    horizon: int = 1
    split_threshold: float = 0.8
    merge_threshold: float = 0.3
    history_len: int = 16


class LoadHistory:
    """Per-shard ring buffers of (bucket end time, request count)."""

    def __init__(self, history_len: int = 16):
        self.history_len = history_len
        self._buf: dict[int, deque] = {}

    def push(self, shard: int, end_time: int, count: float) -> None:
        buf = self._buf.setdefault(shard, deque(maxlen=self.history_len))
        if buf and end_time <= buf[-1][0]:
            raise ValueError("history buckets must be ordered")
        buf.append((end_time, count))

    def series(self, shard: int) -> list[tuple[int, float]]:
        return list(self._buf.get(shard, ()))

    def seed(self, shard: int, entries) -> None:
        self._buf[shard] = deque(entries, maxlen=self.history_len)

    def drop(self, shard: int) -> list[tuple[int, float]]:
        return list(self._buf.pop(shard, ()))

    def __contains__(self, shard: int) -> bool:
        return shard in self._buf


def forecast(history, cfg: ForecastConfig) -> float:
    """Holt linear smoothing; level starts at the first value, trend at zero."""
    xs = [h[1] if isinstance(h, tuple) else h for h in history]
    if len(xs) < 2:
        raise InsufficientHistory(f"need >= 2 buckets, got {len(xs)}")
    a, b = cfg.alpha, cfg.beta
    level, trend = float(xs[0]), 0.0
    for x in xs[1:]:
        prev = level
        level = a * x + (1 - a) * (level + trend)
        trend = b * (level - prev) + (1 - b) * trend
    return max(0.0, level + cfg.horizon * trend)


# --- fractal sizing --------------------------------------------------------

class DegenerateInput(ValueError):
    pass


@dataclass
class FractalEstimate:
    dimension: float
    scales: list
    residual: float
    counts: list = field(default_factory=list)


def fractal_dimension(points, scales: int | Sequence[float] = 8) -> FractalEstimate:
    """Box-counting dimension of points in [0, 1).

    ``scales`` is either K (box sizes 2^-1 .. 2^-K) or an explicit list of sizes.
    The residual is the RMS misfit of the log-log regression.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.size < 2:
        raise DegenerateInput("need at least two points")
    sizes = [2.0 ** -j for j in range(1, scales + 1)] if isinstance(scales, int) else list(scales)
    if len(sizes) < 3:
        raise DegenerateInput("need at least three scales")
    counts = [np.unique(np.floor(pts / eps)).size for eps in sizes]
    x = np.log(1.0 / np.asarray(sizes))
    y = np.log(np.asarray(counts, dtype=np.float64))
    slope, icept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + icept)) ** 2)))
    return FractalEstimate(float(np.clip(slope, 0.0, 1.1)), sizes, resid, counts)


def target_shard_size(dimension: float, base: int) -> int:
    """Concentrated key sets (low dimension) get smaller shards, floor at half of base."""
    return round_half_up(base * (0.5 + dimension / 2))


# --- re-shard planning -----------------------------------------------------

@dataclass
class Child:
    arc: Arc
    owner: int
    keys: list
    predicted: float


@dataclass
class ReshardPlan:
    shard: int
    kind: str = "none"  # "none" | "split" | "merge"
    children: list = field(default_factory=list)
    add_positions: list = field(default_factory=list)
    remove_position: int | None = None
    into: int | None = None
    moved_keys: list = field(default_factory=list)
    unsplittable: bool = False

    def __bool__(self) -> bool:
        return self.kind != "none"


def split_points(arc: Arc, keys: Sequence[int], parts: int, *, hash_fn=key_hash,
                 weights: dict | None = None) -> list[int]:
    """Interior ring positions cutting ``arc`` into up to ``parts`` pieces.

    Without weights the arc is cut into equal lengths. With per-key weights the
    cuts fall at weighted quantiles of the keys, and any key heavier than one
    part's share is isolated between its own pair of cuts.
    """
    if parts < 2:
        return []
    if not weights or sum(weights.get(k, 0.0) for k in keys) <= 0:
        step = arc.length // parts
        if step == 0:
            return []
        return [(arc.start + j * step) & ((1 << 64) - 1) for j in range(1, parts)]
    ordered = sorted(keys, key=lambda k: arc.offset(hash_fn(k)))
    w = [weights.get(k, 0.0) for k in ordered]
    total = sum(w)
    share = total / parts
    cuts: set[int] = set()
    acc = 0.0
    j = 1
    for i, k in enumerate(ordered):
        if w[i] >= share and i > 0:
            cuts.add(i - 1)
        acc += w[i]
        if w[i] >= share:
            cuts.add(i)
        while j < parts and acc >= j * share:
            cuts.add(i)
            j += 1
    positions = []
    for i in sorted(cuts):
        if i >= len(ordered) - 1:
            continue
        positions.append(hash_fn(ordered[i]))
    return positions


def plan_reshard(
    shard: Shard,
    prediction: float,
    capacity: float,
    ring: HashRing,
    cfg: ForecastConfig,
    *,
    hash_fn: Callable[[int], int] = key_hash,
    weights: dict | None = None,
    targets: Sequence[int] = (),
    sibling: tuple[Shard, float] | None = None,
) -> ReshardPlan:
    """Split an arc predicted to overload its node, or merge a cold one into its successor.

    Split children are cut by new ring positions; the i-th new position is owned
    by ``targets[i]`` (default: the current owner) and the last child keeps the
    original token. Only keys whose arc changes owner are listed as moved.
    """
    plan = ReshardPlan(shard.id)
    limit = cfg.split_threshold * capacity
    if prediction > limit:
        parts = max(2, math.ceil(prediction / limit))
        cuts = split_points(shard.arc, shard.keys, parts, hash_fn=hash_fn, weights=weights)
        if not cuts:
            plan.unsplittable = True
            return plan
        bounds = [shard.arc.start, *cuts, shard.arc.end]
        owners = [targets[i] if i < len(targets) else shard.primary for i in range(len(cuts))]
        owners.append(shard.primary)
        hk = {k: hash_fn(k) for k in shard.keys}
        w_total = sum(weights.get(k, 0.0) for k in shard.keys) if weights else 0.0
        for i in range(len(bounds) - 1):
            arc = Arc.between(bounds[i], bounds[i + 1])
            keys = [k for k in shard.keys if hk[k] in arc]
            if w_total > 0:
                share = sum(weights.get(k, 0.0) for k in keys) / w_total
            else:
                share = arc.length / shard.arc.length
            plan.children.append(Child(arc, owners[i], keys, prediction * share))
        plan.kind = "split"
        plan.add_positions = list(zip(cuts, owners[:-1]))
        plan.moved_keys = sorted(k for c in plan.children if c.owner != shard.primary for k in c.keys)
        return plan
    if sibling is not None and prediction < cfg.merge_threshold * capacity:
        sib, sib_pred = sibling
        if sib.arc.start == shard.arc.end and prediction + sib_pred < limit:
            plan.kind = "merge"
            plan.remove_position = shard.arc.end
            plan.into = sib.id
            plan.children = [Child(Arc(shard.arc.start, shard.arc.length + sib.arc.length),
                                   sib.primary, sorted(shard.keys + sib.keys), prediction + sib_pred)]
            if sib.primary != shard.primary:
                plan.moved_keys = sorted(shard.keys)
    return plan
