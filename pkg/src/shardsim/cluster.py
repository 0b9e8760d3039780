"""Cluster state: nodes, shard placements, per-key metadata, request service, failures."""
from __future__ import annotations

import enum
import heapq
import math
import random
from dataclasses import dataclass, field
from typing import NamedTuple

from .hashing import Arc
from .sim import Event, EventKind, RngStream, to_us
from .workload import Request


class NodeStatus(str, enum.Enum):
    UP = "Up"
    FAILED = "Failed"
    DEGRADED = "Degraded"


class UnknownKey(RuntimeError):
    """A request reached a node that does not hold the key's shard (routing bug)."""


class TargetOverCapacity(RuntimeError):
    pass


class CoverageError(RuntimeError):
    pass


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(eq=False)
class Node:
    id: int
    region: int
    capacity: float
    storage_limit: int
    fail_depth: int = 0
    damaged: set = field(default_factory=set)
    shards: set = field(default_factory=set)
    records: int = 0
    _pending: list = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        if self.capacity <= 0:
            raise ValueError("node capacity must be > 0")
        self.service_us = max(1, round_half_up(1_000_000 / self.capacity))

    @property
    def failed(self) -> bool:
        return self.fail_depth > 0

    @property
    def status(self) -> NodeStatus:
        if self.fail_depth > 0:
            return NodeStatus.FAILED
        if self.damaged:
            return NodeStatus.DEGRADED
        return NodeStatus.UP

    def queue_len(self, now: int) -> int:
        pending = self._pending
        while pending and pending[0] <= now:
            heapq.heappop(pending)
        return len(pending)

    def admit(self, now: int) -> int:
        """Queue one request at ``now``; returns its latency in microseconds."""
        latency = (self.queue_len(now) + 1) * self.service_us
        heapq.heappush(self._pending, now + latency)
        return latency

    def clear_queue(self) -> None:
        self._pending.clear()


@dataclass(slots=True)
class RecordMeta:
    key: int
    created_at: int = 0
    last_access: int = 0
    last_modified: int = 0
    access_count: int = 0

    @property
    def last_touch(self) -> int:
        return max(self.last_access, self.last_modified)


@dataclass(eq=False)
class Shard:
    id: int
    keys: list
    primary: int
    # replica node -> time of last synchronization (us)
    replicas: dict = field(default_factory=dict)
    arc: Arc | None = None
    heat: str | None = None
    degraded_placement: bool = False

    @property
    def record_count(self) -> int:
        return len(self.keys)

    def copies(self) -> list[int]:
        return [self.primary, *self.replicas]


@dataclass
class FailureSpec:
    crash_rate: float = 0.0
    mean_downtime: float = 60.0
    corruption_rate: float = 0.0
    corruption_fraction: float = 0.1


class Outcome(NamedTuple):
    ok: bool
    latency: int = 0
    reason: str = ""
    node: int = -1


NODE_DOWN = "NodeDown"
DATA_UNAVAILABLE = "DataUnavailable"


def serve(request: Request, target: Node, now: int, shard_id: int, meta: RecordMeta | None = None) -> Outcome:
    return _serve(target, request.key, request.is_write, now, shard_id, meta)


def _serve(target: Node, key: int, is_write: bool, now: int, shard_id: int, meta: RecordMeta | None) -> Outcome:
    if shard_id not in target.shards:
        raise UnknownKey(f"key {key} (shard {shard_id}) is not placed on node {target.id}")
    if target.fail_depth > 0:
        return Outcome(False, 0, NODE_DOWN, target.id)
    if key in target.damaged:
        return Outcome(False, 0, DATA_UNAVAILABLE, target.id)
    latency = target.admit(now)
    if meta is not None:
        if is_write:
            meta.last_modified = now
            meta.access_count += 1
        else:
            meta.last_access = now
    return Outcome(True, latency, "", target.id)


class ClusterState:
    def __init__(self, nodes: list[Node], key_count: int):
        self.nodes = nodes
        self.key_count = key_count
        self.shards: dict[int, Shard] = {}
        self.key_shard: list[int] = [-1] * key_count
        self.meta = [RecordMeta(k) for k in range(key_count)]
        self._next_id = 0

    @classmethod
    def build(cls, node_count: int, region_count: int, capacity: float, storage_limit: int, key_count: int):
        nodes = [Node(i, i % region_count, capacity, storage_limit) for i in range(node_count)]
        return cls(nodes, key_count)

    def serve_key(self, node_id: int, key: int, is_write: bool, now: int, shard_id: int) -> Outcome:
        return _serve(self.nodes[node_id], key, is_write, now, shard_id, self.meta[key])

    def new_shard_id(self) -> int:
        sid = self._next_id
        self._next_id += 1
        return sid

    def add_shard(self, shard: Shard) -> Shard:
        self.shards[shard.id] = shard
        self._next_id = max(self._next_id, shard.id + 1)
        for k in shard.keys:
            self.key_shard[k] = shard.id
        for n in shard.copies():
            self.host(n, shard)
        return shard

    def remove_shard(self, sid: int) -> Shard:
        shard = self.shards.pop(sid)
        for n in shard.copies():
            self.unhost(n, shard)
        return shard

    def host(self, node_id: int, shard: Shard) -> None:
        node = self.nodes[node_id]
        if shard.id in node.shards:
            return
        node.shards.add(shard.id)
        node.records += len(shard.keys)

    def unhost(self, node_id: int, shard: Shard) -> None:
        node = self.nodes[node_id]
        if shard.id not in node.shards:
            return
        node.shards.discard(shard.id)
        node.records -= len(shard.keys)
        if node.damaged:
            node.damaged.difference_update(shard.keys)

    def stored_keys(self, node_id: int) -> list[int]:
        out: list[int] = []
        for sid in sorted(self.nodes[node_id].shards):
            out.extend(self.shards[sid].keys)
        return sorted(out)

    def up_nodes(self) -> list[Node]:
        return [n for n in self.nodes if not n.failed]

    def intact_elsewhere(self, key: int, shard: Shard, exclude: int) -> bool:
        return any(n != exclude and key not in self.nodes[n].damaged for n in shard.copies())

    def lost_keys(self) -> set[int]:
        """Keys whose every copy is damaged."""
        lost = set()
        damaged_any = set()
        for n in self.nodes:
            damaged_any |= n.damaged
        for k in damaged_any:
            shard = self.shards[self.key_shard[k]]
            if all(k in self.nodes[n].damaged for n in shard.copies()):
                lost.add(k)
        return lost

    def check_coverage(self) -> None:
        seen = [0] * self.key_count
        for sid, shard in self.shards.items():
            for k in shard.keys:
                seen[k] += 1
                if self.key_shard[k] != sid:
                    raise CoverageError(f"key {k} listed in shard {sid} but mapped to {self.key_shard[k]}")
        bad = [k for k, c in enumerate(seen) if c != 1]
        if bad:
            raise CoverageError(f"{len(bad)} keys not covered exactly once (first: {bad[0]})")


@dataclass(frozen=True)
class Move:
    shard: int
    target: int


@dataclass
class MigrationPlan:
    moves: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.moves)


def apply_migration(plan: MigrationPlan, state: ClusterState) -> int:
    """Reassign shard primaries; returns the number of records whose owner changed.

    The whole plan is rejected with TargetOverCapacity before any mutation if a
    target would exceed its storage limit. A target that already holds a replica
    swaps roles with the old primary.
    """
    extra: dict[int, int] = {}
    for mv in plan.moves:
        shard = state.shards[mv.shard]
        if mv.target == shard.primary or mv.target in shard.replicas:
            continue
        extra[mv.target] = extra.get(mv.target, 0) + len(shard.keys)
        extra[shard.primary] = extra.get(shard.primary, 0) - len(shard.keys)
    for nid, delta in extra.items():
        node = state.nodes[nid]
        if delta > 0 and node.records + delta > node.storage_limit:
            raise TargetOverCapacity(
                f"node {nid} would hold {node.records + delta} records (limit {node.storage_limit})"
            )
    moved = 0
    for mv in plan.moves:
        shard = state.shards[mv.shard]
        old = shard.primary
        if mv.target == old:
            continue
        moved += len(shard.keys)
        if mv.target in shard.replicas:
            synced = shard.replicas.pop(mv.target)
            shard.primary = mv.target
            shard.replicas[old] = synced
            continue
        # copy from any intact holder; keys damaged everywhere stay damaged
        lost = [k for k in shard.keys if not state.intact_elsewhere(k, shard, exclude=-1)]
        state.unhost(old, shard)
        shard.primary = mv.target
        state.host(mv.target, shard)
        if lost:
            state.nodes[mv.target].damaged.update(lost)
    return moved


def inject_failures(spec: FailureSpec, duration: float, node_count: int, rng: RngStream) -> list[Event]:
    """Crash/recover pairs and corruption events, both Poisson in time with uniform victims."""
    if node_count < 1:
        raise ValueError("node_count must be >= 1")
    events: list[Event] = []
    for t in _poisson_times(spec.crash_rate, duration, rng):
        victim = int(rng.integers(0, node_count))
        down = float(rng.exponential(spec.mean_downtime)) if spec.mean_downtime > 0 else 0.0
        t_fail = to_us(t)
        t_up = max(t_fail + 1, to_us(t + down))
        events.append(Event(t_fail, EventKind.NODE_FAIL, {"node": victim}))
        events.append(Event(t_up, EventKind.NODE_RECOVER, {"node": victim}))
    for t in _poisson_times(spec.corruption_rate, duration, rng):
        victim = int(rng.integers(0, node_count))
        seed = int(rng.integers(0, 2**62))
        events.append(Event(
            to_us(t), EventKind.CORRUPTION,
            {"node": victim, "fraction": spec.corruption_fraction, "seed": seed},
        ))
    events.sort(key=lambda e: e.time)
    return events


def _poisson_times(rate: float, duration: float, rng: RngStream) -> list[float]:
    out: list[float] = []
    if rate <= 0:
        return out
    t = 0.0
    while True:
        t += float(rng.exponential(1.0 / rate))
        if t >= duration:
            return out
        out.append(t)


def corrupted_keys(payload: dict, stored: list[int]) -> list[int]:
    """The damaged key set for a Corruption payload against a node's stored keys."""
    count = round_half_up(payload["fraction"] * len(stored))
    return sorted(random.Random(payload["seed"]).sample(sorted(stored), count))
