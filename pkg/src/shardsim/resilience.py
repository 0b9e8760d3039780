"""Replica placement with anti-affinity, periodic sync, read fail-over, recursive regeneration."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .cluster import Node
from .hashing import MASK64, Arc
from .sim import US_PER_S

UNRECOVERABLE = -1
DEFERRED = -2
SPLIT = -3
CLEAN = -4  # half-arc with no damaged keys: nothing to copy


class NoLiveNodes(RuntimeError):
    pass


@dataclass
class ReplicationPolicy:
    rf: int = 2
    sync_interval: float = 30.0
    anti_affinity: str = "region"  # "node" | "region"
    repair_rate: float | None = None  # records/s; None -> 10 x node capacity
    parallelism: int = 2


@dataclass
class ReplicaSet:
    shard: int
    primary: int
    # replica node -> last sync time
    replicas: dict = field(default_factory=dict)
    degraded: bool = False

    def staleness(self, now: int) -> dict[int, int]:
        return {n: now - t for n, t in self.replicas.items()}


def place_replicas(
    shard: int,
    primary: int,
    policy: ReplicationPolicy,
    nodes: list[Node],
    *,
    copies: int | None = None,
    existing: dict | None = None,
    load: dict | None = None,
    now: int = 0,
) -> ReplicaSet:
    """Fill a replica set up to ``copies`` (default rf) total copies.

    Valid existing replicas are kept. New replicas go to live nodes not already
    holding the shard, preferring unused regions under region anti-affinity, then
    the least loaded (``load``) or least full node, then the lowest id. Copies
    beyond the number of regions may share a region without degrading the set.
    """
    live = [n for n in nodes if not n.failed]
    if not live:
        raise NoLiveNodes("no live node to place replicas on")
    target = policy.rf if copies is None else copies
    by_id = {n.id: n for n in nodes}
    all_regions = {n.region for n in nodes}
    region_mode = policy.anti_affinity == "region"
    kept: dict[int, int] = {}
    used_regions = {by_id[primary].region}

    def clashes(n: Node) -> bool:
        # once every region holds a copy, further copies may share regions
        return region_mode and n.region in used_regions and used_regions != all_regions

    for nid, synced in (existing or {}).items():
        if nid == primary or nid in kept or by_id[nid].failed or 1 + len(kept) >= target:
            continue
        if clashes(by_id[nid]):
            continue
        kept[nid] = synced
        used_regions.add(by_id[nid].region)
    degraded = False
    while 1 + len(kept) < target:
        cands = [n for n in live if n.id != primary and n.id not in kept]
        if not cands:
            degraded = True
            break

        def rank(n: Node):
            weight = load.get(n.id, 0.0) if load is not None else n.records
            return (clashes(n), weight, n.id)
        best = min(cands, key=rank)
        if clashes(best):
            degraded = True
        kept[best.id] = now
        used_regions.add(best.region)
    return ReplicaSet(shard, primary, kept, degraded)


def sync_tick(rset: ReplicaSet, now: int, is_up: Callable[[int], bool]) -> ReplicaSet:
    """Replicas on live nodes catch up; replicas on failed nodes keep their old sync time."""
    synced = {n: (now if is_up(n) else t) for n, t in rset.replicas.items()}
    return ReplicaSet(rset.shard, rset.primary, synced, rset.degraded)


def failover(key: int, rset: ReplicaSet, nodes: list[Node]) -> int | None:
    """Least-stale live replica holding ``key`` undamaged, or None if unavailable."""
    best = None
    for nid, synced in rset.replicas.items():
        node = nodes[nid]
        if node.failed or key in node.damaged:
            continue
        if best is None or (synced, -nid) > (best[0], -best[1]):
            best = (synced, nid)
    return None if best is None else best[1]


# --- regeneration ----------------------------------------------------------

@dataclass
class RegenTask:
    node: int
    arc: Arc
    depth: int
    keys: tuple
    source: int = SPLIT
    children: list = field(default_factory=list)


@dataclass(frozen=True)
class RegenStep:
    node: int
    arc: Arc
    source: int
    keys: tuple
    start: int
    duration: int

    @property
    def done_at(self) -> int:
        return self.start + self.duration


@dataclass
class RegenPlan:
    roots: list
    steps: list
    unrecoverable: set
    deferred: set

    @property
    def leaves(self) -> list[RegenTask]:
        out = []
        stack = list(reversed(self.roots))
        while stack:
            t = stack.pop()
            if t.children:
                stack.extend(reversed(t.children))
            else:
                out.append(t)
        return out


def regenerate(
    node: int,
    damaged: Iterable[int],
    sources: list[tuple[int, set]],
    key_hash: Callable[[int], int],
    *,
    arcs: list[Arc] | None = None,
    offline: set | None = None,
    stored: Iterable[int] | None = None,
    repair_rate: float = 1000.0,
    parallelism: int = 2,
    now: int = 0,
    max_depth: int | None = None,
) -> RegenPlan:
    """Plan the recursive rebuild of ``node``'s damaged keys.

    ``sources`` lists (node id, keys it holds intact) in preference order. A task
    whose arc is fully covered by one source becomes a single copy step; otherwise
    it splits into its two half-arcs, down to per-record tasks at ``max_depth``.
    Keys with no live intact copy are deferred if ``offline`` still holds them,
    else declared unrecoverable.
    """
    damaged = sorted(set(damaged))
    offline = offline or set()
    hashes = {k: key_hash(k) for k in damaged}
    stored_h = [key_hash(k) for k in (stored if stored is not None else damaged)]
    roots_arcs = arcs if arcs is not None else [Arc(0, 1 << 64)]
    unrecoverable: set = set()
    deferred: set = set()
    leaves: list[tuple[RegenTask, int]] = []

    def records_in(arc: Arc) -> int:
        return sum(1 for h in stored_h if h in arc)

    def unreachable(keys) -> None:
        for k in keys:
            (deferred if k in offline else unrecoverable).add(k)

    def visit(arc: Arc, keys: tuple, depth: int, limit: int) -> RegenTask:
        task = RegenTask(node, arc, depth, keys)
        keyset = set(keys)
        for src, intact in sources:
            if keyset <= intact:
                task.source = src
                leaves.append((task, max(1, records_in(arc))))
                return task
        if not any(keyset & intact for _, intact in sources):
            task.source = DEFERRED if keyset <= offline else UNRECOVERABLE
            unreachable(keys)
            return task
        if depth + 1 >= limit or arc.length < 2 or len(keys) == 1:
            # per-record base case: cut the arc just after each key's hash
            ordered = sorted(keys, key=lambda k: arc.offset(hashes[k]))
            cuts = [arc.start] + [hashes[k] for k in ordered[:-1]] + [arc.end]
            for i, k in enumerate(ordered):
                piece = Arc(cuts[i], (cuts[i + 1] - cuts[i]) & MASK64 or arc.length)
                child = RegenTask(node, piece, depth + 1, (k,))
                src = next((s for s, intact in sources if k in intact), None)
                if src is None:
                    child.source = DEFERRED if k in offline else UNRECOVERABLE
                    unreachable((k,))
                else:
                    child.source = src
                    leaves.append((child, 1))
                task.children.append(child)
            return task
        for half in arc.halves():
            sub = tuple(k for k in keys if hashes[k] in half)
            if sub:
                task.children.append(visit(half, sub, depth + 1, limit))
            else:
                task.children.append(RegenTask(node, half, depth + 1, (), CLEAN))
        return task

    roots = []
    remaining = list(damaged)
    for arc in roots_arcs:
        keys = tuple(k for k in remaining if hashes[k] in arc)
        if not keys:
            continue
        limit = max_depth
        if limit is None:
            limit = math.ceil(math.log2(max(2, records_in(arc))))
        roots.append(visit(arc, keys, 0, limit))
        taken = set(keys)
        remaining = [k for k in remaining if k not in taken]
    unreachable(remaining)

    steps = []
    clock = 0
    for task, records in leaves:
        dur = max(1, round(records / repair_rate * US_PER_S / parallelism))
        steps.append(RegenStep(node, task.arc, task.source, task.keys, now + clock, dur))
        clock += dur
    return RegenPlan(roots, steps, unrecoverable, deferred)
