"""Baseline partitioning: range tables, hash-modulus, and a consistent-hash ring."""
from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass

from .cluster import ClusterState, Shard
from .hashing import RING_SIZE, Arc, hash64, key_hash

VNODE_TAG = 0x766E6F6465


class StrategyKind(str, enum.Enum):
    RANGE = "range"
    HASH = "hash"
    CONSISTENT = "consistent"
    ADAPTIVE = "adaptive"


class EmptyRing(LookupError):
    pass


class DuplicateNode(ValueError):
    pass


# --- range -----------------------------------------------------------------

@dataclass(frozen=True)
class RangeTable:
    """Sorted (exclusive upper bound, shard id) pairs covering [0, key_count)."""

    bounds: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        uppers = [b for b, _ in self.bounds]
        if not uppers or any(b2 <= b1 for b1, b2 in zip(uppers, uppers[1:])) or uppers[0] <= 0:
            raise ValueError("range bounds must be positive and strictly increasing")

    @property
    def key_count(self) -> int:
        return self.bounds[-1][0]

    @classmethod
    def equal_width(cls, key_count: int, n_shards: int) -> "RangeTable":
        if not 1 <= n_shards <= key_count:
            raise ValueError("need 1 <= n_shards <= key_count")
        return cls(tuple(((i + 1) * key_count // n_shards, i) for i in range(n_shards)))


def range_locate(key: int, table: RangeTable) -> int:
    if not 0 <= key < table.key_count:
        raise ValueError(f"key {key} outside [0, {table.key_count})")
    i = bisect.bisect_right([b for b, _ in table.bounds], key)
    return table.bounds[i][1]


# --- hash modulus ----------------------------------------------------------

def hash_locate(key: int, n_shards: int, hash_fn=key_hash) -> int:
    if n_shards < 1:
        raise ValueError("n_shards must be >= 1")
    return hash_fn(key) % n_shards


# --- consistent hashing ----------------------------------------------------

class HashRing:
    """Ring of (position, node) tokens; a hash is owned by the first token at or after it.

    Equal positions are ordered by node id, so the lower id wins a collision.
    """

    def __init__(self, vnode_count: int = 128):
        self.vnode_count = vnode_count
        self._tokens: list[tuple[int, int]] = []
        self._positions: list[int] = []

    def copy(self) -> "HashRing":
        other = HashRing(self.vnode_count)
        other._tokens = list(self._tokens)
        other._positions = list(self._positions)
        return other

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def nodes(self) -> set[int]:
        return {n for _, n in self._tokens}

    @property
    def tokens(self) -> list[tuple[int, int]]:
        return list(self._tokens)

    def vnode_positions(self, node: int) -> list[int]:
        return [hash64(VNODE_TAG, node, i) for i in range(self.vnode_count)]

    def add_node(self, node: int) -> None:
        if node in self.nodes:
            raise DuplicateNode(f"node {node} already on ring")
        for pos in self.vnode_positions(node):
            self.add_position(pos, node)

    def remove_node(self, node: int) -> None:
        keep = [(p, n) for p, n in self._tokens if n != node]
        self._tokens = keep
        self._positions = [p for p, _ in keep]

    def add_position(self, pos: int, node: int) -> None:
        i = bisect.bisect_left(self._tokens, (pos, node))
        self._tokens.insert(i, (pos, node))
        self._positions.insert(i, pos)

    def remove_position(self, pos: int) -> int:
        i = bisect.bisect_left(self._positions, pos)
        if i == len(self._positions) or self._positions[i] != pos:
            raise KeyError(pos)
        self._positions.pop(i)
        return self._tokens.pop(i)[1]

    def reassign(self, pos: int, node: int) -> None:
        self.remove_position(pos)
        self.add_position(pos, node)

    def token_index(self, h: int) -> int:
        if not self._tokens:
            raise EmptyRing("ring has no nodes")
        i = bisect.bisect_left(self._positions, h)
        return 0 if i == len(self._positions) else i

    def token_for(self, h: int) -> tuple[int, int]:
        return self._tokens[self.token_index(h)]

    def owner_of_hash(self, h: int) -> int:
        return self._tokens[self.token_index(h)][1]

    def arc_of(self, pos: int) -> Arc:
        """The arc ending at token ``pos`` (from the previous distinct position)."""
        i = bisect.bisect_left(self._positions, pos)
        if i == len(self._positions) or self._positions[i] != pos:
            raise KeyError(pos)
        # bisect_left lands on the first copy of pos, so i-1 is distinct unless all are equal
        return Arc.between(self._positions[i - 1], pos)

    def neighbours(self, pos: int) -> tuple[tuple[int, int], tuple[int, int]]:
        """(predecessor, successor) tokens of the token at ``pos``."""
        i = bisect.bisect_left(self._positions, pos)
        n = len(self._tokens)
        return self._tokens[(i - 1) % n], self._tokens[(i + 1) % n]

    def ownership(self) -> dict[int, int]:
        """Ring space (out of 2**64) owned per node."""
        out: dict[int, int] = {}
        prev = None
        for pos, node in self._tokens:
            if prev is not None and pos == prev:
                continue
            out[node] = out.get(node, 0) + self.arc_of(pos).length
            prev = pos
        return out


def ring_locate(key: int, ring: HashRing) -> int:
    return ring.owner_of_hash(key_hash(key))


def ring_add(ring: HashRing, node: int) -> tuple[HashRing, float]:
    """New ring with ``node`` added and the fraction of ring space it took over."""
    if node in ring.nodes:
        raise DuplicateNode(f"node {node} already on ring")
    out = ring.copy()
    out.add_node(node)
    return out, out.ownership().get(node, 0) / RING_SIZE


def ring_remove(ring: HashRing, node: int) -> HashRing:
    out = ring.copy()
    out.remove_node(node)
    return out


# --- strategies ------------------------------------------------------------

class Strategy:
    """Routing policy: owns the key->shard->node mapping for one run."""

    kind: StrategyKind
    uses_replication = False

    def __init__(self, config):
        self.config = config
        self.warnings: list[str] = []

    def build(self, cluster: ClusterState) -> None:
        raise NotImplementedError

    def route(self, key: int, is_write: bool, now: int) -> tuple[int, int]:
        """(node id, shard id) the request should be sent to."""
        shard = self.cluster.key_shard[key]
        return self._key_node[key], shard

    # hooks the simulation calls; baselines are static and ignore them
    def attach(self, sim) -> None:
        self.sim = sim

    def observe(self, key: int, shard: int, node: int, is_write: bool, now: int) -> None:
        pass

    def on_tick(self, now: int) -> None:
        pass

    def on_fail(self, node: int, now: int) -> None:
        pass

    def on_migration(self, payload, now: int) -> None:
        pass

    def on_regen_step(self, step, now: int) -> None:
        pass

    def on_corruption(self, node: int, now: int) -> None:
        pass

    def on_recover(self, node: int, now: int) -> None:
        pass

    def census(self) -> dict | None:
        return None

    def _place_static(self, cluster: ClusterState, groups: dict[int, list[int]], owner) -> None:
        self.cluster = cluster
        for sid in sorted(groups):
            cluster.add_shard(Shard(sid, sorted(groups[sid]), owner(sid)))
        self._key_node = [cluster.shards[s].primary for s in cluster.key_shard]


class RangeStrategy(Strategy):
    kind = StrategyKind.RANGE

    def build(self, cluster: ClusterState) -> None:
        n = self.config.sharding.n_shards
        self.table = RangeTable.equal_width(cluster.key_count, n)
        groups: dict[int, list[int]] = {i: [] for i in range(n)}
        for k in range(cluster.key_count):
            groups[range_locate(k, self.table)].append(k)
        self._place_static(cluster, groups, lambda s: s % len(cluster.nodes))


class HashStrategy(Strategy):
    kind = StrategyKind.HASH

    def build(self, cluster: ClusterState) -> None:
        n = self.config.sharding.n_shards
        groups: dict[int, list[int]] = {i: [] for i in range(n)}
        for k in range(cluster.key_count):
            groups[hash_locate(k, n)].append(k)
        self._place_static(cluster, groups, lambda s: s % len(cluster.nodes))


class ConsistentStrategy(Strategy):
    """One shard per node: the union of that node's ring arcs."""

    kind = StrategyKind.CONSISTENT

    def build(self, cluster: ClusterState) -> None:
        self.ring = HashRing(self.config.sharding.vnodes)
        for node in cluster.nodes:
            self.ring.add_node(node.id)
        groups: dict[int, list[int]] = {n.id: [] for n in cluster.nodes}
        for k in range(cluster.key_count):
            groups[ring_locate(k, self.ring)].append(k)
        self._place_static(cluster, groups, lambda s: s)
