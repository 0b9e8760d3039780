"""The adaptive strategy: a replicated consistent-hash ring whose arcs are re-sharded on every tick.

Each ring token owns one shard (the arc ending at the token). A rebalance tick
records per-shard load, classifies heat, forecasts, and then schedules a
MigrationDone event at the same instant which heals, splits, merges, moves and
replicates shards.
"""
from __future__ import annotations

import math

from .adaptive import (
    HeatTier, LoadHistory, NodeSlot, ShardLoad, WindowConfig, classify_heat, forecast,
    fractal_dimension, plan_reshard, split_points, target_shard_size, temporal_assign,
)
from .cluster import ClusterState, Shard
from .hashing import Arc, key_hash, unit_positions
from .resilience import NoLiveNodes, place_replicas, regenerate
from .sim import US_PER_S, Event, EventKind
from .strategies import HashRing, Strategy, StrategyKind


class AdaptiveStrategy(Strategy):
    kind = StrategyKind.ADAPTIVE
    uses_replication = True

    def __init__(self, config):
        super().__init__(config)
        self.policy = config.replication
        self.fc = config.forecast
        self.sharding = config.sharding
        self.capacity = config.node.capacity
        self.interval = config.sharding.rebalance_interval
        w = config.windows
        self.windows_us = WindowConfig(w.hot_window * US_PER_S, w.warm_window * US_PER_S)
        self.history = LoadHistory(self.fc.history_len)
        self.pred: dict[int, float] = {}
        self.weights: dict[int, float] = {}
        self._accessed: list[int] = []
        self._counts: dict[int, int] = {}
        self._key_counts: dict[int, int] = {}
        self._pos_shard: dict[int, int] = {}
        self._inflight: dict[int, set] = {}
        self._targets: dict[int, int] = {}
        self._pending_warnings: list[str] = []
        self.sim = None

    # --- setup -------------------------------------------------------------

    def build(self, cluster: ClusterState) -> None:
        self.cluster = cluster
        self.hashes = [key_hash(k) for k in range(cluster.key_count)]
        self.ring = HashRing(self.sharding.adaptive_vnodes)
        for node in cluster.nodes:
            for pos in self.ring.vnode_positions(node.id):
                if pos not in self._pos_shard:
                    self.ring.add_position(pos, node.id)
                    self._pos_shard[pos] = -1
        groups: dict[int, list[int]] = {p: [] for p in self._pos_shard}
        for k, h in enumerate(self.hashes):
            groups[self.ring.token_for(h)[0]].append(k)
        for pos, owner in self.ring.tokens:
            sid = cluster.new_shard_id()
            shard = Shard(sid, groups[pos], owner, arc=self.ring.arc_of(pos))
            rset = place_replicas(sid, owner, self.policy, cluster.nodes)
            shard.replicas = dict(rset.replicas)
            shard.degraded_placement = rset.degraded
            if rset.degraded:
                self._pending_warnings.append(f"shard {sid} placed with {len(shard.copies())} copies")
            cluster.add_shard(shard)
            self._pos_shard[pos] = sid
        self.base_records = self.sharding.base_shard_records

    def attach(self, sim) -> None:
        self.sim = sim
        for msg in self._pending_warnings:
            sim.warn("DegradedPlacement", msg)
        self._pending_warnings.clear()

    def _warn(self, kind: str, msg: str) -> None:
        if self.sim is None:
            self._pending_warnings.append(msg)
        else:
            self.sim.warn(kind, msg)

    # --- request path ------------------------------------------------------

    def route(self, key: int, is_write: bool, now: int) -> tuple[int, int]:
        """Writes go to the primary (no write fail-over); reads go to the healthy
        copy with the shortest queue, preferring the primary on ties."""
        sid = self.cluster.key_shard[key]
        shard = self.cluster.shards[sid]
        if is_write:
            return shard.primary, sid
        nodes = self.cluster.nodes
        best_node, best_q = -1, None
        for nid in shard.copies():
            n = nodes[nid]
            if n.failed or key in n.damaged:
                continue
            q = n.queue_len(now)
            if best_q is None or q < best_q:
                best_node, best_q = nid, q
        return (shard.primary if best_node < 0 else best_node), sid

    def observe(self, key: int, shard: int, node: int, is_write: bool, now: int) -> None:
        self._counts[shard] = self._counts.get(shard, 0) + 1
        self._key_counts[key] = self._key_counts.get(key, 0) + 1

    # --- tick: measure and forecast ----------------------------------------

    def on_tick(self, now: int) -> None:
        self._measure(now)
        self.sim.schedule(Event(now, EventKind.MIGRATION_DONE, {"tick": now}))

    def _measure(self, now: int) -> None:
        meta = self.cluster.meta
        for sid, shard in self.cluster.shards.items():
            rate = self._counts.get(sid, 0) / self.interval
            self.history.push(sid, now, rate)
            series = self.history.series(sid)
            self.pred[sid] = forecast(series, self.fc) if len(series) >= 2 else rate
            touch = max((meta[k].last_touch for k in shard.keys), default=0)
            shard.heat = classify_heat(_Touch(touch), now, self.windows_us).label
        self.weights = {k: c / self.interval for k, c in self._key_counts.items()}
        self._accessed = list(self._key_counts)
        self._counts = {}
        self._key_counts = {}

    def census(self) -> dict:
        out = {"hot": 0, "warm": 0, "cold": 0}
        for shard in self.cluster.shards.values():
            if shard.heat is not None:
                out[shard.heat] += 1
        return out

    # --- tick: apply -------------------------------------------------------

    def on_migration(self, payload, now: int) -> None:
        self._heal(now)
        self._split_hot(now)
        self._split_fractal(now)
        self._merge_cold(now)
        self._balance(now)
        self._replicate_hot(now)
        for nid, node in enumerate(self.cluster.nodes):
            if node.damaged and not node.failed:
                self._plan_regen(nid, now)
        self.sim.audit()
        self.sim.log_event(now, "Rebalance", shards=len(self.cluster.shards))

    def _limit(self) -> float:
        return self.fc.split_threshold * self.capacity

    def _node_loads(self) -> dict[int, float]:
        """Predicted load per live node; a shard's load is shared by its healthy copies."""
        nodes = self.cluster.nodes
        load = {n.id: 0.0 for n in nodes if not n.failed}
        for sid, shard in self.cluster.shards.items():
            live = [n for n in shard.copies() if not nodes[n].failed]
            if not live:
                continue
            share = self.pred.get(sid, 0.0) / len(live)
            for n in live:
                load[n] += share
        return load

    def _share(self, sid: int) -> float:
        nodes = self.cluster.nodes
        live = [n for n in self.cluster.shards[sid].copies() if not nodes[n].failed]
        return self.pred.get(sid, 0.0) / max(1, len(live))

    def _heal(self, now: int) -> None:
        for sid in sorted(self.cluster.shards):
            self._promote_if_down(self.cluster.shards[sid], now)

    def on_recover(self, node: int, now: int) -> None:
        if self.cluster.nodes[node].damaged:
            self._plan_regen(node, now)

    def on_corruption(self, node: int, now: int) -> None:
        if not self.cluster.nodes[node].failed:
            self._plan_regen(node, now)

    def _promote_if_down(self, shard: Shard, now: int) -> None:
        nodes = self.cluster.nodes
        if not nodes[shard.primary].failed:
            return
        best = None
        for nid, synced in shard.replicas.items():
            if nodes[nid].failed:
                continue
            if best is None or (synced, -nid) > (best[0], -best[1]):
                best = (synced, nid)
        if best is None:
            return
        old = shard.primary
        shard.primary = best[1]
        shard.replicas[old] = shard.replicas.pop(best[1])
        self.ring.reassign(shard.arc.end, shard.primary)
        self.sim.trace.promoted_records += shard.record_count

    # --- re-sharding ---------------------------------------------------------

    def _restructure(self, old_ids: list[int], new_shards: list[Shard]) -> tuple[int, int]:
        """Replace shards, keeping per-copy damage for nodes that already held a key.

        A node that newly holds a key copies it from a live intact holder, or
        starts with it damaged if there is none. Returns (records newly copied to
        primaries, records newly copied to replicas).
        """
        cl = self.cluster
        nodes = cl.nodes
        before: dict[int, tuple[set, set]] = {}
        for sid in old_ids:
            sh = cl.shards[sid]
            copies = set(sh.copies())
            for k in sh.keys:
                before[k] = (copies, {n for n in copies if k in nodes[n].damaged})
        for sid in old_ids:
            cl.remove_shard(sid)
            self.pred.pop(sid, None)
        to_primary = to_replica = 0
        for sh in new_shards:
            cl.add_shard(sh)
            for n in sh.copies():
                node = nodes[n]
                for k in sh.keys:
                    holders, dmg = before[k]
                    if n in holders:
                        if n in dmg:
                            node.damaged.add(k)
                        continue
                    if not any(h not in dmg and not nodes[h].failed for h in holders):
                        node.damaged.add(k)
                    if n == sh.primary:
                        to_primary += 1
                    else:
                        to_replica += 1
        return to_primary, to_replica

    def _shard_at(self, pos: int) -> Shard:
        return self.cluster.shards[self._pos_shard[pos]]

    def _split_hot(self, now: int) -> None:
        limit = self._limit()
        for sid in sorted(self.cluster.shards):
            shard = self.cluster.shards.get(sid)
            if shard is None or self.pred.get(sid, 0.0) <= limit or len(shard.keys) < 2:
                continue
            loads = self._node_loads()
            targets = sorted(loads, key=lambda n: (loads[n], n))
            targets = [n for n in targets if n != shard.primary]
            plan = plan_reshard(shard, self.pred[sid], self.capacity, self.ring, self.fc,
                                weights=self.weights, targets=targets)
            if plan.kind != "split":
                continue
            self._apply_split(shard, plan.children, now)

    def _split_fractal(self, now: int) -> None:
        """Split shards larger than their node's fractal-scaled target size in half."""
        by_node: dict[int, list[int]] = {}
        key_shard = self.cluster.key_shard
        shards = self.cluster.shards
        for k in self._accessed:
            by_node.setdefault(shards[key_shard[k]].primary, []).append(self.hashes[k])
        self._targets = {}
        for nid, hs in sorted(by_node.items()):
            if len(hs) < 2:
                continue
            est = fractal_dimension(unit_positions(hs), self.sharding.fractal_scales)
            self._targets[nid] = target_shard_size(min(1.0, est.dimension), self.base_records)
        for sid in sorted(shards):
            shard = shards.get(sid)
            if shard is None:
                continue
            target = self._targets.get(shard.primary, self.base_records)
            if len(shard.keys) <= target or shard.arc.length < 2:
                continue
            cuts = split_points(shard.arc, shard.keys, 2)
            if not cuts:
                continue
            bounds = [shard.arc.start, *cuts, shard.arc.end]
            children = []
            for i in range(len(bounds) - 1):
                arc = Arc.between(bounds[i], bounds[i + 1])
                keys = [k for k in shard.keys if self.hashes[k] in arc]
                children.append(_ChildSpec(arc, shard.primary, keys))
            self._apply_split(shard, children, now)

    def _apply_split(self, shard: Shard, children, now: int) -> None:
        cl = self.cluster
        parent_hist = self.history.drop(shard.id)
        parent_pred = self.pred.get(shard.id, 0.0)
        total_w = sum(self.weights.get(k, 0.0) for k in shard.keys)
        existing = dict(shard.replicas)
        existing[shard.primary] = now
        new = []
        for child in children:
            if not child.keys:
                continue
            sid = cl.new_shard_id()
            if child.owner == shard.primary:
                replicas = dict(shard.replicas)
                degraded = shard.degraded_placement
            else:
                rset = place_replicas(sid, child.owner, self.policy, cl.nodes,
                                      existing={n: t for n, t in existing.items() if n != child.owner},
                                      load=self._node_loads(), now=now)
                replicas, degraded = dict(rset.replicas), rset.degraded
                if degraded:
                    self._warn("DegradedPlacement", f"split child {sid} of shard {shard.id}")
            new.append(Shard(sid, sorted(child.keys), child.owner, replicas, child.arc, shard.heat, degraded))
            if total_w > 0:
                frac = sum(self.weights.get(k, 0.0) for k in child.keys) / total_w
            else:
                frac = child.arc.length / shard.arc.length
            self.history.seed(sid, [(t, v * frac) for t, v in parent_hist])
            self.pred[sid] = parent_pred * frac
        if len(new) < 2:
            self.history.seed(shard.id, parent_hist)
            return
        to_primary, to_replica = self._restructure([shard.id], new)
        old_end = shard.arc.end
        self.ring.remove_position(old_end)
        del self._pos_shard[old_end]
        for sh in new:
            self.ring.add_position(sh.arc.end, sh.primary)
            self._pos_shard[sh.arc.end] = sh.id
        self.sim.record_moved(to_primary)
        self.sim.trace.replicated_records += to_replica
        self.sim.log_event(now, "Split", shard=shard.id, children=[s.id for s in new])

    def _merge_cold(self, now: int) -> None:
        """Fold a cold shard into its ring successor when both live on the same nodes."""
        cl = self.cluster
        if len(cl.shards) <= len(cl.nodes):
            return
        for sid in sorted(cl.shards):
            shard = cl.shards.get(sid)
            if shard is None or len(cl.shards) <= len(cl.nodes):
                continue
            _, (succ_pos, _) = self.ring.neighbours(shard.arc.end)
            sib = self._shard_at(succ_pos)
            if sib.id == sid or sib.primary != shard.primary or set(sib.replicas) != set(shard.replicas):
                continue
            target = self._targets.get(shard.primary, self.base_records)
            if len(shard.keys) + len(sib.keys) > target:
                continue
            plan = plan_reshard(shard, self.pred.get(sid, 0.0), self.capacity, self.ring, self.fc,
                                sibling=(sib, self.pred.get(sib.id, 0.0)))
            if plan.kind != "merge":
                continue
            child = plan.children[0]
            mid = cl.new_shard_id()
            replicas = {n: min(shard.replicas[n], sib.replicas[n]) for n in sib.replicas}
            heat = max((shard.heat, sib.heat), key=lambda h: _TIER_ORDER.get(h, -1))
            merged = Shard(mid, child.keys, sib.primary, replicas, child.arc, heat,
                           shard.degraded_placement or sib.degraded_placement)
            h1, h2 = self.history.drop(sid), self.history.drop(sib.id)
            self.history.seed(mid, [(t, a + b) for (t, a), (_, b) in zip(h1[-len(h2):], h2[-len(h1):])])
            pred = self.pred.get(sid, 0.0) + self.pred.get(sib.id, 0.0)
            self._restructure([sid, sib.id], [merged])
            self.pred[mid] = pred
            self.ring.remove_position(plan.remove_position)
            del self._pos_shard[plan.remove_position]
            self._pos_shard[merged.arc.end] = mid
            self.sim.log_event(now, "Merge", shards=[sid, sib.id], into=mid)

    def _balance(self, now: int) -> None:
        """Move copies off nodes predicted above the balance threshold."""
        cl = self.cluster
        nodes = cl.nodes
        loads = self._node_loads()
        if not loads:
            return
        mean = sum(loads.values()) / len(loads)
        cap = self._limit()
        threshold = max(min(cap, self.sharding.balance_factor * mean),
                        self.fc.merge_threshold * self.capacity)
        all_regions = {n.region for n in nodes}
        moves = 0
        for nid in sorted(loads, key=lambda n: (-loads[n], n)):
            if loads[nid] <= threshold:
                break
            hosted = sorted(nodes[nid].shards, key=lambda s: (-self._share(s), s))
            for sid in hosted:
                if moves >= self.sharding.max_moves_per_tick or loads[nid] <= threshold:
                    break
                share = self._share(sid)
                if share <= 0 or share > threshold:
                    continue
                shard = cl.shards[sid]
                others = [n for n in shard.copies() if n != nid]
                used = {nodes[n].region for n in others}
                region_free = len(used) < len(all_regions)
                slots = []
                for n in nodes:
                    if n.failed or n.id in shard.copies():
                        continue
                    if (self.policy.anti_affinity == "region" and region_free and n.region in used):
                        continue
                    if n.records + len(shard.keys) > n.storage_limit:
                        continue
                    slots.append(NodeSlot(n.id, self.capacity, True, loads.get(n.id, 0.0)))
                if not slots:
                    continue
                tier = HeatTier[shard.heat.upper()] if shard.heat else HeatTier.COLD
                try:
                    target = temporal_assign([ShardLoad(sid, tier, share)], slots)[sid]
                except NoLiveNodes:
                    continue
                if loads[target] + share >= loads[nid] - share:
                    continue
                self._move_copy(shard, nid, target, now)
                loads[nid] -= share
                loads[target] += share
                moves += 1

    def _move_copy(self, shard: Shard, src: int, dst: int, now: int) -> None:
        cl = self.cluster
        nodes = cl.nodes
        lost = [k for k in shard.keys
                if not any(k not in nodes[n].damaged and not nodes[n].failed for n in shard.copies())]
        cl.unhost(src, shard)
        if src == shard.primary:
            shard.primary = dst
            self.ring.reassign(shard.arc.end, dst)
        else:
            del shard.replicas[src]
            shard.replicas[dst] = now
        cl.host(dst, shard)
        if lost:
            nodes[dst].damaged.update(lost)
        self.sim.record_moved(len(shard.keys))

    def _replicate_hot(self, now: int) -> None:
        """Extra read copies for shards that are too hot to split further."""
        cl = self.cluster
        nodes = cl.nodes
        limit = self._limit()
        live = sum(1 for n in nodes if not n.failed)
        rf = self.policy.rf
        for sid in sorted(cl.shards):
            shard = cl.shards[sid]
            pred = self.pred.get(sid, 0.0)
            want = min(live, max(rf, math.ceil(pred / limit))) if limit > 0 else rf
            copies = shard.copies()
            if len(copies) < want:
                if nodes[shard.primary].failed:
                    continue
                rset = place_replicas(sid, shard.primary, self.policy, nodes, copies=want,
                                      existing=shard.replicas, load=self._node_loads(), now=now)
                fresh = [n for n in rset.replicas if n not in shard.replicas]
                for n in fresh:
                    self._add_replica(shard, n, now)
            elif len(copies) > rf:
                keep = max(rf, math.ceil(pred / (self.fc.merge_threshold * self.capacity or 1.0)))
                if len(copies) <= keep:
                    continue
                extra = sorted(shard.replicas, key=lambda n: (-shard.replicas[n], -n))
                for n in extra[:len(copies) - keep]:
                    del shard.replicas[n]
                    cl.unhost(n, shard)

    def _add_replica(self, shard: Shard, nid: int, now: int) -> None:
        cl = self.cluster
        nodes = cl.nodes
        lost = [k for k in shard.keys
                if not any(k not in nodes[n].damaged and not nodes[n].failed for n in shard.copies())]
        shard.replicas[nid] = now
        cl.host(nid, shard)
        if lost:
            nodes[nid].damaged.update(lost)
        self.sim.trace.replicated_records += len(shard.keys)

    # --- regeneration --------------------------------------------------------

    def _plan_regen(self, nid: int, now: int) -> None:
        cl = self.cluster
        nodes = cl.nodes
        node = nodes[nid]
        inflight = self._inflight.setdefault(nid, set())
        todo = node.damaged - inflight
        if not todo or node.failed:
            return
        intact: dict[int, set] = {}
        offline: set = set()
        for sid in node.shards:
            shard = cl.shards[sid]
            for m in shard.copies():
                if m == nid:
                    continue
                good = {k for k in shard.keys if k not in nodes[m].damaged}
                if nodes[m].failed:
                    offline |= good
                else:
                    intact.setdefault(m, set()).update(good)
        sources = sorted(intact.items())
        arcs = [cl.shards[sid].arc for sid in sorted(node.shards)]
        plan = regenerate(
            nid, todo, sources, key_hash, arcs=arcs, offline=offline,
            stored=cl.stored_keys(nid), repair_rate=self.config.repair_rate,
            parallelism=self.policy.parallelism, now=now,
        )
        for step in plan.steps:
            inflight.update(step.keys)
            self.sim.schedule(Event(step.done_at, EventKind.REGEN_STEP, step))
        if plan.unrecoverable:
            self.sim.log_event(now, "Unrecoverable", node=nid, keys=len(plan.unrecoverable))

    def on_regen_step(self, step, now: int) -> None:
        cl = self.cluster
        nodes = cl.nodes
        node = nodes[step.node]
        inflight = self._inflight.setdefault(step.node, set())
        inflight.difference_update(step.keys)
        if node.failed:
            return
        src = nodes[step.source]
        restored = 0
        for k in step.keys:
            sid = cl.key_shard[k]
            if sid not in node.shards or k not in node.damaged:
                continue
            if src.failed or sid not in src.shards or k in src.damaged:
                continue
            node.damaged.discard(k)
            restored += 1
        self.sim.trace.restored_keys += restored


class _Touch:
    """Adapter exposing a single recency value through the RecordMeta fields."""

    __slots__ = ("last_access", "last_modified")

    def __init__(self, t: int):
        self.last_access = t
        self.last_modified = t


class _ChildSpec:
    __slots__ = ("arc", "owner", "keys")

    def __init__(self, arc: Arc, owner: int, keys: list):
        self.arc = arc
        self.owner = owner
        self.keys = keys


_TIER_ORDER = {t.label: int(t) for t in HeatTier}
