"""The event loop: wires workload, failures, strategy and cluster together and records a trace."""
from __future__ import annotations

import logging
import math

from .cluster import ClusterState, NodeStatus, corrupted_keys, inject_failures
from .metrics import MetricBucket, SimTrace, percentile
from .sim import Event, EventKind, EventQueue, rng_stream, to_s, to_us
from .strategies import ConsistentStrategy, HashStrategy, RangeStrategy, Strategy, StrategyKind
from .workload import Request, Workload, generate_workload

log = logging.getLogger("shardsim")


def make_strategy(kind: str, config) -> Strategy:
    from .adaptive_strategy import AdaptiveStrategy

    classes = {
        StrategyKind.RANGE: RangeStrategy,
        StrategyKind.HASH: HashStrategy,
        StrategyKind.CONSISTENT: ConsistentStrategy,
        StrategyKind.ADAPTIVE: AdaptiveStrategy,
    }
    return classes[StrategyKind(kind)](config)


class Simulation:
    """One deterministic run of a scenario under one strategy.

    The ``workload`` and ``failures`` streams depend only on (seed, config), so
    runs of different strategies with the same seed see identical schedules.
    """

    def __init__(self, config, seed: int | None = None, strategy: str | None = None, *,
                 generate: bool = True):
        self.config = config
        self.seed = config.seed if seed is None else seed
        if self.seed is None:
            raise ValueError("a seed is required")
        self.duration_us = to_us(config.duration)
        self.width_us = to_us(config.bucket_width)
        self.n_buckets = max(1, math.ceil(self.duration_us / self.width_us))
        self.cluster = ClusterState.build(
            config.nodes, config.regions, config.node.capacity,
            config.node.storage_limit, config.workload.key_count,
        )
        self.queue = EventQueue()
        self.trace = SimTrace(
            strategy=strategy or config.strategy,
            duration=config.duration,
            bucket_width=config.bucket_width,
            key_count=config.workload.key_count,
            node_count=config.nodes,
        )
        self.strategy = make_strategy(self.trace.strategy, config)
        self.strategy.build(self.cluster)
        self.strategy.attach(self)
        self.audit()

        self._bucket = 0
        self._bucket_end = self.width_us
        self._reset_bucket()
        self._finished = False
        self.workload: Workload | None = None
        self._handlers = {
            EventKind.REQUEST_ARRIVAL: self._on_arrival,
            EventKind.NODE_FAIL: self._on_fail,
            EventKind.NODE_RECOVER: self._on_recover,
            EventKind.CORRUPTION: self._on_corruption,
            EventKind.SYNC_TICK: self._on_sync,
            EventKind.REBALANCE_TICK: self._on_rebalance,
            EventKind.PATTERN_SHIFT: self._on_shift,
            EventKind.MIGRATION_DONE: self._on_migration,
            EventKind.REGEN_STEP: self._on_regen,
        }
        if generate:
            self._schedule_inputs()

    # --- setup -------------------------------------------------------------

    def _schedule_inputs(self) -> None:
        cfg = self.config
        wl = generate_workload(cfg.workload, cfg.duration, rng_stream(self.seed, "workload"))
        self.workload = wl
        self._keys = wl.keys.tolist()
        self._writes = wl.writes.tolist()
        self._times = wl.times.tolist()
        if self._times:
            self.queue.schedule(Event(self._times[0], EventKind.REQUEST_ARRIVAL, 0))
        self.failure_events = inject_failures(
            cfg.failure, cfg.duration, cfg.nodes, rng_stream(self.seed, "failures"))
        for ev in self.failure_events:
            self.queue.schedule(Event(ev.time, ev.kind, ev.payload))
        for s in cfg.workload.shifts:
            if s.at < cfg.duration:
                self.queue.schedule(Event(to_us(s.at), EventKind.PATTERN_SHIFT, {"at": s.at}))
        if self.strategy.uses_replication:
            self.queue.schedule(Event(to_us(cfg.replication.sync_interval), EventKind.SYNC_TICK))
        if self.strategy.kind == StrategyKind.ADAPTIVE:
            self.queue.schedule(Event(to_us(cfg.sharding.rebalance_interval), EventKind.REBALANCE_TICK))

    def schedule(self, event: Event) -> Event:
        return self.queue.schedule(event)

    def schedule_request(self, request: Request) -> Event:
        return self.queue.schedule(Event(request.arrival, EventKind.REQUEST_ARRIVAL, request))

    @property
    def now(self) -> int:
        return self.queue.now

    # --- loop --------------------------------------------------------------

    def run_until(self, t_end: float) -> SimTrace:
        end_us = to_us(t_end)
        if end_us > self.duration_us:
            raise ValueError(f"t_end {t_end} beyond scenario duration {self.config.duration}")
        queue = self.queue
        handlers = self._handlers
        while len(queue) and queue.peek_time() <= end_us:
            ev = queue.pop()
            if ev.time >= self._bucket_end:
                self._close_buckets(ev.time)
            handlers[ev.kind](ev)
        queue.advance(end_us)
        self._close_buckets(end_us)
        return self.trace

    def run(self) -> SimTrace:
        self.run_until(self.config.duration)
        return self.finish()

    def finish(self) -> SimTrace:
        if not self._finished:
            self._finished = True
            while self._bucket < self.n_buckets:
                self._close_bucket()
            self.trace.lost_keys = len(self.cluster.lost_keys())
        return self.trace

    # --- bucket bookkeeping -----------------------------------------------

    def _reset_bucket(self) -> None:
        self._b_total = 0
        self._b_ok = 0
        self._b_lat: list[int] = []
        self._b_moved = 0
        self._b_served = [0] * len(self.cluster.nodes)
        self._b_fail = any(n.status is not NodeStatus.UP for n in self.cluster.nodes)

    def _close_buckets(self, t: int) -> None:
        while self._bucket < self.n_buckets and t >= self._bucket_end:
            self._close_bucket()

    def _close_bucket(self) -> None:
        nodes = self.cluster.nodes
        at = min(self._bucket_end, self.duration_us)
        live = [n for n in nodes if not n.failed]
        served = [self._b_served[n.id] for n in live]
        cv = 0.0
        if served:
            mean = sum(served) / len(served)
            if mean > 0:
                var = sum((x - mean) ** 2 for x in served) / len(served)
                cv = math.sqrt(var) / mean
        stale = [at - t for sh in self.cluster.shards.values() for t in sh.replicas.values()]
        b = MetricBucket(
            index=self._bucket,
            start=to_s(self._bucket * self.width_us),
            requests_total=self._b_total,
            requests_ok=self._b_ok,
            latency_sum=sum(self._b_lat) / 1e6,
            latency_p95=percentile(self._b_lat, 95) / 1e6 if self._b_lat else 0.0,
            live_nodes=len(live),
            moved_records=self._b_moved,
            load_cv=cv,
            mean_staleness=(sum(stale) / len(stale) / 1e6) if stale else 0.0,
            failure_active=self._b_fail,
            heat=self.strategy.census(),
        )
        self.trace.buckets.append(b)
        self._bucket += 1
        self._bucket_end += self.width_us
        self._reset_bucket()

    # --- handlers ----------------------------------------------------------

    def _on_arrival(self, ev: Event) -> None:
        now = ev.time
        p = ev.payload
        if isinstance(p, int):
            key, is_write = self._keys[p], self._writes[p]
            nxt = p + 1
            if nxt < len(self._times):
                self.queue.schedule(Event(self._times[nxt], EventKind.REQUEST_ARRIVAL, nxt))
        else:
            key, is_write = p.key, p.is_write
        node_id, sid = self.strategy.route(key, is_write, now)
        out = self.cluster.serve_key(node_id, key, is_write, now, sid)
        tr = self.trace
        tr.requests_total += 1
        self._b_total += 1
        if out.ok:
            tr.requests_ok += 1
            self._b_ok += 1
            tr.latencies.append(out.latency)
            self._b_lat.append(out.latency)
            self._b_served[node_id] += 1
            if now + out.latency <= self.duration_us:
                tr.completed_in_run += 1
            self.strategy.observe(key, sid, node_id, is_write, now)
        else:
            tr.failure_reasons[out.reason] = tr.failure_reasons.get(out.reason, 0) + 1

    def _on_fail(self, ev: Event) -> None:
        node = self.cluster.nodes[ev.payload["node"]]
        node.fail_depth += 1
        node.clear_queue()
        self._b_fail = True
        self.log_event(ev.time, "NodeFail", node=node.id)
        self.strategy.on_fail(node.id, ev.time)

    def _on_recover(self, ev: Event) -> None:
        node = self.cluster.nodes[ev.payload["node"]]
        node.fail_depth -= 1
        self.log_event(ev.time, "NodeRecover", node=node.id)
        if not node.failed:
            self.strategy.on_recover(node.id, ev.time)

    def _on_corruption(self, ev: Event) -> None:
        nid = ev.payload["node"]
        keys = corrupted_keys(ev.payload, self.cluster.stored_keys(nid))
        self.cluster.nodes[nid].damaged.update(keys)
        if keys:
            self._b_fail = True
        self.log_event(ev.time, "Corruption", node=nid, damaged=len(keys))
        self.strategy.on_corruption(nid, ev.time)

    def _on_sync(self, ev: Event) -> None:
        nodes = self.cluster.nodes
        for sh in self.cluster.shards.values():
            for nid in sh.replicas:
                if not nodes[nid].failed:
                    sh.replicas[nid] = ev.time
        nxt = ev.time + to_us(self.config.replication.sync_interval)
        if nxt <= self.duration_us:
            self.queue.schedule(Event(nxt, EventKind.SYNC_TICK))

    def _on_rebalance(self, ev: Event) -> None:
        self.strategy.on_tick(ev.time)
        nxt = ev.time + to_us(self.config.sharding.rebalance_interval)
        if nxt <= self.duration_us:
            self.queue.schedule(Event(nxt, EventKind.REBALANCE_TICK))

    def _on_shift(self, ev: Event) -> None:
        self.trace.shift_times.append(ev.payload["at"])
        self.log_event(ev.time, "PatternShift", at=ev.payload["at"])

    def _on_migration(self, ev: Event) -> None:
        self.strategy.on_migration(ev.payload, ev.time)
        self.cluster.check_coverage()

    def _on_regen(self, ev: Event) -> None:
        self.strategy.on_regen_step(ev.payload, ev.time)

    # --- services for strategies ------------------------------------------

    def record_moved(self, records: int) -> None:
        self._b_moved += records

    def warn(self, kind: str, message: str | None = None) -> None:
        self.trace.warnings[kind] = self.trace.warnings.get(kind, 0) + 1
        if message:
            log.debug("%s: %s", kind, message)

    def log_event(self, time: int, kind: str, **detail) -> None:
        self.trace.events.append({"time": to_s(time), "kind": kind, **detail})

    def audit(self) -> None:
        """Record any shard with two copies on one node, or (rf=2 with >= 2 regions,
        placement not degraded) two copies in one region while a region is unused."""
        nodes = self.cluster.nodes
        region_rule = (self.config.replication.anti_affinity == "region"
                       and self.config.replication.rf == 2)
        n_regions = len({n.region for n in nodes})
        region_rule = region_rule and n_regions >= 2
        for sh in self.cluster.shards.values():
            copies = sh.copies()
            if len(set(copies)) != len(copies):
                self.trace.violations.append(f"t={to_s(self.now)} shard {sh.id}: copies share a node {copies}")
            if region_rule and not sh.degraded_placement and len(copies) > 1:
                regions = [nodes[n].region for n in copies]
                if len(set(regions)) < min(len(regions), n_regions):
                    self.trace.violations.append(
                        f"t={to_s(self.now)} shard {sh.id}: copies share a region {copies}")
