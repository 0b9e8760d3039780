import pytest
from hypothesis import given, settings, strategies as st

from shardsim.cluster import (
    DATA_UNAVAILABLE, NODE_DOWN, ClusterState, CoverageError, FailureSpec, MigrationPlan, Move,
    Node, NodeStatus, Shard, TargetOverCapacity, UnknownKey, apply_migration, corrupted_keys,
    inject_failures, serve,
)
from shardsim.sim import EventKind, rng_stream
from shardsim.workload import Request


def two_node_cluster(storage_limit=1000):
    cl = ClusterState.build(2, 2, 100.0, storage_limit, 200)
    cl.add_shard(Shard(0, list(range(100)), 0))
    cl.add_shard(Shard(1, list(range(100, 200)), 1))
    return cl


def test_serve_idle_node_latency_is_one_service_time():
    cl = two_node_cluster()
    out = serve(Request(5, False, 0), cl.nodes[0], 0, 0, cl.meta[5])
    assert out.ok and out.latency == 10_000  # (0 + 1) / 100 s


def test_serve_queue_inflates_latency_then_drains():
    node = Node(0, 0, 100.0, 10)
    node.shards.add(0)
    lat = [serve(Request(0, False, 0), node, 0, 0).latency for _ in range(3)]
    assert lat == [10_000, 20_000, 30_000]
    assert node.queue_len(30_000) == 0


def test_serve_failed_and_damaged():
    cl = two_node_cluster()
    cl.nodes[0].fail_depth = 1
    assert serve(Request(1, False, 0), cl.nodes[0], 0, 0).reason == NODE_DOWN
    cl.nodes[1].damaged.add(150)
    assert cl.nodes[1].status is NodeStatus.DEGRADED
    assert serve(Request(150, False, 0), cl.nodes[1], 0, 1).reason == DATA_UNAVAILABLE
    assert serve(Request(151, False, 0), cl.nodes[1], 0, 1).ok


def test_serve_unplaced_key_is_a_routing_bug():
    cl = two_node_cluster()
    with pytest.raises(UnknownKey):
        serve(Request(5, False, 0), cl.nodes[1], 0, 0)


def test_serve_updates_metadata_by_operation():
    cl = two_node_cluster()
    serve(Request(3, True, 7), cl.nodes[0], 7, 0, cl.meta[3])
    serve(Request(3, False, 9), cl.nodes[0], 9, 0, cl.meta[3])
    m = cl.meta[3]
    assert (m.last_modified, m.last_access, m.access_count) == (7, 9, 1)


def test_empty_migration_changes_nothing():
    cl = two_node_cluster()
    assert apply_migration(MigrationPlan(), cl) == 0
    assert cl.shards[0].primary == 0


def test_move_one_shard_counts_its_records():
    cl = two_node_cluster()
    assert apply_migration(MigrationPlan([Move(0, 1)]), cl) == 100
    assert cl.shards[0].primary == 1 and cl.nodes[1].records == 200
    cl.check_coverage()


def test_move_over_storage_limit_is_rejected_untouched():
    cl = two_node_cluster(storage_limit=150)
    with pytest.raises(TargetOverCapacity):
        apply_migration(MigrationPlan([Move(0, 1)]), cl)
    assert cl.shards[0].primary == 0 and cl.nodes[0].records == 100 and cl.nodes[1].records == 100


def test_coverage_check_detects_gaps():
    cl = ClusterState.build(1, 1, 10.0, 100, 10)
    cl.add_shard(Shard(0, list(range(9)), 0))
    with pytest.raises(CoverageError):
        cl.check_coverage()


def test_no_failure_rates_no_events():
    assert inject_failures(FailureSpec(), 1000, 4, rng_stream(1, "failures")) == []


def test_crash_count_and_pairing():
    events = inject_failures(FailureSpec(crash_rate=0.01, mean_downtime=30), 10_000, 8,
                             rng_stream(3, "failures"))
    fails = [e for e in events if e.kind is EventKind.NODE_FAIL]
    recovers = [e for e in events if e.kind is EventKind.NODE_RECOVER]
    assert abs(len(fails) - 100) <= 30  # 3 sigma of Poisson(100)
    assert len(fails) == len(recovers)
    # pair each fail with the next unused recover for the same node
    pending: dict = {}
    for e in events:
        n = e.payload["node"]
        if e.kind is EventKind.NODE_FAIL:
            pending.setdefault(n, []).append(e.time)
        elif e.kind is EventKind.NODE_RECOVER:
            assert pending[n] and min(pending[n]) < e.time
            pending[n].remove(min(pending[n]))
    assert all(not v for v in pending.values())


def test_corruption_damages_rounded_fraction():
    stored = list(range(1000))
    keys = corrupted_keys({"fraction": 0.1234, "seed": 5}, stored)
    assert len(keys) == 123 and set(keys) <= set(stored)
    assert len(corrupted_keys({"fraction": 0.0005, "seed": 5}, stored)) == 1  # 0.5 rounds up


def test_corruption_events_carry_payload():
    events = inject_failures(FailureSpec(corruption_rate=0.05, corruption_fraction=0.3), 200, 3,
                             rng_stream(8, "failures"))
    assert events and all(e.kind is EventKind.CORRUPTION for e in events)
    assert all(e.payload["fraction"] == 0.3 and 0 <= e.payload["node"] < 3 for e in events)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 10**7), max_size=40), st.integers(1, 1000))
def test_queue_never_negative_and_drains(arrivals, capacity):
    node = Node(0, 0, float(capacity), 10)
    for t in sorted(arrivals):
        node.admit(t)
        assert node.queue_len(t) >= 1
    assert node.queue_len(10**12) == 0
