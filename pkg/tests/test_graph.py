import random
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings, strategies as st

from alertgraph.correlator import Correlation, CorrelationBatchResult, RejectStage
from alertgraph.entities import EntityCatalog, EntityType, default_catalog
from alertgraph.errors import DanglingEndpoint
from alertgraph.graph import (
    UnionFind,
    assign_incidents,
    build_graph,
    detector_pair_kind,
    incident_rows,
    mine_stats,
    spanning_forest,
)
from alertgraph.telemetry import AlertTable, format_timestamp, parse_alert_row

from oracles import min_forest_weight, random_connected_graph

UTC = timezone.utc
NOW = datetime(2024, 3, 1, tzinfo=UTC)
CATALOG = EntityCatalog(default_catalog())
PRIORITY_TO_TYPE = {CATALOG.priority(etype): etype for etype in EntityType}


def make_alert(alert_id, org="org-a", detector="det-1", kind="builtin", ts=NOW):
    return parse_alert_row(
        {
            "alert_id": alert_id,
            "org_id": org,
            "detector_id": detector,
            "detector_kind": kind,
            "timestamp": format_timestamp(ts),
            "entities": {"UserId": ["alice"]},
        },
        row=0,
    )


def make_edge(a, b, etype=EntityType.SESSION_ID, value="s-1", minutes=5):
    if a > b:
        a, b = b, a
    return Correlation(
        org_id="org-a",
        alert_a=a,
        alert_b=b,
        entity_type=etype,
        entity_value=value,
        time_delta=timedelta(minutes=minutes),
        priority=CATALOG.priority(etype),
    )


def table_for(*alert_ids, kind="builtin"):
    return AlertTable([make_alert(alert_id, kind=kind) for alert_id in alert_ids])


def clique(ids, etype=EntityType.SESSION_ID, value="s-1"):
    ids = sorted(ids)
    return [make_edge(a, b, etype=etype, value=value) for i, a in enumerate(ids) for b in ids[i + 1 :]]


def from_weighted(n, weighted):
    """Adapt an integer-weighted oracle graph; edge weight doubles as priority."""
    table = table_for(*(f"n-{i:02d}" for i in range(n)))
    edges = [
        Correlation(
            org_id="org-a",
            alert_a=f"n-{u:02d}",
            alert_b=f"n-{v:02d}",
            entity_type=PRIORITY_TO_TYPE[w],
            entity_value=f"v-{i}",
            time_delta=timedelta(minutes=i),
            priority=w,
        )
        for i, (u, v, w) in enumerate(weighted)
    ]
    return build_graph(edges, table)


# --- graph construction ---


def test_build_triangle():
    edges = clique(["a-1", "a-2", "a-3"])
    graph = build_graph(edges, table_for("a-1", "a-2", "a-3"))
    assert graph.node_count() == 3
    assert graph.edge_count() == 3


def test_build_empty():
    graph = build_graph([], AlertTable([]))
    assert graph.node_count() == 0 and graph.edge_count() == 0


def test_build_rejects_unknown_endpoint():
    with pytest.raises(DanglingEndpoint, match="a-2"):
        build_graph([make_edge("a-1", "a-2")], table_for("a-1"))


def test_build_rejects_self_loop():
    bad = Correlation("org-a", "a-1", "a-1", EntityType.USER_ID, "alice", timedelta(0), 5)
    with pytest.raises(DanglingEndpoint, match="self-loop"):
        build_graph([bad], table_for("a-1"))


def test_build_rejects_duplicate_pair():
    dup = [make_edge("a-1", "a-2"), make_edge("a-1", "a-2", etype=EntityType.USER_ID, value="alice")]
    with pytest.raises(DanglingEndpoint, match="duplicate edge"):
        build_graph(dup, table_for("a-1", "a-2"))


def test_build_include_isolated():
    table = table_for("a-1", "a-2", "a-9")
    graph = build_graph([make_edge("a-1", "a-2")], table)
    assert graph.node_count() == 2
    graph = build_graph([make_edge("a-1", "a-2")], table, include_isolated=True)
    assert graph.node_count() == 3


# --- spanning forest ---


def test_forest_prunes_weakest_triangle_edge():
    edges = [
        make_edge("a-1", "a-2", etype=EntityType.SESSION_ID, value="s-1"),
        make_edge("a-2", "a-3", etype=EntityType.SESSION_ID, value="s-1"),
        make_edge("a-1", "a-3", etype=EntityType.IP, value="10.0.0.1"),
    ]
    graph = build_graph(edges, table_for("a-1", "a-2", "a-3"))
    kept, pruned = spanning_forest(graph)
    assert len(kept) == 2
    assert all(edge.entity_type is EntityType.SESSION_ID for edge in kept)
    assert [p.candidate.entity_type for p in pruned] == [EntityType.IP]
    assert pruned[0].stage is RejectStage.MST_PRUNED
    assert pruned[0].detail == "redundant edge within incident"


def test_forest_keeps_trees_whole():
    edges = [make_edge("a-1", "a-2"), make_edge("a-2", "a-3"), make_edge("a-3", "a-4")]
    graph = build_graph(edges, table_for("a-1", "a-2", "a-3", "a-4"))
    kept, pruned = spanning_forest(graph)
    assert kept == sorted(edges, key=Correlation.sort_key)
    assert pruned == []


def test_forest_equal_weight_ties_break_on_alert_ids():
    graph = build_graph(clique(["a-1", "a-2", "a-3"]), table_for("a-1", "a-2", "a-3"))
    kept, pruned = spanning_forest(graph)
    assert [(e.alert_a, e.alert_b) for e in kept] == [("a-1", "a-2"), ("a-1", "a-3")]
    assert [(p.candidate.alert_a, p.candidate.alert_b) for p in pruned] == [("a-2", "a-3")]


@pytest.mark.parametrize("k", [2, 4, 8, 16])
def test_forest_reduces_clique_to_spanning_tree(k):
    ids = [f"a-{i:02d}" for i in range(k)]
    graph = build_graph(clique(ids), table_for(*ids))
    kept, pruned = spanning_forest(graph)
    assert len(kept) == k - 1
    assert len(pruned) == k * (k - 1) // 2 - (k - 1)


def test_forest_handles_multiple_components():
    edges = clique(["a-1", "a-2", "a-3"]) + [make_edge("b-1", "b-2", value="s-9")]
    graph = build_graph(edges, table_for("a-1", "a-2", "a-3", "b-1", "b-2"))
    kept, _ = spanning_forest(graph)
    assert len(kept) == 3  # 2 for the triangle, 1 for the pair


@settings(max_examples=150, deadline=None)
@given(st.integers(min_value=0, max_value=10**9))
def test_forest_weight_matches_exhaustive_oracle(seed):
    n, weighted = random_connected_graph(random.Random(seed))
    graph = from_weighted(n, weighted)
    kept, pruned = spanning_forest(graph)
    assert len(kept) == n - 1
    assert sum(edge.priority for edge in kept) == min_forest_weight(n, weighted)
    # pruned edges close cycles: re-adding any must connect two already-joined nodes
    uf = UnionFind(graph.nodes)
    for edge in kept:
        assert uf.union(edge.alert_a, edge.alert_b)
    for reject in pruned:
        assert not uf.union(reject.candidate.alert_a, reject.candidate.alert_b)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=10**9))
def test_forest_preserves_incident_membership(seed):
    n, weighted = random_connected_graph(random.Random(seed))
    graph = from_weighted(n, weighted)
    kept, _ = spanning_forest(graph)
    thinned = build_graph(kept, table_for(*graph.nodes))
    assert assign_incidents(thinned).labels == assign_incidents(graph).labels


# --- incident assignment ---


def test_assign_two_components():
    edges = clique(["a-1", "a-2", "a-3"]) + [make_edge("b-1", "b-2", value="s-9")]
    graph = build_graph(edges, table_for("a-1", "a-2", "a-3", "b-1", "b-2"))
    assignment = assign_incidents(graph)
    assert assignment.incident_ids() == ["inc-a-1", "inc-b-1"]
    assert assignment.members()["inc-a-1"] == ["a-1", "a-2", "a-3"]


def test_assign_isolated_nodes_are_singletons():
    table = table_for("a-1", "a-2", "a-9")
    graph = build_graph([make_edge("a-1", "a-2")], table, include_isolated=True)
    assignment = assign_incidents(graph)
    assert assignment.labels["a-9"] == "inc-a-9"
    assert assignment.incident_ids() == ["inc-a-1", "inc-a-9"]


# --- stats ---


def as_result(edges, **counts):
    return CorrelationBatchResult(final=tuple(edges), rejected=(), counts=counts)


def test_stats_sixteen_clique_compression():
    ids = [f"a-{i:02d}" for i in range(16)]
    graph = build_graph(clique(ids), table_for(*ids))
    kept, _ = spanning_forest(graph)
    stats = mine_stats(as_result(graph.edges), graph, kept, assign_incidents(graph))
    assert stats.edges_before == 120
    assert stats.edges_after == 15
    assert stats.compression_ratio == 8.0
    assert stats.incident_count == 1
    assert stats.incident_size_histogram == {16: 1}


def test_stats_singleton_ratio():
    ids = [f"a-{i}" for i in range(1, 5)]
    table = table_for(*ids, "a-8", "a-9")
    edges = [make_edge("a-1", "a-2"), make_edge("a-3", "a-4", value="s-2")]
    graph = build_graph(edges, table, include_isolated=True)
    stats = mine_stats(as_result(edges), graph, edges, assign_incidents(graph))
    assert stats.incident_count == 4
    assert stats.singleton_count == 2
    assert stats.singleton_ratio == 0.5
    assert stats.incident_size_histogram == {1: 2, 2: 2}
    assert sum(size * count for size, count in stats.incident_size_histogram.items()) == 6


def test_stats_per_entity_and_detector_kind():
    table = AlertTable(
        [
            make_alert("a-1", kind="builtin"),
            make_alert("a-2", kind="custom"),
            make_alert("a-3", kind="custom"),
        ]
    )
    edges = [
        make_edge("a-1", "a-2"),
        make_edge("a-2", "a-3", etype=EntityType.USER_ID, value="alice"),
    ]
    graph = build_graph(edges, table)
    kept, _ = spanning_forest(graph)
    stats = mine_stats(as_result(edges, candidates=2), graph, kept, assign_incidents(graph))
    assert stats.correlations_per_entity == {"SessionId": 1, "UserId": 1}
    assert stats.correlations_per_detector_kind == {
        "builtin-builtin": 0,
        "builtin-custom": 1,
        "custom-custom": 1,
    }
    assert stats.stage_counts == {"candidates": 2}
    doc = stats.to_doc()
    assert doc["kind"] == "batch_stats"
    assert doc["incident_size_histogram"] == {"3": 1}


def test_stats_empty_batch_has_no_compression():
    graph = build_graph([], AlertTable([]))
    stats = mine_stats(as_result([]), graph, [], assign_incidents(graph))
    assert stats.compression_ratio is None
    assert stats.singleton_ratio == 0.0
    assert stats.to_doc()["compression_ratio"] is None


def test_detector_pair_kind_is_order_free():
    assert detector_pair_kind("custom", "builtin") == "builtin-custom"
    assert detector_pair_kind("builtin", "builtin") == "builtin-builtin"


# --- incident rows ---


def test_incident_rows_layout():
    table = table_for("a-1", "a-2", "a-3", "a-9")
    edges = [make_edge("a-1", "a-2"), make_edge("a-2", "a-3", etype=EntityType.USER_ID, value="alice")]
    graph = build_graph(edges, table, include_isolated=True)
    kept, _ = spanning_forest(graph)
    rows = incident_rows(graph, kept, assign_incidents(graph))
    assert [row["incident_id"] for row in rows] == ["inc-a-1", "inc-a-9"]
    big = rows[0]
    assert big["alert_ids"] == ["a-1", "a-2", "a-3"]
    assert big["alert_count"] == 3
    assert big["first_alert_at"] == format_timestamp(NOW)
    assert [edge["entity_type"] for edge in big["edges"]] == ["SessionId", "UserId"]
    assert rows[1]["edges"] == []
