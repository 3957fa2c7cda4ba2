"""Incident graph construction, spanning-forest compression, and batch stats.

Final correlations become edges of a simple undirected graph whose connected
components are incidents. A minimum spanning forest keeps only the edges
needed to hold each incident together (weight = entity priority, so the
highest-fidelity evidence survives). Stats summarize the batch for the
operator dashboard.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime

from .correlator import Correlation, CorrelationBatchResult, RejectedCorrelation, RejectStage
from .errors import DanglingEndpoint
from .telemetry import AlertTable, format_timestamp

DETECTOR_PAIR_KINDS = ("builtin-builtin", "builtin-custom", "custom-custom")


@dataclass(frozen=True, slots=True)
class GraphNode:
    alert_id: str
    org_id: str
    timestamp: datetime
    detector_id: str
    detector_kind: str


@dataclass(slots=True)
class IncidentGraph:
    """Simple undirected graph: nodes are alerts, edges are final correlations."""

    nodes: dict[str, GraphNode]
    edges: tuple[Correlation, ...]

    def node_count(self) -> int:
        return len(self.nodes)

    def edge_count(self) -> int:
        return len(self.edges)


class UnionFind:
    """Disjoint sets over alert ids with path compression and union by size."""

    __slots__ = ("parent", "size")

    def __init__(self, items):
        self.parent = {item: item for item in items}
        self.size = {item: 1 for item in self.parent}

    def find(self, item: str) -> str:
        root = item
        parent = self.parent
        while parent[root] != root:
            root = parent[root]
        while parent[item] != root:
            parent[item], item = root, parent[item]
        return root

    def union(self, a: str, b: str) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True


def build_graph(
    correlations, alerts: AlertTable, include_isolated: bool = False
) -> IncidentGraph:
    """Build the incident graph from final correlations.

    Nodes are the alerts touched by a correlation; with ``include_isolated``
    every alert in the table becomes a node so singleton incidents are
    accounted for. Raises DanglingEndpoint for unknown alert ids and asserts
    the one-edge-per-pair simplicity invariant the upstream stage guarantees.
    """
    edges = sorted(correlations, key=Correlation.sort_key)
    nodes: dict[str, GraphNode] = {}

    def add_node(alert_id: str) -> None:
        if alert_id in nodes:
            return
        alert = alerts.get(alert_id)
        if alert is None:
            raise DanglingEndpoint(f"correlation references unknown alert {alert_id!r}")
        nodes[alert_id] = GraphNode(
            alert_id=alert.alert_id,
            org_id=alert.org_id,
            timestamp=alert.timestamp,
            detector_id=alert.detector_id,
            detector_kind=alert.detector_kind,
        )

    seen_pairs: set[tuple[str, str, str]] = set()
    for edge in edges:
        if edge.alert_a == edge.alert_b:
            raise DanglingEndpoint(f"self-loop on alert {edge.alert_a!r}")
        if edge.pair in seen_pairs:
            raise DanglingEndpoint(
                f"duplicate edge for pair {edge.alert_a!r}/{edge.alert_b!r}; prioritization must run first"
            )
        seen_pairs.add(edge.pair)
        add_node(edge.alert_a)
        add_node(edge.alert_b)
    if include_isolated:
        for alert in alerts:
            add_node(alert.alert_id)
    return IncidentGraph(nodes=nodes, edges=tuple(edges))


def spanning_forest(graph: IncidentGraph) -> tuple[list[Correlation], list[RejectedCorrelation]]:
    """Prune each component to its minimum spanning tree (Kruskal).

    Edge weight is the entity priority; ties break on (entity ordinal,
    alert_a, alert_b) so the kept set is deterministic. Returns the kept
    edges and the pruned ones tagged mst_pruned.
    """
    order = sorted(
        graph.edges,
        key=lambda e: (e.priority, e.entity_type.ordinal, e.alert_a, e.alert_b),
    )
    uf = UnionFind(graph.nodes)
    kept: list[Correlation] = []
    pruned: list[RejectedCorrelation] = []
    for edge in order:
        if uf.union(edge.alert_a, edge.alert_b):
            kept.append(edge)
        else:
            pruned.append(
                RejectedCorrelation(edge, RejectStage.MST_PRUNED, "redundant edge within incident")
            )
    kept.sort(key=Correlation.sort_key)
    pruned.sort(key=RejectedCorrelation.sort_key)
    return kept, pruned


@dataclass(slots=True)
class IncidentAssignment:
    """alert_id -> incident_id labeling; ids derive from the component's minimum alert id."""

    labels: dict[str, str]

    def incident_ids(self) -> list[str]:
        return sorted(set(self.labels.values()))

    def members(self) -> dict[str, list[str]]:
        groups: dict[str, list[str]] = {}
        for alert_id in sorted(self.labels):
            groups.setdefault(self.labels[alert_id], []).append(alert_id)
        return groups


def assign_incidents(graph: IncidentGraph) -> IncidentAssignment:
    """Label connected components; isolated nodes become singleton incidents."""
    uf = UnionFind(graph.nodes)
    for edge in graph.edges:
        uf.union(edge.alert_a, edge.alert_b)
    minimum: dict[str, str] = {}
    for alert_id in graph.nodes:
        root = uf.find(alert_id)
        if root not in minimum or alert_id < minimum[root]:
            minimum[root] = alert_id
    labels = {alert_id: f"inc-{minimum[uf.find(alert_id)]}" for alert_id in graph.nodes}
    return IncidentAssignment(labels=labels)


@dataclass(slots=True)
class CorrelationStats:
    """Per-batch statistics for the operator dashboard."""

    batch_id: str
    org_count: int
    alert_count: int
    correlations_per_entity: dict[str, int]
    correlations_per_detector_kind: dict[str, int]
    incident_count: int
    incident_size_histogram: dict[int, int]
    singleton_count: int
    singleton_ratio: float
    edges_before: int
    edges_after: int
    compression_ratio: float | None
    stage_counts: dict[str, int]
    stage_runtimes: dict[str, float] = field(default_factory=dict)
    success: bool = True

    def to_doc(self) -> dict:
        return {
            "schema_version": 1,
            "kind": "batch_stats",
            "batch_id": self.batch_id,
            "org_count": self.org_count,
            "alert_count": self.alert_count,
            "correlations_per_entity": dict(sorted(self.correlations_per_entity.items())),
            "correlations_per_detector_kind": {
                kind: self.correlations_per_detector_kind.get(kind, 0) for kind in DETECTOR_PAIR_KINDS
            },
            "incident_count": self.incident_count,
            "incident_size_histogram": {
                str(size): count for size, count in sorted(self.incident_size_histogram.items())
            },
            "singleton_count": self.singleton_count,
            "singleton_ratio": self.singleton_ratio,
            "edges_before": self.edges_before,
            "edges_after": self.edges_after,
            "compression_ratio": self.compression_ratio,
            "stage_counts": dict(sorted(self.stage_counts.items())),
            "stage_runtimes": {name: round(secs, 6) for name, secs in sorted(self.stage_runtimes.items())},
            "success": self.success,
        }


def detector_pair_kind(kind_a: str, kind_b: str) -> str:
    return "-".join(sorted((kind_a, kind_b)))


def mine_stats(
    result: CorrelationBatchResult,
    graph: IncidentGraph,
    forest: list[Correlation],
    assignment: IncidentAssignment,
    timings: dict[str, float] | None = None,
    batch_id: str = "",
) -> CorrelationStats:
    """Aggregate the batch into CorrelationStats; counts are internally consistent."""
    per_entity: dict[str, int] = {}
    per_kind: dict[str, int] = {kind: 0 for kind in DETECTOR_PAIR_KINDS}
    for edge in result.final:
        name = str(edge.entity_type)
        per_entity[name] = per_entity.get(name, 0) + 1
        kind = detector_pair_kind(
            graph.nodes[edge.alert_a].detector_kind, graph.nodes[edge.alert_b].detector_kind
        )
        per_kind[kind] += 1

    sizes: dict[str, int] = {}
    for incident_id in assignment.labels.values():
        sizes[incident_id] = sizes.get(incident_id, 0) + 1
    histogram: dict[int, int] = {}
    for size in sizes.values():
        histogram[size] = histogram.get(size, 0) + 1
    incident_count = len(sizes)
    singleton_count = histogram.get(1, 0)

    edges_before = len(result.final)
    edges_after = len(forest)
    compression = edges_before / edges_after if edges_after > 0 else None
    return CorrelationStats(
        batch_id=batch_id,
        org_count=len({node.org_id for node in graph.nodes.values()}),
        alert_count=graph.node_count(),
        correlations_per_entity=per_entity,
        correlations_per_detector_kind=per_kind,
        incident_count=incident_count,
        incident_size_histogram=histogram,
        singleton_count=singleton_count,
        singleton_ratio=singleton_count / incident_count if incident_count else 0.0,
        edges_before=edges_before,
        edges_after=edges_after,
        compression_ratio=compression,
        stage_counts=dict(result.counts),
        stage_runtimes=dict(timings or {}),
    )


def incident_rows(
    graph: IncidentGraph, forest: list[Correlation], assignment: IncidentAssignment
) -> list[dict]:
    """One JSON-ready row per incident: members plus the kept evidence edges."""
    edges_by_incident: dict[str, list[Correlation]] = {}
    for edge in forest:
        edges_by_incident.setdefault(assignment.labels[edge.alert_a], []).append(edge)
    rows = []
    for incident_id, members in sorted(assignment.members().items()):
        org_id = graph.nodes[members[0]].org_id
        edges = [
            {
                "alert_a": e.alert_a,
                "alert_b": e.alert_b,
                "entity_type": str(e.entity_type),
                "entity_value": e.entity_value,
                "priority": e.priority,
                "time_delta_seconds": int(e.time_delta.total_seconds()),
            }
            for e in sorted(edges_by_incident.get(incident_id, []), key=Correlation.sort_key)
        ]
        rows.append(
            {
                "incident_id": incident_id,
                "org_id": org_id,
                "alert_ids": list(members),
                "alert_count": len(members),
                "first_alert_at": format_timestamp(min(graph.nodes[m].timestamp for m in members)),
                "edges": edges,
            }
        )
    return rows
