"""Independent oracles for the correlation pipeline.

Everything in here recomputes results from first principles: the pair
oracle walks all O(n^2) same-org alert pairs and re-derives every filter
decision from raw inputs, and the forest oracle enumerates edge subsets
exhaustively. None of it calls the pipeline's own filter or graph code, so
agreement is evidence rather than tautology.
"""

from __future__ import annotations

import itertools
import random
from datetime import datetime, timedelta

from alertgraph.entities import EntityCatalog, EntityType
from alertgraph.profiler import DetectorProfile, SafetyThresholds
from alertgraph.telemetry import Alert, AlertTable
from alertgraph.ti import TiRecord

HIGH_FANOUT = {
    EntityType.SHA1,
    EntityType.FILE_NAME,
    EntityType.URL,
    EntityType.EMAIL_ID,
    EntityType.APP_ID,
}
GATED = {EntityType.SHA1, EntityType.FILE_NAME, EntityType.IP_RANGE}


def brute_force_final_pairs(
    table: AlertTable,
    now: datetime,
    source_window: timedelta,
    target_window: timedelta,
    catalog: EntityCatalog,
    ti_records: list[TiRecord],
    profiles: dict[tuple[str, str], DetectorProfile],
    thresholds: SafetyThresholds,
    store_pairs: set[tuple[str, str, str]] = frozenset(),
    ip_range_recency: timedelta = timedelta(hours=48),
) -> set[tuple[str, str, str]]:
    """All (org, alert_a, alert_b) pairs the pipeline should link, recomputed naively."""
    ti_latest: dict[tuple[EntityType, str], TiRecord] = {}
    for record in ti_records:
        key = (record.entity_type, record.value)
        held = ti_latest.get(key)
        if held is None or record.last_confirmed >= held.last_confirmed:
            ti_latest[key] = record

    def entity_ok(etype: EntityType, value: str, delta: timedelta) -> bool:
        if delta > catalog.window(etype):
            return False
        if etype in GATED:
            record = ti_latest.get((etype, value))
            if record is None or record.verdict != "malicious":
                return False
            if etype is EntityType.IP_RANGE and now - record.last_confirmed > ip_range_recency:
                return False
        return True

    def fanout_limit(etype: EntityType) -> float:
        if etype in thresholds.high_fanout_types:
            return thresholds.max_avg_distinct_high
        return thresholds.max_avg_distinct_default

    def detector_safe(org_id: str, detector_id: str) -> bool:
        profile = profiles.get((org_id, detector_id))
        if profile is None:
            return False
        if profile.share_of_org_alerts >= thresholds.max_share:
            return False
        if profile.alerts_per_day >= thresholds.max_per_day:
            return False
        return all(
            avg <= fanout_limit(etype) for etype, avg in profile.avg_distinct_per_entity.items()
        )

    def low_evidence(alert: Alert) -> bool:
        return all(len(values) <= fanout_limit(etype) for etype, values in alert.entities.items())

    def pair_allowed(u: Alert, v: Alert) -> bool:
        if u.detector_id == v.detector_id:
            return True
        if not (detector_safe(u.org_id, u.detector_id) and detector_safe(v.org_id, v.detector_id)):
            return False
        return low_evidence(u) and low_evidence(v)

    by_org: dict[str, list[Alert]] = {}
    for alert in table:
        if now - alert.timestamp <= target_window:
            by_org.setdefault(alert.org_id, []).append(alert)

    final: set[tuple[str, str, str]] = set()
    for org_id, members in by_org.items():
        for u, v in itertools.combinations(members, 2):
            in_source = (now - u.timestamp <= source_window) or (now - v.timestamp <= source_window)
            if not in_source:
                continue
            a, b = sorted((u.alert_id, v.alert_id))
            if (org_id, a, b) in store_pairs:
                continue
            shared = set(u.entities) & set(v.entities)
            if not shared:
                continue
            delta = abs(u.timestamp - v.timestamp)
            linked = any(
                entity_ok(etype, value, delta)
                for etype in shared
                for value in u.entities[etype] & v.entities[etype]
            )
            if linked and pair_allowed(u, v):
                final.add((org_id, a, b))
    return final


def group_rejects_by(rejects, detectors: dict[str, str]):
    """Independent group-by for the gap-report ranking check."""
    counts: dict[tuple, int] = {}
    for reject in rejects:
        c = reject.candidate
        pairing = tuple(sorted((detectors.get(c.alert_a, "unknown"), detectors.get(c.alert_b, "unknown"))))
        key = (reject.stage, c.entity_type, pairing)
        counts[key] = counts.get(key, 0) + 1
    return counts


def build_scenario(seed: int, max_alerts: int = 800):
    """Randomized pipeline inputs for oracle comparisons.

    Mixes org counts, incident sizes, entity types (gated included), noise,
    an occasional noisy detector, TI degradation (dropped or stale records),
    skewed "now", and narrow source windows, so the filters all get
    exercised.
    """
    from alertgraph.generator import GeneratorConfig, NoisyDetectorSpec, generate_synthetic_alerts
    from alertgraph.profiler import profile_detectors
    from alertgraph.entities import default_catalog

    rng = random.Random(seed)
    mix_pool = list(EntityType)
    mix = {e: rng.uniform(0.5, 3.0) for e in rng.sample(mix_pool, rng.randint(3, 8))}
    span_hours = rng.choice((6, 12, 24, 48, 71))
    config = GeneratorConfig(
        seed=seed,
        org_count=rng.randint(1, 4),
        incidents_per_org=rng.randint(1, max(1, max_alerts // 40)),
        incident_size=tuple(sorted((rng.randint(2, 6), rng.randint(2, 8)))),
        entity_mix=mix,
        noise_alert_fraction=rng.choice((0.0, 0.1, 0.3)),
        noisy_detector=NoisyDetectorSpec(alerts_per_day=rng.choice((30.0, 120.0)), entity_fanout=rng.randint(2, 5))
        if rng.random() < 0.4
        else None,
        time_span=timedelta(hours=span_hours),
        detectors_per_org=rng.randint(3, 30),
    )
    batch = generate_synthetic_alerts(config)

    ti_records = list(batch.ti_records)
    if ti_records and rng.random() < 0.5:
        # Degrade the feed: drop some verdicts, stale-date some others.
        kept = []
        for record in ti_records:
            roll = rng.random()
            if roll < 0.25:
                continue
            if roll < 0.5:
                kept.append(
                    TiRecord(
                        record.entity_type,
                        record.value,
                        record.verdict,
                        record.last_confirmed - timedelta(hours=rng.choice((47, 49, 60))),
                    )
                )
            else:
                kept.append(record)
        ti_records = kept

    now = config.end_time + timedelta(minutes=rng.choice((0, 10, 90)))
    target_window = timedelta(hours=72)
    if rng.random() < 0.5:
        # wide open, but still within the source-inside-target contract
        source_window = min(config.time_span + timedelta(hours=2), target_window)
    else:
        source_window = timedelta(minutes=rng.choice((35, 120, 600)))

    if rng.random() < 0.5:
        profiles = {p.key(): p for p in batch.profiles}
    else:
        profiles = profile_detectors(batch.table, now)
    catalog = EntityCatalog(default_catalog())
    thresholds = SafetyThresholds()

    store_pairs: set[tuple[str, str, str]] = set()
    if rng.random() < 0.3:
        ids = [alert.alert_id for alert in batch.table]
        orgs = {alert.alert_id: alert.org_id for alert in batch.table}
        for _ in range(min(20, len(ids) // 2)):
            a, b = rng.sample(ids, 2)
            if orgs[a] != orgs[b]:
                continue
            a, b = sorted((a, b))
            store_pairs.add((orgs[a], a, b))

    return {
        "table": batch.table,
        "truth": batch.truth,
        "now": now,
        "source_window": source_window,
        "target_window": target_window,
        "catalog": catalog,
        "ti_records": ti_records,
        "profiles": profiles,
        "thresholds": thresholds,
        "store_pairs": store_pairs,
    }


class PrelinkedPairs:
    """Minimal stand-in for the store's dedup interface."""

    def __init__(self, pairs: set[tuple[str, str, str]]):
        self.pairs = pairs

    def has_pair(self, org_id: str, alert_a: str, alert_b: str) -> bool:
        if alert_a > alert_b:
            alert_a, alert_b = alert_b, alert_a
        return (org_id, alert_a, alert_b) in self.pairs


def min_forest_weight(node_count: int, edges: list[tuple[int, int, int]]) -> int:
    """Exhaustive minimum spanning forest weight for one connected graph.

    ``edges`` are (u, v, weight) over nodes 0..node_count-1; the graph must
    be connected. Tries every subset of node_count-1 edges and keeps the
    cheapest one that connects everything.
    """
    if node_count <= 1:
        return 0
    best = None
    for subset in itertools.combinations(edges, node_count - 1):
        parent = list(range(node_count))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        joined = 0
        for u, v, _ in subset:
            ru, rv = find(u), find(v)
            if ru != rv:
                parent[ru] = rv
                joined += 1
        if joined == node_count - 1:
            weight = sum(w for _, _, w in subset)
            if best is None or weight < best:
                best = weight
    if best is None:
        raise ValueError("graph is not connected")
    return best


def random_connected_graph(rng: random.Random, max_nodes: int = 8, max_edges: int = 12):
    """Random connected weighted graph small enough for the exhaustive oracle."""
    n = rng.randint(2, max_nodes)
    edges: set[tuple[int, int]] = set()
    order = list(range(n))
    rng.shuffle(order)
    for i in range(1, n):
        u, v = order[rng.randrange(i)], order[i]
        edges.add((min(u, v), max(u, v)))
    all_pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    rng.shuffle(all_pairs)
    for u, v in all_pairs:
        if len(edges) >= min(max_edges, len(all_pairs)):
            break
        edges.add((u, v))
    weighted = sorted((u, v, rng.randint(1, 17)) for u, v in edges)
    return n, weighted
