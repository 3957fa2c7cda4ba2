"""Candidate generation and the correlation filter chain.

The stage turns the source/target alert slices into final correlations:
entity self-joins produce candidates, then store dedup, the time-window
filter, the threat-intelligence gate, the black-hole safety checks, and
duplicate-link prioritization run in a fixed order. Every filter emits both
survivors and tagged rejects; rejects feed the tuning reports, so nothing
is silently dropped.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import TYPE_CHECKING, Iterable, Mapping

from .entities import TI_GATED_TYPES, EntityCatalog, EntityType, EntityValue
from .profiler import DetectorProfile, ProfileKey, SafetyThresholds, alert_is_low_evidence, detector_is_safe
from .telemetry import Alert, AlertTable
from .ti import TiStore

if TYPE_CHECKING:
    from .store import CorrelationStore


@dataclass(frozen=True, slots=True)
class Correlation:
    """An undirected link between two same-org alerts justified by a shared entity.

    The same record shape flows through the whole lifecycle: candidate out
    of the join, survivor of each filter, final link after prioritization.
    The endpoint pair is canonicalized so (a, b) always has a < b.
    """

    org_id: str
    alert_a: str
    alert_b: str
    entity_type: EntityType
    entity_value: str
    time_delta: timedelta
    priority: int

    @property
    def pair(self) -> tuple[str, str, str]:
        return (self.org_id, self.alert_a, self.alert_b)

    def sort_key(self):
        return (self.org_id, self.alert_a, self.alert_b, self.entity_type.ordinal, self.entity_value)


class RejectStage(enum.Enum):
    """Pipeline stage at which a candidate was dropped; enum order is the report ordinal."""

    TIME_WINDOW = "time_window"
    THREAT_INTEL = "threat_intel"
    BLACK_HOLE = "black_hole"
    DEDUPLICATED = "deduplicated"
    MST_PRUNED = "mst_pruned"

    @property
    def ordinal(self) -> int:
        return _STAGE_ORDINALS[self]

    def __str__(self) -> str:
        return self.value


_STAGE_ORDINALS = {member: i for i, member in enumerate(RejectStage)}


@dataclass(frozen=True, slots=True)
class RejectedCorrelation:
    candidate: Correlation
    stage: RejectStage
    detail: str

    def sort_key(self):
        return (self.stage.ordinal,) + self.candidate.sort_key()


@dataclass(slots=True)
class CorrelationBatchResult:
    """Finals plus tagged rejects for one batch; counts satisfy flow conservation."""

    final: tuple[Correlation, ...]
    rejected: tuple[RejectedCorrelation, ...]
    counts: dict[str, int]

    def rejects_for(self, stage: RejectStage) -> list[RejectedCorrelation]:
        return [r for r in self.rejected if r.stage is stage]


def correlate_all(source: AlertTable, target: AlertTable, catalog: EntityCatalog) -> list[Correlation]:
    """Join source against target on every entity type.

    Same organization, shared entity value, no self-pairs; the same pair may
    appear once per shared (type, value). Returns candidates duplicate-free
    in canonical order.
    """
    index: dict[tuple[str, EntityType, str], list[Alert]] = {}
    for alert in target:
        for etype, values in alert.entities.items():
            for value in values:
                index.setdefault((alert.org_id, etype, value), []).append(alert)

    seen: set[tuple[str, str, str, EntityType, str]] = set()
    candidates: list[Correlation] = []
    for alert in source:
        for etype, values in alert.entities.items():
            priority = catalog.priority(etype)
            for value in values:
                for other in index.get((alert.org_id, etype, value), ()):
                    if other.alert_id == alert.alert_id:
                        continue
                    a, b = alert.alert_id, other.alert_id
                    if a > b:
                        a, b = b, a
                    key = (alert.org_id, a, b, etype, value)
                    if key in seen:
                        continue
                    seen.add(key)
                    delta = alert.timestamp - other.timestamp
                    if delta < timedelta(0):
                        delta = -delta
                    candidates.append(
                        Correlation(
                            org_id=alert.org_id,
                            alert_a=a,
                            alert_b=b,
                            entity_type=etype,
                            entity_value=value,
                            time_delta=delta,
                            priority=priority,
                        )
                    )
    candidates.sort(key=Correlation.sort_key)
    return candidates


def dedup_against_store(
    candidates: Iterable[Correlation], store: "CorrelationStore | None"
) -> tuple[list[Correlation], list[RejectedCorrelation]]:
    """Drop candidates whose pair already has a committed correlation."""
    if store is None:
        return list(candidates), []
    fresh: list[Correlation] = []
    rejected: list[RejectedCorrelation] = []
    for candidate in candidates:
        if store.has_pair(candidate.org_id, candidate.alert_a, candidate.alert_b):
            rejected.append(
                RejectedCorrelation(candidate, RejectStage.DEDUPLICATED, "pair already linked in store")
            )
        else:
            fresh.append(candidate)
    return fresh, rejected


def filter_time_window(
    candidates: Iterable[Correlation], catalog: EntityCatalog
) -> tuple[list[Correlation], list[RejectedCorrelation]]:
    """Keep candidates whose time delta is within the entity's window (inclusive)."""
    valid: list[Correlation] = []
    rejected: list[RejectedCorrelation] = []
    for candidate in candidates:
        window = catalog.window(candidate.entity_type)
        if candidate.time_delta <= window:
            valid.append(candidate)
        else:
            rejected.append(
                RejectedCorrelation(
                    candidate,
                    RejectStage.TIME_WINDOW,
                    f"delta {_hours(candidate.time_delta)} exceeds {_hours(window)} window",
                )
            )
    return valid, rejected


def filter_threat_intel(
    candidates: Iterable[Correlation], ti_store: TiStore, now: datetime
) -> tuple[list[Correlation], list[RejectedCorrelation]]:
    """Threat-intel gate: gated entity types survive only with a malicious verdict."""
    valid: list[Correlation] = []
    rejected: list[RejectedCorrelation] = []
    for candidate in candidates:
        if candidate.entity_type not in TI_GATED_TYPES:
            valid.append(candidate)
            continue
        entity = EntityValue(candidate.entity_type, candidate.entity_value)
        if ti_store.is_malicious(entity, now):
            valid.append(candidate)
        else:
            rejected.append(
                RejectedCorrelation(
                    candidate,
                    RejectStage.THREAT_INTEL,
                    f"no recent malicious verdict for {candidate.entity_type}",
                )
            )
    return valid, rejected


def filter_black_hole(
    candidates: Iterable[Correlation],
    alerts: AlertTable,
    profiles: Mapping[ProfileKey, DetectorProfile],
    thresholds: SafetyThresholds,
) -> tuple[list[Correlation], list[RejectedCorrelation]]:
    """Black-hole prevention.

    Same-detector pairs always pass (noisy alerts from one rule may
    correlate). Cross-detector pairs require both detectors safe and both
    endpoint alerts low evidence; unprofiled detectors count as unsafe.
    """
    valid: list[Correlation] = []
    rejected: list[RejectedCorrelation] = []
    safety_cache: dict[ProfileKey, bool] = {}
    evidence_cache: dict[str, bool] = {}

    def detector_ok(org_id: str, detector_id: str) -> bool:
        key = (org_id, detector_id)
        if key not in safety_cache:
            profile = profiles.get(key)
            safety_cache[key] = profile is not None and detector_is_safe(profile, thresholds)
        return safety_cache[key]

    def alert_ok(alert: Alert) -> bool:
        if alert.alert_id not in evidence_cache:
            evidence_cache[alert.alert_id] = alert_is_low_evidence(alert, thresholds)
        return evidence_cache[alert.alert_id]

    for candidate in candidates:
        alert_a = alerts.get(candidate.alert_a)
        alert_b = alerts.get(candidate.alert_b)
        if alert_a is None or alert_b is None:
            rejected.append(RejectedCorrelation(candidate, RejectStage.BLACK_HOLE, "endpoint missing from batch"))
            continue
        if alert_a.detector_id == alert_b.detector_id:
            valid.append(candidate)
            continue
        detail = None
        for endpoint in (alert_a, alert_b):
            if not detector_ok(endpoint.org_id, endpoint.detector_id):
                detail = f"detector {endpoint.detector_id} not safe for cross-detector correlation"
                break
        if detail is None:
            for endpoint in (alert_a, alert_b):
                if not alert_ok(endpoint):
                    detail = f"alert {endpoint.alert_id} exceeds evidence limits"
                    break
        if detail is None:
            valid.append(candidate)
        else:
            rejected.append(RejectedCorrelation(candidate, RejectStage.BLACK_HOLE, detail))
    return valid, rejected


def prioritize_duplicates(candidates: Iterable[Correlation]) -> list[Correlation]:
    """Keep one link per pair: lowest priority number wins.

    Ties break on (entity ordinal, entity value) so reruns are reproducible.
    """
    best: dict[tuple[str, str, str], Correlation] = {}
    for candidate in candidates:
        current = best.get(candidate.pair)
        if current is None or _priority_key(candidate) < _priority_key(current):
            best[candidate.pair] = candidate
    finals = list(best.values())
    finals.sort(key=Correlation.sort_key)
    return finals


def _priority_key(c: Correlation) -> tuple[int, int, str]:
    return (c.priority, c.entity_type.ordinal, c.entity_value)


def _hours(delta: timedelta) -> str:
    return f"{delta.total_seconds() / 3600:g}h"


def _stage_for_universe(
    source: AlertTable,
    target: AlertTable,
    catalog: EntityCatalog,
    ti_store: TiStore,
    profiles: Mapping[ProfileKey, DetectorProfile],
    store: "CorrelationStore | None",
    now: datetime,
    thresholds: SafetyThresholds,
) -> tuple[list[Correlation], list[RejectedCorrelation], int]:
    candidates = correlate_all(source, target, catalog)
    rejects: list[RejectedCorrelation] = []
    fresh, r = dedup_against_store(candidates, store)
    rejects.extend(r)
    valid, r = filter_time_window(fresh, catalog)
    rejects.extend(r)
    valid, r = filter_threat_intel(valid, ti_store, now)
    rejects.extend(r)
    valid, r = filter_black_hole(valid, target, profiles, thresholds)
    rejects.extend(r)
    finals = prioritize_duplicates(valid)
    # Losers of duplicate prioritization are still redundant links over an
    # already-linked pair, hence the deduplicated tag.
    kept = set(id(c) for c in finals)
    best_by_pair = {c.pair: c for c in finals}
    for candidate in valid:
        if id(candidate) in kept:
            continue
        winner = best_by_pair[candidate.pair]
        rejects.append(
            RejectedCorrelation(
                candidate,
                RejectStage.DEDUPLICATED,
                f"superseded by {winner.entity_type} link (priority {winner.priority})",
            )
        )
    return finals, rejects, len(candidates)


def run_correlation_stage(
    source: AlertTable,
    target: AlertTable,
    catalog: EntityCatalog,
    ti_store: TiStore,
    profiles: Mapping[ProfileKey, DetectorProfile],
    store: "CorrelationStore | None",
    now: datetime,
    thresholds: SafetyThresholds | None = None,
    max_workers: int = 1,
) -> CorrelationBatchResult:
    """Run the join and the whole filter chain; returns finals, rejects, and counts.

    With ``max_workers > 1`` the batch is partitioned by organization (edges
    never span orgs) and merged; the canonical-sorted result is identical to
    serial execution.
    """
    thresholds = thresholds or SafetyThresholds()
    if max_workers > 1:
        orgs = sorted(set(source.org_ids()) | set(target.org_ids()))
        source_by_org: dict[str, list[Alert]] = {org: [] for org in orgs}
        target_by_org: dict[str, list[Alert]] = {org: [] for org in orgs}
        for alert in source:
            source_by_org[alert.org_id].append(alert)
        for alert in target:
            target_by_org[alert.org_id].append(alert)

        def run_org(org: str):
            return _stage_for_universe(
                AlertTable(source_by_org[org]),
                AlertTable(target_by_org[org]),
                catalog,
                ti_store,
                profiles,
                store,
                now,
                thresholds,
            )

        finals: list[Correlation] = []
        rejects: list[RejectedCorrelation] = []
        candidate_count = 0
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            for org_finals, org_rejects, org_candidates in pool.map(run_org, orgs):
                finals.extend(org_finals)
                rejects.extend(org_rejects)
                candidate_count += org_candidates
        finals.sort(key=Correlation.sort_key)
    else:
        finals, rejects, candidate_count = _stage_for_universe(
            source, target, catalog, ti_store, profiles, store, now, thresholds
        )
    rejects.sort(key=RejectedCorrelation.sort_key)
    counts = {"candidates": candidate_count}
    for stage in RejectStage:
        counts[stage.value] = 0
    for reject in rejects:
        counts[reject.stage.value] += 1
    counts["final"] = len(finals)
    return CorrelationBatchResult(final=tuple(finals), rejected=tuple(rejects), counts=counts)
