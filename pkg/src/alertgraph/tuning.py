"""Window tuning inputs: time-delta statistics and correlation-gap reports.

Both reports are advisory. Stats over valid and rejected correlation time
deltas tell a human whether an entity window is too tight or too loose; the
gap report ranks the most common reject reasons so missed-correlation
complaints can be traced to a filter. Nothing here feeds back into the
pipeline automatically.
"""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass
from datetime import timedelta
from typing import Iterable, Mapping

from .correlator import Correlation, RejectedCorrelation, RejectStage
from .entities import EntityCatalog, EntityType, parse_entity_type
from .errors import ConfigError

POPULATIONS = ("valid", "rejected", "combined")
PERCENTILES = (50, 90, 95, 99)


@dataclass(frozen=True, slots=True)
class TimeDeltaStats:
    entity_type: EntityType
    population: str
    count: int
    mean_seconds: float
    median_seconds: float
    p50_seconds: float
    p90_seconds: float
    p95_seconds: float
    p99_seconds: float

    def percentile(self, p: int) -> float:
        return getattr(self, f"p{p}_seconds")

    def to_row(self) -> dict:
        return {
            "entity_type": str(self.entity_type),
            "population": self.population,
            "count": self.count,
            "mean_seconds": round(self.mean_seconds, 3),
            "median_seconds": round(self.median_seconds, 3),
            "p50_seconds": self.p50_seconds,
            "p90_seconds": self.p90_seconds,
            "p95_seconds": self.p95_seconds,
            "p99_seconds": self.p99_seconds,
        }


def nearest_rank(values: list[float], p: int) -> float:
    """Nearest-rank percentile on a sorted sample: value at rank ceil(p/100 * n)."""
    if not values:
        raise ValueError("percentile of empty sample")
    rank = max(1, math.ceil(p / 100 * len(values)))
    return values[rank - 1]


def _stats_row(etype: EntityType, population: str, deltas: list[float]) -> TimeDeltaStats:
    ordered = sorted(deltas)
    return TimeDeltaStats(
        entity_type=etype,
        population=population,
        count=len(ordered),
        mean_seconds=statistics.fmean(ordered),
        median_seconds=float(statistics.median(ordered)),
        p50_seconds=nearest_rank(ordered, 50),
        p90_seconds=nearest_rank(ordered, 90),
        p95_seconds=nearest_rank(ordered, 95),
        p99_seconds=nearest_rank(ordered, 99),
    )


def time_delta_stats(
    valid: Iterable[Correlation], rejected: Iterable[RejectedCorrelation]
) -> list[TimeDeltaStats]:
    """Per-entity delta stats across valid, rejected, and combined populations.

    Rejected input must be the time-window rejects; other stages say nothing
    about window sizing. Empty populations are omitted.
    """
    valid_deltas: dict[EntityType, list[float]] = {}
    rejected_deltas: dict[EntityType, list[float]] = {}
    for c in valid:
        valid_deltas.setdefault(c.entity_type, []).append(c.time_delta.total_seconds())
    for r in rejected:
        if r.stage is not RejectStage.TIME_WINDOW:
            raise ValueError(f"expected time_window rejects, got {r.stage}")
        rejected_deltas.setdefault(r.candidate.entity_type, []).append(
            r.candidate.time_delta.total_seconds()
        )

    rows: list[TimeDeltaStats] = []
    for etype in sorted(set(valid_deltas) | set(rejected_deltas), key=lambda e: e.ordinal):
        v = valid_deltas.get(etype, [])
        r = rejected_deltas.get(etype, [])
        if v:
            rows.append(_stats_row(etype, "valid", v))
        if r:
            rows.append(_stats_row(etype, "rejected", r))
        rows.append(_stats_row(etype, "combined", v + r))
    return rows


@dataclass(frozen=True, slots=True)
class WindowPolicy:
    """How to turn combined-population percentiles into a window suggestion."""

    percentile: int = 99
    slack_factor: float = 1.2

    def __post_init__(self):
        if self.percentile not in PERCENTILES:
            raise ConfigError(f"percentile must be one of {PERCENTILES}, got {self.percentile}")
        if self.slack_factor < 1:
            raise ConfigError(f"slack_factor must be >= 1, got {self.slack_factor}")


def suggest_time_windows(
    stats: list[TimeDeltaStats], policy: WindowPolicy | None = None
) -> dict[EntityType, timedelta]:
    """Suggested window per entity: slack_factor x combined percentile, ceiling to the hour.

    Entities without combined observations get no suggestion. Suggestions
    below the current window are legitimate (reduction case); comparison
    against the current catalog happens at render time.
    """
    policy = policy or WindowPolicy()
    suggestions: dict[EntityType, timedelta] = {}
    for row in stats:
        if row.population != "combined":
            continue
        target = policy.slack_factor * row.percentile(policy.percentile)
        hours = math.ceil(target / 3600) if target > 0 else 1
        suggestions[row.entity_type] = timedelta(hours=hours)
    return suggestions


def stats_doc(
    stats: list[TimeDeltaStats],
    catalog: EntityCatalog,
    policy: WindowPolicy | None = None,
) -> dict:
    policy = policy or WindowPolicy()
    suggestions = suggest_time_windows(stats, policy)
    suggestion_rows = []
    for etype in sorted(suggestions, key=lambda e: e.ordinal):
        current = catalog.window(etype)
        suggested = suggestions[etype]
        suggestion_rows.append(
            {
                "entity_type": str(etype),
                "current_window_seconds": int(current.total_seconds()),
                "suggested_window_seconds": int(suggested.total_seconds()),
                "direction": (
                    "extend" if suggested > current else "reduce" if suggested < current else "keep"
                ),
            }
        )
    return {
        "schema_version": 1,
        "kind": "timedelta_stats",
        "policy": {"percentile": policy.percentile, "slack_factor": policy.slack_factor},
        "rows": [row.to_row() for row in stats],
        "suggestions": suggestion_rows,
    }


def write_stats_csv(stats: list[TimeDeltaStats], path) -> None:
    fields = [
        "entity_type",
        "population",
        "count",
        "mean_seconds",
        "median_seconds",
        "p50_seconds",
        "p90_seconds",
        "p95_seconds",
        "p99_seconds",
    ]
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        for row in stats:
            writer.writerow(row.to_row())


@dataclass(frozen=True, slots=True)
class GapEntry:
    stage: RejectStage
    entity_type: EntityType
    detectors: tuple[str, str]
    count: int
    samples: tuple[RejectedCorrelation, ...]

    def to_row(self) -> dict:
        return {
            "stage": str(self.stage),
            "entity_type": str(self.entity_type),
            "detectors": list(self.detectors),
            "count": self.count,
            "samples": [
                {
                    "alert_a": s.candidate.alert_a,
                    "alert_b": s.candidate.alert_b,
                    "entity_value": s.candidate.entity_value,
                    "time_delta_seconds": int(s.candidate.time_delta.total_seconds()),
                    "detail": s.detail,
                }
                for s in self.samples
            ],
        }


@dataclass(slots=True)
class GapReport:
    entries: list[GapEntry]

    def to_doc(self) -> dict:
        return {
            "schema_version": 1,
            "kind": "gap_report",
            "entries": [entry.to_row() for entry in self.entries],
        }


def gap_report(
    rejected: Iterable[RejectedCorrelation], detectors: Mapping[str, str]
) -> GapReport:
    """Rank reject groups by prevalence.

    Groups on (stage, entity type, detector pairing); ``detectors`` maps
    alert_id to detector_id for attribution. Descending count, ties broken
    by (stage ordinal, entity ordinal, pairing) so the report is stable.
    """
    groups: dict[tuple[RejectStage, EntityType, tuple[str, str]], list[RejectedCorrelation]] = {}
    for reject in rejected:
        c = reject.candidate
        pairing = tuple(
            sorted(
                (
                    detectors.get(c.alert_a, "unknown"),
                    detectors.get(c.alert_b, "unknown"),
                )
            )
        )
        groups.setdefault((reject.stage, c.entity_type, pairing), []).append(reject)

    entries = []
    for (stage, etype, pairing), members in groups.items():
        members.sort(key=RejectedCorrelation.sort_key)
        entries.append(
            GapEntry(
                stage=stage,
                entity_type=etype,
                detectors=pairing,
                count=len(members),
                samples=tuple(members[:5]),
            )
        )
    entries.sort(key=lambda e: (-e.count, e.stage.ordinal, e.entity_type.ordinal, e.detectors))
    return GapReport(entries=entries)


def gap_report_from_rows(rows: Iterable[dict]) -> GapReport:
    """Rebuild a gap report from serialized reject rows (the report command path)."""
    detectors: dict[str, str] = {}
    rejects: list[RejectedCorrelation] = []
    for row in rows:
        etype = parse_entity_type(row["entity_type"])
        if etype is None:
            raise ConfigError(f"unknown entity type {row['entity_type']!r} in reject row")
        candidate = Correlation(
            org_id=row["org_id"],
            alert_a=row["alert_a"],
            alert_b=row["alert_b"],
            entity_type=etype,
            entity_value=row["entity_value"],
            time_delta=timedelta(seconds=row["time_delta_seconds"]),
            priority=row["priority"],
        )
        rejects.append(
            RejectedCorrelation(candidate, RejectStage(row["stage"]), row.get("detail", ""))
        )
        detectors[row["alert_a"]] = row.get("detector_a", "unknown")
        detectors[row["alert_b"]] = row.get("detector_b", "unknown")
    return gap_report(rejects, detectors)
