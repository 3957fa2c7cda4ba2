"""Per-detector profiles and the cross-detector safety checks.

Custom detectors routinely flood an organization with noisy alerts; letting
those correlate across detector boundaries collapses everything into one
"black hole" incident. Cross-detector links are therefore only allowed
between detectors that are quiet (volume) and specific (evidence fan-out),
and only when both endpoint alerts carry a bounded entity bag.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Mapping

from .entities import EntityType, parse_entity_type
from .errors import SchemaError
from .telemetry import Alert, AlertTable

#: Entity types allowed a higher fan-out before a detector/alert counts as low evidence.
HIGH_FANOUT_TYPES = frozenset(
    {EntityType.SHA1, EntityType.FILE_NAME, EntityType.URL, EntityType.EMAIL_ID, EntityType.APP_ID}
)


@dataclass(frozen=True, slots=True)
class SafetyThresholds:
    """Limits for the three black-hole safety checks.

    Volume checks are strict ("below 6%", "fewer than 20"); fan-out checks
    are inclusive maxima (4 for most types, 10 for high-fanout types).
    """

    max_share: float = 0.06
    max_per_day: float = 20.0
    max_avg_distinct_default: float = 4.0
    max_avg_distinct_high: float = 10.0
    high_fanout_types: frozenset[EntityType] = HIGH_FANOUT_TYPES

    def fanout_limit(self, entity_type: EntityType) -> float:
        if entity_type in self.high_fanout_types:
            return self.max_avg_distinct_high
        return self.max_avg_distinct_default


@dataclass(frozen=True, slots=True)
class DetectorProfile:
    """Aggregates for one (org, detector) over the profiling window."""

    org_id: str
    detector_id: str
    window_days: int
    total_alerts: int
    alerts_per_day: float
    share_of_org_alerts: float
    avg_distinct_per_entity: dict[EntityType, float] = field(default_factory=dict)

    def avg_distinct(self, entity_type: EntityType) -> float:
        return self.avg_distinct_per_entity.get(entity_type, 0.0)

    def key(self) -> "ProfileKey":
        return (self.org_id, self.detector_id)


ProfileKey = tuple[str, str]


def profile_detectors(
    alerts: AlertTable | Iterable[Alert],
    now: datetime,
    window_days: int = 7,
) -> dict[ProfileKey, DetectorProfile]:
    """Aggregate per-(org, detector) volume and entity fan-out statistics."""
    if window_days < 1:
        raise ValueError("window_days must be >= 1")
    window = timedelta(days=window_days)
    totals: dict[ProfileKey, int] = {}
    org_totals: dict[str, int] = {}
    fanout_sums: dict[ProfileKey, dict[EntityType, int]] = {}
    for alert in alerts:
        if now - alert.timestamp > window:
            continue
        key = (alert.org_id, alert.detector_id)
        totals[key] = totals.get(key, 0) + 1
        org_totals[alert.org_id] = org_totals.get(alert.org_id, 0) + 1
        sums = fanout_sums.setdefault(key, {})
        for etype, values in alert.entities.items():
            sums[etype] = sums.get(etype, 0) + len(values)
    profiles: dict[ProfileKey, DetectorProfile] = {}
    for key, total in totals.items():
        org_id, detector_id = key
        profiles[key] = DetectorProfile(
            org_id=org_id,
            detector_id=detector_id,
            window_days=window_days,
            total_alerts=total,
            alerts_per_day=total / window_days,
            share_of_org_alerts=total / org_totals[org_id],
            avg_distinct_per_entity={
                etype: count / total for etype, count in fanout_sums[key].items() if count
            },
        )
    return profiles


def detector_is_safe(profile: DetectorProfile, thresholds: SafetyThresholds) -> bool:
    """Low-volume and low-evidence detector checks for cross-detector correlation."""
    if profile.share_of_org_alerts >= thresholds.max_share:
        return False
    if profile.alerts_per_day >= thresholds.max_per_day:
        return False
    for etype, avg in profile.avg_distinct_per_entity.items():
        if avg > thresholds.fanout_limit(etype):
            return False
    return True


def alert_is_low_evidence(alert: Alert, thresholds: SafetyThresholds) -> bool:
    """Per-alert entity fan-out check; organizations can attach hundreds of entities."""
    for etype, values in alert.entities.items():
        if len(values) > thresholds.fanout_limit(etype):
            return False
    return True


def save_profiles(
    profiles: Mapping[ProfileKey, DetectorProfile] | Iterable[DetectorProfile], path: str | Path
) -> None:
    """Write profiles as JSONL in deterministic key order."""
    if isinstance(profiles, Mapping):
        profiles = profiles.values()
    with Path(path).open("w", encoding="utf-8") as handle:
        handle.write(json.dumps({"schema_version": 1, "kind": "detector_profiles"}) + "\n")
        for profile in sorted(profiles, key=DetectorProfile.key):
            row = {
                "org_id": profile.org_id,
                "detector_id": profile.detector_id,
                "window_days": profile.window_days,
                "total_alerts": profile.total_alerts,
                "alerts_per_day": profile.alerts_per_day,
                "share_of_org_alerts": profile.share_of_org_alerts,
                "avg_distinct_per_entity": {
                    etype.value: avg
                    for etype, avg in sorted(
                        profile.avg_distinct_per_entity.items(), key=lambda kv: kv[0].ordinal
                    )
                },
            }
            handle.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def load_profiles(path: str | Path) -> dict[ProfileKey, DetectorProfile]:
    profiles: dict[ProfileKey, DetectorProfile] = {}
    with Path(path).open("r", encoding="utf-8") as handle:
        for index, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", row=index) from exc
            if set(obj) == {"schema_version", "kind"}:
                continue
            try:
                avg = {}
                for name, value in obj.get("avg_distinct_per_entity", {}).items():
                    etype = parse_entity_type(name)
                    if etype is None:
                        raise SchemaError(f"unknown entity type {name!r}", row=index)
                    avg[etype] = float(value)
                profile = DetectorProfile(
                    org_id=str(obj["org_id"]),
                    detector_id=str(obj["detector_id"]),
                    window_days=int(obj["window_days"]),
                    total_alerts=int(obj["total_alerts"]),
                    alerts_per_day=float(obj["alerts_per_day"]),
                    share_of_org_alerts=float(obj["share_of_org_alerts"]),
                    avg_distinct_per_entity=avg,
                )
            except KeyError as exc:
                raise SchemaError(f"missing profile field {exc}", row=index) from exc
            profiles[(profile.org_id, profile.detector_id)] = profile
    return profiles
