"""Alert data model, file ingestion, and batch windowing.

Alerts arrive as JSONL (one object per line) or CSV (one column per entity
type, ';'-separated multi-values). Entity values are normalized on load and
every IPv4 address contributes its /24 range so subnet joins work without
the producer having to emit ranges explicitly.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Iterator

from .entities import EntityType, derive_ip_range, normalize_entity_value, parse_entity_type
from .errors import InvalidWindow, ParseError, SchemaError

logger = logging.getLogger(__name__)

DEFAULT_SOURCE_WINDOW = timedelta(minutes=35)
DEFAULT_TARGET_WINDOW = timedelta(hours=72)

DETECTOR_KINDS = ("builtin", "custom")


def parse_timestamp(raw: str) -> datetime:
    """Parse an RFC 3339 timestamp to a UTC instant at seconds precision."""
    text = raw.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        moment = datetime.fromisoformat(text)
    except ValueError as exc:
        raise ParseError(f"bad timestamp {raw!r}") from exc
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(moment: datetime) -> str:
    return moment.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True, slots=True)
class Alert:
    """One detected security event with its evidence entity bag."""

    alert_id: str
    org_id: str
    detector_id: str
    detector_kind: str
    timestamp: datetime
    entities: dict[EntityType, frozenset[str]]

    def entity_count(self, entity_type: EntityType) -> int:
        return len(self.entities.get(entity_type, ()))

    def to_row(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "org_id": self.org_id,
            "detector_id": self.detector_id,
            "detector_kind": self.detector_kind,
            "timestamp": format_timestamp(self.timestamp),
            "entities": {
                etype.value: sorted(values)
                for etype, values in sorted(self.entities.items(), key=lambda kv: kv[0].ordinal)
                if values
            },
        }


class AlertTable:
    """Immutable batch of alerts in canonical (timestamp, alert_id) order."""

    def __init__(self, alerts: Iterable[Alert]):
        rows = sorted(alerts, key=lambda a: (a.timestamp, a.alert_id))
        seen: set[str] = set()
        for alert in rows:
            if alert.alert_id in seen:
                raise SchemaError(f"duplicate alert_id {alert.alert_id!r} in batch")
            seen.add(alert.alert_id)
        self._rows: tuple[Alert, ...] = tuple(rows)
        self._by_id = {alert.alert_id: alert for alert in rows}

    def __len__(self) -> int:
        return len(self._rows)

    def __iter__(self) -> Iterator[Alert]:
        return iter(self._rows)

    def __contains__(self, alert_id: str) -> bool:
        return alert_id in self._by_id

    def get(self, alert_id: str) -> Alert | None:
        return self._by_id.get(alert_id)

    @property
    def rows(self) -> tuple[Alert, ...]:
        return self._rows

    @property
    def watermark(self) -> datetime | None:
        return self._rows[-1].timestamp if self._rows else None

    def org_ids(self) -> list[str]:
        return sorted({alert.org_id for alert in self._rows})


@dataclass(slots=True)
class RowError:
    """A skipped input row and why it was skipped."""

    row: int
    message: str


@dataclass(slots=True)
class LoadReport:
    table: AlertTable
    errors: list[RowError] = field(default_factory=list)


def _build_entities(raw: dict[str, list[str]], row: int) -> dict[EntityType, frozenset[str]]:
    collected: dict[EntityType, set[str]] = {}
    for name, values in raw.items():
        etype = parse_entity_type(name)
        if etype is None:
            raise SchemaError(f"unknown entity type {name!r}", row=row)
        if not isinstance(values, list):
            raise SchemaError(f"entity {name!r} must map to a list of strings", row=row)
        for value in values:
            normalized = normalize_entity_value(etype, str(value))
            if normalized is not None:
                collected.setdefault(etype, set()).add(normalized.value)
    # Every IPv4 address implies its /24 range; union keeps explicit ranges.
    for ip_value in sorted(collected.get(EntityType.IP, ())):
        try:
            derived = derive_ip_range(normalize_entity_value(EntityType.IP, ip_value))
        except ParseError:
            continue
        collected.setdefault(EntityType.IP_RANGE, set()).add(derived.value)
    return {etype: frozenset(values) for etype, values in collected.items() if values}


def parse_alert_row(obj: dict, row: int) -> Alert:
    """Validate one JSONL object; raises SchemaError naming the row."""
    for required in ("alert_id", "org_id", "detector_id", "timestamp"):
        if not obj.get(required):
            raise SchemaError(f"missing required field {required!r}", row=row)
    kind = obj.get("detector_kind", "builtin")
    if kind not in DETECTOR_KINDS:
        raise SchemaError(f"detector_kind must be one of {DETECTOR_KINDS}, got {kind!r}", row=row)
    try:
        timestamp = parse_timestamp(str(obj["timestamp"]))
    except ParseError as exc:
        raise SchemaError(str(exc), row=row) from exc
    entities = obj.get("entities", {})
    if not isinstance(entities, dict):
        raise SchemaError("entities must be an object", row=row)
    return Alert(
        alert_id=str(obj["alert_id"]),
        org_id=str(obj["org_id"]),
        detector_id=str(obj["detector_id"]),
        detector_kind=kind,
        timestamp=timestamp,
        entities=_build_entities(entities, row),
    )


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with path.open("r", encoding="utf-8") as handle:
        for index, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", row=index) from exc
            if not isinstance(obj, dict):
                raise SchemaError("each line must be a JSON object", row=index)
            yield index, obj


def _iter_csv(path: Path) -> Iterator[tuple[int, dict]]:
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            return
        known = {"alert_id", "org_id", "detector_id", "detector_kind", "timestamp"}
        for name in reader.fieldnames:
            if name not in known and parse_entity_type(name) is None:
                raise SchemaError(f"unknown CSV column {name!r}", row=1)
        for index, record in enumerate(reader, start=2):
            obj = {
                "alert_id": record.get("alert_id"),
                "org_id": record.get("org_id"),
                "detector_id": record.get("detector_id"),
                "detector_kind": record.get("detector_kind") or "builtin",
                "timestamp": record.get("timestamp"),
                "entities": {
                    name: [v for v in (value or "").split(";") if v.strip()]
                    for name, value in record.items()
                    if name not in known and value
                },
            }
            yield index, obj


def load_alerts(path: str | Path, fmt: str = "jsonl", strict: bool = False) -> LoadReport:
    """Load an alert file into a canonical-order table.

    Malformed rows are reported and skipped so one bad producer cannot drop a
    whole batch; ``strict=True`` raises on the first bad row instead.
    """
    path = Path(path)
    if fmt == "jsonl":
        rows = _iter_jsonl(path)
    elif fmt == "csv":
        rows = _iter_csv(path)
    else:
        raise SchemaError(f"unsupported alert format {fmt!r}")
    alerts: list[Alert] = []
    errors: list[RowError] = []
    for index, obj in rows:
        if set(obj) == {"schema_version", "kind"}:
            continue  # artifact header line
        try:
            alerts.append(parse_alert_row(obj, index))
        except SchemaError as exc:
            if strict:
                raise
            errors.append(RowError(row=index, message=str(exc)))
            logger.warning("skipping alert %s:%s: %s", path, index, exc)
    return LoadReport(table=AlertTable(alerts), errors=errors)


def save_alerts(table: AlertTable, path: str | Path) -> None:
    """Write a table back out in the JSONL input schema (round-trip safe)."""
    with Path(path).open("w", encoding="utf-8") as handle:
        for alert in table:
            handle.write(json.dumps(alert.to_row(), sort_keys=True, separators=(",", ":")))
            handle.write("\n")


def window_slice(
    table: AlertTable,
    now: datetime,
    source_window: timedelta = DEFAULT_SOURCE_WINDOW,
    target_window: timedelta = DEFAULT_TARGET_WINDOW,
) -> tuple[AlertTable, AlertTable]:
    """Split a batch into the new-alert source slice and the historical target slice.

    An alert is in a slice when ``now - t <= window``; source is always a
    subset of target.
    """
    if source_window > target_window:
        raise InvalidWindow(f"source window {source_window} exceeds target window {target_window}")
    target = [a for a in table if now - a.timestamp <= target_window]
    source = [a for a in target if now - a.timestamp <= source_window]
    return AlertTable(source), AlertTable(target)


def parse_duration(raw: str) -> timedelta:
    """Parse '35m', '72h', '90s', '2d', or plain seconds into a duration."""
    text = raw.strip().lower()
    units = {"s": 1, "m": 60, "h": 3600, "d": 86400}
    factor = 1.0
    if text and text[-1] in units:
        factor = units[text[-1]]
        text = text[:-1]
    try:
        value = float(text)
    except ValueError as exc:
        raise ParseError(f"bad duration {raw!r}") from exc
    if not math.isfinite(value) or value < 0:
        raise ParseError(f"bad duration {raw!r}")
    return timedelta(seconds=value * factor)
