"""File-backed threat-intelligence store for the gated entity types.

Hash and file-name verdicts are signature-style and never expire; IP-range
verdicts are low fidelity (VPN churn, shifting allocations) and only count
as malicious when confirmed recently.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable

from .entities import TI_GATED_TYPES, EntityType, EntityValue, normalize_entity_value, parse_entity_type
from .errors import NotGated, SchemaError
from .telemetry import format_timestamp, parse_timestamp

#: How recently an IPRange must have been confirmed malicious to gate a correlation.
IP_RANGE_RECENCY = timedelta(hours=48)

VERDICTS = ("malicious", "benign", "unknown")


@dataclass(frozen=True, slots=True)
class TiRecord:
    entity_type: EntityType
    value: str
    verdict: str
    last_confirmed: datetime


class TiStore:
    """In-memory TI index keyed by (entity_type, value); duplicate rows keep latest intel."""

    def __init__(self, records: Iterable[TiRecord] = (), ip_range_recency: timedelta = IP_RANGE_RECENCY):
        self._records: dict[tuple[EntityType, str], TiRecord] = {}
        self._ip_range_recency = ip_range_recency
        for record in records:
            self.add(record)

    def add(self, record: TiRecord) -> None:
        if record.entity_type not in TI_GATED_TYPES:
            raise SchemaError(f"entity type {record.entity_type} is not TI-gated")
        key = (record.entity_type, record.value)
        existing = self._records.get(key)
        if existing is None or record.last_confirmed >= existing.last_confirmed:
            self._records[key] = record

    def __len__(self) -> int:
        return len(self._records)

    def get(self, entity_type: EntityType, value: str) -> TiRecord | None:
        return self._records.get((entity_type, value))

    def lookup(self, entity: EntityValue, now: datetime) -> str:
        """Return 'malicious' or 'not_malicious' for a gated entity.

        SHA1/FileName: malicious iff a malicious record exists. IPRange:
        malicious iff additionally confirmed within the recency bound.
        Unknown/benign records count as not_malicious.
        """
        if entity.entity_type not in TI_GATED_TYPES:
            raise NotGated(f"{entity.entity_type} is not TI-gated")
        record = self._records.get((entity.entity_type, entity.value))
        if record is None or record.verdict != "malicious":
            return "not_malicious"
        if entity.entity_type is EntityType.IP_RANGE:
            if now - record.last_confirmed > self._ip_range_recency:
                return "not_malicious"
        return "malicious"

    def is_malicious(self, entity: EntityValue, now: datetime) -> bool:
        return self.lookup(entity, now) == "malicious"


def load_ti(path: str | Path) -> TiStore:
    """Load a TI feed CSV (entity_type,value,verdict,last_confirmed)."""
    store = TiStore()
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        expected = {"entity_type", "value", "verdict", "last_confirmed"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise SchemaError(f"TI feed header must be exactly {sorted(expected)}", row=1)
        for index, record in enumerate(reader, start=2):
            etype = parse_entity_type((record.get("entity_type") or "").strip())
            if etype is None or etype not in TI_GATED_TYPES:
                raise SchemaError(
                    f"entity_type must be one of SHA1, FileName, IPRange; got {record.get('entity_type')!r}",
                    row=index,
                )
            normalized = normalize_entity_value(etype, record.get("value") or "")
            if normalized is None:
                raise SchemaError("empty TI value", row=index)
            verdict = (record.get("verdict") or "").strip()
            if verdict not in VERDICTS:
                raise SchemaError(f"verdict must be one of {VERDICTS}; got {verdict!r}", row=index)
            try:
                confirmed = parse_timestamp(record.get("last_confirmed") or "")
            except Exception as exc:
                raise SchemaError(f"bad last_confirmed: {exc}", row=index) from exc
            store.add(TiRecord(etype, normalized.value, verdict, confirmed))
    return store


def save_ti(records: Iterable[TiRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["entity_type", "value", "verdict", "last_confirmed"])
        for record in records:
            writer.writerow(
                [record.entity_type.value, record.value, record.verdict, format_timestamp(record.last_confirmed)]
            )
