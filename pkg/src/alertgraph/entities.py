"""Entity type catalog: priorities, correlation time windows, TI gating, normalization.

The 17 correlatable entity types each carry a priority score (1 = highest)
and a maximum correlation time window. Both are tunable via a JSON override
file; the defaults below are the production-tuned values.
"""

from __future__ import annotations

import enum
import ipaddress
import json
from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import ConfigError, ParseError


class EntityType(enum.Enum):
    """The 17 correlatable entity types. Enum order is the stable tie-break ordinal."""

    SESSION_ID = "SessionId"
    EMAIL_ID = "EmailId"
    CAMPAIGN_ID = "CampaignId"
    EMAIL_CLUSTER = "EmailCluster"
    USER_ID = "UserId"
    URL = "URL"
    DEVICE_ID = "DeviceId"
    SHA1 = "SHA1"
    FILE_NAME = "FileName"
    APP_ID = "AppId"
    EMAIL_ADDRESS = "EmailAddress"
    EMAIL_SUBJECT = "EmailSubject"
    REGISTRY_KEY = "RegistryKey"
    REGISTRY_VALUE = "RegistryValue"
    RESOURCE_ID = "ResourceId"
    IP = "IP"
    IP_RANGE = "IPRange"

    @property
    def ordinal(self) -> int:
        return _ORDINALS[self]

    def __str__(self) -> str:
        return self.value


_ORDINALS = {member: i for i, member in enumerate(EntityType)}
_BY_NAME = {member.value: member for member in EntityType}

#: Entity types whose values are case-insensitive in practice; lowercased on ingest.
CASE_FOLDED_TYPES = frozenset(
    {EntityType.FILE_NAME, EntityType.URL, EntityType.EMAIL_ADDRESS, EntityType.SHA1}
)

#: Entity types whose correlations require a threat-intelligence verdict.
TI_GATED_TYPES = frozenset({EntityType.SHA1, EntityType.FILE_NAME, EntityType.IP_RANGE})


@dataclass(frozen=True, slots=True)
class EntitySpec:
    """Catalog row: priority (1 = highest), max correlation window, TI gating."""

    entity_type: EntityType
    priority: int
    max_time_window: timedelta
    ti_gated: bool


class EntityValue(NamedTuple):
    """A normalized entity value carried by an alert."""

    entity_type: EntityType
    value: str


# (type, priority, window hours); production-tuned defaults.
_DEFAULT_ROWS = (
    (EntityType.SESSION_ID, 1, 48),
    (EntityType.EMAIL_ID, 2, 48),
    (EntityType.CAMPAIGN_ID, 3, 72),
    (EntityType.EMAIL_CLUSTER, 4, 72),
    (EntityType.USER_ID, 5, 24),
    (EntityType.URL, 6, 48),
    (EntityType.DEVICE_ID, 7, 24),
    (EntityType.SHA1, 8, 24),
    (EntityType.FILE_NAME, 9, 24),
    (EntityType.APP_ID, 10, 48),
    (EntityType.EMAIL_ADDRESS, 11, 12),
    (EntityType.EMAIL_SUBJECT, 12, 12),
    (EntityType.REGISTRY_VALUE, 13, 24),
    (EntityType.REGISTRY_KEY, 14, 24),
    (EntityType.RESOURCE_ID, 15, 24),
    (EntityType.IP, 16, 8),
    (EntityType.IP_RANGE, 17, 8),
)


def default_catalog() -> list[EntitySpec]:
    """The default catalog rows, one per entity type."""
    return [
        EntitySpec(etype, priority, timedelta(hours=hours), etype in TI_GATED_TYPES)
        for etype, priority, hours in _DEFAULT_ROWS
    ]


class EntityCatalog:
    """Immutable lookup table over EntitySpec rows.

    Priorities must be a permutation of 1..17; construction validates this so
    duplicate-link prioritization is always well defined.
    """

    def __init__(self, specs: Iterable[EntitySpec] | None = None):
        specs = list(specs) if specs is not None else default_catalog()
        by_type = {spec.entity_type: spec for spec in specs}
        if len(by_type) != len(EntityType) or len(specs) != len(EntityType):
            raise ConfigError("catalog must contain exactly one spec per entity type")
        priorities = sorted(spec.priority for spec in specs)
        if priorities != list(range(1, len(EntityType) + 1)):
            raise ConfigError(f"catalog priorities must be a permutation of 1..{len(EntityType)}")
        for spec in specs:
            if spec.max_time_window <= timedelta(0):
                raise ConfigError(f"{spec.entity_type}: max_time_window must be positive")
        self._by_type = by_type

    def lookup(self, entity_type: EntityType) -> EntitySpec:
        return self._by_type[entity_type]

    def priority(self, entity_type: EntityType) -> int:
        return self._by_type[entity_type].priority

    def window(self, entity_type: EntityType) -> timedelta:
        return self._by_type[entity_type].max_time_window

    def is_ti_gated(self, entity_type: EntityType) -> bool:
        return self._by_type[entity_type].ti_gated

    @property
    def max_window(self) -> timedelta:
        """Longest window across the catalog; drives the target-slice length."""
        return max(spec.max_time_window for spec in self._by_type.values())

    def specs(self) -> list[EntitySpec]:
        return [self._by_type[etype] for etype in EntityType]

    @classmethod
    def from_file(cls, path: str | Path) -> "EntityCatalog":
        """Load a catalog with per-entity overrides applied to the defaults.

        File format: JSON object keyed by entity name, each value an object
        with any of ``priority``, ``window_hours``, ``ti_gated``.
        """
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"catalog override is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("catalog override must be a JSON object")
        rows = {spec.entity_type: spec for spec in default_catalog()}
        for name, fields in doc.items():
            etype = parse_entity_type(name)
            if etype is None:
                raise ConfigError(f"unknown entity type in catalog override: {name!r}")
            if not isinstance(fields, dict):
                raise ConfigError(f"{name}: override must be an object")
            unknown = set(fields) - {"priority", "window_hours", "ti_gated"}
            if unknown:
                raise ConfigError(f"{name}: unknown override fields {sorted(unknown)}")
            base = rows[etype]
            rows[etype] = EntitySpec(
                entity_type=etype,
                priority=int(fields.get("priority", base.priority)),
                max_time_window=timedelta(hours=float(fields.get("window_hours", base.max_time_window.total_seconds() / 3600))),
                ti_gated=bool(fields.get("ti_gated", base.ti_gated)),
            )
        return cls(rows.values())


def parse_entity_type(name: str) -> EntityType | None:
    """Resolve an entity type by its canonical name; None if unknown."""
    return _BY_NAME.get(name)


def normalize_entity_value(entity_type: EntityType, raw: str) -> EntityValue | None:
    """Trim and case-fold a raw entity value; None means no usable entity.

    Only case-insensitive types (file names, URLs, hashes, email addresses)
    are lowercased; identifiers keep their case. Idempotent.
    """
    value = raw.strip()
    if not value:
        return None
    if entity_type in CASE_FOLDED_TYPES:
        value = value.lower()
    return EntityValue(entity_type, value)


def derive_ip_range(ip: EntityValue) -> EntityValue:
    """Map an IPv4 entity value onto its /24 subnet range value.

    Raises ParseError for anything that is not a dotted-quad IPv4 address
    (IPv6 is deliberately rejected).
    """
    if ip.entity_type is not EntityType.IP:
        raise ParseError(f"expected an IP entity, got {ip.entity_type}")
    try:
        address = ipaddress.IPv4Address(ip.value)
    except ipaddress.AddressValueError as exc:
        raise ParseError(f"not an IPv4 address: {ip.value!r}") from exc
    network = ipaddress.IPv4Network((address, 24), strict=False)
    return EntityValue(EntityType.IP_RANGE, str(network))
