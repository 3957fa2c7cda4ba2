"""Synthetic alert batches with known ground truth.

The generator plants incidents as groups of alerts sharing an entity value
inside that entity's legal time window, adds independent noise alerts that
should stay singletons, and can add one noisy custom detector that exceeds
the safety thresholds. It also emits the matching threat-intel feed (so
planted hash/filename/range incidents survive the TI gate) and a detector
profile file consistent with the planted volumes. Same seed, same bytes.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

from .entities import EntityCatalog, EntityType, default_catalog
from .errors import ConfigError
from .profiler import DetectorProfile
from .telemetry import (
    AlertTable,
    format_timestamp,
    parse_alert_row,
    parse_duration,
    parse_timestamp,
)
from .ti import TiRecord

DEFAULT_END_TIME = datetime(2024, 3, 1, tzinfo=timezone.utc)

DEFAULT_ENTITY_MIX = {
    EntityType.SESSION_ID: 3.0,
    EntityType.USER_ID: 3.0,
    EntityType.DEVICE_ID: 2.0,
    EntityType.URL: 2.0,
    EntityType.IP: 2.0,
    EntityType.EMAIL_ADDRESS: 1.0,
    EntityType.SHA1: 1.0,
    EntityType.FILE_NAME: 1.0,
}


@dataclass(frozen=True, slots=True)
class NoisyDetectorSpec:
    """One custom detector loud enough to trip the safety checks."""

    alerts_per_day: float = 100.0
    entity_fanout: int = 6


@dataclass(frozen=True, slots=True)
class GeneratorConfig:
    seed: int = 0
    org_count: int = 2
    incidents_per_org: int = 5
    incident_size: tuple[int, int] = (2, 6)
    entity_mix: dict[EntityType, float] = field(default_factory=lambda: dict(DEFAULT_ENTITY_MIX))
    noise_alert_fraction: float = 0.2
    noisy_detector: NoisyDetectorSpec | None = None
    time_span: timedelta = timedelta(hours=24)
    end_time: datetime = DEFAULT_END_TIME
    detectors_per_org: int = 25

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if self.org_count < 1:
            raise ConfigError("org_count must be positive")
        if self.incidents_per_org < 0:
            raise ConfigError("incidents_per_org must be non-negative")
        lo, hi = self.incident_size
        if lo < 1 or hi < lo:
            raise ConfigError(f"incident_size range {self.incident_size} must satisfy 1 <= min <= max")
        if not self.entity_mix:
            raise ConfigError("entity_mix must not be empty")
        for etype, weight in self.entity_mix.items():
            if weight <= 0:
                raise ConfigError(f"entity_mix weight for {etype} must be positive")
        if not 0 <= self.noise_alert_fraction < 1:
            raise ConfigError("noise_alert_fraction must be in [0, 1)")
        if self.time_span <= timedelta(0):
            raise ConfigError("time_span must be positive")
        if self.detectors_per_org < 1:
            raise ConfigError("detectors_per_org must be positive")
        if self.noisy_detector is not None:
            if self.noisy_detector.alerts_per_day <= 0:
                raise ConfigError("noisy detector alerts_per_day must be positive")
            if self.noisy_detector.entity_fanout < 1:
                raise ConfigError("noisy detector entity_fanout must be positive")

    @classmethod
    def from_file(cls, path) -> "GeneratorConfig":
        with open(path) as handle:
            try:
                raw = json.load(handle)
            except ValueError as exc:
                raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "GeneratorConfig":
        known = {
            "seed",
            "org_count",
            "incidents_per_org",
            "incident_size",
            "entity_mix",
            "noise_alert_fraction",
            "noisy_detector",
            "time_span",
            "end_time",
            "detectors_per_org",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs: dict = {}
        for key in ("seed", "org_count", "incidents_per_org", "noise_alert_fraction", "detectors_per_org"):
            if key in raw:
                kwargs[key] = raw[key]
        if "incident_size" in raw:
            size = raw["incident_size"]
            if isinstance(size, int):
                kwargs["incident_size"] = (size, size)
            elif isinstance(size, list) and len(size) == 2 and all(isinstance(v, int) for v in size):
                kwargs["incident_size"] = (size[0], size[1])
            else:
                raise ConfigError(f"incident_size must be an int or [min, max], got {size!r}")
        if "entity_mix" in raw:
            mix: dict[EntityType, float] = {}
            for name, weight in raw["entity_mix"].items():
                try:
                    etype = EntityType(name)
                except ValueError:
                    raise ConfigError(f"unknown entity type in entity_mix: {name!r}") from None
                mix[etype] = float(weight)
            kwargs["entity_mix"] = mix
        if "noisy_detector" in raw and raw["noisy_detector"] is not None:
            spec = raw["noisy_detector"]
            if not isinstance(spec, dict):
                raise ConfigError("noisy_detector must be an object or null")
            kwargs["noisy_detector"] = NoisyDetectorSpec(
                alerts_per_day=float(spec.get("alerts_per_day", 100.0)),
                entity_fanout=int(spec.get("entity_fanout", 6)),
            )
        if "time_span" in raw:
            kwargs["time_span"] = parse_duration(raw["time_span"])
        if "end_time" in raw:
            kwargs["end_time"] = parse_timestamp(raw["end_time"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(slots=True)
class GeneratedBatch:
    """Everything one synthetic run produces."""

    table: AlertTable
    truth: dict[str, str | None]
    ti_records: list[TiRecord]
    profiles: list[DetectorProfile]


_GATED_SET = {EntityType.SHA1, EntityType.FILE_NAME, EntityType.IP_RANGE}


def _planted_value(etype: EntityType, counter: int) -> str:
    """Unique, schema-valid value for incident number ``counter``.

    IP values get a distinct /24 per incident (counter encoded in the
    network octets, host fixed) so derived ranges never collide across
    incidents and candidate volume stays linear in the alert count.
    """
    if etype is EntityType.IP:
        return f"{10 + (counter // 62500) % 90}.{(counter // 250) % 250}.{counter % 250}.5"
    if etype is EntityType.IP_RANGE:
        return f"{10 + (counter // 62500) % 90}.{(counter // 250) % 250}.{counter % 250}.0/24"
    if etype is EntityType.SHA1:
        return f"{counter:040x}"
    if etype is EntityType.URL:
        return f"https://mal{counter}.example.test/payload"
    if etype is EntityType.EMAIL_ADDRESS:
        return f"actor{counter}@example.test"
    if etype is EntityType.FILE_NAME:
        return f"dropper-{counter}.exe"
    if etype is EntityType.EMAIL_SUBJECT:
        return f"invoice {counter}"
    if etype is EntityType.RESOURCE_ID:
        return f"/subscriptions/sub{counter}/vm"
    if etype is EntityType.REGISTRY_KEY:
        return f"hklm\\software\\run\\k{counter}"
    if etype is EntityType.REGISTRY_VALUE:
        return f"hklm\\software\\run\\k{counter}\\v"
    return f"{etype.value.lower()}-{counter}"


def _noise_value(etype: EntityType, counter: int) -> str:
    if etype is EntityType.IP:
        return f"{100 + (counter // 62500) % 90}.{(counter // 250) % 250}.{counter % 250}.9"
    return f"bg-{_planted_value(etype, counter)}"


def generate_synthetic_alerts(
    config: GeneratorConfig, catalog: EntityCatalog | None = None
) -> GeneratedBatch:
    """Build a deterministic synthetic batch from the config."""
    catalog = catalog or EntityCatalog(default_catalog())
    rng = random.Random(config.seed)
    mix_types = sorted(config.entity_mix, key=lambda e: e.ordinal)
    mix_weights = [config.entity_mix[e] for e in mix_types]
    span_seconds = int(config.time_span.total_seconds())

    rows: list[dict] = []
    truth: dict[str, str | None] = {}
    ti_records: list[TiRecord] = []
    alert_counter = 0
    incident_counter = 0

    def emit(org_id: str, detector_id: str, detector_kind: str, age_seconds: int, entities: dict, label: str | None):
        nonlocal alert_counter
        alert_id = f"a-{alert_counter:07d}"
        alert_counter += 1
        rows.append(
            {
                "alert_id": alert_id,
                "org_id": org_id,
                "detector_id": detector_id,
                "detector_kind": detector_kind,
                "timestamp": format_timestamp(config.end_time - timedelta(seconds=age_seconds)),
                "entities": entities,
            }
        )
        truth[alert_id] = label

    planted_values: dict[str, list[tuple[EntityType, str]]] = {}
    detector_load: dict[tuple[str, str], int] = {}

    for org_index in range(config.org_count):
        org_id = f"org-{org_index:03d}"
        pool = [f"det-{org_index:03d}-{i:02d}" for i in range(config.detectors_per_org)]
        planted_values[org_id] = []
        planted_in_org = 0
        round_robin = 0

        for _ in range(config.incidents_per_org):
            incident_counter += 1
            size = rng.randint(*config.incident_size)
            etype = rng.choices(mix_types, weights=mix_weights, k=1)[0]
            value = _planted_value(etype, incident_counter)
            planted_values[org_id].append((etype, value))
            if etype in _GATED_SET:
                ti_records.append(
                    TiRecord(etype, value, "malicious", config.end_time - timedelta(hours=1))
                )

            # Keep pairwise gaps strictly inside the entity window.
            window = int(catalog.window(etype).total_seconds())
            spread = min(int(window * 0.9), span_seconds - 1)
            base = rng.randint(0, max(0, span_seconds - spread - 1))
            label = f"gt-{incident_counter:05d}"
            members = sorted(rng.randint(0, spread) for _ in range(size))
            for offset in members:
                detector_id = pool[round_robin % len(pool)]
                round_robin += 1
                detector_load[(org_id, detector_id)] = detector_load.get((org_id, detector_id), 0) + 1
                emit(org_id, detector_id, "builtin", base + offset, {str(etype): [value]}, label)
                planted_in_org += 1

        fraction = config.noise_alert_fraction
        noise_count = round(planted_in_org * fraction / (1 - fraction)) if fraction else 0
        for noise_index in range(noise_count):
            etype = rng.choices(mix_types, weights=mix_weights, k=1)[0]
            value = _noise_value(etype, alert_counter)
            detector_id = pool[round_robin % len(pool)]
            round_robin += 1
            detector_load[(org_id, detector_id)] = detector_load.get((org_id, detector_id), 0) + 1
            emit(org_id, detector_id, "builtin", rng.randint(0, span_seconds - 1), {str(etype): [value]}, None)

        if config.noisy_detector is not None:
            spec = config.noisy_detector
            detector_id = f"noisy-{org_index:03d}"
            count = max(1, round(spec.alerts_per_day * span_seconds / 86400))
            pool_values = planted_values[org_id]
            for _ in range(count):
                entities: dict[str, list[str]] = {}
                if pool_values:
                    picks = rng.sample(pool_values, min(spec.entity_fanout, len(pool_values)))
                    for petype, pvalue in picks:
                        entities.setdefault(str(petype), []).append(pvalue)
                detector_load[(org_id, detector_id)] = detector_load.get((org_id, detector_id), 0) + 1
                emit(org_id, detector_id, "custom", rng.randint(0, span_seconds - 1), entities, None)

    alerts = [parse_alert_row(row, i) for i, row in enumerate(rows)]
    table = AlertTable(alerts)

    ti_records.sort(key=lambda r: (r.entity_type.ordinal, r.value))
    profiles = _build_profiles(config, detector_load)
    return GeneratedBatch(table=table, truth=truth, ti_records=ti_records, profiles=profiles)


def _build_profiles(config: GeneratorConfig, detector_load: dict[tuple[str, str], int]) -> list[DetectorProfile]:
    """Profiles as a 7-day profiling job would see these detectors.

    Planted detectors get quiet, safe numbers; the noisy detector carries its
    configured volume and fan-out so the safety checks reject it.
    """
    org_totals: dict[str, int] = {}
    for (org_id, _), count in detector_load.items():
        org_totals[org_id] = org_totals.get(org_id, 0) + count
    profiles = []
    for (org_id, detector_id), count in sorted(detector_load.items()):
        if detector_id.startswith("noisy-"):
            spec = config.noisy_detector
            profiles.append(
                DetectorProfile(
                    org_id=org_id,
                    detector_id=detector_id,
                    window_days=7,
                    total_alerts=int(spec.alerts_per_day * 7),
                    alerts_per_day=spec.alerts_per_day,
                    share_of_org_alerts=count / org_totals[org_id],
                    avg_distinct_per_entity={},
                )
            )
        else:
            profiles.append(
                DetectorProfile(
                    org_id=org_id,
                    detector_id=detector_id,
                    window_days=7,
                    total_alerts=14,
                    alerts_per_day=2.0,
                    share_of_org_alerts=0.01,
                    avg_distinct_per_entity={},
                )
            )
    return profiles


def save_truth(truth: dict[str, str | None], path) -> None:
    with open(path, "w") as handle:
        handle.write(json.dumps({"schema_version": 1, "kind": "ground_truth"}) + "\n")
        for alert_id in sorted(truth):
            handle.write(
                json.dumps({"alert_id": alert_id, "incident": truth[alert_id]}, sort_keys=True) + "\n"
            )


def load_truth(path) -> dict[str, str | None]:
    truth: dict[str, str | None] = {}
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if set(obj) == {"schema_version", "kind"}:
                continue
            truth[obj["alert_id"]] = obj["incident"]
    return truth
