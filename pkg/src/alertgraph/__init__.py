"""Batch correlation engine for security alerts.

Alerts sharing evidence entities (hashes, IPs, users, sessions, ...) are
joined into correlations, filtered for time windows, threat-intel verdicts,
and black-hole safety, then compressed into incident graphs. See the CLI in
:mod:`alertgraph.cli` for the operator workflow.
"""

from .correlator import (
    Correlation,
    CorrelationBatchResult,
    RejectedCorrelation,
    RejectStage,
    run_correlation_stage,
)
from .entities import EntityCatalog, EntityType, EntityValue, default_catalog
from .errors import AlertGraphError
from .generator import GeneratorConfig, generate_synthetic_alerts
from .graph import assign_incidents, build_graph, mine_stats, spanning_forest
from .profiler import DetectorProfile, SafetyThresholds, profile_detectors
from .store import open_store
from .telemetry import Alert, AlertTable, load_alerts, window_slice
from .ti import TiRecord, TiStore, load_ti
from .tuning import WindowPolicy, gap_report, suggest_time_windows, time_delta_stats

__version__ = "0.1.0"

__all__ = [
    "Alert",
    "AlertGraphError",
    "AlertTable",
    "Correlation",
    "CorrelationBatchResult",
    "DetectorProfile",
    "EntityCatalog",
    "EntityType",
    "EntityValue",
    "GeneratorConfig",
    "RejectStage",
    "RejectedCorrelation",
    "SafetyThresholds",
    "TiRecord",
    "TiStore",
    "WindowPolicy",
    "__version__",
    "assign_incidents",
    "build_graph",
    "default_catalog",
    "gap_report",
    "generate_synthetic_alerts",
    "load_alerts",
    "load_ti",
    "mine_stats",
    "open_store",
    "profile_detectors",
    "run_correlation_stage",
    "spanning_forest",
    "suggest_time_windows",
    "time_delta_stats",
    "window_slice",
]
