"""Command-line surface for the correlation engine.

Subcommands: generate (synthetic batches), profile (detector profiling),
run (one correlation batch end to end, with artifacts), report (re-derive
tuning documents and render figures for a finished batch), and bench
(scaling measurements).

Exit codes are a contract: 0 success, 1 usage, 2 schema or config problem,
3 store unavailable or corrupt, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from datetime import datetime, timedelta

from .correlator import Correlation, RejectedCorrelation, RejectStage, run_correlation_stage
from .entities import EntityCatalog, default_catalog, parse_entity_type
from .errors import (
    AlertGraphError,
    ConfigError,
    CorruptStore,
    InvalidWindow,
    ParseError,
    SchemaError,
    StoreUnavailable,
)
from .generator import GeneratorConfig, generate_synthetic_alerts, save_truth
from .graph import CorrelationStats, assign_incidents, build_graph, incident_rows, mine_stats, spanning_forest
from .profiler import SafetyThresholds, load_profiles, profile_detectors, save_profiles
from .store import open_store
from .telemetry import (
    AlertTable,
    format_timestamp,
    load_alerts,
    parse_duration,
    parse_timestamp,
    save_alerts,
    window_slice,
)
from .ti import TiStore, load_ti, save_ti
from .tuning import (
    WindowPolicy,
    gap_report,
    gap_report_from_rows,
    stats_doc,
    time_delta_stats,
    write_stats_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SCHEMA = 2
EXIT_STORE = 3
EXIT_INTERNAL = 4

log = logging.getLogger("alertgraph")


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the exit-code contract reserves 2
    # for schema problems, so usage errors exit 1 instead.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="alertgraph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_gen = sub.add_parser("generate", help="generate a synthetic alert batch with ground truth")
    p_gen.add_argument("config", help="generator config (JSON)")
    p_gen.add_argument("--out", default=".", help="output directory (default: current)")

    p_prof = sub.add_parser("profile", help="profile detectors over an alert history")
    p_prof.add_argument("alerts", nargs="+", help="alert files (JSONL or CSV)")
    p_prof.add_argument("--now", required=True, help="profiling instant, RFC 3339")
    p_prof.add_argument("--window-days", type=int, default=7, help="profiling window in days (default 7)")
    p_prof.add_argument("--format", choices=("jsonl", "csv"), default="jsonl", help="input format")
    p_prof.add_argument("--out", default="profiles.jsonl", help="output path")

    p_run = sub.add_parser("run", help="run one correlation batch end to end")
    p_run.add_argument("alerts", nargs="+", help="alert files (JSONL or CSV)")
    p_run.add_argument("--now", required=True, help="batch instant, RFC 3339 (never the wall clock)")
    p_run.add_argument("--source-window", default="35m", help="new-alert slice (default 35m)")
    p_run.add_argument("--target-window", default="72h", help="historical slice (default 72h)")
    p_run.add_argument("--ti", help="threat-intel feed (CSV)")
    p_run.add_argument("--profiles", help="detector profiles (JSONL); computed from input when omitted")
    p_run.add_argument("--store", help="correlation store path; omit for a stateless run")
    p_run.add_argument("--catalog", help="entity catalog override (JSON)")
    p_run.add_argument("--thresholds", help="safety threshold override (JSON)")
    p_run.add_argument("--format", choices=("jsonl", "csv"), default="jsonl", help="input format")
    p_run.add_argument("--strict", action="store_true", help="fail on malformed input rows")
    p_run.add_argument("--max-workers", type=int, default=1, help="per-org parallelism (default serial)")
    p_run.add_argument("--batch-id", help="override the derived batch id")
    p_run.add_argument("--percentile", type=int, choices=(50, 90, 95, 99), default=99)
    p_run.add_argument("--slack-factor", type=float, default=1.2)
    p_run.add_argument("--out", default="out", help="artifact directory (default: out)")

    p_rep = sub.add_parser("report", help="re-derive tuning reports and render figures for a batch")
    p_rep.add_argument("batch_dir", help="artifact directory written by run")
    p_rep.add_argument("--catalog", help="entity catalog override (JSON)")
    p_rep.add_argument("--percentile", type=int, choices=(50, 90, 95, 99), default=99)
    p_rep.add_argument("--slack-factor", type=float, default=1.2)

    p_bench = sub.add_parser("bench", help="measure correlation scaling on synthetic batches")
    p_bench.add_argument("--sizes", default="10000,100000,1000000", help="comma-separated alert counts, ascending")
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", default="bench", help="output directory")

    return parser


# -- shared helpers --------------------------------------------------------


def _write_jsonl(path, kind: str, rows) -> None:
    with open(path, "w") as handle:
        handle.write(json.dumps({"schema_version": 1, "kind": kind}, sort_keys=True) + "\n")
        for row in rows:
            handle.write(json.dumps(row, sort_keys=True) + "\n")


def _write_doc(path, doc: dict) -> None:
    with open(path, "w") as handle:
        handle.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _read_jsonl(path) -> list[dict]:
    rows = []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if set(obj) == {"schema_version", "kind"}:
                continue
            rows.append(obj)
    return rows


def _load_catalog(path: str | None) -> EntityCatalog:
    if path:
        return EntityCatalog.from_file(path)
    return EntityCatalog(default_catalog())


def _load_thresholds(path: str | None) -> SafetyThresholds:
    if not path:
        return SafetyThresholds()
    with open(path) as handle:
        try:
            raw = json.load(handle)
        except ValueError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    known = {"max_share", "max_per_day", "max_avg_distinct_default", "max_avg_distinct_high"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown threshold fields: {sorted(unknown)}")
    return SafetyThresholds(**raw)


def _load_tables(paths, fmt: str, strict: bool) -> AlertTable:
    alerts = []
    for path in paths:
        report = load_alerts(path, fmt=fmt, strict=strict)
        for error in report.errors:
            log.warning("%s: row %d skipped: %s", path, error.row, error.message)
        alerts.extend(report.table)
    return AlertTable(alerts)


def _derive_batch_id(now: datetime, paths, source_window: timedelta, target_window: timedelta) -> str:
    digest = hashlib.sha256()
    digest.update(format_timestamp(now).encode())
    digest.update(f"|{int(source_window.total_seconds())}|{int(target_window.total_seconds())}".encode())
    for path in sorted(paths):
        digest.update(b"|")
        with open(path, "rb") as handle:
            while chunk := handle.read(1 << 20):
                digest.update(chunk)
    return digest.hexdigest()[:16]


# -- commands --------------------------------------------------------------


def cmd_generate(args) -> int:
    config = GeneratorConfig.from_file(args.config)
    batch = generate_synthetic_alerts(config)
    os.makedirs(args.out, exist_ok=True)
    save_alerts(batch.table, os.path.join(args.out, "alerts.jsonl"))
    save_truth(batch.truth, os.path.join(args.out, "truth.jsonl"))
    save_ti(batch.ti_records, os.path.join(args.out, "ti.csv"))
    save_profiles(batch.profiles, os.path.join(args.out, "profiles.jsonl"))
    planted = sum(1 for label in batch.truth.values() if label)
    print(
        f"generated {len(batch.table)} alerts ({planted} in planted incidents) into {args.out}"
    )
    return EXIT_OK


def cmd_profile(args) -> int:
    if args.window_days < 1:
        raise ConfigError(f"--window-days must be >= 1, got {args.window_days}")
    now = parse_timestamp(args.now)
    table = _load_tables(args.alerts, args.format, strict=False)
    profiles = profile_detectors(table, now, window_days=args.window_days)
    save_profiles(profiles, args.out)
    print(f"profiled {len(profiles)} detectors into {args.out}")
    return EXIT_OK


def _final_row(c: Correlation, labels: dict[str, str], detectors: dict[str, str]) -> dict:
    return {
        "org_id": c.org_id,
        "alert_a": c.alert_a,
        "alert_b": c.alert_b,
        "entity_type": str(c.entity_type),
        "entity_value": c.entity_value,
        "priority": c.priority,
        "time_delta_seconds": int(c.time_delta.total_seconds()),
        "incident_id": labels[c.alert_a],
        "detector_a": detectors.get(c.alert_a, "unknown"),
        "detector_b": detectors.get(c.alert_b, "unknown"),
    }


def _reject_row(r: RejectedCorrelation, detectors: dict[str, str]) -> dict:
    c = r.candidate
    return {
        "org_id": c.org_id,
        "alert_a": c.alert_a,
        "alert_b": c.alert_b,
        "entity_type": str(c.entity_type),
        "entity_value": c.entity_value,
        "priority": c.priority,
        "time_delta_seconds": int(c.time_delta.total_seconds()),
        "stage": str(r.stage),
        "detail": r.detail,
        "detector_a": detectors.get(c.alert_a, "unknown"),
        "detector_b": detectors.get(c.alert_b, "unknown"),
    }


def cmd_run(args) -> int:
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    now = parse_timestamp(args.now)
    source_window = parse_duration(args.source_window)
    target_window = parse_duration(args.target_window)
    catalog = _load_catalog(args.catalog)
    thresholds = _load_thresholds(args.thresholds)
    policy = WindowPolicy(percentile=args.percentile, slack_factor=args.slack_factor)

    table = _load_tables(args.alerts, args.format, args.strict)
    ti_store = load_ti(args.ti) if args.ti else TiStore([])
    timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    source, target = window_slice(table, now, source_window, target_window)
    if args.profiles:
        profiles = load_profiles(args.profiles)
    else:
        profiles = profile_detectors(table, now)
    timings["profile"] = time.perf_counter() - t0

    batch_id = args.batch_id or _derive_batch_id(now, args.alerts, source_window, target_window)
    store = open_store(args.store) if args.store else None
    try:
        t0 = time.perf_counter()
        result = run_correlation_stage(
            source,
            target,
            catalog,
            ti_store,
            profiles,
            store,
            now,
            thresholds,
            max_workers=args.max_workers,
        )
        timings["correlate"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        incident_graph = build_graph(result.final, target, include_isolated=True)
        forest, pruned = spanning_forest(incident_graph)
        assignment = assign_incidents(incident_graph)
        timings["graph"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        counts = dict(result.counts)
        counts["mst_pruned"] = len(pruned)
        counts["mst_kept"] = len(forest)
        stats = mine_stats(result, incident_graph, forest, assignment, timings, batch_id=batch_id)
        stats.stage_counts = counts
        all_rejects = list(result.rejected) + pruned
        all_rejects.sort(key=RejectedCorrelation.sort_key)
        detectors = {alert.alert_id: alert.detector_id for alert in table}
        td_stats = time_delta_stats(result.final, result.rejects_for(RejectStage.TIME_WINDOW))
        gaps = gap_report(all_rejects, detectors)
        incidents = incident_rows(incident_graph, forest, assignment)
        timings["reports"] = time.perf_counter() - t0
        stats.stage_runtimes = {name: round(secs, 6) for name, secs in timings.items()}

        os.makedirs(args.out, exist_ok=True)
        staging = tempfile.mkdtemp(prefix=".stage-", dir=args.out)
        try:
            _write_jsonl(os.path.join(staging, "incidents.jsonl"), "incidents", incidents)
            _write_jsonl(
                os.path.join(staging, "correlations.jsonl"),
                "correlations",
                [_final_row(c, assignment.labels, detectors) for c in result.final],
            )
            _write_jsonl(
                os.path.join(staging, "rejected.jsonl"),
                "rejected_correlations",
                [_reject_row(r, detectors) for r in all_rejects],
            )
            _write_doc(os.path.join(staging, "stats.json"), stats.to_doc())
            _write_doc(os.path.join(staging, "timedelta_stats.json"), stats_doc(td_stats, catalog, policy))
            _write_doc(os.path.join(staging, "gap_report.json"), gaps.to_doc())
            for name in (
                "incidents.jsonl",
                "correlations.jsonl",
                "rejected.jsonl",
                "stats.json",
                "timedelta_stats.json",
                "gap_report.json",
            ):
                os.replace(os.path.join(staging, name), os.path.join(args.out, name))
        finally:
            for leftover in os.listdir(staging):
                os.unlink(os.path.join(staging, leftover))
            os.rmdir(staging)

        # Commit last: a failed commit exits 3 with artifacts intact, and the
        # rerun converges because the batch never became visible.
        if store is not None:
            receipt = store.commit_batch(batch_id, result.final, now)
            if receipt.already_committed:
                log.info("batch %s already committed; store unchanged", batch_id)
    finally:
        if store is not None:
            store.close()

    print(
        f"batch {batch_id}: {len(target)} alerts, {len(result.final)} correlations, "
        f"{stats.incident_count} incidents, {counts['candidates']} candidates -> {args.out}"
    )
    return EXIT_OK


def _correlation_from_row(row: dict, source: str) -> Correlation:
    etype = parse_entity_type(row["entity_type"])
    if etype is None:
        raise SchemaError(f"unknown entity type {row['entity_type']!r} in {source}")
    return Correlation(
        org_id=row["org_id"],
        alert_a=row["alert_a"],
        alert_b=row["alert_b"],
        entity_type=etype,
        entity_value=row["entity_value"],
        time_delta=timedelta(seconds=row["time_delta_seconds"]),
        priority=row["priority"],
    )


def cmd_report(args) -> int:
    from . import figures

    catalog = _load_catalog(args.catalog)
    policy = WindowPolicy(percentile=args.percentile, slack_factor=args.slack_factor)
    batch_dir = args.batch_dir
    final_rows = _read_jsonl(os.path.join(batch_dir, "correlations.jsonl"))
    reject_rows = _read_jsonl(os.path.join(batch_dir, "rejected.jsonl"))

    finals = [_correlation_from_row(row, "correlations.jsonl") for row in final_rows]
    tw_rejects = [
        RejectedCorrelation(
            _correlation_from_row(row, "rejected.jsonl"), RejectStage.TIME_WINDOW, row.get("detail", "")
        )
        for row in reject_rows
        if row["stage"] == "time_window"
    ]

    td_stats = time_delta_stats(finals, tw_rejects)
    gaps = gap_report_from_rows(reject_rows)
    _write_doc(os.path.join(batch_dir, "timedelta_stats.json"), stats_doc(td_stats, catalog, policy))
    _write_doc(os.path.join(batch_dir, "gap_report.json"), gaps.to_doc())
    write_stats_csv(td_stats, os.path.join(batch_dir, "timedelta_stats.csv"))
    figures.fig_timedelta(td_stats, catalog, os.path.join(batch_dir, "timedelta.png"))
    figures.fig_gap(gaps, os.path.join(batch_dir, "gaps.png"))

    stats_path = os.path.join(batch_dir, "stats.json")
    if os.path.exists(stats_path):
        with open(stats_path) as handle:
            doc = json.load(handle)
        stats = CorrelationStats(
            batch_id=doc.get("batch_id", ""),
            org_count=doc.get("org_count", 0),
            alert_count=doc.get("alert_count", 0),
            correlations_per_entity=doc.get("correlations_per_entity", {}),
            correlations_per_detector_kind=doc.get("correlations_per_detector_kind", {}),
            incident_count=doc.get("incident_count", 0),
            incident_size_histogram={int(k): v for k, v in doc.get("incident_size_histogram", {}).items()},
            singleton_count=doc.get("singleton_count", 0),
            singleton_ratio=doc.get("singleton_ratio", 0.0),
            edges_before=doc.get("edges_before", 0),
            edges_after=doc.get("edges_after", 0),
            compression_ratio=doc.get("compression_ratio"),
            stage_counts=doc.get("stage_counts", {}),
        )
        figures.fig_incident_sizes(stats, os.path.join(batch_dir, "incident_sizes.png"))

    print(f"report rendered into {batch_dir} (timedelta_stats.csv, timedelta.png, gaps.png)")
    return EXIT_OK


def run_bench(sizes: list[int], seed: int = 0, noise: float = 0.2, incident_size: int = 10) -> list[dict]:
    """Generate and correlate batches at each size; returns one timing row per size.

    The source window equals the span, so every pair is eligible and the
    measured cost tracks the candidate volume rather than the slice width.
    """
    if sizes != sorted(sizes) or len(set(sizes)) != len(sizes):
        raise ConfigError(f"sizes must be strictly ascending, got {sizes}")
    if any(size < 100 for size in sizes):
        raise ConfigError("bench sizes below 100 alerts are noise; use the unit tests instead")
    catalog = EntityCatalog(default_catalog())
    thresholds = SafetyThresholds()
    span = timedelta(hours=24)
    rows = []
    for size in sizes:
        org_count = max(1, size // 10_000)
        per_group = incident_size / (1 - noise)
        incidents_per_org = max(1, round(size / (per_group * org_count)))
        config = GeneratorConfig(
            seed=seed,
            org_count=org_count,
            incidents_per_org=incidents_per_org,
            incident_size=(incident_size, incident_size),
            noise_alert_fraction=noise,
            time_span=span,
        )
        t0 = time.perf_counter()
        batch = generate_synthetic_alerts(config, catalog)
        gen_seconds = time.perf_counter() - t0
        now = config.end_time
        profiles = {p.key(): p for p in batch.profiles}
        ti_store = TiStore(batch.ti_records)

        t0 = time.perf_counter()
        source, target = window_slice(batch.table, now, span, span)
        result = run_correlation_stage(
            source, target, catalog, ti_store, profiles, None, now, thresholds
        )
        correlate_seconds = time.perf_counter() - t0

        t0 = time.perf_counter()
        incident_graph = build_graph(result.final, target, include_isolated=True)
        forest, _pruned = spanning_forest(incident_graph)
        assignment = assign_incidents(incident_graph)
        stats = mine_stats(result, incident_graph, forest, assignment)
        graph_seconds = time.perf_counter() - t0

        rows.append(
            {
                "alerts": len(batch.table),
                "gen_seconds": round(gen_seconds, 4),
                "correlate_seconds": round(correlate_seconds, 4),
                "graph_seconds": round(graph_seconds, 4),
                "total_seconds": round(correlate_seconds + graph_seconds, 4),
                "candidates": result.counts["candidates"],
                "finals": len(result.final),
                "incidents": stats.incident_count,
            }
        )
        log.info("bench %d alerts: correlate %.2fs graph %.2fs", len(batch.table), correlate_seconds, graph_seconds)
    return rows


def cmd_bench(args) -> int:
    from . import figures

    try:
        sizes = [int(part) for part in args.sizes.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"--sizes must be comma-separated integers, got {args.sizes!r}") from None
    rows = run_bench(sizes, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    fields = ["alerts", "gen_seconds", "correlate_seconds", "graph_seconds", "total_seconds", "candidates", "finals", "incidents"]
    with open(os.path.join(args.out, "bench.csv"), "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    figures.fig_bench(rows, os.path.join(args.out, "bench.png"))
    header = "  ".join(f"{name:>18}" for name in fields)
    print(header)
    for row in rows:
        print("  ".join(f"{row[name]:>18}" for name in fields))
    return EXIT_OK


# -- entry point -----------------------------------------------------------


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.DEBUG if os.environ.get("ALERTGRAPH_VERBOSE") else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "generate": cmd_generate,
        "profile": cmd_profile,
        "run": cmd_run,
        "report": cmd_report,
        "bench": cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except (StoreUnavailable, CorruptStore) as exc:
        print(f"alertgraph: store error: {exc}", file=sys.stderr)
        return EXIT_STORE
    except (SchemaError, ConfigError, ParseError, InvalidWindow) as exc:
        print(f"alertgraph: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except FileNotFoundError as exc:
        print(f"alertgraph: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except AlertGraphError as exc:
        print(f"alertgraph: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - defensive
        log.exception("internal error")
        print(f"alertgraph: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
