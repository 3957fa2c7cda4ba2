"""Figure rendering for batch reports.

Everything draws through the Agg backend straight to files; no display
server is assumed. Callers pass the already-computed stats objects, so the
renderers stay free of pipeline logic.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .entities import EntityCatalog
from .graph import CorrelationStats
from .tuning import GapReport, TimeDeltaStats

_HOURS = 3600.0


def fig_timedelta(stats: list[TimeDeltaStats], catalog: EntityCatalog, path) -> None:
    """Combined-population percentiles per entity with the current window marked."""
    rows = [r for r in stats if r.population == "combined"]
    fig, ax = plt.subplots(figsize=(10, 5))
    if rows:
        labels = [str(r.entity_type) for r in rows]
        x = range(len(rows))
        width = 0.2
        for i, p in enumerate((50, 90, 95, 99)):
            values = [r.percentile(p) / _HOURS for r in rows]
            ax.bar([xi + (i - 1.5) * width for xi in x], values, width, label=f"p{p}")
        windows = [catalog.window(r.entity_type).total_seconds() / _HOURS for r in rows]
        ax.scatter(list(x), windows, marker="_", s=400, color="black", label="current window", zorder=3)
        ax.set_xticks(list(x))
        ax.set_xticklabels(labels, rotation=45, ha="right")
    else:
        ax.text(0.5, 0.5, "no correlations in batch", ha="center", va="center", transform=ax.transAxes)
    ax.set_ylabel("hours")
    ax.set_title("Correlation time deltas vs entity windows")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fig_gap(report: GapReport, path, top: int = 10) -> None:
    """Top reject groups, most prevalent first."""
    entries = report.entries[:top]
    fig, ax = plt.subplots(figsize=(10, max(3, 0.5 * len(entries) + 1.5)))
    if entries:
        labels = [f"{e.stage} / {e.entity_type} / {e.detectors[0]}+{e.detectors[1]}" for e in entries]
        counts = [e.count for e in entries]
        positions = range(len(entries))
        ax.barh(list(positions), counts, color="tab:red")
        ax.set_yticks(list(positions))
        ax.set_yticklabels(labels, fontsize=8)
        ax.invert_yaxis()
    else:
        ax.text(0.5, 0.5, "no rejected correlations", ha="center", va="center", transform=ax.transAxes)
    ax.set_xlabel("rejected correlations")
    ax.set_title("Correlation gaps by stage, entity, and detector pair")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fig_incident_sizes(stats: CorrelationStats, path) -> None:
    """Histogram of incident sizes, singletons included."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    histogram = sorted(stats.incident_size_histogram.items())
    if histogram:
        sizes = [size for size, _ in histogram]
        counts = [count for _, count in histogram]
        ax.bar(sizes, counts, color="tab:blue")
        ax.set_xticks(sizes)
    else:
        ax.text(0.5, 0.5, "no incidents in batch", ha="center", va="center", transform=ax.transAxes)
    ax.set_xlabel("alerts per incident")
    ax.set_ylabel("incidents")
    ratio = stats.compression_ratio
    suffix = f" (compression {ratio:.1f}x)" if ratio else ""
    ax.set_title(f"Incident size distribution{suffix}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fig_bench(rows: list[dict], path) -> None:
    """Correlation-stage scaling curve on log-log axes."""
    fig, ax = plt.subplots(figsize=(8, 5))
    if rows:
        sizes = [row["alerts"] for row in rows]
        for stage in ("correlate", "graph", "total"):
            ax.plot(sizes, [row[f"{stage}_seconds"] for row in rows], marker="o", label=stage)
        reference = [rows[0]["total_seconds"] * size / sizes[0] for size in sizes]
        ax.plot(sizes, reference, linestyle="--", color="gray", label="linear reference")
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel("alerts")
    ax.set_ylabel("seconds")
    ax.set_title("Batch scaling")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
