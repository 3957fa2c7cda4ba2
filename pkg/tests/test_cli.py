import json
from datetime import datetime, timezone

import pytest

from alertgraph.cli import main
from alertgraph.store import CorrelationStore

NOW = "2024-03-01T00:00:00Z"

BATCH_CONFIG = {
    "seed": 5,
    "org_count": 2,
    "incidents_per_org": 12,
    "incident_size": [2, 6],
    "noise_alert_fraction": 0.2,
    "noisy_detector": {"alerts_per_day": 150, "entity_fanout": 5},
    "time_span": "24h",
}

CLEAN_CONFIG = {
    "seed": 9,
    "org_count": 2,
    "incidents_per_org": 10,
    "incident_size": [2, 5],
    "noise_alert_fraction": 0.0,
    "time_span": "24h",
}


def run_cli(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


def write_config(tmp_path, config, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return str(path)


def generate(tmp_path, config, subdir="batch"):
    out = tmp_path / subdir
    rc = run_cli(["generate", write_config(tmp_path, config), "--out", str(out)])
    assert rc == 0
    return out


def run_batch(gen_dir, out_dir, *extra):
    argv = [
        "run",
        str(gen_dir / "alerts.jsonl"),
        "--now",
        NOW,
        "--source-window",
        "24h",
        "--target-window",
        "24h",
        "--ti",
        str(gen_dir / "ti.csv"),
        "--profiles",
        str(gen_dir / "profiles.jsonl"),
        "--out",
        str(out_dir),
        *extra,
    ]
    return run_cli(argv)


@pytest.fixture(scope="module")
def noisy_batch(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("noisy")
    return generate(tmp, BATCH_CONFIG)


ARTIFACTS = (
    "incidents.jsonl",
    "correlations.jsonl",
    "rejected.jsonl",
    "stats.json",
    "timedelta_stats.json",
    "gap_report.json",
)


# --- usage and config errors ---


def test_no_command_is_a_usage_error(capsys):
    assert run_cli([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_a_usage_error(capsys):
    assert run_cli(["run", "alerts.jsonl", "--now", NOW, "--frobnicate"]) == 1


def test_missing_required_flag_is_a_usage_error():
    assert run_cli(["run", "alerts.jsonl"]) == 1  # --now is mandatory


def test_bad_generator_config_exits_schema(tmp_path, capsys):
    path = write_config(tmp_path, {"seeed": 1})
    assert run_cli(["generate", path]) == 2
    assert "unknown config fields" in capsys.readouterr().err
    path = write_config(tmp_path, {"seed": True}, name="bool.json")
    assert run_cli(["generate", path]) == 2


def test_missing_config_file_exits_schema(tmp_path):
    assert run_cli(["generate", str(tmp_path / "absent.json")]) == 2


def test_bad_now_exits_schema(tmp_path):
    assert run_cli(["run", str(tmp_path / "x.jsonl"), "--now", "yesterday"]) == 2


def test_inverted_windows_exit_schema(noisy_batch, tmp_path):
    rc = run_cli(
        [
            "run",
            str(noisy_batch / "alerts.jsonl"),
            "--now",
            NOW,
            "--source-window",
            "72h",
            "--target-window",
            "35m",
            "--out",
            str(tmp_path / "out"),
        ]
    )
    assert rc == 2


def test_profile_window_days_must_be_positive(noisy_batch, tmp_path):
    rc = run_cli(
        [
            "profile",
            str(noisy_batch / "alerts.jsonl"),
            "--now",
            NOW,
            "--window-days",
            "0",
            "--out",
            str(tmp_path / "p.jsonl"),
        ]
    )
    assert rc == 2


def test_bad_thresholds_exit_schema(noisy_batch, tmp_path):
    bad = tmp_path / "thresholds.json"
    bad.write_text(json.dumps({"max_share": 0.05, "max_wat": 1}))
    rc = run_batch(noisy_batch, tmp_path / "out", "--thresholds", str(bad))
    assert rc == 2


# --- generate ---


def test_generate_writes_batch_files(noisy_batch):
    for name in ("alerts.jsonl", "truth.jsonl", "ti.csv", "profiles.jsonl"):
        assert (noisy_batch / name).is_file(), name


def test_generate_is_deterministic(tmp_path):
    one = generate(tmp_path, BATCH_CONFIG, subdir="one")
    two = generate(tmp_path, BATCH_CONFIG, subdir="two")
    for name in ("alerts.jsonl", "truth.jsonl", "ti.csv", "profiles.jsonl"):
        assert (one / name).read_bytes() == (two / name).read_bytes(), name


def test_generate_prints_summary(tmp_path, capsys):
    generate(tmp_path, CLEAN_CONFIG)
    out = capsys.readouterr().out
    assert "generated" in out and "planted" in out


# --- profile ---


def test_profile_writes_rows(noisy_batch, tmp_path, capsys):
    out = tmp_path / "profiles.jsonl"
    rc = run_cli(["profile", str(noisy_batch / "alerts.jsonl"), "--now", NOW, "--out", str(out)])
    assert rc == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert rows[0]["kind"] == "detector_profiles"
    detectors = {(row["org_id"], row["detector_id"]) for row in rows[1:]}
    assert ("org-000", "noisy-000") in detectors
    assert "profiled" in capsys.readouterr().out


# --- run ---


def test_run_produces_artifacts(noisy_batch, tmp_path, capsys):
    out = tmp_path / "out"
    assert run_batch(noisy_batch, out) == 0
    for name in ARTIFACTS:
        assert (out / name).is_file(), name
    summary = capsys.readouterr().out
    assert "correlations" in summary and "incidents" in summary
    stats = json.loads((out / "stats.json").read_text())
    counts = stats["stage_counts"]
    pre_mst = sum(counts[stage] for stage in ("time_window", "threat_intel", "black_hole", "deduplicated"))
    assert counts["candidates"] == counts["final"] + pre_mst
    assert counts["final"] == counts["mst_kept"] + counts["mst_pruned"]
    assert counts["candidates"] == counts["mst_kept"] + pre_mst + counts["mst_pruned"]
    assert stats["alert_count"] > 0
    assert stats["success"] is True


def test_run_artifacts_are_deterministic(noisy_batch, tmp_path):
    one = tmp_path / "one"
    two = tmp_path / "two"
    assert run_batch(noisy_batch, one) == 0
    assert run_batch(noisy_batch, two) == 0
    # stats.json embeds wall-clock runtimes; everything else is byte-stable
    for name in ARTIFACTS:
        if name == "stats.json":
            continue
        assert (one / name).read_bytes() == (two / name).read_bytes(), name


def test_run_parallel_matches_serial(noisy_batch, tmp_path):
    serial = tmp_path / "serial"
    parallel = tmp_path / "parallel"
    assert run_batch(noisy_batch, serial) == 0
    assert run_batch(noisy_batch, parallel, "--max-workers", "4") == 0
    for name in ARTIFACTS:
        if name == "stats.json":
            continue
        assert (serial / name).read_bytes() == (parallel / name).read_bytes(), name


def test_run_with_store_dedups_rerun(noisy_batch, tmp_path):
    store_path = str(tmp_path / "links.db")
    first_out = tmp_path / "first"
    second_out = tmp_path / "second"
    assert run_batch(noisy_batch, first_out, "--store", store_path) == 0
    first_finals = [
        line for line in (first_out / "correlations.jsonl").read_text().splitlines()[1:] if line
    ]
    assert first_finals, "expected correlations on the first run"
    assert run_batch(noisy_batch, second_out, "--store", store_path) == 0
    second_finals = [
        line for line in (second_out / "correlations.jsonl").read_text().splitlines()[1:] if line
    ]
    assert second_finals == []
    rejected = [json.loads(line) for line in (second_out / "rejected.jsonl").read_text().splitlines()[1:]]
    dedup = [row for row in rejected if row["stage"] == "deduplicated"]
    assert len(dedup) >= len(first_finals)


def test_run_locked_store_exits_3(noisy_batch, tmp_path):
    store_path = tmp_path / "links.db"
    holder = CorrelationStore(store_path)
    try:
        rc = run_batch(noisy_batch, tmp_path / "out", "--store", str(store_path))
    finally:
        holder.close()
    assert rc == 3


def test_run_clean_batch_recovers_planted_incidents(tmp_path):
    gen_dir = generate(tmp_path, CLEAN_CONFIG)
    out = tmp_path / "out"
    assert run_batch(gen_dir, out) == 0

    truth_groups: dict[str, set] = {}
    for line in (gen_dir / "truth.jsonl").read_text().splitlines()[1:]:
        row = json.loads(line)
        if row["incident"]:
            truth_groups.setdefault(row["incident"], set()).add(row["alert_id"])

    found = {
        frozenset(row["alert_ids"])
        for row in map(json.loads, (out / "incidents.jsonl").read_text().splitlines()[1:])
        if row["alert_count"] > 1
    }
    assert found == {frozenset(members) for members in truth_groups.values()}


def test_run_gap_report_flags_noisy_detector(noisy_batch, tmp_path):
    out = tmp_path / "out"
    assert run_batch(noisy_batch, out) == 0
    doc = json.loads((out / "gap_report.json").read_text())
    black_hole = [e for e in doc["entries"] if e["stage"] == "black_hole"]
    assert black_hole, "noisy detector should produce black-hole rejects"
    assert any("noisy-000" in entry["detectors"] or "noisy-001" in entry["detectors"] for entry in black_hole)


# --- report ---


def test_report_renders_figures(noisy_batch, tmp_path, capsys):
    out = tmp_path / "out"
    assert run_batch(noisy_batch, out) == 0
    gap_before = (out / "gap_report.json").read_bytes()
    assert run_cli(["report", str(out)]) == 0
    for name in ("timedelta_stats.csv", "timedelta.png", "gaps.png", "incident_sizes.png"):
        assert (out / name).is_file(), name
    # same policy, same inputs: the report pass reproduces the run's documents
    assert (out / "gap_report.json").read_bytes() == gap_before
    assert "rendered" in capsys.readouterr().out


def test_report_missing_batch_dir_exits_schema(tmp_path):
    assert run_cli(["report", str(tmp_path / "nowhere")]) == 2


# --- bench ---


def test_bench_small_sizes(tmp_path, capsys):
    out = tmp_path / "bench"
    assert run_cli(["bench", "--sizes", "200,400", "--out", str(out)]) == 0
    lines = (out / "bench.csv").read_text().splitlines()
    assert lines[0].startswith("alerts,")
    assert len(lines) == 3
    assert (out / "bench.png").is_file()
    assert "correlate_seconds" in capsys.readouterr().out


def test_bench_rejects_bad_sizes(tmp_path):
    assert run_cli(["bench", "--sizes", "400,200", "--out", str(tmp_path)]) == 2
    assert run_cli(["bench", "--sizes", "50", "--out", str(tmp_path)]) == 2
    assert run_cli(["bench", "--sizes", "ten", "--out", str(tmp_path)]) == 2
