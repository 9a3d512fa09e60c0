"""
Dataset quality on a full one-hour run with a planned attack catalog.
"""

import pandas as pd
import pytest

import scenarios
from cli import run_scenario, scenario_view, validate_and_report
from dataset import (PHYSICAL_COLUMNS, RUN_FILES, VIEWS, deduplicate, expand, load_logs,
                     load_manifest, load_view, merge_logs)


@pytest.fixture(scope="module")
def quality_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("quality")
    cfg = scenarios.quality_suite()
    run_scenario(cfg, root / "first")
    run_scenario(cfg, root / "second")
    return cfg, root / "first", root / "second"


def test_plan_has_ten_attacks_one_zero_day(quality_runs):
    _, run_dir, _ = quality_runs
    manifest = load_manifest(run_dir)
    assert len(manifest.attacks) == 10
    assert len(manifest.zero_day_ids) == 1
    zero_day = next(a for a in manifest.attacks if a["id"] in manifest.zero_day_ids)
    assert zero_day["window"][0] >= manifest.split["boundary"]


def test_dataset_validates(quality_runs):
    _, run_dir, _ = quality_runs
    ok, report, _ = validate_and_report(run_dir)
    assert ok, report


def test_every_record_is_labelled(quality_runs):
    _, run_dir, _ = quality_runs
    manifest = load_manifest(run_dir)
    ids = {0} | {a["id"] for a in manifest.attacks}
    total = 0
    for view in VIEWS:
        records = load_view(run_dir, view, manifest)
        assert list(records.columns) == PHYSICAL_COLUMNS
        assert records["attack_id"].notna().all() and records["mode"].notna().all()
        assert set(records["attack_id"]) <= ids
        total += len(records)
    assert total == 600
    truth = pd.read_csv(run_dir / "truth.csv")
    assert set(truth["attack_id"]) - {0}, "no attacked samples"


def test_zero_day_only_in_test(quality_runs):
    _, run_dir, _ = quality_runs
    manifest = load_manifest(run_dir)
    zero_day = set(manifest.zero_day_ids)
    train = load_view(run_dir, "train", manifest)
    capture, host = load_logs(run_dir, "train")
    assert not zero_day & set(train["attack_id"])
    assert not zero_day & {r["attack_id"] for r in capture + host}
    test = load_view(run_dir, "test", manifest)
    assert zero_day <= set(test["attack_id"])


def test_dedup_is_lossless(quality_runs):
    cfg, run_dir, _ = quality_runs
    manifest = load_manifest(run_dir)
    for view in VIEWS:
        records = load_view(run_dir, view, manifest)
        compressed, expansion = deduplicate(records, cfg.dedup_eps)
        pd.testing.assert_frame_equal(expand(compressed, expansion), records)


def test_merged_timeline_is_monotone(quality_runs):
    _, run_dir, _ = quality_runs
    manifest = load_manifest(run_dir)
    view = scenario_view(run_dir)
    merged = merge_logs(view.physical, view.capture, view.host, horizon=manifest.duration)
    times = [e["ts"] for e in merged]
    assert times == sorted(times)
    assert {e["source"] for e in merged} == {"PHYSICAL", "NETWORK", "HOST"}


def test_same_seed_is_byte_identical(quality_runs):
    _, first, second = quality_runs
    for name in RUN_FILES + ("manifest.json",):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
