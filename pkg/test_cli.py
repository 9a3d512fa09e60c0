import json
from pathlib import Path

import pandas as pd
import pytest

import scenarios
from cli import main, run_scenario, scenario_view, validate_and_report
from config import ScenarioError, config_hash, load_config_file, parse_scenario
from dataset import RUN_FILES, load_manifest, load_view
from utils import TestbedError


@pytest.fixture
def baseline_run(tmp_path):
    out = tmp_path / "baseline"
    run_scenario(scenarios.baseline(3.0), out)
    return out


def test_run_writes_the_layout(baseline_run):
    for name in RUN_FILES + ("manifest.json",):
        assert (baseline_run / name).exists(), name
    manifest = load_manifest(baseline_run)
    assert manifest.config_hash == config_hash(scenarios.baseline(3.0))
    assert manifest.split["boundary"] == pytest.approx(2.1)
    assert manifest.views["train"].records + manifest.views["test"].records == 30
    assert not list(baseline_run.parent.glob(".baseline-*"))


def test_fresh_run_validates(baseline_run):
    ok, report, checks = validate_and_report(baseline_run)
    assert ok, report
    assert set(checks) >= {"checksums", "label completeness", "dedup invertibility"}
    assert "baseline" in report


def test_truncated_log_fails_checksum(baseline_run):
    path = baseline_run / "train" / "capture.jsonl"
    lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    path.write_text("".join(lines[:-1]), encoding="utf-8")
    ok, _, checks = validate_and_report(baseline_run)
    assert not ok
    assert not checks["checksums"]["ok"]
    assert checks["label completeness"]["ok"]


def test_unknown_attack_label_detected(baseline_run):
    path = baseline_run / "test" / "physical.csv"
    compressed = pd.read_csv(path)
    compressed.loc[0, "attack_id"] = 99
    compressed.to_csv(path, index=False)
    ok, _, checks = validate_and_report(baseline_run)
    assert not ok
    assert not checks["label completeness"]["ok"]
    assert any("99" in p for p in checks["label completeness"]["problems"])


def test_missing_file_is_a_layout_error(baseline_run):
    (baseline_run / "truth.csv").unlink()
    with pytest.raises(TestbedError):
        validate_and_report(baseline_run)


def test_same_seed_gives_identical_bytes(tmp_path):
    cfg = scenarios.console_legit()
    run_scenario(cfg, tmp_path / "a")
    run_scenario(cfg, tmp_path / "b")
    for name in RUN_FILES + ("manifest.json",):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_scenario_view_rejoins_both_views(baseline_run):
    view = scenario_view(baseline_run)
    assert len(view.physical) == 30
    assert view.physical["t"].is_monotonic_increasing
    assert view.capture and view.host


def test_main_run_validate_report_classify(tmp_path, capsys):
    scenario = tmp_path / "short.toml"
    scenario.write_text('name = "short"\nduration = 2.0\nseed = 3\n', encoding="utf-8")
    out = tmp_path / "short"
    assert main(["--quiet", "run", str(scenario), "--out", str(out)]) == 0
    assert parse_scenario(scenario).seed == 3
    assert main(["--quiet", "validate", str(out)]) == 0
    assert main(["--quiet", "report", str(out)]) == 0
    assert main(["--quiet", "classify", str(out), "--view", "train"]) == 0
    verdicts = pd.read_csv(out / "verdicts_train.csv")
    assert set(verdicts["verdict"]) == {"NORMAL"}
    assert len(load_view(out, "train")) == 14
    capsys.readouterr()


def test_main_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('duration = 5.0\ncolour = "red"\n', encoding="utf-8")
    assert main(["--quiet", "run", str(bad), "--out", str(tmp_path / "bad")]) == 1
    assert "colour" in capsys.readouterr().err
    assert not (tmp_path / "bad").exists()

    broken = tmp_path / "broken.toml"
    broken.write_text("duration = [\n", encoding="utf-8")
    assert main(["--quiet", "run", str(broken), "--out", str(tmp_path / "broken")]) == 1

    out = tmp_path / "run"
    run_scenario(scenarios.baseline(2.0), out)
    (out / "test" / "host.jsonl").write_text("", encoding="utf-8")
    assert main(["--quiet", "validate", str(out)]) == 2


def test_main_plan(tmp_path, capsys):
    grid = tmp_path / "grid.toml"
    grid.write_text('kinds = ["INTEGRITY_SCA", "DOS"]\nwaveform_kinds = ["STEP", "RAMP"]\n'
                    'magnitudes = [0.05]\nduration = 30.0\ngap = 0.5\n', encoding="utf-8")
    assert main(["--quiet", "plan", str(grid), "--limit", "3", "--seed", "1"]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert [entry["id"] for entry in plan] == [1, 2, 3]

    bad = tmp_path / "bad_grid.toml"
    bad.write_text("kinds = []\n", encoding="utf-8")
    assert main(["--quiet", "plan", str(bad)]) == 1

    broken = tmp_path / "broken_grid.toml"
    broken.write_text("kinds = [\n", encoding="utf-8")
    assert main(["--quiet", "plan", str(broken)]) == 1
    assert "broken_grid.toml" in capsys.readouterr().err
    with pytest.raises(ScenarioError):
        load_config_file(broken)


def test_bundled_scenario_files_parse():
    root = Path(__file__).parent / "scenario_files"
    scenario_paths = [p for p in root.glob("*.toml") if p.stem != "attack_grid"]
    assert scenario_paths
    for path in scenario_paths:
        assert parse_scenario(path).duration > 0
    assert main(["--quiet", "plan", str(root / "attack_grid.toml"), "--limit", "4"]) == 0


def test_report_layout(baseline_run):
    _, report, _ = validate_and_report(baseline_run)
    lines = report.splitlines()
    title = lines.index("CPS Security Dataset Report: baseline")
    assert set(lines[title + 1]) == {"="}
    checks = lines.index("QUALITY CHECKS")
    assert set(lines[checks + 1]) == {"-"}
    assert any(line.startswith("PASS  checksums") for line in lines)
