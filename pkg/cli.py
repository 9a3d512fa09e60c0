"""
Command-line entry point of the testbed.

    python cli.py run scenario_files/baseline.toml --out out/baseline
    python cli.py validate out/baseline
    python cli.py report out/baseline
    python cli.py classify out/baseline --view test
    python cli.py plan scenario_files/attack_grid.toml --limit 10
    python cli.py matrix out/legit out/compromised out/spoofed --out matrix.json
"""

import argparse
import json
import logging
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pandas as pd
from pydantic import ValidationError

from attacks import AttackGrid, plan_attacks
from config import (ScenarioConfig, ScenarioError, config_hash, emit_scenario, load_config_file,
                    parse_scenario)
from dataset import (RUN_FILES, VIEWS, LayoutError, Manifest, balance_report, expand,
                     expanded_checksum, load_logs, load_manifest, load_view, write_dataset)
from netsim import capture_sort_key
from hostlog import host_sort_key
from oracle import ControllerModel, PlantModel, ScenarioView, classify_records, decision_table, matrix_rows
from simulator import simulate
from utils import TestbedError, VisualizationUtils, sha256_file

logger = logging.getLogger(__name__)


def run_scenario(cfg: ScenarioConfig, out_dir) -> Manifest:
    """
    Simulate a scenario and write its dataset directory.

    Output is staged in a sibling temporary directory and moved into place
    only when complete; on any error nothing is left behind.
    """
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}-", dir=out_dir.parent))
    try:
        result = simulate(cfg)
        manifest = write_dataset(result, staging, emit_scenario(cfg), config_hash(cfg))
        if out_dir.exists():
            shutil.rmtree(out_dir)
        staging.rename(out_dir)
    except Exception:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    logger.info("✅ Dataset %s written to %s", cfg.name, out_dir)
    return manifest


def _check(problems: List[str]) -> Dict:
    return {"ok": not problems, "problems": problems}


def validate_and_report(run_dir) -> Tuple[bool, str, Dict[str, Dict]]:
    """
    Quality checks of a dataset directory plus its balance report.

    Returns:
        (all checks passed, printable report, per-check results)

    Raises:
        LayoutError: files of the layout are missing
    """
    run_dir = Path(run_dir)
    missing = [name for name in RUN_FILES + ("manifest.json",) if not (run_dir / name).exists()]
    if missing:
        raise LayoutError(f"{run_dir}: missing {', '.join(missing)}")
    manifest = load_manifest(run_dir)
    known_ids = {0} | {entry["id"] for entry in manifest.attacks}
    zero_day = set(manifest.zero_day_ids)
    modes = {"NORMAL", "F1", "F2", "F12"}

    checksum_problems = [f"{name}: checksum mismatch" for name in RUN_FILES
                         if sha256_file(run_dir / name) != manifest.checksums.get(name)]

    label_problems: List[str] = []
    order_problems: List[str] = []
    split_problems: List[str] = []
    dedup_problems: List[str] = []
    balance_problems: List[str] = []
    balance: Dict[str, Dict] = {}

    for view in VIEWS:
        compressed = pd.read_csv(run_dir / view / "physical.csv")
        compressed["attack_id"] = pd.to_numeric(compressed["attack_id"], errors="coerce")
        for i, row in enumerate(compressed.itertuples(index=False)):
            if pd.isna(row.attack_id) or int(row.attack_id) not in known_ids:
                label_problems.append(f"{view}/physical.csv row {i}: bad attack_id {row.attack_id}")
            if pd.isna(row.mode) or str(row.mode) not in modes:
                label_problems.append(f"{view}/physical.csv row {i}: bad mode {row.mode}")
        if compressed["t"].diff().dropna().le(0).any():
            order_problems.append(f"{view}/physical.csv: timestamps not increasing")

        capture, host = load_logs(run_dir, view)
        for name, rows, key in (("capture.jsonl", capture, capture_sort_key),
                                ("host.jsonl", host, lambda r: (r["ts"], r["node"]))):
            for i, row in enumerate(rows):
                if not isinstance(row.get("attack_id"), int) or row["attack_id"] not in known_ids:
                    label_problems.append(f"{view}/{name} line {i + 2}: bad attack_id {row.get('attack_id')}")
            for i, (a, b) in enumerate(zip(rows, rows[1:])):
                if key(b) < key(a):
                    order_problems.append(f"{view}/{name} line {i + 3}: out of order at t={b['ts']}")
                    break

        if view == "train":
            leaked = {int(a) for a in compressed["attack_id"].dropna()} & zero_day
            leaked |= {r["attack_id"] for r in capture + host} & zero_day
            if leaked:
                split_problems.append(f"train view contains zero-day ids {sorted(leaked)}")

        meta = manifest.views.get(view)
        if meta is None:
            dedup_problems.append(f"manifest lacks view {view}")
            continue
        try:
            records = expand(compressed, meta.expansion)
            records["attack_id"] = records["attack_id"].astype(int)
        except (TestbedError, ValueError, TypeError) as exc:
            dedup_problems.append(f"{view}: expansion failed: {exc}")
            continue
        if len(records) != meta.records or expanded_checksum(records) != meta.expanded_sha256:
            dedup_problems.append(f"{view}: expanded records differ from the generated view")
        balance[view] = balance_report(records, manifest.sample_period)
        if balance[view] != meta.balance:
            balance_problems.append(f"{view}: balance differs from manifest")

    checks = {
        "layout": _check([]),
        "checksums": _check(checksum_problems),
        "label completeness": _check(label_problems),
        "timestamp monotonicity": _check(order_problems),
        "split soundness": _check(split_problems),
        "dedup invertibility": _check(dedup_problems),
        "balance consistency": _check(balance_problems),
    }
    ok = all(c["ok"] for c in checks.values())
    report = VisualizationUtils.generate_report(manifest.name, checks, balance)
    return ok, report, checks


def scenario_view(run_dir) -> ScenarioView:
    """Both views of a run joined back into one detector input."""
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    cfg = ScenarioConfig.model_validate(manifest.config)
    physical = pd.concat([load_view(run_dir, v, manifest) for v in VIEWS], ignore_index=True)
    physical = physical.sort_values("t", kind="mergesort").reset_index(drop=True)
    capture, host = [], []
    for view in VIEWS:
        c, h = load_logs(run_dir, view)
        capture += c
        host += h
    return ScenarioView(physical=physical, capture=sorted(capture, key=capture_sort_key),
                        host=sorted(host, key=host_sort_key),
                        plant=PlantModel(params=cfg.plant, sample_period=cfg.controller.sample_period),
                        controller=ControllerModel(cfg=cfg.controller))


def _run_one(path: str, out_root: str, seed: Optional[int], nested: bool) -> str:
    cfg = parse_scenario(path)
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": seed})
    out_dir = Path(out_root) / Path(path).stem if nested else Path(out_root)
    run_scenario(cfg, out_dir)
    return str(out_dir)


def cmd_run(args) -> int:
    nested = len(args.scenarios) > 1
    if args.jobs > 1 and nested:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_one, s, args.out, args.seed, nested) for s in args.scenarios]
            for future in futures:
                print(f"✅ {future.result()}")
    else:
        for scenario in args.scenarios:
            print(f"✅ {_run_one(scenario, args.out, args.seed, nested)}")
    return 0


def cmd_validate(args) -> int:
    ok, report, _ = validate_and_report(args.dir)
    print(report)
    print("✅ dataset valid" if ok else "❌ dataset failed validation")
    return 0 if ok else 2


def cmd_report(args) -> int:
    manifest = load_manifest(args.dir)
    balance = {view: meta.balance for view, meta in manifest.views.items()}
    print(VisualizationUtils.generate_report(manifest.name, {}, balance))
    return 0


def cmd_classify(args) -> int:
    run_dir = Path(args.dir)
    manifest = load_manifest(run_dir)
    cfg = ScenarioConfig.model_validate(manifest.config)
    records = load_view(run_dir, args.view, manifest)
    verdicts = classify_records(records, PlantModel(params=cfg.plant,
                                                    sample_period=cfg.controller.sample_period),
                                ControllerModel(cfg=cfg.controller), window=args.window,
                                tol_m=args.tol_m, tol_a=args.tol_a)
    out = Path(args.out) if args.out else run_dir / f"verdicts_{args.view}.csv"
    verdicts.to_csv(out, index=False, float_format="%.9g", lineterminator="\n")
    print(verdicts["verdict"].value_counts().to_string())
    print(f"📁 Verdicts saved to {out}")
    return 0


def cmd_plan(args) -> int:
    path = Path(args.grid)
    data = load_config_file(path)
    try:
        grid = AttackGrid.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError([f"{path}: {'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}"
                             for err in exc.errors()]) from exc
    plan = plan_attacks(grid, args.limit, args.seed)
    print(json.dumps([spec.catalog_entry() for spec in plan], indent=2))
    return 0


def cmd_matrix(args) -> int:
    views = {"legit": scenario_view(args.legit), "compromised": scenario_view(args.compromised),
             "spoofed": scenario_view(args.spoofed)}
    table = decision_table(views)
    payload = {"variants": ["PHY", "PHY_NET", "PHY_NET_HOST"], "rows": ["Normal", "Attack"],
               "matrix": matrix_rows(table)}
    text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cps-testbed",
                                     description="Virtual CPS testbed and security dataset generator")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    parser.add_argument("--quiet", action="store_true", help="Warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Simulate scenarios and write datasets")
    run.add_argument("scenarios", nargs="+", help="Scenario files (.toml or .json)")
    run.add_argument("--out", required=True, help="Output directory (one per scenario when several)")
    run.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
    run.add_argument("--jobs", type=int, default=1, help="Parallel scenario processes")
    run.set_defaults(func=cmd_run)

    validate = sub.add_parser("validate", help="Check a dataset directory")
    validate.add_argument("dir")
    validate.set_defaults(func=cmd_validate)

    report = sub.add_parser("report", help="Print class balance from the manifest")
    report.add_argument("dir")
    report.set_defaults(func=cmd_report)

    classify = sub.add_parser("classify", help="Trace verdicts per window")
    classify.add_argument("dir")
    classify.add_argument("--view", choices=VIEWS, default="test")
    classify.add_argument("--window", type=int, default=10)
    classify.add_argument("--tol-m", type=float, default=None)
    classify.add_argument("--tol-a", type=float, default=None)
    classify.add_argument("--out", default=None, help="CSV path (default: <dir>/verdicts_<view>.csv)")
    classify.set_defaults(func=cmd_classify)

    plan = sub.add_parser("plan", help="Preview an attack plan from a grid file")
    plan.add_argument("grid")
    plan.add_argument("--limit", type=int, default=10)
    plan.add_argument("--seed", type=int, default=0)
    plan.set_defaults(func=cmd_plan)

    matrix = sub.add_parser("matrix", help="IDS decision matrix over the console trio")
    matrix.add_argument("legit")
    matrix.add_argument("compromised")
    matrix.add_argument("spoofed")
    matrix.add_argument("--out", default=None)
    matrix.set_defaults(func=cmd_matrix)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        for error in exc.errors:
            print(f"❌ {error}", file=sys.stderr)
        return 1
    except TestbedError as exc:
        logger.error("❌ %s", exc)
        print(f"❌ {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
