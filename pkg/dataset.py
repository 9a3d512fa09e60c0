"""
Dataset assembly: labelling, redundancy elimination, log merging,
zero-day-aware train/test split, class balance and the run manifest.
"""

import io
import json
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from attacks import AttackSpec, PlanningError
from hostlog import export_host_log
from netsim import export_capture
from plant import PlantParams, SystemMode, estimate_disturbance
from utils import FLOAT_FORMAT, TestbedError, read_jsonl, round_sig, sha256_file, sha256_text

logger = logging.getLogger(__name__)

PHYSICAL_COLUMNS = ["t", "u", "y", "d", "auto_flag", "attack_id", "mode"]
TRUTH_COLUMNS = PHYSICAL_COLUMNS + ["y_true", "u_true", "c_a", "hazard"]
RECORD_KEY = ["u", "y", "d"]
LABEL_KEY = ["auto_flag", "attack_id", "mode"]
VIEWS = ("train", "test")
VIEW_FILES = ("physical.csv", "capture.jsonl", "host.jsonl")
RUN_FILES = tuple(f"{view}/{name}" for view in VIEWS for name in VIEW_FILES) + ("truth.csv",)

# causal order of simultaneous entries
SOURCE_ORDER = {"HOST": 0, "NETWORK": 1, "PHYSICAL": 2}


class LabelError(TestbedError, ValueError):
    pass


class DedupError(TestbedError, ValueError):
    pass


class SynchronizationError(TestbedError):
    pass


class LayoutError(TestbedError):
    pass


class Label(BaseModel):
    model_config = ConfigDict(frozen=True)

    attack_id: int = Field(0, ge=0)
    mode: SystemMode = SystemMode.NORMAL


class LabeledRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    t: float
    u: float
    y: float
    y_true: float
    d: float
    auto_flag: bool
    label: Label


class ViewMeta(BaseModel):
    records: int
    expansion: Dict
    expanded_sha256: str
    balance: Dict


class Manifest(BaseModel):
    """Everything needed to check, expand and reproduce a run directory."""

    name: str
    config_hash: str
    seed: int
    duration: float
    sample_period: float
    config: Dict
    attacks: List[Dict] = Field(default_factory=list)
    zero_day_ids: List[int] = Field(default_factory=list)
    mode_schedule: List[Dict] = Field(default_factory=list)
    split: Dict = Field(default_factory=dict)
    views: Dict[str, ViewMeta] = Field(default_factory=dict)
    interventions: List[Dict] = Field(default_factory=list)
    trips: List[Dict] = Field(default_factory=list)
    checksums: Dict[str, str] = Field(default_factory=dict)

    def catalog(self) -> List[AttackSpec]:
        return [AttackSpec.model_validate(entry) for entry in self.attacks]


# -- physical records --------------------------------------------------------

def emit_records(truth: pd.DataFrame, catalog: Sequence[AttackSpec]) -> pd.DataFrame:
    """
    Released physical records of a finished run.

    Raises:
        LabelError: a record lacks a label or names an unknown attack or mode
    """
    known = {0} | {spec.id for spec in catalog}
    modes = {m.value for m in SystemMode}
    for i, row in enumerate(truth[["t", "attack_id", "mode"]].itertuples(index=False)):
        if pd.isna(row.attack_id) or pd.isna(row.mode):
            raise LabelError(f"record {i} (t={row.t}) has no label")
        if int(row.attack_id) not in known:
            raise LabelError(f"record {i} (t={row.t}) names unknown attack {row.attack_id}")
        if row.mode not in modes:
            raise LabelError(f"record {i} (t={row.t}) has unknown mode {row.mode!r}")
    records = truth[PHYSICAL_COLUMNS].copy()
    records["attack_id"] = records["attack_id"].astype(int)
    records["auto_flag"] = records["auto_flag"].astype(bool)
    return records.reset_index(drop=True)


def to_labeled_records(truth: pd.DataFrame) -> List[LabeledRecord]:
    return [LabeledRecord(t=r.t, u=r.u, y=r.y, y_true=r.y_true, d=r.d, auto_flag=bool(r.auto_flag),
                          label=Label(attack_id=int(r.attack_id), mode=SystemMode(r.mode)))
            for r in truth.itertuples(index=False)]


def deduplicate(records: pd.DataFrame, eps: float = 1e-9) -> Tuple[pd.DataFrame, Dict]:
    """
    Collapse runs of identical consecutive records.

    A run continues while (u, y, d) stay within eps of the run's first record
    and the label and auto flag are unchanged. The expansion metadata
    restores timestamps and every in-tolerance deviation exactly.

    Raises:
        DedupError: records not strictly sorted by t
    """
    n = len(records)
    times = records["t"].to_numpy(dtype=float)
    if n > 1 and not np.all(np.diff(times) > 0):
        raise DedupError("records must be strictly sorted by t")

    values = records[RECORD_KEY].to_numpy(dtype=float)
    labels = list(records[LABEL_KEY].itertuples(index=False, name=None))
    heads: List[int] = []
    lengths: List[int] = []
    overrides: List[Dict] = []
    for i in range(n):
        if heads:
            h = heads[-1]
            same_label = labels[i] == labels[h]
            close = bool(np.all(np.abs(values[i] - values[h]) <= eps))
            if same_label and close:
                lengths[-1] += 1
                for j, field in enumerate(RECORD_KEY):
                    if values[i, j] != values[h, j]:
                        overrides.append({"index": i, "field": field, "value": float(values[i, j])})
                continue
        heads.append(i)
        lengths.append(1)

    compressed = records.iloc[heads].copy().reset_index(drop=True)
    compressed["run_length"] = lengths
    expansion: Dict = {"length": n, "overrides": overrides}
    if n >= 2:
        period = round(float(times[1] - times[0]), 9)
        t0 = float(times[0])
        if all(times[i] == round(t0 + i * period, 9) for i in range(n)):
            expansion.update({"t0": t0, "period": period})
        else:
            expansion["times"] = [float(t) for t in times]
    elif n == 1:
        expansion["times"] = [float(times[0])]
    else:
        expansion["times"] = []
    logger.debug("Deduplicated %d records into %d runs", n, len(compressed))
    return compressed, expansion


def expand(compressed: pd.DataFrame, expansion: Dict) -> pd.DataFrame:
    """Inverse of deduplicate."""
    lengths = compressed["run_length"].to_numpy(dtype=int)
    if int(lengths.sum()) != expansion["length"]:
        raise DedupError(f"run lengths sum to {lengths.sum()}, expected {expansion['length']}")
    records = compressed.loc[compressed.index.repeat(lengths)].drop(columns="run_length")
    records = records.reset_index(drop=True)
    n = expansion["length"]
    if "times" in expansion:
        times = expansion["times"]
    else:
        times = [round(expansion["t0"] + i * expansion["period"], 9) for i in range(n)]
    records["t"] = np.asarray(times, dtype=float)
    for item in expansion["overrides"]:
        records.loc[item["index"], item["field"]] = item["value"]
    return records[[c for c in compressed.columns if c != "run_length"]]


def physical_csv(records: pd.DataFrame) -> str:
    buffer = io.StringIO()
    records.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return buffer.getvalue()


def write_physical(records: pd.DataFrame, path: Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(physical_csv(records), encoding="utf-8", newline="")
    return len(records)


def read_physical(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"attack_id": "Int64", "mode": "string"})


def load_view(run_dir: Path, view: str, manifest: Optional[Manifest] = None) -> pd.DataFrame:
    """Released physical records of one view, expanded to one row per sample."""
    run_dir = Path(run_dir)
    manifest = manifest or load_manifest(run_dir)
    if view not in manifest.views:
        raise LayoutError(f"{run_dir}: manifest has no view {view!r}")
    compressed = read_physical(run_dir / view / "physical.csv")
    records = expand(compressed, manifest.views[view].expansion)
    records["attack_id"] = records["attack_id"].astype(int)
    records["mode"] = records["mode"].astype(str)
    return records


def label_views(records: pd.DataFrame, catalog: Sequence[AttackSpec]) -> pd.DataFrame:
    """Binary and multi-class label columns derived from the attack id."""
    kinds = {spec.id: spec.kind.value for spec in catalog}
    out = records.copy()
    out["binary"] = (out["attack_id"] != 0).astype(int)
    out["attack_class"] = [kinds.get(int(a), "NONE") for a in out["attack_id"]]
    return out


def estimate_disturbance_series(records: pd.DataFrame, step_index: int, c_a0_init: float,
                                params: PlantParams) -> pd.Series:
    """
    Inlet concentration recovered from outlet readings after a step.

    Only open-loop segments with steady flow before the step are meaningful;
    samples at or before the step are NaN.
    """
    t = records["t"].to_numpy(dtype=float)
    y = records["y"].to_numpy(dtype=float)
    estimates = np.full(len(records), np.nan)
    for k in range(step_index + 1, len(records)):
        estimates[k] = estimate_disturbance(y[k], y[step_index], c_a0_init,
                                            t[k] - t[step_index], params)
    return pd.Series(estimates, index=records.index, name="d_estimate")


# -- logs -------------------------------------------------------------------

def _node_name(node) -> str:
    return node.value if hasattr(node, "value") else str(node)


def merge_logs(physical: pd.DataFrame, capture: Iterable[Dict], host: Iterable[Dict],
               horizon: Optional[float] = None) -> List[Dict]:
    """
    One causal timeline of physical records, frames and host events.

    Sorted by (ts, source, node, seq) with host before network before
    physical at equal timestamps.

    Raises:
        SynchronizationError: an entry lies off the scenario clock or a
            node's sequence numbers run backwards in time
    """
    times = physical["t"].to_numpy(dtype=float) if len(physical) else np.array([0.0])
    t_min = float(times.min())
    t_max = horizon if horizon is not None else math.inf
    entries: List[Dict] = []

    def add(ts: float, source: str, node: str, seq: int, payload: Dict) -> None:
        if not math.isfinite(ts) or ts < t_min - 1e-9 or ts > t_max + 1e-9:
            raise SynchronizationError(f"{source} entry on {node} at t={ts} outside clock "
                                       f"[{t_min}, {t_max}]")
        entries.append({"ts": float(ts), "source": source, "node": node, "seq": int(seq), **payload})

    for i, row in enumerate(physical.to_dict("records")):
        add(row["t"], "PHYSICAL", "PLANT", i, row)

    last_seq: Dict[Tuple[str, str], Tuple[float, int]] = {}
    for row in capture:
        src, dst = _node_name(row["src"]), _node_name(row["dst"])
        node = _node_name(row["capture_node"])
        if node == src:
            prev = last_seq.get((src, dst))
            if prev is not None and row["seq"] > prev[1] and row["ts"] < prev[0]:
                raise SynchronizationError(f"link {src}->{dst}: seq {row['seq']} stamped before seq {prev[1]}")
            if prev is None or row["seq"] > prev[1]:
                last_seq[(src, dst)] = (row["ts"], row["seq"])
        add(row["ts"], "NETWORK", node, row["seq"], {k: v for k, v in row.items() if k != "ts"})

    host_clock: Dict[str, float] = {}
    for i, row in enumerate(host):
        node = _node_name(row["node"])
        if row["ts"] < host_clock.get(node, -math.inf):
            raise SynchronizationError(f"host log of {node} runs backwards at t={row['ts']}")
        host_clock[node] = row["ts"]
        add(row["ts"], "HOST", node, row.get("seq", i),
            {k: v for k, v in row.items() if k not in ("ts", "node", "seq")})

    entries.sort(key=lambda e: (e["ts"], SOURCE_ORDER[e["source"]], e["node"], e["seq"]))
    return entries


# -- split and balance --------------------------------------------------------

def split_dataset(truth: pd.DataFrame, capture: List[Dict], host: List[Dict],
                  catalog: Sequence[AttackSpec], boundary: float) -> Dict[str, Dict]:
    """
    Partition records, frames and host events into train and test views.

    Zero-day items go to test; other attack items follow their attack's
    start; attack-free items follow their own timestamp.

    Raises:
        PlanningError: a zero-day attack lies entirely inside the training range
    """
    by_id = {spec.id: spec for spec in catalog}
    for spec in catalog:
        if spec.zero_day and spec.t_end <= boundary + 1e-9:
            raise PlanningError(f"zero-day attack {spec.id} ends at t={spec.t_end}, "
                                f"inside the training range (< {boundary})")

    def view_of(ts: float, attack_id: int) -> str:
        spec = by_id.get(int(attack_id))
        if spec is None:
            return "train" if ts < boundary else "test"
        if spec.zero_day:
            return "test"
        return "train" if spec.t_start < boundary else "test"

    record_views = [view_of(t, a) for t, a in zip(truth["t"], truth["attack_id"])]
    views = {}
    for view in VIEWS:
        mask = [v == view for v in record_views]
        views[view] = {
            "truth": truth[mask].reset_index(drop=True),
            "capture": [r for r in capture if view_of(r["ts"], r["attack_id"]) == view],
            "host": [r for r in host if view_of(r["ts"], r["attack_id"]) == view],
        }
    logger.info("Split at t=%.2f: %d train / %d test records", boundary,
                len(views["train"]["truth"]), len(views["test"]["truth"]))
    return views


def balance_report(records: pd.DataFrame, sample_period: float) -> Dict:
    """Per-label counts, attack fraction and per-attack durations of a view."""
    total = len(records)
    counts: Dict[str, int] = {}
    for attack_id, mode in zip(records["attack_id"], records["mode"]):
        key = f"attack={int(attack_id)} mode={mode}"
        counts[key] = counts.get(key, 0) + 1
    attacked = int((records["attack_id"] != 0).sum()) if total else 0
    durations: Dict[str, float] = {}
    for attack_id, group in records[records["attack_id"] != 0].groupby("attack_id"):
        durations[str(int(attack_id))] = round_sig(len(group) * sample_period)
    return {
        "records": total,
        "attack_fraction": round_sig(attacked / total) if total else 0.0,
        "label_counts": dict(sorted(counts.items())),
        "attack_durations": dict(sorted(durations.items(), key=lambda kv: int(kv[0]))),
    }


# -- run directory --------------------------------------------------------------

def write_dataset(result, out_dir: Path, cfg_json: str, cfg_hash: str) -> Manifest:
    """
    Write the full layout of one run.

        out/{train,test}/{physical.csv, capture.jsonl, host.jsonl}
        out/truth.csv
        out/manifest.json
    """
    out_dir = Path(out_dir)
    cfg = result.cfg
    catalog = list(result.attacks)
    period = cfg.controller.sample_period
    truth = result.truth.copy()
    emit_records(truth, catalog)

    views = split_dataset(truth, result.captures, result.host, catalog, cfg.train_boundary)
    view_meta: Dict[str, ViewMeta] = {}
    for view, parts in views.items():
        records = emit_records(parts["truth"], catalog)
        compressed, expansion = deduplicate(records, cfg.dedup_eps)
        write_physical(compressed, out_dir / view / "physical.csv")
        export_capture(parts["capture"], out_dir / view / "capture.jsonl")
        export_host_log(parts["host"], out_dir / view / "host.jsonl")
        # checksum of the view as a reader gets it after expansion
        reread = expand(read_physical(out_dir / view / "physical.csv"), expansion)
        view_meta[view] = ViewMeta(records=len(records), expansion=expansion,
                                   expanded_sha256=sha256_text(physical_csv(_normalized(reread))),
                                   balance=balance_report(records, period))

    write_physical(truth[TRUTH_COLUMNS], out_dir / "truth.csv")

    manifest = Manifest(
        name=cfg.name,
        config_hash=cfg_hash,
        seed=cfg.seed,
        duration=cfg.duration,
        sample_period=period,
        config=json.loads(cfg_json),
        attacks=[spec.catalog_entry() for spec in catalog],
        zero_day_ids=sorted(spec.id for spec in catalog if spec.zero_day),
        mode_schedule=result.mode_schedule,
        split={"boundary": cfg.train_boundary, "train_fraction": cfg.split.train_fraction},
        views=view_meta,
        interventions=result.interventions,
        trips=result.trips,
        checksums={name: sha256_file(out_dir / name) for name in RUN_FILES},
    )
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
        encoding="utf-8", newline="\n")
    logger.info("Wrote dataset %s to %s", cfg.name, out_dir)
    return manifest


def _normalized(records: pd.DataFrame) -> pd.DataFrame:
    out = records[PHYSICAL_COLUMNS].copy()
    out["attack_id"] = out["attack_id"].astype(int)
    out["auto_flag"] = out["auto_flag"].astype(bool)
    out["mode"] = out["mode"].astype(str)
    return out


def expanded_checksum(records: pd.DataFrame) -> str:
    return sha256_text(physical_csv(_normalized(records)))


def load_manifest(run_dir: Path) -> Manifest:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise LayoutError(f"{run_dir}: manifest.json missing")
    return Manifest.model_validate_json(path.read_text(encoding="utf-8"))


def load_logs(run_dir: Path, view: str) -> Tuple[List[Dict], List[Dict]]:
    run_dir = Path(run_dir)
    return read_jsonl(run_dir / view / "capture.jsonl"), read_jsonl(run_dir / view / "host.jsonl")
