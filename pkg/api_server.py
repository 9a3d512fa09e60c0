"""
Testbed API Server
FastAPI backend to run scenarios and serve the generated datasets,
their quality reports and trace verdicts.
"""

import logging
import os
import re
import sqlite3
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from attacks import AttackGrid, plan_attacks
from cli import run_scenario, validate_and_report
from config import ScenarioConfig, ScenarioError, config_hash, scenario_from_dict
from dataset import VIEWS, LayoutError, load_manifest, load_view
from oracle import ControllerModel, PlantModel, classify_records
from utils import TestbedError

# Setup logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

app = FastAPI(
    title="CPS Testbed API",
    description="Virtual cyber-physical testbed: scenario runs and security datasets",
    version="1.0.0"
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["http://localhost:3000", "http://localhost:5173", "http://localhost:8080"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

DATASET_NAME = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


def data_root() -> Path:
    return Path(os.environ.get("TESTBED_DATA_ROOT", "datasets"))


def get_db_connection():
    """Connection to the dataset registry, created on first use"""
    conn = sqlite3.connect(os.environ.get("TESTBED_REGISTRY", "datasets.db"))
    conn.row_factory = sqlite3.Row
    conn.execute("""
        CREATE TABLE IF NOT EXISTS datasets (
            name TEXT PRIMARY KEY,
            path TEXT NOT NULL,
            config_hash TEXT NOT NULL,
            seed INTEGER NOT NULL,
            duration REAL NOT NULL,
            attacks INTEGER NOT NULL,
            created TEXT NOT NULL
        )
    """)
    return conn


def register_dataset(name: str, path: Path, cfg_hash: str, seed: int, duration: float,
                     attacks: int) -> None:
    conn = get_db_connection()
    try:
        conn.execute("""
            INSERT OR REPLACE INTO datasets (name, path, config_hash, seed, duration, attacks, created)
            VALUES (?, ?, ?, ?, ?, ?, ?)
        """, (name, str(path), cfg_hash, seed, duration, attacks, datetime.now().isoformat()))
        conn.commit()
    finally:
        conn.close()


def dataset_dir(name: str) -> Path:
    """Registered path of a dataset, or 404"""
    if not DATASET_NAME.match(name):
        raise HTTPException(status_code=404, detail=f"Dataset '{name}' not found")
    conn = get_db_connection()
    try:
        row = conn.execute("SELECT path FROM datasets WHERE name = ?", (name,)).fetchone()
    finally:
        conn.close()
    if row is None or not Path(row["path"]).exists():
        raise HTTPException(status_code=404, detail=f"Dataset '{name}' not found")
    return Path(row["path"])


def testbed_error(exc: TestbedError) -> HTTPException:
    if isinstance(exc, ScenarioError):
        return HTTPException(status_code=422, detail=exc.errors)
    if isinstance(exc, LayoutError):
        return HTTPException(status_code=404, detail=str(exc))
    return HTTPException(status_code=400, detail=str(exc))


# Pydantic models for API responses
class DatasetSummary(BaseModel):
    name: str
    config_hash: str
    seed: int
    duration: float
    attacks: int
    created: str


class RunResult(BaseModel):
    name: str
    config_hash: str
    attacks: List[Dict[str, Any]]
    zero_day_ids: List[int]
    balance: Dict[str, Dict[str, Any]]
    interventions: int
    trips: int


class ValidationResult(BaseModel):
    name: str
    ok: bool
    checks: Dict[str, Dict[str, Any]]
    report: str


class WindowVerdict(BaseModel):
    t_start: float
    t_end: float
    verdict: str
    attack_id: int
    mode: str


class PlanRequest(BaseModel):
    grid: AttackGrid
    limit: int = Field(10, gt=0)
    seed: int = 0


@app.get("/")
async def root():
    """Root endpoint"""
    return {"message": "CPS Testbed API - scenario runs and security datasets"}


@app.get("/api/health")
async def health():
    return {"status": "ok", "data_root": str(data_root())}


@app.post("/api/scenarios/run", response_model=RunResult)
def run_new_scenario(scenario: Dict[str, Any]):
    """Validate a scenario, simulate it and register the dataset"""
    try:
        cfg: ScenarioConfig = scenario_from_dict(scenario, source="request")
        if not DATASET_NAME.match(cfg.name):
            raise HTTPException(status_code=422, detail=[f"request: name: invalid dataset name '{cfg.name}'"])
        out_dir = data_root() / cfg.name
        logger.info(f"🚀 Running scenario {cfg.name} ({cfg.duration} min, seed {cfg.seed})")
        manifest = run_scenario(cfg, out_dir)
        register_dataset(cfg.name, out_dir, config_hash(cfg), cfg.seed, cfg.duration,
                         len(manifest.attacks))
        logger.info(f"✅ Dataset {cfg.name} registered")
        return RunResult(
            name=cfg.name,
            config_hash=manifest.config_hash,
            attacks=manifest.attacks,
            zero_day_ids=manifest.zero_day_ids,
            balance={view: meta.balance for view, meta in manifest.views.items()},
            interventions=len(manifest.interventions),
            trips=len(manifest.trips),
        )
    except HTTPException:
        raise
    except TestbedError as e:
        logger.warning(f"⚠️ Scenario rejected: {e}")
        raise testbed_error(e)
    except Exception as e:
        logger.error(f"❌ Scenario run failed: {e}")
        raise HTTPException(status_code=500, detail=f"Simulation error: {str(e)}")


@app.get("/api/datasets", response_model=List[DatasetSummary])
async def list_datasets():
    """All registered datasets, newest first"""
    try:
        conn = get_db_connection()
        rows = conn.execute("""
            SELECT name, config_hash, seed, duration, attacks, created
            FROM datasets
            ORDER BY created DESC
        """).fetchall()
        conn.close()
        return [DatasetSummary(**dict(row)) for row in rows]
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Database error: {str(e)}")


@app.get("/api/datasets/{name}/validate", response_model=ValidationResult)
def validate_dataset(name: str):
    """Run the dataset quality checks"""
    run_dir = dataset_dir(name)
    try:
        ok, report, checks = validate_and_report(run_dir)
        if not ok:
            logger.warning(f"⚠️ Dataset {name} failed validation")
        return ValidationResult(name=name, ok=ok, checks=checks, report=report)
    except TestbedError as e:
        raise testbed_error(e)


@app.get("/api/datasets/{name}/balance")
async def dataset_balance(name: str):
    """Class balance recorded in the manifest, per view"""
    run_dir = dataset_dir(name)
    try:
        manifest = load_manifest(run_dir)
        return {
            "name": name,
            "zero_day_ids": manifest.zero_day_ids,
            "views": {view: meta.balance for view, meta in manifest.views.items()},
        }
    except TestbedError as e:
        raise testbed_error(e)


@app.get("/api/datasets/{name}/classify", response_model=List[WindowVerdict])
def classify_dataset(name: str, view: str = "test", window: int = 10,
                     tol_m: Optional[float] = None, tol_a: Optional[float] = None):
    """Trace verdict per non-overlapping window of one view"""
    if view not in VIEWS:
        raise HTTPException(status_code=422, detail=f"view must be one of {list(VIEWS)}")
    run_dir = dataset_dir(name)
    try:
        manifest = load_manifest(run_dir)
        cfg = ScenarioConfig.model_validate(manifest.config)
        records = load_view(run_dir, view, manifest)
        verdicts = classify_records(
            records,
            PlantModel(params=cfg.plant, sample_period=cfg.controller.sample_period),
            ControllerModel(cfg=cfg.controller),
            window=window, tol_m=tol_m, tol_a=tol_a,
        )
        return [WindowVerdict(**row) for row in verdicts.to_dict(orient="records")]
    except TestbedError as e:
        raise testbed_error(e)


@app.post("/api/attacks/plan")
async def preview_plan(request: PlanRequest):
    """Attack catalog a grid would produce, without simulating"""
    try:
        plan = plan_attacks(request.grid, request.limit, request.seed)
        logger.info(f"📋 Planned {len(plan)} attacks")
        return {"attacks": [spec.catalog_entry() for spec in plan]}
    except TestbedError as e:
        raise testbed_error(e)


if __name__ == "__main__":
    import uvicorn
    print("🏭 Starting CPS Testbed API Server")
    print(f"📁 Data root: {data_root()}")
    print("🚀 Server starting on http://localhost:8000")
    print("📚 API docs available at http://localhost:8000/docs")
    uvicorn.run(app, host="0.0.0.0", port=8000)
