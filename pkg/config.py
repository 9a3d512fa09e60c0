"""
Scenario configuration: schema, parsing, emission and semantic checks.

A scenario file is TOML (or the JSON written into a dataset manifest).
Every field has a default except `duration`.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from attacks import AttackGrid, AttackSpec, plan_attacks
from control import ControllerConfig
from hostlog import OperatorSession, SessionError, validate_sessions
from netsim import IrregularKind, TrafficSchedule
from plant import FaultEvent, ModeTransitionError, PlantParams, check_fault_schedule
from utils import TestbedError, canonical_json, sha256_text

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)


class ScenarioError(TestbedError, ValueError):
    """Invalid scenario; carries every problem found, not just the first."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class DisturbanceEvent(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    at: float = Field(..., ge=0)
    c_a0: float = Field(..., ge=0, description="New inlet concentration (mol/m³)")


class IrregularEvent(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    at: float = Field(..., ge=0)
    kind: IrregularKind
    value: float = 0.0
    actor: str = "operator"


class SplitPolicy(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    train_fraction: float = Field(0.7, gt=0, lt=1)


class DmPolicy(BaseModel):
    """Supervisory rule of the HMI: force the valve shut on a hazardous report."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    supervise: bool = True
    intervention_hold: float = Field(2.0, gt=0)


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "scenario"
    duration: float = Field(..., gt=0, description="Simulated minutes")
    seed: int = 0
    initial_c_a0: float = Field(0.925, ge=0)
    plant: PlantParams = Field(default_factory=PlantParams)
    controller: ControllerConfig = Field(default_factory=ControllerConfig)
    traffic: TrafficSchedule = Field(default_factory=TrafficSchedule)
    disturbances: List[DisturbanceEvent] = Field(default_factory=list)
    faults: List[FaultEvent] = Field(default_factory=list)
    sessions: List[OperatorSession] = Field(default_factory=list)
    irregular: List[IrregularEvent] = Field(default_factory=list)
    attacks: List[AttackSpec] = Field(default_factory=list)
    attack_grid: Optional[AttackGrid] = None
    attack_limit: int = Field(10, gt=0)
    allow_overlap: bool = False
    dedup_eps: float = Field(1e-9, ge=0)
    split: SplitPolicy = Field(default_factory=SplitPolicy)
    dm: DmPolicy = Field(default_factory=DmPolicy)

    @property
    def train_boundary(self) -> float:
        return round(self.split.train_fraction * self.duration, 9)


def validate_scenario(cfg: ScenarioConfig) -> List[str]:
    """Semantic checks the schema cannot express; returns every problem."""
    errors: List[str] = []
    horizon = cfg.duration

    def within(label: str, t: float) -> None:
        if t > horizon + 1e-9:
            errors.append(f"{label} at t={t} exceeds duration {horizon}")

    for i, event in enumerate(cfg.disturbances):
        within(f"disturbances[{i}]", event.at)
    for i, event in enumerate(cfg.faults):
        within(f"faults[{i}]", event.at)
    for i, event in enumerate(cfg.irregular):
        within(f"irregular[{i}]", event.at)
        if event.kind is IrregularKind.SAFETY_TRIP_BCAST:
            errors.append(f"irregular[{i}]: safety trips come from the controller, not the schedule")
    for i, session in enumerate(cfg.sessions):
        within(f"sessions[{i}] logout", session.logout)

    try:
        check_fault_schedule(cfg.faults)
    except ModeTransitionError as exc:
        errors.append(f"faults: {exc}")
    try:
        validate_sessions(cfg.sessions)
    except SessionError as exc:
        errors.append(f"sessions: {exc}")

    ctl, traffic, plant = cfg.controller, cfg.traffic, cfg.plant
    if abs(ctl.sample_period - traffic.poll_period) > 1e-12:
        errors.append(f"controller.sample_period ({ctl.sample_period}) must equal "
                      f"traffic.poll_period ({traffic.poll_period})")
    ratio = traffic.report_period / traffic.poll_period
    if abs(ratio - round(ratio)) > 1e-9:
        errors.append("traffic.report_period must be a whole number of poll periods")
    steps = ctl.sample_period / plant.dt
    if abs(steps - round(steps)) > 1e-6:
        errors.append("plant.dt must divide controller.sample_period")

    if cfg.attacks and cfg.attack_grid is not None:
        errors.append("give either explicit attacks or attack_grid, not both")
    seen = set()
    for spec in cfg.attacks:
        if spec.id in seen:
            errors.append(f"attack {spec.id}: duplicate id")
        seen.add(spec.id)
        if spec.t_end > horizon + 1e-9:
            errors.append(f"attack {spec.id}: window {list(spec.window)} exceeds duration {horizon}")
        if spec.zero_day and spec.t_end <= cfg.train_boundary:
            errors.append(f"attack {spec.id}: zero-day window ends inside the training range")
    if not cfg.allow_overlap:
        ordered = sorted(cfg.attacks, key=lambda s: s.t_start)
        for first, second in zip(ordered, ordered[1:]):
            if second.t_start < first.t_end:
                errors.append(f"attack {second.id}: window overlaps attack {first.id}")
    return errors


def parse_scenario(path) -> ScenarioConfig:
    """
    Load and validate a scenario file.

    Raises:
        ScenarioError: unreadable file, syntax error (with line), schema
            errors (with key path) or semantic errors, all collected
    """
    path = Path(path)
    return scenario_from_dict(load_config_file(path), source=str(path))


def load_config_file(path) -> Dict:
    """TOML or JSON (by suffix) to a dict; read and syntax errors become ScenarioError."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError([f"{path}: no such file"])
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{path}: line {exc.lineno}: {exc.msg}"]) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError([f"{path}: {exc}"]) from exc


def scenario_from_dict(data: Dict, source: str = "<config>") -> ScenarioConfig:
    try:
        cfg = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        errors = []
        for err in exc.errors():
            where = ".".join(str(p) for p in err["loc"]) or "<root>"
            errors.append(f"{source}: {where}: {err['msg']}")
        raise ScenarioError(errors) from exc
    errors = validate_scenario(cfg)
    if errors:
        raise ScenarioError([f"{source}: {e}" for e in errors])
    return cfg


def emit_scenario(cfg: ScenarioConfig) -> str:
    """Canonical JSON form; parse_scenario reads it back to an equal config."""
    return canonical_json(cfg.model_dump(mode="json"))


def config_hash(cfg: ScenarioConfig) -> str:
    return sha256_text(emit_scenario(cfg))


def scenario_attacks(cfg: ScenarioConfig) -> List[AttackSpec]:
    """Explicit attacks, or the plan drawn from the attack grid."""
    if cfg.attack_grid is None:
        return sorted(cfg.attacks, key=lambda s: s.id)
    grid = cfg.attack_grid
    update = {"duration": cfg.duration, "sample_period": cfg.controller.sample_period}
    if grid.test_start is None:
        update["test_start"] = cfg.train_boundary
    grid = grid.model_copy(update=update)
    return plan_attacks(grid, cfg.attack_limit, cfg.seed)
