"""
Model-based reference detectors.

classify_trace checks a window of closed-loop samples against the plant
model M and the controller model A; ids_decision_matrix compares three
rule-based intrusion detectors fed physical, network and host features.
"""

import logging
import math
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from control import ControllerConfig, _pi_law, infer_integral
from hostlog import COMPROMISE_KINDS, HostEventKind
from netsim import ADJACENT, FnCode, NodeId
from plant import PlantParams, predict_outputs
from utils import TestbedError

logger = logging.getLogger(__name__)


class TraceError(TestbedError, ValueError):
    pass


class HarnessError(TestbedError, LookupError):
    pass


class TraceVerdict(str, Enum):
    NORMAL = "NORMAL"
    FAILURE = "FAILURE"
    ATTACK = "ATTACK"
    ATTACK_OR_FAILURE = "ATTACK_OR_FAILURE"
    UNTRACEABLE = "UNTRACEABLE"


# (M satisfied, A satisfied) -> verdict
VERDICTS = {
    (True, True): TraceVerdict.NORMAL,
    (False, True): TraceVerdict.FAILURE,
    (True, False): TraceVerdict.ATTACK,
    (False, False): TraceVerdict.ATTACK_OR_FAILURE,
}

ALARM_VERDICTS = (TraceVerdict.ATTACK, TraceVerdict.ATTACK_OR_FAILURE)


class DetectorVariant(str, Enum):
    PHY = "PHY"
    PHY_NET = "PHY_NET"
    PHY_NET_HOST = "PHY_NET_HOST"


class TraceSample(BaseModel):
    model_config = ConfigDict(frozen=True)

    t: float
    u: float
    y: float
    d: float
    auto_flag: bool = True


class TraceWindow(BaseModel):
    model_config = ConfigDict(frozen=True)

    samples: List[TraceSample]

    @classmethod
    def from_records(cls, records: pd.DataFrame) -> "TraceWindow":
        return cls(samples=[TraceSample(t=r.t, u=r.u, y=r.y, d=r.d, auto_flag=bool(r.auto_flag))
                            for r in records.itertuples(index=False)])

    def check(self) -> float:
        """Validate ordering and spacing; returns the sample period."""
        if len(self.samples) < 2:
            raise TraceError(f"trace window needs at least 2 samples, got {len(self.samples)}")
        times = [s.t for s in self.samples]
        steps = [b - a for a, b in zip(times, times[1:])]
        if any(step <= 0 for step in steps):
            raise TraceError("trace window timestamps must increase strictly")
        if max(steps) - min(steps) > 1e-6:
            raise TraceError("trace window is not uniformly sampled")
        return round(steps[0], 9)


class PlantModel(BaseModel):
    """Model M: nominal reactor dynamics under zero-order hold."""

    model_config = ConfigDict(frozen=True)

    params: PlantParams = Field(default_factory=PlantParams)
    sample_period: float = 0.1

    def predict(self, y0: float, inputs: Sequence[Tuple[float, float]]) -> List[float]:
        return predict_outputs(y0, inputs, self.params, self.sample_period)


class ControllerModel(BaseModel):
    """Model A: the PI law with its integral inferred from the data."""

    model_config = ConfigDict(frozen=True)

    cfg: ControllerConfig = Field(default_factory=ControllerConfig)

    def replay(self, ys: Sequence[float], us_next: Sequence[float]) -> Optional[List[float]]:
        """
        Predicted command after each sample, seeded at the first pair whose
        command is off the actuator limits. None when no pair is unsaturated.
        """
        seed = None
        for i, (y, u) in enumerate(zip(ys, us_next)):
            integral = infer_integral(y, u, self.cfg)
            if integral is not None:
                seed = i
                break
        if seed is None:
            return None
        predicted = [math.nan] * len(ys)
        predicted[seed] = us_next[seed]
        for j in range(seed + 1, len(ys)):
            predicted[j], integral = _pi_law(ys[j], self.cfg, integral)
        return predicted


def default_tolerances(noise_std: float) -> Tuple[float, float]:
    """(tol_m, tol_a): three sigma of sensor noise plus slack, and float slack."""
    return 3.0 * noise_std + 1e-4, 1e-6


def classify_trace(w: TraceWindow, plant_model: PlantModel, controller_model: ControllerModel,
                   tol_m: float, tol_a: float) -> TraceVerdict:
    """
    Check u[i] -> y[i] against M and y[i] -> u[i+1] against A.

    Raises:
        TraceError: fewer than two samples or irregular sampling
    """
    w.check()
    samples = w.samples
    if not all(s.auto_flag for s in samples):
        return TraceVerdict.UNTRACEABLE

    ys = [s.y for s in samples]
    us_next = [s.u for s in samples[1:]]
    inputs = [(samples[i + 1].u, samples[i].d) for i in range(len(samples) - 1)]

    predicted_y = plant_model.predict(ys[0], inputs)
    m_ok = all(abs(p - y) <= tol_m for p, y in zip(predicted_y, ys[1:]))

    predicted_u = controller_model.replay(ys[:-1], us_next)
    if predicted_u is None:
        a_ok = True
    else:
        a_ok = all(abs(p - u) <= tol_a for p, u in zip(predicted_u, us_next) if not math.isnan(p))
    return VERDICTS[(m_ok, a_ok)]


def classify_records(records: pd.DataFrame, plant_model: PlantModel,
                     controller_model: ControllerModel, window: int = 10,
                     tol_m: Optional[float] = None, tol_a: Optional[float] = None) -> pd.DataFrame:
    """Verdict per non-overlapping window of an expanded physical view."""
    if window < 2:
        raise TraceError("window must hold at least 2 samples")
    default_m, default_a = default_tolerances(plant_model.params.noise_std)
    tol_m = default_m if tol_m is None else tol_m
    tol_a = default_a if tol_a is None else tol_a

    rows = []
    for start in range(0, len(records) - window + 1, window):
        chunk = records.iloc[start:start + window]
        try:
            verdict = classify_trace(TraceWindow.from_records(chunk), plant_model,
                                     controller_model, tol_m, tol_a)
        except TraceError:
            # windows straddling a gap in the view
            verdict = TraceVerdict.UNTRACEABLE
        rows.append({
            "t_start": float(chunk["t"].iloc[0]),
            "t_end": float(chunk["t"].iloc[-1]),
            "verdict": verdict.value,
            "attack_id": int(chunk["attack_id"].max()),
            "mode": str(chunk["mode"].iloc[-1]),
        })
    return pd.DataFrame(rows, columns=["t_start", "t_end", "verdict", "attack_id", "mode"])


# -- IDS comparison ------------------------------------------------------------

class ScenarioView(BaseModel):
    """Features one detector sees for one scenario."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    physical: pd.DataFrame
    capture: List[Dict] = Field(default_factory=list)
    host: List[Dict] = Field(default_factory=list)
    plant: PlantModel = Field(default_factory=PlantModel)
    controller: ControllerModel = Field(default_factory=ControllerModel)


TRIO = ("legit", "compromised", "spoofed")
CONTROL_WRITERS = {NodeId.HMI.value}


def _name(node) -> str:
    return node.value if isinstance(node, Enum) else str(node)


def physical_alarm(view: ScenarioView) -> bool:
    verdicts = classify_records(view.physical, view.plant, view.controller)
    return bool(verdicts["verdict"].isin([v.value for v in ALARM_VERDICTS]).any())


def network_alarm(view: ScenarioView) -> bool:
    """Off-topology frames, attacker sources, or control writes from non-console nodes."""
    for frame in view.capture:
        src, dst = _name(frame["src"]), _name(frame["dst"])
        if (NodeId(src), NodeId(dst)) not in ADJACENT:
            return True
        if src == NodeId.ATTACKER.value:
            return True
        if (dst == NodeId.CONTROLLER.value and _name(frame["fn_code"]) == FnCode.WRITE.value
                and src not in CONTROL_WRITERS):
            return True
    return False


def host_alarm(view: ScenarioView) -> bool:
    """
    Console commands without a matching console session, or compromise artifacts.

    Every HMI -> CONTROLLER write must match an HMI command or mode event at
    the same instant; when that event's actor logs in on the HMI, it must lie
    inside one of the actor's login/logout brackets.
    """
    events = [e for e in view.host]
    kinds = {_name(e["kind"]) for e in events}
    if kinds & {k.value for k in COMPROMISE_KINDS}:
        return True

    hmi = [e for e in events if _name(e["node"]) == NodeId.HMI.value]
    brackets: Dict[str, List[Tuple[float, float]]] = {}
    opened: Dict[str, float] = {}
    for event in hmi:
        kind = _name(event["kind"])
        if kind == HostEventKind.AUTH_LOGIN.value:
            opened[event["actor"]] = event["ts"]
        elif kind == HostEventKind.AUTH_LOGOUT.value and event["actor"] in opened:
            brackets.setdefault(event["actor"], []).append((opened.pop(event["actor"]), event["ts"]))
    for actor, start in opened.items():
        brackets.setdefault(actor, []).append((start, math.inf))

    commands = [e for e in hmi if _name(e["kind"]) in (HostEventKind.CMD_ISSUED.value,
                                                        HostEventKind.MODE_SWITCH.value)]
    for frame in view.capture:
        if not (_name(frame["capture_node"]) == NodeId.HMI.value
                and _name(frame["src"]) == NodeId.HMI.value
                and _name(frame["dst"]) == NodeId.CONTROLLER.value
                and _name(frame["fn_code"]) == FnCode.WRITE.value):
            continue
        matched = False
        for event in commands:
            if abs(event["ts"] - frame["ts"]) > 1e-9:
                continue
            spans = brackets.get(event["actor"])
            if spans is None or any(a <= event["ts"] <= b for a, b in spans):
                matched = True
                break
        if not matched:
            return True
    return False


def detect(view: ScenarioView, variant: DetectorVariant) -> bool:
    alarm = physical_alarm(view)
    if variant in (DetectorVariant.PHY_NET, DetectorVariant.PHY_NET_HOST):
        alarm = alarm or network_alarm(view)
    if variant is DetectorVariant.PHY_NET_HOST:
        alarm = alarm or host_alarm(view)
    return alarm


def _cell(alarm: bool, attack: bool) -> str:
    if attack:
        return "TP" if alarm else "FN"
    return "FP" if alarm else "TN"


def ids_decision_matrix(views: Dict[str, ScenarioView], variant: DetectorVariant) -> Dict[str, str]:
    """
    Decision of one detector variant on each scenario of the console trio.

    Raises:
        HarnessError: a trio scenario is missing
    """
    missing = [name for name in TRIO if name not in views]
    if missing:
        raise HarnessError(f"missing scenarios for the decision matrix: {missing}")
    return {name: _cell(detect(views[name], variant), attack=name != "legit") for name in TRIO}


def decision_table(views: Dict[str, ScenarioView]) -> Dict[str, Dict[str, str]]:
    """
    Rows Normal/Attack by detector variant.

    The Attack cell is TP only when every attack scenario is detected.
    """
    table: Dict[str, Dict[str, str]] = {"Normal": {}, "Attack": {}}
    for variant in DetectorVariant:
        cells = ids_decision_matrix(views, variant)
        table["Normal"][variant.value] = cells["legit"]
        attack_cells = [cells[name] for name in TRIO if name != "legit"]
        table["Attack"][variant.value] = "TP" if all(c == "TP" for c in attack_cells) else "FN"
        logger.info("IDS %s: %s", variant.value, cells)
    return table


def matrix_rows(table: Dict[str, Dict[str, str]]) -> List[List[str]]:
    variants = [v.value for v in DetectorVariant]
    return [[table[row][v] for v in variants] for row in ("Normal", "Attack")]
