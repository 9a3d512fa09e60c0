"""
Ready-made scenarios: the baseline loop, one per trace-classification
quadrant, the console-command trio, the stealthy-attack outcome cells, the
DoS comparison pair and the 60-minute dataset quality run.
"""

from typing import Dict

from attacks import (AttackAction, AttackGrid, AttackKind, AttackSpec, AttackStep, EntryLayer,
                     EntryMethod, InjectionPoint, ReportPolicy, StepEffect, Waveform, WaveformKind,
                     ZeroDayCombo)
from config import DisturbanceEvent, ScenarioConfig
from hostlog import HostEventKind, OperatorSession, SessionAction
from netsim import NodeId
from plant import FaultEvent, FaultKind

HAZARD_DISTURBANCE = DisturbanceEvent(at=1.0, c_a0=1.925)


def baseline(duration: float = 10.0, seed: int = 0) -> ScenarioConfig:
    return ScenarioConfig(name="baseline", duration=duration, seed=seed)


# -- trace classification quadrants ---------------------------------------------

def quadrant_normal() -> ScenarioConfig:
    return ScenarioConfig(name="quadrant-normal", duration=6.0)


def quadrant_failure() -> ScenarioConfig:
    return ScenarioConfig(name="quadrant-failure", duration=6.0,
                          faults=[FaultEvent(at=4.0, kind=FaultKind.F1_CAUSES)])


def quadrant_attack() -> ScenarioConfig:
    # a constant actuator bias hides in the integrator; a ramp cannot
    spoof = AttackSpec(id=1, kind=AttackKind.INTEGRITY_SCA,
                       injection_point=InjectionPoint.ACTUATOR_CMD,
                       waveform=Waveform(kind=WaveformKind.RAMP, rate=0.5), window=(3.0, 5.0))
    return ScenarioConfig(name="quadrant-attack", duration=6.0, attacks=[spoof])


def quadrant_attack_or_failure() -> ScenarioConfig:
    falsify = AttackSpec(id=1, kind=AttackKind.INTEGRITY_DM,
                         injection_point=InjectionPoint.SENSOR_TO_DM,
                         waveform=Waveform(magnitude=0.05), window=(4.0, 6.0),
                         dm_targets=[NodeId.HMI])
    return ScenarioConfig(name="quadrant-attack-or-failure", duration=6.0,
                          faults=[FaultEvent(at=4.0, kind=FaultKind.F1_CAUSES)],
                          attacks=[falsify])


# -- console command trio -----------------------------------------------------------

CONSOLE_SESSION = OperatorSession(
    operator="operator1", login=3.0, logout=4.2,
    actions=[
        SessionAction(ts=3.1, kind=HostEventKind.MODE_SWITCH, mode="MANUAL"),
        SessionAction(ts=3.2, kind=HostEventKind.CMD_ISSUED, value=1.5),
        SessionAction(ts=3.5, kind=HostEventKind.CMD_ISSUED, value=1.2),
        SessionAction(ts=4.0, kind=HostEventKind.MODE_SWITCH, mode="AUTO"),
    ])


def console_legit() -> ScenarioConfig:
    return ScenarioConfig(name="console-legit", duration=8.0, sessions=[CONSOLE_SESSION])


def console_compromised() -> ScenarioConfig:
    remote = {"entry_layer": EntryLayer.APPLICATION, "entry_method": EntryMethod.REMOTE}
    attack = AttackSpec(
        id=1, kind=AttackKind.INTEGRITY_DM, injection_point=InjectionPoint.DM_TO_ACTUATOR,
        window=(3.0, 4.2), session=CONSOLE_SESSION,
        vector=[
            AttackStep(offset=-0.6, from_node=NodeId.CORP_WS, to_node=NodeId.HMI,
                       effect=StepEffect.CREDENTIAL, **remote),
            AttackStep(offset=-0.4, from_node=NodeId.CORP_WS, to_node=NodeId.HMI,
                       effect=StepEffect.PIVOT, **remote),
            AttackStep(offset=-0.2, from_node=NodeId.HMI, to_node=NodeId.CONTROLLER,
                       effect=StepEffect.PAYLOAD, **remote),
        ])
    return ScenarioConfig(name="console-compromised", duration=8.0, attacks=[attack])


def console_spoofed() -> ScenarioConfig:
    attack = AttackSpec(
        id=1, kind=AttackKind.INTEGRITY_DM, injection_point=InjectionPoint.DM_TO_ACTUATOR,
        window=(3.0, 4.2), session=CONSOLE_SESSION,
        vector=[AttackStep(offset=-0.1, from_node=NodeId.ATTACKER, to_node=NodeId.CONTROLLER,
                           effect=StepEffect.PAYLOAD)])
    return ScenarioConfig(name="console-spoofed", duration=8.0, attacks=[attack])


def console_trio() -> Dict[str, ScenarioConfig]:
    return {"legit": console_legit(), "compromised": console_compromised(),
            "spoofed": console_spoofed()}


# -- stealthy attack outcomes -------------------------------------------------------------

def stealthy_normal() -> ScenarioConfig:
    """Fake-normal reports with no real manipulation behind them."""
    attack = AttackSpec(id=1, kind=AttackKind.STEALTHY, window=(3.0, 5.0),
                        dm_targets=[NodeId.HMI, NodeId.LOGSERVER],
                        report_policy=ReportPolicy.FREEZE_LAST_GOOD)
    return ScenarioConfig(name="stealthy-normal", duration=8.0, attacks=[attack])


def stealthy_intervention() -> ScenarioConfig:
    """Sensor falsification visible to the DMs: they step in."""
    attack = AttackSpec(id=1, kind=AttackKind.INTEGRITY_SCA,
                        injection_point=InjectionPoint.SENSOR_TO_CONTROLLER,
                        waveform=Waveform(magnitude=-0.6), window=(6.0, 10.0))
    return ScenarioConfig(name="stealthy-intervention", duration=12.0,
                          disturbances=[HAZARD_DISTURBANCE], attacks=[attack])


def stealthy_futile() -> ScenarioConfig:
    """Fake hazard reports on a healthy plant."""
    attack = AttackSpec(id=1, kind=AttackKind.STEALTHY, window=(3.0, 5.0),
                        dm_targets=[NodeId.HMI, NodeId.LOGSERVER],
                        report_policy=ReportPolicy.FAKE_UNSAFE,
                        report_waveform=Waveform(magnitude=0.6))
    return ScenarioConfig(name="stealthy-futile", duration=8.0, attacks=[attack])


def stealthy_hazard() -> ScenarioConfig:
    """Real sensor falsification hidden behind frozen reports."""
    attack = AttackSpec(id=1, kind=AttackKind.STEALTHY,
                        injection_point=InjectionPoint.SENSOR_TO_CONTROLLER,
                        waveform=Waveform(magnitude=-0.6), window=(6.0, 10.0),
                        dm_targets=[NodeId.HMI, NodeId.LOGSERVER],
                        report_policy=ReportPolicy.FREEZE_LAST_GOOD)
    return ScenarioConfig(name="stealthy-hazard", duration=12.0,
                          disturbances=[HAZARD_DISTURBANCE], attacks=[attack])


# -- DoS ------------------------------------------------------------------------------

def dos_flood(rate: float = 1200.0) -> ScenarioConfig:
    attack = AttackSpec(id=1, kind=AttackKind.DOS, window=(2.0, 4.0), dos_rate=rate,
                        vector=[AttackStep(offset=-0.1, from_node=NodeId.ATTACKER,
                                           to_node=NodeId.CONTROLLER, effect=StepEffect.PAYLOAD)])
    return ScenarioConfig(name="dos-flood", duration=6.0, attacks=[attack])


def dos_baseline() -> ScenarioConfig:
    return ScenarioConfig(name="dos-baseline", duration=6.0)


# -- dataset quality run ------------------------------------------------------------------

def quality_suite(seed: int = 7) -> ScenarioConfig:
    grid = AttackGrid(
        kinds=[AttackKind.INTEGRITY_SCA, AttackKind.INTEGRITY_DM, AttackKind.STEALTHY,
               AttackKind.DOS],
        actions=[AttackAction.MODIFY],
        waveform_kinds=[WaveformKind.STEP, WaveformKind.RAMP, WaveformKind.PULSE],
        magnitudes=[0.05],
        rate=0.05,
        window_length=2.0,
        gap=1.0,
        start=1.0,
        zero_day_holdout=[ZeroDayCombo(injection_point=InjectionPoint.ACTUATOR_CMD,
                                       waveform_kind=WaveformKind.PULSE)],
        zero_day_count=1,
    )
    return ScenarioConfig(name="quality-suite", duration=60.0, seed=seed,
                          plant={"noise_std": 0.001}, attack_grid=grid, attack_limit=10)
