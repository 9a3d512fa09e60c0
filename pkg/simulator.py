"""
Scenario timeline: the closed loop, the decision-making nodes and the
attack engine on one discrete-event clock.

Each sample instant t_k runs the report (controller -> DMs) before the poll
(sensor -> controller -> actuator). The plant is advanced lazily to t_k by
whichever of the two comes first.
"""

import logging
import math
from typing import Dict, List, Optional

import pandas as pd

from attacks import AttackEngine, AttackSpec, FailsafeMode, issue_console_action
from config import ScenarioConfig, scenario_attacks
from control import (ControlMode, ControlRangeError, initial_state, manual_write, pi_update,
                     safety_check, set_control_mode)
from hostlog import HostEventKind, HostLog, SessionAction, operator_session
from netsim import (DM_NODES, FnCode, Frame, IrregularKind, NetworkSimulator, NodeId, Register,
                    TrafficHandler)
from plant import apply_fault_event, integrate, measure, steady_state
from utils import stream_rng

logger = logging.getLogger(__name__)

TRUTH_COLUMNS = ("t", "u", "y", "d", "auto_flag", "attack_id", "mode",
                 "y_true", "u_true", "c_a", "hazard")


class SimulationResult:
    """Immutable outputs of one scenario run."""

    def __init__(self, cfg: ScenarioConfig, attacks: List[AttackSpec], truth: pd.DataFrame,
                 captures: List[Dict], host: List[Dict], interventions: List[Dict],
                 trips: List[Dict], mode_schedule: List[Dict]):
        self.cfg = cfg
        self.attacks = attacks
        self.truth = truth
        self.captures = captures
        self.host = host
        self.interventions = interventions
        self.trips = trips
        self.mode_schedule = mode_schedule

    @property
    def physical(self) -> pd.DataFrame:
        return self.truth[["t", "u", "y", "d", "auto_flag", "attack_id", "mode"]].copy()


class TestbedSimulator(TrafficHandler):
    """
    One scenario from configuration to labelled raw logs.

    Args:
        cfg: Validated scenario
        attacks: Attack plan; defaults to the scenario's explicit or planned attacks
    """

    __test__ = False

    def __init__(self, cfg: ScenarioConfig, attacks: Optional[List[AttackSpec]] = None):
        self.cfg = cfg
        self.params = cfg.plant
        self.ctl_cfg = cfg.controller
        self.period = cfg.controller.sample_period
        self.n_samples = int(math.ceil(round(cfg.duration / self.period, 9)))
        self.steps = int(round(self.period / self.params.dt))
        self.attacks = list(attacks) if attacks is not None else scenario_attacks(cfg)

        self.noise_rng = stream_rng(cfg.seed, "noise")
        self.hostlog = HostLog((0.0, cfg.duration))
        self.net = NetworkSimulator(cfg.traffic, (0.0, cfg.duration), hostlog=self.hostlog,
                                    rng=stream_rng(cfg.seed, "jitter"))
        self.engine = AttackEngine(self.net, self.hostlog, self.period,
                                   setpoint=cfg.controller.setpoint,
                                   u_limits=(cfg.controller.u_min, cfg.controller.u_max),
                                   controller_output=lambda: self.u_issued,
                                   rtos_priority=cfg.controller.rtos_priority)

        self.plant = steady_state(self.params, cfg.initial_c_a0)
        self.ctl = initial_state(self.ctl_cfg)
        self.u_issued = self.ctl.last_u
        self.u_applied = self.ctl.last_u
        self.ctl_input: Optional[float] = None
        self.ctl_last_y: float = self.plant.c_a

        self.samples: List[Dict] = []
        self.hmi_hold_until = -math.inf
        self.interventions: List[Dict] = []
        self.trips: List[Dict] = []
        self.mode_schedule: List[Dict] = [{"at": 0.0, "mode": self.plant.mode.value}]
        self._polls = 0

        self._faults = self._by_tick(cfg.faults)
        self._disturbances = self._by_tick(cfg.disturbances)

    def _tick(self, t: float) -> int:
        return int(math.ceil(round(t / self.period, 9)))

    def _by_tick(self, events) -> Dict[int, List]:
        grouped: Dict[int, List] = {}
        for event in sorted(events, key=lambda e: e.at):
            grouped.setdefault(self._tick(event.at), []).append(event)
        return grouped

    def t_of(self, k: int) -> float:
        return round(k * self.period, 9)

    # -- plant ---------------------------------------------------------

    def _ensure_sample(self, k: int) -> Dict:
        """Advance the plant to t_k and take the sample (idempotent)."""
        while len(self.samples) <= k:
            self._take_sample(len(self.samples))
        return self.samples[k]

    def _take_sample(self, k: int) -> None:
        t = self.t_of(k)
        if k > 0:
            self.plant = integrate(self.plant, self.u_applied, self.params, self.steps)
            self.plant = self.plant.model_copy(update={"t": t})
        for fault in self._faults.get(k, []):
            self.plant = apply_fault_event(self.plant, fault, self.params)
            self.mode_schedule.append({"at": t, "mode": self.plant.mode.value})
        for event in self._disturbances.get(k, []):
            self.plant = self.plant.model_copy(update={"c_a0": event.c_a0})
            logger.info("Disturbance at t=%.3f: c_a0 -> %.4f", t, event.c_a0)

        y_meas = measure(self.plant, self.noise_rng, self.params)
        y_view, y_label = self.engine.dm_view(NodeId.HMI, Register.Y, y_meas, t)
        u_view, u_label = self.engine.dm_view(NodeId.HMI, Register.U, self.u_issued, t)
        y_rec = self.samples[-1]["y"] if y_view is None and self.samples else y_view
        if y_rec is None:
            y_rec = y_meas
        u_rec = u_view if u_label and u_view is not None else self.u_applied

        active = self.engine.active_ids(t)
        self.samples.append({
            "t": t,
            "u": u_rec,
            "y": y_rec,
            "d": self.plant.c_a0,
            "auto_flag": False,
            "attack_id": min(active) if active else 0,
            "mode": self.plant.mode.value,
            "y_true": y_meas,
            "u_true": self.u_applied,
            "c_a": self.plant.c_a,
            "hazard": self.plant.c_a > self.ctl_cfg.haz_threshold,
        })

    # -- traffic handler -------------------------------------------------

    def on_report(self, net: NetworkSimulator, ts: float) -> None:
        sample = self._ensure_sample(self._tick(ts))
        y, u = sample["y_true"], self.u_issued
        self.hostlog.log(ts, NodeId.CONTROLLER, HostEventKind.PROCESS_DATA, "historian",
                         f"y={y:.9g} u={u:.9g} mode={self.ctl.control_mode.value}")
        for dm in DM_NODES:
            net.send(ts, NodeId.CONTROLLER, dm, FnCode.WRITE, Register.Y, y)
            net.send(ts, NodeId.CONTROLLER, dm, FnCode.WRITE, Register.U, u)

    def on_poll(self, net: NetworkSimulator, ts: float) -> None:
        k = self._polls
        self._polls += 1
        if k >= self.n_samples:
            return
        sample = self._ensure_sample(k)

        self.ctl_input = None
        net.send(ts, NodeId.SENSOR, NodeId.CONTROLLER, FnCode.READ, Register.Y, sample["y_true"])
        y = self.ctl_input

        auto, tripped_now = False, False
        if not self.ctl.tripped and y is not None:
            tripped_now, self.ctl = safety_check(y, self.ctl_cfg, self.ctl)
        if self.ctl.tripped:
            if tripped_now:
                net.inject_irregular_event(IrregularKind.SAFETY_TRIP_BCAST, ts, value=y,
                                           actor="safety-task")
                self.trips.append({"t": ts, "y": y, "c_a": sample["c_a"]})
            u = 0.0
        elif self.ctl.control_mode is ControlMode.MANUAL:
            u = self.ctl.last_u
        elif y is None:
            if self.engine.failsafe_at(ts) is FailsafeMode.FAIL_CLOSED:
                u = self.ctl_cfg.u_min
            else:
                u = self.ctl.last_u
            self.ctl = self.ctl.model_copy(update={"last_u": u})
            logger.debug("No sensor input at t=%.3f, failsafe output %.4f", ts, u)
        else:
            u, self.ctl = pi_update(y, self.ctl_cfg, self.ctl)
            auto = True
        if y is not None:
            self.ctl_last_y = y

        sample["auto_flag"] = auto
        self.u_issued = u
        net.send(ts, NodeId.CONTROLLER, NodeId.ACTUATOR, FnCode.WRITE, Register.U, u)

    # -- receivers -------------------------------------------------------

    def _controller_rx(self, frame: Frame) -> None:
        if frame.src is NodeId.SENSOR and frame.addr == Register.Y:
            self.ctl_input = frame.value
            return
        if frame.fn_code is not FnCode.WRITE:
            return
        if frame.addr == Register.MODE:
            mode = ControlMode.MANUAL if frame.value >= 0.5 else ControlMode.AUTO
            self.ctl = set_control_mode(self.ctl, mode, self.ctl_cfg, actor=frame.src.value,
                                        y=self.ctl_last_y)
        elif frame.addr == Register.U:
            try:
                self.ctl = manual_write(self.ctl, frame.value, self.ctl_cfg)
            except ControlRangeError as exc:
                logger.warning("Rejected command from %s: %s", frame.src.value, exc)
        elif frame.addr == Register.SETPOINT:
            self.ctl_cfg = self.ctl_cfg.model_copy(update={"setpoint": frame.value})
            logger.info("Setpoint set to %.4f by %s", frame.value, frame.src.value)

    def _actuator_rx(self, frame: Frame) -> None:
        if frame.fn_code is FnCode.WRITE and frame.addr == Register.U:
            self.u_applied = max(frame.value, 0.0)

    def _hmi_rx(self, frame: Frame) -> None:
        now = self.net.now
        if frame.fn_code is FnCode.TRIP_BCAST:
            return
        if frame.src is not NodeId.CONTROLLER or frame.fn_code is not FnCode.WRITE:
            return
        reg = Register(frame.addr)
        self.hostlog.log(now, NodeId.HMI, HostEventKind.PROCESS_DATA, "hmi-historian",
                         f"reg={reg.name} value={frame.value:.9g}", frame.attack_id)
        if reg is Register.Y and frame.value > self.ctl_cfg.haz_threshold:
            self._intervene(now, frame)

    def _logserver_rx(self, frame: Frame) -> None:
        now = self.net.now
        if frame.src is not NodeId.CONTROLLER or frame.fn_code is not FnCode.WRITE:
            return
        reg = Register(frame.addr)
        self.hostlog.log(now, NodeId.LOGSERVER, HostEventKind.PROCESS_DATA, "log-collector",
                         f"reg={reg.name} value={frame.value:.9g}", frame.attack_id)
        if reg is Register.Y and frame.value > self.ctl_cfg.haz_threshold:
            self.hostlog.log(now, NodeId.LOGSERVER, HostEventKind.SYS_ERROR, "log-collector",
                             f"alarm=high_concentration y={frame.value:.9g}", frame.attack_id)

    def _intervene(self, now: float, frame: Frame) -> None:
        """HMI supervisor: close the valve and hold it shut."""
        if not self.cfg.dm.supervise or self.ctl.tripped or now < self.hmi_hold_until:
            return
        sample = self.samples[min(int(now / self.period + 1e-9), len(self.samples) - 1)]
        hold = self.cfg.dm.intervention_hold
        self.hmi_hold_until = now + hold
        futile = sample["c_a"] <= self.ctl_cfg.haz_threshold
        self.interventions.append({"t": now, "y_reported": frame.value, "c_a": sample["c_a"],
                                   "futile": futile, "attack_id": frame.attack_id})
        if futile:
            logger.warning("Futile DM intervention at t=%.3f (true c_a %.4f)", now, sample["c_a"])
        else:
            logger.info("DM intervention at t=%.3f (y=%.4f)", now, frame.value)

        self.net.inject_irregular_event(IrregularKind.MODE_SWITCH_TRAFFIC, now, value=1.0,
                                        actor="dm-supervisor")
        self.hostlog.log(now, NodeId.HMI, HostEventKind.CMD_ISSUED, "dm-supervisor",
                         f"reg=U value={self.ctl_cfg.u_min:.9g}")
        self.net.send(now, NodeId.HMI, NodeId.CONTROLLER, FnCode.WRITE, Register.U,
                      self.ctl_cfg.u_min)
        release = round(now + hold, 9)
        if release <= self.cfg.duration:
            self.net.schedule(release, NodeId.HMI, lambda t: self.net.inject_irregular_event(
                IrregularKind.MODE_SWITCH_TRAFFIC, t, value=0.0, actor="dm-supervisor"))

    # -- run -------------------------------------------------------------

    def _schedule_operations(self) -> None:
        net = self.net

        def issue(action: SessionAction, attack_id: int) -> None:
            issue_console_action(net, action, attack_id)

        for session in self.cfg.sessions:
            operator_session(session, self.hostlog, net, issue)
        for event in self.cfg.irregular:
            if event.kind is IrregularKind.OPERATOR_MANUAL_POLL:
                net.schedule(event.at, NodeId.HMI, lambda t, e=event: net.inject_irregular_event(
                    e.kind, t, value=self.samples[-1]["y_true"] if self.samples else self.plant.c_a,
                    actor=e.actor))
            else:
                net.schedule(event.at, NodeId.HMI, lambda t, e=event: net.inject_irregular_event(
                    e.kind, t, value=e.value, actor=e.actor))

    def run(self) -> SimulationResult:
        cfg = self.cfg
        logger.info("Running scenario %s: %.1f min, %d attacks, seed %d",
                    cfg.name, cfg.duration, len(self.attacks), cfg.seed)
        self.net.receivers = {
            NodeId.CONTROLLER: self._controller_rx,
            NodeId.ACTUATOR: self._actuator_rx,
            NodeId.HMI: self._hmi_rx,
            NodeId.LOGSERVER: self._logserver_rx,
        }
        for spec in self.attacks:
            self.engine.install(spec)
        self._schedule_operations()
        self.net.run_traffic_schedule(cfg.traffic, (0.0, cfg.duration), handler=self)
        self.net.run(until=cfg.duration)
        self._ensure_sample(self.n_samples - 1)
        self.engine.finalize()

        truth = pd.DataFrame(self.samples[:self.n_samples], columns=list(TRUTH_COLUMNS))
        logger.info("Scenario %s done: %d samples, %d frames, %d host events, %d trips, "
                    "%d interventions", cfg.name, len(truth), len(self.net.captures),
                    len(self.hostlog.records()), len(self.trips), len(self.interventions))
        return SimulationResult(cfg, self.attacks, truth, self.net.sorted_captures(),
                                self.hostlog.records(), self.interventions, self.trips,
                                self.mode_schedule)


def simulate(cfg: ScenarioConfig, attacks: Optional[List[AttackSpec]] = None) -> SimulationResult:
    return TestbedSimulator(cfg, attacks).run()
