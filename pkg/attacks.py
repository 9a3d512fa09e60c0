"""
Attack injection engine.

Integrity attacks on every injection point, stealthy attacks that decouple
the control path from what the decision-making nodes see, DoS with an
RTOS-priority capacity model, multi-step attack vectors, and grid-based
attack planning with zero-day hold-outs.
"""

import bisect
import logging
import math
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from hostlog import HostEventKind, HostLog, OperatorSession, SessionAction, operator_session
from netsim import (ADJACENT, DM_NODES, Delivery, DeliveryStatus, FnCode, Frame, Interceptor,
                    IrregularKind, NetworkSimulator, NodeId, Register)
from utils import TestbedError, stream_rng

logger = logging.getLogger(__name__)


class AttackConfigError(TestbedError, ValueError):
    pass


class PlanningError(TestbedError):
    pass


class AttackKind(str, Enum):
    INTEGRITY_SCA = "INTEGRITY_SCA"
    INTEGRITY_DM = "INTEGRITY_DM"
    STEALTHY = "STEALTHY"
    DOS = "DOS"
    ZERO_DAY_VARIANT = "ZERO_DAY_VARIANT"


class InjectionPoint(str, Enum):
    SENSOR_TO_CONTROLLER = "SENSOR_TO_CONTROLLER"
    CONTROLLER_PARAM = "CONTROLLER_PARAM"
    ACTUATOR_CMD = "ACTUATOR_CMD"
    SENSOR_TO_DM = "SENSOR_TO_DM"
    DM_TO_ACTUATOR = "DM_TO_ACTUATOR"


SCA_POINTS = (InjectionPoint.SENSOR_TO_CONTROLLER, InjectionPoint.CONTROLLER_PARAM,
              InjectionPoint.ACTUATOR_CMD)
DM_POINTS = (InjectionPoint.SENSOR_TO_DM, InjectionPoint.DM_TO_ACTUATOR)

# Nodes an attacker must reach to tamper with each stream
POINT_OWNERS = {
    InjectionPoint.SENSOR_TO_CONTROLLER: {NodeId.CONTROLLER},
    InjectionPoint.CONTROLLER_PARAM: {NodeId.CONTROLLER},
    InjectionPoint.ACTUATOR_CMD: {NodeId.CONTROLLER},
    InjectionPoint.SENSOR_TO_DM: {NodeId.CONTROLLER, NodeId.HMI, NodeId.LOGSERVER},
    InjectionPoint.DM_TO_ACTUATOR: {NodeId.CONTROLLER, NodeId.HMI},
}


class AttackAction(str, Enum):
    DROP = "DROP"
    REPLAY = "REPLAY"
    MODIFY = "MODIFY"


class WaveformKind(str, Enum):
    STEP = "STEP"
    PULSE = "PULSE"
    RAMP = "RAMP"
    STEALTH_RAMP = "STEALTH_RAMP"


class EntryLayer(str, Enum):
    PHYSICAL = "PHYSICAL"
    CONTROL = "CONTROL"
    APPLICATION = "APPLICATION"


class EntryMethod(str, Enum):
    INTRUSION = "INTRUSION"
    REMOTE = "REMOTE"


class StepEffect(str, Enum):
    RECON = "RECON"
    CREDENTIAL = "CREDENTIAL"
    PIVOT = "PIVOT"
    PAYLOAD = "PAYLOAD"


class ReportPolicy(str, Enum):
    FREEZE_LAST_GOOD = "FREEZE_LAST_GOOD"
    SAFE_ENVELOPE_REPLAY = "SAFE_ENVELOPE_REPLAY"
    FAKE_UNSAFE = "FAKE_UNSAFE"


class FailsafeMode(str, Enum):
    LAST_KNOWN_GOOD = "LAST_KNOWN_GOOD"
    FAIL_CLOSED = "FAIL_CLOSED"


class Waveform(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: WaveformKind = WaveformKind.STEP
    magnitude: float = 0.0
    duration: Optional[float] = Field(None, gt=0)
    rate: float = 0.0
    threshold: float = Field(0.01, gt=0)


class AttackStep(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    offset: float = Field(0.0, le=0, description="Minutes relative to the window start")
    entry_layer: EntryLayer = EntryLayer.CONTROL
    entry_method: EntryMethod = EntryMethod.INTRUSION
    from_node: NodeId
    to_node: NodeId
    effect: StepEffect
    count: int = Field(3, ge=0, description="Failed logins before success (CREDENTIAL)")
    account: str = "operator1"

    @model_validator(mode="after")
    def _check_edge(self) -> "AttackStep":
        if (self.from_node, self.to_node) not in ADJACENT:
            raise ValueError(f"no link {self.from_node.value} -> {self.to_node.value}")
        return self


class AttackSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: int = Field(..., gt=0)
    kind: AttackKind
    injection_point: Optional[InjectionPoint] = None
    action: AttackAction = AttackAction.MODIFY
    waveform: Waveform = Field(default_factory=Waveform)
    window: Tuple[float, float]
    vector: List[AttackStep] = Field(default_factory=list)
    dm_targets: List[NodeId] = Field(default_factory=list)
    dos_rate: Optional[float] = Field(None, gt=0)
    zero_day: bool = False
    variant_of: Optional[AttackKind] = Field(None, description="Kind a ZERO_DAY_VARIANT behaves as")
    report_policy: ReportPolicy = ReportPolicy.FREEZE_LAST_GOOD
    report_waveform: Waveform = Field(default_factory=lambda: Waveform(magnitude=0.6))
    lookback: Optional[float] = Field(None, gt=0)
    failsafe: FailsafeMode = FailsafeMode.LAST_KNOWN_GOOD
    log_wipe: bool = False
    session: Optional[OperatorSession] = None

    @field_validator("dm_targets")
    @classmethod
    def _sorted_targets(cls, value: List[NodeId]) -> List[NodeId]:
        for node in value:
            if node not in DM_NODES:
                raise ValueError(f"{node.value} is not a decision-making node")
        return sorted(set(value), key=lambda n: n.value)

    @model_validator(mode="after")
    def _check_spec(self) -> "AttackSpec":
        check_consistency(self)
        return self

    @property
    def t_start(self) -> float:
        return self.window[0]

    @property
    def t_end(self) -> float:
        return self.window[1]

    @property
    def length(self) -> float:
        return self.window[1] - self.window[0]

    @property
    def base_kind(self) -> AttackKind:
        """Kind whose installer runs; a zero-day variant keeps its underlying kind."""
        if self.kind is AttackKind.ZERO_DAY_VARIANT and self.variant_of is not None:
            return self.variant_of
        return self.kind

    @property
    def partial_stealthy(self) -> bool:
        return self.base_kind is AttackKind.STEALTHY and len(self.dm_targets) < len(DM_NODES)

    @property
    def reaches_hmi(self) -> bool:
        return any(step.to_node is NodeId.HMI for step in self.vector)

    def catalog_entry(self) -> Dict:
        return self.model_dump(mode="json")


def check_consistency(spec: AttackSpec) -> None:
    """Kind, injection point, action and vector must agree."""
    start, end = spec.window
    if start < 0 or not end > start:
        raise AttackConfigError(f"attack {spec.id}: window {spec.window} is empty or negative")
    point = spec.injection_point

    if spec.kind is AttackKind.INTEGRITY_SCA and point not in SCA_POINTS:
        raise AttackConfigError(f"attack {spec.id}: INTEGRITY_SCA needs a controller-path point, got {point}")
    if spec.kind is AttackKind.INTEGRITY_DM and point not in DM_POINTS:
        raise AttackConfigError(f"attack {spec.id}: INTEGRITY_DM needs a decision-making point, got {point}")
    if spec.kind is AttackKind.ZERO_DAY_VARIANT and point is None:
        raise AttackConfigError(f"attack {spec.id}: ZERO_DAY_VARIANT needs an injection point")
    if spec.variant_of is not None:
        if spec.kind is not AttackKind.ZERO_DAY_VARIANT:
            raise AttackConfigError(f"attack {spec.id}: variant_of is only for ZERO_DAY_VARIANT")
        if spec.variant_of in (AttackKind.ZERO_DAY_VARIANT, AttackKind.DOS):
            raise AttackConfigError(f"attack {spec.id}: cannot be a variant of {spec.variant_of.value}")
    if spec.base_kind is AttackKind.STEALTHY:
        if not spec.dm_targets:
            raise AttackConfigError(f"attack {spec.id}: STEALTHY needs at least one DM target")
        if point is not None and point not in SCA_POINTS:
            raise AttackConfigError(f"attack {spec.id}: stealthy true manipulation must sit on the controller path")
    if spec.kind is AttackKind.DOS and spec.dos_rate is None:
        raise AttackConfigError(f"attack {spec.id}: DOS needs dos_rate")
    if point is InjectionPoint.CONTROLLER_PARAM and spec.action is not AttackAction.MODIFY:
        raise AttackConfigError(f"attack {spec.id}: controller parameters can only be modified")
    if spec.session is not None:
        if point is not InjectionPoint.DM_TO_ACTUATOR:
            raise AttackConfigError(f"attack {spec.id}: a command session needs DM_TO_ACTUATOR")
        if not (start <= spec.session.login and spec.session.logout <= end):
            raise AttackConfigError(f"attack {spec.id}: command session outside the attack window")

    duration = spec.waveform.duration
    if duration is not None and duration > spec.length + 1e-9:
        raise AttackConfigError(f"attack {spec.id}: waveform duration exceeds the window")

    if spec.vector:
        steps = spec.vector
        for prev, step in zip(steps, steps[1:]):
            if not {prev.from_node, prev.to_node} & {step.from_node, step.to_node}:
                raise AttackConfigError(f"attack {spec.id}: broken pivot chain at {step.from_node.value}")
            if not step.offset > prev.offset:
                raise AttackConfigError(f"attack {spec.id}: vector step offsets must increase")
        if steps[-1].effect is not StepEffect.PAYLOAD:
            raise AttackConfigError(f"attack {spec.id}: a vector ends with its PAYLOAD step")
        owners = POINT_OWNERS.get(point, {NodeId.CONTROLLER}) if point else {NodeId.CONTROLLER}
        if steps[-1].to_node not in owners:
            raise AttackConfigError(
                f"attack {spec.id}: vector ends on {steps[-1].to_node.value}, which does not own {point}")
        if start + steps[0].offset < 0:
            raise AttackConfigError(f"attack {spec.id}: vector starts before t=0")


def design_waveform(w: Waveform, t: float, sample_period: float = 0.1) -> float:
    """
    Payload offset of a waveform t minutes into its attack window.

    Negative t contributes nothing. STEALTH_RAMP limits its slope so that
    consecutive samples never differ by the detection threshold.
    """
    if t < 0:
        return 0.0
    if w.kind is WaveformKind.STEP:
        return w.magnitude
    if w.kind is WaveformKind.PULSE:
        limit = w.duration if w.duration is not None else math.inf
        return w.magnitude if t <= limit + 1e-12 else 0.0

    rate = w.rate
    if w.kind is WaveformKind.STEALTH_RAMP:
        max_rate = w.threshold * (1.0 - 1e-6) / sample_period
        rate = math.copysign(min(abs(rate), max_rate), rate)
    value = rate * t
    if w.magnitude:
        cap = abs(w.magnitude)
        value = min(max(value, -cap), cap)
    return value


class StreamInterceptor(Interceptor):
    """
    Attack interceptor on one link (and optionally one register).

    Installed at scenario start so it can build the link history, it stays
    transparent until armed and then acts inside the attack window.
    """

    def __init__(self, spec: AttackSpec, src: NodeId, dst: NodeId, addr: Optional[int],
                 action: AttackAction, waveform: Waveform, sample_period: float = 0.1,
                 observe_samples: bool = False,
                 txn_source: Optional[Callable[[NodeId], int]] = None):
        self.spec = spec
        self.attack_id = spec.id
        self.src, self.dst, self.addr = src, dst, addr
        self.action = action
        self.waveform = waveform
        self.sample_period = sample_period
        self.observe_samples = observe_samples
        self.txn_source = txn_source
        self.armed_at: Optional[float] = None
        self._hist_ts: List[float] = []
        self._hist_val: List[float] = []

    def __repr__(self) -> str:
        return (f"StreamInterceptor(id={self.attack_id}, {self.src.value}->{self.dst.value}, "
                f"addr={self.addr}, {self.action.value})")

    def matches(self, frame: Frame) -> bool:
        return (frame.src == self.src and frame.dst == self.dst
                and (self.addr is None or frame.addr == self.addr))

    def arm(self, t: float) -> None:
        if self.armed_at is None:
            self.armed_at = t

    def active(self, ts: float) -> bool:
        if self.armed_at is None:
            return False
        start = max(self.armed_at, self.spec.t_start)
        return start - 1e-9 <= ts <= self.spec.t_end + 1e-9

    def observe(self, ts: float, value: float) -> None:
        if not self._hist_ts or ts > self._hist_ts[-1]:
            self._hist_ts.append(ts)
            self._hist_val.append(value)

    def recall(self, ts: float) -> Optional[float]:
        """Latest observed value at or before ts."""
        idx = bisect.bisect_right(self._hist_ts, ts + 1e-9) - 1
        return self._hist_val[idx] if idx >= 0 else None

    def lookback(self) -> float:
        return self.spec.lookback or self.spec.length

    def transform(self, value: float, ts: float) -> Optional[float]:
        """Payload under attack; None drops the frame."""
        if self.action is AttackAction.DROP:
            return None
        if self.action is AttackAction.REPLAY:
            past = self.recall(ts - self.lookback())
            return value if past is None else past
        return value + design_waveform(self.waveform, ts - self.spec.t_start, self.sample_period)

    def view(self, value: float, ts: float) -> Optional[float]:
        """Value the receiver holds at a sample instant, with or without a frame."""
        if self.observe_samples:
            self.observe(ts, value)
        if not self.active(ts):
            return value
        return self.transform(value, ts)

    def intercept(self, frame: Frame) -> Delivery:
        self.observe(frame.ts, frame.value)
        if not self.active(frame.ts):
            return Delivery(status=DeliveryStatus.DELIVERED, frame=frame, at=frame.ts)
        value = self.transform(frame.value, frame.ts)
        if value is None:
            dropped = frame.model_copy(update={"attack_id": self.attack_id})
            return Delivery(status=DeliveryStatus.DROPPED, frame=dropped, at=frame.ts)
        update = {"value": value, "attack_id": self.attack_id}
        if self.action is AttackAction.REPLAY and self.txn_source is not None:
            update["txn"] = self.txn_source(frame.src)
        return Delivery(status=DeliveryStatus.DELIVERED, frame=frame.model_copy(update=update),
                        at=frame.ts)


class ActuatorInterceptor(StreamInterceptor):
    """Actuator commands stay physical: a valve cannot open below zero."""

    def transform(self, value, ts):
        out = super().transform(value, ts)
        return None if out is None else max(out, 0.0)


class ReportInterceptor(StreamInterceptor):
    """Fake data for one decision-making node under a stealthy attack."""

    def __init__(self, spec: AttackSpec, dm: NodeId, reg: Register, policy: ReportPolicy,
                 sample_period: float = 0.1):
        super().__init__(spec, NodeId.CONTROLLER, dm, int(reg), AttackAction.MODIFY,
                         spec.report_waveform, sample_period, observe_samples=True)
        self.policy = policy

    def transform(self, value, ts):
        start = self.spec.t_start
        if self.policy is ReportPolicy.FAKE_UNSAFE:
            return value + design_waveform(self.waveform, ts - start, self.sample_period)
        if self.policy is ReportPolicy.FREEZE_LAST_GOOD:
            frozen = self.recall(start - 1e-6)
            return value if frozen is None else frozen
        period = self.spec.lookback or min(self.spec.length, start)
        if period <= 0:
            frozen = self.recall(start - 1e-6)
            return value if frozen is None else frozen
        # cycle through the last `period` minutes before the attack
        phase = (ts - start) % period
        past = self.recall(round(start - period + phase, 9))
        return value if past is None else past


class StarvationInterceptor(Interceptor):
    """
    Frames served late or not at all while the controller is flooded.

    Load below capacity only delays; beyond capacity a deterministic
    fraction (rate - capacity) / rate is dropped.
    """

    def __init__(self, spec: AttackSpec, links: Sequence[Tuple[NodeId, NodeId]], capacity: float,
                 service_time: float, on_drop: Optional[Callable[[Frame], None]] = None):
        self.spec = spec
        self.attack_id = spec.id
        self.links = set(links)
        self.load = spec.dos_rate / capacity
        self.drop_fraction = max(0.0, 1.0 - 1.0 / self.load) if self.load > 1 else 0.0
        self.delay = service_time * min(self.load, 1.0)
        self.on_drop = on_drop
        self.dropped = 0
        self._acc = 0.0

    def matches(self, frame: Frame) -> bool:
        return (frame.src, frame.dst) in self.links and frame.fn_code is not FnCode.TRIP_BCAST

    def intercept(self, frame: Frame) -> Delivery:
        if not self.spec.t_start - 1e-9 <= frame.ts <= self.spec.t_end + 1e-9:
            return Delivery(status=DeliveryStatus.DELIVERED, frame=frame, at=frame.ts)
        labelled = frame.model_copy(update={"attack_id": self.attack_id})
        self._acc += self.drop_fraction
        if self._acc >= 1.0 - 1e-12:
            self._acc -= 1.0
            self.dropped += 1
            if self.on_drop is not None:
                self.on_drop(labelled)
            return Delivery(status=DeliveryStatus.DROPPED, frame=labelled, at=frame.ts)
        if self.delay > 0:
            return Delivery(status=DeliveryStatus.DELAYED, frame=labelled,
                            at=round(frame.ts + self.delay, 9))
        return Delivery(status=DeliveryStatus.DELIVERED, frame=labelled, at=frame.ts)


class VectorTrace(BaseModel):
    """What execute_vector scheduled for one attack."""

    attack_id: int
    step_times: List[float]
    arm_time: float


class AttackEngine:
    """
    Installs scheduled attacks on a running scenario.

    Args:
        net: Network of the scenario; interceptors and timed actions go here
        hostlog: Host logs receiving vector artifacts and starvation errors
        sample_period: Controller sample period (min)
        setpoint: Configured controller setpoint (CONTROLLER_PARAM baseline)
        u_limits: Actuator limits for injected commands
        controller_output: Returns the controller's current command
        rtos_priority: Control tasks never starve under DoS
    """

    def __init__(self, net: NetworkSimulator, hostlog: HostLog, sample_period: float = 0.1,
                 setpoint: float = 0.4625, u_limits: Tuple[float, float] = (0.0, 5.0),
                 controller_output: Callable[[], float] = lambda: 1.0,
                 rtos_priority: bool = True):
        self.net = net
        self.hostlog = hostlog
        self.sample_period = sample_period
        self.setpoint = setpoint
        self.u_limits = u_limits
        self.controller_output = controller_output
        self.rtos_priority = rtos_priority
        self.specs: Dict[int, AttackSpec] = {}
        self.interceptors: Dict[int, List[Interceptor]] = {}
        self.starvation: Dict[int, List[StarvationInterceptor]] = {}
        self.arm_times: Dict[int, float] = {}

    # -- installation --------------------------------------------------

    def install(self, spec: AttackSpec) -> List[Interceptor]:
        """Install one attack: interceptors now, vector and timed actions on the queue."""
        if spec.id in self.specs:
            raise AttackConfigError(f"duplicate attack id {spec.id}")
        self.specs[spec.id] = spec
        if spec.kind is AttackKind.DOS:
            installed = self.inject_dos(spec, spec.failsafe)
        elif spec.base_kind is AttackKind.STEALTHY:
            installed = self.inject_stealthy(spec, spec.waveform, spec.report_policy)
        else:
            installed = self.inject_integrity(spec)
        self.interceptors[spec.id] = installed

        if spec.vector:
            self.execute_vector(spec)
        else:
            self.arm(spec.id, spec.t_start)
        logger.info("Attack %d (%s %s) scheduled over [%.2f, %.2f]", spec.id, spec.kind.value,
                    spec.injection_point.value if spec.injection_point else "-", *spec.window)
        return installed

    def arm(self, attack_id: int, t: float) -> None:
        for interceptor in self.interceptors.get(attack_id, []):
            if isinstance(interceptor, StreamInterceptor):
                interceptor.arm(t)

    def inject_integrity(self, spec: AttackSpec) -> List[Interceptor]:
        """Interceptor (or command injection) for an integrity attack."""
        if spec.base_kind not in (AttackKind.INTEGRITY_SCA, AttackKind.INTEGRITY_DM,
                                  AttackKind.ZERO_DAY_VARIANT):
            raise AttackConfigError(f"attack {spec.id}: {spec.kind.value} is not an integrity attack")
        check_consistency(spec)
        return self._install_point(spec, spec.injection_point, spec.action, spec.waveform)

    def inject_stealthy(self, spec: AttackSpec, true_manipulation: Optional[Waveform],
                        report_policy: ReportPolicy) -> List[Interceptor]:
        """True manipulation on the control path plus fake reports to the DM targets."""
        if not spec.dm_targets:
            raise AttackConfigError(f"attack {spec.id}: stealthy attack without DM targets")
        installed: List[Interceptor] = []
        if spec.injection_point is not None and true_manipulation is not None:
            installed += self._install_point(spec, spec.injection_point, AttackAction.MODIFY,
                                             true_manipulation)
        regs = (Register.Y,) if report_policy is ReportPolicy.FAKE_UNSAFE else (Register.Y, Register.U)
        for dm in spec.dm_targets:
            for reg in regs:
                interceptor = ReportInterceptor(spec, dm, reg, report_policy, self.sample_period)
                self.net.add_interceptor(interceptor)
                installed.append(interceptor)
        return installed

    def inject_dos(self, spec: AttackSpec, failsafe: FailsafeMode) -> List[Interceptor]:
        """Flood the controller; reporting starves, control runs per RTOS priority."""
        if not spec.dos_rate or spec.dos_rate <= 0:
            raise AttackConfigError(f"attack {spec.id}: dos_rate must be positive")
        sched = self.net.schedule_cfg

        def starved(frame: Frame) -> None:
            task = "report" if frame.src is NodeId.CONTROLLER else "control"
            self.hostlog.log(frame.ts, NodeId.CONTROLLER, HostEventKind.SYS_ERROR, f"{task}-task",
                             f"task={task} state=starved dst={frame.dst.value}", spec.id)

        report_links = [(NodeId.CONTROLLER, dm) for dm in DM_NODES]
        installed = [StarvationInterceptor(spec, report_links, sched.capacity,
                                           sched.report_service_time, starved)]
        if not self.rtos_priority:
            installed.append(StarvationInterceptor(spec, [(NodeId.SENSOR, NodeId.CONTROLLER)],
                                                   sched.capacity, 0.0, starved))
        for interceptor in installed:
            self.net.add_interceptor(interceptor)
        self.starvation[spec.id] = installed

        n_frames = int(math.floor(spec.dos_rate * spec.length + 1e-9))
        for j in range(n_frames):
            ts = round(spec.t_start + j / spec.dos_rate, 9)
            self.net.schedule(ts, NodeId.ATTACKER, lambda t: self.net.send(
                t, NodeId.ATTACKER, NodeId.CONTROLLER, FnCode.READ, Register.Y, 0.0,
                attack_id=spec.id, dispatch=False))
        logger.info("DoS %d: %d flood frames, load %.2f, failsafe %s", spec.id, n_frames,
                    spec.dos_rate / sched.capacity, failsafe.value)
        return installed

    def _install_point(self, spec: AttackSpec, point: InjectionPoint, action: AttackAction,
                       waveform: Waveform) -> List[Interceptor]:
        installed: List[Interceptor] = []

        def add(interceptor: StreamInterceptor) -> None:
            self.net.add_interceptor(interceptor)
            installed.append(interceptor)

        if point is InjectionPoint.SENSOR_TO_CONTROLLER:
            add(StreamInterceptor(spec, NodeId.SENSOR, NodeId.CONTROLLER, int(Register.Y), action,
                                  waveform, self.sample_period, txn_source=self.net.next_txn))
        elif point is InjectionPoint.ACTUATOR_CMD:
            add(ActuatorInterceptor(spec, NodeId.CONTROLLER, NodeId.ACTUATOR, int(Register.U), action,
                                    waveform, self.sample_period, txn_source=self.net.next_txn))
        elif point is InjectionPoint.SENSOR_TO_DM:
            for dm in spec.dm_targets or DM_NODES:
                add(StreamInterceptor(spec, NodeId.CONTROLLER, dm, int(Register.Y), action,
                                      waveform, self.sample_period, txn_source=self.net.next_txn))
        elif point is InjectionPoint.DM_TO_ACTUATOR and action is not AttackAction.MODIFY:
            add(StreamInterceptor(spec, NodeId.HMI, NodeId.CONTROLLER, None, action, waveform,
                                  self.sample_period, txn_source=self.net.next_txn))
        elif point is InjectionPoint.DM_TO_ACTUATOR:
            self._schedule_command_injection(spec, waveform)
        else:
            self._schedule_setpoint_injection(spec, waveform)
        return installed

    # -- timed injections ---------------------------------------------

    def _window_samples(self, spec: AttackSpec) -> List[float]:
        first = math.ceil(round(spec.t_start / self.sample_period, 9))
        last = math.floor(round(spec.t_end / self.sample_period, 9))
        return [round(k * self.sample_period, 9) for k in range(first, last + 1)]

    def _injector_node(self, spec: AttackSpec) -> NodeId:
        if spec.vector and (spec.vector[-1].from_node, NodeId.CONTROLLER) in ADJACENT:
            return spec.vector[-1].from_node
        return NodeId.ATTACKER

    def _schedule_setpoint_injection(self, spec: AttackSpec, waveform: Waveform) -> None:
        src = self._injector_node(spec)
        written = {"value": self.setpoint}

        def write(t: float, value: float) -> None:
            if abs(value - written["value"]) > 1e-12:
                written["value"] = value
                self.net.send(t, src, NodeId.CONTROLLER, FnCode.WRITE, Register.SETPOINT, value,
                              attack_id=spec.id)

        for ts in self._window_samples(spec):
            self.net.schedule(ts, NodeId.ATTACKER, lambda t: self._if_armed(spec, t, lambda: write(
                t, self.setpoint + design_waveform(waveform, t - spec.t_start, self.sample_period))))
        restore = round(spec.t_end + self.sample_period / 2, 9)
        self.net.schedule(restore, NodeId.ATTACKER, lambda t: write(t, self.setpoint))

    def _schedule_command_injection(self, spec: AttackSpec, waveform: Waveform) -> None:
        if spec.session is not None:
            self._schedule_session(spec)
            return
        lo, hi = self.u_limits
        base = {"u": None}

        def issue(action: SessionAction, t: float) -> None:
            issue_console_action(self.net, action.model_copy(update={"ts": t}), spec.id)

        def step(t: float) -> None:
            if base["u"] is None:
                base["u"] = self.controller_output()
                issue(SessionAction(ts=t, kind=HostEventKind.MODE_SWITCH, mode="MANUAL"), t)
            u = base["u"] + design_waveform(waveform, t - spec.t_start, self.sample_period)
            issue(SessionAction(ts=t, kind=HostEventKind.CMD_ISSUED, value=min(max(u, lo), hi)), t)

        for ts in self._window_samples(spec):
            self.net.schedule(ts, NodeId.HMI, lambda t: self._if_armed(spec, t, lambda: step(t)))
        self.net.schedule(spec.t_end, NodeId.HMI, lambda t: issue(
            SessionAction(ts=t, kind=HostEventKind.MODE_SWITCH, mode="AUTO"), t)
            if base["u"] is not None else None)

    def _schedule_session(self, spec: AttackSpec) -> None:
        session = spec.session

        def issue(action: SessionAction, attack_id: int) -> None:
            issue_console_action(self.net, action, attack_id)

        if spec.reaches_hmi:
            # compromised console: the attacker drives a real operator session
            operator_session(session, self.hostlog, self.net, issue, attack_id=spec.id)
        else:
            for action in session.actions:
                self.net.schedule(action.ts, NodeId.HMI,
                                  lambda _t, a=action: issue(a, spec.id))

    def _if_armed(self, spec: AttackSpec, t: float, action: Callable[[], None]) -> None:
        armed_at = self.arm_times.get(spec.id, spec.t_start)
        if t + 1e-9 >= armed_at:
            action()

    # -- vectors -------------------------------------------------------

    def execute_vector(self, spec: AttackSpec) -> VectorTrace:
        """Schedule each step's artifacts; PAYLOAD arms the injection."""
        if not spec.vector:
            raise AttackConfigError(f"attack {spec.id}: empty attack vector")
        check_consistency(spec)
        times = []
        for step in spec.vector:
            ts = round(spec.t_start + step.offset, 9)
            times.append(ts)
            self.net.schedule(ts, step.from_node, lambda t, s=step: self._run_step(spec, s, t))
        arm_time = times[-1]
        self.arm_times[spec.id] = arm_time
        return VectorTrace(attack_id=spec.id, step_times=times, arm_time=arm_time)

    def _run_step(self, spec: AttackSpec, step: AttackStep, t: float) -> None:
        log, aid = self.hostlog, spec.id
        if step.effect is StepEffect.RECON:
            for port in range(3):
                self.net.send(t, step.from_node, step.to_node, FnCode.READ, port, 0.0,
                              attack_id=aid, dispatch=False)
            log.log(t, step.to_node, HostEventKind.SYS_ERROR, "netmon",
                    f"event=unexpected_connection src={step.from_node.value}", aid)
        elif step.effect is StepEffect.CREDENTIAL:
            for _ in range(step.count):
                log.log(t, step.to_node, HostEventKind.AUTH_FAIL, step.account,
                        f"src={step.from_node.value}", aid)
            log.log(t, step.to_node, HostEventKind.AUTH_LOGIN, step.account,
                    f"src={step.from_node.value}", aid)
        elif step.effect is StepEffect.PIVOT:
            log.log(t, step.to_node, HostEventKind.PROC_START, step.account,
                    f"proc=remote_shell parent={step.from_node.value}", aid)
        else:
            self.arm(aid, t)
            logger.info("Attack %d armed at t=%.3f", aid, t)

    # -- queries -------------------------------------------------------

    def dm_view(self, dm: NodeId, reg: Register, value: float, ts: float) -> Tuple[Optional[float], int]:
        """
        Value a decision-making node holds for a register at a sample instant.

        Returns:
            (value or None when the stream is dropped, attack id that shaped it)
        """
        label = 0
        for interceptors in self.interceptors.values():
            for interceptor in interceptors:
                if not isinstance(interceptor, StreamInterceptor):
                    continue
                if interceptor.src is not NodeId.CONTROLLER or interceptor.dst is not dm:
                    continue
                if interceptor.addr is not None and interceptor.addr != int(reg):
                    continue
                was_active = interceptor.active(ts)
                value = interceptor.view(value, ts)
                if was_active:
                    label = interceptor.attack_id
                if value is None:
                    return None, label
        return value, label

    def failsafe_at(self, ts: float) -> FailsafeMode:
        for attack_id, interceptors in self.starvation.items():
            spec = self.specs[attack_id]
            if spec.t_start <= ts <= spec.t_end:
                return spec.failsafe
        return FailsafeMode.LAST_KNOWN_GOOD

    def active_ids(self, ts: float) -> List[int]:
        return [s.id for s in self.specs.values() if s.t_start - 1e-9 <= ts <= s.t_end + 1e-9]

    def finalize(self) -> None:
        """Post-run effects: controller log wipes."""
        for spec in self.specs.values():
            if spec.log_wipe:
                self.hostlog.wipe(NodeId.CONTROLLER, spec.t_start, spec.t_end)


def issue_console_action(net: NetworkSimulator, action: SessionAction, attack_id: int = 0) -> None:
    """Network traffic of one console action (no host events)."""
    if action.kind is HostEventKind.MODE_SWITCH:
        net.inject_irregular_event(IrregularKind.MODE_SWITCH_TRAFFIC, action.ts,
                                   value=1.0 if action.mode == "MANUAL" else 0.0,
                                   attack_id=attack_id, record=False)
    else:
        net.send(action.ts, NodeId.HMI, NodeId.CONTROLLER, FnCode.WRITE, Register.U, action.value,
                 attack_id=attack_id)


# -- planning -------------------------------------------------------------

class VectorTemplate(str, Enum):
    NONE = "NONE"
    INSIDER = "INSIDER"
    REMOTE_CORP = "REMOTE_CORP"


def vector_from_template(template: VectorTemplate) -> List[AttackStep]:
    if template is VectorTemplate.INSIDER:
        return [AttackStep(offset=-0.1, entry_layer=EntryLayer.CONTROL,
                           entry_method=EntryMethod.INTRUSION, from_node=NodeId.ATTACKER,
                           to_node=NodeId.CONTROLLER, effect=StepEffect.PAYLOAD)]
    if template is VectorTemplate.REMOTE_CORP:
        common = {"entry_layer": EntryLayer.APPLICATION, "entry_method": EntryMethod.REMOTE}
        return [
            AttackStep(offset=-0.5, from_node=NodeId.CORP_WS, to_node=NodeId.HMI,
                       effect=StepEffect.RECON, **common),
            AttackStep(offset=-0.4, from_node=NodeId.CORP_WS, to_node=NodeId.HMI,
                       effect=StepEffect.CREDENTIAL, **common),
            AttackStep(offset=-0.3, from_node=NodeId.HMI, to_node=NodeId.CONTROLLER,
                       effect=StepEffect.PIVOT, **common),
            AttackStep(offset=-0.2, from_node=NodeId.HMI, to_node=NodeId.CONTROLLER,
                       effect=StepEffect.PAYLOAD, **common),
        ]
    return []


class ZeroDayCombo(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    injection_point: InjectionPoint
    waveform_kind: WaveformKind


class AttackGrid(BaseModel):
    """Attribute grid enumerated by plan_attacks."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kinds: List[AttackKind]
    injection_points: List[InjectionPoint] = Field(default_factory=lambda: list(InjectionPoint))
    actions: List[AttackAction] = Field(default_factory=lambda: [AttackAction.MODIFY])
    waveform_kinds: List[WaveformKind] = Field(default_factory=lambda: [WaveformKind.STEP])
    magnitudes: List[float] = Field(default_factory=lambda: [0.1])
    rate: float = 0.05
    threshold: float = Field(0.01, gt=0)
    dos_rates: List[float] = Field(default_factory=lambda: [1200.0])
    dm_target_sets: List[List[NodeId]] = Field(default_factory=lambda: [[NodeId.HMI, NodeId.LOGSERVER]])
    vectors: List[VectorTemplate] = Field(default_factory=lambda: [VectorTemplate.INSIDER])
    window_length: float = Field(1.0, gt=0)
    gap: float = Field(1.0, ge=0)
    start: float = Field(1.0, ge=0)
    duration: float = Field(60.0, gt=0)
    test_start: Optional[float] = None
    zero_day_holdout: List[ZeroDayCombo] = Field(default_factory=list)
    zero_day_count: int = Field(0, ge=0)
    sample_period: float = Field(0.1, gt=0)

    @model_validator(mode="after")
    def _nonempty(self) -> "AttackGrid":
        if not self.kinds:
            raise ValueError("attack grid lists no kinds")
        return self


def _legal(kind: AttackKind, point: InjectionPoint, action: AttackAction) -> bool:
    if kind is AttackKind.INTEGRITY_SCA and point not in SCA_POINTS:
        return False
    if kind is AttackKind.INTEGRITY_DM and point not in DM_POINTS:
        return False
    if kind is AttackKind.STEALTHY and (point not in SCA_POINTS or action is not AttackAction.MODIFY):
        return False
    if point is InjectionPoint.CONTROLLER_PARAM and action is not AttackAction.MODIFY:
        return False
    return True


def _probe_fingerprint(spec: AttackSpec, sample_period: float) -> Tuple:
    """Behavior of an attack on a canonical 100-sample probe."""
    if spec.kind is AttackKind.DOS:
        return ("DOS", round(spec.dos_rate, 6))
    family = "INTEGRITY" if spec.base_kind is not AttackKind.STEALTHY else "STEALTHY"
    probe_spec = spec.model_copy(update={"window": (1.0, 1.0 + spec.length)})
    interceptor = StreamInterceptor(probe_spec, NodeId.SENSOR, NodeId.CONTROLLER, None,
                                    spec.action, spec.waveform, sample_period, observe_samples=True)
    interceptor.arm(0.0)
    outputs = []
    for i in range(100):
        t = round(i * sample_period, 9)
        value = interceptor.view(0.5 + 0.05 * math.sin(i / 5.0), t)
        outputs.append("drop" if value is None else round(value, 9))
    targets = tuple(n.value for n in spec.dm_targets)
    return (family, spec.injection_point.value, spec.action.value, targets, tuple(outputs))


def plan_attacks(grid: AttackGrid, limit: int, seed: int = 0) -> List[AttackSpec]:
    """
    Enumerate, prune and schedule attacks over an attribute grid.

    Candidates run over kind x point x action x waveform x magnitude; illegal
    combinations and those with a duplicate probe fingerprint are dropped,
    then kinds are taken round-robin up to `limit`. Held-out (point, waveform)
    combinations become zero-day variants scheduled after `test_start`.

    Raises:
        PlanningError: nothing survives pruning or the windows do not fit
    """
    if limit <= 0:
        raise PlanningError("attack limit must be positive")
    rng = stream_rng(seed, "planning")
    holdout = {(c.injection_point, c.waveform_kind) for c in grid.zero_day_holdout}
    window = (0.0, grid.window_length)

    groups: Dict[AttackKind, List[AttackSpec]] = {}
    zero_pool: List[AttackSpec] = []
    seen = set()

    def consider(spec: AttackSpec, group: AttackKind, zero_day: bool) -> None:
        fingerprint = _probe_fingerprint(spec, grid.sample_period)
        if fingerprint in seen:
            return
        seen.add(fingerprint)
        (zero_pool if zero_day else groups.setdefault(group, [])).append(spec)

    for kind in grid.kinds:
        if kind is AttackKind.DOS:
            for rate in grid.dos_rates:
                consider(AttackSpec(id=1, kind=kind, window=window, dos_rate=rate), kind, False)
            continue
        for point in grid.injection_points:
            for action in grid.actions:
                if not _legal(kind, point, action):
                    continue
                for wf_kind in grid.waveform_kinds:
                    for magnitude in grid.magnitudes:
                        waveform = Waveform(kind=wf_kind, magnitude=magnitude,
                                            duration=grid.window_length / 2 if wf_kind is WaveformKind.PULSE else None,
                                            rate=grid.rate, threshold=grid.threshold)
                        zero_day = (point, wf_kind) in holdout
                        target_sets = grid.dm_target_sets if kind is AttackKind.STEALTHY else [[]]
                        for targets in target_sets:
                            spec_kind = AttackKind.ZERO_DAY_VARIANT if zero_day else kind
                            candidate = AttackSpec(id=1, kind=spec_kind, injection_point=point,
                                                   action=action, waveform=waveform, window=window,
                                                   dm_targets=targets if kind is AttackKind.STEALTHY else [],
                                                   zero_day=zero_day,
                                                   variant_of=kind if zero_day else None)
                            consider(candidate, kind, zero_day)

    ordered_groups = []
    for kind in grid.kinds:
        pool = groups.get(kind, [])
        ordered_groups.append([pool[i] for i in rng.permutation(len(pool))])
    zero_pool = [zero_pool[i] for i in rng.permutation(len(zero_pool))]

    n_zero = min(grid.zero_day_count, len(zero_pool), limit)
    chosen: List[AttackSpec] = []
    depth = 0
    while len(chosen) < limit - n_zero and any(depth < len(g) for g in ordered_groups):
        for group in ordered_groups:
            if depth < len(group) and len(chosen) < limit - n_zero:
                chosen.append(group[depth])
        depth += 1
    zero_chosen = zero_pool[:n_zero]
    if not chosen and not zero_chosen:
        raise PlanningError("no legal attack survives pruning")

    plan: List[AttackSpec] = []
    t = grid.start
    lead = 0.5
    for index, candidate in enumerate(chosen):
        template = grid.vectors[index % len(grid.vectors)] if grid.vectors else VectorTemplate.NONE
        t = max(t, lead)
        plan.append(_placed(candidate, len(plan) + 1, t, grid, template))
        t = round(t + grid.window_length + grid.gap, 9)
    if zero_chosen:
        t = max(t, grid.test_start if grid.test_start is not None else t, lead)
        for index, candidate in enumerate(zero_chosen):
            template = grid.vectors[index % len(grid.vectors)] if grid.vectors else VectorTemplate.NONE
            plan.append(_placed(candidate, len(plan) + 1, t, grid, template))
            t = round(t + grid.window_length + grid.gap, 9)

    overflow = [s.id for s in plan if s.t_end > grid.duration + 1e-9]
    if overflow:
        raise PlanningError(f"attack windows {overflow} do not fit in {grid.duration} min")
    logger.info("Planned %d attacks (%d zero-day)", len(plan), len(zero_chosen))
    return plan


def _placed(candidate: AttackSpec, attack_id: int, start: float, grid: AttackGrid,
            template: VectorTemplate) -> AttackSpec:
    window = (round(start, 9), round(start + grid.window_length, 9))
    vector = vector_from_template(template)
    if vector and candidate.injection_point is not None \
            and vector[-1].to_node not in POINT_OWNERS[candidate.injection_point]:
        vector = []
    data = candidate.model_dump()
    data.update({"id": attack_id, "window": window, "vector": vector})
    return AttackSpec.model_validate(data)
