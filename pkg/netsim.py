"""
Deterministic discrete-event network layer.

Periodic poll/report traffic, protocol multiplexing on the controller,
irregular operational traffic, interceptor hooks and capture logging.
Simultaneous events are ordered by (ts, node id, seq).
"""

import heapq
import logging
import math
from enum import Enum, IntEnum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from utils import TestbedError, write_jsonl

logger = logging.getLogger(__name__)


class NetworkError(TestbedError):
    pass


class RoutingError(NetworkError):
    pass


class IrregularEventError(NetworkError, ValueError):
    pass


class NodeId(str, Enum):
    SENSOR = "SENSOR"
    ACTUATOR = "ACTUATOR"
    CONTROLLER = "CONTROLLER"
    HMI = "HMI"
    LOGSERVER = "LOGSERVER"
    ATTACKER = "ATTACKER"
    CORP_WS = "CORP_WS"


DM_NODES = (NodeId.HMI, NodeId.LOGSERVER)


class Proto(str, Enum):
    POLLPROTO = "POLLPROTO"
    REPORTPROTO = "REPORTPROTO"


class FnCode(str, Enum):
    READ = "READ"
    WRITE = "WRITE"
    TRIP_BCAST = "TRIP_BCAST"


class Register(IntEnum):
    Y = 1
    U = 2
    MODE = 3
    SETPOINT = 4
    TRIP = 9


class IrregularKind(str, Enum):
    OPERATOR_MANUAL_POLL = "OPERATOR_MANUAL_POLL"
    MODE_SWITCH_TRAFFIC = "MODE_SWITCH_TRAFFIC"
    SAFETY_TRIP_BCAST = "SAFETY_TRIP_BCAST"


def _both_ways(a: NodeId, b: NodeId, proto: Proto) -> List[Tuple[NodeId, NodeId, Proto]]:
    return [(a, b, proto), (b, a, proto)]


TOPOLOGY = set(
    _both_ways(NodeId.SENSOR, NodeId.CONTROLLER, Proto.POLLPROTO)
    + _both_ways(NodeId.ACTUATOR, NodeId.CONTROLLER, Proto.POLLPROTO)
    + _both_ways(NodeId.CONTROLLER, NodeId.HMI, Proto.REPORTPROTO)
    + _both_ways(NodeId.CONTROLLER, NodeId.LOGSERVER, Proto.REPORTPROTO)
    + _both_ways(NodeId.CORP_WS, NodeId.HMI, Proto.REPORTPROTO)
    # attacker foothold: control network and application layer
    + _both_ways(NodeId.ATTACKER, NodeId.CONTROLLER, Proto.POLLPROTO)
    + _both_ways(NodeId.ATTACKER, NodeId.HMI, Proto.REPORTPROTO)
    + _both_ways(NodeId.ATTACKER, NodeId.CORP_WS, Proto.REPORTPROTO)
)

ADJACENT = {(src, dst) for src, dst, _ in TOPOLOGY}

CAPTURE_FIELDS = ("ts", "capture_node", "seq", "src", "dst", "proto",
                  "fn_code", "addr", "value", "txn", "attack_id")


def link_proto(src: NodeId, dst: NodeId) -> Proto:
    """Protocol of a link; REPORTPROTO wins where both are legal."""
    for proto in (Proto.REPORTPROTO, Proto.POLLPROTO):
        if (src, dst, proto) in TOPOLOGY:
            return proto
    raise RoutingError(f"no link {src.value} -> {dst.value}")


class Frame(BaseModel):
    model_config = ConfigDict(frozen=True)

    ts: float
    seq: int = Field(..., ge=0)
    src: NodeId
    dst: NodeId
    proto: Proto
    fn_code: FnCode
    addr: int
    value: float
    txn: int = Field(..., ge=0)
    attack_id: int = Field(0, ge=0)


class TrafficSchedule(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    poll_period: float = Field(0.1, gt=0)
    report_period: float = Field(0.2, gt=0)
    jitter: float = Field(0.0, ge=0)
    latency: float = Field(0.0, ge=0)
    capacity: float = Field(600.0, gt=0, description="Frames/min the controller serves")
    report_service_time: float = Field(0.002, ge=0)


class LinkFilter(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    proto: Optional[Proto] = None
    src: Optional[NodeId] = None
    dst: Optional[NodeId] = None
    capture_node: Optional[NodeId] = None

    def accepts(self, record: Dict) -> bool:
        return ((self.proto is None or record["proto"] == self.proto)
                and (self.src is None or record["src"] == self.src)
                and (self.dst is None or record["dst"] == self.dst)
                and (self.capture_node is None or record["capture_node"] == self.capture_node))


class DeliveryStatus(str, Enum):
    DELIVERED = "DELIVERED"
    DROPPED = "DROPPED"
    DELAYED = "DELAYED"


class Delivery(BaseModel):
    model_config = ConfigDict(frozen=True)

    status: DeliveryStatus
    frame: Frame
    at: float

    @property
    def received(self) -> bool:
        return self.status is not DeliveryStatus.DROPPED


class Interceptor:
    """A man-in-the-middle hook on one or more links."""

    attack_id: int = 0

    def matches(self, frame: Frame) -> bool:
        raise NotImplementedError

    def intercept(self, frame: Frame) -> Delivery:
        raise NotImplementedError


class LinkInterceptor(Interceptor):
    def __init__(self, src: NodeId, dst: NodeId, addr: Optional[int] = None, attack_id: int = 0):
        self.src = src
        self.dst = dst
        self.addr = addr
        self.attack_id = attack_id

    def matches(self, frame: Frame) -> bool:
        return (frame.src == self.src and frame.dst == self.dst
                and (self.addr is None or frame.addr == self.addr))


class ValueInterceptor(LinkInterceptor):
    """Rewrites the payload with transform(value, ts)."""

    def __init__(self, src, dst, transform: Callable[[float, float], float], **kwargs):
        super().__init__(src, dst, **kwargs)
        self.transform = transform

    def intercept(self, frame: Frame) -> Delivery:
        value = self.transform(frame.value, frame.ts)
        changed = frame.model_copy(update={"value": value, "attack_id": self.attack_id})
        return Delivery(status=DeliveryStatus.DELIVERED, frame=changed, at=frame.ts)


class DropInterceptor(LinkInterceptor):
    def intercept(self, frame: Frame) -> Delivery:
        dropped = frame.model_copy(update={"attack_id": self.attack_id})
        return Delivery(status=DeliveryStatus.DROPPED, frame=dropped, at=frame.ts)


class DelayInterceptor(LinkInterceptor):
    def __init__(self, src, dst, delay: float, **kwargs):
        super().__init__(src, dst, **kwargs)
        self.delay = delay

    def intercept(self, frame: Frame) -> Delivery:
        delayed = frame.model_copy(update={"attack_id": self.attack_id})
        return Delivery(status=DeliveryStatus.DELAYED, frame=delayed,
                        at=round(frame.ts + self.delay, 9))


class TrafficHandler:
    """Produces the payloads of the periodic schedule."""

    def on_poll(self, net: "NetworkSimulator", ts: float) -> None:
        raise NotImplementedError

    def on_report(self, net: "NetworkSimulator", ts: float) -> None:
        raise NotImplementedError


class RegisterBank(TrafficHandler):
    """Schedule handler serving fixed register values."""

    def __init__(self, values: Optional[Dict[int, float]] = None):
        self.values = {Register.Y: 0.0, Register.U: 0.0}
        self.values.update(values or {})

    def on_poll(self, net, ts):
        net.send(ts, NodeId.SENSOR, NodeId.CONTROLLER, FnCode.READ, Register.Y,
                 self.values[Register.Y])
        net.send(ts, NodeId.CONTROLLER, NodeId.ACTUATOR, FnCode.WRITE, Register.U,
                 self.values[Register.U])

    def on_report(self, net, ts):
        for dm in DM_NODES:
            for reg in (Register.Y, Register.U):
                net.send(ts, NodeId.CONTROLLER, dm, FnCode.WRITE, reg, self.values[reg])


class IrregularResult(BaseModel):
    deliveries: List[Delivery] = Field(default_factory=list)
    host_events: List[Dict] = Field(default_factory=list)


class NetworkSimulator:
    """
    Discrete-event queue plus the frame fabric of one scenario.

    Args:
        schedule: Periodic traffic settings
        window: (t0, t1) scenario window in minutes
        hostlog: Optional host log receiving mirrored controller writes
            and the host events of irregular traffic
        rng: Generator for poll jitter
    """

    def __init__(self, schedule: Optional[TrafficSchedule] = None,
                 window: Tuple[float, float] = (0.0, math.inf),
                 hostlog=None, rng: Optional[np.random.Generator] = None):
        self.schedule_cfg = schedule or TrafficSchedule()
        self.window = window
        self.hostlog = hostlog
        self.rng = rng or np.random.default_rng(0)
        self.captures: List[Dict] = []
        self.interceptors: List[Interceptor] = []
        self.receivers: Dict[NodeId, Callable[[Frame], None]] = {}
        self.now = window[0]
        self._queue: List[Tuple[float, str, int, Callable[[float], None]]] = []
        self._event_seq = 0
        self._link_seq: Dict[Tuple[NodeId, NodeId], int] = {}
        self._txn: Dict[NodeId, int] = {}

    # -- event queue ---------------------------------------------------

    def schedule(self, ts: float, node: NodeId, action: Callable[[float], None]) -> None:
        heapq.heappush(self._queue, (round(ts, 9), node.value, self._event_seq, action))
        self._event_seq += 1

    def run(self, until: float = math.inf) -> int:
        """Process queued events with ts <= until; returns the count."""
        handled = 0
        while self._queue and self._queue[0][0] <= until:
            ts, _, _, action = heapq.heappop(self._queue)
            self.now = ts
            action(ts)
            handled += 1
        return handled

    @property
    def pending(self) -> int:
        return len(self._queue)

    def run_traffic_schedule(self, sched: TrafficSchedule, t_window: Tuple[float, float],
                             handler: Optional[TrafficHandler] = None) -> List[Tuple[float, str]]:
        """
        Enqueue the periodic poll and report events of [t0, t1).

        Returns:
            (ts, "poll" | "report") for every enqueued event, in time order
        """
        t0, t1 = t_window
        if not t1 > t0:
            raise NetworkError(f"empty traffic window {t_window}")
        handler = handler or RegisterBank()
        events: List[Tuple[float, str]] = []

        n_polls = int(math.ceil(round((t1 - t0) / sched.poll_period, 9)))
        for j in range(n_polls):
            ts = round(t0 + j * sched.poll_period, 9)
            if sched.jitter > 0:
                ts = round(min(max(ts + float(self.rng.uniform(-sched.jitter, sched.jitter)), t0), t1), 9)
            self.schedule(ts, NodeId.SENSOR, lambda t, h=handler: h.on_poll(self, t))
            events.append((ts, "poll"))

        n_reports = int(math.ceil(round((t1 - t0) / sched.report_period, 9)))
        for j in range(n_reports):
            ts = round(t0 + j * sched.report_period, 9)
            self.schedule(ts, NodeId.CONTROLLER, lambda t, h=handler: h.on_report(self, t))
            events.append((ts, "report"))

        events.sort()
        logger.debug("Scheduled %d polls and %d reports over %s", n_polls, n_reports, t_window)
        return events

    # -- frames --------------------------------------------------------

    def next_txn(self, src: NodeId) -> int:
        self._txn[src] = self._txn.get(src, 0) + 1
        return self._txn[src]

    def new_frame(self, ts: float, src: NodeId, dst: NodeId, fn_code: FnCode, addr: int,
                  value: float, attack_id: int = 0, txn: Optional[int] = None,
                  proto: Optional[Proto] = None) -> Frame:
        proto = proto or link_proto(src, dst)
        if (src, dst, proto) not in TOPOLOGY:
            raise RoutingError(f"illegal edge {src.value} -> {dst.value} on {proto.value}")
        seq = self._link_seq.get((src, dst), 0)
        self._link_seq[(src, dst)] = seq + 1
        return Frame(ts=round(ts, 9), seq=seq, src=src, dst=dst, proto=proto, fn_code=fn_code,
                     addr=int(addr), value=float(value),
                     txn=self.next_txn(src) if txn is None else txn, attack_id=attack_id)

    def send(self, ts: float, src: NodeId, dst: NodeId, fn_code: FnCode, addr: int,
             value: float, attack_id: int = 0, txn: Optional[int] = None,
             dispatch: bool = True) -> Delivery:
        frame = self.new_frame(ts, src, dst, fn_code, addr, value, attack_id=attack_id, txn=txn)
        return self.deliver_frame(frame, dispatch=dispatch)

    def add_interceptor(self, interceptor: Interceptor) -> None:
        self.interceptors.append(interceptor)

    def remove_interceptor(self, interceptor: Interceptor) -> None:
        if interceptor in self.interceptors:
            self.interceptors.remove(interceptor)

    def _capture(self, ts: float, node: NodeId, frame: Frame, attack_id: int) -> None:
        record = frame.model_dump()
        record["ts"] = ts
        record["capture_node"] = node
        record["attack_id"] = attack_id
        self.captures.append(record)

    def deliver_frame(self, f: Frame, interceptors: Optional[List[Interceptor]] = None,
                      dispatch: bool = True) -> Delivery:
        """
        Run a frame through the interceptor chain and write both captures.

        Args:
            f: Frame as emitted by its sender
            interceptors: Chain to apply; defaults to every installed interceptor
            dispatch: Hand the received frame to the destination's receiver

        Raises:
            RoutingError: the frame is not on a topology edge
        """
        if (f.src, f.dst, f.proto) not in TOPOLOGY:
            raise RoutingError(f"illegal edge {f.src.value} -> {f.dst.value} on {f.proto.value}")

        chain = self.interceptors if interceptors is None else interceptors
        current, at, status = f, f.ts, DeliveryStatus.DELIVERED
        for interceptor in list(chain):
            if not interceptor.matches(current):
                continue
            outcome = interceptor.intercept(current)
            current = outcome.frame
            if outcome.status is DeliveryStatus.DROPPED:
                status = DeliveryStatus.DROPPED
                break
            if outcome.at > at:
                at, status = outcome.at, DeliveryStatus.DELAYED

        label = current.attack_id or f.attack_id
        self._capture(f.ts, f.src, f, label)
        if status is DeliveryStatus.DROPPED:
            logger.debug("Dropped %s->%s seq=%d", f.src.value, f.dst.value, f.seq)
            return Delivery(status=status, frame=current, at=f.ts)

        at = round(at + self.schedule_cfg.latency, 9)
        self._capture(at, f.dst, current, label)
        delivery = Delivery(status=status, frame=current, at=at)

        if self.hostlog is not None and f.dst is NodeId.CONTROLLER and current.fn_code is FnCode.WRITE:
            self.hostlog.mirror_write(current, at)
        if dispatch and f.dst in self.receivers:
            receiver = self.receivers[f.dst]
            if at > f.ts:
                self.schedule(at, f.dst, lambda _t, fr=current: receiver(fr))
            else:
                receiver(current)
        return delivery

    # -- irregular traffic ---------------------------------------------

    def inject_irregular_event(self, kind, t: float, value: float = 0.0,
                               actor: str = "operator", attack_id: int = 0,
                               record: bool = True) -> IrregularResult:
        """
        Emit the aperiodic frames and host events of an operational event.

        Args:
            kind: IrregularKind (or its name)
            t: Event time
            value: Polled value, mode flag (1 = MANUAL) or trip measurement
            actor: User or process behind the event
            attack_id: Label for attacker-driven events
            record: Write the host events to the attached host log
        """
        try:
            kind = IrregularKind(kind)
        except ValueError as exc:
            raise IrregularEventError(f"unknown irregular event kind: {kind!r}") from exc
        if not self.window[0] <= t <= self.window[1]:
            raise IrregularEventError(f"{kind.value} at t={t} outside scenario window")

        result = IrregularResult()

        def host(node: NodeId, event_kind: str, detail: str) -> None:
            event = {"ts": round(t, 9), "node": node, "kind": event_kind, "actor": actor,
                     "detail": detail, "attack_id": attack_id}
            result.host_events.append(event)
            if record and self.hostlog is not None:
                self.hostlog.log(**event)

        if kind is IrregularKind.OPERATOR_MANUAL_POLL:
            request = self.send(t, NodeId.HMI, NodeId.CONTROLLER, FnCode.READ, Register.Y, 0.0,
                                attack_id=attack_id, dispatch=False)
            response = self.send(t, NodeId.CONTROLLER, NodeId.HMI, FnCode.READ, Register.Y, value,
                                 attack_id=attack_id, txn=request.frame.txn, dispatch=False)
            host(NodeId.HMI, "CMD_ISSUED", f"action=manual_poll reg={Register.Y.name}")
            result.deliveries += [request, response]
        elif kind is IrregularKind.MODE_SWITCH_TRAFFIC:
            mode = "MANUAL" if value >= 0.5 else "AUTO"
            host(NodeId.HMI, "MODE_SWITCH", f"mode={mode}")
            result.deliveries.append(self.send(t, NodeId.HMI, NodeId.CONTROLLER, FnCode.WRITE,
                                               Register.MODE, 1.0 if mode == "MANUAL" else 0.0,
                                               attack_id=attack_id))
        else:
            host(NodeId.CONTROLLER, "SYS_ERROR", f"event=safety_trip y={value:.9g}")
            for dm in DM_NODES:
                result.deliveries.append(self.send(t, NodeId.CONTROLLER, dm, FnCode.TRIP_BCAST,
                                                   Register.TRIP, value, attack_id=attack_id))
        logger.info("Irregular %s at t=%.3f by %s", kind.value, t, actor)
        return result

    # -- export --------------------------------------------------------

    def sorted_captures(self, link_filter: Optional[LinkFilter] = None) -> List[Dict]:
        records = [r for r in self.captures if link_filter is None or link_filter.accepts(r)]
        return sorted(records, key=capture_sort_key)

    def export_capture(self, path: Path, link_filter: Optional[LinkFilter] = None) -> int:
        return export_capture(self.sorted_captures(link_filter), path)


def capture_sort_key(record: Dict) -> Tuple:
    return (record["ts"], _name(record["capture_node"]), record["seq"],
            _name(record["src"]), _name(record["dst"]))


def _name(node) -> str:
    return node.value if isinstance(node, Enum) else str(node)


def export_capture(records: List[Dict], path: Path,
                   link_filter: Optional[LinkFilter] = None) -> int:
    """Write capture records as JSON lines sorted by (ts, capture node, seq)."""
    rows = [r for r in records if link_filter is None or link_filter.accepts(r)]
    rows.sort(key=capture_sort_key)
    return write_jsonl(path, "capture", CAPTURE_FIELDS, rows)
