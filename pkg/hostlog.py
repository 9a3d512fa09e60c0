"""
Per-node host logs: authentication, processes, operator commands,
mode switches, errors and time-stamped process data.
"""

import logging
import math
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from netsim import Frame, NodeId, NetworkSimulator, Register
from utils import TestbedError, write_jsonl

logger = logging.getLogger(__name__)

HOST_FIELDS = ("ts", "node", "kind", "actor", "detail", "attack_id")


class HostLogError(TestbedError):
    pass


class SessionError(HostLogError, ValueError):
    pass


class HostEventKind(str, Enum):
    AUTH_LOGIN = "AUTH_LOGIN"
    AUTH_FAIL = "AUTH_FAIL"
    AUTH_LOGOUT = "AUTH_LOGOUT"
    PROC_START = "PROC_START"
    CMD_ISSUED = "CMD_ISSUED"
    MODE_SWITCH = "MODE_SWITCH"
    CONFIG_CHANGE = "CONFIG_CHANGE"
    FILE_XFER = "FILE_XFER"
    SYS_ERROR = "SYS_ERROR"
    PROCESS_DATA = "PROCESS_DATA"


COMPROMISE_KINDS = (HostEventKind.AUTH_FAIL, HostEventKind.PROC_START)


class HostEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    ts: float
    node: NodeId
    kind: HostEventKind
    actor: str
    detail: str = ""
    attack_id: int = Field(0, ge=0)


class SessionAction(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    ts: float = Field(..., ge=0)
    kind: HostEventKind
    mode: Optional[str] = None
    value: Optional[float] = None

    @model_validator(mode="after")
    def _check_payload(self) -> "SessionAction":
        if self.kind is HostEventKind.MODE_SWITCH:
            if self.mode not in ("AUTO", "MANUAL"):
                raise ValueError("MODE_SWITCH action needs mode AUTO or MANUAL")
        elif self.kind is HostEventKind.CMD_ISSUED:
            if self.value is None:
                raise ValueError("CMD_ISSUED action needs a value")
        else:
            raise ValueError(f"session actions are CMD_ISSUED or MODE_SWITCH, got {self.kind.value}")
        return self

    def describe(self) -> str:
        if self.kind is HostEventKind.MODE_SWITCH:
            return f"mode={self.mode}"
        return f"reg={Register.U.name} value={self.value:.9g}"


class OperatorSession(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    operator: str = "operator1"
    login: float = Field(..., ge=0)
    actions: List[SessionAction] = Field(default_factory=list)
    logout: float

    @model_validator(mode="after")
    def _check_bracket(self) -> "OperatorSession":
        if self.logout < self.login:
            raise ValueError("logout precedes login")
        for action in self.actions:
            if not self.login <= action.ts <= self.logout:
                raise ValueError(f"action at t={action.ts} outside session [{self.login}, {self.logout}]")
        times = [a.ts for a in self.actions]
        if times != sorted(times):
            raise ValueError("session actions must be in time order")
        return self


class HostLog:
    """
    Append-only logs for every node, bounded to the scenario window.

    Events are kept with a global sequence number so that simultaneous
    events read back in (ts, node, seq) order.
    """

    def __init__(self, window: Tuple[float, float] = (0.0, math.inf)):
        self.window = window
        self._events: List[Tuple[int, HostEvent]] = []
        self._seq = 0

    def record_event(self, e: HostEvent) -> HostEvent:
        if not self.window[0] - 1e-9 <= e.ts <= self.window[1] + 1e-9:
            raise HostLogError(f"{e.kind.value} on {e.node.value} at t={e.ts} outside window {self.window}")
        self._events.append((self._seq, e))
        self._seq += 1
        return e

    def log(self, ts: float, node, kind, actor: str, detail: str = "", attack_id: int = 0) -> HostEvent:
        return self.record_event(HostEvent(ts=round(ts, 9), node=NodeId(node), kind=HostEventKind(kind),
                                           actor=actor, detail=detail, attack_id=attack_id))

    def mirror_write(self, frame: Frame, at: float) -> HostEvent:
        """Controller-side copy of every WRITE it receives."""
        reg = Register(frame.addr).name if frame.addr in Register._value2member_map_ else str(frame.addr)
        detail = f"src={frame.src.value} reg={reg} value={frame.value:.9g}"
        return self.log(at, NodeId.CONTROLLER, HostEventKind.CMD_ISSUED, "control-task",
                        detail, frame.attack_id)

    def events(self, node: Optional[NodeId] = None) -> List[HostEvent]:
        return [e for _, e in self._ordered() if node is None or e.node == node]

    def records(self) -> List[Dict]:
        """Events as plain dicts with their sequence number, in read order."""
        rows = []
        for seq, event in self._ordered():
            row = event.model_dump()
            row["seq"] = seq
            rows.append(row)
        return rows

    def _ordered(self) -> List[Tuple[int, HostEvent]]:
        return sorted(self._events, key=lambda item: (item[1].ts, item[1].node.value, item[0]))

    def wipe(self, node: NodeId, t0: float, t1: float) -> int:
        """Delete a node's entries inside [t0, t1]; returns how many went."""
        before = len(self._events)
        self._events = [(s, e) for s, e in self._events
                        if not (e.node == node and t0 <= e.ts <= t1)]
        removed = before - len(self._events)
        logger.info("Wiped %d %s log entries in [%.3f, %.3f]", removed, node.value, t0, t1)
        return removed

    def export(self, path: Path, events: Optional[Iterable[Dict]] = None) -> int:
        rows = self.records() if events is None else list(events)
        return export_host_log(rows, path)


def host_sort_key(row: Dict) -> Tuple:
    node = row["node"]
    return (row["ts"], node.value if isinstance(node, Enum) else node, row.get("seq", 0))


def export_host_log(rows: List[Dict], path: Path) -> int:
    rows = sorted(rows, key=host_sort_key)
    return write_jsonl(path, "host", HOST_FIELDS, rows)


def parse_detail(detail: str) -> Dict[str, str]:
    """key=value pairs of an event detail string."""
    pairs = {}
    for token in detail.split():
        if "=" in token:
            key, value = token.split("=", 1)
            pairs[key] = value
    return pairs


def process_values(events: Iterable, node: NodeId, key: str) -> Dict[float, float]:
    """ts -> value of one quantity from a node's PROCESS_DATA entries."""
    values = {}
    for event in events:
        row = event.model_dump() if isinstance(event, HostEvent) else event
        if row["node"] != node or row["kind"] != HostEventKind.PROCESS_DATA:
            continue
        fields = parse_detail(row["detail"])
        if key in fields:
            values[row["ts"]] = float(fields[key])
    return values


def validate_sessions(sessions: Iterable[OperatorSession]) -> None:
    """Reject overlapping sessions of the same operator."""
    by_operator: Dict[str, List[OperatorSession]] = {}
    for session in sessions:
        by_operator.setdefault(session.operator, []).append(session)
    for operator, items in by_operator.items():
        items.sort(key=lambda s: s.login)
        for first, second in zip(items, items[1:]):
            if second.login <= first.logout:
                raise SessionError(
                    f"overlapping sessions for {operator}: [{first.login}, {first.logout}] "
                    f"and [{second.login}, {second.logout}]")


def operator_session(session: OperatorSession, log: HostLog, net: NetworkSimulator,
                     issue: Callable[[SessionAction, int], None], attack_id: int = 0,
                     node: NodeId = NodeId.HMI) -> None:
    """
    Schedule a console session: login, its actions, logout.

    Each action is logged on the console node first, then handed to
    `issue`, which produces the network traffic. Attack variants reuse the
    same `issue` so their frames match the legitimate session exactly.
    """
    who = session.operator

    net.schedule(session.login, node, lambda t: log.log(
        t, node, HostEventKind.AUTH_LOGIN, who, "session=open", attack_id))
    for action in session.actions:
        def _act(t: float, a: SessionAction = action) -> None:
            log.log(t, node, a.kind, who, a.describe(), attack_id)
            issue(a, attack_id)
        net.schedule(action.ts, node, _act)
    net.schedule(session.logout, node, lambda t: log.log(
        t, node, HostEventKind.AUTH_LOGOUT, who, "session=close", attack_id))
