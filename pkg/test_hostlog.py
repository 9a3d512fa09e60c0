import json

import pytest

from hostlog import (HOST_FIELDS, HostEvent, HostEventKind, HostLog, HostLogError, OperatorSession,
                     SessionAction, SessionError, export_host_log, operator_session, parse_detail,
                     process_values, validate_sessions)
from netsim import NetworkSimulator, NodeId


def test_events_read_back_by_time_node_and_seq():
    log = HostLog()
    log.log(1.0, NodeId.LOGSERVER, HostEventKind.SYS_ERROR, "alarm", "event=high")
    log.log(1.0, NodeId.HMI, HostEventKind.CMD_ISSUED, "op", "reg=U value=1")
    log.log(0.5, NodeId.LOGSERVER, HostEventKind.PROCESS_DATA, "collector", "y=0.46")
    log.log(1.0, NodeId.HMI, HostEventKind.MODE_SWITCH, "op", "mode=AUTO")
    rows = log.records()
    assert [(r["ts"], r["node"], r["kind"]) for r in rows] == [
        (0.5, NodeId.LOGSERVER, HostEventKind.PROCESS_DATA),
        (1.0, NodeId.HMI, HostEventKind.CMD_ISSUED),
        (1.0, NodeId.HMI, HostEventKind.MODE_SWITCH),
        (1.0, NodeId.LOGSERVER, HostEventKind.SYS_ERROR),
    ]


def test_events_outside_window_rejected():
    log = HostLog(window=(0.0, 5.0))
    with pytest.raises(HostLogError):
        log.record_event(HostEvent(ts=6.0, node=NodeId.HMI, kind=HostEventKind.AUTH_LOGIN, actor="op"))


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        HostLog().log(0.0, NodeId.HMI, "KERNEL_PANIC", "op")


def test_wipe_removes_only_the_window_of_one_node():
    log = HostLog()
    for t in (1.0, 2.0, 3.0):
        log.log(t, NodeId.HMI, HostEventKind.PROCESS_DATA, "hmi", f"y={t}")
        log.log(t, NodeId.LOGSERVER, HostEventKind.PROCESS_DATA, "collector", f"y={t}")
    assert log.wipe(NodeId.HMI, 1.5, 3.0) == 2
    assert [e.ts for e in log.events(NodeId.HMI)] == [1.0]
    assert len(log.events(NodeId.LOGSERVER)) == 3


def test_export_writes_header_and_fields(tmp_path):
    log = HostLog()
    log.log(0.3, NodeId.HMI, HostEventKind.AUTH_LOGIN, "operator1", "session=open")
    path = tmp_path / "host.jsonl"
    assert log.export(path) == 1
    header, line = path.read_text(encoding="utf-8").splitlines()
    assert json.loads(header)["fields"] == list(HOST_FIELDS)
    assert json.loads(line) == {"ts": 0.3, "node": "HMI", "kind": "AUTH_LOGIN",
                                "actor": "operator1", "detail": "session=open", "attack_id": 0}


def test_export_host_log_sorts_rows(tmp_path):
    rows = [{"ts": 2.0, "node": "HMI", "kind": "CMD_ISSUED", "actor": "a", "detail": "", "attack_id": 0},
            {"ts": 1.0, "node": "HMI", "kind": "CMD_ISSUED", "actor": "b", "detail": "", "attack_id": 0}]
    path = tmp_path / "host.jsonl"
    export_host_log(rows, path)
    actors = [json.loads(line)["actor"] for line in path.read_text(encoding="utf-8").splitlines()[1:]]
    assert actors == ["b", "a"]


def test_parse_detail_and_process_values():
    assert parse_detail("y=0.5 u=1.2 mode=AUTO junk") == {"y": "0.5", "u": "1.2", "mode": "AUTO"}
    log = HostLog()
    log.log(0.2, NodeId.HMI, HostEventKind.PROCESS_DATA, "hmi", "y=0.47")
    log.log(0.4, NodeId.HMI, HostEventKind.PROCESS_DATA, "hmi", "u=1.1")
    log.log(0.4, NodeId.LOGSERVER, HostEventKind.PROCESS_DATA, "collector", "y=0.48")
    assert process_values(log.events(), NodeId.HMI, "y") == {0.2: 0.47}
    assert process_values(log.records(), NodeId.LOGSERVER, "y") == {0.4: 0.48}


def test_session_action_payloads():
    with pytest.raises(ValueError):
        SessionAction(ts=1.0, kind=HostEventKind.MODE_SWITCH, mode="SEMI")
    with pytest.raises(ValueError):
        SessionAction(ts=1.0, kind=HostEventKind.CMD_ISSUED)
    with pytest.raises(ValueError):
        SessionAction(ts=1.0, kind=HostEventKind.FILE_XFER)
    assert SessionAction(ts=1.0, kind=HostEventKind.CMD_ISSUED, value=1.5).describe() == "reg=U value=1.5"


def test_session_bracket_checks():
    with pytest.raises(ValueError):
        OperatorSession(login=2.0, logout=1.0)
    with pytest.raises(ValueError):
        OperatorSession(login=1.0, logout=2.0,
                        actions=[SessionAction(ts=3.0, kind=HostEventKind.MODE_SWITCH, mode="AUTO")])


def test_overlapping_sessions_rejected():
    a = OperatorSession(operator="op", login=1.0, logout=3.0)
    b = OperatorSession(operator="op", login=2.0, logout=4.0)
    other = OperatorSession(operator="other", login=2.0, logout=4.0)
    validate_sessions([a, other])
    with pytest.raises(SessionError):
        validate_sessions([a, b])


def test_operator_session_logs_and_issues():
    log = HostLog()
    net = NetworkSimulator()
    issued = []
    session = OperatorSession(operator="operator1", login=1.0, logout=2.0, actions=[
        SessionAction(ts=1.2, kind=HostEventKind.MODE_SWITCH, mode="MANUAL"),
        SessionAction(ts=1.5, kind=HostEventKind.CMD_ISSUED, value=1.4),
    ])
    operator_session(session, log, net, lambda action, attack_id: issued.append((action.ts, attack_id)),
                     attack_id=4)
    net.run()
    kinds = [e.kind for e in log.events(NodeId.HMI)]
    assert kinds == [HostEventKind.AUTH_LOGIN, HostEventKind.MODE_SWITCH,
                     HostEventKind.CMD_ISSUED, HostEventKind.AUTH_LOGOUT]
    assert all(e.actor == "operator1" and e.attack_id == 4 for e in log.events(NodeId.HMI))
    assert issued == [(1.2, 4), (1.5, 4)]
