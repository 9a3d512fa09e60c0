import pytest

from attacks import (ActuatorInterceptor, AttackAction, AttackConfigError, AttackEngine, FailsafeMode,
                     AttackGrid, AttackKind, AttackSpec, AttackStep, InjectionPoint,
                     PlanningError, ReportInterceptor, ReportPolicy, StarvationInterceptor,
                     StepEffect, StreamInterceptor, VectorTemplate, Waveform, WaveformKind,
                     ZeroDayCombo, design_waveform, plan_attacks, vector_from_template)
from hostlog import HostEventKind, HostLog
from netsim import DeliveryStatus, FnCode, NetworkSimulator, NodeId, Register


def sca(**kwargs) -> AttackSpec:
    data = {"id": 1, "kind": AttackKind.INTEGRITY_SCA,
            "injection_point": InjectionPoint.SENSOR_TO_CONTROLLER, "window": (1.0, 2.0)}
    data.update(kwargs)
    return AttackSpec(**data)


def feed(net: NetworkSimulator, src: NodeId, dst: NodeId, reg: Register, n: int = 21):
    """Send value = ts every 0.1 min; returns the deliveries."""
    return [net.send(round(0.1 * i, 9), src, dst, FnCode.WRITE if src is NodeId.CONTROLLER else FnCode.READ,
                     reg, round(0.1 * i, 9)) for i in range(n)]


# -- waveforms -------------------------------------------------------------

def test_step_and_pulse():
    assert design_waveform(Waveform(magnitude=0.3), 0.5) == 0.3
    assert design_waveform(Waveform(magnitude=0.3), -0.1) == 0.0
    pulse = Waveform(kind=WaveformKind.PULSE, magnitude=0.2, duration=0.5)
    assert design_waveform(pulse, 0.5) == 0.2
    assert design_waveform(pulse, 0.6) == 0.0


def test_ramp_capped_by_magnitude():
    ramp = Waveform(kind=WaveformKind.RAMP, rate=0.5, magnitude=0.2)
    assert design_waveform(ramp, 0.2) == pytest.approx(0.1)
    assert design_waveform(ramp, 1.0) == pytest.approx(0.2)
    down = Waveform(kind=WaveformKind.RAMP, rate=-0.5, magnitude=0.2)
    assert design_waveform(down, 1.0) == pytest.approx(-0.2)


def test_stealth_ramp_stays_under_threshold():
    w = Waveform(kind=WaveformKind.STEALTH_RAMP, rate=1.0, threshold=0.01)
    values = [design_waveform(w, k * 0.1) for k in range(50)]
    steps = [b - a for a, b in zip(values, values[1:])]
    assert max(steps) < 0.01
    assert values[-1] > 0.4


# -- consistency -------------------------------------------------------------

def test_kind_point_mismatch_rejected():
    with pytest.raises(ValueError):
        sca(injection_point=InjectionPoint.SENSOR_TO_DM)
    with pytest.raises(ValueError):
        AttackSpec(id=1, kind=AttackKind.INTEGRITY_DM,
                   injection_point=InjectionPoint.ACTUATOR_CMD, window=(1.0, 2.0))


def test_controller_parameters_only_modified():
    with pytest.raises(ValueError):
        sca(injection_point=InjectionPoint.CONTROLLER_PARAM, action=AttackAction.DROP)
    assert sca(injection_point=InjectionPoint.CONTROLLER_PARAM).action is AttackAction.MODIFY


def test_stealthy_and_dos_requirements():
    with pytest.raises(ValueError):
        AttackSpec(id=1, kind=AttackKind.STEALTHY, window=(1.0, 2.0))
    with pytest.raises(ValueError):
        AttackSpec(id=1, kind=AttackKind.STEALTHY, window=(1.0, 2.0), dm_targets=[NodeId.CONTROLLER])
    with pytest.raises(ValueError):
        AttackSpec(id=1, kind=AttackKind.DOS, window=(1.0, 2.0))


def test_partial_stealthy():
    spec = AttackSpec(id=1, kind=AttackKind.STEALTHY, window=(1.0, 2.0), dm_targets=[NodeId.HMI])
    assert spec.partial_stealthy
    full = spec.model_copy(update={"dm_targets": [NodeId.HMI, NodeId.LOGSERVER]})
    assert not full.partial_stealthy


def test_empty_window_and_long_waveform_rejected():
    with pytest.raises(ValueError):
        sca(window=(2.0, 2.0))
    with pytest.raises(ValueError):
        sca(waveform=Waveform(kind=WaveformKind.PULSE, magnitude=0.1, duration=5.0))


def test_vector_rules():
    payload = AttackStep(offset=-0.1, from_node=NodeId.ATTACKER, to_node=NodeId.CONTROLLER,
                         effect=StepEffect.PAYLOAD)
    assert sca(vector=[payload]).vector[-1].effect is StepEffect.PAYLOAD

    recon = AttackStep(offset=-0.3, from_node=NodeId.CORP_WS, to_node=NodeId.HMI,
                       effect=StepEffect.RECON)
    with pytest.raises(ValueError):
        # CORP_WS->HMI shares no node with ATTACKER->CONTROLLER
        sca(vector=[recon, payload])
    with pytest.raises(ValueError):
        sca(vector=[recon])
    with pytest.raises(ValueError):
        sca(vector=[payload.model_copy(update={"offset": -0.1}),
                    payload.model_copy(update={"offset": -0.2})])
    hmi_payload = AttackStep(offset=-0.1, from_node=NodeId.ATTACKER, to_node=NodeId.HMI,
                             effect=StepEffect.PAYLOAD)
    with pytest.raises(ValueError):
        sca(vector=[hmi_payload])
    with pytest.raises(ValueError):
        sca(window=(0.05, 1.0), vector=[payload])


def test_attack_step_needs_a_link():
    with pytest.raises(ValueError):
        AttackStep(from_node=NodeId.CORP_WS, to_node=NodeId.CONTROLLER, effect=StepEffect.PAYLOAD)


def test_templates_are_consistent():
    assert vector_from_template(VectorTemplate.NONE) == []
    remote = vector_from_template(VectorTemplate.REMOTE_CORP)
    spec = AttackSpec(id=1, kind=AttackKind.INTEGRITY_DM,
                      injection_point=InjectionPoint.DM_TO_ACTUATOR, window=(2.0, 3.0), vector=remote)
    assert spec.reaches_hmi


# -- interceptors ----------------------------------------------------------

def test_stream_interceptor_transparent_until_armed():
    net = NetworkSimulator()
    interceptor = StreamInterceptor(sca(waveform=Waveform(magnitude=0.5)), NodeId.SENSOR,
                                    NodeId.CONTROLLER, int(Register.Y), AttackAction.MODIFY,
                                    Waveform(magnitude=0.5))
    net.add_interceptor(interceptor)
    deliveries = feed(net, NodeId.SENSOR, NodeId.CONTROLLER, Register.Y)
    assert all(d.frame.value == d.frame.ts for d in deliveries)


def test_modify_inside_window_only():
    net = NetworkSimulator()
    spec = sca(waveform=Waveform(magnitude=0.5))
    interceptor = StreamInterceptor(spec, NodeId.SENSOR, NodeId.CONTROLLER, int(Register.Y),
                                    AttackAction.MODIFY, spec.waveform)
    interceptor.arm(1.0)
    net.add_interceptor(interceptor)
    deliveries = feed(net, NodeId.SENSOR, NodeId.CONTROLLER, Register.Y, n=25)
    for d in deliveries:
        ts = d.frame.ts
        expected = ts + 0.5 if 1.0 <= ts <= 2.0 else ts
        assert d.frame.value == pytest.approx(expected)
        assert d.frame.attack_id == (1 if 1.0 <= ts <= 2.0 else 0)


def test_drop_action():
    net = NetworkSimulator()
    spec = sca(action=AttackAction.DROP)
    interceptor = StreamInterceptor(spec, NodeId.SENSOR, NodeId.CONTROLLER, None,
                                    AttackAction.DROP, spec.waveform)
    interceptor.arm(1.0)
    net.add_interceptor(interceptor)
    deliveries = feed(net, NodeId.SENSOR, NodeId.CONTROLLER, Register.Y)
    dropped = [d.frame.ts for d in deliveries if d.status is DeliveryStatus.DROPPED]
    assert dropped == pytest.approx([round(1.0 + 0.1 * i, 9) for i in range(11)])


def test_replay_uses_history_and_fresh_txn():
    net = NetworkSimulator()
    spec = sca(action=AttackAction.REPLAY, lookback=0.5)
    interceptor = StreamInterceptor(spec, NodeId.SENSOR, NodeId.CONTROLLER, int(Register.Y),
                                    AttackAction.REPLAY, spec.waveform, txn_source=net.next_txn)
    interceptor.arm(1.0)
    net.add_interceptor(interceptor)
    deliveries = {d.frame.ts: d for d in feed(net, NodeId.SENSOR, NodeId.CONTROLLER, Register.Y)}
    assert deliveries[1.5].frame.value == pytest.approx(1.0)
    assert deliveries[2.0].frame.value == pytest.approx(1.5)
    txns = [d.frame.txn for d in deliveries.values()]
    assert len(set(txns)) == len(txns)


def test_actuator_commands_never_negative():
    spec = AttackSpec(id=2, kind=AttackKind.INTEGRITY_SCA, injection_point=InjectionPoint.ACTUATOR_CMD,
                      waveform=Waveform(magnitude=-3.0), window=(0.0, 1.0))
    interceptor = ActuatorInterceptor(spec, NodeId.CONTROLLER, NodeId.ACTUATOR, int(Register.U),
                                      AttackAction.MODIFY, spec.waveform)
    interceptor.arm(0.0)
    assert interceptor.view(1.0, 0.5) == 0.0


def test_freeze_last_good_report():
    net = NetworkSimulator()
    spec = AttackSpec(id=1, kind=AttackKind.STEALTHY, window=(1.0, 2.0), dm_targets=[NodeId.HMI])
    interceptor = ReportInterceptor(spec, NodeId.HMI, Register.Y, ReportPolicy.FREEZE_LAST_GOOD)
    interceptor.arm(1.0)
    net.add_interceptor(interceptor)
    deliveries = feed(net, NodeId.CONTROLLER, NodeId.HMI, Register.Y, n=25)
    for d in deliveries:
        if 1.0 <= d.frame.ts <= 2.0:
            assert d.frame.value == pytest.approx(0.9)
        else:
            assert d.frame.value == pytest.approx(d.frame.ts)


def test_safe_envelope_replay_cycles():
    net = NetworkSimulator()
    spec = AttackSpec(id=1, kind=AttackKind.STEALTHY, window=(1.0, 2.0), dm_targets=[NodeId.HMI],
                      report_policy=ReportPolicy.SAFE_ENVELOPE_REPLAY, lookback=0.5)
    interceptor = ReportInterceptor(spec, NodeId.HMI, Register.Y, ReportPolicy.SAFE_ENVELOPE_REPLAY)
    interceptor.arm(1.0)
    net.add_interceptor(interceptor)
    got = {d.frame.ts: d.frame.value for d in feed(net, NodeId.CONTROLLER, NodeId.HMI, Register.Y)}
    assert got[1.0] == pytest.approx(0.5)
    assert got[1.2] == pytest.approx(0.7)
    assert got[1.5] == pytest.approx(0.5)


def test_fake_unsafe_report_adds_offset():
    spec = AttackSpec(id=1, kind=AttackKind.STEALTHY, window=(1.0, 2.0), dm_targets=[NodeId.HMI],
                      report_policy=ReportPolicy.FAKE_UNSAFE)
    interceptor = ReportInterceptor(spec, NodeId.HMI, Register.Y, ReportPolicy.FAKE_UNSAFE)
    interceptor.arm(1.0)
    assert interceptor.view(0.46, 1.5) == pytest.approx(1.06)
    assert interceptor.view(0.46, 2.5) == pytest.approx(0.46)


def test_starvation_drops_deterministic_fraction():
    spec = AttackSpec(id=3, kind=AttackKind.DOS, window=(0.0, 10.0), dos_rate=1200.0)
    starve = StarvationInterceptor(spec, [(NodeId.CONTROLLER, NodeId.HMI)], capacity=600.0,
                                   service_time=0.002)
    assert starve.drop_fraction == pytest.approx(0.5)
    net = NetworkSimulator()
    net.add_interceptor(starve)
    deliveries = feed(net, NodeId.CONTROLLER, NodeId.HMI, Register.Y, n=20)
    statuses = [d.status for d in deliveries]
    assert statuses.count(DeliveryStatus.DROPPED) == 10
    assert all(d.at == pytest.approx(d.frame.ts + 0.002) for d in deliveries if d.received)


def test_light_flood_only_delays():
    spec = AttackSpec(id=3, kind=AttackKind.DOS, window=(0.0, 10.0), dos_rate=300.0)
    starve = StarvationInterceptor(spec, [(NodeId.CONTROLLER, NodeId.HMI)], capacity=600.0,
                                   service_time=0.002)
    assert starve.drop_fraction == 0.0
    assert starve.delay == pytest.approx(0.001)


def test_trip_broadcast_never_starved():
    spec = AttackSpec(id=3, kind=AttackKind.DOS, window=(0.0, 10.0), dos_rate=6000.0)
    starve = StarvationInterceptor(spec, [(NodeId.CONTROLLER, NodeId.HMI)], 600.0, 0.002)
    net = NetworkSimulator()
    frame = net.new_frame(1.0, NodeId.CONTROLLER, NodeId.HMI, FnCode.TRIP_BCAST, Register.TRIP, 0.95)
    assert not starve.matches(frame)


# -- engine ----------------------------------------------------------------

def test_engine_rejects_duplicate_ids():
    engine = AttackEngine(NetworkSimulator(), HostLog())
    engine.install(sca())
    with pytest.raises(AttackConfigError):
        engine.install(sca())


def test_inject_integrity_only_takes_integrity_kinds():
    engine = AttackEngine(NetworkSimulator(), HostLog())
    dos = AttackSpec(id=2, kind=AttackKind.DOS, window=(1.0, 2.0), dos_rate=100.0)
    with pytest.raises(AttackConfigError):
        engine.inject_integrity(dos)
    installed = engine.inject_integrity(sca())
    assert len(installed) == 1
    assert (installed[0].src, installed[0].dst) == (NodeId.SENSOR, NodeId.CONTROLLER)


def test_inject_stealthy_report_coverage():
    engine = AttackEngine(NetworkSimulator(), HostLog())
    with pytest.raises(AttackConfigError):
        engine.inject_stealthy(sca(), None, ReportPolicy.FREEZE_LAST_GOOD)
    spec = AttackSpec(id=3, kind=AttackKind.STEALTHY, window=(1.0, 2.0),
                      dm_targets=[NodeId.HMI, NodeId.LOGSERVER])
    frozen = engine.inject_stealthy(spec, None, ReportPolicy.FREEZE_LAST_GOOD)
    assert len(frozen) == 4
    assert all(isinstance(i, ReportInterceptor) for i in frozen)
    assert {i.dst for i in frozen} == {NodeId.HMI, NodeId.LOGSERVER}
    fake = engine.inject_stealthy(spec.model_copy(update={"id": 4}), None, ReportPolicy.FAKE_UNSAFE)
    assert [i.addr for i in fake] == [int(Register.Y), int(Register.Y)]


def test_inject_dos_without_rtos_priority_starves_control_too():
    net = NetworkSimulator()
    engine = AttackEngine(net, HostLog(), rtos_priority=False)
    spec = AttackSpec(id=1, kind=AttackKind.DOS, window=(1.0, 1.5), dos_rate=50.0)
    installed = engine.inject_dos(spec, FailsafeMode.FAIL_CLOSED)
    assert len(installed) == 2
    assert all(isinstance(i, StarvationInterceptor) for i in installed)
    assert engine.starvation[1] == installed
    net.run()
    flood = [r for r in net.captures if r["src"] is NodeId.ATTACKER and r["capture_node"] is NodeId.ATTACKER]
    assert len(flood) == 25


def test_execute_vector_returns_schedule():
    engine = AttackEngine(NetworkSimulator(), HostLog())
    with pytest.raises(AttackConfigError):
        engine.execute_vector(sca())
    steps = [AttackStep(offset=-0.5, from_node=NodeId.CORP_WS, to_node=NodeId.HMI, effect=StepEffect.RECON),
             AttackStep(offset=-0.1, from_node=NodeId.ATTACKER, to_node=NodeId.HMI,
                        effect=StepEffect.PAYLOAD)]
    spec = AttackSpec(id=6, kind=AttackKind.INTEGRITY_DM, injection_point=InjectionPoint.SENSOR_TO_DM,
                      window=(2.0, 3.0), dm_targets=[NodeId.HMI], vector=steps)
    trace = engine.execute_vector(spec)
    assert trace.attack_id == 6
    assert trace.step_times == [1.5, 1.9]
    assert trace.arm_time == 1.9 == engine.arm_times[6]


def test_engine_vector_artifacts_and_arming():
    log = HostLog()
    net = NetworkSimulator(hostlog=log)
    engine = AttackEngine(net, log)
    common = {"from_node": NodeId.CORP_WS, "to_node": NodeId.HMI}
    spec = AttackSpec(
        id=5, kind=AttackKind.INTEGRITY_DM, injection_point=InjectionPoint.SENSOR_TO_DM,
        window=(2.0, 3.0), dm_targets=[NodeId.HMI], waveform=Waveform(magnitude=0.1),
        vector=[AttackStep(offset=-0.6, effect=StepEffect.RECON, **common),
                AttackStep(offset=-0.4, effect=StepEffect.CREDENTIAL, count=2, **common),
                AttackStep(offset=-0.3, effect=StepEffect.PIVOT, **common),
                AttackStep(offset=-0.2, from_node=NodeId.ATTACKER, to_node=NodeId.HMI,
                           effect=StepEffect.PAYLOAD)])
    engine.install(spec)
    assert engine.arm_times[5] == pytest.approx(1.8)
    net.run()
    kinds = [e.kind for e in log.events(NodeId.HMI)]
    assert kinds == [HostEventKind.SYS_ERROR, HostEventKind.AUTH_FAIL, HostEventKind.AUTH_FAIL,
                     HostEventKind.AUTH_LOGIN, HostEventKind.PROC_START]
    assert all(e.attack_id == 5 for e in log.events(NodeId.HMI))
    value, label = engine.dm_view(NodeId.HMI, Register.Y, 0.46, 2.5)
    assert value == pytest.approx(0.56) and label == 5
    assert engine.dm_view(NodeId.LOGSERVER, Register.Y, 0.46, 2.5) == (0.46, 0)


def test_engine_dos_floods_and_logs_starvation():
    log = HostLog()
    net = NetworkSimulator(hostlog=log)
    engine = AttackEngine(net, log)
    spec = AttackSpec(id=1, kind=AttackKind.DOS, window=(1.0, 1.1), dos_rate=1200.0)
    engine.install(spec)
    for i in range(10, 12):
        net.schedule(round(0.1 * i, 9), NodeId.CONTROLLER, lambda t: net.send(
            t, NodeId.CONTROLLER, NodeId.HMI, FnCode.WRITE, Register.Y, 0.46))
    net.run()
    flood = [r for r in net.captures if r["src"] is NodeId.ATTACKER and r["capture_node"] is NodeId.ATTACKER]
    assert len(flood) == 120
    errors = [e for e in log.events(NodeId.CONTROLLER) if e.kind is HostEventKind.SYS_ERROR]
    assert len(errors) == 1 and "state=starved" in errors[0].detail
    assert engine.active_ids(1.05) == [1]
    assert engine.active_ids(1.5) == []


def test_log_wipe_on_finalize():
    log = HostLog()
    log.log(1.5, NodeId.CONTROLLER, HostEventKind.CMD_ISSUED, "control-task", "reg=U")
    log.log(1.5, NodeId.HMI, HostEventKind.CMD_ISSUED, "op", "reg=U")
    engine = AttackEngine(NetworkSimulator(), log)
    engine.install(sca(log_wipe=True))
    engine.finalize()
    assert log.events(NodeId.CONTROLLER) == []
    assert len(log.events(NodeId.HMI)) == 1


# -- planning ---------------------------------------------------------------

GRID = AttackGrid(kinds=[AttackKind.INTEGRITY_SCA, AttackKind.DOS],
                  waveform_kinds=[WaveformKind.STEP, WaveformKind.RAMP], magnitudes=[0.05],
                  window_length=1.0, gap=0.5, start=1.0, duration=30.0)


def test_plan_respects_limit_and_spacing():
    plan = plan_attacks(GRID, limit=4, seed=1)
    assert [s.id for s in plan] == [1, 2, 3, 4]
    assert {s.kind for s in plan} == {AttackKind.INTEGRITY_SCA, AttackKind.DOS}
    for first, second in zip(plan, plan[1:]):
        assert second.t_start >= first.t_end + 0.5 - 1e-9


def test_plan_is_seeded():
    a = [s.catalog_entry() for s in plan_attacks(GRID, limit=4, seed=3)]
    b = [s.catalog_entry() for s in plan_attacks(GRID, limit=4, seed=3)]
    assert a == b


def test_plan_prunes_duplicates():
    # a drop ignores its waveform, so both waveform kinds collapse into one candidate
    grid = GRID.model_copy(update={"kinds": [AttackKind.INTEGRITY_SCA],
                                   "injection_points": [InjectionPoint.SENSOR_TO_CONTROLLER],
                                   "actions": [AttackAction.DROP]})
    assert len(plan_attacks(grid, limit=10)) == 1


def test_zero_day_scheduled_in_test_range():
    grid = GRID.model_copy(update={
        "zero_day_holdout": [ZeroDayCombo(injection_point=InjectionPoint.ACTUATOR_CMD,
                                          waveform_kind=WaveformKind.STEP)],
        "zero_day_count": 1, "test_start": 20.0})
    plan = plan_attacks(grid, limit=5, seed=0)
    zero = [s for s in plan if s.zero_day]
    assert len(zero) == 1
    assert zero[0].kind is AttackKind.ZERO_DAY_VARIANT
    assert zero[0].t_start >= 20.0
    assert all(s.t_end <= 20.0 for s in plan if not s.zero_day)


def test_stealthy_zero_day_keeps_fake_reports():
    grid = GRID.model_copy(update={
        "kinds": [AttackKind.STEALTHY],
        "zero_day_holdout": [ZeroDayCombo(injection_point=InjectionPoint.ACTUATOR_CMD,
                                          waveform_kind=WaveformKind.STEP)],
        "zero_day_count": 1, "test_start": 20.0})
    zero = [s for s in plan_attacks(grid, limit=3, seed=0) if s.zero_day]
    assert len(zero) == 1
    spec = zero[0]
    assert spec.kind is AttackKind.ZERO_DAY_VARIANT
    assert spec.variant_of is AttackKind.STEALTHY and spec.base_kind is AttackKind.STEALTHY
    installed = AttackEngine(NetworkSimulator(), HostLog()).install(spec)
    reports = [i for i in installed if isinstance(i, ReportInterceptor)]
    assert {i.dst for i in reports} == set(spec.dm_targets) == {NodeId.HMI, NodeId.LOGSERVER}
    assert any(isinstance(i, ActuatorInterceptor) for i in installed)


def test_variant_of_only_on_zero_day_kinds():
    with pytest.raises(ValueError):
        sca(variant_of=AttackKind.STEALTHY)
    with pytest.raises(ValueError):
        sca(kind=AttackKind.ZERO_DAY_VARIANT, variant_of=AttackKind.DOS)
    assert sca(kind=AttackKind.ZERO_DAY_VARIANT).base_kind is AttackKind.ZERO_DAY_VARIANT


def test_plan_overflow():
    with pytest.raises(PlanningError):
        plan_attacks(GRID.model_copy(update={"duration": 3.0}), limit=4)
    with pytest.raises(PlanningError):
        plan_attacks(GRID, limit=0)
