import pytest

from config import DisturbanceEvent, ScenarioConfig
from control import (ControlMode, ControlModeError, ControlRangeError, ControllerConfig,
                     ControllerState, NotApplicableError, infer_integral, initial_state,
                     manual_write, pi_update, predict_action, reseed_integral, safety_check,
                     set_control_mode)
from simulator import TestbedSimulator

CFG = ControllerConfig()


def test_zero_error_gives_bias():
    u, st = pi_update(CFG.setpoint, CFG, initial_state(CFG))
    assert u == CFG.u_bias
    assert st.integral_accum == 0.0
    assert st.last_u == CFG.u_bias


def test_positive_error_raises_output():
    u0, _ = pi_update(CFG.setpoint, CFG, initial_state(CFG))
    u1, _ = pi_update(CFG.setpoint - 0.1, CFG, initial_state(CFG))
    assert u1 > u0


def test_pi_law_values():
    # e = 0.1: integral 0.01, u = 1 + 0.2 + 0.04
    u, st = pi_update(CFG.setpoint - 0.1, CFG, initial_state(CFG))
    assert u == pytest.approx(1.24)
    assert st.integral_accum == pytest.approx(0.01)


def test_anti_windup_freezes_integral():
    st = initial_state(CFG).model_copy(update={"integral_accum": 0.05})
    u1, st1 = pi_update(-5.0, CFG, st)
    u2, st2 = pi_update(-5.0, CFG, st1)
    assert u1 == u2 == CFG.u_max
    assert st1.integral_accum == st2.integral_accum == 0.05

    u3, st3 = pi_update(5.0, CFG, st)
    assert u3 == CFG.u_min
    assert st3.integral_accum == 0.05


def test_unclamped_reference_agrees_inside_limits():
    st = initial_state(CFG)
    integral = 0.0
    for y in (0.47, 0.45, 0.44, 0.46, 0.48):
        u, st = pi_update(y, CFG, st)
        e = CFG.setpoint - y
        integral += e * CFG.sample_period
        assert u == pytest.approx(CFG.u_bias + CFG.kp_gain * e + CFG.ki_gain * integral)


def test_pi_update_rejects_manual_and_tripped():
    manual = ControllerState(control_mode=ControlMode.MANUAL)
    with pytest.raises(ControlModeError):
        pi_update(0.4, CFG, manual)
    tripped = ControllerState(tripped=True, last_u=0.0)
    with pytest.raises(ControlModeError):
        pi_update(0.4, CFG, tripped)


def test_tripped_state_must_hold_zero():
    with pytest.raises(ValueError):
        ControllerState(tripped=True, last_u=1.0)


def test_config_invariants():
    with pytest.raises(ValueError):
        ControllerConfig(u_min=5.0, u_max=1.0)
    with pytest.raises(ValueError):
        ControllerConfig(haz_threshold=0.4)
    with pytest.raises(ValueError):
        ControllerConfig(sample_period=0.0)


def test_safety_threshold_is_strict():
    tripped, st = safety_check(CFG.haz_threshold, CFG, initial_state(CFG))
    assert not tripped
    assert not st.tripped


def test_safety_trip_forces_zero_and_latches():
    tripped, st = safety_check(CFG.haz_threshold + 0.01, CFG, initial_state(CFG))
    assert tripped
    assert st.tripped and st.last_u == 0.0
    tripped, st = safety_check(0.1, CFG, st)
    assert tripped and st.tripped


def test_predict_action_matches_pi_update_without_mutation():
    st = initial_state(CFG).model_copy(update={"integral_accum": 0.02})
    predicted = predict_action(0.43, CFG, st)
    u, _ = pi_update(0.43, CFG, st)
    assert predicted == u
    assert st.integral_accum == 0.02


def test_predict_action_needs_auto():
    with pytest.raises(NotApplicableError):
        predict_action(0.4, CFG, initial_state(CFG), auto_flag=False)
    with pytest.raises(NotApplicableError):
        predict_action(0.4, CFG, ControllerState(control_mode=ControlMode.MANUAL))


def test_infer_integral_inverts_the_law():
    st = initial_state(CFG).model_copy(update={"integral_accum": 0.013})
    u, after = pi_update(0.44, CFG, st)
    assert infer_integral(0.44, u, CFG) == pytest.approx(after.integral_accum, abs=1e-12)
    assert infer_integral(0.0, CFG.u_max, CFG) is None
    assert infer_integral(1.0, CFG.u_min, CFG) is None


def test_manual_holds_operator_value():
    st = set_control_mode(initial_state(CFG), ControlMode.MANUAL, CFG, manual_u=2.0)
    assert st.control_mode is ControlMode.MANUAL
    assert st.last_u == 2.0
    st = manual_write(st, 1.5, CFG)
    assert st.last_u == 1.5


def test_manual_write_ignored_in_auto():
    st = manual_write(initial_state(CFG), 3.0, CFG)
    assert st.last_u == CFG.u_bias


def test_manual_value_out_of_range():
    with pytest.raises(ControlRangeError):
        set_control_mode(initial_state(CFG), ControlMode.MANUAL, CFG, manual_u=9.0)
    with pytest.raises(ControlRangeError):
        manual_write(initial_state(CFG), -1.0, CFG)


def test_return_to_auto_is_bumpless():
    st = set_control_mode(initial_state(CFG), ControlMode.MANUAL, CFG, manual_u=1.7)
    st = set_control_mode(st, ControlMode.AUTO, CFG, y=0.41)
    u, _ = pi_update(0.41, CFG, st)
    assert u == pytest.approx(1.7, abs=1e-12)
    assert st.integral_accum == pytest.approx(reseed_integral(0.41, CFG, 1.7))


def test_mode_switch_ignored_when_tripped():
    _, st = safety_check(1.0, CFG, initial_state(CFG))
    assert set_control_mode(st, ControlMode.MANUAL, CFG, manual_u=2.0) == st


def test_closed_loop_rejects_inlet_step():
    step_at = 1.0
    cfg = ScenarioConfig(name="inlet-step", duration=12.0,
                         disturbances=[DisturbanceEvent(at=step_at, c_a0=1.925)])
    result = TestbedSimulator(cfg).run()
    settled = result.truth[result.truth["t"] >= step_at + 20 * cfg.plant.tau]
    assert len(settled)
    assert (settled["c_a"] - cfg.controller.setpoint).abs().max() < 0.005
    assert result.trips == []
