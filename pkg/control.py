"""
Regulatory PI controller, safety trip and AUTO/MANUAL handling.

The same pure control law backs the live controller (pi_update) and the
controller model used by the trace oracle (predict_action, infer_integral).
"""

import logging
from enum import Enum
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from utils import TestbedError

logger = logging.getLogger(__name__)


class ControlError(TestbedError):
    pass


class ControlModeError(ControlError):
    pass


class ControlRangeError(ControlError, ValueError):
    pass


class NotApplicableError(ControlError):
    pass


class ControlMode(str, Enum):
    AUTO = "AUTO"
    MANUAL = "MANUAL"


class ControllerConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    setpoint: float = 0.4625
    kp_gain: float = 2.0
    ki_gain: float = 4.0
    u_bias: float = 1.0
    u_min: float = 0.0
    u_max: float = 5.0
    sample_period: float = Field(0.1, gt=0)
    haz_threshold: float = 0.9
    rtos_priority: bool = True

    @model_validator(mode="after")
    def _check_limits(self) -> "ControllerConfig":
        if not self.u_min < self.u_max:
            raise ValueError(f"u_min ({self.u_min}) must be below u_max ({self.u_max})")
        if not self.haz_threshold > self.setpoint:
            raise ValueError("haz_threshold must exceed the setpoint")
        if not self.u_min <= self.u_bias <= self.u_max:
            raise ValueError("u_bias must lie within the actuator limits")
        return self


class ControllerState(BaseModel):
    model_config = ConfigDict(frozen=True)

    control_mode: ControlMode = ControlMode.AUTO
    integral_accum: float = 0.0
    last_u: float = 1.0
    tripped: bool = False

    @model_validator(mode="after")
    def _trip_forces_zero(self) -> "ControllerState":
        if self.tripped and self.last_u != 0.0:
            raise ValueError("a tripped controller must hold u = 0")
        return self


def initial_state(cfg: ControllerConfig) -> ControllerState:
    return ControllerState(last_u=cfg.u_bias)


def _pi_law(y: float, cfg: ControllerConfig, integral: float) -> Tuple[float, float]:
    # integral frozen whenever the raw output saturates
    error = cfg.setpoint - y
    candidate = integral + error * cfg.sample_period
    raw = cfg.u_bias + cfg.kp_gain * error + cfg.ki_gain * candidate
    if raw > cfg.u_max:
        return cfg.u_max, integral
    if raw < cfg.u_min:
        return cfg.u_min, integral
    return raw, candidate


def pi_update(y: float, cfg: ControllerConfig, st: ControllerState) -> Tuple[float, ControllerState]:
    """
    One sample of the PI law with actuator clamping and anti-windup.

    Returns:
        (u, new controller state)
    """
    if st.tripped:
        raise ControlModeError("controller is tripped")
    if st.control_mode is not ControlMode.AUTO:
        raise ControlModeError("pi_update called in MANUAL mode")
    u, integral = _pi_law(y, cfg, st.integral_accum)
    return u, st.model_copy(update={"integral_accum": integral, "last_u": u})


def predict_action(y: float, cfg: ControllerConfig, st: ControllerState,
                   auto_flag: bool = True) -> float:
    """What pi_update would emit, without touching the state."""
    if not auto_flag or st.control_mode is not ControlMode.AUTO:
        raise NotApplicableError("controller was not in AUTO at this sample")
    return _pi_law(y, cfg, st.integral_accum)[0]


def infer_integral(y: float, u_next: float, cfg: ControllerConfig) -> Optional[float]:
    """
    Integral state after the update at y that yields u_next.

    None when u_next sits on an actuator limit (the integral is not observable).
    """
    if not cfg.u_min < u_next < cfg.u_max:
        return None
    error = cfg.setpoint - y
    return (u_next - cfg.u_bias - cfg.kp_gain * error) / cfg.ki_gain


def safety_check(y: float, cfg: ControllerConfig, st: ControllerState) -> Tuple[bool, ControllerState]:
    """Trip when y strictly exceeds the hazard threshold; the trip latches."""
    if st.tripped:
        return True, st
    if y > cfg.haz_threshold:
        logger.warning("Safety trip: y=%.6f > %.6f", y, cfg.haz_threshold)
        return True, st.model_copy(update={"tripped": True, "last_u": 0.0})
    return False, st


def reseed_integral(y: float, cfg: ControllerConfig, last_u: float) -> float:
    """Integral value that makes the next pi_update at y return last_u."""
    error = cfg.setpoint - y
    return (last_u - cfg.u_bias - cfg.kp_gain * error) / cfg.ki_gain - error * cfg.sample_period


def set_control_mode(st: ControllerState, mode: ControlMode, cfg: ControllerConfig,
                     manual_u: Optional[float] = None, actor: str = "operator",
                     y: Optional[float] = None) -> ControllerState:
    """
    Switch between AUTO and MANUAL.

    MANUAL stores manual_u as the held output. MANUAL -> AUTO is bumpless:
    the integral is re-seeded at the current measurement y (or at the
    setpoint when y is unknown).
    """
    if manual_u is not None and not cfg.u_min <= manual_u <= cfg.u_max:
        raise ControlRangeError(f"manual_u {manual_u} outside [{cfg.u_min}, {cfg.u_max}]")
    if st.tripped:
        logger.info("Mode switch to %s by %s ignored: controller tripped", mode.value, actor)
        return st

    update = {"control_mode": mode}
    if mode is ControlMode.MANUAL and manual_u is not None:
        update["last_u"] = manual_u
    if mode is ControlMode.AUTO and st.control_mode is ControlMode.MANUAL:
        y_now = cfg.setpoint if y is None else y
        update["integral_accum"] = reseed_integral(y_now, cfg, st.last_u)

    logger.debug("Control mode %s -> %s by %s", st.control_mode.value, mode.value, actor)
    return st.model_copy(update=update)


def manual_write(st: ControllerState, u: float, cfg: ControllerConfig) -> ControllerState:
    """Operator command received while in MANUAL."""
    if not cfg.u_min <= u <= cfg.u_max:
        raise ControlRangeError(f"command {u} outside [{cfg.u_min}, {cfg.u_max}]")
    if st.tripped or st.control_mode is not ControlMode.MANUAL:
        return st
    return st.model_copy(update={"last_u": u})
