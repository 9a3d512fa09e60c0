"""
CSTR plant simulation.

First-order continuous stirred tank reactor with a measurable inlet
concentration disturbance and a hybrid automaton of failure modes:

    dC_A/dt = (F_eff / V) * (C_A0 - C_A) - k_eff * C_A

F1 (catalyst decay) scales the rate constant, F2 (inlet valve stiction)
freezes the flow at its last value, F12 is both. Integration is fixed-step RK4.
"""

import logging
import math
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from utils import TestbedError

logger = logging.getLogger(__name__)


class PlantError(TestbedError):
    pass


class NumericDomainError(PlantError, ValueError):
    pass


class ModeTransitionError(PlantError):
    pass


class SingularityError(PlantError, ZeroDivisionError):
    pass


class SystemMode(str, Enum):
    NORMAL = "NORMAL"
    F1 = "F1"
    F2 = "F2"
    F12 = "F12"


class FaultKind(str, Enum):
    F1_CAUSES = "F1_CAUSES"
    F2_CAUSES = "F2_CAUSES"
    F1_AND_F2_CAUSES = "F1_AND_F2_CAUSES"


# Legal edges of the failure automaton; F12 is absorbing and nothing repairs.
TRANSITIONS: Dict[Tuple[SystemMode, FaultKind], SystemMode] = {
    (SystemMode.NORMAL, FaultKind.F1_CAUSES): SystemMode.F1,
    (SystemMode.NORMAL, FaultKind.F2_CAUSES): SystemMode.F2,
    (SystemMode.NORMAL, FaultKind.F1_AND_F2_CAUSES): SystemMode.F12,
    (SystemMode.F1, FaultKind.F2_CAUSES): SystemMode.F12,
    (SystemMode.F2, FaultKind.F1_CAUSES): SystemMode.F12,
}

LEGAL_EDGES = {(src, dst) for (src, _), dst in TRANSITIONS.items()}


class PlantParams(BaseModel):
    """Physical constants of the reactor and the integrator settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    F: float = Field(1.0, gt=0, description="Nominal inlet flow (m³/min)")
    V: float = Field(1.0, gt=0, description="Reactor volume (m³)")
    k: float = Field(1.0, ge=0, description="Reaction rate constant (1/min)")
    noise_std: float = Field(0.0, ge=0, description="Sensor noise std (mol/m³)")
    dt: float = Field(1e-3, gt=0, description="Integration step (min)")
    kappa: float = Field(0.5, gt=0, lt=1, description="Default catalyst decay factor")

    @property
    def gain(self) -> float:
        """Steady-state gain K_p = F / (F + V k)."""
        return self.F / (self.F + self.V * self.k)

    @property
    def tau(self) -> float:
        """Time constant τ = V / (F + V k) in minutes."""
        return self.V / (self.F + self.V * self.k)


class PlantState(BaseModel):
    model_config = ConfigDict(frozen=True)

    t: float = 0.0
    c_a: float = Field(..., ge=0)
    c_a0: float = Field(..., ge=0)
    mode: SystemMode = SystemMode.NORMAL
    flow: float = Field(1.0, ge=0, description="Flow applied over the last step")
    k_scale: float = Field(1.0, gt=0, le=1)
    frozen_flow: Optional[float] = None


class FaultEvent(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    at: float = Field(..., ge=0)
    kind: FaultKind
    params: Dict[str, float] = Field(default_factory=dict)

    @field_validator("params")
    @classmethod
    def _check_kappa(cls, value: Dict[str, float]) -> Dict[str, float]:
        kappa = value.get("kappa")
        if kappa is not None and not 0.0 < kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")
        return value


def _require_finite(**values: float) -> None:
    for name, value in values.items():
        if value is None or not math.isfinite(value):
            raise NumericDomainError(f"{name} is not finite: {value!r}")


def steady_state(params: PlantParams, c_a0: float, t: float = 0.0,
                 mode: SystemMode = SystemMode.NORMAL) -> PlantState:
    """Consistent equilibrium c_a = K_p * c_a0 at nominal flow."""
    return PlantState(t=t, c_a=params.gain * c_a0, c_a0=c_a0, mode=mode, flow=params.F)


def _derivative(c_a: float, c_a0: float, flow: float, k_eff: float, volume: float) -> float:
    return (flow / volume) * (c_a0 - c_a) - k_eff * c_a


def integrate_step(state: PlantState, u: float, params: PlantParams) -> PlantState:
    """
    Advance the reactor by one RK4 step of params.dt.

    Args:
        state: Current plant state
        u: Flow command (m³/min); ignored while the valve is stuck
        params: Plant parameters

    Returns:
        New state with t advanced by exactly dt
    """
    _require_finite(t=state.t, c_a=state.c_a, c_a0=state.c_a0, u=u)
    if u < 0:
        raise NumericDomainError(f"flow command must be non-negative, got {u}")

    flow = state.frozen_flow if state.frozen_flow is not None else u
    k_eff = params.k * state.k_scale
    dt = params.dt
    c = state.c_a

    k1 = _derivative(c, state.c_a0, flow, k_eff, params.V)
    k2 = _derivative(c + 0.5 * dt * k1, state.c_a0, flow, k_eff, params.V)
    k3 = _derivative(c + 0.5 * dt * k2, state.c_a0, flow, k_eff, params.V)
    k4 = _derivative(c + dt * k3, state.c_a0, flow, k_eff, params.V)
    c_next = c + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    _require_finite(c_a_next=c_next)
    return state.model_copy(update={
        "t": round(state.t + dt, 12),
        "c_a": max(c_next, 0.0),
        "flow": flow,
    })


def integrate(state: PlantState, u: float, params: PlantParams, n_steps: int) -> PlantState:
    """Hold u constant over n_steps integration steps."""
    for _ in range(n_steps):
        state = integrate_step(state, u, params)
    return state


def analytic_response(params: PlantParams, delta_c_a0: float, t_since_step: float) -> float:
    """Deviation of c_a after a step in c_a0 from steady state."""
    if t_since_step < 0:
        raise NumericDomainError(f"time since step must be >= 0, got {t_since_step}")
    return params.gain * delta_c_a0 * (1.0 - math.exp(-t_since_step / params.tau))


def estimate_disturbance(c_a_now: float, c_a_init: float, c_a0_init: float,
                         t_since_step: float, params: PlantParams) -> float:
    """
    Recover the inlet concentration from the outlet response to a step.

    Raises:
        SingularityError: t_since_step <= 0, where the response factor vanishes
    """
    if t_since_step <= 0:
        raise SingularityError("disturbance estimate undefined at t_since_step <= 0")
    factor = params.gain * (1.0 - math.exp(-t_since_step / params.tau))
    return c_a0_init + (c_a_now - c_a_init) / factor


def apply_fault_event(state: PlantState, event: FaultEvent,
                      params: Optional[PlantParams] = None) -> PlantState:
    """
    Move the plant along one edge of the failure automaton.

    Installs the new mode's dynamics: a scaled rate constant for catalyst
    decay, a frozen flow for valve stiction.
    """
    if event.at > state.t + 1e-12:
        raise ModeTransitionError(f"fault at t={event.at} applied early at t={state.t}")
    target = TRANSITIONS.get((state.mode, event.kind))
    if target is None:
        raise ModeTransitionError(f"illegal transition {state.mode.value} + {event.kind.value}")

    kappa = event.params.get("kappa", params.kappa if params is not None else 0.5)
    update: Dict[str, object] = {"mode": target}
    if event.kind in (FaultKind.F1_CAUSES, FaultKind.F1_AND_F2_CAUSES):
        update["k_scale"] = kappa
    if event.kind in (FaultKind.F2_CAUSES, FaultKind.F1_AND_F2_CAUSES):
        update["frozen_flow"] = state.flow

    logger.info("Fault %s at t=%.3f: %s -> %s", event.kind.value, state.t,
                state.mode.value, target.value)
    return state.model_copy(update=update)


def check_fault_schedule(events: Iterable[FaultEvent]) -> List[SystemMode]:
    """Dry-run a fault schedule; returns the mode path or raises on an illegal event."""
    mode = SystemMode.NORMAL
    path = [mode]
    for event in sorted(events, key=lambda e: e.at):
        target = TRANSITIONS.get((mode, event.kind))
        if target is None:
            raise ModeTransitionError(
                f"illegal fault at t={event.at}: {mode.value} + {event.kind.value}")
        mode = target
        path.append(mode)
    return path


def measure(state: PlantState, rng: np.random.Generator, params: PlantParams) -> float:
    """Sensor reading: c_a plus gaussian noise, clamped at zero."""
    if params.noise_std == 0.0:
        return state.c_a
    return max(state.c_a + float(rng.normal(0.0, params.noise_std)), 0.0)


def predict_outputs(y0: float, inputs: Sequence[Tuple[float, float]],
                    params: PlantParams, sample_period: float) -> List[float]:
    """
    Plant model M over sampled inputs.

    Args:
        y0: Concentration at the first sample
        inputs: (u, d) per interval; u applied and d in effect until the next sample
        params: Nominal plant parameters
        sample_period: Sampling interval (min)

    Returns:
        Predicted concentration at each following sample
    """
    steps = int(round(sample_period / params.dt))
    state = PlantState(c_a=max(y0, 0.0), c_a0=max(inputs[0][1], 0.0) if inputs else 0.0)
    predicted = []
    for u, d in inputs:
        state = state.model_copy(update={"c_a0": d})
        state = integrate(state, u, params, steps)
        predicted.append(state.c_a)
    return predicted
