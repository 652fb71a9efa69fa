"""Discrete-time longitudinal plant: pure delay, first-order lag, double integrator.

The continuous model maps commanded acceleration ``u`` to position ``x`` via

    x(s) / u(s) = exp(-phi * s) / (s**2 * (tau * s + 1))

The delay is realized as a sample queue, the lag by its exact zero-order-hold
discretization and the two integrators trapezoidally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import ConfigError, DivergenceError

_RATIO_TOL = 1e-9


@dataclass(frozen=True)
class VehicleParams:
    """Physical and actuation constants of one (homogeneous) vehicle."""

    length: float = 10.0
    standstill_gap: float = 10.0
    lag_tau: float = 0.5
    delay_phi: float = 0.1

    def __post_init__(self):
        if not self.length > 0:
            raise ConfigError(f"length must be > 0, got {self.length}")
        if not self.standstill_gap >= 0:
            raise ConfigError(f"standstill_gap must be >= 0, got {self.standstill_gap}")
        if not self.lag_tau > 0:
            raise ConfigError(f"lag_tau must be > 0, got {self.lag_tau}")
        if not self.delay_phi >= 0:
            raise ConfigError(f"delay_phi must be >= 0, got {self.delay_phi}")

    @property
    def standstill_distance(self) -> float:
        return self.length + self.standstill_gap


@dataclass(frozen=True)
class PlantState:
    position: float
    velocity: float
    acceleration: float
    command_delay_line: tuple[float, ...] = field(default_factory=tuple)


def delay_samples(delay_phi: float, dt: float) -> int:
    """Number of whole samples in the actuator delay; raises if not integral."""
    if not dt > 0:
        raise ConfigError(f"dt must be > 0, got {dt}")
    ratio = delay_phi / dt
    n = round(ratio)
    if abs(ratio - n) > _RATIO_TOL:
        raise ConfigError(
            f"delay_phi={delay_phi} is not an integer multiple of dt={dt} "
            f"(ratio {ratio:.6g})"
        )
    return int(n)


def lag_coefficient(tau: float, dt: float) -> float:
    return math.exp(-dt / tau)


def init_plant(params: VehicleParams, x0: float, v0: float, dt: float) -> PlantState:
    n = delay_samples(params.delay_phi, dt)
    return PlantState(float(x0), float(v0), 0.0, (0.0,) * n)


def step_plant(state: PlantState, params: VehicleParams, u: float, dt: float,
               accel_clamp: tuple[float, float] | None = None,
               vehicle: int = 0, time: float = 0.0) -> PlantState:
    """Advance one sample.

    ``u`` is pushed into the delay line and the oldest queued command drives
    the lag. With an empty line (zero delay) ``u`` acts immediately.
    ``vehicle`` and ``time`` only label a :class:`DivergenceError`.
    """
    if not math.isfinite(u):
        raise DivergenceError(vehicle, time, f"non-finite command u={u}")
    if accel_clamp is not None:
        u = min(max(u, accel_clamp[0]), accel_clamp[1])
    line = state.command_delay_line
    if line:
        u_d = line[0]
        line = line[1:] + (float(u),)
    else:
        u_d = float(u)
    e = lag_coefficient(params.lag_tau, dt)
    a0, v0 = state.acceleration, state.velocity
    a1 = a0 * e + u_d * (1.0 - e)
    if accel_clamp is not None:
        a1 = min(max(a1, accel_clamp[0]), accel_clamp[1])
    v1 = v0 + 0.5 * dt * (a0 + a1)
    x1 = state.position + 0.5 * dt * (v0 + v1)
    if not (math.isfinite(a1) and math.isfinite(v1) and math.isfinite(x1)):
        raise DivergenceError(vehicle, time)
    return replace(state, position=x1, velocity=v1, acceleration=a1,
                   command_delay_line=line)
