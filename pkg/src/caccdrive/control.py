"""CACC control law: PD on spacing error plus filtered predecessor acceleration."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class ControllerGains:
    kp: float
    kd: float

    def __post_init__(self):
        if not (math.isfinite(self.kp) and math.isfinite(self.kd)):
            raise ConfigError(f"gains must be finite, got kp={self.kp}, kd={self.kd}")


ORIGINAL_GAINS = ControllerGains(kp=4.0, kd=2.0)
REDESIGNED_GAINS = ControllerGains(kp=0.1609, kd=0.6575)


@dataclass(frozen=True)
class SpacingPolicy:
    """Constant time-headway policy: desired gap = standstill_distance + headway * v."""

    standstill_distance: float
    headway: float

    def __post_init__(self):
        if not self.headway > 0:
            raise ConfigError(f"headway must be > 0, got {self.headway}")
        if not self.standstill_distance > 0:
            raise ConfigError(
                f"standstill_distance must be > 0, got {self.standstill_distance}")


@dataclass(frozen=True)
class ControllerState:
    prev_error: float = 0.0
    ff_state: float = 0.0


def spacing_error(pred_position, own_position, own_velocity, policy):
    """Actual gap minus desired gap; positive when the vehicle lags behind."""
    return (pred_position - own_position) - (
        policy.standstill_distance + policy.headway * own_velocity)


def pd_control(state, error, dt, gains):
    # backward difference; prev_error is seeded with the initial error
    cmd = gains.kp * error + gains.kd * (error - state.prev_error) / dt
    return cmd, ControllerState(prev_error=error, ff_state=state.ff_state)


def feedforward(state, pred_accel, dt, policy):
    """One ZOH step of 1 / (headway * s + 1) driven by ``pred_accel``."""
    e = math.exp(-dt / policy.headway)
    y = state.ff_state * e + pred_accel * (1.0 - e)
    return y, ControllerState(prev_error=state.prev_error, ff_state=y)


def follower_command(ctrl, pred_position, pred_accel, own_position, own_velocity,
                     policy, gains, dt, use_feedforward=True):
    err = spacing_error(pred_position, own_position, own_velocity, policy)
    u_fb, ctrl = pd_control(ctrl, err, dt, gains)
    if not use_feedforward:
        return u_fb, ctrl
    u_ff, ctrl = feedforward(ctrl, pred_accel, dt, policy)
    return u_fb + u_ff, ctrl


def lead_command(v_desired, a_desired, own_velocity, kv=2.0):
    """Profile tracking: desired acceleration plus proportional velocity correction."""
    if not kv > 0:
        raise ConfigError(f"kv must be > 0, got {kv}")
    return a_desired + kv * (v_desired - own_velocity)
