import math

import numpy as np
import pytest

from caccdrive.control import (
    ORIGINAL_GAINS,
    REDESIGNED_GAINS,
    ControllerGains,
    ControllerState,
    SpacingPolicy,
    feedforward,
    follower_command,
    lead_command,
    pd_control,
    spacing_error,
)
from caccdrive.errors import ConfigError

POL = SpacingPolicy(20.0, 0.6)


@pytest.mark.parametrize("gap,v,expected", [(20, 0, 0.0), (26, 10, 0.0), (20, 10, -6.0)])
def test_spacing_error(gap, v, expected):
    assert spacing_error(gap, 0.0, v, POL) == pytest.approx(expected)


def test_presets():
    assert (ORIGINAL_GAINS.kp, ORIGINAL_GAINS.kd) == (4.0, 2.0)
    assert (REDESIGNED_GAINS.kp, REDESIGNED_GAINS.kd) == (0.1609, 0.6575)


def test_gains_must_be_finite():
    with pytest.raises(ConfigError):
        ControllerGains(float("inf"), 1.0)


@pytest.mark.parametrize("kw", [dict(standstill_distance=20, headway=0),
                                dict(standstill_distance=0, headway=0.6)])
def test_policy_validation(kw):
    with pytest.raises(ConfigError):
        SpacingPolicy(**kw)


def test_pd_constant_error():
    st = ControllerState(prev_error=1.0)
    for _ in range(3):
        u, st = pd_control(st, 1.0, 0.01, ORIGINAL_GAINS)
    assert u == pytest.approx(4.0)


def test_pd_zero_error():
    u, _ = pd_control(ControllerState(), 0.0, 0.01, ORIGINAL_GAINS)
    assert u == 0.0


def test_pd_unit_ramp_derivative():
    g, dt, st = ControllerGains(0.0, 2.0), 0.01, ControllerState()
    for k in range(1, 50):
        u, st = pd_control(st, k * dt, dt, g)
    assert u == pytest.approx(2.0, abs=1e-9)


def test_pd_sinusoid_matches_analytic_derivative():
    # the backward difference is the derivative at the half-sample midpoint
    dt, f = 0.01, 1.0
    w = 2 * math.pi * f
    t = np.arange(0, 3, dt)
    e = np.sin(w * t)
    st, out = ControllerState(prev_error=e[0]), []
    for x in e:
        u, st = pd_control(st, x, dt, ORIGINAL_GAINS)
        out.append(u)
    out = np.array(out[1:])
    tm = t[1:] - dt / 2
    analytic = 4 * np.sin(w * tm) + 2 * w * np.cos(w * tm)
    assert np.max(np.abs(out - analytic)) / np.max(np.abs(analytic)) < 0.02


def test_feedforward_zero_input():
    st = ControllerState()
    for _ in range(100):
        y, st = feedforward(st, 0.0, 0.01, POL)
    assert y == 0.0


def test_feedforward_step_time_constant():
    dt, st = 0.01, ControllerState()
    for _ in range(int(round(0.6 / dt))):
        y, st = feedforward(st, 1.0, dt, POL)
    assert y == pytest.approx(1 - math.exp(-1), abs=1e-6)


def test_feedforward_dc_gain_within_five_time_constants():
    dt, st, c = 0.01, ControllerState(), 2.5
    for _ in range(int(round(5 * 0.6 / dt))):
        y, st = feedforward(st, c, dt, POL)
    assert abs(y - c) / c < 0.01
    for _ in range(5000):
        y, st = feedforward(st, c, dt, POL)
    assert y == pytest.approx(c, rel=1e-12)


def test_follower_equilibrium_and_composition():
    args = dict(policy=POL, gains=ORIGINAL_GAINS, dt=0.01)
    u, _ = follower_command(ControllerState(), 20.0, 0.0, 0.0, 0.0, **args)
    assert u == 0.0
    st = ControllerState(ff_state=1.0)
    u, _ = follower_command(st, 20.0, 1.0, 0.0, 0.0, **args)
    assert u == pytest.approx(1.0)
    u, _ = follower_command(ControllerState(prev_error=1.0), 21.0, 0.0, 0.0, 0.0, **args)
    assert u == pytest.approx(4.0)


@pytest.mark.parametrize("v_des,a_des,v,kv,expected",
                         [(10, 0, 10, 2, 0.0), (10, 3, 10, 1, 3.0), (10, 0, 8, 2, 4.0)])
def test_lead_command(v_des, a_des, v, kv, expected):
    assert lead_command(v_des, a_des, v, kv) == pytest.approx(expected)


def test_lead_command_rejects_non_positive_kv():
    with pytest.raises(ConfigError):
        lead_command(1, 0, 0, kv=0)
