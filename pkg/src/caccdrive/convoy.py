"""Homogeneous CACC string: one lead, ``n - 1`` followers, lockstep plants."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .control import (
    ORIGINAL_GAINS,
    ControllerGains,
    ControllerState,
    SpacingPolicy,
    follower_command,
    lead_command,
)
from .dynamics import VehicleParams, delay_samples, init_plant, step_plant
from .errors import ConfigError, DivergenceError, TraceParseError
from .profiles import ProfileSpec, SpeedTrace, profile_sampler

# How the first vehicle follows the desired profile:
#   reference     PD spacing law against a virtual vehicle driving the profile exactly
#   reference_ff  same, plus feedforward of the profile acceleration through F(s)
#   track         desired acceleration + kv * velocity error (no spacing loop)
LEAD_MODES = ("reference", "reference_ff", "track")

# |a| beyond this is treated as numerical blow-up, not physics
BLOWUP_ACCEL = 1e6


@dataclass(frozen=True)
class Scenario:
    profile: ProfileSpec | SpeedTrace = field(default_factory=ProfileSpec)
    t_end: float = 90.0
    n_vehicles: int = 5
    params: VehicleParams = field(default_factory=VehicleParams)
    gains: ControllerGains = ORIGINAL_GAINS
    headway: float = 0.6
    kv_lead: float = 2.0
    lead_mode: str = "reference"
    dt: float = 0.01
    accel_clamp: tuple[float, float] | None = None

    def __post_init__(self):
        if self.n_vehicles < 1:
            raise ConfigError(f"n_vehicles must be >= 1, got {self.n_vehicles}")
        if not self.t_end > 0:
            raise ConfigError(f"t_end must be > 0, got {self.t_end}")
        if self.lead_mode not in LEAD_MODES:
            raise ConfigError(f"lead_mode must be one of {LEAD_MODES}, got {self.lead_mode!r}")
        if not self.kv_lead > 0:
            raise ConfigError(f"kv_lead must be > 0, got {self.kv_lead}")
        if self.accel_clamp is not None and not self.accel_clamp[0] < self.accel_clamp[1]:
            raise ConfigError(f"accel_clamp must be (low, high), got {self.accel_clamp}")
        delay_samples(self.params.delay_phi, self.dt)
        SpacingPolicy(self.params.standstill_distance, self.headway)
        if isinstance(self.profile, SpeedTrace) and self.t_end > self.profile.times[-1]:
            raise ConfigError(
                f"t_end={self.t_end} exceeds trace end {self.profile.times[-1]}")

    @property
    def policy(self) -> SpacingPolicy:
        return SpacingPolicy(self.params.standstill_distance, self.headway)

    @property
    def n_samples(self) -> int:
        return int(math.floor(self.t_end / self.dt + 1e-9)) + 1


@dataclass(frozen=True)
class ConvoyTrace:
    """Per-vehicle time series; arrays are shaped ``(n_vehicles, n_samples)``."""

    times: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    jerk: np.ndarray
    standstill_distance: float = 20.0
    length: float = 10.0
    headway: float = 0.6

    @property
    def n_vehicles(self) -> int:
        return self.position.shape[0]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def gaps(self) -> np.ndarray:
        """Raw position differences x[i-1] - x[i], shape ``(n - 1, n_samples)``."""
        return self.position[:-1] - self.position[1:]

    def bumper_gaps(self) -> np.ndarray:
        return self.gaps() - self.length

    def spacing_errors(self) -> np.ndarray:
        return self.gaps() - (self.standstill_distance + self.headway * self.velocity[1:])

    def peak_accel(self) -> np.ndarray:
        return np.abs(self.acceleration).max(axis=1)

    def peak_jerk(self) -> np.ndarray:
        return np.abs(self.jerk).max(axis=1)


def initial_positions(scenario: Scenario) -> list[float]:
    gap = scenario.params.standstill_distance
    return [-i * gap for i in range(scenario.n_vehicles)]


def jerk_of(acceleration: np.ndarray, dt: float) -> np.ndarray:
    """Central difference along time, one-sided at the ends."""
    acceleration = np.asarray(acceleration, dtype=float)
    if acceleration.shape[-1] < 2:
        return np.zeros_like(acceleration)
    return np.gradient(acceleration, dt, axis=-1)


def simulate(scenario: Scenario) -> ConvoyTrace:
    """Run the convoy from standstill equilibrium.

    Every step first computes all commands from the states at ``t_k`` (each
    follower reads its predecessor's position and realized acceleration from
    that same sample), then advances all plants to ``t_k + dt``.
    """
    sc = scenario
    dt, n, n_s = sc.dt, sc.n_vehicles, sc.n_samples
    policy = sc.policy
    sample = profile_sampler(sc.profile)

    plants = [init_plant(sc.params, x0, 0.0, dt) for x0 in initial_positions(sc)]
    ctrls = [ControllerState() for _ in range(n)]
    ref_x, ref_v, ref_a = policy.standstill_distance, 0.0, 0.0

    pos = np.empty((n, n_s))
    vel = np.empty((n, n_s))
    acc = np.empty((n, n_s))
    times = np.arange(n_s) * dt
    for i, p in enumerate(plants):
        pos[i, 0], vel[i, 0], acc[i, 0] = p.position, p.velocity, p.acceleration

    use_ff = sc.lead_mode == "reference_ff"
    for k in range(1, n_s):
        t = times[k - 1]
        v_des, a_des = sample(t)
        cmds = [0.0] * n
        if sc.lead_mode == "track":
            cmds[0] = lead_command(v_des, a_des, plants[0].velocity, sc.kv_lead)
        else:
            ref_v, ref_a = v_des, a_des
            cmds[0], ctrls[0] = follower_command(
                ctrls[0], ref_x, ref_a, plants[0].position, plants[0].velocity,
                policy, sc.gains, dt, use_feedforward=use_ff)
        for i in range(1, n):
            pred = plants[i - 1]
            cmds[i], ctrls[i] = follower_command(
                ctrls[i], pred.position, pred.acceleration,
                plants[i].position, plants[i].velocity, policy, sc.gains, dt)
        for i in range(n):
            plants[i] = step_plant(plants[i], sc.params, cmds[i], dt, sc.accel_clamp,
                                   vehicle=i, time=times[k])
            p = plants[i]
            if abs(p.acceleration) > BLOWUP_ACCEL:
                raise DivergenceError(i, times[k], f"|a|={abs(p.acceleration):.3g} m/s^2")
            pos[i, k], vel[i, k], acc[i, k] = p.position, p.velocity, p.acceleration
        if sc.lead_mode != "track":
            v_next, _ = sample(times[k])
            ref_x += 0.5 * dt * (ref_v + v_next)

    return ConvoyTrace(times, pos, vel, acc, jerk_of(acc, dt),
                       standstill_distance=policy.standstill_distance,
                       length=sc.params.length, headway=sc.headway)


# ----------------------------------------------------------------------------
# delimited trace export

CHANNELS = (("x", "m"), ("v", "mps"), ("a", "mps2"), ("j", "mps3"))


def trace_header(n_vehicles: int) -> list[str]:
    cols = ["time_s"]
    for i in range(n_vehicles):
        cols += [f"{c}{i}_{u}" for c, u in CHANNELS]
    return cols


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trace_csv(trace: ConvoyTrace, path) -> None:
    """One row per sample: ``time_s`` then ``x{i}_m, v{i}_mps, a{i}_mps2, j{i}_mps3``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_header(trace.n_vehicles))
    blocks = np.stack([trace.position, trace.velocity, trace.acceleration, trace.jerk],
                      axis=1)  # (n, 4, samples)
    flat = blocks.reshape(-1, blocks.shape[-1])
    for k, t in enumerate(trace.times):
        w.writerow([_fmt(t)] + [_fmt(x) for x in flat[:, k]])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_trace_csv(path, standstill_distance=20.0, length=10.0, headway=0.6) -> ConvoyTrace:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise TraceParseError(f"empty trace file {path}")
    header = rows[0]
    n = (len(header) - 1) // 4
    if n < 1 or header != trace_header(n):
        raise TraceParseError(f"unexpected trace header {header[:6]}...", 1)
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise TraceParseError(str(exc)) from None
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] != len(header):
        raise TraceParseError(f"trace {path} needs >= 2 complete rows")
    blocks = data[:, 1:].T.reshape(n, 4, -1)
    return ConvoyTrace(data[:, 0], blocks[:, 0], blocks[:, 1], blocks[:, 2], blocks[:, 3],
                       standstill_distance=standstill_distance, length=length,
                       headway=headway)
