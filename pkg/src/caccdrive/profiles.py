"""Desired velocity profiles for the lead vehicle.

Three synthetic shapes run from a stop over a fixed distance (the default is
720 m between two stop signs):

* ``step``   -- jump straight to ``v_max`` and hold (the theoretical fastest run)
* ``ramp``   -- constant-acceleration rise, cruise, constant-deceleration stop
* ``smooth`` -- cubic ease-in rise and cubic ease-out stop around a cruise

The step and ramp end at the stop line once the distance is covered; the step
has no braking phase. Tabulated drive cycles (US06 etc.) are read with
:func:`load_speed_trace`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, TraceParseError, TraceRangeError

MPH_TO_MPS = 0.44704
KINDS = ("step", "ramp", "smooth", "trace")


@dataclass(frozen=True)
class SpeedTrace:
    times: np.ndarray
    speeds: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.speeds, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise ConfigError("speed trace needs two equal-length columns with >= 2 rows")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ConfigError("speed trace values must be finite and non-negative")
        if np.any(np.diff(t) <= 0):
            k = int(np.argmax(np.diff(t) <= 0)) + 1
            raise ConfigError(f"trace time not strictly increasing at row {k} (t={t[k]})")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "speeds", v)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])


@dataclass(frozen=True)
class ProfileSpec:
    kind: str = "ramp"
    v_max: float = 15.6
    distance: float = 720.0
    accel_limit: float = 3.0
    decel_rate: float = 1.12
    rise_time: float = 10.0
    # solved so 720 m at 15.6 m/s with a 10 s rise takes 60.2573 s
    fall_time: float = 18.207
    trace_path: str | None = None
    trace_units: str = "m/s"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown profile kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "trace":
            if not self.trace_path:
                raise ConfigError("trace profile requires trace_path")
            return
        for name in ("v_max", "distance", "accel_limit", "decel_rate",
                     "rise_time", "fall_time"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")


def _phases(spec):
    """Return (rise, cruise, fall) durations; raises when the distance is too short."""
    v = spec.v_max
    if spec.kind == "step":
        return 0.0, spec.distance / v, 0.0
    if spec.kind == "ramp":
        t_up, t_down = v / spec.accel_limit, v / spec.decel_rate
    elif spec.kind == "smooth":
        t_up, t_down = spec.rise_time, spec.fall_time
    else:
        raise ConfigError("trace profiles have no closed-form phases")
    # both ramp and cubic move v/2 per unit phase time
    d_min = 0.5 * v * (t_up + t_down)
    if d_min > spec.distance:
        raise ConfigError(
            f"distance {spec.distance} m too short for {spec.kind} profile; "
            f"minimum feasible distance is {d_min:.4f} m")
    return t_up, (spec.distance - d_min) / v, t_down


def profile_duration(spec: ProfileSpec) -> float:
    if spec.kind == "trace":
        return load_speed_trace(spec.trace_path, spec.trace_units).duration
    return float(sum(_phases(spec)))


def sample_profile(spec: ProfileSpec, t: float) -> tuple[float, float]:
    """Desired (velocity, acceleration) at time ``t``."""
    if t < 0:
        raise ConfigError(f"profile time must be >= 0, got {t}")
    if spec.kind == "trace":
        return sample_trace(load_speed_trace(spec.trace_path, spec.trace_units), t)
    v = spec.v_max
    t_up, t_cruise, t_down = _phases(spec)
    t_brake = t_up + t_cruise
    t_stop = t_brake + t_down

    if spec.kind == "step":
        return (v, 0.0) if 0.0 < t < t_stop else (0.0, 0.0)
    if t >= t_stop:
        return 0.0, 0.0
    if spec.kind == "ramp":
        if t < t_up:
            return spec.accel_limit * t, spec.accel_limit
        if t < t_brake:
            return v, 0.0
        return v - spec.decel_rate * (t - t_brake), -spec.decel_rate
    # smooth: v(t) = v_max * (3 s^2 - 2 s^3), s = t / T
    if t < t_up:
        s = t / t_up
        return v * (3 * s * s - 2 * s ** 3), 6 * v * (s - s * s) / t_up
    if t < t_brake:
        return v, 0.0
    s = (t - t_brake) / t_down
    return v * (1 - 3 * s * s + 2 * s ** 3), -6 * v * (s - s * s) / t_down


def corner_times(spec: ProfileSpec) -> tuple[float, ...]:
    """Times where the desired acceleration is discontinuous."""
    t_up, t_cruise, t_down = _phases(spec)
    return (0.0, t_up, t_up + t_cruise, t_up + t_cruise + t_down)


def _open_trace(path):
    if path == "builtin:us06":
        return resources.files("caccdrive").joinpath("data/us06.csv").open("r")
    return open(Path(path), "r", newline="")


def load_speed_trace(path, units: str = "m/s") -> SpeedTrace:
    """Read a two-column ``time, speed`` file.

    Lines starting with ``#`` are comments; a leading non-numeric row is
    taken as a header. ``path="builtin:us06"`` selects the shipped EPA US06
    trace (stored in m/s).
    """
    if units not in ("mph", "m/s"):
        raise ConfigError(f"units must be 'mph' or 'm/s', got {units!r}")
    times, speeds = [], []
    with _open_trace(path) as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if len(row) < 2:
                raise TraceParseError(f"expected 2 columns, got {len(row)}", lineno)
            try:
                t, v = float(row[0]), float(row[1])
            except ValueError:
                if not times:
                    continue  # header
                raise TraceParseError(f"non-numeric row {row!r}", lineno) from None
            times.append(t)
            speeds.append(v)
    if not times:
        raise TraceParseError(f"no data rows in {path}")
    scale = MPH_TO_MPS if units == "mph" else 1.0
    try:
        return SpeedTrace(np.array(times), np.array(speeds) * scale)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def sample_trace(trace: SpeedTrace, t: float) -> tuple[float, float]:
    """Linear interpolation of speed; slope of the containing segment."""
    t0, t1 = trace.times[0], trace.times[-1]
    if not (t0 <= t <= t1):
        raise TraceRangeError(f"t={t} outside trace range [{t0}, {t1}]")
    i = int(np.searchsorted(trace.times, t, side="right")) - 1
    i = min(max(i, 0), trace.times.size - 2)
    ta, tb = trace.times[i], trace.times[i + 1]
    va, vb = trace.speeds[i], trace.speeds[i + 1]
    slope = (vb - va) / (tb - ta)
    return float(va + slope * (t - ta)), float(slope)


def profile_sampler(spec):
    """Return a fast ``t -> (v, a)`` callable for a spec or a loaded trace."""
    if isinstance(spec, SpeedTrace):
        t_last = spec.times[-1]
        return lambda t: sample_trace(spec, min(t, t_last))
    if spec.kind == "trace":
        trace = load_speed_trace(spec.trace_path, spec.trace_units)
        return profile_sampler(trace)
    _phases(spec)  # feasibility check up front
    return lambda t: sample_profile(spec, t)


__all__ = [
    "MPH_TO_MPS", "ProfileSpec", "SpeedTrace", "corner_times", "load_speed_trace",
    "profile_duration", "profile_sampler", "sample_profile", "sample_trace",
]
