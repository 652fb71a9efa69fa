"""Driveability measures computed from a sampled acceleration signal.

All functions take the acceleration series ``a`` (m/s^2) at a uniform step
``dt`` (s) with the first sample at ``t0``. The six measures are:

response_time  first time ``a`` reaches 0.5 m/s^2 (``None`` if never)
bump           mean slope of the initial rise, 0.05 -> 0.5 m/s^2 (higher is better)
kick           drop from the global maximum to the first local minimum after it
stumble        largest peak-to-valley drop before the global maximum
peak_jerk      max |da/dt|, central differences
vdv            vibration dose value of the 1-32 Hz band-passed signal
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal

from .errors import ConfigError

RESPONSE_THRESHOLD = 0.5
BUMP_NOISE_FLOOR = 0.05
VDV_BAND = (1.0, 32.0)
VDV_FILTER_ORDER = 4
METRIC_NAMES = ("response_time", "bump", "kick", "stumble", "peak_jerk", "vdv")
HIGHER_IS_BETTER = frozenset({"bump"})


def _series(a):
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise ConfigError("acceleration series must be a non-empty 1-D array")
    return a


def _crossing_time(a, dt, level, t0=0.0, start=0):
    """Interpolated time of the first upward crossing of ``level`` at or after ``start``."""
    hits = np.flatnonzero(a[start:] >= level)
    if hits.size == 0:
        return None, None
    k = start + int(hits[0])
    if k == 0 or a[k - 1] >= level:
        return t0 + k * dt, k
    frac = (level - a[k - 1]) / (a[k] - a[k - 1])
    return t0 + (k - 1 + frac) * dt, k


def response_time(a, dt, t0=0.0):
    t, _ = _crossing_time(_series(a), dt, RESPONSE_THRESHOLD, t0)
    return t


@dataclass(frozen=True)
class BumpResult:
    slope: float | None
    step_like: bool = False


def bump_detail(a, dt):
    a = _series(a)
    t_hi, k_hi = _crossing_time(a, dt, RESPONSE_THRESHOLD)
    if t_hi is None:
        return BumpResult(None)
    t_lo, k_lo = _crossing_time(a, dt, BUMP_NOISE_FLOOR)
    # both thresholds crossed within one sample: the rise is unresolved
    step_like = k_lo == k_hi
    if t_hi <= t_lo:
        return BumpResult((RESPONSE_THRESHOLD - BUMP_NOISE_FLOOR) / dt, True)
    return BumpResult((RESPONSE_THRESHOLD - BUMP_NOISE_FLOOR) / (t_hi - t_lo), step_like)


def bump(a, dt):
    return bump_detail(a, dt).slope


def kick(a, dt=None):
    a = _series(a)
    m = int(np.argmax(a))
    k = m
    while k + 1 < a.size and a[k + 1] <= a[k]:
        k += 1
    return float(a[m] - a[k])


@dataclass(frozen=True)
class StumbleResult:
    drop: float
    sign_changes: int


def stumble_detail(a, dt, demand_window=None):
    """Max drawdown before the global maximum.

    ``demand_window`` optionally restricts the analysis to ``(t_start, t_end)``
    seconds from the first sample; the global maximum is taken inside it.
    """
    a = _series(a)
    if demand_window is not None:
        lo, hi = demand_window
        i0, i1 = int(round(lo / dt)), int(round(hi / dt)) + 1
        if not (0 <= i0 < i1 <= a.size):
            raise ConfigError(f"demand_window {demand_window} outside the series")
        a = a[i0:i1]
    m = int(np.argmax(a))
    pre = a[: m + 1]
    drop = float(np.max(np.maximum.accumulate(pre) - pre))
    s = np.sign(pre)
    s = s[s != 0]
    return StumbleResult(drop, int(np.count_nonzero(s[1:] != s[:-1])))


def stumble(a, dt, demand_window=None):
    return stumble_detail(a, dt, demand_window).drop


def peak_jerk(a, dt):
    a = _series(a)
    if a.size < 3:
        raise ConfigError("peak_jerk needs at least 3 samples")
    return float(np.max(np.abs(np.gradient(a, dt))))


def bandpass(a, dt, band=VDV_BAND, order=VDV_FILTER_ORDER):
    """Zero-phase Butterworth band-pass (forward-backward second-order sections)."""
    fs = 1.0 / dt
    if not band[1] < fs / 2:
        raise ConfigError(
            f"dt={dt} too coarse: band edge {band[1]} Hz needs dt < {1 / (2 * band[1])} s")
    sos = signal.butter(order, band, btype="bandpass", fs=fs, output="sos")
    return signal.sosfiltfilt(sos, _series(a))


def raw_vdv(a_filtered, dt, window=None):
    """(integral of a^4 dt)^(1/4), trapezoidal, optionally over ``window`` seconds."""
    x = _series(a_filtered)
    if window is not None:
        i0, i1 = int(round(window[0] / dt)), int(round(window[1] / dt)) + 1
        if not (0 <= i0 < i1 <= x.size):
            raise ConfigError(f"window {window} outside the series")
        x = x[i0:i1]
    if x.size < 2:
        return 0.0
    x4 = x ** 4
    return float((dt * (x4.sum() - 0.5 * (x4[0] + x4[-1]))) ** 0.25)


def vdv(a, dt, window=None):
    a = _series(a)
    if a.size * dt < 1.0:
        raise ConfigError("vdv needs at least 1 s of signal")
    return raw_vdv(bandpass(a, dt), dt, window)


# ----------------------------------------------------------------------------
# normalization and per-vehicle tables


@dataclass(frozen=True)
class NormalizationTable:
    """(best_raw, worst_raw) per metric; best maps to 10, worst to 0."""

    response_time: tuple[float, float] = (0.5, 5.0)
    bump: tuple[float, float] = (3.0, 0.0)
    kick: tuple[float, float] = (0.0, 2.0)
    stumble: tuple[float, float] = (0.0, 2.0)
    peak_jerk: tuple[float, float] = (0.0, 2.0)
    vdv: tuple[float, float] = (0.0, 5.0)

    def __post_init__(self):
        for name in METRIC_NAMES:
            best, worst = getattr(self, name)
            if best == worst:
                raise ConfigError(f"normalization bounds for {name} must differ")


@dataclass(frozen=True)
class DriveabilityScores:
    response_time: float | None
    bump: float | None
    kick: float
    stumble: float
    peak_jerk: float
    vdv: float
    normalized: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def raw(self) -> dict:
        return {m: getattr(self, m) for m in METRIC_NAMES}


def _scale(x, best, worst):
    return 10.0 * min(max((x - worst) / (best - worst), 0.0), 1.0)


def normalize(raw: dict, table: NormalizationTable | None = None) -> dict:
    table = table or NormalizationTable()
    out = {}
    for name in METRIC_NAMES:
        x = raw.get(name)
        out[name] = 0.0 if x is None else _scale(x, *getattr(table, name))
    return out


def scores_for(a, dt, table=None) -> DriveabilityScores:
    a = _series(a)
    b = bump_detail(a, dt)
    st = stumble_detail(a, dt)
    raw = dict(
        response_time=response_time(a, dt),
        bump=b.slope,
        kick=kick(a, dt),
        stumble=st.drop,
        peak_jerk=peak_jerk(a, dt),
        vdv=vdv(a, dt),
    )
    diag = {"bump_step_like": b.step_like, "stumble_sign_changes": st.sign_changes}
    return DriveabilityScores(normalized=normalize(raw, table), diagnostics=diag, **raw)


def spider_table(trace, table=None) -> dict[int, DriveabilityScores]:
    """Scores for every vehicle's acceleration channel, keyed by vehicle index."""
    return {i: scores_for(trace.acceleration[i], trace.dt, table)
            for i in range(trace.n_vehicles)}


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(x).lower()
    return repr(float(x)) if isinstance(x, float) else str(x)


def write_metrics_csv(table: dict[int, DriveabilityScores], path) -> None:
    cols = (["vehicle"] + list(METRIC_NAMES) + [f"{m}_norm" for m in METRIC_NAMES]
            + ["bump_step_like", "stumble_sign_changes"])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i, s in sorted(table.items()):
            w.writerow([i] + [_cell(getattr(s, m)) for m in METRIC_NAMES]
                       + [_cell(s.normalized[m]) for m in METRIC_NAMES]
                       + [_cell(s.diagnostics.get("bump_step_like")),
                          _cell(s.diagnostics.get("stumble_sign_changes"))])


def metrics_document(table: dict[int, DriveabilityScores]) -> dict:
    return {"vehicles": [dict(vehicle=i, **asdict(s)) for i, s in sorted(table.items())]}


def write_metrics_json(table, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(metrics_document(table), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_metrics_csv(path) -> dict[int, dict]:
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out[int(row["vehicle"])] = {
                m: (None if row[m] == "" else float(row[m])) for m in METRIC_NAMES}
    return out

