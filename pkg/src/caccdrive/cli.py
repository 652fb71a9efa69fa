"""Command-line workflows: simulate, design, compare, metrics.

Configuration is an INI file with the sections and keys in :data:`SCHEMA`.
Every key is optional unless a command lists it as required; unknown
sections or keys are rejected.

Exit status: 0 ok, 2 configuration error, 3 simulation divergence,
4 empty (or degenerate) design region.
"""
from __future__ import annotations

import argparse
import configparser
import io
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import convoy, design, metrics
from .control import ORIGINAL_GAINS, REDESIGNED_GAINS, ControllerGains
from .dynamics import VehicleParams
from .errors import (
    ConfigError,
    DegenerateBoundaryError,
    DivergenceError,
    EmptyRegionError,
    TraceParseError,
    TraceRangeError,
)
from .profiles import ProfileSpec, profile_duration

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_EMPTY_REGION = 0, 2, 3, 4
GAIN_PRESETS = {"original": ORIGINAL_GAINS, "redesigned": REDESIGNED_GAINS}

log = logging.getLogger("caccdrive")


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    t = text.strip().lower()
    return None if t in ("", "none") else float(t)


def _opt_str(text):
    t = text.strip()
    return None if t.lower() in ("", "none") else t


# section -> key -> (parser, default); defaults repeat the library defaults
SCHEMA = {
    "scenario": {
        "n_vehicles": (int, 5), "t_end": (float, 90.0), "dt": (float, 0.01),
        "headway": (float, 0.6), "kv_lead": (float, 2.0), "lead_mode": (str, "reference"),
        "accel_min": (_opt_float, None), "accel_max": (_opt_float, None),
    },
    "vehicle": {
        "length": (float, 10.0), "standstill_gap": (float, 10.0),
        "lag_tau": (float, 0.5), "delay_phi": (float, 0.1),
    },
    "gains": {"preset": (_opt_str, None), "kp": (_opt_float, None), "kd": (_opt_float, None)},
    "profile": {
        "kind": (str, "ramp"), "v_max": (float, 15.6), "distance": (float, 720.0),
        "accel_limit": (float, 3.0), "decel_rate": (float, 1.12),
        "rise_time": (float, 10.0), "fall_time": (float, 18.207),
        "trace_path": (_opt_str, None), "trace_units": (str, "m/s"),
    },
    "design": {
        "sigma": (float, 0.5), "theta": (float, 30.0), "omega_b": (float, 20.0),
        "damping_tol": (float, 0.01), "delay_mode": (str, "exact"),
        "headway_in_loop": (_bool, False), "resolution": (int, design.DEFAULT_RESOLUTION),
        "check_kp": (_opt_float, REDESIGNED_GAINS.kp),
        "check_kd": (_opt_float, REDESIGNED_GAINS.kd),
    },
    "normalization": {
        f"{m}_{end}": (float, getattr(metrics.NormalizationTable(), m)[k])
        for m in metrics.METRIC_NAMES for k, end in enumerate(("best", "worst"))
    },
    "output": {"out_dir": (str, "out"), "svg": (_bool, False)},
}

SIMULATE_REQUIRED = ("profile.kind", "scenario.headway", "gains.kp|gains.preset")


@dataclass(frozen=True)
class RunConfig:
    scenario: convoy.Scenario = field(default_factory=convoy.Scenario)
    dregion: design.DRegionSpec = design.DEFAULT_DREGION
    loop: design.LoopModel = field(default_factory=design.LoopModel)
    resolution: int = design.DEFAULT_RESOLUTION
    check_gains: ControllerGains | None = REDESIGNED_GAINS
    normalization: metrics.NormalizationTable = field(default_factory=metrics.NormalizationTable)
    out_dir: str = "out"
    svg: bool = False
    explicit: frozenset = field(default=frozenset(), compare=False)

    def require(self, keys) -> None:
        missing = [k for k in keys
                   if not any(alt in self.explicit for alt in k.split("|"))]
        if missing:
            raise ConfigError("missing required config keys: " + ", ".join(missing))


def _raw_values(parser: configparser.ConfigParser, base: Path | None):
    values, explicit = {}, set()
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown config section [{sec}]; expected one of {sorted(SCHEMA)}")
        for key, text in parser.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]; "
                                  f"valid keys: {', '.join(SCHEMA[sec])}")
            conv = SCHEMA[sec][key][0]
            try:
                values[(sec, key)] = conv(text)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key} = {text!r}: {exc}") from None
            explicit.add(f"{sec}.{key}")
    out = {(s, k): spec[1] for s, keys in SCHEMA.items() for k, spec in keys.items()}
    out.update(values)
    path = out[("profile", "trace_path")]
    if base is not None and path and not path.startswith("builtin:") and not Path(path).is_absolute():
        out[("profile", "trace_path")] = str(base / path)
    return out, frozenset(explicit)


def _gains(v, explicit) -> ControllerGains:
    kp, kd, preset = v[("gains", "kp")], v[("gains", "kd")], v[("gains", "preset")]
    if (kp is None) != (kd is None):
        raise ConfigError("[gains] kp and kd must be given together")
    if preset is not None and preset not in GAIN_PRESETS:
        raise ConfigError(f"[gains] preset must be one of {sorted(GAIN_PRESETS)}, got {preset!r}")
    if kp is not None:
        g = ControllerGains(kp, kd)
        if preset is not None and GAIN_PRESETS[preset] != g:
            raise ConfigError(f"[gains] kp/kd conflict with preset {preset!r}")
        return g
    return GAIN_PRESETS[preset or "original"]


def _resolve(v, explicit) -> RunConfig:
    s = lambda key: v[("scenario", key)]  # noqa: E731
    params = VehicleParams(**{k: v[("vehicle", k)] for k in SCHEMA["vehicle"]})
    profile = ProfileSpec(**{k: v[("profile", k)] for k in SCHEMA["profile"]})
    lo, hi = s("accel_min"), s("accel_max")
    if (lo is None) != (hi is None):
        raise ConfigError("[scenario] accel_min and accel_max must be given together")
    scenario = convoy.Scenario(
        profile=profile, t_end=s("t_end"), n_vehicles=s("n_vehicles"), params=params,
        gains=_gains(v, explicit), headway=s("headway"), kv_lead=s("kv_lead"),
        lead_mode=s("lead_mode"), dt=s("dt"),
        accel_clamp=None if lo is None else (lo, hi))
    d = lambda key: v[("design", key)]  # noqa: E731
    dregion = design.DRegionSpec(d("sigma"), d("theta"), d("omega_b"), d("damping_tol"))
    loop = design.LoopModel(params, s("headway"), d("delay_mode"), d("headway_in_loop"))
    ck, cd = d("check_kp"), d("check_kd")
    if (ck is None) != (cd is None):
        raise ConfigError("[design] check_kp and check_kd must be given together")
    norm = metrics.NormalizationTable(**{
        m: (v[("normalization", f"{m}_best")], v[("normalization", f"{m}_worst")])
        for m in metrics.METRIC_NAMES})
    return RunConfig(scenario, dregion, loop, d("resolution"),
                     None if ck is None else ControllerGains(ck, cd), norm,
                     v[("output", "out_dir")], v[("output", "svg")], explicit)


def parse_config(text: str, base: Path | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values, explicit = _raw_values(parser, base)
    return _resolve(values, explicit)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, p.parent)


def _fmt(x):
    if x is None:
        return "none"
    if isinstance(x, bool):
        return "true" if x else "false"
    return repr(x) if isinstance(x, float) else str(x)


def dump_config(cfg: RunConfig) -> str:
    """Serialize every key; ``parse_config(dump_config(c))`` reproduces ``c``."""
    sc, p = cfg.scenario, cfg.scenario.profile
    lo, hi = sc.accel_clamp or (None, None)
    sections = {
        "scenario": dict(n_vehicles=sc.n_vehicles, t_end=sc.t_end, dt=sc.dt, headway=sc.headway,
                         kv_lead=sc.kv_lead, lead_mode=sc.lead_mode, accel_min=lo, accel_max=hi),
        "vehicle": {f.name: getattr(sc.params, f.name) for f in fields(sc.params)},
        "gains": dict(kp=sc.gains.kp, kd=sc.gains.kd),
        "profile": {f.name: getattr(p, f.name) for f in fields(p)},
        "design": dict(sigma=cfg.dregion.sigma, theta=cfg.dregion.theta,
                       omega_b=cfg.dregion.omega_b, damping_tol=cfg.dregion.damping_tol,
                       delay_mode=cfg.loop.delay_mode, headway_in_loop=cfg.loop.headway_in_loop,
                       resolution=cfg.resolution,
                       check_kp=cfg.check_gains.kp if cfg.check_gains else None,
                       check_kd=cfg.check_gains.kd if cfg.check_gains else None),
        "normalization": {f"{m}_{end}": getattr(cfg.normalization, m)[k]
                          for m in metrics.METRIC_NAMES
                          for k, end in enumerate(("best", "worst"))},
        "output": dict(out_dir=cfg.out_dir, svg=cfg.svg),
    }
    buf = io.StringIO()
    for sec, kv in sections.items():
        buf.write(f"[{sec}]\n")
        for k, x in kv.items():
            buf.write(f"{k} = {_fmt(x)}\n")
        buf.write("\n")
    return buf.getvalue()


# ----------------------------------------------------------------------------
# commands


def _write_json(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out(cfg: RunConfig, override) -> Path:
    out = Path(override or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_summary(sc: convoy.Scenario, trace: convoy.ConvoyTrace) -> dict:
    peaks = trace.peak_accel()
    doc = {
        "n_vehicles": trace.n_vehicles, "headway": sc.headway, "lead_mode": sc.lead_mode,
        "kp": sc.gains.kp, "kd": sc.gains.kd, "dt": sc.dt, "t_end": sc.t_end,
        "peak_accel": peaks.tolist(), "peak_jerk": trace.peak_jerk().tolist(),
        "max_follower_peak_accel": float(peaks[1:].max()) if peaks.size > 1 else None,
        "convoy_peak_jerk": float(trace.peak_jerk().max()),
        "diverged": False,
    }
    if trace.n_vehicles > 1:
        err = trace.spacing_errors()
        doc["min_bumper_gap"] = float(trace.bumper_gaps().min())
        doc["final_abs_spacing_error"] = np.abs(err[:, -1]).tolist()
        doc["string_amplification"] = bool(peaks[-1] > peaks[1]) if trace.n_vehicles > 2 else False
    if isinstance(sc.profile, ProfileSpec):
        doc["profile_kind"] = sc.profile.kind
        doc["profile_duration"] = profile_duration(sc.profile)
    return doc


def cmd_simulate(cfg: RunConfig, out_dir=None, svg=None) -> dict:
    cfg.require(SIMULATE_REQUIRED)
    out = _out(cfg, out_dir)
    sc = cfg.scenario
    try:
        trace = convoy.simulate(sc)
    except DivergenceError as exc:
        _write_json({"diverged": True, "vehicle": exc.vehicle, "time": exc.time,
                     "message": str(exc)}, out / "summary.json")
        raise
    convoy.write_trace_csv(trace, out / "trace.csv")
    table = metrics.spider_table(trace, cfg.normalization)
    metrics.write_metrics_csv(table, out / "metrics.csv")
    metrics.write_metrics_json(table, out / "metrics.json")
    summary = run_summary(sc, trace)
    _write_json(summary, out / "summary.json")
    if cfg.svg if svg is None else svg:
        from . import plots
        plots.plot_timeseries(trace, out / "timeseries.svg")
        plots.plot_spider(table, out / "spider.svg")
    return summary


def cmd_design(cfg: RunConfig, out_dir=None, svg=None, delay_mode=None) -> dict:
    out = _out(cfg, out_dir)
    loop = cfg.loop if delay_mode is None else cfg.loop.with_delay_mode(delay_mode)
    region = design.assemble_region(cfg.dregion, loop, cfg.resolution)
    checked = []
    report = {"probe": region.probe.to_dict(), "checked": []}
    if cfg.check_gains is not None:
        m = design.membership(cfg.check_gains, region)
        checked.append(m.certificate)
        report["checked"].append({"kp": cfg.check_gains.kp, "kd": cfg.check_gains.kd,
                                  "in_region": m.inside, "geometric": m.geometric})
    design.write_region_csv(region, out / "region.csv")
    design.write_region_json(region, out / "region.json", checked)
    if cfg.svg if svg is None else svg:
        from . import plots
        marks = [("checked", cfg.check_gains)] if cfg.check_gains is not None else []
        plots.plot_region(region, out / "region.svg", marks)
    report["diagnostics"] = list(region.diagnostics)
    _write_json(report, out / "design_report.json")
    return report


def _same_fleet(a: convoy.Scenario, b: convoy.Scenario):
    for name in ("n_vehicles", "params", "profile", "dt", "t_end"):
        if getattr(a, name) != getattr(b, name):
            raise ConfigError(f"configs differ in {name}: {getattr(a, name)!r} vs "
                              f"{getattr(b, name)!r}")


def cmd_compare(cfg_a: RunConfig, cfg_b: RunConfig, out_dir=None) -> dict:
    """Per-vehicle metric deltas (b - a) and the convoy peak-jerk ratio a / b."""
    _same_fleet(cfg_a.scenario, cfg_b.scenario)
    out = _out(cfg_a, out_dir)
    runs = []
    for cfg in (cfg_a, cfg_b):
        trace = convoy.simulate(cfg.scenario)
        runs.append((trace, metrics.spider_table(trace, cfg_a.normalization)))
    (ta, ma), (tb, mb) = runs
    vehicles = []
    for i in sorted(ma):
        ra, rb = ma[i].raw(), mb[i].raw()
        delta = {m: (None if ra[m] is None or rb[m] is None else rb[m] - ra[m])
                 for m in metrics.METRIC_NAMES}
        vehicles.append({"vehicle": i, "a": ra, "b": rb, "delta": delta})
    ja, jb = float(ta.peak_jerk().max()), float(tb.peak_jerk().max())
    doc = {
        "a": {"kp": cfg_a.scenario.gains.kp, "kd": cfg_a.scenario.gains.kd,
              "headway": cfg_a.scenario.headway, "convoy_peak_jerk": ja,
              "peak_jerk": ta.peak_jerk().tolist()},
        "b": {"kp": cfg_b.scenario.gains.kp, "kd": cfg_b.scenario.gains.kd,
              "headway": cfg_b.scenario.headway, "convoy_peak_jerk": jb,
              "peak_jerk": tb.peak_jerk().tolist()},
        "peak_jerk_ratio": ja / jb if jb > 0 else None,
        "vehicles": vehicles,
    }
    _write_json(doc, out / "compare.json")
    return doc


def cmd_metrics(trace_path, cfg: RunConfig, out_dir=None, svg=None) -> dict:
    out = _out(cfg, out_dir)
    trace = convoy.read_trace_csv(trace_path)
    table = metrics.spider_table(trace, cfg.normalization)
    metrics.write_metrics_csv(table, out / "metrics.csv")
    metrics.write_metrics_json(table, out / "metrics.json")
    if cfg.svg if svg is None else svg:
        from . import plots
        plots.plot_spider(table, out / "spider.svg")
    return metrics.metrics_document(table)


# ----------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="caccdrive", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (overrides [output] out_dir)")
    common.add_argument("--svg", action="store_true", default=None, help="also write SVG plots")
    common.add_argument("--seedless", action="store_true",
                        help="reserved; the simulator uses no random numbers")
    common.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("simulate", parents=[common], help="run a convoy scenario")
    p.add_argument("--config", required=True)
    p = sub.add_parser("design", parents=[common], help="assemble the D-stable gain region")
    p.add_argument("--config")
    p.add_argument("--delay-mode", choices=design.DELAY_MODES)
    p = sub.add_parser("compare", parents=[common], help="compare two scenarios")
    p.add_argument("--config", action="append", required=True,
                   help="give exactly twice: baseline then candidate")
    p = sub.add_parser("metrics", parents=[common], help="score an existing trace CSV")
    p.add_argument("trace")
    p.add_argument("--config")
    return ap


def _run(args) -> int:
    if args.seedless:
        raise ConfigError("--seedless is reserved: no random number generator exists to seed")
    if args.command == "simulate":
        s = cmd_simulate(load_config(args.config), args.out, args.svg)
        print(json.dumps({k: s[k] for k in ("max_follower_peak_accel", "convoy_peak_jerk")}))
    elif args.command == "design":
        cfg = load_config(args.config) if args.config else RunConfig()
        r = cmd_design(cfg, args.out, args.svg, args.delay_mode)
        print(json.dumps({"probe": [r["probe"]["kp"], r["probe"]["kd"]],
                          "checked": r["checked"]}))
    elif args.command == "compare":
        if len(args.config) != 2:
            raise ConfigError(f"compare needs exactly two --config files, got {len(args.config)}")
        a, b = (load_config(c) for c in args.config)
        r = cmd_compare(a, b, args.out)
        print(json.dumps({"peak_jerk_ratio": r["peak_jerk_ratio"]}))
    else:
        cfg = load_config(args.config) if args.config else RunConfig()
        cmd_metrics(args.trace, cfg, args.out, args.svg)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (ConfigError, TraceParseError, TraceRangeError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (EmptyRegionError, DegenerateBoundaryError) as exc:
        print(f"empty region: {exc}", file=sys.stderr)
        return EXIT_EMPTY_REGION


__all__ = ["RunConfig", "SCHEMA", "cmd_compare", "cmd_design", "cmd_metrics",
           "cmd_simulate", "dump_config", "load_config", "main", "parse_config"]
