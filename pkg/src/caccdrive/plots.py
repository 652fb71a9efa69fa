"""SVG views of traces, metric tables and gain regions.

Plots are read-only consumers of the numeric results. Output is
byte-reproducible: fixed hash salt, no timestamp metadata.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import METRIC_NAMES  # noqa: E402

SVG_RC = {"svg.hashsalt": "caccdrive", "svg.fonttype": "none"}
AXIS_LABELS = {
    "response_time": "response time", "bump": "bump", "kick": "kick",
    "stumble": "stumble", "peak_jerk": "jerk", "vdv": "VDV",
}


def _save(fig, path):
    with plt.rc_context(SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_timeseries(trace, path, title=None) -> None:
    """Velocity, acceleration and jerk of every vehicle against time."""
    with plt.rc_context(SVG_RC):
        fig, axes = plt.subplots(3, 1, figsize=(8, 8), sharex=True)
        series = [(trace.velocity, "velocity [m/s]"),
                  (trace.acceleration, "acceleration [m/s$^2$]"),
                  (trace.jerk, "jerk [m/s$^3$]")]
        for ax, (data, label) in zip(axes, series):
            for i in range(trace.n_vehicles):
                ax.plot(trace.times, data[i], lw=0.9, label=f"vehicle {i}")
            ax.set_ylabel(label)
            ax.grid(True, lw=0.3)
        axes[0].legend(loc="upper right", fontsize=7, ncol=2)
        axes[-1].set_xlabel("time [s]")
        if title:
            axes[0].set_title(title)
        fig.tight_layout()
    _save(fig, path)


def plot_spider(table, path, title=None) -> None:
    """Hexagonal radar of normalized (0-10) scores, one polygon per vehicle."""
    n = len(METRIC_NAMES)
    ang = np.linspace(0, 2 * np.pi, n, endpoint=False)
    closed = np.append(ang, ang[0])
    with plt.rc_context(SVG_RC):
        fig = plt.figure(figsize=(6, 6))
        ax = fig.add_subplot(projection="polar")
        ax.set_theta_offset(np.pi / 2)
        ax.set_theta_direction(-1)
        for i, s in sorted(table.items()):
            vals = [s.normalized[m] for m in METRIC_NAMES]
            ax.plot(closed, vals + vals[:1], lw=1.0, label=f"vehicle {i}")
        ax.set_xticks(ang)
        ax.set_xticklabels([AXIS_LABELS[m] for m in METRIC_NAMES])
        ax.set_ylim(0, 10)
        ax.set_yticks([2, 4, 6, 8, 10])
        ax.legend(loc="upper right", bbox_to_anchor=(1.25, 1.1), fontsize=7)
        if title:
            ax.set_title(title, pad=20)
    _save(fig, path)


def plot_region(region, path, marks=(), title=None) -> None:
    """Boundary curves clipped to the region box, feasible cells shaded, probe and marks."""
    lo_p, hi_p, lo_d, hi_d = region.box
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(7, 6))
        ax.contourf(region.kp_grid, region.kd_grid, region.mask.astype(float),
                    levels=[0.5, 1.5], colors=["#cfe3f5"])
        for c in region.curves:
            ax.plot(c.kp, c.kd, lw=1.0, label=c.label)
        ax.plot(region.probe.gains.kp, region.probe.gains.kd, "k+", ms=9, label="probe")
        for name, g in marks:
            ax.plot(g.kp, g.kd, "o", ms=5, mfc="none", label=name)
        ax.set_xlim(lo_p, hi_p)
        ax.set_ylim(lo_d, hi_d)
        ax.set_xlabel("$k_P$")
        ax.set_ylabel("$k_D$")
        ax.grid(True, lw=0.3)
        ax.legend(fontsize=7, loc="best")
        if title:
            ax.set_title(title)
        fig.tight_layout()
    _save(fig, path)
