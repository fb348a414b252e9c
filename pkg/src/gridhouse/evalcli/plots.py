"""Static report figures for forecast accuracy and control episodes.

Every function renders one file and returns its path; nothing is shown
interactively. Figures cover the standard report set: per-instance
accuracy bars, error distributions, power-versus-violation scatters,
applied-setpoint strategy scatters, and closed-loop trajectory strips.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .. import signals  # noqa: E402
from ..mpc import (COMFORT_HIGH, COMFORT_LOW, RuleBasedConfig,  # noqa: E402
                   rule_based_step)

_ARCH_COLOR = {"lss-nl": "tab:green", "enc-dec": "tab:blue",
               "rb": "tab:red"}


def _color(name: str) -> str:
    for key, color in _ARCH_COLOR.items():
        if name.startswith(key):
            return color
    return "tab:gray"


def smrae_bars(names: list, metrics: list, path) -> Path:
    """Side-by-side temperature and power sMRAE bars per instance."""
    path = Path(path)
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.bar(x - 0.2, [m.smrae_temperature for m in metrics], width=0.4,
           label="temperature", color="tab:orange")
    ax.bar(x + 0.2, [m.smrae_power for m in metrics], width=0.4,
           label="power", color="tab:purple")
    ax.set_xticks(x, names, rotation=45, ha="right")
    ax.set_ylabel("sMRAE")
    m = metrics[0].window_steps
    ax.set_title(f"forecast sMRAE, {m}-step windows")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def error_histograms(errors: dict, path) -> Path:
    """Temperature error distributions for selected instances."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(8, 4))
    for name, err in errors.items():
        ax.hist(np.ravel(err), bins=60, density=True, histtype="step",
                label=name, color=_color(name))
    ax.set_xlabel("temperature error (degC)")
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def power_violation_scatter(rows: dict, path) -> Path:
    """Mean grid exchange against mean comfort violation, one dot each."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 5))
    for name, cm in rows.items():
        ax.scatter(cm.comfort_violation, cm.p_grid, color=_color(name))
        ax.annotate(name, (cm.comfort_violation, cm.p_grid), fontsize=7,
                    xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("mean comfort violation (degC)")
    ax.set_ylabel("mean grid exchange (kW)")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def rate_depth_scatter(rows: dict, path) -> Path:
    """Share of violating samples against mean violation depth."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 5))
    for name, cm in rows.items():
        rate = 100.0 * cm.n_violating / cm.n_samples
        ax.scatter(rate, cm.violation_depth, color=_color(name))
        ax.annotate(name, (rate, cm.violation_depth), fontsize=7,
                    xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("violating samples (%)")
    ax.set_ylabel("violation depth (degC)")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def supply_scatter(episodes: dict, path) -> Path:
    """Applied heat-pump supply against outdoor temperature.

    The rule-based heating curve is drawn for reference; optimizing
    controllers are free to leave it.
    """
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 5))
    for name, log in episodes.items():
        s = log.eval_slice()
        ax.scatter(log.t_out[s], log.setpoints[s, 0], s=6, alpha=0.4,
                   label=name, color=_color(name))
    grid = np.linspace(-12.0, 22.0, 120)
    rb = RuleBasedConfig()
    ax.plot(grid, [rule_based_step(t, rb).hp_supply for t in grid],
            color="tab:red", label="heating curve")
    ax.set_xlabel("outdoor temperature (degC)")
    ax.set_ylabel("heat pump supply setpoint (degC)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def zone_scatter(episodes: dict, path, zone: int = 0) -> Path:
    """Measured room temperature against outdoor temperature."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 5))
    for name, log in episodes.items():
        s = log.eval_slice()
        ax.scatter(log.t_out[s], log.temps[s, zone], s=6, alpha=0.4,
                   label=name, color=_color(name))
    for bound in (COMFORT_LOW, COMFORT_HIGH):
        ax.axhline(bound, color="tab:red", linestyle="--", linewidth=1)
    ax.set_xlabel("outdoor temperature (degC)")
    ax.set_ylabel(f"room {zone + 1} temperature (degC)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def trajectory_plot(episodes: dict, path, days: tuple = (0, 3),
                    zone: int = 0) -> Path:
    """Room-temperature trajectories over an excerpt with the comfort
    band and normalized irradiance overlaid."""
    path = Path(path)
    lo = days[0] * signals.STEPS_PER_DAY
    hi = days[1] * signals.STEPS_PER_DAY
    fig, ax = plt.subplots(figsize=(9, 4))
    ghi = None
    for name, log in episodes.items():
        w = log.warmup_steps
        seg = slice(w + lo, min(w + hi, log.n_steps))
        t = np.arange(seg.stop - seg.start) * signals.STEP_MINUTES / 60.0
        ax.plot(t, log.temps[seg, zone], label=name, color=_color(name))
        if ghi is None and hasattr(log, "p_pv"):
            peak = np.max(log.p_pv[seg])
            if peak > 0:
                ghi = (t, COMFORT_LOW - 1.0 + 2.0 * log.p_pv[seg] / peak)
    if ghi is not None:
        ax.plot(*ghi, color="tab:orange", alpha=0.7,
                label="irradiance (scaled)")
    for bound in (COMFORT_LOW, COMFORT_HIGH):
        ax.axhline(bound, color="tab:red", linestyle="--", linewidth=1)
    ax.set_xlabel("hours")
    ax.set_ylabel(f"room {zone + 1} temperature (degC)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
