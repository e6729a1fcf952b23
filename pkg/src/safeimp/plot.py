"""SVG panels for a recorded trace."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

VIOLATION_COLOR = "#8fd18f"


def _bands(ax, t, mask):
    if not np.any(mask):
        return
    edges = np.flatnonzero(np.diff(np.concatenate([[0], mask.astype(int), [0]])))
    for a, b in zip(edges[::2], edges[1::2]):
        ax.axvspan(t[a], t[b - 1], color=VIOLATION_COLOR, alpha=0.5, lw=0)


def plot_trace(trace, path, tau_max=None, tau_min=None):
    """Torque, barrier, slack, filtered error and impedance error against time."""
    c = trace.columns
    t = np.asarray(c["t"])
    u = trace.block("u")
    if tau_max is None and trace.config:
        tau_max = np.asarray(trace.config["torque_limits"]["tau_max"], float)
        tmin = trace.config["torque_limits"].get("tau_min")
        tau_min = -tau_max if tmin is None else np.asarray(tmin, float)
    fig, axes = plt.subplots(5, 1, figsize=(8, 12), sharex=True)

    ax = axes[0]
    ax.plot(t, u, lw=0.8)
    if tau_max is not None:
        viol = np.any((u > tau_max + 1e-6) | (u < tau_min - 1e-6), axis=1)
        _bands(ax, t, viol)
    ax.set_ylabel("u [N m]")

    ax = axes[1]
    h = np.asarray(c["min_h"])
    ax.plot(t, h, lw=0.8)
    ax.axhline(0.0, color="k", lw=0.5)
    _bands(ax, t, h < 0)
    ax.set_ylabel("min h")

    ax = axes[2]
    ax.plot(t, trace.block("s").max(axis=1), lw=0.8, label="max s")
    fh, fmax = np.asarray(c["F_h_norm"]), np.asarray(c["F_max"])
    if np.any(np.isfinite(fmax)):
        _bands(ax, t, np.isfinite(fmax) & (fh > fmax))
    ax.set_ylabel("slack [N m]")

    ax = axes[3]
    ax.plot(t, np.linalg.norm(trace.block("r"), axis=1), lw=0.8)
    ax.set_ylabel("|r| [rad/s]")

    ax = axes[4]
    ax.plot(t, c["imp_err"], lw=0.8)
    ax.set_ylabel("impedance error")
    ax.set_xlabel("t [s]")

    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
