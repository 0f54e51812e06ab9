"""SVG figures for sweeps, predictions and fits (matplotlib, Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids and no timestamp keep repeated renders byte-identical
plt.rcParams["svg.hashsalt"] = "cpwloss"
_META = {"Date": None, "Creator": "cpwloss"}

_COLORS = {"MS": "tab:red", "SA": "tab:blue", "MA": "tab:purple", "Si": "tab:green"}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def plot_depth_sweep(result, path):
    """Interface participation (left, log) and Si participation (right) vs depth."""
    d = np.asarray(result.depths)
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in ("MS", "SA", "MA"):
        vals = [getattr(p, f"p_{name.lower()}") for p in result.participation]
        ax.plot(d, vals, "o-", color=_COLORS[name], label=name, ms=3)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("trench depth (µm)")
    ax.set_ylabel("interface participation")
    ax2 = ax.twinx()
    ax2.plot(d, [p.p_si for p in result.participation], "s-", color=_COLORS["Si"], label="Si", ms=3)
    ax2.set_yscale("log")
    ax2.set_ylabel("Si participation", color=_COLORS["Si"])
    ax.axvline(result.saturation_depth, ls="--", color="k", lw=1, label=f"saturation {result.saturation_depth:.3g} µm")
    h1, l1 = ax.get_legend_handles_labels()
    h2, l2 = ax2.get_legend_handles_labels()
    ax.legend(h1 + h2, l1 + l2, fontsize=8, loc="lower left")
    fig.tight_layout()
    _save(fig, path)


def plot_prediction_band(depths, stats, path, measured=None):
    """Predicted Q_TLS mean and 95% band against depth, with optional data points."""
    d = np.asarray(depths, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.fill_between(d, [s.ci95_lo for s in stats], [s.ci95_hi for s in stats], color="pink", alpha=0.7,
                    label="95% band")
    ax.plot(d, [s.mean_qtls for s in stats], color="crimson", lw=1.5, label="mean")
    if measured:
        md = [m[0] for m in measured]
        ms = [m[1] for m in measured]
        ax.errorbar(md, [s.mean_qtls for s in ms], yerr=[[s.mean_qtls - s.ci95_lo for s in ms],
                                                          [s.ci95_hi - s.mean_qtls for s in ms]],
                    fmt="o", color="tab:blue", label="measured")
    ax.set_xlabel("trench depth (µm)")
    ax.set_ylabel("Q_TLS")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_predicted_vs_measured(rows, path, stats=None):
    """Scatter of predicted against measured Q_TLS with the identity line."""
    meas = np.array([r[1] for r in rows])
    pred = np.array([r[2] for r in rows])
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    if stats is not None:
        err = np.array([[s.mean_qtls - s.ci95_lo, s.ci95_hi - s.mean_qtls] for s in stats]).T
        ax.errorbar(meas, pred, xerr=err, fmt="o", ms=4)
    else:
        ax.plot(meas, pred, "o", ms=4)
    lo = min(meas.min(), pred.min()) * 0.9
    hi = max(meas.max(), pred.max()) * 1.1
    ax.plot([lo, hi], [lo, hi], "--", color="tab:green")
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    ax.set_xlabel("measured Q_TLS")
    ax.set_ylabel("predicted Q_TLS")
    fig.tight_layout()
    _save(fig, path)
