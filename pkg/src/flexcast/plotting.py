"""SVG figures: envelope heatmaps and the risk tradeoff curve."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from flexcast.envelope import FlexibilityEnvelope  # noqa: E402
from flexcast.storage import write_atomic  # noqa: E402

# Stable element ids and no timestamp, so reruns produce identical files.
matplotlib.rcParams["svg.hashsalt"] = "flexcast"
matplotlib.rcParams["svg.fonttype"] = "path"


def _to_svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return buf.getvalue()


def envelope_svg(env: FlexibilityEnvelope, title: str = "", steps_per_day: int = 288) -> str:
    """Heatmap with power level on the vertical axis and time of day on the horizontal axis."""
    hours = (env.time_grid % steps_per_day) * 24.0 / steps_per_day
    hours_avail = env.durations * 24.0 / steps_per_day
    fig, ax = plt.subplots(figsize=(7, 4))
    extent_h = (hours[1] - hours[0]) if len(hours) > 1 else 1.0
    dp = (env.power_grid[1] - env.power_grid[0]) if len(env.power_grid) > 1 else 1.0
    im = ax.imshow(
        hours_avail,
        origin="lower",
        aspect="auto",
        cmap="viridis",
        vmin=0,
        vmax=env.cap_steps * 24.0 / steps_per_day,
        extent=(hours[0], hours[-1] + extent_h, env.power_grid[0] - dp / 2, env.power_grid[-1] + dp / 2),
    )
    ax.set_xlabel("start time of day [h]")
    ax.set_ylabel("relative request [input fraction]")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="sustainable duration [h]")
    return _to_svg(fig)


def save_envelope_svg(env: FlexibilityEnvelope, path, title: str = "", steps_per_day: int = 288) -> None:
    write_atomic(path, envelope_svg(env, title, steps_per_day))


def tradeoff_svg(alphas, infeasible_fractions, maes) -> str:
    """Share of optimistic predictions against mean absolute error, one point per risk level."""
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    x = 100.0 * np.asarray(infeasible_fractions)
    y = np.asarray(maes)
    ax.plot(x, y, "o-")
    for a, xi, yi in zip(alphas, x, y):
        ax.annotate(f"alpha={a:.3g}", (xi, yi), textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xlabel("infeasible predictions [%]")
    ax.set_ylabel("mean absolute error [steps]")
    return _to_svg(fig)


def scatter_svg(predicted, true, label: str = "") -> str:
    """Predicted against true durations; points below the diagonal are optimistic."""
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(predicted, true, s=4, alpha=0.4)
    top = max(np.max(true, initial=1), np.max(predicted, initial=1))
    ax.plot([0, top], [0, top], "k--", lw=0.8)
    ax.set_xlabel("predicted duration [steps]")
    ax.set_ylabel("true duration [steps]")
    ax.set_title(label)
    return _to_svg(fig)
