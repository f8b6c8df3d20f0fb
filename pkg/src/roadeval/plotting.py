"""Figures for evaluation reports.

Everything renders through the Agg backend and is written as SVG with a
fixed hash salt and no timestamp, so reruns produce identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .masking import RemovalOrder  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
    "svg.hashsalt": "roadeval",
    "svg.fonttype": "none",
}


def save_fig(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format=path.suffix.lstrip(".") or "svg", bbox_inches="tight",
                metadata={"Date": None} if path.suffix in ("", ".svg") else None)
    plt.close(fig)
    return path


def plot_curves(curves: dict, path, title: str = "") -> Path:
    """Accuracy against pixel fraction, one line per method with a stderr band.

    MoRF curves use the removed fraction on the x axis, LeRF curves the kept one.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        lerf = False
        for name in sorted(curves):
            c = curves[name]
            lerf = RemovalOrder.parse(c.order) is RemovalOrder.LERF
            x = c.kept_fraction if lerf else np.asarray(c.eta)
            m, s = np.asarray(c.acc_mean), np.asarray(c.acc_stderr)
            (line,) = ax.plot(x, m, marker="o", ms=3, lw=1.2, label=name)
            ax.fill_between(x, m - s, m + s, color=line.get_color(), alpha=0.2, lw=0)
        ax.set_xlabel("fraction of pixels kept" if lerf else "fraction of pixels removed")
        ax.set_ylabel("test accuracy")
        if title:
            ax.set_title(title)
        ax.legend(fontsize=7)
        return save_fig(fig, path)


def plot_gamma(series: dict, path, title: str = "") -> Path:
    """Bias indicator per eta for every method."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name in sorted(series):
            g = series[name]
            ax.plot(g.eta, g.gamma, marker="s", ms=3, lw=1.2, label=name)
        ax.set_ylim(0.0, 1.05)
        ax.set_xlabel("removal fraction")
        ax.set_ylabel("bias indicator")
        if title:
            ax.set_title(title)
        ax.legend(fontsize=7)
        return save_fig(fig, path)
