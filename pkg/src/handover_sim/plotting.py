"""Figures written next to the CSV outputs.

Everything renders through the Agg backend into PNG files with the
software/date metadata stripped, so reruns give identical bytes.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

golden_mean = (math.sqrt(5.0) - 1.0) / 2.0
fig_width = 4.8  # inches
colors = ["#08589e", "#2b8cbe", "#4eb3d3", "#7bccc4", "#a8ddb5"]

params = {
    "axes.prop_cycle": matplotlib.cycler(color=colors),
    "axes.labelsize": 10,
    "font.family": "sans-serif",
    "font.sans-serif": ["DejaVu Sans"],
    "font.size": 9,
    "mathtext.fontset": "dejavusans",
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": [fig_width, fig_width * golden_mean],
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "lines.linewidth": 1.2,
    "axes.grid": True,
    "grid.alpha": 0.3,
}

_METADATA = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_METADATA)
    plt.close(fig)
    return path


def human_safety_curves(l: np.ndarray, curves: dict[float, np.ndarray], L: float, path) -> Path:
    """Human-safety score versus hand distance, one line per ``c``."""
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        for c, psi in curves.items():
            ax.plot(l, psi, label=f"c = {c:g}")
        ax.axvline(L, color="0.5", lw=0.8, ls="--")
        ax.axvline(L / 2.0, color="0.5", lw=0.8, ls=":")
        ax.set_xlabel("hand distance l (mm)")
        ax.set_ylabel(r"$\psi_h$")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="lower right")
        return _save(fig, path)


def object_safety_curves(force: np.ndarray, curves: dict[float, np.ndarray], reference: float, path) -> Path:
    """Object-safety score versus predicted force, one line per ``c``."""
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        for c, psi in curves.items():
            ax.plot(force, psi, label=f"c = {c:g}")
        ax.axvline(reference, color="0.5", lw=0.8, ls="--")
        ax.set_xlabel("predicted force (N)")
        ax.set_ylabel(r"$\psi_f$")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="upper right")
        return _save(fig, path)


def score_matrix(values: np.ndarray, rows: list[str], cols: list[str], title: str, path) -> Path:
    """Configuration x container heat map in percent.

    ``values`` holds floats, with NaN for empty cells; string cells ("X",
    "NE") are drawn as text over a grey square.
    """
    grid = np.full((len(rows), len(cols)), np.nan)
    text = [["" for _ in cols] for _ in rows]
    for i in range(len(rows)):
        for j in range(len(cols)):
            v = values[i][j]
            if isinstance(v, str):
                text[i][j] = v
            elif v is not None and not math.isnan(v):
                grid[i, j] = v
                text[i][j] = f"{v:.0f}"
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(1.2 + 0.9 * len(cols), 0.8 + 0.35 * len(rows)))
        cmap = matplotlib.colormaps["RdYlGn"].copy()
        cmap.set_bad("0.85")
        ax.imshow(np.ma.masked_invalid(grid), cmap=cmap, vmin=0.0, vmax=100.0, aspect="auto")
        for i in range(len(rows)):
            for j in range(len(cols)):
                colour = "#b2182b" if text[i][j] == "X" else "black"
                ax.text(j, i, text[i][j], ha="center", va="center", fontsize=8, color=colour)
        ax.set_xticks(range(len(cols)), cols)
        ax.set_yticks(range(len(rows)), rows)
        ax.grid(False)
        ax.set_title(title)
        return _save(fig, path)


def run_overview(times: np.ndarray, tool: np.ndarray, container: np.ndarray, l: np.ndarray, events, path) -> Path:
    """Top view of tool and container paths plus the hand distance over time."""
    with plt.rc_context(params):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(2.0 * fig_width, fig_width * golden_mean))
        ax0.plot(tool[:, 0], tool[:, 1], label="tool")
        ax0.plot(container[:, 0], container[:, 1], label="container", ls="--")
        ax0.set_xlabel("x (mm)")
        ax0.set_ylabel("y (mm)")
        ax0.set_aspect("equal", adjustable="datalim")
        ax0.legend(loc="best")
        finite = np.where(np.isfinite(l), l, np.nan)
        ax1.plot(times, finite)
        for e in events:
            ax1.axvline(e.time, color="0.4", lw=0.7, ls=":")
            ax1.annotate(e.name, (e.time, 1.0), xycoords=("data", "axes fraction"), rotation=90,
                         fontsize=6, va="top", ha="right")
        ax1.set_xlabel("time (s)")
        ax1.set_ylabel("hand distance l (mm)")
        return _save(fig, path)
