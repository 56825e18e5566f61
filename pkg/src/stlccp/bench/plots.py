"""Static figures: workspace with regions and trajectories, and sweep summaries.

Figures are written with a fixed SVG hash salt and no date metadata so the
same data always produces the same file.
"""

from __future__ import annotations

from typing import Dict, Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from ..stl import Box  # noqa: E402

REGION_COLORS = {"O": "#c0392b", "G": "#27ae60", "B1": "#2980b9", "B2": "#2980b9"}

_RC = {"svg.hashsalt": "stlccp", "svg.fonttype": "none", "font.size": 9}
_META = {"svg": {"Date": None}, "png": {}, "pdf": {"CreationDate": None}}


def _save(fig, path):
    fmt = str(path).rsplit(".", 1)[-1].lower()
    fig.savefig(path, metadata=_META.get(fmt), bbox_inches="tight")
    plt.close(fig)


def plot_workspace(path, regions: Dict[str, Box], trajectories: Iterable[np.ndarray], bounds=None, title=None):
    """Draw the regions and one or more (T+1, n) state trajectories in the (x0, x1) plane."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        for name, box in sorted(regions.items()):
            color = REGION_COLORS.get(name, "#7f8c8d")
            ax.add_patch(
                Rectangle((box.x_lo, box.y_lo), box.x_hi - box.x_lo, box.y_hi - box.y_lo,
                          facecolor=color, alpha=0.35, edgecolor=color)
            )
            ax.text(0.5 * (box.x_lo + box.x_hi), 0.5 * (box.y_lo + box.y_hi), name, ha="center", va="center")
        for i, x in enumerate(trajectories):
            x = np.asarray(x)
            ax.plot(x[:, 0], x[:, 1], "-o", ms=2.5, lw=1.0, color=f"C{i % 10}")
            ax.plot(x[0, 0], x[0, 1], "ks", ms=4)
        if bounds is not None:
            ax.set_xlim(bounds[0], bounds[1])
            ax.set_ylim(bounds[2], bounds[3])
        ax.set_aspect("equal")
        ax.set_xlabel("$x_0$")
        ax.set_ylabel("$x_1$")
        if title:
            ax.set_title(title)
        _save(fig, path)


def plot_sweep(path, horizons: Sequence[int], seconds: Sequence[float], robustness: Sequence[float]):
    """Two panels against the horizon: solve time and exact robustness, trial points plus means."""
    T = np.asarray(horizons)
    sec = np.asarray(seconds, dtype=float)
    rob = np.asarray(robustness, dtype=float)
    levels = np.unique(T)
    with plt.rc_context(_RC):
        fig, (ax_t, ax_r) = plt.subplots(2, 1, figsize=(5.5, 5.0), sharex=True)
        ax_t.plot(T, sec, ".", color="0.6")
        ax_t.plot(levels, [sec[T == t].mean() for t in levels], "-o", ms=3, color="C0")
        ax_t.set_ylabel("time [s]")
        finite = np.isfinite(rob)
        ax_r.plot(T[finite], rob[finite], ".", color="0.6")
        means = [rob[(T == t) & finite].mean() if np.any((T == t) & finite) else np.nan for t in levels]
        ax_r.plot(levels, means, "-o", ms=3, color="C0")
        ax_r.axhline(0.0, color="k", lw=0.6)
        ax_r.set_ylabel("robustness")
        ax_r.set_xlabel("horizon T")
        _save(fig, path)
