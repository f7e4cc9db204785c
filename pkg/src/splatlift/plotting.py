"""Report figures written next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 10,
    "legend.frameon": False,
    "svg.hashsalt": "splatlift",  # stable element ids across runs
    "svg.fonttype": "path",
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    meta = {"Date": None} if path.suffix == ".svg" else {}
    fig.savefig(path, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_losses(history: Mapping[str, Sequence[float]], path: str | Path, late_start: int | None = None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        steps = np.arange(len(next(iter(history.values()))))
        for name, values in history.items():
            ax.plot(steps, values, label=name, linewidth=1.0)
        if late_start is not None:
            ax.axvline(late_start, color="0.5", linestyle=":", linewidth=1.0)
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.legend(loc="upper right")
        return _save(fig, path)


def plot_toy(trajectory: np.ndarray, groups: np.ndarray, path: str | Path) -> Path:
    """Initial and final sigmoid positions per group, plus each group mean's path."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        colors = plt.get_cmap("tab10")
        for g in np.unique(groups):
            sel = groups == g
            c = colors(int(g) % 10)
            ax.scatter(*trajectory[0, sel].T, s=6, color=c, alpha=0.25)
            ax.scatter(*trajectory[-1, sel].T, s=10, color=c, label=f"group {int(g)}")
            ax.plot(*trajectory[:, sel].mean(axis=1).T, color=c, linewidth=1.0)
        ax.set_xlim(-0.05, 1.05)
        ax.set_ylim(-0.05, 1.05)
        ax.set_aspect("equal")
        ax.set_xlabel(r"$\sigma(v_1)$")
        ax.set_ylabel(r"$\sigma(v_2)$")
        ax.legend(loc="center", fontsize=8)
        return _save(fig, path)


def plot_compare(labels: Sequence[str], decode_seconds: Sequence[float], baseline_seconds: Sequence[float],
                 path: str | Path) -> Path:
    """Grouped bars of wall time, log scale."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(labels))
        ax.bar(x - 0.2, decode_seconds, width=0.4, label="decode")
        ax.bar(x + 0.2, baseline_seconds, width=0.4, label="cluster + assign")
        ax.set_xticks(x, labels)
        ax.set_yscale("log")
        ax.set_ylabel("seconds")
        ax.legend()
        return _save(fig, path)
