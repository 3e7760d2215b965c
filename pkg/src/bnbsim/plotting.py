"""Figures for batch reports (rendered off-screen to PNG)."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .render import MODE_COLUMNS  # noqa: E402

__all__ = ["plot_winrates", "plot_turn_histogram"]


def plot_winrates(rates: Mapping[str, Mapping[str, str]], path: str | Path, labels: Mapping[str, str] | None = None) -> Path:
    """Grouped bars: one group per team structure, one bar per retrieval mode."""
    modes = [(m, t) for m, t in MODE_COLUMNS if m in rates]
    structures = list(rates[modes[0][0]])
    x = np.arange(len(structures))
    width = 0.8 / len(modes)
    fig, ax = plt.subplots(figsize=(max(6.0, 1.1 * len(structures)), 3.8))
    for i, (mode, title) in enumerate(modes):
        values = [float(rates[mode][s]) for s in structures]
        ax.bar(x + (i - (len(modes) - 1) / 2) * width, values, width, label=title)
    ax.set_xticks(x)
    ax.set_xticklabels([labels.get(s, s) if labels else s for s in structures], rotation=30, ha="right")
    ax.set_ylabel("win rate (%)")
    ax.set_ylim(0, 100)
    ax.legend(frameon=False, ncol=len(modes))
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_turn_histogram(turn_counts: Mapping[str, list[int]], path: str | Path) -> Path:
    """Distribution of game length for won games, per structure."""
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    bins = np.arange(0.5, 11.5, 1.0)
    for name, counts in turn_counts.items():
        if counts:
            ax.hist(counts, bins=bins, histtype="step", label=name)
    ax.set_xlabel("turns to win")
    ax.set_ylabel("games")
    ax.set_xticks(range(1, 11))
    if any(turn_counts.values()):
        ax.legend(frameon=False, fontsize="small")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path
