"""Figures for scenario reports: energy partition pies and
disaggregation traces. Rendered off-screen to files."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# Fixed metadata keeps PNG output byte-stable across runs.
_PNG_META = {"Software": None}


def _colors(names: Sequence[str]) -> dict[str, tuple]:
    cmap = plt.get_cmap("tab10")
    return {n: cmap(i % 10) for i, n in enumerate(names)}


def plot_partition(real: Mapping[str, float], estimated: Mapping[str, float], path: str | Path,
                   title: str = "Household energy partition") -> Path:
    """Side-by-side pies of the real and estimated energy shares (percent)."""
    names = list(real)
    colors = _colors(names)
    fig, axes = plt.subplots(1, 2, figsize=(9, 4.2))
    for ax, (label, shares) in zip(axes, [("Real", real), ("Estimated", estimated)]):
        vals = [shares.get(n, 0.0) for n in names]
        vals = [0.0 if (v is None or math.isnan(v)) else v for v in vals]
        if sum(vals) <= 0:
            ax.text(0.5, 0.5, "no energy", ha="center", va="center")
            ax.set_axis_off()
        else:
            ax.pie(vals, colors=[colors[n] for n in names], autopct="%1.0f%%", startangle=90,
                   counterclock=False, pctdistance=0.75, textprops={"fontsize": 8})
            ax.set_aspect("equal")
        ax.set_title(label)
    fig.legend([plt.Rectangle((0, 0), 1, 1, color=colors[n]) for n in names], names,
               loc="lower center", ncol=min(len(names), 4), fontsize=8, frameon=False)
    fig.suptitle(title)
    fig.subplots_adjust(bottom=0.18)
    path = Path(path)
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_disaggregation(aggregate: np.ndarray, estimate: np.ndarray, per_appliance: Mapping[str, np.ndarray],
                        path: str | Path, sample_period: float = 1.0, max_samples: int = 6 * 3600,
                        title: str = "Aggregate power and per-appliance estimates") -> Path:
    """Measured vs estimated aggregate on top, stacked appliance estimates below."""
    n = min(len(aggregate), max_samples)
    hours = np.arange(n) * sample_period / 3600.0
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
    top.plot(hours, aggregate[:n], lw=0.6, color="0.4", label="measured")
    top.plot(hours, estimate[:n], lw=0.6, color="tab:red", label="estimated")
    top.set_ylabel("Power [W]")
    top.legend(loc="upper right", fontsize=8)
    names = list(per_appliance)
    colors = _colors(names)
    bottom.stackplot(hours, *[np.asarray(per_appliance[k][:n]) for k in names],
                     labels=names, colors=[colors[k] for k in names], lw=0)
    bottom.set_ylabel("Estimated [W]")
    bottom.set_xlabel("Time [h]")
    bottom.legend(loc="upper right", fontsize=7, ncol=2)
    fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path
