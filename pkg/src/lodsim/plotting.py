"""Figures for run logs and consistency reports.

Everything renders through the Agg backend with fixed sizes and no PNG
metadata, so identical inputs give identical files.
"""
from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .runlog import RunRecord  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
    "svg.hashsalt": "lodsim",
}
LEVEL_COLORS = {"l1": "tab:blue", "l2": "tab:orange", "l3": "tab:green"}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def _with_breaks(pts: list[tuple[float, float]], gap: float) -> tuple[list[float], list[float]]:
    """Split a series where samples are more than ``gap`` apart, so a body that
    was absent for a while (merged into an aggregate) is not drawn across it."""
    ts, xs = [], []
    for i, (t, x) in enumerate(pts):
        if i and t - pts[i - 1][0] > gap:
            ts.append(math.nan)
            xs.append(math.nan)
        ts.append(t)
        xs.append(x)
    return ts, xs


def trajectories(records: Iterable[RunRecord], path: Path | str, gap: float = 0.5) -> Path:
    """Along-road position over time, one line per body; platoons dashed."""
    series: dict[tuple[str, str], list[tuple[float, float]]] = defaultdict(list)
    for r in records:
        if r.variable == "position" and r.event in ("init", "state") and isinstance(r.value, tuple):
            series[(r.level, r.agent_id)].append((float(r.time), float(r.value[0])))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 4))
        for (level, agent_id), pts in sorted(series.items()):
            ts, xs = _with_breaks(pts, gap)
            ax.plot(
                ts, xs,
                color=LEVEL_COLORS.get(level, "tab:gray"),
                lw=1.6 if level != "l1" else 0.8,
                ls="--" if level != "l1" else "-",
            )
        for level, color in LEVEL_COLORS.items():
            if any(k[0] == level for k in series):
                ax.plot([], [], color=color, label=level)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("x [m]")
        if series:
            ax.legend(loc="upper left")
        fig.tight_layout()
        return _save(fig, Path(path))


def firings(records: Iterable[RunRecord], path: Path | str, window: float = 1.0) -> Path:
    """Firing instants per level over the first ``window`` seconds."""
    times: dict[str, list[float]] = defaultdict(list)
    for r in records:
        if r.event == "fire" and float(r.time) < window:
            times[r.level].append(float(r.time))
    levels = sorted(times)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 0.6 + 0.5 * max(len(levels), 1)))
        for i, level in enumerate(levels):
            ax.eventplot(times[level], lineoffsets=i, linelengths=0.7, colors=LEVEL_COLORS.get(level, "k"))
        ax.set_yticks(range(len(levels)), levels)
        ax.set_xlim(0, window)
        ax.set_xlabel("time [s]")
        fig.tight_layout()
        return _save(fig, Path(path))


def consistency(report, path: Path | str) -> Path:
    """Final per-replicate values of each element, full against LOD."""
    names = list(report.elements)
    final = max(s.time for s in report.samples)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(names), figsize=(2.2 * len(names) + 0.6, 3), squeeze=False)
        for ax, name in zip(axes[0], names):
            for k, (mode, color) in enumerate((("full", "tab:blue"), ("lod", "tab:orange"))):
                vals = [s.value for s in report.samples if s.element == name and s.mode == mode and s.time == final]
                ax.scatter([k] * len(vals), vals, s=12, color=color, alpha=0.7)
                ax.hlines(sum(vals) / len(vals), k - 0.25, k + 0.25, color="k", lw=1)
            ax.set_xticks([0, 1], ["full", "lod"])
            ax.set_xlim(-0.6, 1.6)
            ax.set_title(name)
        fig.suptitle(f"dissimilarity {report.dissimilarity:.3g} (tolerance {report.tolerance:g})")
        fig.tight_layout()
        return _save(fig, Path(path))
