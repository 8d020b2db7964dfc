"""Figures for the command line reports, rendered to files (no display needed)."""

from __future__ import annotations

from collections import defaultdict

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

__all__ = ["bench_figure", "loss_figure"]


def _save(fig, path):
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    return path


def bench_figure(records, path):
    """seconds / n^3 against n, one line per (op, phase)."""
    series = defaultdict(list)
    for r in records:
        series[(r["op"], r["phase"])].append((r["n"], r["seconds_per_n3"]))
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    for (op, phase), pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                linestyle="-" if phase == "forward" else "--", label=f"{op} {phase}")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("seconds / n^3")
    ax.legend(fontsize=7, ncol=2)
    return _save(fig, path)


def loss_figure(losses, path, title=None):
    fig = Figure(figsize=(5, 3.5))
    ax = fig.add_subplot()
    ax.plot(range(len(losses)), losses, color="k", lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("criterion")
    if title:
        ax.set_title(title)
    return _save(fig, path)
