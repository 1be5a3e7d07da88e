"""Figures written next to the machine-readable outputs.

Uses :class:`matplotlib.figure.Figure` directly, never the pyplot state
machine, so figures can be rendered from any thread.
"""

from __future__ import annotations

import math
from pathlib import Path

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .assessment import LADDER

GOLDEN = (math.sqrt(5) - 1.0) / 2.0


def _figure(width=8.0, height=None, ncols=1):
    fig = Figure(figsize=(width, height or width * GOLDEN), facecolor="w")
    FigureCanvasAgg(fig)
    axes = fig.subplots(1, ncols)
    return fig, axes


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    return path


def plot_curves(rows, path) -> Path:
    """Left: decaying grade value. Right: growing friendship and money."""
    t = [r[0] for r in rows]
    fig, (left, right) = _figure(width=10, height=4, ncols=2)
    left.plot(t, [r[1] for r in rows], color="tab:red")
    left.set_title("Time value of grades")
    left.set_xlabel("years")
    left.set_ylabel("value")
    right.plot(t, [r[2] for r in rows], label="friendship", color="tab:green")
    right.plot(t, [r[3] for r in rows], label="money", color="tab:blue")
    right.set_title("Time value of money or friendship")
    right.set_xlabel("years")
    right.legend(frameon=False)
    return _save(fig, path)


def plot_grade_distributions(report, path) -> Path:
    """One grouped bar chart of curve grade counts per course-semester."""
    dists = {}
    for sem in report.semesters:
        dists.update(sem["grade_distributions"])
    labels = [g.label for g in LADDER if any(g.label in d for d in dists.values())]
    fig, ax = _figure()
    n = max(len(dists), 1)
    width = 0.8 / n
    for i, (course, counts) in enumerate(sorted(dists.items())):
        xs = [j + i * width for j in range(len(labels))]
        ax.bar(xs, [counts.get(lbl, 0) for lbl in labels], width=width, label=course)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(labels))])
    ax.set_xticklabels(labels)
    ax.set_ylabel("students")
    if dists:
        ax.legend(frameon=False, fontsize="small")
    return _save(fig, path)


def plot_npv(report, path) -> Path:
    per = report.npv["per_contract"]
    ids = sorted(per)
    fig, ax = _figure()
    xs = range(len(ids))
    ax.bar([x - 0.2 for x in xs], [per[c]["seller_npv"] for c in ids], width=0.4, label="seller")
    ax.bar([x + 0.2 for x in xs], [per[c]["buyer_npv"] for c in ids], width=0.4, label="buyer")
    ax.set_yscale("symlog")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(ids, rotation=45, ha="right")
    ax.set_ylabel("NPV")
    ax.legend(frameon=False)
    return _save(fig, path)
