"""PNG rendering for sweep tables."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import SweepTable

_SERIES = (("correct", "o-", "tab:green"), ("rejected", "s--", "tab:blue"), ("incorrect", "^:", "tab:red"))


def render_sweep(table: SweepTable, path: str | Path) -> Path:
    """One line per outcome share against the sweep axis."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5.0, 3.2), dpi=150)
    xs = table.values()
    for name, style, color in _SERIES:
        ax.plot(xs, [getattr(t, name) for t in table.triples()], style, color=color, label=name)
    ax.set_xlabel(table.axis)
    ax.set_ylabel("% of inputs")
    ax.set_ylim(-3, 103)
    title = " ".join(str(table.meta[k]) for k in ("model", "dataset") if k in table.meta)
    if title:
        ax.set_title(title, fontsize=10)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
