"""PNG figures written next to the CSV outputs (headless backend)."""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import COLUMN_TITLES, TABLE_COLUMNS, MetricReport  # noqa: E402
from .train import CurvePoint  # noqa: E402


def plot_loss_curve(path, curve: Sequence[CurvePoint]) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([p.step for p in curve], [p.train_loss for p in curve], lw=1, label="train")
    val = [(p.step, p.val_loss) for p in curve if p.val_loss is not None]
    if val:
        ax.plot(*zip(*val), "o-", label="validation")
    ax.set_xlabel("step")
    ax.set_ylabel("cross-entropy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100, format="png")
    plt.close(fig)


def plot_metric_bars(path, reports: Mapping[str, MetricReport]) -> None:
    """Grouped bars, one group per metric in table order, one bar per system."""
    names = list(reports)
    width = 0.8 / max(len(names), 1)
    fig, ax = plt.subplots(figsize=(8, 4))
    for i, name in enumerate(names):
        xs = [k + i * width for k in range(len(TABLE_COLUMNS))]
        ax.bar(xs, [reports[name].scores[c] for c in TABLE_COLUMNS], width, label=name)
    ax.set_xticks([k + 0.4 - width / 2 for k in range(len(TABLE_COLUMNS))])
    ax.set_xticklabels([COLUMN_TITLES[c] for c in TABLE_COLUMNS])
    ax.set_ylabel("score (x100)")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100, format="png")
    plt.close(fig)
