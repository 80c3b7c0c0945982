"""Figures written alongside the CLI's tab-separated outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .audit import ParamReport  # noqa: E402
from .training.metrics import MetricsRecord, smooth  # noqa: E402

STYLE = {
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


def plot_loss_curves(runs: Mapping[str, Sequence[MetricsRecord]], path: str | Path,
                     window: int = 50, field: str = "total") -> Path:
    """Training loss against step, one line per run, smoothed by a trailing mean."""
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.5))
        for label, records in runs.items():
            steps = [r.step for r in records]
            values = [getattr(r, field) for r in records]
            ax.plot(steps, smooth(values, window), label=label, linewidth=1.2)
        ax.set_xlabel("training step")
        ax.set_ylabel(f"{field} loss (moving average, {window} steps)")
        if len(runs) > 1:
            ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_param_counts(reports: Mapping[str, ParamReport], path: str | Path) -> Path:
    """Stacked bars of parameter counts (millions) per component."""
    path = Path(path)
    labels = list(reports)
    components = ["embeddings", "attention", "ffn", "blstm", "projection", "layer_norm", "heads"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(labels) + 2), 3.5))
        bottom = [0.0] * len(labels)
        for comp in components:
            heights = [_component_total(reports[k], comp) / 1e6 for k in labels]
            if not any(heights):
                continue
            ax.bar(labels, heights, bottom=bottom, label=comp)
            bottom = [b + h for b, h in zip(bottom, heights)]
        for i, total in enumerate(bottom):
            ax.text(i, total, f"{total:.1f}M", ha="center", va="bottom")
        ax.set_ylabel("parameters (millions)")
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def _component_total(report: ParamReport, component: str) -> int:
    for name, value in report.rows():
        if name == component:
            return value
    return 0


def plot_task_loss(records, path: str | Path, window: int = 20) -> Path:
    """Fine-tuning loss per step, with epoch boundaries marked."""
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.5))
        steps = [r.step for r in records]
        ax.plot(steps, smooth([r.loss for r in records], window), linewidth=1.2)
        for prev, cur in zip(records, records[1:]):
            if cur.epoch != prev.epoch:
                ax.axvline(cur.step, color="0.6", linestyle=":", linewidth=1)
        ax.set_xlabel("fine-tuning step")
        ax.set_ylabel(f"loss (moving average, {window} steps)")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
