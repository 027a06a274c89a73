"""Optional figures written next to the CSV reports."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import PRCurve  # noqa: E402
from .trainer import RunReport  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated renders byte-stable
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_loss_trace(report: RunReport, path) -> Path:
    """Per-epoch loss terms across pre-training and joint training."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = list(range(len(report.epochs)))
        ax.plot(x, [r.l_s for r in report.epochs], label="L_s")
        lt = [(i, r.l_t) for i, r in enumerate(report.epochs) if r.l_t is not None]
        if lt:
            ax.plot(*zip(*lt), label="L_t")
        ax.plot(x, [r.l_w for r in report.epochs], label="L_w")
        ax.plot(x, [r.l_mmd for r in report.epochs], label="L_MMD")
        ax.plot(x, [r.total for r in report.epochs], "k--", lw=1, label="total")
        n_pre = sum(r.phase == "pretrain" for r in report.epochs)
        if 0 < n_pre < len(x):
            ax.axvline(n_pre - 0.5, color="0.6", lw=0.8)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_yscale("symlog", linthresh=1e-3)
        ax.set_ylim(bottom=0)
        ax.legend(frameon=False, ncol=5, fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def plot_selection(patterns: Sequence[str], mmd_values: Sequence[float], validation, path) -> Path:
    """MMD^2 per sharing pattern, with validation accuracy underneath when known."""
    has_val = validation is not None and any(v is not None for v in validation)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2 if has_val else 1, 1, sharex=True, squeeze=False)
        x = range(len(patterns))
        best = min(range(len(patterns)), key=lambda i: mmd_values[i])
        colors = ["C3" if i == best else "C0" for i in x]
        axes[0, 0].bar(x, mmd_values, color=colors)
        axes[0, 0].set_ylabel("MMD$^2$")
        if has_val:
            vals = [float("nan") if v is None else v for v in validation]
            axes[1, 0].bar(x, vals, color=colors)
            axes[1, 0].set_ylabel("validation accuracy")
            axes[1, 0].set_ylim(0, 1)
        axes[-1, 0].set_xticks(list(x))
        axes[-1, 0].set_xticklabels(patterns, family="monospace", rotation=90 if len(patterns) > 8 else 0)
        axes[-1, 0].set_xlabel("configuration ('+' coupled, '-' shared)")
        fig.tight_layout()
        return _save(fig, path)


def plot_pr_curve(curve: PRCurve, ap: float, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.8))
        ax.step([0.0, *curve.recall], [curve.precision[0], *curve.precision], where="pre")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_title(f"AP = {ap:.3f}")
        fig.tight_layout()
        return _save(fig, path)
