"""Matplotlib figures saved next to the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .train import LOSS_COLUMNS  # noqa: E402


def plot_owta_curve(report, path) -> None:
    """OWTA against the IoU threshold alpha, one line per split."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for split, rows in report.per_alpha.items():
        ax.plot([r["alpha"] for r in rows], [r["OWTA"] for r in rows], marker="o", ms=3,
                label=f"{split} ({report.splits[split]['OWTA']:.3f})")
    ax.set_xlabel("alpha")
    ax.set_ylabel("OWTA")
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_losses(history, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    steps = [r["step"] for r in history]
    for col in LOSS_COLUMNS:
        ax.plot(steps, [r[col] for r in history], label=col, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
