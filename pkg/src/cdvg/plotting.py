"""Report figures rendered to files (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import THRESHOLDS, MetricsReport  # noqa: E402


def plot_eval_report(report: MetricsReport, path: str | Path, title: str = "") -> Path:
    """Pr@t curves, overall and per domain, with meanIoU in the legend."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    series = [("all", report)] + sorted(report.domains.items())
    for name, rep in series:
        ax.plot(THRESHOLDS, [rep.pr[t] for t in THRESHOLDS], marker="o",
                label=f"{name} (n={rep.n}, mIoU {rep.mean_iou:.1f})")
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("Pr@t (%)")
    ax.set_ylim(0, 100)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_training_log(rows: list[dict], path: str | Path) -> Path:
    """Weighted total and per-component losses against step."""
    steps = [r["step"] for r in rows if "step" in r and "loss_total" in r]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    keys = [k for k in rows[0] if k.startswith("loss_")] if rows else []
    for k in keys:
        ax.plot(steps, [r[k] for r in rows if "loss_total" in r], label=k[5:], lw=1)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
