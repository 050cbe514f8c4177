"""PNG figures for evaluation and benchmark reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import RocCurve, TimingReport  # noqa: E402


def plot_roc(roc: RocCurve, path: str | Path, eer_value: float | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(roc.fpr, roc.tpr, lw=1.8, label=f"AUC = {roc.auc:.3f}")
    ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="grey")
    if eer_value is not None:
        ax.plot([eer_value], [1 - eer_value], "o", color="C3", label=f"EER = {eer_value:.3f}")
    ax.set(xlabel="false positive rate", ylabel="true positive rate", xlim=(0, 1), ylim=(0, 1.01))
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_timing(report: TimingReport, path: str | Path) -> Path:
    ms = report.samples * 1e3
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3.2))
    a.plot(np.arange(ms.size), ms, lw=0.8)
    a.axhline(report.median * 1e3, color="C3", lw=1, label=f"median {report.median * 1e3:.2f} ms")
    a.set(xlabel="frame", ylabel="ms per frame")
    a.legend()
    b.hist(ms, bins=40)
    b.set(xlabel="ms per frame", ylabel="frames")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
