"""Run outputs: delimited files, key=value metrics, and PNG figures.

Metrics and CSV files are byte-deterministic for a given run (no
timestamps); figures are rendered with the Agg backend so everything
works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .pipeline import EvalReport, TrainingLog


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def write_metrics(path, items: dict) -> None:
    """key=value lines, insertion order; floats at round-trip precision."""
    with open(path, "w") as fh:
        for key, value in items.items():
            fh.write(f"{key}={_fmt(value)}\n")


def write_confusion_csv(path, confusion: np.ndarray) -> None:
    n = confusion.shape[0]
    with open(path, "w") as fh:
        fh.write(",".join(["true_label"] + [f"pred_{j}" for j in range(n)]) + "\n")
        for i in range(n):
            fh.write(",".join([str(i)] + [str(int(v)) for v in confusion[i]]) + "\n")


def report_metrics(report: EvalReport, extra: dict | None = None) -> dict:
    items = dict(extra or {})
    items["accuracy"] = report.accuracy
    for k, acc in enumerate(report.per_class_accuracy):
        items[f"class_{k}_accuracy"] = float(acc)
    return items


def save_confusion_figure(confusion: np.ndarray, path) -> None:
    n = confusion.shape[0]
    fig, ax = plt.subplots(figsize=(5.5, 4.8))
    im = ax.imshow(confusion, cmap="Blues")
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_xticks(range(n))
    ax.set_yticks(range(n))
    if n <= 12:
        threshold = confusion.max() / 2 if confusion.max() else 0.5
        for i in range(n):
            for j in range(n):
                ax.text(j, i, str(int(confusion[i, j])), ha="center", va="center",
                        fontsize=8, color="white" if confusion[i, j] > threshold else "black")
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_curves(log: TrainingLog, path) -> None:
    epochs = np.arange(1, len(log.epoch_total) + 1)
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.plot(epochs, log.epoch_total, label="total", lw=1.6)
    if any(v != 0.0 for v in log.epoch_distance):
        ax.plot(epochs, log.epoch_distance, label="distance", lw=1.0, alpha=0.8)
        ax.plot(epochs, log.epoch_classification, label="classification", lw=1.0, alpha=0.8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean batch loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_projection_figure(projections: np.ndarray, labels: np.ndarray,
                           prototypes: np.ndarray, path) -> None:
    """2-D scatter of projected windows and prototypes.

    For p > 2 everything is mapped onto the top two principal
    components of the window projections.
    """
    if projections.shape[1] > 2:
        center = projections.mean(axis=0)
        _, _, vt = np.linalg.svd(projections - center, full_matrices=False)
        axes2 = vt[:2].T
        pts = (projections - center) @ axes2
        protos = (prototypes - center) @ axes2
    else:
        pts, protos = projections, prototypes
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    cmap = plt.get_cmap("tab10")
    for k in range(len(prototypes)):
        mask = labels == k
        if mask.any():
            ax.scatter(pts[mask, 0], pts[mask, 1], s=8, alpha=0.5,
                       color=cmap(k % 10), label=f"class {k}")
        ax.scatter(protos[k, 0], protos[k, 1], marker="*", s=220,
                   color=cmap(k % 10), edgecolor="black", linewidths=0.8, zorder=3)
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.legend(frameon=False, fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
