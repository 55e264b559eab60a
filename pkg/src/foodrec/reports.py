"""Report rendering: delimited outputs plus matplotlib figures.

Every report path writes machine-readable data (JSON/CSV/text) and, where it
helps a human, a PNG figure alongside it.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .dataset import ClassStats
from .evaluate import AblationReport, Metrics

# Published headline numbers from the original corpus; shown as context only.
REFERENCE_TOP1 = 0.940
REFERENCE_TOP5 = 0.995


def metrics_table_text(metrics: Metrics, model_name: str = "Mobilenet-v2") -> str:
    top5 = metrics.top_k.get(5)
    top5_text = f"{top5:>16.1%}" if top5 is not None else f"{'-':>16}"
    lines = [
        f"{'':<24}{'Top-1 accuracy':>16}{'Top-5 accuracy':>16}",
        f"{model_name:<24}{metrics.top_k[1]:>16.1%}" + top5_text,
        f"{'published reference*':<24}{REFERENCE_TOP1:>16.1%}{REFERENCE_TOP5:>16.1%}",
        "* original-corpus result; not reproducible on synthetic data",
    ]
    return "\n".join(lines) + "\n"


def save_metrics_json(metrics: Metrics, path):
    Path(path).write_text(json.dumps(metrics.to_json(), sort_keys=True, indent=2) + "\n")


def save_mispredictions_csv(metrics: Metrics, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["path", "true", "predicted", "probability"])
        for row in metrics.mispredictions:
            writer.writerow([row[0], row[1], row[2], f"{row[3]:.6f}"])


def save_confusion_figure(metrics: Metrics, path):
    fig, ax = plt.subplots(figsize=(8, 7))
    im = ax.imshow(metrics.confusion, cmap="viridis")
    ax.set_xlabel("predicted class")
    ax.set_ylabel("true class")
    ax.set_title(f"Confusion matrix (n={metrics.n})")
    n = len(metrics.label_names)
    if n <= 30:
        ax.set_xticks(range(n))
        ax.set_yticks(range(n))
        ax.set_xticklabels(metrics.label_names, rotation=90, fontsize=7)
        ax.set_yticklabels(metrics.label_names, fontsize=7)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_class_distribution_figure(stats: ClassStats, path, threshold: int | None = None):
    labels = sorted(set(stats.original) | set(stats.augmented))
    originals = [stats.original.get(l, 0) for l in labels]
    augmented = [stats.augmented.get(l, 0) for l in labels]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(max(8, len(labels) * 0.45), 5))
    ax.bar(x, originals, label="original")
    if any(augmented):
        ax.bar(x, augmented, bottom=originals, label="augmented")
    if threshold is not None:
        ax.axhline(threshold, color="gray", linestyle="--", linewidth=1, label="threshold")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=90, fontsize=8)
    ax.set_ylabel("samples")
    ax.set_title("Samples per class")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_curve_figure(curve, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(1, len(curve) + 1), curve, marker="o", markersize=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean cross-entropy")
    ax.set_title("Head training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ablation_figure(report: AblationReport, path):
    names = [
        f"{'merged' if r.consolidation else 'unmerged'}\n"
        f"{'aug' if r.augmentation else 'no aug'} ({r.num_classes} cls)"
        for r in report.rows
    ]
    values = [r.top1 for r in report.rows]
    fig, ax = plt.subplots(figsize=(1.8 * max(3, len(names)), 4))
    ax.bar(range(len(names)), values)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, fontsize=8)
    ax.set_ylabel("top-1 accuracy")
    ax.set_ylim(0, 1)
    ax.set_title("Pre-processing ablation")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
