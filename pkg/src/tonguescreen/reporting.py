"""Rendering of evaluation artifacts: metric tables, confusion grids, ROC
exports, comparison bars, training-curve plots, and prediction overlays."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .metrics import AggregateReport, ConfusionMatrix, RocCurve
from .taxonomy import TaskKind
from .trainer import TrainingCurve


def confusion_to_text(cm: ConfusionMatrix) -> str:
    """Text grid with output classes on rows and target classes on columns."""
    width = max(12, max(len(c) for c in cm.classes) + 2)
    lines = ["target classes on columns, output classes on rows"]
    header = " " * width + "".join(f"{c:>{width}}" for c in cm.classes)
    lines.append(header)
    for i, cls in enumerate(cm.classes):
        row = f"{cls:<{width}}" + "".join(
            f"{int(cm.counts[i, j]):>{width}}" for j in range(len(cm.classes))
        )
        lines.append(row)
    return "\n".join(lines)


def _fmt(mean: float | None, std: float | None = None) -> str:
    if mean is None:
        return "-"
    if std is None:
        return f"{mean:.2f}"
    return f"{mean:.2f} ± {std:.2f}"


def aggregate_table(aggregates: list[AggregateReport], task_kind: str) -> str:
    """Render aggregate rows in the standard comparison layout.

    Binary rows carry accuracy (with std), sensitivity, specificity, and
    training time; multiclass rows carry accuracy and training time.
    """
    binary = TaskKind(task_kind) == TaskKind.BINARY
    if binary:
        header = f"{'Model':<14}{'A_CC':<16}{'S_ENS':<10}{'S_PEC':<10}{'T_SEC (sec)':<12}"
    else:
        header = f"{'Model':<14}{'A_CC':<16}{'T_SEC (sec)':<12}"
    lines = [header, "-" * len(header)]
    for agg in aggregates:
        std = agg.std or {}
        acc = _fmt(agg.mean.get("accuracy"), std.get("accuracy"))
        t_sec = agg.mean.get("train_seconds")
        t_txt = f"{t_sec:.2f}" if t_sec is not None else "-"
        if binary:
            lines.append(
                f"{agg.backbone:<14}{acc:<16}"
                f"{_fmt(agg.mean.get('sensitivity')):<10}"
                f"{_fmt(agg.mean.get('specificity')):<10}"
                f"{t_txt:<12}"
            )
        else:
            lines.append(f"{agg.backbone:<14}{acc:<16}{t_txt:<12}")
    return "\n".join(lines)


def roc_to_csv(curve: RocCurve, path: Path | str) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("fpr,tpr\n")
        for x, y in curve.points:
            fh.write(f"{x!r},{y!r}\n")


def plot_roc(curve: RocCurve, path: Path | str, title: str = "ROC") -> None:
    xs = [p[0] for p in curve.points]
    ys = [p[1] for p in curve.points]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(xs, ys, color="red", lw=2)
    ax.fill_between(xs, ys, color="green", alpha=0.2)
    ax.plot([0, 1], [0, 1], ls="--", color="grey", lw=1)
    op = curve.operating_point
    ax.plot([op[0]], [op[1]], "ko", ms=5)
    ax.set_xlabel("1 - specificity")
    ax.set_ylabel("sensitivity")
    ax.set_title(f"{title} (AUC = {curve.auc:.4f})")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_accuracy_bars(
    accuracies: dict[str, float], path: Path | str, title: str = "Accuracy"
) -> None:
    """Comparison bar chart, e.g. per-model accuracy with the ensemble bar."""
    names = list(accuracies)
    values = [accuracies[n] * 100 for n in names]
    fig, ax = plt.subplots(figsize=(max(4, len(names) * 1.2), 4))
    bars = ax.bar(names, values, color="steelblue")
    if names and names[-1].lower().startswith("ensemble"):
        bars[-1].set_color("darkorange")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 105)
    ax.set_title(title)
    for bar, v in zip(bars, values):
        ax.text(bar.get_x() + bar.get_width() / 2, v + 1, f"{v:.0f}",
                ha="center", fontsize=9)
    plt.setp(ax.get_xticklabels(), rotation=30, ha="right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training_curve(curve: TrainingCurve, path: Path | str,
                        title: str = "Training curve") -> None:
    """Accuracy on top, loss below; minibatch traces with validation checkpoints."""
    fig, (ax_acc, ax_loss) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    it = [p.iteration for p in curve.minibatch]
    ax_acc.plot(it, [p.accuracy * 100 for p in curve.minibatch],
                color="lightblue", lw=1, label="minibatch")
    window = max(1, len(it) // 15)
    smooth_acc = np.convolve([p.accuracy * 100 for p in curve.minibatch],
                             np.ones(window) / window, mode="valid")
    ax_acc.plot(it[window - 1:], smooth_acc, color="blue", lw=1.5, label="smoothed")
    ax_loss.plot(it, [p.loss for p in curve.minibatch],
                 color="navajowhite", lw=1, label="minibatch")
    smooth_loss = np.convolve([p.loss for p in curve.minibatch],
                              np.ones(window) / window, mode="valid")
    ax_loss.plot(it[window - 1:], smooth_loss, color="darkorange", lw=1.5,
                 label="smoothed")
    if curve.validation:
        vit = [p.iteration for p in curve.validation]
        ax_acc.plot(vit, [p.accuracy * 100 for p in curve.validation],
                    "k--o", ms=3, lw=1, label="validation")
        ax_loss.plot(vit, [p.loss for p in curve.validation],
                     "k--o", ms=3, lw=1, label="validation")
    ax_acc.set_ylabel("accuracy (%)")
    ax_loss.set_ylabel("loss")
    ax_loss.set_xlabel("iteration")
    ax_acc.legend(fontsize=8)
    ax_loss.legend(fontsize=8)
    ax_acc.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def overlay_prediction(
    image: Image.Image, label: str, score: float
) -> Image.Image:
    """Copy of the image with the predicted class and score rendered onto it."""
    out = image.convert("RGB").copy()
    draw = ImageDraw.Draw(out)
    size = max(14, out.width // 16)
    try:
        font = ImageFont.load_default(size=size)
    except TypeError:  # older Pillow
        font = ImageFont.load_default()
    text = f"{label}  {score:.2f}"
    box = draw.textbbox((0, 0), text, font=font)
    pad = max(2, size // 5)
    draw.rectangle(
        (0, 0, box[2] + 2 * pad, box[3] + 2 * pad), fill=(0, 0, 0)
    )
    draw.text((pad, pad), text, fill=(255, 255, 0), font=font)
    return out
