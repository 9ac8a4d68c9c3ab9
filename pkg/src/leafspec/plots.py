"""File-based plot emission: training curves, confusion heatmaps, metric bars,
and prediction overlays."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .labels import BACKGROUND, CLASS_COLORS, CLASS_NAMES, ClassLabel
from .metrics import ConfusionResult, MetricReport
from .spectral import MultiSpectralImage, SemanticMask, extract_rgb


def plot_history(history: list[dict], path: str | Path) -> None:
    """Six panels: the three loss components, precision, recall, mAP@0.5."""
    panels = [
        ("box_loss", "box loss"),
        ("seg_loss", "segmentation loss"),
        ("cls_loss", "class loss"),
        ("precision", "precision"),
        ("recall", "recall"),
        ("map50", "mAP@0.5"),
    ]
    epochs = [row["epoch"] for row in history]
    fig, axes = plt.subplots(2, 3, figsize=(12, 6))
    for ax, (key, title) in zip(axes.ravel(), panels):
        ax.plot(epochs, [row[key] for row in history], lw=1.2)
        ax.set_title(title)
        ax.set_xlabel("epoch")
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_confusion(result: ConfusionResult, path: str | Path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(result.matrix, vmin=0, vmax=1, cmap="Blues")
    names = [CLASS_NAMES[c] for c in ClassLabel]
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("ground truth")
    ax.set_ylabel("prediction")
    if title:
        ax.set_title(title)
    for r in range(result.matrix.shape[0]):
        for c in range(result.matrix.shape[1]):
            v = result.matrix[r, c]
            ax.text(c, r, f"{v:.2f}", ha="center", va="center",
                    color="white" if v > 0.6 else "black", fontsize=9)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_metric_bars(reports: dict[str, MetricReport], path: str | Path) -> None:
    """Grouped per-class bars for precision, recall, and mAP-relevant scores."""
    metrics = [("precision", lambda m: m.precision), ("recall", lambda m: m.recall),
               ("iou", lambda m: m.iou), ("dice", lambda m: m.dice)]
    names = [CLASS_NAMES[c] for c in ClassLabel]
    x = np.arange(len(names))
    width = 0.8 / max(len(reports), 1)
    fig, axes = plt.subplots(1, len(metrics), figsize=(4 * len(metrics), 3.5))
    for ax, (title, getter) in zip(np.atleast_1d(axes), metrics):
        for i, (label, rep) in enumerate(reports.items()):
            vals = [getter(rep.per_class[c]) for c in ClassLabel]
            ax.bar(x + i * width, vals, width, label=label)
        ax.set_xticks(x + width * (len(reports) - 1) / 2, names, rotation=30, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_title(title)
        ax.grid(axis="y", alpha=0.3)
    np.atleast_1d(axes)[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def rgb_display(img: MultiSpectralImage) -> np.ndarray:
    """[H, W, 3] uint8 view of the 620/530/470 bands, contrast-stretched."""
    rgb = extract_rgb(img)  # [3, H, W], (R, G, B)
    hi = max(float(rgb.max()), 1e-6)
    return (np.clip(rgb / hi, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)


def _mask_boundaries(labels: np.ndarray) -> np.ndarray:
    """Boolean map of pixels whose 4-neighborhood crosses a class change."""
    edges = np.zeros_like(labels, dtype=bool)
    edges[:-1, :] |= labels[:-1, :] != labels[1:, :]
    edges[1:, :] |= labels[1:, :] != labels[:-1, :]
    edges[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    edges[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    return edges


def overlay_mask(base: np.ndarray, mask: SemanticMask, fill_alpha: float = 0.25) -> np.ndarray:
    """Blend class colours over an [H, W, 3] uint8 image, with hard contours."""
    out = base.astype(np.float64)
    labels = mask.labels
    edges = _mask_boundaries(labels)
    for cls in ClassLabel:
        sel = labels == int(cls)
        if not sel.any():
            continue
        color = np.asarray(CLASS_COLORS[cls], dtype=np.float64)
        out[sel] = (1 - fill_alpha) * out[sel] + fill_alpha * color
        out[sel & edges] = color
    return np.clip(out, 0, 255).astype(np.uint8)


def save_overlay(img: MultiSpectralImage, mask: SemanticMask, path: str | Path) -> None:
    from PIL import Image

    Image.fromarray(overlay_mask(rgb_display(img), mask)).save(path)


def save_panel(
    img: MultiSpectralImage,
    masks: list[tuple[str, SemanticMask]],
    path: str | Path,
) -> None:
    """Side-by-side overlay panels (e.g. ground truth / proposed / baseline)."""
    base = rgb_display(img)
    fig, axes = plt.subplots(1, len(masks), figsize=(4 * len(masks), 4))
    for ax, (title, mask) in zip(np.atleast_1d(axes), masks):
        ax.imshow(overlay_mask(base, mask))
        ax.set_title(title)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
