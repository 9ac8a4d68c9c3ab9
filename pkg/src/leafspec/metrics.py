"""Segmentation metrics: IoU, Dice, precision/recall, confusion matrix, mAP.

Binary-mask metrics use the conventions: both-empty comparisons score 1.0,
and precision (recall) is 1.0 when the prediction (ground truth) is empty.
Per-class dataset metrics pool pixel counts over the whole split before
dividing.  Reported values are rounded with numpy's scale-then-round-half-even
(``np.round(x, 2)``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .labels import BACKGROUND, CLASS_NAMES, ClassLabel, N_CLASSES
from .spectral import SemanticMask


def _as_bool(mask: np.ndarray) -> np.ndarray:
    return np.asarray(mask).astype(bool)


def _check_shapes(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """|pred ∩ gt| / |pred ∪ gt|; 1.0 if both empty, 0.0 if exactly one is."""
    pred, gt = _as_bool(pred), _as_bool(gt)
    _check_shapes(pred, gt)
    union = int(np.count_nonzero(pred | gt))
    if union == 0:
        return 1.0
    inter = int(np.count_nonzero(pred & gt))
    return inter / union


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    """2|pred ∩ gt| / (|pred| + |gt|); 1.0 if both empty."""
    pred, gt = _as_bool(pred), _as_bool(gt)
    _check_shapes(pred, gt)
    total = int(np.count_nonzero(pred)) + int(np.count_nonzero(gt))
    if total == 0:
        return 1.0
    inter = int(np.count_nonzero(pred & gt))
    return 2.0 * inter / total


def precision_recall(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """Pixelwise (precision, recall) with 0/0 -> 1.0 conventions."""
    pred, gt = _as_bool(pred), _as_bool(gt)
    _check_shapes(pred, gt)
    tp = int(np.count_nonzero(pred & gt))
    n_pred = int(np.count_nonzero(pred))
    n_gt = int(np.count_nonzero(gt))
    precision = tp / n_pred if n_pred else 1.0
    recall = tp / n_gt if n_gt else 1.0
    return precision, recall


@dataclass
class ConfusionResult:
    matrix: np.ndarray  # [4, 4] column-normalized; columns = ground truth
    absent_classes: list[int] = field(default_factory=list)  # zero columns
    unclassified: np.ndarray = field(default_factory=lambda: np.zeros(N_CLASSES))


def confusion_matrix(
    pred_masks: list[SemanticMask | np.ndarray], gt_masks: list[SemanticMask | np.ndarray]
) -> ConfusionResult:
    """Column-normalized confusion over tissue pixels.

    Entry (r, c) is the fraction of ground-truth class-c pixels predicted as
    class r; columns sum to 1.  Background (255) ground-truth pixels are
    excluded.  If a prediction leaves some tissue pixels unassigned
    (predicted 255), columns normalize over the assigned pixels and the
    dropped fraction is reported in ``unclassified``; with total predictions
    the matrix is exactly the per-column prediction distribution.
    """
    if len(pred_masks) != len(gt_masks):
        raise ValueError("prediction and ground-truth lists differ in length")
    counts = np.zeros((N_CLASSES + 1, N_CLASSES), dtype=np.int64)  # extra row: pred background
    for pm, gm in zip(pred_masks, gt_masks):
        p = pm.labels if isinstance(pm, SemanticMask) else np.asarray(pm)
        g = gm.labels if isinstance(gm, SemanticMask) else np.asarray(gm)
        _check_shapes(p, g)
        tissue = g != BACKGROUND
        p, g = p[tissue].astype(np.int64), g[tissue].astype(np.int64)
        p = np.where(p == BACKGROUND, N_CLASSES, p)
        np.add.at(counts, (p, g), 1)

    matrix = np.zeros((N_CLASSES, N_CLASSES))
    unclassified = np.zeros(N_CLASSES)
    absent = []
    col_tot = counts.sum(axis=0)
    assigned = counts[:N_CLASSES].sum(axis=0)
    for c in range(N_CLASSES):
        if col_tot[c] == 0:
            absent.append(c)
            continue
        unclassified[c] = counts[N_CLASSES, c] / col_tot[c]
        if assigned[c] > 0:
            matrix[:, c] = counts[:N_CLASSES, c] / assigned[c]
    return ConfusionResult(matrix=matrix, absent_classes=absent, unclassified=unclassified)


def average_precision(
    scored_hits: list[tuple[float, bool]], n_gt: int, n_points: int = 101
) -> float:
    """Interpolated AP from (score, is_true_positive) pairs.

    Detections are ranked by score; precision at each recall level r in
    {0, 1/(n-1), ..., 1} is the maximum precision at recall >= r.
    """
    if n_gt == 0:
        raise ValueError("average precision undefined without ground truth")
    if not scored_hits:
        return 0.0
    order = sorted(range(len(scored_hits)), key=lambda i: -scored_hits[i][0])
    tp = fp = 0
    precisions, recalls = [], []
    for i in order:
        if scored_hits[i][1]:
            tp += 1
        else:
            fp += 1
        precisions.append(tp / (tp + fp))
        recalls.append(tp / n_gt)
    ap = 0.0
    for r in np.linspace(0.0, 1.0, n_points):
        candidates = [p for p, rec in zip(precisions, recalls) if rec >= r]
        ap += max(candidates) if candidates else 0.0
    return ap / n_points


def map50(
    instances_pred: list[list[tuple[ClassLabel, float, np.ndarray]]],
    instances_gt: list[list[tuple[ClassLabel, np.ndarray]]],
    iou_thresh: float = 0.5,
) -> float:
    """Mean AP over classes at mask-IoU >= ``iou_thresh``.

    ``instances_pred[i]`` holds (class, score, binary mask) detections for
    image i; ``instances_gt[i]`` holds (class, binary mask) instances.
    Matching is greedy in score order, one match per ground-truth instance.
    Classes absent from the ground truth are excluded from the mean.
    """
    if len(instances_pred) != len(instances_gt):
        raise ValueError("prediction and ground-truth lists differ in length")
    aps = []
    for cls in ClassLabel:
        hits: list[tuple[float, bool]] = []
        n_gt = 0
        for preds, gts in zip(instances_pred, instances_gt):
            gt_masks = [m for c, m in gts if c == cls]
            n_gt += len(gt_masks)
            matched = [False] * len(gt_masks)
            dets = sorted(
                ((s, m) for c, s, m in preds if c == cls), key=lambda t: -t[0]
            )
            for score, mask in dets:
                best, best_iou = -1, iou_thresh
                for j, gm in enumerate(gt_masks):
                    if matched[j]:
                        continue
                    v = iou(mask, gm)
                    if v >= best_iou:
                        best, best_iou = j, v
                if best >= 0:
                    matched[best] = True
                    hits.append((score, True))
                else:
                    hits.append((score, False))
        if n_gt == 0:
            continue
        aps.append(average_precision(hits, n_gt))
    return float(np.mean(aps)) if aps else 0.0


@dataclass
class ClassMetrics:
    iou: float
    dice: float
    precision: float
    recall: float


@dataclass
class MetricReport:
    per_class: dict[ClassLabel, ClassMetrics]
    map50: float
    confusion: ConfusionResult
    history: list[dict] = field(default_factory=list)

    @property
    def mean(self) -> ClassMetrics:
        rows = list(self.per_class.values())
        return ClassMetrics(
            iou=float(np.mean([r.iou for r in rows])),
            dice=float(np.mean([r.dice for r in rows])),
            precision=float(np.mean([r.precision for r in rows])),
            recall=float(np.mean([r.recall for r in rows])),
        )

    def rounded_mean_iou(self) -> float:
        return float(np.round(self.mean.iou, 2))

    def rounded_mean_dice(self) -> float:
        return float(np.round(self.mean.dice, 2))


def semantic_report(
    pred_masks: list[SemanticMask],
    gt_masks: list[SemanticMask],
    instances_pred=None,
    instances_gt=None,
) -> MetricReport:
    """Per-class metrics from pooled pixel counts over a whole split."""
    per_class = {}
    for cls in ClassLabel:
        tp = n_pred = n_gt = union = 0
        for pm, gm in zip(pred_masks, gt_masks):
            p = pm.labels == int(cls)
            g = gm.labels == int(cls)
            tp += int(np.count_nonzero(p & g))
            union += int(np.count_nonzero(p | g))
            n_pred += int(np.count_nonzero(p))
            n_gt += int(np.count_nonzero(g))
        per_class[cls] = ClassMetrics(
            iou=tp / union if union else 1.0,
            dice=2 * tp / (n_pred + n_gt) if (n_pred + n_gt) else 1.0,
            precision=tp / n_pred if n_pred else 1.0,
            recall=tp / n_gt if n_gt else 1.0,
        )
    mp = 0.0
    if instances_pred is not None and instances_gt is not None:
        mp = map50(instances_pred, instances_gt)
    return MetricReport(
        per_class=per_class,
        map50=mp,
        confusion=confusion_matrix(pred_masks, gt_masks),
    )


def write_report_csv(report: MetricReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "iou", "dice", "precision", "recall"])
        for cls in ClassLabel:
            m = report.per_class[cls]
            writer.writerow(
                [CLASS_NAMES[cls], f"{m.iou:.6f}", f"{m.dice:.6f}",
                 f"{m.precision:.6f}", f"{m.recall:.6f}"]
            )
        mean = report.mean
        writer.writerow(
            ["mean", f"{mean.iou:.6f}", f"{mean.dice:.6f}",
             f"{mean.precision:.6f}", f"{mean.recall:.6f}"]
        )


def write_confusion_csv(result: ConfusionResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + [CLASS_NAMES[c] + "_gt" for c in ClassLabel])
        for r, cls in enumerate(ClassLabel):
            writer.writerow(
                [CLASS_NAMES[cls] + "_pred"] + [f"{v:.6f}" for v in result.matrix[r]]
            )
