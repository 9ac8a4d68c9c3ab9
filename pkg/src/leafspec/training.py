"""Training loop and checkpoint evaluation.

Defaults follow the reference recipe (SGD, momentum 0.99, lr 1e-4, batch 4,
500 epochs, flip/rotate/jitter augmentation); every field is overridable and
desk-scale runs typically shrink epochs and image size.  Each epoch logs the
three loss components plus pixel precision/recall and mAP@0.5 on the
validation split; the checkpoint with the best validation mAP is retained.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentConfig, augment
from .data import PlateDataset, SampleTargets
from .labels import ClassLabel
from .losses import LossError, semantic_batch_target, total_loss
from .metrics import MetricReport, semantic_report, write_confusion_csv, write_report_csv
from .model.checkpoint import Checkpoint
from .model.config import ModelConfig
from .model.network import SegmentationNet
from .model.postprocess import compose_instance_masks, semantic_from_scores

HISTORY_COLUMNS = ("epoch", "box_loss", "seg_loss", "cls_loss", "precision", "recall", "map50")


@dataclass
class TrainConfig:
    epochs: int = 500
    lr: float = 1e-4
    momentum: float = 0.99
    optimizer: str = "sgd"
    batch_size: int = 4
    augmentations: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    class_weighting: bool = False  # inverse-frequency positives in the semantic term
    eval_conf_thresh: float = 0.25
    eval_nms_iou: float = 0.45

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer.lower() != "sgd":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")


def _batch_tensors(dataset: PlateDataset, ids: list[str], channels: int,
                   rng: np.random.Generator | None, aug: AugmentConfig | None):
    """Load a batch; when rng is given, apply a per-sample augmentation."""
    images, sem_labels, boxes, classes, inst_masks = [], [], [], [], []
    for sid in ids:
        img = dataset.image_pixels(sid, channels)
        mask = dataset.mask(sid).labels
        t = dataset.targets(sid)
        masks = t.instance_masks
        if rng is not None:
            img, mask, masks = augment(img, mask, rng, aug, extra_masks=masks)
            t = _retarget(masks, t.classes)
            masks = t.instance_masks
        images.append(torch.from_numpy(np.ascontiguousarray(img)))
        sem_labels.append(mask)
        boxes.append(t.boxes_xywh)
        classes.append(t.classes)
        inst_masks.append(masks)
    batch = torch.stack(images)
    targets = {
        "boxes": boxes,
        "classes": classes,
        "instance_masks": inst_masks,
        "semantic": semantic_batch_target(sem_labels, len(ClassLabel)),
    }
    return batch, targets


def inverse_frequency_weights(dataset: PlateDataset, ids: list[str],
                              n_classes: int, cap: float = 50.0) -> torch.Tensor:
    """Positive-pixel weight per class: total pixels / (n_classes * class pixels),
    clipped to [1, cap] so rare classes are boosted but never dominate."""
    counts = np.zeros(n_classes, dtype=np.float64)
    total = 0
    for sid in ids:
        labels = dataset.mask(sid).labels
        total += labels.size
        for c in range(n_classes):
            counts[c] += np.count_nonzero(labels == c)
    weights = total / (n_classes * np.maximum(counts, 1.0))
    return torch.from_numpy(np.clip(weights, 1.0, cap)).float()


def _retarget(masks: np.ndarray, classes: np.ndarray) -> SampleTargets:
    """Recompute boxes from (already transformed) instance masks."""
    keep_boxes, keep_classes, keep_masks = [], [], []
    for m, c in zip(masks, classes):
        rows, cols = np.nonzero(m)
        if len(rows) == 0:
            continue
        x0, x1 = cols.min(), cols.max() + 1
        y0, y1 = rows.min(), rows.max() + 1
        keep_boxes.append([(x0 + x1) / 2.0, (y0 + y1) / 2.0, float(x1 - x0), float(y1 - y0)])
        keep_classes.append(c)
        keep_masks.append(m)
    if not keep_boxes:
        h, w = masks.shape[-2:] if masks.ndim == 3 else (0, 0)
        return SampleTargets(np.zeros((0, 4)), np.zeros(0, dtype=np.int64),
                             np.zeros((0, h, w), dtype=bool))
    return SampleTargets(np.asarray(keep_boxes), np.asarray(keep_classes, dtype=np.int64),
                         np.stack(keep_masks))


@torch.no_grad()
def _epoch_metrics(model: SegmentationNet, dataset: PlateDataset, ids: list[str],
                   conf_thresh: float, nms_iou: float):
    """Macro pixel precision/recall plus mAP@0.5 over a split."""
    model.eval()
    pred_masks, gt_masks, inst_pred, inst_gt = [], [], [], []
    for sid in ids:
        x = torch.from_numpy(dataset.image_pixels(sid, model.cfg.in_channels))
        out = model(x.unsqueeze(0))
        thresholded, _ = semantic_from_scores(out.semantic_map)
        pred_masks.append(thresholded)
        gt_masks.append(dataset.mask(sid))
        inst_pred.append(compose_instance_masks(out, model.cfg, conf_thresh, nms_iou))
        t = dataset.targets(sid)
        inst_gt.append(
            [(ClassLabel(c), m) for c, m in zip(t.classes, t.instance_masks)]
        )
    report = semantic_report(pred_masks, gt_masks, inst_pred, inst_gt)
    mean = report.mean
    model.train()
    return mean.precision, mean.recall, report.map50


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: PlateDataset,
    train_ids: list[str],
    val_ids: list[str] | None = None,
    out_dir: str | Path | None = None,
    log_every: int = 0,
) -> tuple[Checkpoint, list[dict]]:
    """Train a model; returns the best-by-validation-mAP checkpoint and the
    per-epoch history rows.

    Deterministic for a fixed seed on fixed hardware.  On divergence
    (non-finite loss) training aborts and the last finished epoch's weights
    are returned.
    """
    if not train_ids:
        raise ValueError("training split is empty")
    metric_ids = val_ids if val_ids else train_ids

    torch.manual_seed(train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    model = SegmentationNet(model_cfg)
    model.train()
    optimizer = torch.optim.SGD(model.parameters(), lr=train_cfg.lr,
                                momentum=train_cfg.momentum)
    pos_weight = None
    if train_cfg.class_weighting:
        pos_weight = inverse_frequency_weights(dataset, train_ids, model_cfg.n_classes)

    history: list[dict] = []
    best_map, best_state, best_epoch = -1.0, copy.deepcopy(model.state_dict()), 0
    last_good = copy.deepcopy(model.state_dict())
    diverged = False

    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(train_ids))
        sums = {"box": 0.0, "seg": 0.0, "cls": 0.0, "obj": 0.0, "total": 0.0}
        n_batches = 0
        try:
            for start in range(0, len(order), train_cfg.batch_size):
                ids = [train_ids[i] for i in order[start : start + train_cfg.batch_size]]
                batch, targets = _batch_tensors(
                    dataset, ids, model_cfg.in_channels, rng, train_cfg.augmentations
                )
                out = model(batch)
                loss, comps = total_loss(out, targets, model_cfg,
                                         class_pos_weight=pos_weight)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                for k in sums:
                    sums[k] += comps[k]
                n_batches += 1
        except LossError:
            diverged = True
            model.load_state_dict(last_good)
            break

        precision, recall, map50 = _epoch_metrics(
            model, dataset, metric_ids, train_cfg.eval_conf_thresh, train_cfg.eval_nms_iou
        )
        row = {
            "epoch": epoch,
            "box_loss": sums["box"] / n_batches,
            "seg_loss": sums["seg"] / n_batches,
            "cls_loss": sums["cls"] / n_batches,
            "precision": precision,
            "recall": recall,
            "map50": map50,
            "obj_loss": sums["obj"] / n_batches,
            "total_loss": sums["total"] / n_batches,
        }
        history.append(row)
        if log_every and epoch % log_every == 0:
            print(
                f"epoch {epoch:4d}  total {row['total_loss']:.4f}  "
                f"seg {row['seg_loss']:.4f}  P {precision:.3f}  R {recall:.3f}  "
                f"mAP50 {map50:.3f}"
            )
        last_good = copy.deepcopy(model.state_dict())
        if map50 >= best_map:
            best_map, best_state, best_epoch = map50, copy.deepcopy(model.state_dict()), epoch

    model.load_state_dict(best_state if not diverged else last_good)
    model.eval()
    snapshot = history[best_epoch - 1] if history and not diverged else {}
    ckpt = Checkpoint.from_model(
        model,
        epoch=best_epoch if not diverged else len(history),
        metrics={k: snapshot.get(k) for k in ("precision", "recall", "map50")}
        | {"diverged": diverged},
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_history_csv(history, out_dir / "history.csv")
    return ckpt, history


def write_history_csv(history: list[dict], path: str | Path) -> None:
    lines = [",".join(HISTORY_COLUMNS)]
    for row in history:
        lines.append(
            ",".join(
                str(row["epoch"]) if c == "epoch" else f"{row[c]:.6f}"
                for c in HISTORY_COLUMNS
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def evaluate(
    ckpt: Checkpoint,
    dataset: PlateDataset,
    ids: list[str],
    conf_thresh: float = 0.25,
    nms_iou: float = 0.45,
    out_dir: str | Path | None = None,
) -> MetricReport:
    """Score a checkpoint on a split: per-class IoU/Dice/precision/recall
    (pixel counts pooled over the split), mAP@0.5, and the column-normalized
    confusion matrix (computed from dense class assignments)."""
    if not ids:
        raise ValueError("evaluation split is empty")
    model = ckpt.build_model()
    pred_masks, argmax_masks, gt_masks, inst_pred, inst_gt = [], [], [], [], []
    with torch.no_grad():
        for sid in ids:
            x = torch.from_numpy(dataset.image_pixels(sid, model.cfg.in_channels))
            out = model(x.unsqueeze(0))
            thresholded, argmax = semantic_from_scores(out.semantic_map)
            pred_masks.append(thresholded)
            argmax_masks.append(argmax)
            gt_masks.append(dataset.mask(sid))
            inst_pred.append(compose_instance_masks(out, model.cfg, conf_thresh, nms_iou))
            t = dataset.targets(sid)
            inst_gt.append([(ClassLabel(c), m) for c, m in zip(t.classes, t.instance_masks)])
    report = semantic_report(pred_masks, gt_masks, inst_pred, inst_gt)
    from .metrics import confusion_matrix

    report.confusion = confusion_matrix(argmax_masks, gt_masks)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_report_csv(report, out_dir / "report.csv")
        write_confusion_csv(report.confusion, out_dir / "confusion.csv")
    return report


def oracle_report(dataset: PlateDataset, ids: list[str]) -> MetricReport:
    """Score the ground truth against itself (pipeline sanity check)."""
    gt_masks = [dataset.mask(sid) for sid in ids]
    inst = []
    for sid in ids:
        t = dataset.targets(sid)
        inst.append([(ClassLabel(c), m) for c, m in zip(t.classes, t.instance_masks)])
    inst_scored = [[(c, 1.0, m) for c, m in per] for per in inst]
    return semantic_report(gt_masks, gt_masks, inst_scored, inst)
