"""Training losses: CIoU box regression, objectness/class BCE, and the
segmentation term (per-instance prototype masks plus the dense semantic map).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .labels import BACKGROUND
from .model.config import ModelConfig, STRIDES
from .model.network import ModelOutput

_SCALE_BALANCE = (4.0, 1.0, 0.4)  # objectness weighting per stride
_ANCHOR_RATIO_LIMIT = 4.0


class LossError(RuntimeError):
    pass


@dataclass
class ScaleAssignment:
    """Positive anchor assignments for one detection scale."""

    batch_idx: torch.Tensor  # [P]
    anchor_idx: torch.Tensor  # [P]
    cell_y: torch.Tensor  # [P]
    cell_x: torch.Tensor  # [P]
    target_boxes: torch.Tensor  # [P, 4] xywh pixels
    target_classes: torch.Tensor  # [P]
    instance_idx: torch.Tensor  # [P] index into the flattened gt list


def build_targets(
    boxes_per_image: list[np.ndarray],
    classes_per_image: list[np.ndarray],
    cfg: ModelConfig,
) -> list[ScaleAssignment]:
    """Match ground-truth boxes to anchors and grid cells.

    A box matches an anchor when the width/height ratio stays under 4 in
    both directions.  Each match claims the cell containing the box center
    plus the nearest neighbor cell along each axis (when the center falls in
    that half of the cell), which triples positive samples.
    """
    anchors = cfg.anchors()  # [S, A, 2]
    flat_offset = 0
    per_scale: list[list[tuple]] = [[] for _ in STRIDES]
    for b, (boxes, classes) in enumerate(zip(boxes_per_image, classes_per_image)):
        for g in range(len(boxes)):
            x, y, w, h = boxes[g]
            for s, stride in enumerate(STRIDES):
                grid = cfg.input_size // stride
                for a in range(anchors.shape[1]):
                    aw, ah = anchors[s, a]
                    ratio = max(w / aw, aw / w, h / ah, ah / h)
                    if ratio >= _ANCHOR_RATIO_LIMIT:
                        continue
                    gx, gy = x / stride, y / stride
                    ci, cj = int(gx), int(gy)
                    cells = {(min(max(cj, 0), grid - 1), min(max(ci, 0), grid - 1))}
                    if gx - ci < 0.5 and ci - 1 >= 0:
                        cells.add((min(max(cj, 0), grid - 1), ci - 1))
                    elif gx - ci >= 0.5 and ci + 1 < grid:
                        cells.add((min(max(cj, 0), grid - 1), ci + 1))
                    if gy - cj < 0.5 and cj - 1 >= 0:
                        cells.add((cj - 1, min(max(ci, 0), grid - 1)))
                    elif gy - cj >= 0.5 and cj + 1 < grid:
                        cells.add((cj + 1, min(max(ci, 0), grid - 1)))
                    for (yy, xx) in cells:
                        per_scale[s].append(
                            (b, a, yy, xx, (x, y, w, h), classes[g], flat_offset + g)
                        )
        flat_offset += len(boxes)

    out = []
    for rows in per_scale:
        if rows:
            bi, ai, cy, cx, tb, tc, ii = zip(*rows)
            out.append(
                ScaleAssignment(
                    batch_idx=torch.tensor(bi, dtype=torch.long),
                    anchor_idx=torch.tensor(ai, dtype=torch.long),
                    cell_y=torch.tensor(cy, dtype=torch.long),
                    cell_x=torch.tensor(cx, dtype=torch.long),
                    target_boxes=torch.tensor(tb, dtype=torch.float64),
                    target_classes=torch.tensor(tc, dtype=torch.long),
                    instance_idx=torch.tensor(ii, dtype=torch.long),
                )
            )
        else:
            out.append(
                ScaleAssignment(
                    batch_idx=torch.zeros(0, dtype=torch.long),
                    anchor_idx=torch.zeros(0, dtype=torch.long),
                    cell_y=torch.zeros(0, dtype=torch.long),
                    cell_x=torch.zeros(0, dtype=torch.long),
                    target_boxes=torch.zeros((0, 4)),
                    target_classes=torch.zeros(0, dtype=torch.long),
                    instance_idx=torch.zeros(0, dtype=torch.long),
                )
            )
    return out


def ciou_xywh(pred: torch.Tensor, target: torch.Tensor, eps: float = 1e-7) -> torch.Tensor:
    """Complete IoU between xywh boxes [N, 4] (higher is better, <= 1)."""
    px, py, pw, ph = pred.unbind(-1)
    tx, ty, tw, th = target.unbind(-1)
    p_x0, p_x1 = px - pw / 2, px + pw / 2
    p_y0, p_y1 = py - ph / 2, py + ph / 2
    t_x0, t_x1 = tx - tw / 2, tx + tw / 2
    t_y0, t_y1 = ty - th / 2, ty + th / 2

    iw = (torch.minimum(p_x1, t_x1) - torch.maximum(p_x0, t_x0)).clamp(min=0)
    ih = (torch.minimum(p_y1, t_y1) - torch.maximum(p_y0, t_y0)).clamp(min=0)
    inter = iw * ih
    union = pw * ph + tw * th - inter + eps
    iou = inter / union

    cw = torch.maximum(p_x1, t_x1) - torch.minimum(p_x0, t_x0)
    ch = torch.maximum(p_y1, t_y1) - torch.minimum(p_y0, t_y0)
    c2 = cw**2 + ch**2 + eps
    rho2 = (px - tx) ** 2 + (py - ty) ** 2
    v = (4 / math.pi**2) * (torch.atan(tw / (th + eps)) - torch.atan(pw / (ph + eps))) ** 2
    alpha = v / (1 - iou + v + eps)
    return iou - rho2 / c2 - alpha * v


def semantic_onehot(mask_labels: np.ndarray | torch.Tensor, n_classes: int) -> torch.Tensor:
    """[H, W] class codes (255 = background) -> [n_classes, H, W] in {0, 1}."""
    if isinstance(mask_labels, np.ndarray):
        mask_labels = torch.from_numpy(mask_labels.astype(np.int64))
    onehot = torch.zeros((n_classes,) + tuple(mask_labels.shape))
    for c in range(n_classes):
        onehot[c] = (mask_labels == c).float()
    return onehot


def total_loss(
    out: ModelOutput,
    targets: dict,
    cfg: ModelConfig,
    class_pos_weight: torch.Tensor | None = None,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted sum of box/seg/cls/obj components.

    ``targets`` holds: boxes (list per image of [n, 4] xywh px), classes
    (list of [n]), instance_masks (list of [n, H, W] bool), semantic
    ([B, n_classes, H, W] one-hot tensor).  ``class_pos_weight`` optionally
    up-weights positive pixels per class in the dense semantic term
    (inverse-frequency balancing; off by default).
    """
    dtype = out.semantic_map.dtype
    nc, nm = cfg.n_classes, cfg.mask_proto_channels
    assignments = build_targets(targets["boxes"], targets["classes"], cfg)
    anchors = torch.from_numpy(cfg.anchors()).to(dtype)

    all_masks = [m for masks in targets["instance_masks"] for m in masks]
    all_boxes = np.concatenate(
        [b for b in targets["boxes"] if len(b)] or [np.zeros((0, 4))]
    )

    zero = out.semantic_map.sum() * 0.0
    box_loss, cls_loss, obj_loss = zero.clone(), zero.clone(), zero.clone()
    inst_loss = zero.clone()
    n_box = n_inst = 0

    protos = out.prototypes  # [B, nm, hp, wp]
    hp, wp = protos.shape[-2:]
    stride_p = cfg.input_size // hp

    obj_terms = []
    for s, raw in enumerate(out.detections):
        asn = assignments[s]
        obj_target = torch.zeros_like(raw[..., 4])
        if len(asn.batch_idx):
            sel = (asn.batch_idx, asn.anchor_idx, asn.cell_y, asn.cell_x)
            pred = raw[sel]  # [P, 5+nc+nm]
            # Differentiable box decode, matching inference.
            grid_xy = torch.stack([asn.cell_x, asn.cell_y], dim=-1).to(dtype)
            pxy = (torch.sigmoid(pred[:, 0:2]) * 2.0 - 0.5 + grid_xy) * STRIDES[s]
            pwh = (torch.sigmoid(pred[:, 2:4]) * 2.0) ** 2 * anchors[s][asn.anchor_idx]
            pbox = torch.cat([pxy, pwh], dim=-1)
            tbox = asn.target_boxes.to(dtype)
            ciou = ciou_xywh(pbox, tbox)
            box_loss = box_loss + (1.0 - ciou).sum()
            n_box += len(ciou)

            cls_target = F.one_hot(asn.target_classes, nc).to(dtype)
            cls_loss = cls_loss + F.binary_cross_entropy_with_logits(
                pred[:, 5 : 5 + nc], cls_target, reduction="mean"
            )
            obj_target[sel] = 1.0

            # Per-instance mask composition against the gt polygon mask,
            # cropped to the gt box and normalized by its area.
            coeffs = pred[:, 5 + nc :]
            mask_logits = torch.einsum("pc,bchw->pbhw", coeffs, protos)
            mask_logits = mask_logits[torch.arange(len(coeffs)), asn.batch_idx]
            gt_small, region = _instance_targets(
                asn, all_masks, all_boxes, hp, wp, stride_p, dtype
            )
            bce = F.binary_cross_entropy_with_logits(mask_logits, gt_small, reduction="none")
            per = (bce * region).sum(dim=(1, 2)) / region.sum(dim=(1, 2)).clamp(min=1.0)
            inst_loss = inst_loss + per.sum()
            n_inst += len(per)

        obj_terms.append(
            F.binary_cross_entropy_with_logits(raw[..., 4], obj_target, reduction="mean")
            * _SCALE_BALANCE[s]
        )

    obj_loss = sum(obj_terms) / len(obj_terms)
    if n_box:
        box_loss = box_loss / n_box
        inst_loss = inst_loss / max(n_inst, 1)
        cls_loss = cls_loss / len(STRIDES)

    semantic_target = targets["semantic"].to(dtype)
    pos_weight = None
    if class_pos_weight is not None:
        pos_weight = class_pos_weight.to(dtype).view(1, nc, 1, 1)
    sem_loss = F.binary_cross_entropy_with_logits(
        out.semantic_map, semantic_target, reduction="mean", pos_weight=pos_weight
    )
    seg_loss = inst_loss + sem_loss

    w = cfg.loss_weights
    total = w["box"] * box_loss + w["seg"] * seg_loss + w["cls"] * cls_loss + w["obj"] * obj_loss
    components = {
        "box": float(box_loss.detach()),
        "seg": float(seg_loss.detach()),
        "cls": float(cls_loss.detach()),
        "obj": float(obj_loss.detach()),
        "total": float(total.detach()),
    }
    if not math.isfinite(components["total"]):
        bad = [k for k, v in components.items() if not math.isfinite(v)]
        raise LossError(f"non-finite loss in components {bad}: {components}")
    return total, components


def _instance_targets(asn, all_masks, all_boxes, hp, wp, stride_p, dtype):
    """Downsampled gt instance masks and box-region weights at proto scale."""
    gt, regions = [], []
    for idx in asn.instance_idx.tolist():
        m = torch.from_numpy(np.ascontiguousarray(all_masks[idx])).to(dtype)
        small = F.interpolate(
            m.unsqueeze(0).unsqueeze(0), size=(hp, wp), mode="area"
        ).squeeze()
        gt.append((small > 0.5).to(dtype))
        x, y, w_, h_ = all_boxes[idx]
        c0 = max(int((x - w_ / 2) / stride_p), 0)
        c1 = min(int(np.ceil((x + w_ / 2) / stride_p)), wp)
        r0 = max(int((y - h_ / 2) / stride_p), 0)
        r1 = min(int(np.ceil((y + h_ / 2) / stride_p)), hp)
        region = torch.zeros((hp, wp), dtype=dtype)
        region[r0:r1, c0:c1] = 1.0
        regions.append(region)
    return torch.stack(gt), torch.stack(regions)


def semantic_batch_target(mask_labels_list: list[np.ndarray], n_classes: int) -> torch.Tensor:
    return torch.stack([semantic_onehot(m, n_classes) for m in mask_labels_list])
