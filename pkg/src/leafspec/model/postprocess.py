"""Decoding raw network outputs into boxes, instance masks, and class masks."""

from __future__ import annotations

import numpy as np
import torch

from ..labels import BACKGROUND, ClassLabel
from ..spectral import SemanticMask
from .config import ModelConfig, STRIDES
from .network import ModelOutput


def decode_boxes(raw: torch.Tensor, anchors: torch.Tensor, stride: int) -> torch.Tensor:
    """Turn raw [B, na, H, W, >=4] offsets into pixel-space xywh boxes.

    Center: (2 sigmoid(t_xy) - 0.5 + cell) * stride; size:
    (2 sigmoid(t_wh))^2 * anchor.
    """
    b, na, h, w, _ = raw.shape
    device = raw.device
    gy, gx = torch.meshgrid(
        torch.arange(h, device=device), torch.arange(w, device=device), indexing="ij"
    )
    grid = torch.stack([gx, gy], dim=-1).view(1, 1, h, w, 2).float()
    xy = (torch.sigmoid(raw[..., 0:2]) * 2.0 - 0.5 + grid) * stride
    wh = (torch.sigmoid(raw[..., 2:4]) * 2.0) ** 2 * anchors.view(1, na, 1, 1, 2)
    return torch.cat([xy, wh], dim=-1)


def xywh_to_xyxy(boxes: torch.Tensor) -> torch.Tensor:
    xy, wh = boxes[..., :2], boxes[..., 2:4]
    return torch.cat([xy - wh / 2, xy + wh / 2], dim=-1)


def box_iou_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pairwise IoU of xyxy boxes a [N, 4] and b [M, 4]."""
    area_a = (a[:, 2] - a[:, 0]).clamp(min=0) * (a[:, 3] - a[:, 1]).clamp(min=0)
    area_b = (b[:, 2] - b[:, 0]).clamp(min=0) * (b[:, 3] - b[:, 1]).clamp(min=0)
    lt = torch.maximum(a[:, None, :2], b[None, :, :2])
    rb = torch.minimum(a[:, None, 2:], b[None, :, 2:])
    inter = (rb - lt).clamp(min=0).prod(dim=-1)
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union.clamp(min=1e-9)


def greedy_nms(boxes: torch.Tensor, scores: torch.Tensor, iou_thresh: float) -> list[int]:
    """Indices kept by greedy non-max suppression, best score first."""
    order = torch.argsort(scores, descending=True).tolist()
    keep: list[int] = []
    while order:
        i = order.pop(0)
        keep.append(i)
        if not order:
            break
        rest = torch.tensor(order)
        ious = box_iou_matrix(boxes[i].unsqueeze(0), boxes[rest]).squeeze(0)
        order = [j for j, v in zip(order, ious.tolist()) if v <= iou_thresh]
    return keep


@torch.no_grad()
def compose_instance_masks(
    out: ModelOutput,
    cfg: ModelConfig,
    conf_thresh: float = 0.25,
    nms_iou: float = 0.45,
    image_index: int = 0,
) -> list[tuple[ClassLabel, float, np.ndarray]]:
    """Instance masks for one batch element.

    Detections above the score threshold survive per-class greedy NMS; each
    one composes a mask as sigmoid(coeffs . prototypes) thresholded at 0.5,
    cropped to its box, and upsampled to input size.
    """
    if not 0.0 < conf_thresh < 1.0 or not 0.0 < nms_iou < 1.0:
        raise ValueError("thresholds must lie in (0, 1)")
    nc = cfg.n_classes
    size = cfg.input_size
    boxes_all, scores_all, classes_all, coeffs_all = [], [], [], []
    for s, raw in enumerate(out.detections):
        raw = raw[image_index : image_index + 1]
        boxes = xywh_to_xyxy(decode_boxes(raw, out_anchors(out, cfg, s), STRIDES[s]))
        obj = torch.sigmoid(raw[..., 4])
        cls = torch.sigmoid(raw[..., 5 : 5 + nc])
        best_cls = cls.argmax(dim=-1)
        score = obj * cls.gather(-1, best_cls.unsqueeze(-1)).squeeze(-1)
        mask_sel = score > conf_thresh
        if not mask_sel.any():
            continue
        boxes_all.append(boxes[mask_sel])
        scores_all.append(score[mask_sel])
        classes_all.append(best_cls[mask_sel])
        coeffs_all.append(raw[..., 5 + nc :][mask_sel])
    if not boxes_all:
        return []

    boxes = torch.cat(boxes_all).clamp(min=0, max=size)
    scores = torch.cat(scores_all)
    classes = torch.cat(classes_all)
    coeffs = torch.cat(coeffs_all)

    protos = out.prototypes[image_index]  # [nm, S/4, S/4]
    stride_p = size // protos.shape[-1]
    results: list[tuple[ClassLabel, float, np.ndarray]] = []
    for cls_id in range(nc):
        sel = (classes == cls_id).nonzero(as_tuple=True)[0]
        if len(sel) == 0:
            continue
        keep = greedy_nms(boxes[sel], scores[sel], nms_iou)
        for k in keep:
            i = sel[k]
            m = torch.sigmoid(torch.einsum("c,chw->hw", coeffs[i], protos)) > 0.5
            x0, y0, x1, y1 = boxes[i].tolist()
            c0, r0 = int(np.floor(x0 / stride_p)), int(np.floor(y0 / stride_p))
            c1, r1 = int(np.ceil(x1 / stride_p)), int(np.ceil(y1 / stride_p))
            cropped = torch.zeros_like(m)
            cropped[r0:r1, c0:c1] = m[r0:r1, c0:c1]
            full = cropped.repeat_interleave(stride_p, 0).repeat_interleave(stride_p, 1)
            results.append(
                (ClassLabel(cls_id), float(scores[i]), full.cpu().numpy().astype(bool))
            )
    results.sort(key=lambda t: -t[1])
    return results


def out_anchors(out: ModelOutput, cfg: ModelConfig, scale: int) -> torch.Tensor:
    anchors = torch.from_numpy(cfg.anchors()).float().to(out.detections[scale].device)
    return anchors[scale]


def semantic_from_instances(
    instances: list[tuple[ClassLabel, float, np.ndarray]], height: int, width: int
) -> SemanticMask:
    """Per pixel, take the class of the highest-scoring covering instance;
    uncovered pixels are background."""
    labels = np.full((height, width), BACKGROUND, dtype=np.uint8)
    for cls, _score, mask in sorted(instances, key=lambda t: t[1]):
        labels[np.asarray(mask, dtype=bool)] = int(cls)
    return SemanticMask(labels)


def semantic_from_scores(
    semantic_map: torch.Tensor, threshold: float = 0.5, image_index: int = 0
) -> tuple[SemanticMask, SemanticMask]:
    """Class masks from the dense semantic scores.

    Returns (thresholded, argmax): the thresholded mask leaves pixels whose
    best sigmoid score is below ``threshold`` as background; the argmax mask
    assigns every pixel its best class (used for confusion matrices, whose
    columns must be full distributions).
    """
    scores = torch.sigmoid(semantic_map[image_index])  # [nc, H, W]
    best, arg = scores.max(dim=0)
    arg = arg.cpu().numpy().astype(np.uint8)
    thresholded = arg.copy()
    thresholded[(best < threshold).cpu().numpy()] = BACKGROUND
    return SemanticMask(thresholded), SemanticMask(arg)
