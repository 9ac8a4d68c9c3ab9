import numpy as np
import pytest
import torch

from leafspec.labels import BACKGROUND, ClassLabel
from leafspec.model import ModelConfig, ModelOutput
from leafspec.model.postprocess import (
    compose_instance_masks,
    decode_boxes,
    greedy_nms,
    semantic_from_instances,
    semantic_from_scores,
)


def _empty_output(cfg: ModelConfig, obj_logit: float = -10.0) -> ModelOutput:
    size = cfg.input_size
    dets = []
    n_out = 5 + cfg.n_classes + cfg.mask_proto_channels
    for stride in (8, 16, 32):
        g = size // stride
        raw = torch.zeros(1, cfg.n_anchors_per_scale, g, g, n_out)
        raw[..., 4] = obj_logit
        dets.append(raw)
    protos = torch.zeros(1, cfg.mask_proto_channels, size // 4, size // 4)
    sem = torch.zeros(1, cfg.n_classes, size, size)
    return ModelOutput(detections=dets, prototypes=protos, semantic_map=sem)


class TestDecodeBoxes:
    def test_zero_offsets_give_cell_centers_and_anchor_sizes(self):
        cfg = ModelConfig.tiny(9, "conv", 64)
        raw = torch.zeros(1, 3, 8, 8, 4)
        anchors = torch.from_numpy(cfg.anchors()[0]).float()
        boxes = decode_boxes(raw, anchors, stride=8)
        # sigmoid(0) = 0.5 -> center lands on (cell + 0.5) * stride.
        assert torch.allclose(boxes[0, 0, 2, 3, :2], torch.tensor([3.5 * 8, 2.5 * 8]))
        assert torch.allclose(boxes[0, 1, 0, 0, 2:], anchors[1])


class TestGreedyNms:
    def test_duplicate_boxes_keep_best_score(self):
        boxes = torch.tensor([[0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 10.0, 10.0]])
        keep = greedy_nms(boxes, torch.tensor([0.9, 0.8]), iou_thresh=0.5)
        assert keep == [0]

    def test_disjoint_boxes_all_kept(self):
        boxes = torch.tensor([[0.0, 0.0, 4.0, 4.0], [20.0, 20.0, 30.0, 30.0]])
        keep = greedy_nms(boxes, torch.tensor([0.5, 0.7]), iou_thresh=0.5)
        assert sorted(keep) == [0, 1]


class TestComposeInstanceMasks:
    def test_no_detections_above_threshold(self):
        cfg = ModelConfig.tiny(9, "conv", 64)
        out = _empty_output(cfg)
        assert compose_instance_masks(out, cfg) == []

    def test_invalid_thresholds(self):
        cfg = ModelConfig.tiny(9, "conv", 64)
        out = _empty_output(cfg)
        with pytest.raises(ValueError):
            compose_instance_masks(out, cfg, conf_thresh=0.0)
        with pytest.raises(ValueError):
            compose_instance_masks(out, cfg, nms_iou=1.0)

    def test_nms_keeps_single_instance_for_duplicate_cells(self):
        cfg = ModelConfig.tiny(9, "conv", 64)
        out = _empty_output(cfg)
        raw = out.detections[0]
        # Two anchors in the same cell, same decoded box, class 2.
        for a, obj in ((0, 6.0), (1, 4.0)):
            raw[0, a, 4, 4, 4] = obj
            raw[0, a, 4, 4, 5 + 2] = 8.0
            raw[0, a, 4, 4, 2:4] = 1.0  # same wh offsets
        out.detections[0] = raw
        # Force both anchors to the same pixel size so the boxes coincide.
        anchors = cfg.anchors()
        anchors[0, 1] = anchors[0, 0]
        import leafspec.model.postprocess as pp

        orig = pp.out_anchors
        try:
            pp.out_anchors = lambda o, c, s: torch.from_numpy(anchors[s]).float()
            instances = compose_instance_masks(out, cfg, conf_thresh=0.5, nms_iou=0.5)
        finally:
            pp.out_anchors = orig
        assert len(instances) == 1
        cls, score, _ = instances[0]
        assert cls == ClassLabel.PIGMENT_ACCUM
        assert score > 0.9

    def test_mask_equals_thresholded_prototype_inside_box(self):
        cfg = ModelConfig.tiny(9, "conv", 64)
        out = _empty_output(cfg)
        # Prototype 2: positive square region, negative elsewhere.
        proto = -torch.ones(16, 16)
        proto[2:10, 2:10] = 1.0
        out.prototypes[0, 2] = proto
        raw = out.detections[0]
        raw[0, 0, 4, 4, 4] = 10.0  # objectness
        raw[0, 0, 4, 4, 5 + 1] = 10.0  # class 1
        raw[0, 0, 4, 4, 2:4] = 2.0  # widen the box
        coeffs = torch.zeros(cfg.mask_proto_channels)
        coeffs[2] = 20.0
        raw[0, 0, 4, 4, 5 + cfg.n_classes :] = coeffs
        instances = compose_instance_masks(out, cfg, conf_thresh=0.5, nms_iou=0.5)
        assert len(instances) == 1
        cls, score, mask = instances[0]
        assert cls == ClassLabel.CHLOROSIS and mask.shape == (64, 64)

        # Independent composition: sigmoid(20 * proto) > 0.5 is proto > 0,
        # cropped to the decoded box at proto resolution, upsampled x4.
        from leafspec.model.postprocess import xywh_to_xyxy

        anchors = torch.from_numpy(cfg.anchors()[0]).float()
        box = xywh_to_xyxy(decode_boxes(raw[:, :, :, :, :4], anchors, 8))[0, 0, 4, 4]
        x0, y0, x1, y1 = box.tolist()
        c0, r0 = int(np.floor(x0 / 4)), int(np.floor(y0 / 4))
        c1, r1 = int(np.ceil(x1 / 4)), int(np.ceil(y1 / 4))
        expected_small = np.zeros((16, 16), dtype=bool)
        region = (proto.numpy() > 0)
        expected_small[r0:r1, c0:c1] = region[r0:r1, c0:c1]
        expected = expected_small.repeat(4, axis=0).repeat(4, axis=1)
        assert (mask == expected).all()


class TestSemanticFromInstances:
    def test_empty_instances(self):
        mask = semantic_from_instances([], 8, 8)
        assert (mask.labels == BACKGROUND).all()

    def test_full_frame_normal(self):
        full = np.ones((8, 8), dtype=bool)
        mask = semantic_from_instances([(ClassLabel.NORMAL, 0.9, full)], 8, 8)
        assert (mask.labels == 0).all()

    def test_overlap_resolved_by_score(self):
        a = np.zeros((8, 8), dtype=bool)
        a[0:4, 0:8] = True
        b = np.zeros((8, 8), dtype=bool)
        b[2:6, 0:8] = True
        mask = semantic_from_instances(
            [(ClassLabel.CHLOROSIS, 0.9, a), (ClassLabel.PIGMENT_ACCUM, 0.7, b)], 8, 8
        )
        assert (mask.labels[2:4] == 1).all()  # overlap -> higher score wins
        assert (mask.labels[4:6] == 2).all()
        assert (mask.labels[6:] == BACKGROUND).all()


class TestSemanticFromScores:
    def test_threshold_and_argmax_routes(self):
        logits = torch.full((1, 4, 4, 4), -5.0)
        logits[0, 1, 0, 0] = 5.0
        logits[0, 2, 1, 1] = -1.0  # best class there but below threshold
        thresholded, argmax = semantic_from_scores(logits)
        assert thresholded.labels[0, 0] == 1
        assert thresholded.labels[1, 1] == BACKGROUND
        assert argmax.labels[1, 1] == 2
        assert BACKGROUND not in np.unique(argmax.labels)
