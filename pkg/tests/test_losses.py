import numpy as np
import pytest
import torch

from leafspec.labels import BACKGROUND
from leafspec.losses import (
    LossError,
    build_targets,
    ciou_xywh,
    semantic_batch_target,
    semantic_onehot,
    total_loss,
)
from leafspec.model import ModelConfig, ModelOutput, SegmentationNet


def _gt_scene(cfg, cls=2):
    """One square instance in the frame center."""
    s = cfg.input_size
    mask = np.zeros((s, s), dtype=bool)
    q = s // 4
    mask[q : 3 * q, q : 3 * q] = True
    box = np.array([[s / 2, s / 2, s / 2, s / 2]])
    classes = np.array([cls], dtype=np.int64)
    sem = np.full((s, s), BACKGROUND, np.uint8)
    sem[mask] = cls
    targets = {
        "boxes": [box],
        "classes": [classes],
        "instance_masks": [mask[None]],
        "semantic": semantic_batch_target([sem], cfg.n_classes),
    }
    return targets, mask, sem


def _zeroed_output(cfg, obj_logit=0.0):
    n_out = 5 + cfg.n_classes + cfg.mask_proto_channels
    dets = []
    for stride in (8, 16, 32):
        g = cfg.input_size // stride
        raw = torch.zeros(1, cfg.n_anchors_per_scale, g, g, n_out)
        raw[..., 4] = obj_logit
        dets.append(raw)
    s = cfg.input_size
    return ModelOutput(
        detections=dets,
        prototypes=torch.zeros(1, cfg.mask_proto_channels, s // 4, s // 4),
        semantic_map=torch.zeros(1, cfg.n_classes, s, s),
    )


class TestCiou:
    def test_identical_boxes_score_one(self):
        b = torch.tensor([[10.0, 10.0, 8.0, 6.0]])
        assert ciou_xywh(b, b).item() == pytest.approx(1.0, abs=1e-6)

    def test_distant_boxes_negative(self):
        a = torch.tensor([[5.0, 5.0, 4.0, 4.0]])
        b = torch.tensor([[50.0, 50.0, 4.0, 4.0]])
        assert ciou_xywh(a, b).item() < 0.0


class TestBuildTargets:
    def test_center_cell_is_assigned(self):
        cfg = ModelConfig.tiny(9, "conv", 64)
        boxes = np.array([[32.0, 32.0, 16.0, 16.0]])
        classes = np.array([1])
        assignments = build_targets([boxes], [classes], cfg)
        # Stride 8: center 32 -> cell 4 must appear among scale-0 positives.
        asn = assignments[0]
        cells = set(zip(asn.cell_y.tolist(), asn.cell_x.tolist()))
        assert (4, 4) in cells
        assert (asn.target_classes == 1).all()

    def test_empty_targets_produce_empty_assignments(self):
        cfg = ModelConfig.tiny(9, "conv", 64)
        for asn in build_targets([np.zeros((0, 4))], [np.zeros(0, dtype=np.int64)], cfg):
            assert len(asn.batch_idx) == 0


class TestTotalLoss:
    def test_perfect_outputs_have_tiny_seg_and_cls(self):
        cfg = ModelConfig.tiny(9, "conv", 64)
        targets, mask, sem = _gt_scene(cfg, cls=2)
        out = _zeroed_output(cfg, obj_logit=-20.0)

        # Optimal semantic map: saturated one-hot logits.
        onehot = semantic_onehot(sem, cfg.n_classes)
        out.semantic_map[0] = 40.0 * onehot - 20.0
        # Optimal prototypes: channel 0 carries the instance mask (at proto
        # resolution); every positive anchor selects it with coefficient 1.
        hp = cfg.input_size // 4
        small = torch.from_numpy(mask[::4, ::4].copy()).float()
        out.prototypes[0, 0] = 40.0 * small - 20.0
        assignments = build_targets(targets["boxes"], targets["classes"], cfg)
        for s, asn in enumerate(assignments):
            raw = out.detections[s]
            for b, a, cy, cx in zip(asn.batch_idx, asn.anchor_idx, asn.cell_y, asn.cell_x):
                raw[b, a, cy, cx, 5 + 2] = 20.0  # true class logit
                raw[b, a, cy, cx, [5, 6, 8]] = -20.0
                raw[b, a, cy, cx, 5 + cfg.n_classes] = 1.0  # coeff for proto 0

        _, comps = total_loss(out, targets, cfg)
        assert comps["seg"] < 1e-3
        assert comps["cls"] < 1e-3

    def test_empty_image_components(self):
        cfg = ModelConfig.tiny(9, "conv", 64)
        s = cfg.input_size
        sem = np.full((s, s), BACKGROUND, np.uint8)
        targets = {
            "boxes": [np.zeros((0, 4))],
            "classes": [np.zeros(0, dtype=np.int64)],
            "instance_masks": [np.zeros((0, s, s), dtype=bool)],
            "semantic": semantic_batch_target([sem], cfg.n_classes),
        }
        out = _zeroed_output(cfg, obj_logit=0.0)
        _, comps = total_loss(out, targets, cfg)
        assert comps["box"] == 0.0
        assert comps["cls"] == 0.0
        assert comps["obj"] > 0.0

    def test_non_finite_loss_attributed(self):
        cfg = ModelConfig.tiny(9, "conv", 64)
        targets, _, _ = _gt_scene(cfg)
        out = _zeroed_output(cfg)
        out.semantic_map[0, 0, 0, 0] = float("nan")
        with pytest.raises(LossError, match="seg"):
            total_loss(out, targets, cfg)

    def test_weights_follow_config(self):
        cfg = ModelConfig.tiny(9, "conv", 64)
        assert cfg.loss_weights == {"box": 0.05, "seg": 1.0, "cls": 0.5, "obj": 1.0}

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(0)
        cfg = ModelConfig.tiny(9, "conv", 64)
        net = SegmentationNet(cfg).double().eval()
        targets, _, _ = _gt_scene(cfg)
        x = torch.rand(1, 9, 64, 64, dtype=torch.float64)

        def loss_value():
            out = net(x)
            return total_loss(out, targets, cfg)[0]

        loss = loss_value()
        net.zero_grad()
        loss.backward()

        params = [p for p in net.parameters() if p.requires_grad and p.grad is not None]
        rng = np.random.default_rng(7)
        eps = 1e-4
        checked = 0
        with torch.no_grad():
            while checked < 10:
                p = params[int(rng.integers(len(params)))]
                idx = tuple(int(rng.integers(d)) for d in p.shape)
                analytic = p.grad[idx].item()
                orig = p[idx].item()
                p[idx] = orig + eps
                up = loss_value().item()
                p[idx] = orig - eps
                down = loss_value().item()
                p[idx] = orig
                fd = (up - down) / (2 * eps)
                # Floor the denominator: central differences carry ~1e-9
                # absolute noise at this loss scale, so near-zero gradients
                # cannot support a pure relative comparison.
                denom = max(abs(fd), abs(analytic), 1e-5)
                assert abs(fd - analytic) / denom < 1e-3, (idx, fd, analytic)
                checked += 1
