"""The segmentation network: CSP backbone with SPP, path-aggregation neck,
detection branch, and a mask/semantic head that is either transformer-based
(proposed) or purely convolutional (baseline).

Layout at input size S (batched [B, C, S, S]):

  focus_slice -> stem conv (S/2) -> stages at S/4, S/8 (P3), S/16 (P4),
  S/32 (P5 with pyramid pooling); the neck fuses top-down then bottom-up,
  producing N3/N4/N5 at strides 8/16/32.  Detections are 1x1 convs on
  N3/N4/N5.  The head runs on N3: the transformer variant patch-embeds N3
  into tokens, applies the encoder, and upsamples back; the conv variant
  applies a plain conv stack.  Either way the result is fused with N3 and
  decoded into mask prototypes (stride 4) and a full-resolution 4-class
  semantic map.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .adapt import adapt_sliced_stem
from .attention import TransformerEncoder
from .blocks import Conv, CSPStage, SPP, focus_slice
from .config import ModelConfig, STRIDES


@dataclass
class ModelOutput:
    """Raw network outputs for one batch.

    detections[s] is [B, na, H_s, W_s, 5 + n_classes + n_proto] holding box
    offsets, objectness logit, class logits, and mask coefficients at stride
    STRIDES[s].  prototypes is [B, n_proto, S/4, S/4].  semantic_map is
    [B, n_classes, S, S] unnormalized class scores (sigmoid for probability).
    """

    detections: list[torch.Tensor]
    prototypes: torch.Tensor
    semantic_map: torch.Tensor


class TransformerHead(nn.Module):
    """Patch-embed the stride-8 map, run the encoder, restore resolution."""

    def __init__(self, cfg: ModelConfig, c_in: int):
        super().__init__()
        self.patch = cfg.tf_patch
        self.embed = nn.Conv2d(c_in, cfg.tf_dim, kernel_size=self.patch, stride=self.patch)
        self.pos_embedding = nn.Parameter(torch.zeros(cfg.n_tokens, cfg.tf_dim))
        nn.init.trunc_normal_(self.pos_embedding, std=0.02)
        self.encoder = TransformerEncoder(cfg.tf_dim, cfg.tf_heads, cfg.tf_layers)
        self.restore = Conv(cfg.tf_dim, c_in, 3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, _, h, w = x.shape
        gh, gw = h // self.patch, w // self.patch
        tokens = self.embed(x).flatten(2).transpose(1, 2)  # [B, gh*gw, d]
        tokens = self.encoder(tokens, self.pos_embedding)
        grid = tokens.transpose(1, 2).reshape(b, -1, gh, gw)
        return self.restore(F.interpolate(grid, scale_factor=self.patch, mode="nearest"))


class ConvHead(nn.Module):
    """Plain convolutional stand-in for the transformer head."""

    def __init__(self, c_in: int):
        super().__init__()
        self.body = nn.Sequential(Conv(c_in, c_in, 3), Conv(c_in, c_in, 3))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


class SegmentationNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c0, c1, c2, c3, c4 = cfg.channels()
        n1, n2, n3, n4 = cfg.depths()
        nc, nm, na = cfg.n_classes, cfg.mask_proto_channels, cfg.n_anchors_per_scale

        # Backbone (stride in parentheses).
        self.stem = Conv(4 * cfg.in_channels, c0, 3)  # after focus_slice (2)
        self.down1 = Conv(c0, c1, 3, 2)  # (4)
        self.stage1 = CSPStage(c1, c1, n1)
        self.down2 = Conv(c1, c2, 3, 2)  # (8)
        self.stage2 = CSPStage(c2, c2, n2)
        self.down3 = Conv(c2, c3, 3, 2)  # (16)
        self.stage3 = CSPStage(c3, c3, n3)
        self.down4 = Conv(c3, c4, 3, 2)  # (32)
        self.spp = SPP(c4, c4)
        self.stage4 = CSPStage(c4, c4, n4)

        # Neck: top-down then bottom-up aggregation.
        self.lat5 = Conv(c4, c3, 1)
        self.td4 = CSPStage(2 * c3, c3, n1, shortcut=False)
        self.lat4 = Conv(c3, c2, 1)
        self.td3 = CSPStage(2 * c2, c2, n1, shortcut=False)
        self.bu3 = Conv(c2, c2, 3, 2)
        self.bu4_stage = CSPStage(2 * c2, c3, n1, shortcut=False)
        self.bu4 = Conv(c3, c3, 3, 2)
        self.bu5_stage = CSPStage(2 * c3, c4, n1, shortcut=False)

        # Detection branch, one 1x1 conv per scale.
        self.n_out = 5 + nc + nm
        self.detect = nn.ModuleList(
            nn.Conv2d(c, na * self.n_out, 1) for c in (c2, c3, c4)
        )
        for conv in self.detect:
            conv.bias.data.view(na, self.n_out)[:, 4] = -4.0  # low initial objectness

        # Mask/semantic head on the stride-8 map.
        if cfg.head == "transformer":
            self.head = TransformerHead(cfg, c2)
        else:
            self.head = ConvHead(c2)
        self.fuse = Conv(2 * c2, c2, 3)
        cp = max(c2 // 2, 16)
        self.up4 = Conv(c2, cp, 3)  # applied after x2 upsample (stride 4)
        self.proto = nn.Sequential(Conv(cp, cp, 3), nn.Conv2d(cp, nm, 1))
        self.semantic = nn.Sequential(Conv(cp, cp, 3), nn.Conv2d(cp, nc, 1))

        buf = torch.from_numpy(cfg.anchors()).float()
        self.register_buffer("anchors", buf)  # [3, na, 2] pixels

    def forward(self, x: torch.Tensor) -> ModelOutput:
        if x.dim() == 3:
            x = x.unsqueeze(0)
        if x.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"channel mismatch: model expects {self.cfg.in_channels}, got {x.shape[1]}"
            )
        if x.shape[-2:] != (self.cfg.input_size, self.cfg.input_size):
            raise ValueError(
                f"spatial size mismatch: model expects {self.cfg.input_size}, "
                f"got {tuple(x.shape[-2:])}"
            )

        x = self.stem(focus_slice(x))
        x = self.stage1(self.down1(x))
        p3 = self.stage2(self.down2(x))
        p4 = self.stage3(self.down3(p3))
        p5 = self.stage4(self.spp(self.down4(p4)))

        lat5 = self.lat5(p5)
        t4 = self.td4(torch.cat([F.interpolate(lat5, scale_factor=2, mode="nearest"), p4], 1))
        lat4 = self.lat4(t4)
        n3 = self.td3(torch.cat([F.interpolate(lat4, scale_factor=2, mode="nearest"), p3], 1))
        n4 = self.bu4_stage(torch.cat([self.bu3(n3), lat4], 1))
        n5 = self.bu5_stage(torch.cat([self.bu4(n4), lat5], 1))

        na = self.cfg.n_anchors_per_scale
        detections = []
        for conv, feat in zip(self.detect, (n3, n4, n5)):
            b, _, h, w = feat.shape
            raw = conv(feat).view(b, na, self.n_out, h, w).permute(0, 1, 3, 4, 2)
            detections.append(raw.contiguous())

        head_out = self.head(n3)
        fused = self.fuse(torch.cat([head_out, n3], 1))
        up = self.up4(F.interpolate(fused, scale_factor=2, mode="nearest"))
        prototypes = self.proto(up)
        sem = self.semantic(up)
        semantic_map = F.interpolate(
            sem, size=(self.cfg.input_size, self.cfg.input_size),
            mode="bilinear", align_corners=False,
        )
        return ModelOutput(detections=detections, prototypes=prototypes,
                           semantic_map=semantic_map)

    @torch.no_grad()
    def adapt_stem_from_rgb(self, w3_stem: torch.Tensor, mode: str = "replicate",
                            generator: torch.Generator | None = None) -> None:
        """Initialize the 9-band stem from a 3-channel stem kernel.

        ``w3_stem`` is the [c0, 12, k, k] kernel of a 3-channel model's stem
        (12 = 4 parity blocks x 3 channels).
        """
        if self.cfg.in_channels != 9:
            raise ValueError("stem adaptation targets the 9-channel variant")
        adapted = adapt_sliced_stem(w3_stem, mode=mode, in_from=3, in_to=9,
                                    generator=generator)
        if adapted.shape != self.stem.conv.weight.shape:
            raise ValueError(
                f"adapted kernel {tuple(adapted.shape)} does not match stem "
                f"{tuple(self.stem.conv.weight.shape)}"
            )
        self.stem.conv.weight.copy_(adapted)

    def grid_sizes(self) -> list[tuple[int, int]]:
        s = self.cfg.input_size
        return [(s // st, s // st) for st in STRIDES]
