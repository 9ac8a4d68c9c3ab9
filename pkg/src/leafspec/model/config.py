"""Architecture hyperparameters for the segmentation network."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from ..labels import N_CLASSES

STRIDES = (8, 16, 32)
_BASE_CHANNELS = (64, 128, 256, 512, 1024)
_BASE_DEPTHS = (3, 6, 9, 3)

# Anchor (w, h) templates in pixels at a 640 input, per detection scale,
# sized to cover lesion blobs through whole thalli.
_ANCHORS_640 = (
    ((16, 16), (32, 32), (56, 56)),
    ((72, 72), (104, 104), (144, 144)),
    ((176, 176), (224, 224), (288, 288)),
)

HEAD_KINDS = ("transformer", "conv")


def _make_divisible(x: float, divisor: int = 8) -> int:
    return max(divisor, int(math.ceil(x / divisor) * divisor))


def auto_patch(input_size: int) -> int:
    """Largest patch size (<= 8) keeping at least 8 tokens per grid side.

    At 640 input the stride-8 map is 80 wide and the patch is 8 (100 tokens);
    smaller desk-scale inputs shrink the patch so the token grid stays dense
    enough to carry lesions.
    """
    side = input_size // STRIDES[0]
    for p in (8, 4, 2):
        if side % p == 0 and (side // p) >= 8:
            return p
    return 1


@dataclass
class ModelConfig:
    in_channels: int = 9
    input_size: int = 640
    width_multiple: float = 0.5
    depth_multiple: float = 0.33
    n_classes: int = N_CLASSES
    head: str = "transformer"
    tf_layers: int = 2
    tf_heads: int = 4
    tf_dim: int = 128
    tf_patch: int = 8
    n_anchors_per_scale: int = 3
    mask_proto_channels: int = 16
    loss_weights: dict = field(
        default_factory=lambda: {"box": 0.05, "seg": 1.0, "cls": 0.5, "obj": 1.0}
    )

    def __post_init__(self):
        if self.head == "conv_baseline":
            self.head = "conv"
        if self.head not in HEAD_KINDS:
            raise ValueError(f"head must be one of {HEAD_KINDS}, got {self.head!r}")
        if self.in_channels not in (3, 9):
            raise ValueError(f"in_channels must be 3 or 9, got {self.in_channels}")
        if self.n_classes != N_CLASSES:
            raise ValueError(f"n_classes must be {N_CLASSES}, got {self.n_classes}")
        if self.tf_dim % self.tf_heads != 0:
            raise ValueError(
                f"tf_dim ({self.tf_dim}) must be divisible by tf_heads ({self.tf_heads})"
            )
        if self.input_size % STRIDES[-1] != 0:
            raise ValueError(f"input_size must be a multiple of {STRIDES[-1]}")
        if self.head == "transformer" and (self.input_size // STRIDES[0]) % self.tf_patch != 0:
            raise ValueError(
                f"stride-{STRIDES[0]} map of input_size {self.input_size} is not "
                f"divisible by tf_patch {self.tf_patch}"
            )

    def channels(self) -> tuple[int, ...]:
        return tuple(_make_divisible(c * self.width_multiple) for c in _BASE_CHANNELS)

    def depths(self) -> tuple[int, ...]:
        return tuple(max(1, round(n * self.depth_multiple)) for n in _BASE_DEPTHS)

    def anchors(self) -> np.ndarray:
        """[n_scales, n_anchors, 2] anchor sizes in pixels at this input size."""
        scale = self.input_size / 640.0
        out = []
        for templates in _ANCHORS_640:
            sizes = np.asarray(templates, dtype=np.float64) * scale
            if self.n_anchors_per_scale != len(templates):
                w = np.geomspace(sizes[0, 0], sizes[-1, 0], self.n_anchors_per_scale)
                sizes = np.stack([w, w], axis=1)
            out.append(sizes)
        return np.stack(out)

    @property
    def n_tokens(self) -> int:
        side = self.input_size // STRIDES[0] // self.tf_patch
        return side * side

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    @classmethod
    def tiny(cls, in_channels: int = 9, head: str = "transformer",
             input_size: int = 128) -> "ModelConfig":
        """Desk-scale configuration for tests and smoke runs."""
        return cls(
            in_channels=in_channels,
            input_size=input_size,
            width_multiple=0.125,
            depth_multiple=0.2,
            head=head,
            tf_layers=2,
            tf_heads=4,
            tf_dim=64,
            tf_patch=2,
            mask_proto_channels=8,
        )
