"""Training-time augmentations: flips, 90-degree rotations, color jitter.

Geometric transforms apply identically to the image and every mask so labels
stay pixel-exact.  Rotation is restricted to multiples of 90 degrees by
default (no interpolation ambiguity); free-angle rotation with
nearest-neighbor mask resampling sits behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labels import BACKGROUND


@dataclass
class AugmentConfig:
    flip: bool = True
    rotate: bool = True
    color_jitter: bool = True
    free_rotation: bool = False
    gain_range: tuple[float, float] = (0.9, 1.1)
    offset_range: tuple[float, float] = (-0.05, 0.05)


@dataclass
class GeometricOps:
    flip_h: bool = False
    flip_v: bool = False
    k_rot: int = 0
    angle_deg: float = 0.0


def sample_ops(rng: np.random.Generator, cfg: AugmentConfig) -> GeometricOps:
    ops = GeometricOps()
    if cfg.flip:
        ops.flip_h = bool(rng.random() < 0.5)
        ops.flip_v = bool(rng.random() < 0.5)
    if cfg.rotate:
        ops.k_rot = int(rng.integers(0, 4))
    if cfg.free_rotation:
        ops.angle_deg = float(rng.uniform(0.0, 360.0))
    return ops


def apply_geometric(arr: np.ndarray, ops: GeometricOps, fill=0) -> np.ndarray:
    """Apply flips/rotations to [..., H, W]; exact for 90-degree steps."""
    out = arr
    if ops.flip_h:
        out = np.flip(out, axis=-1)
    if ops.flip_v:
        out = np.flip(out, axis=-2)
    if ops.k_rot:
        out = np.rot90(out, k=ops.k_rot, axes=(-2, -1))
    if ops.angle_deg:
        out = _rotate_nearest(out, ops.angle_deg, fill)
    return np.ascontiguousarray(out)


def _rotate_nearest(arr: np.ndarray, angle_deg: float, fill) -> np.ndarray:
    h, w = arr.shape[-2:]
    theta = np.deg2rad(angle_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    # Inverse map: destination -> source.
    dy, dx = rows - cy, cols - cx
    src_r = np.rint(cy + dx * np.sin(theta) + dy * np.cos(theta)).astype(int)
    src_c = np.rint(cx + dx * np.cos(theta) - dy * np.sin(theta)).astype(int)
    valid = (src_r >= 0) & (src_r < h) & (src_c >= 0) & (src_c < w)
    out = np.full_like(arr, fill)
    out[..., valid] = arr[..., src_r[valid], src_c[valid]]
    return out


def color_jitter(
    img: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig
) -> np.ndarray:
    """Per-band multiplicative gain and additive offset, clamped to [0, 1]."""
    c = img.shape[0]
    gain = rng.uniform(*cfg.gain_range, size=(c, 1, 1))
    offset = rng.uniform(*cfg.offset_range, size=(c, 1, 1))
    return np.clip(img * gain + offset, 0.0, 1.0).astype(img.dtype)


def augment(
    img: np.ndarray,
    mask: np.ndarray,
    rng: np.random.Generator,
    cfg: AugmentConfig | None = None,
    extra_masks: np.ndarray | None = None,
):
    """Jointly augment an image [C, H, W] and its mask [H, W].

    ``extra_masks`` ([N, H, W], e.g. per-instance masks) receive the same
    geometric transform.  Returns (img', mask') or (img', mask', extra').
    """
    cfg = cfg or AugmentConfig()
    ops = sample_ops(rng, cfg)
    out_img = apply_geometric(img, ops, fill=0.0)
    out_mask = apply_geometric(mask, ops, fill=BACKGROUND)
    if cfg.color_jitter:
        out_img = color_jitter(out_img, rng, cfg)
    if extra_masks is None:
        return out_img, out_mask
    out_extra = apply_geometric(extra_masks, ops, fill=False)
    return out_img, out_mask, out_extra
