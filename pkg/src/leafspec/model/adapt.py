"""First-layer kernel surgery: reuse 3-channel pretrained weights for 9 bands.

The first three input channels of the widened kernel are always a bitwise
copy of the original weights; the six extra channels are filled per mode:

* ``replicate`` -- variance-scaled random values (Kaiming-style normal),
* ``average``   -- the channel-mean of the original kernel,
* ``zero``      -- zeros, which makes the widened convolution reproduce the
  original 3-channel convolution exactly regardless of what the extra bands
  contain (useful to verify that low-level RGB behaviour is retained).
"""

from __future__ import annotations

import math

import torch

ADAPT_MODES = ("replicate", "average", "zero")


def adapt_first_conv(
    w3: torch.Tensor,
    mode: str = "replicate",
    in_to: int = 9,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Widen a [out, 3, k, k] kernel to [out, in_to, k, k]."""
    if w3.dim() != 4 or w3.shape[1] != 3:
        raise ValueError(f"expected kernel [out, 3, k, k], got {tuple(w3.shape)}")
    if not torch.isfinite(w3).all():
        raise ValueError("kernel contains non-finite values")
    if mode not in ADAPT_MODES:
        raise ValueError(f"mode must be one of {ADAPT_MODES}, got {mode!r}")
    out_ch, _, kh, kw = w3.shape
    n_extra = in_to - 3
    if n_extra < 0:
        raise ValueError(f"in_to must be >= 3, got {in_to}")

    if mode == "zero":
        extra = w3.new_zeros((out_ch, n_extra, kh, kw))
    elif mode == "average":
        extra = w3.mean(dim=1, keepdim=True).expand(-1, n_extra, -1, -1).clone()
    else:  # replicate: keep the copy, randomize the rest at matched variance
        std = math.sqrt(2.0 / (in_to * kh * kw))
        extra = torch.empty((out_ch, n_extra, kh, kw), dtype=w3.dtype)
        extra.normal_(mean=0.0, std=std, generator=generator)
    return torch.cat([w3.clone(), extra], dim=1)


def adapt_sliced_stem(
    w_stem: torch.Tensor,
    mode: str = "replicate",
    in_from: int = 3,
    in_to: int = 9,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Adapt a stem that follows focus slicing.

    Such a stem sees 4 parity blocks of ``in_from`` channels each; the
    surgery is applied blockwise so every parity block keeps its original
    RGB weights in channels 0..2.
    """
    out_ch, c_in, kh, kw = w_stem.shape
    if c_in != 4 * in_from:
        raise ValueError(f"expected {4 * in_from} input channels, got {c_in}")
    blocks = w_stem.view(out_ch, 4, in_from, kh, kw)
    adapted = [
        adapt_first_conv(blocks[:, b], mode=mode, in_to=in_to, generator=generator)
        for b in range(4)
    ]
    return torch.cat(adapted, dim=1)
