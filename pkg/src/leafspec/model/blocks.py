"""Convolutional building blocks: focus slicing, CSP stages, pyramid pooling."""

from __future__ import annotations

import torch
import torch.nn as nn


def focus_slice(x: torch.Tensor) -> torch.Tensor:
    """Rearrange [..., C, H, W] into [..., 4C, H/2, W/2] parity subsamples.

    Output channel blocks, in order: (even row, even col), (even, odd),
    (odd, even), (odd, odd) -- each block carrying all C input channels.
    Lossless; ``focus_unslice`` is the exact inverse.
    """
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"spatial dims must be even, got {h}x{w}")
    return torch.cat(
        [
            x[..., 0::2, 0::2],
            x[..., 0::2, 1::2],
            x[..., 1::2, 0::2],
            x[..., 1::2, 1::2],
        ],
        dim=-3,
    )


def focus_unslice(y: torch.Tensor) -> torch.Tensor:
    """Inverse of ``focus_slice``: [..., 4C, H/2, W/2] -> [..., C, H, W]."""
    c4, h2, w2 = y.shape[-3:]
    if c4 % 4:
        raise ValueError(f"channel count must be a multiple of 4, got {c4}")
    c = c4 // 4
    shape = list(y.shape[:-3]) + [c, h2 * 2, w2 * 2]
    x = y.new_empty(shape)
    x[..., 0::2, 0::2] = y[..., 0 * c : 1 * c, :, :]
    x[..., 0::2, 1::2] = y[..., 1 * c : 2 * c, :, :]
    x[..., 1::2, 0::2] = y[..., 2 * c : 3 * c, :, :]
    x[..., 1::2, 1::2] = y[..., 3 * c : 4 * c, :, :]
    return x


class Conv(nn.Module):
    """Conv2d + BatchNorm + SiLU."""

    def __init__(self, c_in: int, c_out: int, k: int = 1, s: int = 1):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, k, s, padding=k // 2, bias=False)
        self.bn = nn.BatchNorm2d(c_out)
        self.act = nn.SiLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.bn(self.conv(x)))


class Bottleneck(nn.Module):
    def __init__(self, c: int, shortcut: bool = True):
        super().__init__()
        c_mid = max(c // 2, 8)
        self.cv1 = Conv(c, c_mid, 1)
        self.cv2 = Conv(c_mid, c, 3)
        self.add = shortcut

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.cv2(self.cv1(x))
        return x + y if self.add else y


class CSPStage(nn.Module):
    """Cross-stage partial block: a processed branch and a shortcut branch,
    concatenated and fused by a 1x1 convolution."""

    def __init__(self, c_in: int, c_out: int, n: int = 1, shortcut: bool = True):
        super().__init__()
        c_mid = c_out // 2
        self.cv1 = Conv(c_in, c_mid, 1)
        self.cv2 = Conv(c_in, c_mid, 1)
        self.m = nn.Sequential(*(Bottleneck(c_mid, shortcut) for _ in range(n)))
        self.cv3 = Conv(2 * c_mid, c_out, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.cv3(torch.cat([self.m(self.cv1(x)), self.cv2(x)], dim=1))


class SPP(nn.Module):
    """Spatial pyramid pooling: parallel max-pools of several kernel sizes."""

    def __init__(self, c_in: int, c_out: int, kernels: tuple[int, ...] = (5, 9, 13)):
        super().__init__()
        c_mid = c_in // 2
        self.cv1 = Conv(c_in, c_mid, 1)
        self.pools = nn.ModuleList(
            nn.MaxPool2d(kernel_size=k, stride=1, padding=k // 2) for k in kernels
        )
        self.cv2 = Conv(c_mid * (len(kernels) + 1), c_out, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.cv1(x)
        return self.cv2(torch.cat([x] + [p(x) for p in self.pools], dim=1))
